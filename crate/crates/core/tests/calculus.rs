use proptest::prelude::*;
use psido_core::funcalc::{ScalarFunction, ScalarFunctionSpec, SpectralData};
use psido_core::lattice::GridSpec;
use psido_core::linalg::max_abs;
use psido_core::quantize::{commutator, op_norm, quantize, symmetrize, lambda_operator};
use psido_core::quasiloc::{bump, eps_rank_matrix, form_matrix, BumpKind, Form};
use psido_core::symbols::Family;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn function_of_p_commutes_with_p(a in -1.0f64..1.0, sigma in 0.3f64..3.0) {
        let g = GridSpec::one_d(32, 1.0).unwrap();
        let p = symmetrize(&quantize(&Family::Drift(a).build(g).unwrap()).unwrap()).unwrap();
        let f = SpectralData::new(&p).unwrap().apply_spec(&ScalarFunctionSpec::new(ScalarFunction::Gaussian { sigma })).unwrap();
        let c = commutator(&f, &p).unwrap();
        prop_assert!(max_abs(c.matrix.view()) <= 1e-11 * max_abs(p.matrix.view()));
    }

    #[test]
    fn bessel_potential_is_a_sobolev_isometry(s in -2.0f64..2.0, t in -2.0f64..2.0) {
        let g = GridSpec::one_d(16, 1.5).unwrap();
        let lam = lambda_operator(g, s).unwrap();
        prop_assert!((op_norm(&lam, t + s, t).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eps_ranks_are_translation_invariant(shift in 0i64..64, e in 0.005f64..0.2) {
        let g = GridSpec::one_d(64, 1.0).unwrap();
        let t = quantize(&Family::InverseBessel.build(g).unwrap()).unwrap();
        let f = bump(g, BumpKind::Smooth, 0, 1.0, 1.0).unwrap();
        let ft = f.translate([shift, 0]);
        for form in [Form::FT, Form::TF, Form::Commutator] {
            let a = eps_rank_matrix(form_matrix(&t.matrix, 1, &f.values, &form).view(), e).unwrap();
            let b = eps_rank_matrix(form_matrix(&t.matrix, 1, &ft.values, &form).view(), e).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
