//! Multigradings, the Fredholm module `(H, ρ, χ(P))` and homotopies of its operator.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::funcalc::{c_psi, ScalarFunction, ScalarFunctionSpec, SpectralData};
use crate::lattice::{BumpFunction, GridSpec};
use crate::linalg::{adjoint, hermitian_part, identity, max_abs, random_vector, spectral_norm, vec_norm, CMat, C64, I, ONE, ZERO};
use crate::quantize::{fourier_multiplier, multiplication, DiscreteOperator, FourierView, Provenance};
use crate::quasiloc::{loglog_slope, uniform_approx_profile, EpsRankProfile, Form};
use crate::symbols::{check_elliptic, Symbol};

fn kron(a: &CMat, b: &CMat) -> CMat {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    Array2::from_shape_fn((ar * br, ac * bc), |(i, j)| a[[i / br, j / bc]] * b[[i % br, j % bc]])
}

fn pauli(k: usize) -> CMat {
    let z = ZERO;
    let o = ONE;
    let v = match k {
        0 => [o, z, z, o],
        1 => [z, o, o, z],
        2 => [z, -I, I, z],
        _ => [o, z, z, -o],
    };
    Array2::from_shape_vec((2, 2), v.to_vec()).unwrap()
}

fn anticommutator(a: &CMat, b: &CMat) -> CMat {
    a.dot(b) + b.dot(a)
}

fn commutator_mat(a: &CMat, b: &CMat) -> CMat {
    a.dot(b) - b.dot(a)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Multigrading {
    /// `−1` means ungraded.
    pub p: i32,
    pub base_fiber: usize,
    pub fiber: usize,
    pub grading: Option<CMat>,
    pub generators: Vec<CMat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradingDefects {
    /// `‖ε² − 1‖`, `‖ε − ε*‖`.
    pub involution: f64,
    /// `‖ε_j ε_j* − 1‖`.
    pub unitary: f64,
    /// `‖ε ε_j + ε_j ε‖`.
    pub odd: f64,
    /// `‖ε_i ε_j + ε_j ε_i‖`, `i ≠ j`.
    pub anticommute: f64,
    /// `‖ε_j² + 1‖`.
    pub square: f64,
}

impl GradingDefects {
    pub fn max(&self) -> f64 {
        [self.involution, self.unitary, self.odd, self.anticommute, self.square].into_iter().fold(0.0, f64::max)
    }
}

/// Clifford generators on `(C²)^{⊗n} ⊗ C^{base}` from Jordan–Wigner strings:
/// `γ_{2k−1}, γ_{2k}` are `σ_z^{⊗(k−1)} ⊗ σ_{x,y} ⊗ 1`, `ε = σ_z^{⊗n}` and `ε_j = iγ_j`.
pub fn make_multigrading(p: i32, base_fiber: usize) -> Result<Multigrading> {
    if p < -1 {
        return Err(Error::InvalidArgument(format!("multigrading degree {p} is below −1")));
    }
    if base_fiber == 0 {
        return Err(Error::InvalidArgument("base fiber must be positive".into()));
    }
    if p == -1 {
        return Ok(Multigrading { p, base_fiber, fiber: base_fiber, grading: None, generators: Vec::new() });
    }
    let n = ((p as usize).div_ceil(2)).max(1);
    let string = |k: usize, last: usize| {
        let mut m = identity(1);
        for q in 0..n {
            let f = if q < k { pauli(3) } else if q == k { pauli(last) } else { pauli(0) };
            m = kron(&m, &f);
        }
        m
    };
    let base = identity(base_fiber);
    let mut gens = Vec::new();
    for j in 0..p as usize {
        let g = string(j / 2, 1 + j % 2);
        gens.push(kron(&g, &base).mapv(|z| z * I));
    }
    let mut eps = identity(1);
    for _ in 0..n {
        eps = kron(&eps, &pauli(3));
    }
    let mg = Multigrading { p, base_fiber, fiber: base_fiber << n, grading: Some(kron(&eps, &base)), generators: gens };
    mg.validate(1e-12)?;
    Ok(mg)
}

impl Multigrading {
    /// User-supplied generators; only the relations are enforced.
    pub fn from_matrices(grading: Option<CMat>, generators: Vec<CMat>, base_fiber: usize) -> Result<Self> {
        let fiber = grading.as_ref().map(|g| g.nrows()).or(generators.first().map(|g| g.nrows())).unwrap_or(base_fiber);
        let p = if grading.is_none() {
            if !generators.is_empty() {
                return Err(Error::InvalidArgument("generators need a grading".into()));
            }
            -1
        } else {
            generators.len() as i32
        };
        let mg = Multigrading { p, base_fiber, fiber, grading, generators };
        mg.validate(1e-12)?;
        Ok(mg)
    }

    pub fn validate(&self, tol: f64) -> Result<()> {
        if let Some(e) = &self.grading {
            if e.dim() != (self.fiber, self.fiber) || self.generators.iter().any(|g| g.dim() != (self.fiber, self.fiber)) {
                return Err(Error::Shape { expected: format!("{0}×{0}", self.fiber), got: "mismatched generator".into() });
            }
        }
        let d = self.defects();
        if d.max() > tol {
            return Err(Error::Precondition(format!("multigrading relations fail: {d:?}")));
        }
        Ok(())
    }

    pub fn defects(&self) -> GradingDefects {
        let mut d = GradingDefects { involution: 0.0, unitary: 0.0, odd: 0.0, anticommute: 0.0, square: 0.0 };
        let Some(e) = &self.grading else { return d };
        let id = identity(self.fiber);
        d.involution = max_abs((&e.dot(e) - &id).view()).max(max_abs((e - &adjoint(e)).view()));
        for (i, g) in self.generators.iter().enumerate() {
            d.unitary = d.unitary.max(max_abs((&g.dot(&adjoint(g)) - &id).view()));
            d.odd = d.odd.max(max_abs(anticommutator(e, g).view()));
            d.square = d.square.max(max_abs((&g.dot(g) + &id).view()));
            for h in &self.generators[i + 1..] {
                d.anticommute = d.anticommute.max(max_abs(anticommutator(g, h).view()));
            }
        }
        d
    }

    /// `1 ⊗ m` on the full state space.
    pub fn lift(&self, grid: &GridSpec, m: &CMat) -> CMat {
        let r = self.fiber;
        let n = grid.points() * r;
        let mut out = Array2::zeros((n, n));
        for p in 0..grid.points() {
            out.slice_mut(ndarray::s![p * r..(p + 1) * r, p * r..(p + 1) * r]).assign(m);
        }
        out
    }

    /// `(‖Aε + εA‖, ‖Aε − εA‖, max_j ‖Aε_j − ε_jA‖)` relative to `‖A‖_max`.
    pub fn operator_defects(&self, grid: &GridSpec, a: &CMat) -> (f64, f64, f64) {
        let scale = max_abs(a.view()).max(f64::MIN_POSITIVE);
        let Some(e) = &self.grading else { return (0.0, 0.0, 0.0) };
        let big_e = self.lift(grid, e);
        let odd = max_abs(anticommutator(a, &big_e).view()) / scale;
        let even = max_abs(commutator_mat(a, &big_e).view()) / scale;
        let multi = self
            .generators
            .iter()
            .map(|g| max_abs(commutator_mat(a, &self.lift(grid, g)).view()) / scale)
            .fold(0.0, f64::max);
        (odd, even, multi)
    }
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct FredholmModule {
    pub grid: GridSpec,
    pub multigrading: Multigrading,
    pub chi: ScalarFunctionSpec,
    pub t: DiscreteOperator,
    /// `(χ² − 1)(P)` from the functional calculus.
    pub square_defect_op: DiscreteOperator,
}

impl FredholmModule {
    pub fn rho(&self, f: &BumpFunction) -> Result<DiscreteOperator> {
        multiplication(self.grid, &f.values, "rho(f)")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleReport {
    pub p: i32,
    pub chi: String,
    pub grading_defect: f64,
    /// `‖T − T*‖`.
    pub self_adjoint_defect: f64,
    /// `max |(χ² − 1)(P)|` entrywise.
    pub square_defect_functional: f64,
    /// `‖T·T − 1‖`.
    pub square_defect_matrix: f64,
    pub odd_defect: f64,
    pub multigraded_defect: f64,
    /// Worst `ρ(f)` defects over the families: even, multigraded.
    pub rho_even_defect: f64,
    pub rho_multigraded_defect: f64,
    pub profiles: Vec<EpsRankProfile>,
    /// Every profile has identical ranks across its family.
    pub translate_exact: bool,
    /// Every profile's max rank is below the Hilbert-space dimension at every ε.
    pub ranks_finite: bool,
}

impl ModuleReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.self_adjoint_defect <= tol
            && self.odd_defect <= tol
            && self.multigraded_defect <= tol
            && self.rho_even_defect <= tol
            && self.rho_multigraded_defect <= tol
            && self.grading_defect <= 1e-12
            && self.ranks_finite
    }

    pub fn summary_rows(&self) -> Vec<(String, String, bool)> {
        let tol = 1e-10;
        vec![
            ("T − T* = 0".into(), format!("{:.3e}", self.self_adjoint_defect), self.self_adjoint_defect <= tol),
            ("T odd".into(), format!("{:.3e}", self.odd_defect), self.odd_defect <= tol),
            ("T multigraded".into(), format!("{:.3e}", self.multigraded_defect), self.multigraded_defect <= tol),
            ("ρ even, multigraded".into(), format!("{:.3e}", self.rho_even_defect.max(self.rho_multigraded_defect)), self.rho_even_defect.max(self.rho_multigraded_defect) <= tol),
            ("grading relations".into(), format!("{:.3e}", self.grading_defect), self.grading_defect <= 1e-12),
            ("(T²−1)ρ(f), ρ(f)(T²−1), [T,ρ(f)] ranks finite".into(), self.ranks_finite.to_string(), self.ranks_finite),
            ("ranks translate-exact".into(), self.translate_exact.to_string(), self.translate_exact),
            ("(χ²−1)(P)".into(), format!("{:.3e}", self.square_defect_functional), true),
        ]
    }
}

/// Builds `T = χ(P)` and checks the module conditions over the test families.
pub fn assemble_module(
    p: &DiscreteOperator,
    symbol: Option<&Symbol>,
    chi: &ScalarFunctionSpec,
    mg: &Multigrading,
    families: &[(String, Vec<BumpFunction>)],
    eps_list: &[f64],
) -> Result<(FredholmModule, ModuleReport)> {
    let g = p.grid;
    if !p.self_adjoint {
        return Err(Error::NotSelfAdjoint(crate::linalg::hermitian_defect(&p.matrix)));
    }
    if p.order < 1 {
        return Err(Error::Precondition(format!("order {} of `{}` must be at least 1", p.order, p.name)));
    }
    if g.fiber_dim != mg.fiber {
        return Err(Error::Precondition(format!("fiber {} does not match the multigrading fiber {}", g.fiber_dim, mg.fiber)));
    }
    if let Some(s) = symbol {
        let cert = check_elliptic(s);
        if !cert.ok {
            return Err(Error::NotElliptic(cert.diagnostic));
        }
    }
    if chi.class != crate::funcalc::FunctionClass::Normalizing || !chi.verify_class().ok {
        return Err(Error::Precondition(format!("{} is not a normalizing function", chi.name())));
    }
    let (odd, _, multi) = mg.operator_defects(&g, &p.matrix);
    if odd > 1e-10 {
        return Err(Error::Precondition(format!("P is not odd (defect {odd:.3e})")));
    }
    if multi > 1e-10 {
        return Err(Error::Precondition(format!("P is not multigraded (defect {multi:.3e})")));
    }
    let sd = SpectralData::new(p)?;
    let t = sd.apply_spec(chi)?;
    let sq = sd.apply(
        |x| {
            let c = chi.eval(x);
            C64::new(c * c - 1.0, 0.0)
        },
        true,
        crate::funcalc::SMOOTHING_ORDER,
        format!("({}²−1)(P)", chi.name()),
    )?;
    let n = t.dim();
    let t2 = &t.matrix.dot(&t.matrix) - &identity(n);
    let square_defect_matrix = spectral_norm(t2.view())?;
    let self_adjoint_defect = spectral_norm((&t.matrix - &adjoint(&t.matrix)).view())?;
    let (odd_defect, _, multigraded_defect) = mg.operator_defects(&g, &t.matrix);
    let sq_op = DiscreteOperator::from_matrix(g, 0, t2, Provenance::FunctionOf, "T²−1")?;
    let mut profiles = Vec::new();
    let (mut rho_even, mut rho_multi) = (0.0f64, 0.0f64);
    for (label, fam) in families {
        for f in fam {
            let m = multiplication(g, &f.values, "rho")?;
            let (_, even, mm) = mg.operator_defects(&g, &m.matrix);
            rho_even = rho_even.max(even);
            rho_multi = rho_multi.max(mm);
        }
        let mut a = uniform_approx_profile(&sq_op, fam, &format!("{label}: (T²−1)ρ(f), ρ(f)(T²−1)"), &[Form::TF, Form::FT], eps_list)?;
        a.forms[0].form = "(T²−1)ρ(f)".into();
        a.forms[1].form = "ρ(f)(T²−1)".into();
        let mut c = uniform_approx_profile(&t, fam, &format!("{label}: [T,ρ(f)]"), &[Form::Commutator], eps_list)?;
        c.forms[0].form = "[T,ρ(f)]".into();
        profiles.push(a);
        profiles.push(c);
    }
    let translate_exact = profiles.iter().all(|p| p.forms.iter().all(|f| f.member_uniform));
    let ranks_finite = profiles.iter().all(|p| p.forms.iter().all(|f| f.max_rank.iter().all(|&r| r < n)));
    let report = ModuleReport {
        p: mg.p,
        chi: chi.name(),
        grading_defect: mg.defects().max(),
        self_adjoint_defect,
        square_defect_functional: max_abs(sq.matrix.view()),
        square_defect_matrix,
        odd_defect,
        multigraded_defect,
        rho_even_defect: rho_even,
        rho_multigraded_defect: rho_multi,
        profiles,
        translate_exact,
        ranks_finite,
    };
    let module = FredholmModule { grid: g, multigrading: mg.clone(), chi: chi.clone(), t, square_defect_op: sq };
    Ok((module, report))
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommutatorIntegralReport {
    pub lambda_max: f64,
    pub n_quad: usize,
    /// `‖quadrature − [ρ(f), χ(P)]‖`.
    pub defect: f64,
    /// Change from halving `n_quad`, summed entrywise.
    pub quadrature_error: f64,
    /// Norms of the `(1+λ²)[ρ(f),P]` and `−P[ρ(f),P]P` contributions.
    pub first_summand: f64,
    pub second_summand: f64,
    pub flagged: bool,
}

/// `[ρ(f), χ(P)]` for `χ(x) = x/√(1+x²)` from
/// `(2/π) ∫_0^∞ R_λ ((1+λ²)[ρ(f),P] − P[ρ(f),P]P) R_λ dλ`, `R_λ = (1+λ²+P²)^{-1}`,
/// evaluated in the eigenbasis of `P`.
pub fn commutator_integral(
    p: &DiscreteOperator,
    f: &[f64],
    lambda_max: f64,
    n_quad: usize,
    tol: f64,
) -> Result<(DiscreteOperator, CommutatorIntegralReport)> {
    if n_quad < 4 || n_quad % 2 == 1 || lambda_max <= 0.0 {
        return Err(Error::InvalidArgument("commutator_integral needs even n_quad ≥ 4 and λ_max > 0".into()));
    }
    let g = p.grid;
    let sd = SpectralData::new(p)?;
    let v = sd.eigenvectors();
    let vs = adjoint(&v);
    let rho = multiplication(g, f, "rho")?;
    // F = V* ρ(f) V; [ρ(f), P] = V (F_ij (λ_j − λ_i)) V*
    let fm = vs.dot(&rho.matrix).dot(&v);
    let lam = &sd.eigenvalues;
    let n = lam.len();
    let u_max = lambda_max.asinh();
    let weights = |nq: usize| -> Vec<(f64, f64)> {
        let h = u_max / nq as f64;
        (0..=nq)
            .map(|j| {
                let u = j as f64 * h;
                let w = if j == 0 || j == nq { 0.5 * h } else { h };
                (u.sinh(), w * u.cosh())
            })
            .collect()
    };
    let fine = weights(n_quad);
    let coarse = weights(n_quad / 2);
    // ∫_Λ^∞ dλ/((a+λ²)(b+λ²)) and ∫_Λ^∞ λ² dλ/((a+λ²)(b+λ²)) in closed form
    let tail_j = |c: f64| (std::f64::consts::FRAC_PI_2 - (lambda_max / c.sqrt()).atan()) / c.sqrt();
    let tails = |a: f64, b: f64| -> (f64, f64) {
        if (a - b).abs() <= 1e-8 * a.max(b) {
            // limits as b → a
            let l = lambda_max;
            let j = tail_j(a);
            let k0 = (j - l / (a + l * l)) / (2.0 * a);
            let k2 = (j + l / (a + l * l)) / 2.0;
            (k0, k2)
        } else {
            ((tail_j(a) - tail_j(b)) / (b - a), (b * tail_j(b) - a * tail_j(a)) / (b - a))
        }
    };
    let integrate = |nodes: &[(f64, f64)], a: f64, b: f64| -> (f64, f64) {
        let mut s0 = 0.0;
        let mut s2 = 0.0;
        for &(l, w) in nodes {
            let d = w / ((a + l * l) * (b + l * l));
            s0 += d;
            s2 += d * l * l;
        }
        (s0, s2)
    };
    let two_pi = 2.0 / std::f64::consts::PI;
    let mut k1 = Array2::<C64>::zeros((n, n));
    let mut k2 = Array2::<C64>::zeros((n, n));
    let mut quad_err: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let c = fm[[i, j]] * (lam[j] - lam[i]);
            if c == ZERO {
                continue;
            }
            let (a, b) = (1.0 + lam[i] * lam[i], 1.0 + lam[j] * lam[j]);
            let (f0, f2) = integrate(&fine, a, b);
            let (c0, c2) = integrate(&coarse, a, b);
            let (t0, t2) = tails(a, b);
            // (1+λ²) term and −λ_iλ_j term
            let w1 = two_pi * (f0 + t0 + f2 + t2);
            let w2 = -two_pi * lam[i] * lam[j] * (f0 + t0);
            let e1 = two_pi * ((f0 + f2) - (c0 + c2)).abs();
            let e2 = two_pi * (lam[i] * lam[j]).abs() * (f0 - c0).abs();
            quad_err = quad_err.max((e1 + e2) * c.norm());
            k1[[i, j]] = c * w1;
            k2[[i, j]] = c * w2;
        }
    }
    let back = |m: &CMat| v.dot(m).dot(&vs);
    let m1 = back(&k1);
    let m2 = back(&k2);
    let total = &m1 + &m2;
    let chi = sd.apply_spec(&ScalarFunctionSpec::new(ScalarFunction::ChiRational))?;
    let direct = rho.matrix.dot(&chi.matrix) - chi.matrix.dot(&rho.matrix);
    let defect = spectral_norm((&total - &direct).view())?;
    let report = CommutatorIntegralReport {
        lambda_max,
        n_quad,
        defect,
        quadrature_error: quad_err * n as f64,
        first_summand: spectral_norm(m1.view())?,
        second_summand: spectral_norm(m2.view())?,
        flagged: defect > tol,
    };
    let op = DiscreteOperator::from_matrix(g, p.order - 1, total, Provenance::Composed, "[rho(f), chi(P)]")?;
    Ok((op, report))
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderRow {
    pub dt: f64,
    /// Max adjacent-step jumps over `t` and the test functions.
    pub commutator: f64,
    pub square: f64,
    pub adjoint: f64,
    /// `max_v ‖(T_t − T_s)v‖ + ‖(T_t − T_s)*v‖` over the probe set.
    pub strong: f64,
    pub norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub s: f64,
    /// Per test function.
    pub commutator: Vec<f64>,
    pub square: Vec<f64>,
    pub adjoint: Vec<f64>,
    pub strong: f64,
    pub norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrincipalCheck {
    /// `(s, ‖P − P′‖_{s, s−k+1})`.
    pub norms: Vec<(f64, f64)>,
    /// Band-cap ratio `‖·‖_{N/3} / ‖·‖_{N/6}`; about 1 for order `≤ k−1`, about 2 for order `k`.
    pub band_ratio: f64,
    pub same_principal_symbol: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzCheck {
    pub c_chi: f64,
    pub difference_norm: f64,
    /// `max ‖χ(P_t) − χ(P_s)‖ / (C_χ ‖P − P′‖ |t − s|)`.
    pub ratio: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomotopyTrace {
    pub k: i32,
    pub chi: String,
    pub identical_endpoints: bool,
    pub t_grid: Vec<f64>,
    pub records: Vec<StepRecord>,
    pub ladder: Vec<LadderRow>,
    /// Fitted `γ` in `jump ~ Δt^γ`; `None` when the track is identically zero.
    pub gamma_commutator: Option<f64>,
    pub gamma_square: Option<f64>,
    pub gamma_adjoint: Option<f64>,
    pub principal: PrincipalCheck,
    pub lipschitz: Option<LipschitzCheck>,
}

impl HomotopyTrace {
    pub fn max_jump(&self) -> f64 {
        self.records
            .iter()
            .flat_map(|r| r.commutator.iter().chain(&r.square).chain(&r.adjoint).copied().chain([r.norm, r.strong]))
            .fold(0.0, f64::max)
    }

    /// Each bullet-3 track is continuous: `γ > 0`, or identically zero.
    pub fn continuity_holds(&self) -> bool {
        let zero = |f: fn(&LadderRow) -> f64| self.ladder.iter().all(|r| f(r) == 0.0);
        let ok = |g: Option<f64>, z: bool| z || g.is_some_and(|g| g > 0.0);
        ok(self.gamma_commutator, zero(|r| r.commutator))
            && ok(self.gamma_square, zero(|r| r.square))
            && ok(self.gamma_adjoint, zero(|r| r.adjoint))
    }

    pub fn to_csv(&self) -> String {
        use std::fmt::Write as _;
        let mut s = String::from("t,s,f,commutator,square,adjoint,strong,norm\n");
        for r in &self.records {
            for i in 0..r.commutator.len() {
                let _ = writeln!(
                    s,
                    "{},{},{i},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
                    r.t, r.s, r.commutator[i], r.square[i], r.adjoint[i], r.strong, r.norm
                );
            }
        }
        s
    }
}

fn path_point(p: &DiscreteOperator, q: &DiscreteOperator, t: f64) -> Result<DiscreteOperator> {
    if t == 0.0 {
        return Ok(p.clone());
    }
    if t == 1.0 {
        return Ok(q.clone());
    }
    let (a, b) = (C64::new(1.0 - t, 0.0), C64::new(t, 0.0));
    if let (Some(x), Some(y)) = (&p.multiplier, &q.multiplier) {
        let blocks: Vec<C64> = x.iter().zip(y).map(|(u, v)| u * a + v * b).collect();
        let mut op = fourier_multiplier(p.grid, p.order, blocks, format!("P_{t}"))?;
        op.self_adjoint = true;
        op.matrix = hermitian_part(&op.matrix);
        return Ok(op);
    }
    let m = hermitian_part(&(p.matrix.mapv(|z| z * a) + q.matrix.mapv(|z| z * b)));
    let mut op = DiscreteOperator::from_matrix(p.grid, p.order, m, Provenance::Composed, format!("P_{t}"))?;
    op.self_adjoint = true;
    Ok(op)
}

/// Checks that `P − P′` has order `≤ k − 1` by comparing band-limited norms.
pub fn principal_symbol_check(p: &DiscreteOperator, q: &DiscreteOperator) -> Result<PrincipalCheck> {
    let k = p.order as f64;
    let d = crate::quantize::sub(p, q)?;
    let view = FourierView::new(&d);
    let cap = p.grid.resolved_cap();
    let mut norms = Vec::new();
    for s in [0.0, k - 1.0] {
        norms.push((s, view.norm_band(s, s - k + 1.0, cap)?));
    }
    let full = view.norm_band(0.0, -k, cap)?;
    let band_ratio = if norms[0].1 == 0.0 { 1.0 } else { norms[0].1 / view.norm_band(0.0, -k + 1.0, cap / 2)?.max(f64::MIN_POSITIVE) };
    let finite = norms.iter().all(|(_, v)| v.is_finite()) && full.is_finite();
    Ok(PrincipalCheck { norms, band_ratio, same_principal_symbol: finite && band_ratio <= 1.5 })
}

/// `χ(P_t)` along `P_t = (1−t)P + tP′` on nested uniform grids with the given
/// step counts (each dividing the largest).
pub fn homotopy_scan(
    p: &DiscreteOperator,
    q: &DiscreteOperator,
    chi: &ScalarFunctionSpec,
    steps: &[usize],
    test_fs: &[BumpFunction],
    probes: usize,
    seed: u64,
) -> Result<HomotopyTrace> {
    if !(p.self_adjoint && q.self_adjoint) {
        return Err(Error::Precondition("both endpoints must be self-adjoint".into()));
    }
    if p.order != q.order {
        return Err(Error::Precondition(format!("orders {} and {} differ", p.order, q.order)));
    }
    let n_max = *steps.iter().max().ok_or_else(|| Error::InvalidArgument("empty step ladder".into()))?;
    if steps.iter().any(|&s| s == 0 || n_max % s != 0) {
        return Err(Error::InvalidArgument(format!("step counts {steps:?} must divide {n_max}")));
    }
    let identical = p.matrix == q.matrix;
    let principal = principal_symbol_check(p, q)?;
    if !principal.same_principal_symbol {
        return Err(Error::Precondition(format!(
            "P − P′ looks like order {} (band ratio {:.3})",
            p.order, principal.band_ratio
        )));
    }
    let g = p.grid;
    let n = p.dim();
    let rhos: Vec<CMat> = test_fs.iter().map(|f| multiplication(g, &f.values, "rho").map(|m| m.matrix)).collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let probe_vecs: Vec<Vec<C64>> = (0..probes)
        .map(|_| {
            let v = random_vector(n, &mut rng).to_vec();
            let nv = vec_norm(&v);
            v.into_iter().map(|z| z / nv).collect()
        })
        .collect();
    let t_grid: Vec<f64> = (0..=n_max).map(|j| j as f64 / n_max as f64).collect();
    let mut ts = Vec::with_capacity(t_grid.len());
    for &t in &t_grid {
        let pt = if identical { p.clone() } else { path_point(p, q, t)? };
        ts.push(SpectralData::new(&pt)?.apply_spec(chi)?.matrix);
    }
    let id = identity(n);
    let tracks = |m: &CMat| -> Vec<(CMat, CMat, CMat)> {
        let sq = &m.dot(m) - &id;
        let ad = m - &adjoint(m);
        rhos.iter().map(|r| (r.dot(m) - m.dot(r), sq.dot(r), ad.dot(r))).collect()
    };
    let all_tracks: Vec<Vec<(CMat, CMat, CMat)>> = ts.iter().map(|m| tracks(m)).collect();
    let step_record = |i: usize, j: usize| -> Result<StepRecord> {
        let mut rec = StepRecord { t: t_grid[j], s: t_grid[i], commutator: vec![], square: vec![], adjoint: vec![], strong: 0.0, norm: 0.0 };
        for (a, b) in all_tracks[i].iter().zip(&all_tracks[j]) {
            rec.commutator.push(spectral_norm((&b.0 - &a.0).view())?);
            rec.square.push(spectral_norm((&b.1 - &a.1).view())?);
            rec.adjoint.push(spectral_norm((&b.2 - &a.2).view())?);
        }
        let d = &ts[j] - &ts[i];
        let ds = adjoint(&d);
        for v in &probe_vecs {
            let va = ndarray::ArrayView1::from(&v[..]);
            let s = vec_norm(d.dot(&va).as_slice().unwrap()) + vec_norm(ds.dot(&va).as_slice().unwrap());
            rec.strong = rec.strong.max(s);
        }
        rec.norm = spectral_norm(d.view())?;
        Ok(rec)
    };
    let mut ladder = Vec::new();
    let mut records = Vec::new();
    let mut sorted = steps.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    for &s in &sorted {
        let stride = n_max / s;
        let mut row = LadderRow { dt: 1.0 / s as f64, commutator: 0.0, square: 0.0, adjoint: 0.0, strong: 0.0, norm: 0.0 };
        for k in 0..s {
            let rec = step_record(k * stride, (k + 1) * stride)?;
            row.commutator = rec.commutator.iter().fold(row.commutator, |m, v| m.max(*v));
            row.square = rec.square.iter().fold(row.square, |m, v| m.max(*v));
            row.adjoint = rec.adjoint.iter().fold(row.adjoint, |m, v| m.max(*v));
            row.strong = row.strong.max(rec.strong);
            row.norm = row.norm.max(rec.norm);
            if s == n_max {
                records.push(rec);
            }
        }
        ladder.push(row);
    }
    let fit = |f: fn(&LadderRow) -> f64| loglog_slope(&ladder.iter().map(|r| (r.dt, f(r))).collect::<Vec<_>>());
    let lipschitz = if p.order == 1 {
        let (c, tail) = c_psi(&chi.function)?;
        let dn = spectral_norm(crate::quantize::sub(p, q)?.matrix.view())?;
        let finest = ladder.last().unwrap();
        let bound = (c + tail) * dn * finest.dt;
        let ratio = if bound == 0.0 { 0.0 } else { finest.norm / bound };
        Some(LipschitzCheck { c_chi: c + tail, difference_norm: dn, ratio, holds: ratio <= 1.05 })
    } else {
        None
    };
    Ok(HomotopyTrace {
        k: p.order,
        chi: chi.name(),
        identical_endpoints: identical,
        t_grid,
        records,
        gamma_commutator: fit(|r| r.commutator),
        gamma_square: fit(|r| r.square),
        gamma_adjoint: fit(|r| r.adjoint),
        ladder,
        principal,
        lipschitz,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantize::{quantize, symmetrize};
    use crate::quasiloc::{bump, translates, BumpKind};
    use crate::symbols::Family;

    fn graded(n: usize) -> (GridSpec, Multigrading, DiscreteOperator, Symbol) {
        let mg = make_multigrading(1, 1).unwrap();
        let g = GridSpec::new(1, n, 1.0, 2).unwrap();
        let s = Family::GradedDirac.build(g).unwrap();
        (g, mg, quantize(&s).unwrap(), s)
    }

    #[test]
    fn clifford_relations() {
        assert!(make_multigrading(-1, 3).unwrap().grading.is_none());
        let m0 = make_multigrading(0, 1).unwrap();
        assert_eq!(m0.grading.unwrap(), pauli(3));
        for p in 0..=5 {
            let m = make_multigrading(p, 2).unwrap();
            assert_eq!(m.generators.len(), p as usize);
            assert_eq!(m.defects().max(), 0.0, "p = {p}");
            assert_eq!(m.fiber, 2 << (p as usize).div_ceil(2).max(1));
        }
        assert!(make_multigrading(-2, 1).is_err());
        let bad = Multigrading::from_matrices(Some(pauli(3)), vec![pauli(1)], 1);
        assert!(bad.is_err());
    }

    #[test]
    fn graded_dirac_module() {
        let (g, mg, p, s) = graded(32);
        let base = bump(g, BumpKind::Smooth, 0, 1.0, 4.0).unwrap();
        let fam = vec![("translates".to_string(), translates(&base, 4))];
        let chi = ScalarFunctionSpec::new(ScalarFunction::ChiRational);
        let (module, rep) = assemble_module(&p, Some(&s), &chi, &mg, &fam, &[0.1, 0.01]).unwrap();
        assert!(rep.passes(1e-10), "{rep:?}");
        assert!(rep.translate_exact);
        assert_eq!(rep.self_adjoint_defect, 0.0);
        assert!(module.t.is_multiplier());
        // χ − χ′ ∈ C₀: the difference is uniformly locally compact as well
        let chi2 = ScalarFunctionSpec::new(ScalarFunction::Tanh { scale: 1.0 });
        let (m2, _) = assemble_module(&p, Some(&s), &chi2, &mg, &fam, &[0.1]).unwrap();
        let diff = crate::quantize::sub(&module.t, &m2.t).unwrap();
        let prof = uniform_approx_profile(&diff, &fam[0].1, "", &[Form::FT], &[0.1, 0.01]).unwrap();
        assert!(prof.forms[0].member_uniform && prof.forms[0].max_rank.iter().all(|&r| r < 64));
    }

    #[test]
    fn module_preconditions() {
        let (g, mg, _, _) = graded(16);
        let chi = ScalarFunctionSpec::new(ScalarFunction::ChiRational);
        let gapped = quantize(&Family::GappedDirac(1.0).build(g).unwrap()).unwrap();
        // ξσ_x + mσ_y is odd but does not commute with iσ_x
        assert!(matches!(assemble_module(&gapped, None, &chi, &mg, &[], &[0.1]), Err(Error::Precondition(_))));
        let not_norm = ScalarFunctionSpec::new(ScalarFunction::Gaussian { sigma: 1.0 });
        let (_, _, p, _) = graded(16);
        assert!(assemble_module(&p, None, &not_norm, &mg, &[], &[0.1]).is_err());
        let wrong_fiber = make_multigrading(2, 2).unwrap();
        assert!(assemble_module(&p, None, &chi, &wrong_fiber, &[], &[0.1]).is_err());
    }

    #[test]
    fn gapped_square_is_exact() {
        let mg = make_multigrading(0, 1).unwrap();
        let g = GridSpec::new(1, 32, 1.0, 2).unwrap();
        let p = quantize(&Family::GappedDirac(1.0).build(g).unwrap()).unwrap();
        let chi = ScalarFunctionSpec::new(ScalarFunction::SignGap { gap: 0.5 });
        let (_, rep) = assemble_module(&p, None, &chi, &mg, &[], &[0.1]).unwrap();
        assert_eq!(rep.square_defect_functional, 0.0);
        assert!(rep.square_defect_matrix <= 1e-12, "{}", rep.square_defect_matrix);
    }

    #[test]
    fn commutator_integral_matches_direct() {
        let (g, _, p, _) = graded(16);
        let f = bump(g, BumpKind::Smooth, 3, 2.0, 2.0).unwrap();
        let (_, rep) = commutator_integral(&p, &f.values, 1e3, 4096, 1e-4).unwrap();
        assert!(rep.defect <= 1e-4 && !rep.flagged, "{rep:?}");
        assert!(rep.first_summand.is_finite() && rep.second_summand.is_finite());
        let (c, rep) = commutator_integral(&p, &vec![1.0; 16], 1e3, 64, 1e-4).unwrap();
        assert!(max_abs(c.matrix.view()) < 1e-14);
        assert!(rep.defect < 1e-14);
    }

    #[test]
    fn homotopy_identical_and_k1() {
        let (g, _, p, _) = graded(16);
        let base = bump(g, BumpKind::Smooth, 0, 2.0, 2.0).unwrap();
        let fs = vec![base.clone(), base.translate([5, 0])];
        let chi = ScalarFunctionSpec::new(ScalarFunction::ChiRational);
        let tr = homotopy_scan(&p, &p, &chi, &[2, 4], &fs, 2, 0).unwrap();
        assert!(tr.identical_endpoints && tr.max_jump() == 0.0);
        // order-0 odd multigraded perturbation V(x)σ_x
        let v: Vec<C64> = (0..16)
            .flat_map(|i| {
                let c = 0.5 * g.coords(i)[0].cos();
                [ZERO, C64::new(c, 0.0), C64::new(c, 0.0), ZERO]
            })
            .collect();
        let pert = crate::quantize::matrix_multiplication(g, &v, "V").unwrap();
        let q = symmetrize(&crate::quantize::add(&p, &pert).unwrap()).unwrap();
        let tr = homotopy_scan(&p, &q, &chi, &[2, 4, 8], &fs, 2, 0).unwrap();
        let l = tr.lipschitz.as_ref().unwrap();
        assert!(l.holds, "{l:?}");
        assert!(tr.continuity_holds());
        assert!(tr.gamma_adjoint.is_none());
    }

    #[test]
    fn homotopy_rejects_principal_mismatch() {
        let g = GridSpec::one_d(32, 1.0).unwrap();
        let p = quantize(&Family::LaplacePlusOne.build(g).unwrap()).unwrap();
        let q = quantize(&Symbol::multiplier(g, 2, "2lap", |xi, o| o[0] = C64::new(1.0 + 2.0 * xi[0] * xi[0], 0.0)).unwrap()).unwrap();
        let chi = ScalarFunctionSpec::new(ScalarFunction::ChiRational);
        assert!(homotopy_scan(&p, &q, &chi, &[2], &[], 1, 0).is_err());
        let drift = symmetrize(&quantize(&Family::Drift(0.5).build(g).unwrap()).unwrap()).unwrap();
        let q2 = crate::quantize::add(&p, &drift).unwrap();
        let q2 = symmetrize(&q2.with_order(2)).unwrap();
        let f = bump(g, BumpKind::Smooth, 0, 1.0, 4.0).unwrap();
        let tr = homotopy_scan(&p, &q2, &chi, &[2, 4, 8], &[f], 2, 0).unwrap();
        assert!(tr.principal.same_principal_symbol && tr.continuity_holds(), "{:?}", tr.ladder);
        assert!(tr.gamma_commutator.unwrap() > 0.0);
    }
}
