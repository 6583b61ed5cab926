//! Parametrices of elliptic operators and the elliptic estimates they imply.

use std::fmt::Write as _;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{dft_unitary, GridSpec};
use crate::linalg::{eigh, inner, random_vector, small_matmul, vec_norm, CMat, C64, ONE, ZERO};
use crate::quantize::{compose, quantize, sub, DiscreteOperator, FourierView};
use crate::symbols::{check_elliptic, compose_symbols, excision, invert_principal, EllipticityCertificate, Symbol};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualRow {
    pub which: String,
    pub k: f64,
    pub l: f64,
    pub norm: f64,
}

#[derive(Debug, Clone)]
pub struct ParametrixResult {
    pub q: DiscreteOperator,
    pub s1: DiscreteOperator,
    pub s2: DiscreteOperator,
    pub iterations: usize,
    /// Radius actually excised: the larger of the certificate radius and the requested one.
    pub excision_radius: f64,
    pub excision_width: f64,
    pub certificate: EllipticityCertificate,
    /// x-harmonic cap applied to the iterates.
    pub harmonic_cap: u64,
    /// `max |p ∘ q_j − 1|` on resolved modes untouched by excision, per iteration.
    pub symbol_defects: Vec<f64>,
    pub diverged: bool,
    /// Worst `(x index, mode index)` of the last symbol defect.
    pub worst_cell: (usize, usize),
    pub residual_norms: Vec<ResidualRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParametrixOptions {
    pub excision_radius: f64,
    pub excision_width: f64,
    /// Relative level below which x-harmonics of the seed count as rounding noise.
    pub harmonic_tol: f64,
    pub residual_ks: Vec<f64>,
    pub residual_ls: Vec<f64>,
    pub residual_bands: Vec<Band>,
}

impl Default for ParametrixOptions {
    fn default() -> Self {
        ParametrixOptions {
            excision_radius: 0.0,
            excision_width: 0.0,
            harmonic_tol: 1e-15,
            residual_ks: vec![0.0, 1.0, 2.0, 3.0],
            residual_ls: vec![0.0, 1.0, 2.0, 3.0],
            residual_bands: vec![Band::Resolved, Band::OffExcision],
        }
    }
}

fn is_excised(xi_norm: f64, radius: f64, width: f64) -> bool {
    excision(xi_norm, radius, width) < 1.0
}

fn symbol_defect(p: &Symbol, q: &Symbol, j: usize, radius: f64, width: f64) -> Result<(Symbol, f64, (usize, usize))> {
    let g = p.grid;
    let r = p.r();
    let d = compose_symbols(p, q, j)?.sub(&Symbol::identity(g)?)?;
    let cap = g.resolved_cap();
    let mut worst = (0.0f64, (0, 0));
    for x in 0..d.x_points() {
        for m in 0..g.points() {
            if is_excised(g.xi_norm_sq(m).sqrt(), radius, width) || g.mode_sup(m) > cap {
                continue;
            }
            for z in d.cell(x, m).iter().take(r * r) {
                if z.norm() > worst.0 {
                    worst = (z.norm(), (x, m));
                }
            }
        }
    }
    Ok((d, worst.0, worst.1))
}

/// [`build_parametrix_with`] with default options and the given excision width.
pub fn build_parametrix(p_op: &DiscreteOperator, p: &Symbol, j: usize, excision_width: f64) -> Result<ParametrixResult> {
    build_parametrix_with(p_op, p, j, &ParametrixOptions { excision_width, ..Default::default() })
}

/// `q_0 = χ_ex p^{-1}`, `q_{j+1} = q_j − q_0 ∘ (p ∘ q_j − 1)` with `∘` truncated at order `J`;
/// `Q = Op(q_J)`, `S1 = I − PQ`, `S2 = I − QP`.
///
/// Iterates are projected onto the x-harmonics resolved by `q_0`: spectral `D_x`
/// otherwise amplifies rounding noise in the top harmonics by `N^2` per step.
pub fn build_parametrix_with(p_op: &DiscreteOperator, p: &Symbol, j: usize, opts: &ParametrixOptions) -> Result<ParametrixResult> {
    if p_op.grid != p.grid {
        return Err(Error::GridMismatch);
    }
    let mut cert = check_elliptic(p);
    if !cert.ok {
        return Err(Error::NotElliptic(cert.diagnostic.clone()));
    }
    let g = p.grid;
    let radius = cert.radius.max(opts.excision_radius);
    let width = opts.excision_width.max(0.0);
    let seed_cert = EllipticityCertificate { radius, ..cert.clone() };
    let q0 = invert_principal(p, &seed_cert, width)?;
    let cap = q0.x_harmonic_extent(opts.harmonic_tol).max(p.x_harmonic_extent(opts.harmonic_tol));
    let mut qj = q0.clone();
    let mut defects: Vec<f64> = Vec::new();
    let mut worst_cell = (0, 0);
    for step in 0..=j {
        let (d, worst, cell) = symbol_defect(p, &qj, j, radius, width)?;
        defects.push(worst);
        worst_cell = cell;
        if step == j {
            break;
        }
        qj = qj.sub(&compose_symbols(&q0, &d.x_band_limit(cap), j)?)?.x_band_limit(cap);
    }
    let diverged = defects.windows(2).any(|w| w[1] > w[0] * (1.0 + 1e-9) && w[1] > 1e-13);
    let qj = qj.with_order(-p.order).named(format!("parametrix({}, J={j})", p.name));
    let q = quantize(&qj)?;
    let id = DiscreteOperator::identity(g)?;
    let s1 = sub(&id, &compose(p_op, &q)?)?.named("S1");
    let s2 = sub(&id, &compose(&q, p_op)?)?.named("S2");
    cert.radius = radius;
    let mut res = ParametrixResult {
        q,
        s1,
        s2,
        iterations: j,
        excision_radius: radius,
        excision_width: width,
        certificate: cert,
        harmonic_cap: cap,
        symbol_defects: defects,
        diverged,
        worst_cell,
        residual_norms: Vec::new(),
    };
    for &band in &opts.residual_bands {
        let rows = res.residual_table(&opts.residual_ks, &opts.residual_ls, band)?;
        res.residual_norms.extend(rows);
    }
    Ok(res)
}

/// Which Fourier modes a residual norm is measured on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Band {
    Full,
    /// `max |m| ≤ N/3`.
    Resolved,
    /// Modes where the excision profile is below 1.
    Excised,
    /// Resolved modes untouched by excision.
    OffExcision,
}

impl Band {
    pub fn label(&self) -> &'static str {
        match self {
            Band::Full => "full",
            Band::Resolved => "resolved",
            Band::Excised => "excised",
            Band::OffExcision => "off-excision",
        }
    }
}

impl ParametrixResult {
    /// `‖S_i‖_{−k,l}` for all `k ∈ ks`, `l ∈ ls` on the chosen band, rows labelled `S1/<band>`.
    pub fn residual_table(&self, ks: &[f64], ls: &[f64], band: Band) -> Result<Vec<ResidualRow>> {
        let g = self.q.grid;
        let r = g.fiber_dim;
        let (rad, w) = (self.excision_radius, self.excision_width);
        let cap = g.resolved_cap();
        let mask: Option<Vec<bool>> = match band {
            Band::Full => None,
            Band::Resolved => Some(g.band_mask(cap)),
            Band::Excised => Some((0..g.state_dim()).map(|i| is_excised(g.xi_norm_sq(i / r).sqrt(), rad, w)).collect()),
            Band::OffExcision => Some(
                (0..g.state_dim())
                    .map(|i| g.mode_sup(i / r) <= cap && !is_excised(g.xi_norm_sq(i / r).sqrt(), rad, w))
                    .collect(),
            ),
        };
        let mut rows = Vec::new();
        for (name, s) in [("S1", &self.s1), ("S2", &self.s2)] {
            let view = FourierView::new(s);
            for &k in ks {
                for &l in ls {
                    let norm = view.norm_masked(-k, l, mask.as_deref(), mask.as_deref())?;
                    rows.push(ResidualRow { which: format!("{name}/{}", band.label()), k, l, norm });
                }
            }
        }
        Ok(rows)
    }

    /// Looks up `which` (e.g. `"S1/off-excision"`) in the stored table.
    pub fn residual(&self, which: &str, k: f64, l: f64) -> Option<f64> {
        self.residual_norms.iter().find(|r| r.which == which && r.k == k && r.l == l).map(|r| r.norm)
    }

    /// Max relative defect of `PQ + S1 = I` and `QP + S2 = I`.
    pub fn identity_defect(&self, p_op: &DiscreteOperator) -> Result<f64> {
        let n = self.q.dim();
        let id = crate::linalg::identity(n);
        let a = &p_op.matrix.dot(&self.q.matrix) + &self.s1.matrix - &id;
        let b = &self.q.matrix.dot(&p_op.matrix) + &self.s2.matrix - &id;
        Ok(crate::linalg::max_abs(a.view()).max(crate::linalg::max_abs(b.view())))
    }

    /// CSV with columns `k,l,norm,J,N,L` (plus the residual label).
    pub fn residual_csv(&self) -> String {
        let g = self.q.grid;
        let mut s = String::from("which,k,l,norm,J,N,L\n");
        for r in &self.residual_norms {
            let _ = writeln!(s, "{},{},{},{:.12e},{},{},{}", r.which, r.k, r.l, r.norm, self.iterations, g.n(), g.period_scale);
        }
        s
    }
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipticEstimate {
    pub constant: f64,
    /// Probe family attaining the maximum: `random`, `mode` or `stacked-svd`.
    pub attained_by: String,
    pub probes: usize,
    pub seed: u64,
}

/// Fourier-basis data for ratio evaluation: `v ↦ (‖w_s v‖, ‖w_{s−k} v‖ + ‖w_{s−k} B v‖)`.
struct RatioEval {
    grid: GridSpec,
    dense: Option<CMat>,
    block: Option<Vec<C64>>,
    ws: Vec<f64>,
    wsk: Vec<f64>,
}

impl RatioEval {
    fn apply(&self, v: &[C64]) -> Vec<C64> {
        if let Some(b) = &self.block {
            let r = self.grid.fiber_dim;
            let mut out = vec![ZERO; v.len()];
            for q in 0..self.grid.points() {
                let blk = &b[q * r * r..(q + 1) * r * r];
                for a in 0..r {
                    for c in 0..r {
                        out[q * r + a] += blk[a * r + c] * v[q * r + c];
                    }
                }
            }
            out
        } else {
            self.dense.as_ref().unwrap().dot(&ndarray::ArrayView1::from(v)).to_vec()
        }
    }

    fn ratio(&self, v: &[C64]) -> f64 {
        let wn = |w: &[f64], x: &[C64]| x.iter().zip(w).map(|(z, w)| (z * w).norm_sqr()).sum::<f64>().sqrt();
        let num = wn(&self.ws, v);
        let den = wn(&self.wsk, v) + wn(&self.wsk, &self.apply(v));
        if den == 0.0 {
            f64::INFINITY
        } else {
            num / den
        }
    }
}

/// `sup_u ‖u‖_{H^s} / (‖u‖_{H^{s−k}} + ‖Pu‖_{H^{s−k}})` over random probes, every
/// single Fourier mode, and the bottom singular vectors of the stacked operator
/// `[Λ^{−k}; Λ^{s−k} P Λ^{−s}]`.
pub fn elliptic_estimate_constant(p: &DiscreteOperator, s: f64, probes: usize, seed: u64) -> Result<EllipticEstimate> {
    let g = p.grid;
    let k = p.order as f64;
    let view = FourierView::new(p);
    let n = g.state_dim();
    let r = g.fiber_dim;
    let dense = if p.multiplier.is_none() { Some(view.matrix.clone()) } else { None };
    let eval = RatioEval {
        grid: g,
        dense,
        block: p.multiplier.clone(),
        ws: g.sobolev_weights(s),
        wsk: g.sobolev_weights(s - k),
    };
    let mut best = (0.0f64, "none".to_string());
    let mut consider = |v: f64, label: &str| {
        if v > best.0 {
            best = (v, label.to_string());
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..probes {
        let mut v = random_vector(n, &mut rng).to_vec();
        // random sections, moved to the Fourier basis
        dft_unitary(&g, &mut v);
        consider(eval.ratio(&v), "random");
    }
    let mut e = vec![ZERO; n];
    for i in 0..n {
        e[i] = ONE;
        consider(eval.ratio(&e), "mode");
        e[i] = ZERO;
    }
    // stacked operator in y = w_s v: A = diag(w_{s−k}/w_s), M = W_{s−k} B W_{−s}
    if p.multiplier.is_none() {
        let b = eval.dense.as_ref().unwrap();
        let mut m = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                m[[i, j]] = b[[i, j]] * (eval.wsk[i] / eval.ws[j]);
            }
        }
        let mut gram = crate::linalg::adjoint(&m).dot(&m);
        for i in 0..n {
            gram[[i, i]] += C64::new((eval.wsk[i] / eval.ws[i]).powi(2), 0.0);
        }
        let gram = crate::linalg::hermitian_part(&gram);
        let (_, vecs) = eigh(&gram)?;
        for c in 0..4.min(n) {
            let y = vecs.column(c);
            let v: Vec<C64> = y.iter().zip(&eval.ws).map(|(z, w)| z / w).collect();
            consider(eval.ratio(&v), "stacked-svd");
        }
    } else {
        // block-diagonal: each mode's r × r block is searched via its own fiber basis
        let blocks = p.multiplier.as_ref().unwrap();
        for q in 0..g.points() {
            if r == 1 {
                break;
            }
            let blk = &blocks[q * r * r..(q + 1) * r * r];
            let adj = crate::linalg::small_adjoint(blk, r);
            let gram = small_matmul(&adj, blk, r);
            let herm = Array2::from_shape_vec((r, r), gram).unwrap();
            let (_, vecs) = eigh(&crate::linalg::hermitian_part(&herm))?;
            let mut v = vec![ZERO; n];
            for a in 0..r {
                v[q * r + a] = vecs[[a, 0]];
            }
            consider(eval.ratio(&v), "stacked-svd");
        }
    }
    Ok(EllipticEstimate { constant: best.0, attained_by: best.1, probes, seed })
}

/// Closed form of the estimate constant for `P = Op(1 + |ξ|²)` at `s = 2` on a grid:
/// `(1 + ξ_max²)/(2 + ξ_max²)`.
pub fn laplace_estimate_oracle(grid: &GridSpec) -> f64 {
    let mut best: f64 = 0.0;
    for q in 0..grid.points() {
        let x = 1.0 + grid.xi_norm_sq(q);
        best = best.max(x / (1.0 + x));
    }
    best
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub frequency: f64,
    pub tail_u: f64,
    pub tail_pu: f64,
    /// `tail(Q Pu) + tail(S2 u)`, which dominates `tail(u)` by the identity.
    pub identity_bound: f64,
    /// `tail(Pu) / (1 + F²)^{k/2}`, the diagonal prediction.
    pub predicted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityReport {
    /// `‖u − Q(Pu) − S2 u‖ / ‖u‖`.
    pub identity_defect: f64,
    pub rows: Vec<TailRow>,
    /// Set when `u` lives on the excised band, where `Q` is blind.
    pub low_frequency_residual: bool,
}

fn tail(grid: &GridSpec, v: &[C64], f: f64) -> f64 {
    let mut w = v.to_vec();
    dft_unitary(grid, &mut w);
    let r = grid.fiber_dim;
    w.iter()
        .enumerate()
        .filter(|(i, _)| grid.xi_norm_sq(i / r).sqrt() > f)
        .map(|(_, z)| z.norm_sqr())
        .sum::<f64>()
        .sqrt()
}

/// Checks `u = Q(Pu) + S2 u` and reports high-frequency tails of `u` against those of `Pu`.
pub fn elliptic_regularity_check(p: &DiscreteOperator, par: &ParametrixResult, u: &[C64], frequencies: &[f64]) -> RegularityReport {
    let g = p.grid;
    let pu = p.apply_vec(u);
    let qpu = par.q.apply_vec(&pu);
    let s2u = par.s2.apply_vec(u);
    let un = vec_norm(u);
    let defect: f64 = u
        .iter()
        .zip(&qpu)
        .zip(&s2u)
        .map(|((a, b), c)| (a - b - c).norm_sqr())
        .sum::<f64>()
        .sqrt()
        / un.max(f64::MIN_POSITIVE);
    let rows = frequencies
        .iter()
        .map(|&f| TailRow {
            frequency: f,
            tail_u: tail(&g, u, f),
            tail_pu: tail(&g, &pu, f),
            identity_bound: tail(&g, &qpu, f) + tail(&g, &s2u, f),
            predicted: tail(&g, &pu, f) / (1.0 + f * f).powf(p.order as f64 / 2.0),
        })
        .collect();
    let low = vec_norm(&s2u) > 0.5 * un && vec_norm(&qpu) < 0.5 * un;
    RegularityReport { identity_defect: defect, rows, low_frequency_residual: low }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModifiedInnerProduct {
    pub k: i32,
    pub l: i32,
    /// `max |⟨Pu, v⟩_G − ⟨u, Pv⟩_G| / (‖Pu‖_G ‖v‖_G)` over probes.
    pub max_asymmetry: f64,
    pub probes: usize,
}

/// Gram operator `G = I + P*P` of `⟨u, v⟩_G = ⟨u, v⟩ + ⟨Pu, Pv⟩`, and the check
/// that a self-adjoint `P` stays symmetric for it.
pub fn modified_inner_product(p: &DiscreteOperator, k: i32, l: i32, probes: usize, seed: u64) -> Result<(CMat, ModifiedInnerProduct)> {
    if !p.self_adjoint {
        return Err(Error::NotSelfAdjoint(crate::linalg::hermitian_defect(&p.matrix)));
    }
    let n = p.dim();
    let mut gram = crate::linalg::adjoint(&p.matrix).dot(&p.matrix);
    for i in 0..n {
        gram[[i, i]] += ONE;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gdot = |a: &[C64], b: &[C64]| inner(a, &gram.dot(&ndarray::ArrayView1::from(b)).to_vec());
    let mut worst: f64 = 0.0;
    for _ in 0..probes {
        let u = random_vector(n, &mut rng).to_vec();
        let v = random_vector(n, &mut rng).to_vec();
        let pu = p.apply_vec(&u);
        let pv = p.apply_vec(&v);
        let lhs = gdot(&pu, &v);
        let rhs = gdot(&u, &pv);
        let scale = gdot(&pu, &pu).re.sqrt() * gdot(&v, &v).re.sqrt();
        worst = worst.max((lhs - rhs).norm() / scale.max(f64::MIN_POSITIVE));
    }
    Ok((gram, ModifiedInnerProduct { k, l, max_asymmetry: worst, probes }))
}

/// Finite-dimensional stand-in for essential self-adjointness: eigenvalues of a
/// self-adjoint matrix are real, so `ker(P ± i) = {0}` with `σ_min(P ± i) ≥ 1`.
/// Returns `σ_min(P ± i)` computed from the spectrum.
pub fn deficiency_check(p: &DiscreteOperator) -> Result<f64> {
    if !p.self_adjoint {
        return Err(Error::NotSelfAdjoint(crate::linalg::hermitian_defect(&p.matrix)));
    }
    let (w, _) = eigh(&p.matrix)?;
    Ok(w.iter().map(|l| (l * l + 1.0).sqrt()).fold(f64::INFINITY, f64::min))
}

/// Exact inverse check: for an `x`-independent elliptic symbol, the Fourier
/// coefficients of `Q` off the excised band against `1/p`.
pub fn multiplier_inverse_defect(par: &ParametrixResult, p: &Symbol) -> Result<f64> {
    if !p.x_independent {
        return Err(Error::Precondition("multiplier inverse check needs an x-independent symbol".into()));
    }
    let g = p.grid;
    let r = p.r();
    let view = FourierView::new(&par.q);
    let full = if par.q.multiplier.is_none() { Some(view.matrix.clone()) } else { None };
    let mut worst: f64 = 0.0;
    for q in 0..g.points() {
        if is_excised(g.xi_norm_sq(q).sqrt(), par.excision_radius, par.excision_width) {
            continue;
        }
        let inv = crate::linalg::small_inverse(p.cell(0, q), r).ok_or_else(|| Error::NotElliptic("singular".into()))?;
        let chi = excision(g.xi_norm_sq(q).sqrt(), par.excision_radius, par.excision_width);
        for a in 0..r {
            for b in 0..r {
                let have = match (&full, &par.q.multiplier) {
                    (Some(m), _) => m[[q * r + a, q * r + b]],
                    (None, Some(blk)) => blk[(q * r + a) * r + b],
                    _ => unreachable!(),
                };
                let scale = inv[a * r + b].norm().max(1e-300);
                worst = worst.max((have - inv[a * r + b] * chi).norm() / scale.max(inv.iter().fold(0.0, |m, z| m.max(z.norm()))));
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantize::{op_norm, symmetrize};
    use crate::symbols::Family;

    fn g(n: usize, l: f64) -> GridSpec {
        GridSpec::one_d(n, l).unwrap()
    }

    #[test]
    fn identity_parametrix() {
        let gr = g(64, 1.0);
        let p = Symbol::identity(gr).unwrap();
        let par = build_parametrix(&quantize(&p).unwrap(), &p, 2, 0.0).unwrap();
        assert!(crate::linalg::max_abs(par.s1.matrix.view()) < 1e-14);
        assert!(crate::linalg::max_abs((&par.q.matrix - &crate::linalg::identity(64)).view()) < 1e-14);
    }

    #[test]
    fn laplace_parametrix_is_exact_off_excision() {
        let gr = g(128, 1.0);
        let p = Family::LaplacePlusOne.build(gr).unwrap();
        let op = quantize(&p).unwrap();
        let par = build_parametrix(&op, &p, 1, 3.0).unwrap();
        assert!(multiplier_inverse_defect(&par, &p).unwrap() < 1e-10);
        // S1 lives on the excised modes only
        let res = par.residual_table(&[0.0], &[0.0], Band::Full).unwrap();
        let exc = par.residual_table(&[0.0], &[0.0], Band::Excised).unwrap();
        assert!((res[0].norm - exc[0].norm).abs() < 1e-12);
        let view = FourierView::new(&par.s1);
        let off: Vec<bool> = (0..128).map(|i| gr.xi_norm_sq(i).sqrt() >= 3.0).collect();
        assert!(view.norm_masked(0.0, 0.0, Some(&off), Some(&off)).unwrap() < 1e-12);
        assert!(par.identity_defect(&op).unwrap() < 1e-12);
    }

    fn schrodinger_opts() -> ParametrixOptions {
        ParametrixOptions {
            excision_radius: 8.0,
            excision_width: 4.0,
            residual_ks: vec![0.0],
            residual_ls: vec![0.0, 1.0, 2.0],
            residual_bands: vec![Band::OffExcision],
            ..Default::default()
        }
    }

    #[test]
    fn schrodinger_residuals_fall_with_iterations() {
        let gr = g(128, 1.0);
        let p = Family::Schrodinger(1.0).build(gr).unwrap();
        let op = quantize(&p).unwrap();
        let mut prev = [f64::INFINITY; 3];
        for j in 0..4 {
            let par = build_parametrix_with(&op, &p, j, &schrodinger_opts()).unwrap();
            assert!(!par.diverged);
            assert!(par.identity_defect(&op).unwrap() < 1e-12);
            for l in 0..3 {
                let v = par.residual("S1/off-excision", 0.0, l as f64).unwrap();
                assert!(v < prev[l], "J={j} l={l}: {v} ≥ {}", prev[l]);
                prev[l] = v;
            }
        }
    }

    #[test]
    fn unexcised_seed_reports_divergence() {
        let gr = g(64, 1.0);
        let p = Family::Schrodinger(1.0).build(gr).unwrap();
        let par = build_parametrix(&quantize(&p).unwrap(), &p, 3, 0.0).unwrap();
        assert!(par.diverged);
        assert_eq!(par.worst_cell.1, gr.index_of_mode(0));
    }

    #[test]
    fn non_elliptic_rejected() {
        let gr = g(32, 1.0);
        let p = Symbol::zero(gr, 2).unwrap();
        assert!(matches!(build_parametrix(&quantize(&p).unwrap(), &p, 1, 0.0), Err(Error::NotElliptic(_))));
    }

    #[test]
    fn estimate_constant_for_identity_is_half() {
        let gr = g(64, 1.0);
        let id = DiscreteOperator::identity(gr).unwrap();
        for s in [-1.0, 0.0, 2.0] {
            let e = elliptic_estimate_constant(&id, s, 8, 1).unwrap();
            assert!((e.constant - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn laplace_estimate_matches_oracle() {
        let gr = g(256, 1.0 / 512.0);
        let p = quantize(&Family::LaplacePlusOne.build(gr).unwrap()).unwrap();
        let e = elliptic_estimate_constant(&p, 2.0, 16, 3).unwrap();
        let oracle = laplace_estimate_oracle(&gr);
        assert!((e.constant - oracle).abs() < 1e-15);
        assert!((e.constant - 1.0).abs() < 1e-9);
    }

    #[test]
    fn dense_and_multiplier_paths_agree() {
        let gr = g(64, 1.0);
        let p = quantize(&Family::LaplacePlusOne.build(gr).unwrap()).unwrap();
        let mut dense = p.clone();
        dense.multiplier = None;
        let a = elliptic_estimate_constant(&p, 2.0, 4, 0).unwrap().constant;
        let b = elliptic_estimate_constant(&dense, 2.0, 4, 0).unwrap().constant;
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn regularity_on_white_noise() {
        let gr = g(256, 1.0);
        let p = Family::LaplacePlusOne.build(gr).unwrap();
        let op = quantize(&p).unwrap();
        let par = build_parametrix(&op, &p, 0, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = random_vector(256, &mut rng).to_vec();
        let rep = elliptic_regularity_check(&op, &par, &u, &[4.0, 16.0, 64.0]);
        assert!(rep.identity_defect < 1e-12);
        for row in &rep.rows {
            assert!(row.tail_u <= row.identity_bound * (1.0 + 1e-12));
            // (1 + ξ²) ≥ (1 + F²) above F
            assert!(row.tail_u <= row.predicted * (1.0 + 1e-12));
        }
        assert!(!rep.low_frequency_residual);
    }

    #[test]
    fn excised_band_flagged() {
        let gr = g(64, 1.0);
        let p = Family::LaplacePlusOne.build(gr).unwrap();
        let op = quantize(&p).unwrap();
        let par = build_parametrix(&op, &p, 0, 4.0).unwrap();
        let u = crate::lattice::Section::plane_wave(gr, [1, 0], 0).into_flat();
        let rep = elliptic_regularity_check(&op, &par, &u, &[0.5]);
        assert!(rep.low_frequency_residual);
    }

    #[test]
    fn modified_inner_products() {
        let gr = g(64, 1.0);
        let zero = quantize(&Symbol::zero(gr, 0).unwrap()).unwrap();
        let mut zero = zero;
        zero.self_adjoint = true;
        let (gm, rep) = modified_inner_product(&zero, 0, 0, 5, 1).unwrap();
        assert!(crate::linalg::max_abs((&gm - &crate::linalg::identity(64)).view()) == 0.0);
        assert_eq!(rep.max_asymmetry, 0.0);
        let drift = symmetrize(&quantize(&Family::Drift(1.0).build(gr).unwrap()).unwrap()).unwrap();
        let (_, rep) = modified_inner_product(&drift, 1, 0, 20, 2).unwrap();
        assert!(rep.max_asymmetry <= 1e-9);
        let raw = quantize(&Family::Drift(1.0).build(gr).unwrap()).unwrap();
        assert!(modified_inner_product(&raw, 1, 0, 1, 0).is_err());
        assert!(deficiency_check(&drift).unwrap() >= 1.0 - 1e-12);
    }

    #[test]
    fn schrodinger_mapping_order() {
        let gr = g(128, 1.0);
        let p = quantize(&Family::Schrodinger(1.0).build(gr).unwrap()).unwrap();
        assert!(op_norm(&p, 2.0, 0.0).unwrap() < 3.1);
    }
}
