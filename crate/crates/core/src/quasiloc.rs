//! Quasilocality measurements: dominating functions, finite propagation,
//! ε-ranks and uniform approximability of operator families.

use std::fmt::Write as _;

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::funcalc::SpectralData;
use crate::lattice::{apply_lambda, lipschitz_bump, seminorm_cutoff, BumpFunction, GridSpec, Region};
use crate::linalg::{cholesky_lower, random_vector, singular_values, solve_lower, spectral_norm, vec_norm, CMat, C64, ZERO};
use crate::quantize::DiscreteOperator;
use crate::symbols::smoothstep;

/// Values of `μ̂` at or below this are reported as zero.
pub const ZERO_FLOOR: f64 = 1e-12;

/// Number of singular values `≥ eps`; with descending `sv` this is the minimal
/// rank `N` with `‖T − T_N‖ = σ_{N+1} < eps`.
pub fn rank_from_singular(sv: &[f64], eps: f64) -> usize {
    sv.iter().filter(|&&s| s >= eps).count()
}

pub fn eps_rank_matrix(m: ArrayView2<C64>, eps: f64) -> Result<usize> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps = {eps} must be positive")));
    }
    Ok(rank_from_singular(singular_values(m)?.as_slice().unwrap(), eps))
}

pub fn eps_rank(t: &DiscreteOperator, eps: f64) -> Result<usize> {
    eps_rank_matrix(t.matrix.view(), eps)
}

/// Best rank-`k` truncation error `σ_{k+1}` (0 past the end).
pub fn truncation_error(sv: &[f64], k: usize) -> f64 {
    sv.get(k).copied().unwrap_or(0.0)
}

// ---------------------------------------------------------------------------
// Families and forms.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BumpKind {
    /// `min(1, L(R/2 − d))₊`.
    Tent,
    /// Quintic smoothstep of the tent ramp, `C²` with Lipschitz constant `L`.
    Smooth,
    /// Indicator of the closed ball of diameter `R`.
    Indicator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub kind: BumpKind,
    /// Support diameter cap `R`.
    pub radius: f64,
    /// Lipschitz cap `L` (ignored for indicators).
    pub lipschitz: f64,
    /// Grid points used as centers.
    pub centers: Vec<usize>,
}

impl FamilySpec {
    pub fn describe(&self) -> String {
        format!("{:?} R={} L={} centers={}", self.kind, self.radius, self.lipschitz, self.centers.len()).to_lowercase()
    }
}

pub fn bump(grid: GridSpec, kind: BumpKind, center: usize, radius: f64, lipschitz: f64) -> Result<BumpFunction> {
    match kind {
        BumpKind::Tent => lipschitz_bump(grid, center, radius, lipschitz),
        BumpKind::Smooth => {
            let tent = lipschitz_bump(grid, center, radius, lipschitz / 1.875)?;
            let values = tent.values.iter().map(|&v| smoothstep(v)).collect();
            let mut b = BumpFunction::from_values(grid, values, lipschitz);
            b.support_diam = b.support_diam.min(radius);
            Ok(b)
        }
        BumpKind::Indicator => {
            let values = (0..grid.points()).map(|p| f64::from(u8::from(grid.distance(p, center) <= radius / 2.0))).collect();
            Ok(BumpFunction::from_values(grid, values, f64::INFINITY))
        }
    }
}

pub fn bump_family(grid: GridSpec, spec: &FamilySpec) -> Result<Vec<BumpFunction>> {
    if spec.centers.is_empty() {
        return Err(Error::InvalidArgument("empty family".into()));
    }
    spec.centers.iter().map(|&c| bump(grid, spec.kind, c, spec.radius, spec.lipschitz)).collect()
}

/// All lattice translates of `base` along the first axis, in steps of `stride` points.
pub fn translates(base: &BumpFunction, stride: usize) -> Vec<BumpFunction> {
    let n = base.grid.n();
    (0..n).step_by(stride.max(1)).map(|k| base.translate([k as i64, 0])).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Form {
    FT,
    TF,
    Commutator,
    /// `f T g` with `g` fixed.
    Sandwich { g: Vec<f64> },
}

impl Form {
    pub fn label(&self) -> &'static str {
        match self {
            Form::FT => "fT",
            Form::TF => "Tf",
            Form::Commutator => "[T,f]",
            Form::Sandwich { .. } => "fTg",
        }
    }
}

fn scale_rows(m: &mut CMat, f: &[f64], r: usize) {
    for (i, mut row) in m.rows_mut().into_iter().enumerate() {
        let v = f[i / r];
        row.mapv_inplace(|z| z * v);
    }
}

fn scale_cols(m: &mut CMat, f: &[f64], r: usize) {
    for (j, mut col) in m.columns_mut().into_iter().enumerate() {
        let v = f[j / r];
        col.mapv_inplace(|z| z * v);
    }
}

/// The matrix of `form` applied to `T` and `f`.
pub fn form_matrix(t: &CMat, r: usize, f: &[f64], form: &Form) -> CMat {
    match form {
        Form::FT => {
            let mut m = t.clone();
            scale_rows(&mut m, f, r);
            m
        }
        Form::TF => {
            let mut m = t.clone();
            scale_cols(&mut m, f, r);
            m
        }
        Form::Commutator => {
            let mut a = t.clone();
            scale_cols(&mut a, f, r);
            let mut b = t.clone();
            scale_rows(&mut b, f, r);
            a - b
        }
        Form::Sandwich { g } => {
            let mut m = t.clone();
            scale_rows(&mut m, f, r);
            scale_cols(&mut m, g, r);
            m
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormProfile {
    pub form: String,
    /// Max over the family, per ε.
    pub max_rank: Vec<usize>,
    /// `member_ranks[i][e]`.
    pub member_ranks: Vec<Vec<usize>>,
    /// Every member has the same rank at every ε.
    pub member_uniform: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsRankProfile {
    pub operator: String,
    pub family: String,
    pub eps_list: Vec<f64>,
    pub forms: Vec<FormProfile>,
}

impl EpsRankProfile {
    pub fn form(&self, label: &str) -> Option<&FormProfile> {
        self.forms.iter().find(|f| f.form == label)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("form,eps,max_rank,member_uniform\n");
        for f in &self.forms {
            for (e, r) in self.eps_list.iter().zip(&f.max_rank) {
                let _ = writeln!(s, "{},{e:.6e},{r},{}", f.form, f.member_uniform);
            }
        }
        s
    }
}

pub fn uniform_approx_profile(
    t: &DiscreteOperator,
    family: &[BumpFunction],
    family_label: &str,
    forms: &[Form],
    eps_list: &[f64],
) -> Result<EpsRankProfile> {
    if family.is_empty() {
        return Err(Error::InvalidArgument("family must be nonempty".into()));
    }
    if eps_list.iter().any(|&e| !(e > 0.0)) {
        return Err(Error::InvalidArgument("eps values must be positive".into()));
    }
    let r = t.grid.fiber_dim;
    let mut out = Vec::new();
    for form in forms {
        let mut member_ranks = Vec::with_capacity(family.len());
        for f in family {
            if !f.grid.same_geometry(&t.grid) {
                return Err(Error::GridMismatch);
            }
            let sv = singular_values(form_matrix(&t.matrix, r, &f.values, form).view())?;
            let sv = sv.as_slice().unwrap();
            member_ranks.push(eps_list.iter().map(|&e| rank_from_singular(sv, e)).collect::<Vec<_>>());
        }
        let max_rank = (0..eps_list.len()).map(|e| member_ranks.iter().map(|m| m[e]).max().unwrap()).collect();
        let member_uniform = member_ranks.iter().all(|m| *m == member_ranks[0]);
        out.push(FormProfile { form: form.label().to_string(), max_rank, member_ranks, member_uniform });
    }
    Ok(EpsRankProfile { operator: t.name.clone(), family: family_label.to_string(), eps_list: eps_list.to_vec(), forms: out })
}

// ---------------------------------------------------------------------------
// Dominating functions.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MuSample {
    pub value: f64,
    /// Random-probe lower bound for the same `(L, R)`.
    pub probe_lower: f64,
    /// `exact` (SVD of the compressed operator) or `zero` (disjoint supports).
    pub estimator: String,
}

/// `sup ‖η_R A u‖_{H^s} / ‖u‖_{H^r}` over `u` supported in `region`, where `η_R`
/// is the width-`w` cutoff of the complement of `B_R(region)`. `None` when that
/// complement is empty.
pub fn compressed_sup(
    a: &CMat,
    grid: &GridSpec,
    r: f64,
    s: f64,
    region: &Region,
    radius: f64,
    width: f64,
    probes: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Option<MuSample>> {
    let far = region.dilate(radius).complement();
    if far.is_empty() {
        return Ok(None);
    }
    let fib = grid.fiber_dim;
    let n = grid.state_dim();
    let eta = seminorm_cutoff(&far, width);
    let cols: Vec<usize> = region.indices().iter().flat_map(|&p| (0..fib).map(move |c| p * fib + c)).collect();
    let k = cols.len();
    // M = Λ^s η A E_S, stored as rows of M^T for cache-friendly FFTs
    let mut mt = Array2::<C64>::zeros((k, n));
    let mut all_zero = true;
    for (j, &c) in cols.iter().enumerate() {
        let col: Vec<C64> = (0..n).map(|i| a[[i, c]] * eta[i / fib]).collect();
        all_zero &= col.iter().all(|z| *z == ZERO);
        let v = apply_lambda(grid, &col, s);
        mt.row_mut(j).assign(&ndarray::ArrayView1::from(&v[..]));
    }
    if all_zero {
        return Ok(Some(MuSample { value: 0.0, probe_lower: 0.0, estimator: "zero".into() }));
    }
    // G_S = E_S^* Λ^{2r} E_S = C C^*
    let mut gram = Array2::<C64>::zeros((k, k));
    for (j, &c) in cols.iter().enumerate() {
        let mut e = vec![ZERO; n];
        e[c] = C64::new(1.0, 0.0);
        let v = apply_lambda(grid, &e, 2.0 * r);
        for (i, &ci) in cols.iter().enumerate() {
            gram[[i, j]] = v[ci];
        }
    }
    let gram = crate::linalg::hermitian_part(&gram);
    let chol = cholesky_lower(&gram)?;
    // sup = ‖M C^{-*}‖ = ‖C^{-1} M^*‖
    let mstar = mt.mapv(|z| z.conj());
    let x = solve_lower(&chol, &mstar)?;
    let value = spectral_norm(x.view())?;
    let mut probe_lower: f64 = 0.0;
    for _ in 0..probes {
        let u = random_vector(k, rng);
        let num = vec_norm(mt.t().dot(&u).as_slice().unwrap());
        let den = gram.dot(&u).iter().zip(u.iter()).map(|(a, b)| (a * b.conj()).re).sum::<f64>().sqrt();
        probe_lower = probe_lower.max(num / den);
    }
    Ok(Some(MuSample { value, probe_lower, estimator: "exact".into() }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominatingFunctionEstimate {
    pub operator: String,
    pub r: f64,
    pub s: f64,
    pub radii: Vec<f64>,
    pub mu_hat: Vec<f64>,
    pub probe_lower: Vec<f64>,
    pub estimator: Vec<String>,
    pub probes: usize,
    pub seed: u64,
    pub cutoff_width: f64,
    pub notes: Vec<String>,
}

impl DominatingFunctionEstimate {
    /// Largest violation of monotonicity after isotonic (nonincreasing) regression,
    /// relative to `max μ̂`.
    pub fn isotonic_defect(&self) -> f64 {
        let top = self.mu_hat.iter().fold(0.0f64, |m, v| m.max(*v));
        if top == 0.0 {
            return 0.0;
        }
        let fit = isotonic_nonincreasing(&self.mu_hat);
        self.mu_hat.iter().zip(&fit).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / top
    }
}

/// Pool-adjacent-violators fit of a nonincreasing sequence.
pub fn isotonic_nonincreasing(y: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, usize)> = Vec::new();
    for &v in y {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (b, nb) = blocks[blocks.len() - 1];
            let (a, na) = blocks[blocks.len() - 2];
            if a >= b {
                break;
            }
            blocks.pop();
            let last = blocks.last_mut().unwrap();
            *last = ((a * na as f64 + b * nb as f64) / (na + nb) as f64, na + nb);
        }
    }
    blocks.into_iter().flat_map(|(v, n)| std::iter::repeat_n(v, n)).collect()
}

#[allow(clippy::too_many_arguments)]
pub fn dominating_function(
    a: &DiscreteOperator,
    r: f64,
    s: f64,
    radii: &[f64],
    regions: &[Region],
    probes: usize,
    seed: u64,
    cutoff_width: f64,
) -> Result<DominatingFunctionEstimate> {
    if probes == 0 {
        return Err(Error::InvalidArgument("probes must be at least 1".into()));
    }
    check_width(&a.grid, cutoff_width)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut est = DominatingFunctionEstimate {
        operator: a.name.clone(),
        r,
        s,
        radii: Vec::new(),
        mu_hat: Vec::new(),
        probe_lower: Vec::new(),
        estimator: Vec::new(),
        probes,
        seed,
        cutoff_width,
        notes: Vec::new(),
    };
    for &radius in radii {
        let mut best: Option<MuSample> = None;
        for (i, region) in regions.iter().enumerate() {
            match compressed_sup(&a.matrix, &a.grid, r, s, region, radius, cutoff_width, probes, &mut rng)? {
                None => est.notes.push(format!("region {i} at R = {radius}: empty complement, skipped")),
                Some(m) => {
                    if best.as_ref().is_none_or(|b| m.value > b.value) {
                        best = Some(m);
                    }
                }
            }
        }
        if let Some(b) = best {
            est.radii.push(radius);
            est.mu_hat.push(b.value);
            est.probe_lower.push(b.probe_lower);
            est.estimator.push(b.estimator);
        }
    }
    Ok(est)
}

fn check_width(grid: &GridSpec, w: f64) -> Result<()> {
    if w < 2.0 * grid.spacing() {
        return Err(Error::InvalidArgument(format!("cutoff width {w} is below two grid spacings")));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Wave operators.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveRow {
    pub t: f64,
    pub radius: f64,
    pub l: f64,
    pub mu_hat: f64,
    pub estimator: String,
    pub probes: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveScanReport {
    pub operator: String,
    pub k: i32,
    pub l: f64,
    pub cutoff_width: f64,
    pub rows: Vec<WaveRow>,
    /// Least-squares slope of `log μ̂` against `log R`, per `t`.
    pub r_slopes: Vec<(f64, f64)>,
    /// Least-squares slope of `log μ̂` against `log |t|`, per `R`.
    pub t_slopes: Vec<(f64, f64)>,
    /// `ok` or `range-limited`.
    pub status: String,
    /// `R`-slopes in `[−1.3, −0.7]` and `t`-slopes in `[0.7, 1.3]`; `None` when range-limited.
    pub within_window: Option<bool>,
}

impl WaveScanReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,R,l,mu_hat,estimator,probes,seed\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{:.12e},{},{},{}", r.t, r.radius, r.l, r.mu_hat, r.estimator, r.probes, r.seed);
        }
        s
    }

    pub fn mu(&self, t: f64, radius: f64) -> Option<f64> {
        self.rows.iter().find(|r| r.t == t && r.radius == radius).map(|r| r.mu_hat)
    }

    pub fn slope_ranges(&self) -> ((f64, f64), (f64, f64)) {
        let range = |v: &[(f64, f64)]| {
            v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, s)| (lo.min(*s), hi.max(*s)))
        };
        (range(&self.r_slopes), range(&self.t_slopes))
    }
}

/// Least-squares slope of `log y` on `log x` over the pairs with `y > ZERO_FLOOR`.
pub fn loglog_slope(pairs: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = pairs.iter().filter(|(x, y)| *x > 0.0 && *y > ZERO_FLOOR).map(|(x, y)| (x.ln(), y.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx)
}

/// `μ̂(R; t)` for `e^{itP}` as a map `H^l → H^{l−(k−1)}` from one region, with
/// log-log fits in `R` and `|t|`.
#[allow(clippy::too_many_arguments)]
pub fn wave_quasilocality_scan(
    p: &DiscreteOperator,
    k: i32,
    t_list: &[f64],
    radii: &[f64],
    l: f64,
    region: &Region,
    cutoff_width: f64,
    probes: usize,
    seed: u64,
) -> Result<WaveScanReport> {
    if k < 1 {
        return Err(Error::Precondition(format!("declared order {k} must be at least 1")));
    }
    check_width(&p.grid, cutoff_width)?;
    let sd = SpectralData::new(p)?;
    let s = l - (k - 1) as f64;
    let mut rows = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for &t in t_list {
        let w = sd.wave(t)?;
        for &radius in radii {
            if let Some(m) = compressed_sup(&w.matrix, &p.grid, l, s, region, radius, cutoff_width, probes, &mut rng)? {
                let (mu_hat, estimator) = if m.value <= ZERO_FLOOR { (0.0, "zero".to_string()) } else { (m.value, m.estimator) };
                rows.push(WaveRow { t, radius, l, mu_hat, estimator, probes, seed });
            }
        }
    }
    let mut r_slopes = Vec::new();
    for &t in t_list {
        let pairs: Vec<(f64, f64)> = rows.iter().filter(|r| r.t == t).map(|r| (r.radius, r.mu_hat)).collect();
        if let Some(sl) = loglog_slope(&pairs) {
            r_slopes.push((t, sl));
        }
    }
    let mut t_slopes = Vec::new();
    for &radius in radii {
        let pairs: Vec<(f64, f64)> = rows.iter().filter(|r| r.radius == radius).map(|r| (r.t.abs(), r.mu_hat)).collect();
        if let Some(sl) = loglog_slope(&pairs) {
            t_slopes.push((radius, sl));
        }
    }
    let decades = |v: &[f64]| {
        let pos: Vec<f64> = v.iter().map(|x| x.abs()).filter(|x| *x > 0.0).collect();
        let lo = pos.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = pos.iter().cloned().fold(0.0, f64::max);
        if pos.is_empty() { 0.0 } else { (hi / lo).log10() }
    };
    let limited = decades(radii) < 0.5 || decades(t_list) < 0.5 || r_slopes.is_empty() || t_slopes.is_empty();
    let within_window = if limited {
        None
    } else {
        Some(
            r_slopes.iter().all(|(_, s)| (-1.3..=-0.7).contains(s)) && t_slopes.iter().all(|(_, s)| (0.7..=1.3).contains(s)),
        )
    };
    Ok(WaveScanReport {
        operator: p.name.clone(),
        k,
        l,
        cutoff_width,
        rows,
        r_slopes,
        t_slopes,
        status: if limited { "range-limited".into() } else { "ok".into() },
        within_window,
    })
}

// ---------------------------------------------------------------------------
// Pseudolocality: the step-function approximation of a Lipschitz bump.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpotcheckSample {
    pub center: usize,
    pub lipschitz: f64,
    pub levels: usize,
    /// `‖f − f′‖_∞`, required `< ε`.
    pub sup_defect: f64,
    /// `‖[T, f] − [T, f′]‖`, bounded by `2ε‖T‖`.
    pub step_defect: f64,
    /// `‖[T, f′] − Σ_{i,j} (f(x_i) − f(x_j)) χ_j T χ_i‖`.
    pub assembly_defect: f64,
    /// Norm of the `|i − j| = 1` part, bounded by `4ε‖T‖`.
    pub neighbour_norm: f64,
    /// Max ε-rank of `χ_i T χ_j`, `|i − j| > 1`, at the check tolerance.
    pub far_rank: usize,
    /// ε-rank of `[T, f]` at the check tolerance.
    pub commutator_rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpotcheckReport {
    pub operator: String,
    pub radius: f64,
    pub lipschitz: f64,
    pub eps: f64,
    pub rank_tol: f64,
    pub op_norm: f64,
    pub samples: Vec<SpotcheckSample>,
    /// Rank bound separating "uniformly approximable" from not, on this grid.
    pub rank_cap: usize,
    pub verdict_commutators: bool,
    pub verdict_level_sets: bool,
    pub bounds_hold: bool,
}

impl SpotcheckReport {
    pub fn verdicts_agree(&self) -> bool {
        self.verdict_commutators == self.verdict_level_sets
    }
}

/// Samples `L`-Lipschitz tents of diameter `≤ R`, builds the level-set step
/// approximant `f′` with mesh `eps`, and checks the bookkeeping term by term.
pub fn pseudolocality_equivalence_spotcheck(
    t: &DiscreteOperator,
    radius: f64,
    lipschitz: f64,
    eps: f64,
    samples: usize,
    seed: u64,
) -> Result<SpotcheckReport> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidArgument(format!("mesh eps = {eps} must lie in (0, 1)")));
    }
    let g = t.grid;
    let r = g.fiber_dim;
    let tn = spectral_norm(t.matrix.view())?;
    // ranks are read at the mesh scale of the step approximation
    let rank_tol = eps * tn.max(f64::MIN_POSITIVE);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for _ in 0..samples {
        let center = rng.random_range(0..g.points());
        let lip = lipschitz * rng.random_range(0.5..=1.0);
        let f = lipschitz_bump(g, center, radius, lip)?;
        // half-open levels [iε, (i+1)ε)
        let levels = (f.sup_norm / eps).floor() as usize + 1;
        let level_of = |v: f64| ((v / eps).floor() as usize).min(levels - 1);
        let mut chi = vec![vec![0.0; g.points()]; levels];
        let mut rep = vec![f64::NAN; levels];
        for (p, &v) in f.values.iter().enumerate() {
            let i = level_of(v);
            chi[i][p] = 1.0;
            if rep[i].is_nan() {
                rep[i] = v;
            }
        }
        let fprime: Vec<f64> = f.values.iter().map(|&v| rep[level_of(v)]).collect();
        let sup_defect = f.values.iter().zip(&fprime).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let c = form_matrix(&t.matrix, r, &f.values, &Form::Commutator);
        let cp = form_matrix(&t.matrix, r, &fprime, &Form::Commutator);
        let step_defect = spectral_norm((&c - &cp).view())?;
        let mut assembled = CMat::zeros(t.matrix.dim());
        let mut neighbour = CMat::zeros(t.matrix.dim());
        let mut far_rank = 0;
        let occupied: Vec<usize> = (0..levels).filter(|&i| !rep[i].is_nan()).collect();
        for &i in &occupied {
            for &j in &occupied {
                if i == j {
                    continue;
                }
                let mut blk = t.matrix.clone();
                scale_rows(&mut blk, &chi[j], r);
                scale_cols(&mut blk, &chi[i], r);
                let w = C64::new(rep[i] - rep[j], 0.0);
                assembled = assembled + blk.mapv(|z| z * w);
                if i.abs_diff(j) == 1 {
                    neighbour = neighbour + blk.mapv(|z| z * w);
                } else {
                    far_rank = far_rank.max(eps_rank_matrix(blk.view(), rank_tol)?);
                }
            }
        }
        let assembly_defect = spectral_norm((&cp - &assembled).view())?;
        let neighbour_norm = spectral_norm(neighbour.view())?;
        let commutator_rank = eps_rank_matrix(c.view(), rank_tol)?;
        out.push(SpotcheckSample {
            center,
            lipschitz: lip,
            levels: occupied.len(),
            sup_defect,
            step_defect,
            assembly_defect,
            neighbour_norm,
            far_rank,
            commutator_rank,
        });
    }
    let rank_cap = t.dim() / 4;
    let slack = 1e-12 * tn.max(1.0);
    let bounds_hold = out.iter().all(|s| {
        s.sup_defect < eps && s.step_defect <= 2.0 * eps * tn + slack && s.neighbour_norm <= 4.0 * eps * tn + slack && s.assembly_defect <= slack
    });
    Ok(SpotcheckReport {
        operator: t.name.clone(),
        radius,
        lipschitz,
        eps,
        rank_tol,
        op_norm: tn,
        verdict_commutators: out.iter().all(|s| s.commutator_rank <= rank_cap),
        verdict_level_sets: out.iter().all(|s| s.far_rank <= rank_cap),
        samples: out,
        rank_cap,
        bounds_hold,
    })
}

/// `‖A‖` and `μ̂_A(R)` on the given regions, for the composition check
/// `μ̂_{AB}(2R) ≤ c (μ̂_A(R)‖B‖ + ‖A‖μ̂_B(R))`.
pub fn composition_ratio(
    a: &DiscreteOperator,
    b: &DiscreteOperator,
    radius: f64,
    regions: &[Region],
    cutoff_width: f64,
    seed: u64,
) -> Result<f64> {
    let ab = crate::quantize::compose(a, b)?;
    let mu = |op: &DiscreteOperator, rr: f64| -> Result<f64> {
        let e = dominating_function(op, 0.0, 0.0, &[rr], regions, 1, seed, cutoff_width)?;
        Ok(e.mu_hat.first().copied().unwrap_or(0.0))
    };
    let lhs = mu(&ab, 2.0 * radius)?;
    let rhs = mu(a, radius)? * spectral_norm(b.matrix.view())? + spectral_norm(a.matrix.view())? * mu(b, radius)?;
    Ok(if rhs == 0.0 { if lhs <= ZERO_FLOOR { 0.0 } else { f64::INFINITY } } else { lhs / rhs })
}

pub fn adjoint_profile_agrees(t: &DiscreteOperator, family: &[BumpFunction], eps_list: &[f64]) -> Result<bool> {
    // σ(fT) = σ((fT)^*) = σ(T^* f)
    let ts = crate::quantize::adjoint(t);
    let a = uniform_approx_profile(t, family, "", &[Form::FT], eps_list)?;
    let b = uniform_approx_profile(&ts, family, "", &[Form::TF], eps_list)?;
    Ok(a.forms[0].max_rank == b.forms[0].max_rank)
}
