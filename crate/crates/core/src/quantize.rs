//! Kohn–Nirenberg quantization and the dense operator algebra.
//!
//! `(Pu)(x_n) = Σ_m e^{i x_n ξ_m} p(x_n, ξ_m) û(ξ_m)`, so the matrix entry
//! between points `n` and `n'` is `N^{-d} Σ_m e^{i(x_n − x_n')ξ_m} p(x_n, ξ_m)`.
//! Each row is one inverse FFT of the sampled symbol; for `x`-independent
//! symbols every row is a shift of the same vector and the matrix is an exact
//! (bitwise) block circulant.

use std::fmt::Write as _;

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{from_fourier_basis, to_fourier_basis, Container, GridSpec, Section};
use crate::linalg::{
    adjoint as mat_adjoint, frobenius, hermitian_defect, hermitian_part, identity, small_matmul, small_spectral_norm,
    spectral_norm, CMat, C64, ONE, ZERO,
};
use crate::symbols::Symbol;

/// Cap on the dense state dimension `N^d · r`.
pub const DENSE_CAP: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Quantized,
    Multiplication,
    Composed,
    FunctionOf,
    Smoothing,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteOperator {
    pub grid: GridSpec,
    pub order: i32,
    pub matrix: CMat,
    pub propagation_bound: Option<f64>,
    pub provenance: Provenance,
    pub self_adjoint: bool,
    /// Built from a scalar (identity-multiple) symbol.
    pub scalar_symbol: bool,
    /// Built from a Hermitian-valued symbol.
    pub hermitian_symbol: bool,
    /// Fourier multiplier data: one `r × r` block per mode, when the operator is one.
    pub multiplier: Option<Vec<C64>>,
    /// Frobenius norm of `A − A*` recorded by [`symmetrize`].
    pub symmetrization_defect: Option<f64>,
    pub name: String,
}

fn check_dim(grid: &GridSpec) -> Result<()> {
    if grid.state_dim() > DENSE_CAP {
        return Err(Error::DimensionCap { dim: grid.state_dim(), cap: DENSE_CAP });
    }
    Ok(())
}

impl DiscreteOperator {
    pub fn from_matrix(grid: GridSpec, order: i32, matrix: CMat, provenance: Provenance, name: impl Into<String>) -> Result<Self> {
        let n = grid.state_dim();
        if matrix.dim() != (n, n) {
            return Err(Error::Shape { expected: format!("({n}, {n})"), got: format!("{:?}", matrix.dim()) });
        }
        if let Some(i) = matrix.iter().position(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::NonFinite(i));
        }
        Ok(DiscreteOperator {
            grid,
            order,
            matrix: matrix.as_standard_layout().into_owned(),
            propagation_bound: None,
            provenance,
            self_adjoint: false,
            scalar_symbol: false,
            hermitian_symbol: false,
            multiplier: None,
            symmetrization_defect: None,
            name: name.into(),
        })
    }

    pub fn identity(grid: GridSpec) -> Result<Self> {
        check_dim(&grid)?;
        let r = grid.fiber_dim;
        let mut op = Self::from_matrix(grid, 0, identity(grid.state_dim()), Provenance::Multiplication, "identity")?;
        op.propagation_bound = Some(0.0);
        op.self_adjoint = true;
        op.scalar_symbol = true;
        op.hermitian_symbol = true;
        let mut block = vec![ZERO; r * r];
        for a in 0..r {
            block[a * r + a] = ONE;
        }
        op.multiplier = Some(block.repeat(grid.points()));
        Ok(op)
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_multiplier(&self) -> bool {
        self.multiplier.is_some()
    }

    pub fn apply(&self, u: &Section) -> Result<Section> {
        if u.grid != self.grid {
            return Err(Error::GridMismatch);
        }
        let v = self.matrix.dot(&ndarray::ArrayView1::from(u.flat()));
        Section::from_flat(self.grid, v.to_vec())
    }

    pub fn apply_vec(&self, v: &[C64]) -> Vec<C64> {
        self.matrix.dot(&ndarray::ArrayView1::from(v)).to_vec()
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn with_order(mut self, order: i32) -> Self {
        self.order = order;
        self
    }

    /// Zeroes entries coupling points farther apart than `rho` and records the bound.
    pub fn truncate_propagation(mut self, rho: f64) -> Self {
        let g = self.grid;
        let r = g.fiber_dim;
        for i in 0..self.dim() {
            for j in 0..self.dim() {
                if g.distance(i / r, j / r) > rho {
                    self.matrix[[i, j]] = ZERO;
                }
            }
        }
        self.propagation_bound = Some(rho);
        self.multiplier = None;
        self
    }

    /// Checks the recorded invariants: self-adjointness and the propagation bound.
    pub fn verify_invariants(&self) -> Result<()> {
        if self.self_adjoint {
            // ‖A − A*‖_F ≤ 1e−10 ‖A‖_F / √n implies the spectral-norm statement
            let d = hermitian_defect(&self.matrix);
            if d > 1e-10 / (self.dim() as f64).sqrt() {
                return Err(Error::NotSelfAdjoint(d));
            }
        }
        if let Some(rho) = self.propagation_bound {
            let g = self.grid;
            let r = g.fiber_dim;
            for i in 0..self.dim() {
                for j in 0..self.dim() {
                    if self.matrix[[i, j]] != ZERO && g.distance(i / r, j / r) > rho {
                        return Err(Error::Precondition(format!(
                            "entry ({i}, {j}) is nonzero beyond the propagation bound {rho}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_container(&self) -> Container {
        let n = self.dim();
        let mut c = Container::pack(&self.grid, vec![n, n], self.matrix.iter().cloned());
        c.k = Some(self.order);
        c.flags.push(format!("provenance={}", serde_json::to_value(self.provenance).unwrap().as_str().unwrap()));
        if self.self_adjoint {
            c.flags.push("self_adjoint".into());
        }
        if self.scalar_symbol {
            c.flags.push("scalar_symbol".into());
        }
        if self.hermitian_symbol {
            c.flags.push("hermitian_symbol".into());
        }
        if let Some(rho) = self.propagation_bound {
            c.flags.push(format!("propagation_bound={rho:e}"));
        }
        c
    }

    pub fn from_container(c: &Container, name: impl Into<String>) -> Result<Self> {
        let g = c.grid()?;
        check_dim(&g)?;
        let n = g.state_dim();
        if c.shape != [n, n] {
            return Err(Error::Shape { expected: format!("[{n}, {n}]"), got: format!("{:?}", c.shape) });
        }
        let k = c.k.ok_or_else(|| Error::InvalidArgument("operator container needs an order k".into()))?;
        let mut provenance = Provenance::Composed;
        let mut op_flags = (false, false, false, None);
        for f in &c.flags {
            if let Some(p) = f.strip_prefix("provenance=") {
                provenance = serde_json::from_value(serde_json::Value::String(p.into()))?;
            } else if let Some(rho) = f.strip_prefix("propagation_bound=") {
                op_flags.3 = Some(rho.parse::<f64>().map_err(|e| Error::InvalidArgument(e.to_string()))?);
            } else {
                match f.as_str() {
                    "self_adjoint" => op_flags.0 = true,
                    "scalar_symbol" => op_flags.1 = true,
                    "hermitian_symbol" => op_flags.2 = true,
                    other => return Err(Error::InvalidArgument(format!("unknown operator flag `{other}`"))),
                }
            }
        }
        let m = Array2::from_shape_vec((n, n), c.values()).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let mut op = Self::from_matrix(g, k, m, provenance, name)?;
        op.self_adjoint = op_flags.0;
        op.scalar_symbol = op_flags.1;
        op.hermitian_symbol = op_flags.2;
        op.propagation_bound = op_flags.3;
        op.verify_invariants()?;
        Ok(op)
    }
}

/// Unnormalized inverse DFT of one symbol row `m ↦ p_ab(x, ξ_m)`.
fn row_kernel(grid: &GridSpec, values: &mut [C64]) {
    let g1 = grid.with_fiber(1);
    crate::lattice::idft_unitary(&g1, values);
    let scale = (grid.points() as f64).sqrt();
    values.iter_mut().for_each(|z| *z *= scale);
}

/// Flat index of the point difference `n − n'` (per axis, mod N).
fn diff_index(grid: &GridSpec, n: usize, np: usize) -> usize {
    let a = grid.axes(n);
    let b = grid.axes(np);
    let nn = grid.n();
    let d0 = (a[0] + nn - b[0]) % nn;
    if grid.dim == 1 {
        d0
    } else {
        grid.flat([d0, (a[1] + nn - b[1]) % nn])
    }
}

/// Kohn–Nirenberg quantization of a sampled symbol.
pub fn quantize(p: &Symbol) -> Result<DiscreteOperator> {
    let g = p.grid;
    check_dim(&g)?;
    let (pts, r) = (g.points(), g.fiber_dim);
    let n = g.state_dim();
    let inv = 1.0 / pts as f64;
    let mut m = Array2::<C64>::zeros((n, n));
    // diff_table[n][n'] = index of n − n'
    let mut kernels = vec![ZERO; pts * r * r]; // [diff][a][b] for the current row
    let mut buf = vec![ZERO; pts];
    let fill_row = |x: usize, kernels: &mut Vec<C64>, buf: &mut Vec<C64>| {
        for a in 0..r {
            for b in 0..r {
                for q in 0..pts {
                    buf[q] = p.cell(x, q)[a * r + b];
                }
                row_kernel(&g, buf);
                for d in 0..pts {
                    kernels[(d * r + a) * r + b] = buf[d] * inv;
                }
            }
        }
    };
    if p.x_independent {
        fill_row(0, &mut kernels, &mut buf);
        if p.hermitian_valued {
            // enforce k_ab(d) = conj(k_ba(−d)) so the circulant is exactly Hermitian
            let orig = kernels.clone();
            for d in 0..pts {
                let nd = diff_index(&g, 0, d);
                for a in 0..r {
                    for b in 0..r {
                        let x = orig[(d * r + a) * r + b];
                        let y = orig[(nd * r + b) * r + a].conj();
                        kernels[(d * r + a) * r + b] = (x + y) * 0.5;
                    }
                }
            }
        }
    }
    for x in 0..pts {
        if !p.x_independent {
            fill_row(x, &mut kernels, &mut buf);
        }
        for np in 0..pts {
            let d = diff_index(&g, x, np);
            for a in 0..r {
                for b in 0..r {
                    m[[x * r + a, np * r + b]] = kernels[(d * r + a) * r + b];
                }
            }
        }
    }
    let mut op = DiscreteOperator::from_matrix(g, p.order, m, Provenance::Quantized, p.name.clone())?;
    op.scalar_symbol = p.scalar;
    op.hermitian_symbol = p.hermitian_valued;
    if p.x_independent {
        op.multiplier = Some(p.samples().to_vec());
        op.self_adjoint = p.hermitian_valued && hermitian_defect(&op.matrix) == 0.0;
    }
    Ok(op)
}

/// Diagonal multiplication by a real function (times the fiber identity).
pub fn multiplication(grid: GridSpec, f: &[f64], name: impl Into<String>) -> Result<DiscreteOperator> {
    check_dim(&grid)?;
    if f.len() != grid.points() {
        return Err(Error::Shape { expected: grid.points().to_string(), got: f.len().to_string() });
    }
    let r = grid.fiber_dim;
    let mut m = Array2::zeros((grid.state_dim(), grid.state_dim()));
    for (p, &v) in f.iter().enumerate() {
        for a in 0..r {
            m[[p * r + a, p * r + a]] = C64::new(v, 0.0);
        }
    }
    let mut op = DiscreteOperator::from_matrix(grid, 0, m, Provenance::Multiplication, name)?;
    op.propagation_bound = Some(0.0);
    op.self_adjoint = true;
    op.scalar_symbol = true;
    op.hermitian_symbol = true;
    Ok(op)
}

/// Block-diagonal multiplication by a matrix-valued function (`r × r` per point).
pub fn matrix_multiplication(grid: GridSpec, blocks: &[C64], name: impl Into<String>) -> Result<DiscreteOperator> {
    check_dim(&grid)?;
    let r = grid.fiber_dim;
    if blocks.len() != grid.points() * r * r {
        return Err(Error::Shape { expected: (grid.points() * r * r).to_string(), got: blocks.len().to_string() });
    }
    let mut m = Array2::zeros((grid.state_dim(), grid.state_dim()));
    for p in 0..grid.points() {
        for a in 0..r {
            for b in 0..r {
                m[[p * r + a, p * r + b]] = blocks[(p * r + a) * r + b];
            }
        }
    }
    let mut op = DiscreteOperator::from_matrix(grid, 0, m, Provenance::Multiplication, name)?;
    op.propagation_bound = Some(0.0);
    op.self_adjoint = hermitian_defect(&op.matrix) == 0.0;
    Ok(op)
}

/// Fourier multiplier from per-mode `r × r` blocks, assembled as `F* diag F`.
pub fn fourier_multiplier(grid: GridSpec, order: i32, blocks: Vec<C64>, name: impl Into<String>) -> Result<DiscreteOperator> {
    quantize(&Symbol::multiplier_from_samples(grid, order, name, blocks)?)
}

fn check_grids(a: &DiscreteOperator, b: &DiscreteOperator) -> Result<()> {
    if a.grid != b.grid {
        return Err(Error::GridMismatch);
    }
    Ok(())
}

fn multiplier_product(a: &DiscreteOperator, b: &DiscreteOperator) -> Option<Vec<C64>> {
    let (ma, mb) = (a.multiplier.as_ref()?, b.multiplier.as_ref()?);
    let r = a.grid.fiber_dim;
    let mut out = Vec::with_capacity(ma.len());
    for (x, y) in ma.chunks(r * r).zip(mb.chunks(r * r)) {
        out.extend(small_matmul(x, y, r));
    }
    Some(out)
}

pub fn compose(a: &DiscreteOperator, b: &DiscreteOperator) -> Result<DiscreteOperator> {
    check_grids(a, b)?;
    let m = a.matrix.dot(&b.matrix);
    let mut op = DiscreteOperator::from_matrix(a.grid, a.order + b.order, m, Provenance::Composed, format!("{}·{}", a.name, b.name))?;
    op.propagation_bound = match (a.propagation_bound, b.propagation_bound) {
        (Some(x), Some(y)) => Some(x + y),
        _ => None,
    };
    op.scalar_symbol = a.scalar_symbol && b.scalar_symbol;
    op.multiplier = multiplier_product(a, b);
    Ok(op)
}

pub fn adjoint(a: &DiscreteOperator) -> DiscreteOperator {
    let mut op = a.clone();
    op.matrix = mat_adjoint(&a.matrix);
    op.provenance = if a.provenance == Provenance::Quantized { Provenance::Composed } else { a.provenance };
    op.name = format!("{}*", a.name);
    if let Some(m) = &a.multiplier {
        let r = a.grid.fiber_dim;
        op.multiplier = Some(m.chunks(r * r).flat_map(|c| crate::linalg::small_adjoint(c, r)).collect());
    }
    op
}

pub fn add(a: &DiscreteOperator, b: &DiscreteOperator) -> Result<DiscreteOperator> {
    combine(a, b, ONE, "+")
}

pub fn sub(a: &DiscreteOperator, b: &DiscreteOperator) -> Result<DiscreteOperator> {
    combine(a, b, -ONE, "-")
}

fn combine(a: &DiscreteOperator, b: &DiscreteOperator, sign: C64, op_name: &str) -> Result<DiscreteOperator> {
    check_grids(a, b)?;
    let m = &a.matrix + &b.matrix.mapv(|z| z * sign);
    let mut op =
        DiscreteOperator::from_matrix(a.grid, a.order.max(b.order), m, Provenance::Composed, format!("({} {op_name} {})", a.name, b.name))?;
    op.propagation_bound = match (a.propagation_bound, b.propagation_bound) {
        (Some(x), Some(y)) => Some(x.max(y)),
        _ => None,
    };
    op.scalar_symbol = a.scalar_symbol && b.scalar_symbol;
    op.self_adjoint = a.self_adjoint && b.self_adjoint && hermitian_defect(&op.matrix) == 0.0;
    if let (Some(x), Some(y)) = (&a.multiplier, &b.multiplier) {
        op.multiplier = Some(x.iter().zip(y).map(|(p, q)| p + q * sign).collect());
    }
    Ok(op)
}

pub fn scale(a: &DiscreteOperator, c: C64) -> DiscreteOperator {
    let mut op = a.clone();
    op.matrix.mapv_inplace(|z| z * c);
    op.self_adjoint = a.self_adjoint && c.im == 0.0;
    if let Some(m) = &mut op.multiplier {
        m.iter_mut().for_each(|z| *z *= c);
    }
    op
}

/// `[A, B] = AB − BA`; declared order `k_A + k_B − 1` when both come from scalar symbols.
pub fn commutator(a: &DiscreteOperator, b: &DiscreteOperator) -> Result<DiscreteOperator> {
    check_grids(a, b)?;
    let m = a.matrix.dot(&b.matrix) - b.matrix.dot(&a.matrix);
    let drop = if a.scalar_symbol && b.scalar_symbol { 1 } else { 0 };
    let mut op = DiscreteOperator::from_matrix(
        a.grid,
        a.order + b.order - drop,
        m,
        Provenance::Composed,
        format!("[{}, {}]", a.name, b.name),
    )?;
    op.propagation_bound = match (a.propagation_bound, b.propagation_bound) {
        (Some(x), Some(y)) => Some(x + y),
        _ => None,
    };
    if a.multiplier.is_some() && b.multiplier.is_some() && a.grid.fiber_dim == 1 {
        op.multiplier = Some(vec![ZERO; a.grid.points()]);
    }
    Ok(op)
}

/// `(A + A*)/2`, flagged self-adjoint; `‖A − A*‖_F` is recorded as the defect.
pub fn symmetrize(a: &DiscreteOperator) -> Result<DiscreteOperator> {
    if !(a.hermitian_symbol || a.self_adjoint) {
        return Err(Error::Precondition(format!(
            "symmetrize needs an operator with Hermitian-valued symbol, `{}` is not",
            a.name
        )));
    }
    let mut op = a.clone();
    let diff = &a.matrix - &mat_adjoint(&a.matrix);
    op.symmetrization_defect = Some(frobenius(diff.view()));
    op.matrix = hermitian_part(&a.matrix);
    op.self_adjoint = true;
    op.name = format!("sym({})", a.name);
    if let Some(m) = &a.multiplier {
        let r = a.grid.fiber_dim;
        op.multiplier = Some(
            m.chunks(r * r)
                .flat_map(|c| {
                    let ad = crate::linalg::small_adjoint(c, r);
                    c.iter().zip(ad).map(|(x, y)| (x + y) * 0.5).collect::<Vec<_>>()
                })
                .collect(),
        );
    }
    Ok(op)
}

// ---------------------------------------------------------------------------
// Sobolev operator norms.

/// The operator in the unitary Fourier basis, reusable across `(s, t)` pairs.
#[derive(Debug, Clone)]
pub struct FourierView {
    pub grid: GridSpec,
    pub matrix: CMat,
    multiplier: Option<Vec<C64>>,
}

impl FourierView {
    pub fn new(a: &DiscreteOperator) -> Self {
        if let Some(m) = &a.multiplier {
            return FourierView { grid: a.grid, matrix: Array2::zeros((0, 0)), multiplier: Some(m.clone()) };
        }
        FourierView { grid: a.grid, matrix: to_fourier_basis(&a.grid, &a.matrix), multiplier: None }
    }

    /// `‖Λ^t A Λ^{−s}‖`.
    pub fn norm(&self, s: f64, t: f64) -> Result<f64> {
        self.norm_masked(s, t, None, None)
    }

    /// `‖Π Λ^t A Λ^{−s} Π‖` with `Π` the projection onto `max |m| ≤ cap`.
    pub fn norm_band(&self, s: f64, t: f64, cap: u64) -> Result<f64> {
        let mask = self.grid.band_mask(cap);
        self.norm_masked(s, t, Some(&mask), Some(&mask))
    }

    /// Norm of the weighted operator restricted to the given output/input modes.
    pub fn norm_masked(&self, s: f64, t: f64, rows: Option<&[bool]>, cols: Option<&[bool]>) -> Result<f64> {
        let g = self.grid;
        let r = g.fiber_dim;
        let wt = g.sobolev_weights(t);
        let ws = g.sobolev_weights(-s);
        if let Some(m) = &self.multiplier {
            let wd = g.sobolev_weights(t - s);
            let mut best: f64 = 0.0;
            for q in 0..g.points() {
                let keep = |mask: Option<&[bool]>| mask.is_none_or(|m| m[q * r]);
                if !(keep(rows) && keep(cols)) {
                    continue;
                }
                let blk = &m[q * r * r..(q + 1) * r * r];
                best = best.max(small_spectral_norm(blk, r) * wd[q * r]);
            }
            return Ok(best);
        }
        let ri: Vec<usize> = (0..g.state_dim()).filter(|&i| rows.is_none_or(|m| m[i])).collect();
        let ci: Vec<usize> = (0..g.state_dim()).filter(|&i| cols.is_none_or(|m| m[i])).collect();
        let mut b = Array2::zeros((ri.len(), ci.len()));
        for (ii, &i) in ri.iter().enumerate() {
            for (jj, &j) in ci.iter().enumerate() {
                b[[ii, jj]] = self.matrix[[i, j]] * (wt[i] * ws[j]);
            }
        }
        spectral_norm(b.view())
    }
}

/// `‖Λ^t A Λ^{−s}‖` over the full lattice, i.e. the `H^s → H^t` norm.
pub fn op_norm(a: &DiscreteOperator, s: f64, t: f64) -> Result<f64> {
    FourierView::new(a).norm(s, t)
}

/// [`op_norm`] restricted to the resolved band `max |m| ≤ N/3`.
pub fn op_norm_resolved(a: &DiscreteOperator, s: f64, t: f64) -> Result<f64> {
    FourierView::new(a).norm_band(s, t, a.grid.resolved_cap())
}

/// `Λ^t` as a dense operator.
pub fn lambda_operator(grid: GridSpec, t: f64) -> Result<DiscreteOperator> {
    let r = grid.fiber_dim;
    let w = grid.sobolev_weights(t);
    let mut blocks = vec![ZERO; grid.points() * r * r];
    for q in 0..grid.points() {
        for a in 0..r {
            blocks[(q * r + a) * r + a] = C64::new(w[q * r], 0.0);
        }
    }
    let mut op = fourier_multiplier(grid, t.round() as i32, blocks, format!("Λ^{t}"))?;
    op.self_adjoint = true;
    Ok(op)
}

/// Orthogonal projection onto the span of the given Fourier modes.
pub fn mode_projection(grid: GridSpec, keep: impl Fn(usize) -> bool) -> Result<DiscreteOperator> {
    let n = grid.state_dim();
    let r = grid.fiber_dim;
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        if keep(i / r) {
            d[[i, i]] = ONE;
        }
    }
    let m = from_fourier_basis(&grid, &d);
    let mut op = DiscreteOperator::from_matrix(grid, 0, m, Provenance::Smoothing, "mode projection")?;
    op.matrix = hermitian_part(&op.matrix);
    op.self_adjoint = true;
    Ok(op)
}

// ---------------------------------------------------------------------------
// Kernels and decay profiles.

/// Integral kernel `k(x, y)` with `(Au)(x) = Σ_y k(x, y) u(y) h^d`.
#[derive(Debug, Clone)]
pub struct Kernel {
    pub grid: GridSpec,
    /// Shape `(points·r, points·r)`, indexed like the operator matrix.
    pub values: CMat,
}

pub fn kernel(a: &DiscreteOperator) -> Kernel {
    let cell = a.grid.spacing().powi(a.grid.dim as i32);
    Kernel { grid: a.grid, values: a.matrix.mapv(|z| z / cell) }
}

impl Kernel {
    /// Maximum fiber-norm of the kernel per distance shell `[j h, (j+1) h)`.
    pub fn shell_maxima(&self) -> Vec<(f64, f64, f64)> {
        let g = self.grid;
        let r = g.fiber_dim;
        let h = g.spacing();
        let max_d = g.distance(0, g.flat([g.n() / 2, if g.dim == 2 { g.n() / 2 } else { 0 }]));
        let shells = (max_d / h).floor() as usize + 1;
        let mut out = vec![0.0f64; shells];
        let mut blk = vec![ZERO; r * r];
        for x in 0..g.points() {
            for y in 0..g.points() {
                for a in 0..r {
                    for b in 0..r {
                        blk[a * r + b] = self.values[[x * r + a, y * r + b]];
                    }
                }
                let v = if r == 1 { blk[0].norm() } else { small_spectral_norm(&blk, r) };
                let j = ((g.distance(x, y) / h) + 1e-9).floor() as usize;
                out[j] = out[j].max(v);
            }
        }
        out.into_iter().enumerate().map(|(j, m)| (j as f64 * h, (j + 1) as f64 * h, m)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayProfile {
    /// `(shell_lo, shell_hi, max_abs)`.
    pub shells: Vec<(f64, f64, f64)>,
    /// `(k, l, ‖A‖_{−k, l})`.
    pub norms: Vec<(f64, f64, f64)>,
}

/// Kernel shell maxima plus `‖A‖_{−k,l} = ‖Λ^l A Λ^k‖` for `k, l` in `s_list`.
pub fn decay_profile(a: &DiscreteOperator, s_list: &[f64]) -> Result<DecayProfile> {
    let view = FourierView::new(a);
    let mut norms = Vec::new();
    for &k in s_list {
        for &l in s_list {
            norms.push((k, l, view.norm(-k, l)?));
        }
    }
    Ok(DecayProfile { shells: kernel(a).shell_maxima(), norms })
}

impl DecayProfile {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("shell_lo,shell_hi,max_abs,k,l,norm\n");
        for (lo, hi, m) in &self.shells {
            let _ = writeln!(s, "{lo:.12e},{hi:.12e},{m:.12e},,,");
        }
        for (k, l, n) in &self.norms {
            let _ = writeln!(s, ",,,{k},{l},{n:.12e}");
        }
        s
    }
}

/// Restricts `A` to a block of point indices (rows `out`, columns `inp`).
pub fn block(a: &DiscreteOperator, out: &[usize], inp: &[usize]) -> CMat {
    let r = a.grid.fiber_dim;
    let mut m = Array2::zeros((out.len() * r, inp.len() * r));
    for (i, &p) in out.iter().enumerate() {
        for (j, &q) in inp.iter().enumerate() {
            m.slice_mut(s![i * r..(i + 1) * r, j * r..(j + 1) * r])
                .assign(&a.matrix.slice(s![p * r..(p + 1) * r, q * r..(q + 1) * r]));
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{fourier, GridSpec};
    use crate::linalg::{inner, max_abs, random_vector};
    use crate::symbols::Family;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn g(n: usize, l: f64) -> GridSpec {
        GridSpec::one_d(n, l).unwrap()
    }

    #[test]
    fn identity_symbol_quantizes_to_identity() {
        for gr in [g(64, 1.0), GridSpec::new(2, 8, 1.0, 2).unwrap()] {
            let op = quantize(&Symbol::identity(gr).unwrap()).unwrap();
            let err = max_abs((&op.matrix - &identity(gr.state_dim())).view());
            assert!(err < 1e-14, "{err}");
        }
    }

    #[test]
    fn xi_has_plane_wave_eigenvalues() {
        let gr = g(64, 2.0);
        let op = quantize(&Family::Dirac.build(gr).unwrap()).unwrap();
        for m in [-31i64, -5, 0, 3, 17, 32] {
            let u = Section::plane_wave(gr, [m, 0], 0);
            let v = op.apply(&u).unwrap();
            for (a, b) in v.flat().iter().zip(u.flat()) {
                assert!((a - b * (m as f64 / 2.0)).norm() < 1e-12, "mode {m}");
            }
        }
    }

    #[test]
    fn function_of_x_is_diagonal() {
        let gr = g(32, 1.0);
        let p = Family::Potential(1.0).build(gr).unwrap();
        let op = quantize(&p).unwrap();
        for i in 0..32 {
            for j in 0..32 {
                let expect = if i == j { 2.0 + gr.coords(i)[0].cos() } else { 0.0 };
                assert!((op.matrix[[i, j]] - C64::new(expect, 0.0)).norm() < 1e-14);
            }
        }
        // sup-norm oracle for multiplication operators
        assert!((op_norm(&op, 0.0, 0.0).unwrap() - 3.0).abs() < 1e-12);
        let adj = adjoint(&op);
        assert!(max_abs((&adj.matrix - &op.matrix).view()) < 1e-15);
    }

    #[test]
    fn sobolev_norm_trivia() {
        let gr = g(64, 1.0);
        let id = DiscreteOperator::identity(gr).unwrap();
        for s in [-2.0, 0.0, 1.5] {
            assert_eq!(op_norm(&id, s, s).unwrap(), 1.0);
        }
        let lap = quantize(&Family::LaplacePlusOne.build(gr).unwrap()).unwrap();
        for s in [0.0, 1.0, 2.0] {
            assert!((op_norm(&lap, s, s - 2.0).unwrap() - 1.0).abs() < 1e-14);
        }
        // dense route agrees with the multiplier fast path
        let mut dense = lap.clone();
        dense.multiplier = None;
        assert!((op_norm(&dense, 1.0, -1.0).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn multipliers_commute() {
        let gr = g(64, 1.0);
        let a = quantize(&Family::LaplacePlusOne.build(gr).unwrap()).unwrap();
        let b = quantize(&Family::Dirac.build(gr).unwrap()).unwrap();
        let c = commutator(&a, &b).unwrap();
        assert!(max_abs(c.matrix.view()) < 1e-9);
    }

    #[test]
    fn x_independent_quantization_is_exactly_circulant() {
        let gr = g(32, 1.0);
        let op = quantize(&Family::InverseBessel.build(gr).unwrap()).unwrap();
        for i in 0..32 {
            for j in 0..32 {
                assert_eq!(op.matrix[[i, j]], op.matrix[[(i + 5) % 32, (j + 5) % 32]]);
            }
        }
        assert!(op.self_adjoint);
    }

    #[test]
    fn quantize_matches_direct_sum() {
        // oracle: (Pu)(x) = Σ_m e^{ixξ} p(x, ξ) û(ξ), evaluated naively
        let gr = g(16, 1.0);
        let p = Family::Magnetic(0.7).build(gr).unwrap();
        let op = quantize(&p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let u = Section::random(gr, &mut rng);
        let uh = fourier(&u).unwrap();
        let scale = 1.0 / (gr.spacing() * 16.0).sqrt();
        let v = op.apply(&u).unwrap();
        for n in 0..16 {
            let x = gr.coords(n)[0];
            let mut acc = ZERO;
            for q in 0..16 {
                let ph = x * gr.xi(q)[0];
                acc += C64::new(ph.cos(), ph.sin()) * p.cell(n, q)[0] * uh.coeffs[[q, 0]];
            }
            assert!((acc * scale - v.flat()[n]).norm() < 1e-11);
        }
    }

    #[test]
    fn size_cap_enforced() {
        let gr = GridSpec::new(2, 128, 1.0, 1).unwrap();
        assert!(matches!(quantize(&Symbol::identity(gr).unwrap()), Err(Error::DimensionCap { .. })));
    }

    #[test]
    fn rank_one_projection_profile() {
        let gr = g(64, 1.0);
        let proj = mode_projection(gr, |q| q == 0).unwrap();
        let prof = decay_profile(&proj, &[0.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
        for (_, _, n) in &prof.norms {
            assert!((n - 1.0).abs() < 1e-12);
        }
        let first = prof.shells[0].2;
        assert!(prof.shells.iter().all(|s| (s.2 - first).abs() < 1e-12 * first));
        let csv = prof.to_csv();
        assert!(csv.starts_with("shell_lo,shell_hi,max_abs,k,l,norm\n"));
    }

    #[test]
    fn identity_kernel_is_diagonal() {
        let gr = g(32, 1.0);
        let shells = kernel(&DiscreteOperator::identity(gr).unwrap()).shell_maxima();
        assert!(shells[0].2 > 0.0);
        assert!(shells[1..].iter().all(|s| s.2 == 0.0));
    }

    #[test]
    fn gaussian_kernel_decays() {
        let gr = g(256, 4.0);
        let op = quantize(&Family::Gaussian.build(gr).unwrap()).unwrap();
        let shells = kernel(&op).shell_maxima();
        // the kernel is a periodized Gaussian of width √2 in x; resolvable until it hits roundoff
        let resolvable: Vec<f64> = shells.iter().map(|s| s.2).take_while(|&m| m > 1e-12 * shells[0].2).collect();
        assert!(resolvable.len() > 10);
        for w in resolvable[3..].windows(2) {
            assert!(w[1] < w[0]);
        }
    }

    #[test]
    fn propagation_bounds_add_under_composition() {
        let gr = g(64, 1.0);
        let a = quantize(&Family::Drift(1.0).build(gr).unwrap()).unwrap().truncate_propagation(0.5);
        let b = quantize(&Family::Schrodinger(1.0).build(gr).unwrap()).unwrap().truncate_propagation(0.3);
        a.verify_invariants().unwrap();
        let c = compose(&a, &b).unwrap();
        assert_eq!(c.propagation_bound, Some(0.8));
        c.verify_invariants().unwrap();
    }

    #[test]
    fn symmetrize_requires_hermitian_symbol() {
        let gr = g(32, 1.0);
        let p = Symbol::multiplier(gr, 0, "complex", |xi, o| o[0] = C64::new(0.0, xi[0])).unwrap();
        assert!(symmetrize(&quantize(&p).unwrap()).is_err());
        let d = quantize(&Family::VarCoef(1.0).build(gr).unwrap()).unwrap();
        let s = symmetrize(&d).unwrap();
        assert!(s.self_adjoint && s.symmetrization_defect.unwrap() > 0.0);
        s.verify_invariants().unwrap();
    }

    #[test]
    fn container_round_trip() {
        let gr = g(16, 1.0);
        let a = quantize(&Family::Drift(1.0).build(gr).unwrap()).unwrap().truncate_propagation(1.0);
        let c = Container::from_json(&a.to_container().to_json().unwrap()).unwrap();
        let b = DiscreteOperator::from_container(&c, a.name.clone()).unwrap();
        assert_eq!(b.matrix, a.matrix);
        assert_eq!(b.propagation_bound, a.propagation_bound);
        assert_eq!(b.provenance, Provenance::Quantized);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn adjoint_duality(seed in any::<u64>(), a in -1.0f64..1.0) {
            let gr = g(32, 1.0);
            let op = quantize(&Family::Magnetic(a).build(gr).unwrap()).unwrap();
            let adj = adjoint(&op);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u = random_vector(32, &mut rng).to_vec();
            let v = random_vector(32, &mut rng).to_vec();
            let lhs = inner(&op.apply_vec(&u), &v);
            let rhs = inner(&u, &adj.apply_vec(&v));
            let nrm = spectral_norm(op.matrix.view()).unwrap();
            let bound = 1e-10 * nrm * crate::linalg::vec_norm(&u) * crate::linalg::vec_norm(&v);
            prop_assert!((lhs - rhs).norm() <= bound);
        }
    }
}
