//! Sampled matrix-valued symbols `p(x, ξ)` on the grid × frequency lattice.
//!
//! Derivative conventions: `D = −i∂` in both variables. `x`-derivatives are
//! spectral (the Nyquist coefficient is dropped for odd orders), `ξ`-derivatives
//! are centered differences of spacing `1/L` along each lattice axis with
//! one-sided differences at the lattice edges.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{dft_unitary, idft_unitary, Container, GridSpec};
use crate::linalg::{small_inverse, small_matmul, small_singular_extremes, small_spectral_norm, C64, ONE, ZERO};

/// Grid caps for dense symbol storage.
pub const MAX_N_1D: usize = 4096;
pub const MAX_N_2D: usize = 128;

#[derive(Debug, Clone, PartialEq)]
pub struct Symbol {
    pub grid: GridSpec,
    pub order: i32,
    pub x_independent: bool,
    pub hermitian_valued: bool,
    /// Every sample is a multiple of the identity.
    pub scalar: bool,
    pub name: String,
    /// Layout `[x][mode][a][b]`; a single `x` slice when `x_independent`.
    samples: Vec<C64>,
}

fn check_grid(grid: &GridSpec) -> Result<()> {
    grid.validate()?;
    let cap = if grid.dim == 1 { MAX_N_1D } else { MAX_N_2D };
    if grid.n() > cap {
        return Err(Error::DimensionCap { dim: grid.n(), cap });
    }
    Ok(())
}

/// Smooth periodic coefficient `cos(ν x₁ / L)` with `ν = max(1, round(L))`,
/// which is `cos x₁` whenever `L` is an integer.
pub fn periodic_cos(grid: &GridSpec, x: [f64; 2]) -> f64 {
    let l = grid.period_scale;
    (l.round().max(1.0) * x[0] / l).cos()
}

pub fn periodic_sin(grid: &GridSpec, x: [f64; 2]) -> f64 {
    let l = grid.period_scale;
    (l.round().max(1.0) * x[0] / l).sin()
}

impl Symbol {
    fn from_samples(grid: GridSpec, order: i32, x_independent: bool, name: String, samples: Vec<C64>) -> Result<Self> {
        if let Some(i) = samples.iter().position(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::NonFinite(i));
        }
        let mut s = Symbol { grid, order, x_independent, hermitian_valued: false, scalar: false, name, samples };
        s.refresh_flags();
        Ok(s)
    }

    fn refresh_flags(&mut self) {
        let r = self.grid.fiber_dim;
        let mut herm = true;
        let mut scalar = true;
        for c in self.samples.chunks(r * r) {
            let scale = c.iter().fold(1.0f64, |m, z| m.max(z.norm()));
            for a in 0..r {
                for b in 0..r {
                    let z = c[a * r + b];
                    if (z - c[b * r + a].conj()).norm() > 1e-12 * scale {
                        herm = false;
                    }
                    if a != b && z != ZERO {
                        scalar = false;
                    }
                }
                if c[a * r + a] != c[0] {
                    scalar = false;
                }
            }
            if !herm && !scalar {
                break;
            }
        }
        self.hermitian_valued = herm;
        self.scalar = scalar;
    }

    /// Samples `f(x, ξ, out)` where `out` is the row-major `r × r` value.
    pub fn from_fn(
        grid: GridSpec,
        order: i32,
        name: impl Into<String>,
        f: impl Fn([f64; 2], [f64; 2], &mut [C64]),
    ) -> Result<Self> {
        check_grid(&grid)?;
        let (p, r) = (grid.points(), grid.fiber_dim);
        let mut samples = vec![ZERO; p * p * r * r];
        for (cell, out) in samples.chunks_mut(r * r).enumerate() {
            f(grid.coords(cell / p), grid.xi(cell % p), out);
        }
        Self::from_samples(grid, order, false, name.into(), samples)
    }

    /// `x`-independent symbol `f(ξ, out)`, stored once.
    pub fn multiplier(grid: GridSpec, order: i32, name: impl Into<String>, f: impl Fn([f64; 2], &mut [C64])) -> Result<Self> {
        check_grid(&grid)?;
        let (p, r) = (grid.points(), grid.fiber_dim);
        let mut samples = vec![ZERO; p * r * r];
        for (q, out) in samples.chunks_mut(r * r).enumerate() {
            f(grid.xi(q), out);
        }
        Self::from_samples(grid, order, true, name.into(), samples)
    }

    /// `x`-independent symbol from per-mode `r × r` blocks in DFT order.
    pub fn multiplier_from_samples(grid: GridSpec, order: i32, name: impl Into<String>, samples: Vec<C64>) -> Result<Self> {
        check_grid(&grid)?;
        let expect = grid.points() * grid.fiber_dim * grid.fiber_dim;
        if samples.len() != expect {
            return Err(Error::Shape { expected: expect.to_string(), got: samples.len().to_string() });
        }
        Self::from_samples(grid, order, true, name.into(), samples)
    }

    /// `ξ`-independent scalar symbol `f(x)·I` (a multiplication operator).
    pub fn function_of_x(grid: GridSpec, name: impl Into<String>, f: impl Fn([f64; 2]) -> f64) -> Result<Self> {
        let r = grid.fiber_dim;
        Self::from_fn(grid, 0, name, |x, _, out| {
            let v = f(x);
            for a in 0..r {
                out[a * r + a] = C64::new(v, 0.0);
            }
        })
    }

    pub fn identity(grid: GridSpec) -> Result<Self> {
        let r = grid.fiber_dim;
        Self::multiplier(grid, 0, "identity", |_, out| {
            for a in 0..r {
                out[a * r + a] = ONE;
            }
        })
    }

    pub fn zero(grid: GridSpec, order: i32) -> Result<Self> {
        Self::multiplier(grid, order, "zero", |_, _| {})
    }

    pub fn r(&self) -> usize {
        self.grid.fiber_dim
    }

    pub fn x_points(&self) -> usize {
        if self.x_independent {
            1
        } else {
            self.grid.points()
        }
    }

    /// The `r × r` sample at grid point `x` and flat mode index `q`.
    pub fn cell(&self, x: usize, q: usize) -> &[C64] {
        let r = self.r();
        let x = if self.x_independent { 0 } else { x };
        let off = (x * self.grid.points() + q) * r * r;
        &self.samples[off..off + r * r]
    }

    pub fn samples(&self) -> &[C64] {
        &self.samples
    }

    /// Full `[x][mode][a][b]` sample array, expanding `x`-independent storage.
    pub fn expanded(&self) -> Vec<C64> {
        if self.x_independent {
            self.samples.repeat(self.grid.points())
        } else {
            self.samples.clone()
        }
    }

    fn with_samples(&self, order: i32, x_independent: bool, name: String, samples: Vec<C64>) -> Self {
        let mut s = Symbol { grid: self.grid, order, x_independent, hermitian_valued: false, scalar: false, name, samples };
        s.refresh_flags();
        s
    }

    fn check_compatible(&self, other: &Symbol) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        Ok(())
    }

    fn zip_with(&self, other: &Symbol, order: i32, name: String, f: impl Fn(C64, C64) -> C64) -> Result<Symbol> {
        self.check_compatible(other)?;
        let xi = self.x_independent && other.x_independent;
        let (a, b) = if xi {
            (self.samples.clone(), other.samples.clone())
        } else {
            (self.expanded(), other.expanded())
        };
        let samples = a.iter().zip(&b).map(|(x, y)| f(*x, *y)).collect();
        Ok(self.with_samples(order, xi, name, samples))
    }

    pub fn add(&self, other: &Symbol) -> Result<Symbol> {
        self.zip_with(other, self.order.max(other.order), format!("({} + {})", self.name, other.name), |a, b| a + b)
    }

    pub fn sub(&self, other: &Symbol) -> Result<Symbol> {
        self.zip_with(other, self.order.max(other.order), format!("({} - {})", self.name, other.name), |a, b| a - b)
    }

    pub fn scale(&self, c: C64) -> Symbol {
        let samples = self.samples.iter().map(|z| z * c).collect();
        self.with_samples(self.order, self.x_independent, self.name.clone(), samples)
    }

    pub fn with_order(mut self, order: i32) -> Symbol {
        self.order = order;
        self
    }

    pub fn named(mut self, name: impl Into<String>) -> Symbol {
        self.name = name.into();
        self
    }

    /// Pointwise adjoint `p(x, ξ)*`.
    pub fn adjoint(&self) -> Symbol {
        let r = self.r();
        let mut samples = self.samples.clone();
        for c in samples.chunks_mut(r * r) {
            let orig = c.to_vec();
            for a in 0..r {
                for b in 0..r {
                    c[b * r + a] = orig[a * r + b].conj();
                }
            }
        }
        self.with_samples(self.order, self.x_independent, format!("{}*", self.name), samples)
    }

    /// Pointwise matrix product `p(x, ξ) q(x, ξ)` (the `α = 0` composition term).
    pub fn pointwise_product(&self, other: &Symbol) -> Result<Symbol> {
        self.check_compatible(other)?;
        let r = self.r();
        let xi = self.x_independent && other.x_independent;
        let xp = if xi { 1 } else { self.grid.points() };
        let p = self.grid.points();
        let mut samples = vec![ZERO; xp * p * r * r];
        for x in 0..xp {
            for q in 0..p {
                let prod = if r == 1 {
                    vec![self.cell(x, q)[0] * other.cell(x, q)[0]]
                } else {
                    small_matmul(self.cell(x, q), other.cell(x, q), r)
                };
                let off = (x * p + q) * r * r;
                samples[off..off + r * r].copy_from_slice(&prod);
            }
        }
        Ok(self.with_samples(self.order + other.order, xi, format!("{}·{}", self.name, other.name), samples))
    }

    /// `D_x^order` along `axis`, spectrally.
    pub fn dx(&self, axis: usize, order: usize) -> Result<Symbol> {
        let g = self.grid;
        if axis >= g.dim {
            return Err(Error::InvalidArgument(format!("axis {axis} out of range")));
        }
        if order >= g.n() / 2 {
            return Err(Error::UnresolvedDerivative { order, extent: g.n() });
        }
        if order == 0 {
            return Ok(self.clone());
        }
        if self.x_independent {
            return Ok(self.with_samples(self.order, true, self.name.clone(), vec![ZERO; self.samples.len()]));
        }
        let (p, r) = (g.points(), self.r());
        let rr = r * r;
        let scalar_grid = g.with_fiber(1);
        let l = g.period_scale;
        let mut factors = vec![ZERO; p];
        for (k, f) in factors.iter_mut().enumerate() {
            let ax = g.axes(k)[axis];
            let m = g.mode(ax);
            if order % 2 == 1 && ax == g.n() / 2 {
                continue;
            }
            // D_x e^{ikx} = k e^{ikx}
            *f = C64::new((m as f64 / l).powi(order as i32), 0.0);
        }
        let mut out = vec![ZERO; self.samples.len()];
        let mut buf = vec![ZERO; p];
        for q in 0..p {
            for e in 0..rr {
                for x in 0..p {
                    buf[x] = self.samples[(x * p + q) * rr + e];
                }
                dft_unitary(&scalar_grid, &mut buf);
                for (z, f) in buf.iter_mut().zip(&factors) {
                    *z *= f;
                }
                idft_unitary(&scalar_grid, &mut buf);
                for x in 0..p {
                    out[(x * p + q) * rr + e] = buf[x];
                }
            }
        }
        Ok(self.with_samples(self.order, false, self.name.clone(), out))
    }

    fn x_spectra(&self) -> Vec<Vec<C64>> {
        let g = self.grid;
        let (p, rr) = (g.points(), self.r() * self.r());
        let scalar_grid = g.with_fiber(1);
        let mut out = Vec::with_capacity(p * rr);
        for q in 0..p {
            for e in 0..rr {
                let mut buf: Vec<C64> = (0..p).map(|x| self.samples[(x * p + q) * rr + e]).collect();
                dft_unitary(&scalar_grid, &mut buf);
                out.push(buf);
            }
        }
        out
    }

    /// Largest `max_axis |k|` among x-harmonics above `rel_tol` times the largest one.
    pub fn x_harmonic_extent(&self, rel_tol: f64) -> u64 {
        if self.x_independent {
            return 0;
        }
        let g = self.grid;
        let spectra = self.x_spectra();
        let top = spectra.iter().flatten().fold(0.0f64, |m, z| m.max(z.norm()));
        let mut ext = 0;
        for s in &spectra {
            for (k, z) in s.iter().enumerate() {
                if z.norm() > rel_tol * top {
                    ext = ext.max(g.mode_sup(k));
                }
            }
        }
        ext
    }

    /// Drops x-harmonics with `max_axis |k| > cap`.
    pub fn x_band_limit(&self, cap: u64) -> Symbol {
        if self.x_independent {
            return self.clone();
        }
        let g = self.grid;
        let (p, rr) = (g.points(), self.r() * self.r());
        let scalar_grid = g.with_fiber(1);
        let mut out = vec![ZERO; self.samples.len()];
        for (i, mut buf) in self.x_spectra().into_iter().enumerate() {
            let (q, e) = (i / rr, i % rr);
            for (k, z) in buf.iter_mut().enumerate() {
                if g.mode_sup(k) > cap {
                    *z = ZERO;
                }
            }
            idft_unitary(&scalar_grid, &mut buf);
            for x in 0..p {
                out[(x * p + q) * rr + e] = buf[x];
            }
        }
        self.with_samples(self.order, false, self.name.clone(), out)
    }

    /// `∂_ξ^order` (not `D_ξ`) along `axis` by repeated centered lattice differences.
    pub fn dxi(&self, axis: usize, order: usize) -> Result<Symbol> {
        let g = self.grid;
        if axis >= g.dim {
            return Err(Error::InvalidArgument(format!("axis {axis} out of range")));
        }
        if order >= g.n() / 2 {
            return Err(Error::UnresolvedDerivative { order, extent: g.n() });
        }
        if order == 0 {
            return Ok(self.clone());
        }
        let n = g.n();
        let (p, r) = (g.points(), self.r());
        let rr = r * r;
        let inv_h = g.period_scale; // lattice spacing 1/L
        // DFT indices along the axis in increasing ξ order
        let sorted: Vec<usize> = (0..n).map(|j| g.index_of_mode(j as i64 - (n as i64 / 2 - 1))).collect();
        let mut cur = self.samples.clone();
        let xp = self.x_points();
        let mut line = vec![ZERO; n];
        let mut diff = vec![ZERO; n];
        for _ in 0..order {
            let mut next = vec![ZERO; cur.len()];
            for x in 0..xp {
                for other in 0..(p / n) {
                    for e in 0..rr {
                        let flat = |j: usize| {
                            let mut idx = [0usize; 2];
                            idx[axis] = sorted[j];
                            if g.dim == 2 {
                                idx[1 - axis] = other;
                            }
                            g.flat(idx)
                        };
                        for j in 0..n {
                            line[j] = cur[(x * p + flat(j)) * rr + e];
                        }
                        for j in 0..n {
                            diff[j] = if j == 0 {
                                (line[1] - line[0]) * inv_h
                            } else if j == n - 1 {
                                (line[n - 1] - line[n - 2]) * inv_h
                            } else {
                                (line[j + 1] - line[j - 1]) * (0.5 * inv_h)
                            };
                        }
                        for j in 0..n {
                            next[(x * p + flat(j)) * rr + e] = diff[j];
                        }
                    }
                }
            }
            cur = next;
        }
        Ok(self.with_samples(self.order - order as i32, self.x_independent, self.name.clone(), cur))
    }

    pub fn max_abs(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |m, z| m.max(z.norm()))
    }

    pub fn to_container(&self) -> Container {
        let (xp, p, r) = (self.x_points(), self.grid.points(), self.r());
        let mut c = Container::pack(&self.grid, vec![xp, p, r, r], self.samples.iter().cloned());
        c.k = Some(self.order);
        if self.x_independent {
            c.flags.push("x_independent".into());
        }
        if self.hermitian_valued {
            c.flags.push("hermitian_valued".into());
        }
        if self.scalar {
            c.flags.push("scalar".into());
        }
        c
    }

    pub fn from_container(c: &Container, name: impl Into<String>) -> Result<Self> {
        let g = c.grid()?;
        check_grid(&g)?;
        let xi = c.flags.iter().any(|f| f == "x_independent");
        let xp = if xi { 1 } else { g.points() };
        let expect = vec![xp, g.points(), g.fiber_dim, g.fiber_dim];
        if c.shape != expect {
            return Err(Error::Shape { expected: format!("{expect:?}"), got: format!("{:?}", c.shape) });
        }
        let k = c.k.ok_or_else(|| Error::InvalidArgument("symbol container needs an order k".into()))?;
        Self::from_samples(g, k, xi, name.into(), c.values())
    }
}

// ---------------------------------------------------------------------------

/// All multi-indices on `dim` axes with total order `≤ max`.
pub fn multi_indices(dim: usize, max: usize) -> Vec<[usize; 2]> {
    let mut out = Vec::new();
    for total in 0..=max {
        if dim == 1 {
            out.push([total, 0]);
        } else {
            for a in (0..=total).rev() {
                out.push([a, total - a]);
            }
        }
    }
    out
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateEntry {
    pub alpha: [usize; 2],
    pub beta: [usize; 2],
    pub constant: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymbolEstimateReport {
    pub alpha_max: usize,
    pub beta_max: usize,
    pub order_used: i32,
    pub constants: Vec<EstimateEntry>,
}

impl SymbolEstimateReport {
    pub fn get(&self, alpha: [usize; 2], beta: [usize; 2]) -> Option<f64> {
        self.constants.iter().find(|e| e.alpha == alpha && e.beta == beta).map(|e| e.constant)
    }

    /// `max_{|α| ≤ K} C^{α0}`.
    pub fn max_alpha_zero(&self, k: usize) -> f64 {
        self.constants
            .iter()
            .filter(|e| e.beta == [0, 0] && e.alpha[0] + e.alpha[1] <= k)
            .fold(0.0, |m, e| m.max(e.constant))
    }
}

/// `C^{αβ} = max_{x,ξ} ‖D_x^α D_ξ^β p‖ / (1+|ξ|)^{k−|β|}`.
pub fn estimate_constants(p: &Symbol, alpha_max: usize, beta_max: usize) -> Result<SymbolEstimateReport> {
    let g = p.grid;
    if beta_max >= g.n() / 2 {
        return Err(Error::UnresolvedDerivative { order: beta_max, extent: g.n() });
    }
    if alpha_max >= g.n() / 2 {
        return Err(Error::UnresolvedDerivative { order: alpha_max, extent: g.n() });
    }
    let r = p.r();
    let mut constants = Vec::new();
    for alpha in multi_indices(g.dim, alpha_max) {
        let mut da = p.clone();
        for ax in 0..g.dim {
            da = da.dx(ax, alpha[ax])?;
        }
        for beta in multi_indices(g.dim, beta_max) {
            let mut d = da.clone();
            for ax in 0..g.dim {
                d = d.dxi(ax, beta[ax])?;
            }
            let expo = p.order as f64 - (beta[0] + beta[1]) as f64;
            let mut c: f64 = 0.0;
            for x in 0..d.x_points() {
                for q in 0..g.points() {
                    let norm = small_spectral_norm(d.cell(x, q), r);
                    if norm > 0.0 {
                        c = c.max(norm / (1.0 + g.xi_norm_sq(q).sqrt()).powf(expo));
                    }
                }
            }
            constants.push(EstimateEntry { alpha, beta, constant: c });
        }
    }
    Ok(SymbolEstimateReport { alpha_max, beta_max, order_used: p.order, constants })
}

// ---------------------------------------------------------------------------

/// Condition-number guard for numerical invertibility.
pub const EPS_GUARD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipticityCertificate {
    /// `R = 0` certifies the whole lattice including `ξ = 0`; `R > 0` covers `|ξ| > R`.
    pub radius: f64,
    pub inverse_bound: f64,
    pub ok: bool,
    pub order: i32,
    /// Worst cell `(x index, mode index)` when not ok.
    pub worst_cell: Option<(usize, usize)>,
    pub diagnostic: String,
}

/// Candidate radii `0, 1, 2, 4, …` below the maximal lattice frequency.
pub fn candidate_radii(grid: &GridSpec) -> Vec<f64> {
    let mut out = vec![0.0];
    let mut r = 1.0;
    while r < grid.max_frequency() {
        out.push(r);
        r *= 2.0;
    }
    out
}

pub fn check_elliptic(p: &Symbol) -> EllipticityCertificate {
    let g = p.grid;
    let r = p.r();
    // per cell: |ξ|, invertible?, scaled inverse norm
    let mut worst_bad: Option<(f64, usize, usize, f64)> = None; // (|ξ|, x, q, σmin)
    let mut cells: Vec<(f64, f64)> = Vec::with_capacity(g.points()); // (|ξ|, sup over x of scaled inverse)
    for q in 0..g.points() {
        let xin = g.xi_norm_sq(q).sqrt();
        let weight = (1.0 + xin).powi(p.order);
        let mut sup: f64 = 0.0;
        for x in 0..p.x_points() {
            let (smax, smin) = small_singular_extremes(p.cell(x, q), r);
            let good = smin > 0.0 && smax / smin < 1.0 / EPS_GUARD;
            if good {
                sup = sup.max(weight / smin);
            } else {
                sup = f64::INFINITY;
                if worst_bad.is_none_or(|w| xin > w.0) {
                    worst_bad = Some((xin, x, q, smin));
                }
            }
        }
        cells.push((xin, sup));
    }
    let xi_max = cells.iter().fold(0.0f64, |m, c| m.max(c.0));
    for radius in candidate_radii(&g) {
        let covered = |xin: f64| radius == 0.0 || xin > radius;
        if !cells.iter().any(|c| covered(c.0)) {
            continue;
        }
        let bound = cells.iter().filter(|c| covered(c.0)).fold(0.0f64, |m, c| m.max(c.1));
        if bound.is_finite() {
            return EllipticityCertificate {
                radius,
                inverse_bound: bound,
                ok: true,
                order: p.order,
                worst_cell: None,
                diagnostic: String::new(),
            };
        }
    }
    let (xin, x, q, smin) = worst_bad.unwrap_or((xi_max, 0, 0, 0.0));
    EllipticityCertificate {
        radius: f64::NAN,
        inverse_bound: f64::INFINITY,
        ok: false,
        order: p.order,
        worst_cell: Some((x, q)),
        diagnostic: format!(
            "singular sample at x index {x}, ξ = {:?} (|ξ| = {xin}, σ_min = {smin:e}) with no admissible radius",
            g.xi(q)
        ),
    }
}

/// Quintic smoothstep `6t⁵ − 15t⁴ + 10t³` on `[0, 1]`.
pub fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * t * (t * (6.0 * t - 15.0) + 10.0)
}

/// Excision profile: 0 for `|ξ| ≤ R` (when `R > 0`), 1 for `|ξ| ≥ R + w`.
pub fn excision(xi_norm: f64, radius: f64, width: f64) -> f64 {
    if width <= 0.0 {
        if radius == 0.0 || xi_norm > radius {
            1.0
        } else {
            0.0
        }
    } else {
        smoothstep((xi_norm - radius) / width)
    }
}

/// `χ_ex(ξ) p(x, ξ)^{-1}`, declared order `−k`.
pub fn invert_principal(p: &Symbol, cert: &EllipticityCertificate, excision_width: f64) -> Result<Symbol> {
    if !cert.ok {
        return Err(Error::NotElliptic(cert.diagnostic.clone()));
    }
    let g = p.grid;
    let r = p.r();
    let pts = g.points();
    let mut samples = vec![ZERO; p.x_points() * pts * r * r];
    for x in 0..p.x_points() {
        for q in 0..pts {
            let chi = excision(g.xi_norm_sq(q).sqrt(), cert.radius, excision_width);
            if chi == 0.0 {
                continue;
            }
            let inv = small_inverse(p.cell(x, q), r).ok_or_else(|| {
                Error::NotElliptic(format!("sample at x index {x}, mode {q} is singular inside the certified range"))
            })?;
            let off = (x * pts + q) * r * r;
            for (o, v) in samples[off..off + r * r].iter_mut().zip(inv) {
                *o = v * chi;
            }
        }
    }
    Ok(p.with_samples(-p.order, p.x_independent, format!("inv({})", p.name), samples))
}

/// `Σ_{|α| ≤ J} (1/α!) ∂_ξ^α p · D_x^α q`, i.e. `Σ (i^{|α|}/α!) D_ξ^α p · D_x^α q`.
pub fn compose_symbols(p: &Symbol, q: &Symbol, j: usize) -> Result<Symbol> {
    p.check_compatible(q)?;
    let g = p.grid;
    if j >= g.n() / 2 {
        return Err(Error::UnresolvedDerivative { order: j, extent: g.n() });
    }
    let mut acc = p.pointwise_product(q)?;
    if !q.x_independent {
        for alpha in multi_indices(g.dim, j).into_iter().skip(1) {
            let mut dp = p.clone();
            let mut dq = q.clone();
            for ax in 0..g.dim {
                dp = dp.dxi(ax, alpha[ax])?;
                dq = dq.dx(ax, alpha[ax])?;
            }
            let c = 1.0 / (factorial(alpha[0]) * factorial(alpha[1]));
            let term = dp.pointwise_product(&dq)?.scale(C64::new(c, 0.0));
            acc = acc.add(&term)?;
        }
    }
    acc.order = p.order + q.order;
    acc.name = format!("{}∘{}", p.name, q.name);
    Ok(acc)
}

// ---------------------------------------------------------------------------

/// Closed-form symbol families addressable by name.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Family {
    Identity,
    Zero,
    /// `1 + |ξ|²`
    LaplacePlusOne,
    /// `ξ₁`
    Dirac,
    /// `(2 + a cos x)ξ₁`
    Drift(f64),
    /// `(ξ₁ − b sin x)² + |ξ₂|² + 1`
    Magnetic(f64),
    /// `|ξ|² + 2 + a cos x`
    Schrodinger(f64),
    /// `(2 + a cos x)|ξ|² + 1`
    VarCoef(f64),
    /// `2 + a cos x` (order 0 multiplication)
    Potential(f64),
    /// `e^{−|ξ|²}` (declared order 0)
    Gaussian,
    /// `(1 + |ξ|²)^{s/2}`
    Bessel(i32),
    /// `(1 + |ξ|²)^{-1/2}`
    InverseBessel,
    /// `(2 + a cos x)(1 + |ξ|²)^{1/2}`
    SqrtDrift(f64),
    /// `(2 + a cos x)(1 + |ξ|²)^{-1/2}`
    WeightedInverseBessel(f64),
    /// `(2 + a cos x) ξ₁ (1 + |ξ|²)^{-1/2}`
    SignDrift(f64),
    /// `(2 + a cos x + |ξ|²)^{-1}`
    Resolvent(f64),
    /// `ξ₁²`, not elliptic in two dimensions
    Xi1Squared,
    /// `ξ₁ σ_x` on a 2-dimensional fiber
    GradedDirac,
    /// `ξ₁ σ_x + m σ_y` on a 2-dimensional fiber
    GappedDirac(f64),
}

impl Family {
    pub fn order(&self) -> i32 {
        match self {
            Family::Identity | Family::Zero | Family::Potential(_) | Family::Gaussian => 0,
            Family::Dirac | Family::Drift(_) | Family::GradedDirac | Family::GappedDirac(_) => 1,
            Family::InverseBessel => -1,
            Family::SqrtDrift(_) => 1,
            Family::WeightedInverseBessel(_) => -1,
            Family::SignDrift(_) => 0,
            Family::Resolvent(_) => -2,
            Family::Bessel(s) => *s,
            _ => 2,
        }
    }

    pub fn fiber_dim(&self) -> usize {
        match self {
            Family::GradedDirac | Family::GappedDirac(_) => 2,
            _ => 1,
        }
    }

    pub fn x_independent(&self) -> bool {
        match *self {
            Family::Drift(a)
            | Family::Magnetic(a)
            | Family::Schrodinger(a)
            | Family::VarCoef(a)
            | Family::Potential(a)
            | Family::SqrtDrift(a)
            | Family::WeightedInverseBessel(a)
            | Family::SignDrift(a)
            | Family::Resolvent(a) => a == 0.0,
            _ => true,
        }
    }

    pub fn build(&self, grid: GridSpec) -> Result<Symbol> {
        let grid = grid.with_fiber(self.fiber_dim());
        let k = self.order();
        let name = self.to_string();
        let g = grid;
        let sq = |xi: [f64; 2]| xi[0] * xi[0] + xi[1] * xi[1];
        let re = |v: f64| C64::new(v, 0.0);
        match *self {
            Family::Identity => Symbol::identity(grid),
            Family::Zero => Symbol::zero(grid, 0),
            Family::LaplacePlusOne => Symbol::multiplier(grid, k, name, |xi, o| o[0] = re(1.0 + sq(xi))),
            Family::Dirac => Symbol::multiplier(grid, k, name, |xi, o| o[0] = re(xi[0])),
            Family::Gaussian => Symbol::multiplier(grid, k, name, |xi, o| o[0] = re((-sq(xi)).exp())),
            Family::Bessel(s) => {
                Symbol::multiplier(grid, k, name, |xi, o| o[0] = re((1.0 + sq(xi)).powf(s as f64 / 2.0)))
            }
            Family::InverseBessel => Symbol::multiplier(grid, k, name, |xi, o| o[0] = re((1.0 + sq(xi)).powf(-0.5))),
            Family::Xi1Squared => Symbol::multiplier(grid, k, name, |xi, o| o[0] = re(xi[0] * xi[0])),
            Family::GradedDirac => Symbol::multiplier(grid, k, name, |xi, o| {
                o[1] = re(xi[0]);
                o[2] = re(xi[0]);
            }),
            Family::GappedDirac(m) => Symbol::multiplier(grid, k, name, |xi, o| {
                o[1] = C64::new(xi[0], -m);
                o[2] = C64::new(xi[0], m);
            }),
            Family::Potential(a) if a != 0.0 => Symbol::function_of_x(grid, name, |x| 2.0 + a * periodic_cos(&g, x)),
            _ => {
                let f: Box<dyn Fn([f64; 2], [f64; 2], &mut [C64])> = match *self {
                    Family::Drift(a) => Box::new(move |x, xi, o| o[0] = re((2.0 + a * periodic_cos(&g, x)) * xi[0])),
                    Family::Magnetic(b) => Box::new(move |x, xi, o| {
                        let s = xi[0] - b * periodic_sin(&g, x);
                        o[0] = re(s * s + xi[1] * xi[1] + 1.0)
                    }),
                    Family::Schrodinger(a) => Box::new(move |x, xi, o| o[0] = re(sq(xi) + 2.0 + a * periodic_cos(&g, x))),
                    Family::VarCoef(a) => {
                        Box::new(move |x, xi, o| o[0] = re((2.0 + a * periodic_cos(&g, x)) * sq(xi) + 1.0))
                    }
                    Family::Potential(_) => Box::new(move |_, _, o| o[0] = re(2.0)),
                    Family::WeightedInverseBessel(a) => Box::new(move |x, xi, o| {
                        o[0] = re((2.0 + a * periodic_cos(&g, x)) / (1.0 + sq(xi)).sqrt())
                    }),
                    Family::SqrtDrift(a) => Box::new(move |x, xi, o| {
                        o[0] = re((2.0 + a * periodic_cos(&g, x)) * (1.0 + sq(xi)).sqrt())
                    }),
                    Family::SignDrift(a) => Box::new(move |x, xi, o| {
                        o[0] = re((2.0 + a * periodic_cos(&g, x)) * xi[0] / (1.0 + sq(xi)).sqrt())
                    }),
                    Family::Resolvent(a) => {
                        Box::new(move |x, xi, o| o[0] = re(1.0 / (2.0 + a * periodic_cos(&g, x) + sq(xi))))
                    }
                    _ => unreachable!("x-independent families are handled above"),
                };
                // a zero coefficient leaves a Fourier multiplier
                if self.x_independent() {
                    Symbol::multiplier(grid, k, name, |xi, o| f([0.0; 2], xi, o))
                } else {
                    Symbol::from_fn(grid, k, name, f)
                }
            }
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Family::Identity => write!(f, "identity"),
            Family::Zero => write!(f, "zero"),
            Family::LaplacePlusOne => write!(f, "laplace+1"),
            Family::Dirac => write!(f, "dirac"),
            Family::Drift(a) => write!(f, "drift({a})"),
            Family::Magnetic(b) => write!(f, "magnetic({b})"),
            Family::Schrodinger(a) => write!(f, "schrodinger({a})"),
            Family::VarCoef(a) => write!(f, "varcoef({a})"),
            Family::Potential(a) => write!(f, "potential({a})"),
            Family::Gaussian => write!(f, "gaussian"),
            Family::Bessel(s) => write!(f, "bessel({s})"),
            Family::InverseBessel => write!(f, "inverse-bessel"),
            Family::SqrtDrift(a) => write!(f, "sqrt-drift({a})"),
            Family::WeightedInverseBessel(a) => write!(f, "weighted-inverse-bessel({a})"),
            Family::SignDrift(a) => write!(f, "sign-drift({a})"),
            Family::Resolvent(a) => write!(f, "resolvent({a})"),
            Family::Xi1Squared => write!(f, "xi1^2"),
            Family::GradedDirac => write!(f, "graded-dirac"),
            Family::GappedDirac(m) => write!(f, "gapped-dirac({m})"),
        }
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (head, arg) = match s.find('(') {
            Some(i) if s.ends_with(')') => (&s[..i], Some(&s[i + 1..s.len() - 1])),
            _ => (s, None),
        };
        let num = || -> Result<f64> {
            arg.ok_or_else(|| Error::InvalidArgument(format!("symbol family `{head}` needs a parameter")))?
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::InvalidArgument(format!("bad parameter in `{s}`: {e}")))
        };
        let none = |fam: Family| -> Result<Family> {
            match arg {
                None => Ok(fam),
                Some(_) => Err(Error::InvalidArgument(format!("symbol family `{head}` takes no parameter"))),
            }
        };
        match head {
            "identity" => none(Family::Identity),
            "zero" => none(Family::Zero),
            "laplace+1" => none(Family::LaplacePlusOne),
            "dirac" => none(Family::Dirac),
            "gaussian" => none(Family::Gaussian),
            "inverse-bessel" => none(Family::InverseBessel),
            "xi1^2" => none(Family::Xi1Squared),
            "graded-dirac" => none(Family::GradedDirac),
            "drift" => Ok(Family::Drift(num()?)),
            "magnetic" => Ok(Family::Magnetic(num()?)),
            "schrodinger" => Ok(Family::Schrodinger(num()?)),
            "varcoef" => Ok(Family::VarCoef(num()?)),
            "potential" => Ok(Family::Potential(num()?)),
            "gapped-dirac" => Ok(Family::GappedDirac(num()?)),
            "sqrt-drift" => Ok(Family::SqrtDrift(num()?)),
            "weighted-inverse-bessel" => Ok(Family::WeightedInverseBessel(num()?)),
            "sign-drift" => Ok(Family::SignDrift(num()?)),
            "resolvent" => Ok(Family::Resolvent(num()?)),
            "bessel" => {
                let v = num()?;
                if v.fract() != 0.0 {
                    return Err(Error::InvalidArgument(format!("bessel order must be an integer, got {v}")));
                }
                Ok(Family::Bessel(v as i32))
            }
            _ => Err(Error::InvalidArgument(format!("unknown symbol family `{s}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn g(n: usize, l: f64) -> GridSpec {
        GridSpec::one_d(n, l).unwrap()
    }

    /// Dense max-scan oracle for `(2 + cos x)|ξ| / (1 + |ξ|)`.
    fn drift_c00_oracle(n: usize, l: f64) -> f64 {
        let h = 2.0 * std::f64::consts::PI * l / n as f64;
        let mut m: f64 = 0.0;
        for i in 0..n {
            let x = i as f64 * h;
            for k in -(n as i64) / 2 + 1..=(n as i64) / 2 {
                let xi = k as f64 / l;
                m = m.max((2.0 + x.cos()) * xi.abs() / (1.0 + xi.abs()));
            }
        }
        m
    }

    #[test]
    fn identity_constants() {
        let p = Symbol::identity(g(64, 1.0)).unwrap();
        let rep = estimate_constants(&p, 2, 2).unwrap();
        for e in &rep.constants {
            let expect = if e.alpha == [0, 0] && e.beta == [0, 0] { 1.0 } else { 0.0 };
            assert_eq!(e.constant, expect, "{e:?}");
        }
    }

    #[test]
    fn laplace_constants() {
        let p = Family::LaplacePlusOne.build(g(128, 1.0)).unwrap();
        let rep = estimate_constants(&p, 2, 0).unwrap();
        assert_eq!(rep.get([0, 0], [0, 0]), Some(1.0));
        assert_eq!(rep.get([1, 0], [0, 0]), Some(0.0));
        assert_eq!(rep.get([2, 0], [0, 0]), Some(0.0));
    }

    #[test]
    fn drift_c00_matches_scan_and_tends_to_three() {
        for (n, l) in [(128, 1.0), (256, 1.0), (512, 2.0)] {
            let p = Family::Drift(1.0).build(g(n, l)).unwrap();
            let c = estimate_constants(&p, 0, 0).unwrap().get([0, 0], [0, 0]).unwrap();
            let o = drift_c00_oracle(n, l);
            assert!((c - o).abs() < 1e-12 * o, "{c} vs {o}");
        }
        let p = Family::Drift(1.0).build(g(2048, 1.0)).unwrap();
        let c = estimate_constants(&p, 0, 0).unwrap().get([0, 0], [0, 0]).unwrap();
        assert!((c - 3.0).abs() < 3.0 / 1000.0);
    }

    #[test]
    fn spectral_x_derivative_of_cosine() {
        // D_x (2 + cos x) = i sin x
        let gr = g(64, 1.0);
        let p = Family::Potential(1.0).build(gr).unwrap();
        let d = p.dx(0, 1).unwrap();
        for x in 0..64 {
            let xv = gr.coords(x)[0];
            assert!((d.cell(x, 5)[0] - C64::new(0.0, xv.sin())).norm() < 1e-12);
        }
    }

    #[test]
    fn estimates_stable_under_refinement() {
        for fam in [Family::Drift(1.0), Family::Schrodinger(1.0), Family::VarCoef(0.5), Family::Magnetic(0.5)] {
            let a = estimate_constants(&fam.build(g(256, 1.0)).unwrap(), 2, 2).unwrap();
            let b = estimate_constants(&fam.build(g(512, 1.0)).unwrap(), 2, 2).unwrap();
            // entries that vanish analytically sit at the rounding floor
            let floor = 1e-6 * a.constants.iter().fold(0.0f64, |m, e| m.max(e.constant));
            for (x, y) in a.constants.iter().zip(&b.constants) {
                let scale = x.constant.max(y.constant);
                assert!((x.constant - y.constant).abs() <= 0.05 * scale + floor, "{fam}: {x:?} vs {y:?}");
            }
        }
    }

    #[test]
    fn beta_beyond_lattice_rejected() {
        let p = Symbol::identity(g(8, 1.0)).unwrap();
        assert!(matches!(estimate_constants(&p, 0, 4), Err(Error::UnresolvedDerivative { .. })));
        assert!(compose_symbols(&p, &p, 4).is_err());
    }

    #[test]
    fn elliptic_certificates() {
        let gr = g(64, 1.0);
        let lap = Family::LaplacePlusOne.build(gr).unwrap();
        let c = check_elliptic(&lap);
        assert!(c.ok && c.radius == 0.0 && c.inverse_bound <= 4.0, "{c:?}");
        let xi = Family::Dirac.build(gr).unwrap();
        let c = check_elliptic(&xi);
        assert!(c.ok && c.radius >= 1.0, "{c:?}");
        let z = Symbol::zero(gr, 0).unwrap();
        let c = check_elliptic(&z);
        assert!(!c.ok && c.worst_cell.is_some());
        assert!(invert_principal(&z, &c, 1.0).is_err());
        let gd = Family::GradedDirac.build(gr).unwrap();
        assert!(check_elliptic(&gd).ok);
    }

    #[test]
    fn non_elliptic_in_two_dimensions() {
        let p = Family::Xi1Squared.build(GridSpec::new(2, 16, 1.0, 1).unwrap()).unwrap();
        assert!(!check_elliptic(&p).ok);
    }

    #[test]
    fn laplace_inverse_is_reciprocal_off_excision() {
        let gr = g(64, 1.0);
        let p = Family::LaplacePlusOne.build(gr).unwrap();
        let cert = check_elliptic(&p);
        let w = 2.0;
        let q = invert_principal(&p, &cert, w).unwrap();
        assert_eq!(q.order, -2);
        let pq = p.pointwise_product(&q).unwrap();
        for m in 0..64 {
            let xin = gr.xi_norm_sq(m).sqrt();
            if xin >= w {
                assert!((pq.cell(0, m)[0] - ONE).norm() <= 2e-16, "{m}");
            }
        }
        assert_eq!(q.cell(0, 0)[0], ZERO);
        // no excision at all when R = 0 and w = 0
        let q0 = invert_principal(&p, &cert, 0.0).unwrap();
        assert!((q0.cell(0, 0)[0] - ONE).norm() == 0.0);
    }

    #[test]
    fn matrix_inverse_is_entrywise_for_diagonal() {
        let gr = g(32, 1.0).with_fiber(2);
        let p = Symbol::multiplier(gr, 2, "diag", |xi, o| {
            o[0] = C64::new(1.0 + xi[0] * xi[0], 0.0);
            o[3] = C64::new(2.0 + xi[0] * xi[0], 0.0);
        })
        .unwrap();
        let q = invert_principal(&p, &check_elliptic(&p), 0.0).unwrap();
        for m in 0..32 {
            let x2 = gr.xi_norm_sq(m);
            let c = q.cell(0, m);
            assert!((c[0].re - 1.0 / (1.0 + x2)).abs() < 1e-15 && (c[3].re - 1.0 / (2.0 + x2)).abs() < 1e-15);
            assert_eq!(c[1], ZERO);
        }
        let rep = estimate_constants(&q, 0, 2).unwrap();
        assert!(rep.constants.iter().all(|e| e.constant.is_finite()));
    }

    #[test]
    fn composition_trivial_cases() {
        let gr = g(64, 1.0);
        let p = Family::Drift(1.0).build(gr).unwrap();
        let q = Family::LaplacePlusOne.build(gr).unwrap();
        let pq = compose_symbols(&p, &q, 3).unwrap();
        assert_eq!(pq.expanded(), p.pointwise_product(&q).unwrap().expanded());
        assert_eq!(pq.order, 3);
        let one = Symbol::identity(gr).unwrap();
        for j in 0..3 {
            assert_eq!(compose_symbols(&one, &p, j).unwrap().expanded(), p.expanded());
        }
    }

    #[test]
    fn composition_first_order_term() {
        // ξ ∘ f(x) = ξ f + D_x f = ξ f − i f'
        let gr = g(64, 1.0);
        let xi = Family::Dirac.build(gr).unwrap();
        let f = Family::Potential(1.0).build(gr).unwrap();
        let c = compose_symbols(&xi, &f, 1).unwrap();
        for x in [0, 7, 33] {
            let xv = gr.coords(x)[0];
            for q in [1, 5, 60] {
                // interior lattice points: centered difference of ξ is exactly 1
                let expect = C64::new(gr.xi(q)[0] * (2.0 + xv.cos()), xv.sin());
                assert!((c.cell(x, q)[0] - expect).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn commutator_leading_term_cancels_for_scalars() {
        let gr = g(64, 1.0);
        let p = Family::Schrodinger(1.0).build(gr).unwrap();
        let q = Family::Drift(0.5).build(gr).unwrap();
        let a = p.pointwise_product(&q).unwrap();
        let b = q.pointwise_product(&p).unwrap();
        assert_eq!(a.sub(&b).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn family_names_round_trip() {
        for f in [
            Family::LaplacePlusOne,
            Family::Drift(0.5),
            Family::Magnetic(1.0),
            Family::Bessel(-2),
            Family::GappedDirac(0.5),
            Family::Xi1Squared,
        ] {
            assert_eq!(f.to_string().parse::<Family>().unwrap(), f);
        }
        assert!("drift".parse::<Family>().is_err());
        assert!("nonsense(1)".parse::<Family>().is_err());
    }

    #[test]
    fn container_round_trip() {
        let p = Family::Magnetic(0.5).build(g(16, 1.0)).unwrap();
        let c = p.to_container();
        let back = Symbol::from_container(&Container::from_json(&c.to_json().unwrap()).unwrap(), p.name.clone()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn flags() {
        let gd = Family::GradedDirac.build(g(16, 1.0)).unwrap();
        assert!(gd.hermitian_valued && !gd.scalar && gd.x_independent);
        let gap = Family::GappedDirac(0.5).build(g(16, 1.0)).unwrap();
        assert!(gap.hermitian_valued);
        let d = Family::Drift(1.0).build(g(16, 1.0)).unwrap();
        assert!(d.scalar && d.hermitian_valued && !d.x_independent);
        let r0 = Family::Resolvent(0.0).build(g(16, 1.0)).unwrap();
        assert!(r0.x_independent && Family::Resolvent(0.0).x_independent());
    }

    #[test]
    fn x_harmonics() {
        let gr = g(32, 1.0);
        let d = Family::Drift(1.0).build(gr).unwrap();
        assert_eq!(d.x_harmonic_extent(1e-12), 1);
        // sin² doubles the frequency
        assert_eq!(Family::Magnetic(0.5).build(gr).unwrap().x_harmonic_extent(1e-12), 2);
        let mean = d.x_band_limit(0);
        let want = Family::Drift(0.0).build(gr).unwrap();
        let err = mean.samples.iter().zip(&want.samples).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-12, "{err}");
        assert_eq!(d.x_band_limit(1).samples.len(), d.samples.len());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn principal_product_is_associative(a in -1.0f64..1.0, b in -1.0f64..1.0) {
            let gr = g(32, 1.0);
            let p = Family::Drift(a).build(gr).unwrap();
            let q = Family::Magnetic(b).build(gr).unwrap();
            let s = Family::VarCoef(0.5).build(gr).unwrap();
            let l = p.pointwise_product(&q).unwrap().pointwise_product(&s).unwrap();
            let r = p.pointwise_product(&q.pointwise_product(&s).unwrap()).unwrap();
            for (x, y) in l.expanded().iter().zip(r.expanded()) {
                prop_assert!((x - y).norm() <= 1e-14 * x.norm());
            }
        }

        #[test]
        fn composed_order_is_sum(j in 0usize..3) {
            let gr = g(64, 1.0);
            let p = Family::Drift(1.0).build(gr).unwrap();
            let q = Family::Schrodinger(1.0).build(gr).unwrap();
            let c = compose_symbols(&p, &q, j).unwrap();
            prop_assert_eq!(c.order, 3);
            let rep = estimate_constants(&c, 0, 0).unwrap();
            // decay at the declared order: bounded ratio
            prop_assert!(rep.get([0, 0], [0, 0]).unwrap() < 20.0);
        }
    }
}
