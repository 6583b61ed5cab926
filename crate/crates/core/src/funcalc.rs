//! Functions of self-adjoint discrete operators.
//!
//! The eigendecomposition route ([`spectral_apply`]) is the reference. The
//! Fourier-integral and resolvent-integral routes evaluate their quadrature sums
//! in the eigenbasis of `P`, where `e^{itP}` and `(a + P²)^{-1}` are diagonal, and
//! report their defect against the reference.

use std::fmt;
use std::num::NonZeroUsize;
use std::str::FromStr;

use gauss_quad::GaussLegendre;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::GridSpec;
use crate::linalg::{adjoint as mat_adjoint, eigh, hermitian_part, max_abs, spectral_norm, CMat, C64, I, ONE, ZERO};
use crate::parametrix::ParametrixResult;
use crate::quantize::{compose, fourier_multiplier, op_norm, scale, sub, DiscreteOperator, Provenance};

/// Declared order of `f(P)` for Schwartz `f`; stands in for `−∞`.
pub const SMOOTHING_ORDER: i32 = -(1 << 16);

fn gl(n: usize) -> GaussLegendre {
    GaussLegendre::new(NonZeroUsize::new(n).unwrap())
}

/// Composite 16-point Gauss–Legendre on `[a, b]` with `panels` equal panels.
pub fn integrate(a: f64, b: f64, panels: usize, f: impl Fn(f64) -> f64) -> f64 {
    let rule = gl(16);
    let w = (b - a) / panels.max(1) as f64;
    (0..panels.max(1)).map(|i| rule.integrate(a + i as f64 * w, a + (i + 1) as f64 * w, &f)).sum()
}

/// Modified Bessel function `K_1(z)`, `z > 0`, from `∫_0^∞ e^{−z cosh t} cosh t dt`.
pub fn bessel_k1(z: f64) -> f64 {
    let t_max = (750.0 / z).max(1.0 + 1e-12).acosh();
    integrate(0.0, t_max, 64, |t| (-z * t.cosh()).exp() * t.cosh())
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScalarFunction {
    /// `e^{−x²/(2σ²)}`.
    Gaussian { sigma: f64 },
    /// `x/√(1+x²)`.
    ChiRational,
    /// `tanh(x/c)`.
    Tanh { scale: f64 },
    /// `ψ' = (2a/π) sinc²(ax)`, so `ψ̂'` is a triangle supported in `[−2a, 2a]`.
    Fejer { a: f64 },
    /// Odd quintic ramp from −1 to 1 across `[−g, g]`, `sign(x)` outside.
    SignGap { gap: f64 },
    /// `exp(1 − 1/(1 − t²))` on `(a, b)` with `t` the affine coordinate to `(−1, 1)`.
    SchwartzBump { a: f64, b: f64 },
    /// `(1 + x²)^{s/2}`.
    Bracket { s: f64 },
    Identity,
    Constant { c: f64 },
    /// Indicator of `[a, b)`.
    Indicator { a: f64, b: f64 },
    /// Piecewise linear through the samples, constant outside.
    Sampled { xs: Vec<f64>, ys: Vec<f64> },
}

fn sinc(y: f64) -> f64 {
    if y.abs() < 1e-4 {
        1.0 - y * y / 6.0
    } else {
        y.sin() / y
    }
}

/// `Si(x) = ∫_0^x sin t / t dt`.
fn sine_integral(x: f64) -> f64 {
    if x < 0.0 {
        return -sine_integral(-x);
    }
    integrate(0.0, x, (x / 2.0).ceil().max(1.0) as usize, sinc)
}

fn smoothstep(t: f64) -> f64 {
    crate::symbols::smoothstep(t)
}

impl ScalarFunction {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            ScalarFunction::Gaussian { sigma } => (-x * x / (2.0 * sigma * sigma)).exp(),
            ScalarFunction::ChiRational => x / (1.0 + x * x).sqrt(),
            ScalarFunction::Tanh { scale } => (x / scale).tanh(),
            ScalarFunction::Fejer { a } => {
                let y = a * x;
                if y.abs() < 1e-8 {
                    return 2.0 * y / std::f64::consts::PI;
                }
                2.0 / std::f64::consts::PI * (sine_integral(2.0 * y) - y.sin().powi(2) / y)
            }
            ScalarFunction::SignGap { gap } => 2.0 * smoothstep((x + gap) / (2.0 * gap)) - 1.0,
            ScalarFunction::SchwartzBump { a, b } => {
                let t = (2.0 * x - a - b) / (b - a);
                if t.abs() >= 1.0 {
                    0.0
                } else {
                    (1.0 - 1.0 / (1.0 - t * t)).exp()
                }
            }
            ScalarFunction::Bracket { s } => (1.0 + x * x).powf(s / 2.0),
            ScalarFunction::Identity => x,
            ScalarFunction::Constant { c } => *c,
            ScalarFunction::Indicator { a, b } => f64::from(u8::from(x >= *a && x < *b)),
            ScalarFunction::Sampled { xs, ys } => {
                if xs.is_empty() {
                    return 0.0;
                }
                let k = xs.partition_point(|&v| v <= x);
                if k == 0 {
                    ys[0]
                } else if k == xs.len() {
                    ys[xs.len() - 1]
                } else {
                    let t = (x - xs[k - 1]) / (xs[k] - xs[k - 1]);
                    ys[k - 1] * (1.0 - t) + ys[k] * t
                }
            }
        }
    }

    /// `f^{(n)}(x)` for `n ≤ 4` by central differences with step `h`.
    pub fn derivative(&self, n: usize, x: f64, h: f64) -> f64 {
        let f = |k: f64| self.eval(x + k * h);
        match n {
            0 => f(0.0),
            1 => (f(1.0) - f(-1.0)) / (2.0 * h),
            2 => (f(1.0) - 2.0 * f(0.0) + f(-1.0)) / (h * h),
            3 => (f(2.0) - 2.0 * f(1.0) + 2.0 * f(-1.0) - f(-2.0)) / (2.0 * h.powi(3)),
            4 => (f(2.0) - 4.0 * f(1.0) + 6.0 * f(0.0) - 4.0 * f(-1.0) + f(-2.0)) / h.powi(4),
            _ => f64::NAN,
        }
    }

    pub fn default_class(&self) -> FunctionClass {
        match self {
            ScalarFunction::Gaussian { .. } | ScalarFunction::SchwartzBump { .. } => FunctionClass::Schwartz,
            ScalarFunction::ChiRational | ScalarFunction::Tanh { .. } | ScalarFunction::Fejer { .. } | ScalarFunction::SignGap { .. } => {
                FunctionClass::Normalizing
            }
            ScalarFunction::Bracket { s } => FunctionClass::Symbol { m: *s, constants: Vec::new() },
            ScalarFunction::Identity => FunctionClass::Symbol { m: 1.0, constants: Vec::new() },
            ScalarFunction::Constant { .. } => FunctionClass::Symbol { m: 0.0, constants: Vec::new() },
            ScalarFunction::Indicator { .. } | ScalarFunction::Sampled { .. } => FunctionClass::BoundedBorel,
        }
    }

    /// `f̂(t) = (2π)^{−1/2} ∫ f(x) e^{−itx} dx`.
    pub fn fourier_transform(&self, t: f64) -> Result<C64> {
        match self {
            ScalarFunction::Gaussian { sigma } => Ok(C64::new(sigma * (-0.5 * sigma * sigma * t * t).exp(), 0.0)),
            ScalarFunction::Constant { c } if *c == 0.0 => Ok(ZERO),
            ScalarFunction::SchwartzBump { a, b } => {
                let panels = ((b - a) * t.abs()).ceil() as usize + 8;
                let re = integrate(*a, *b, panels, |x| self.eval(x) * (t * x).cos());
                let im = integrate(*a, *b, panels, |x| -self.eval(x) * (t * x).sin());
                Ok(C64::new(re, im) / (2.0 * std::f64::consts::PI).sqrt())
            }
            _ => Err(Error::Precondition(format!("no Fourier transform available for {self}"))),
        }
    }

    /// `|(f')^(s)| = |s f̂(s)|·√(2π)`, the non-unitary transform of the derivative.
    pub fn derivative_transform_abs(&self, s: f64) -> Result<f64> {
        let s = s.abs();
        let pi = std::f64::consts::PI;
        match self {
            ScalarFunction::Gaussian { sigma } => Ok(s * sigma * (2.0 * pi).sqrt() * (-0.5 * sigma * sigma * s * s).exp()),
            ScalarFunction::Tanh { scale } => {
                let y = pi * scale * s / 2.0;
                Ok(if y < 1e-8 { 2.0 } else { 2.0 * y / y.sinh() })
            }
            ScalarFunction::ChiRational => Ok(if s < 1e-12 { 2.0 } else { 2.0 * s * bessel_k1(s) }),
            ScalarFunction::Fejer { a } => Ok((2.0 * (1.0 - s / (2.0 * a))).max(0.0)),
            ScalarFunction::SignGap { gap } => {
                // ψ' = (1/g) S'((x+g)/2g), even, supported on [−g, g]
                let panels = (gap * s).ceil() as usize + 4;
                Ok(2.0
                    * integrate(0.0, *gap, panels, |x| {
                        let t = (x + gap) / (2.0 * gap);
                        30.0 * t * t * (1.0 - t) * (1.0 - t) / gap * (s * x).cos()
                    })
                    .abs())
            }
            ScalarFunction::SchwartzBump { .. } => Ok(s * self.fourier_transform(s)?.norm() * (2.0 * pi).sqrt()),
            ScalarFunction::Constant { c } if *c == 0.0 => Ok(0.0),
            _ => Err(Error::Precondition(format!("s·ψ̂(s) is not integrable for {self}"))),
        }
    }
}

/// Splits `name(a, b)` into the name and its numeric arguments.
pub fn parse_call(s: &str) -> Result<(String, Vec<f64>)> {
    let s = s.trim();
    let Some(open) = s.find('(') else {
        return Ok((s.to_string(), Vec::new()));
    };
    if !s.ends_with(')') {
        return Err(Error::InvalidArgument(format!("unbalanced parentheses in `{s}`")));
    }
    let args = s[open + 1..s.len() - 1]
        .split(',')
        .filter(|a| !a.trim().is_empty())
        .map(|a| a.trim().parse::<f64>().map_err(|e| Error::InvalidArgument(format!("`{a}` in `{s}`: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    Ok((s[..open].trim().to_string(), args))
}

impl FromStr for ScalarFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, args) = parse_call(s)?;
        let want = |n: usize| -> Result<()> {
            if args.len() == n {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("`{name}` takes {n} argument(s), got {}", args.len())))
            }
        };
        let f = match name.as_str() {
            "gaussian" => {
                if args.is_empty() {
                    ScalarFunction::Gaussian { sigma: 1.0 }
                } else {
                    want(1)?;
                    ScalarFunction::Gaussian { sigma: args[0] }
                }
            }
            "chi_rational" => {
                want(0)?;
                ScalarFunction::ChiRational
            }
            "tanh" => {
                want(1)?;
                ScalarFunction::Tanh { scale: args[0] }
            }
            "fejer" => {
                want(1)?;
                ScalarFunction::Fejer { a: args[0] }
            }
            "sign_gap" => {
                want(1)?;
                ScalarFunction::SignGap { gap: args[0] }
            }
            "schwartz_bump" => {
                want(2)?;
                ScalarFunction::SchwartzBump { a: args[0], b: args[1] }
            }
            "bracket" => {
                want(1)?;
                ScalarFunction::Bracket { s: args[0] }
            }
            "identity" => {
                want(0)?;
                ScalarFunction::Identity
            }
            "constant" => {
                want(1)?;
                ScalarFunction::Constant { c: args[0] }
            }
            "indicator" => {
                want(2)?;
                ScalarFunction::Indicator { a: args[0], b: args[1] }
            }
            _ => return Err(Error::InvalidArgument(format!("unknown function `{name}`"))),
        };
        let positive = match &f {
            ScalarFunction::Gaussian { sigma } => *sigma > 0.0,
            ScalarFunction::Tanh { scale } => *scale > 0.0,
            ScalarFunction::Fejer { a } => *a > 0.0,
            ScalarFunction::SignGap { gap } => *gap > 0.0,
            ScalarFunction::SchwartzBump { a, b } | ScalarFunction::Indicator { a, b } => b > a,
            _ => true,
        };
        if !positive {
            return Err(Error::InvalidArgument(format!("bad parameters in `{s}`")));
        }
        Ok(f)
    }
}

impl fmt::Display for ScalarFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalarFunction::Gaussian { sigma } => write!(f, "gaussian({sigma})"),
            ScalarFunction::ChiRational => write!(f, "chi_rational"),
            ScalarFunction::Tanh { scale } => write!(f, "tanh({scale})"),
            ScalarFunction::Fejer { a } => write!(f, "fejer({a})"),
            ScalarFunction::SignGap { gap } => write!(f, "sign_gap({gap})"),
            ScalarFunction::SchwartzBump { a, b } => write!(f, "schwartz_bump({a},{b})"),
            ScalarFunction::Bracket { s } => write!(f, "bracket({s})"),
            ScalarFunction::Identity => write!(f, "identity"),
            ScalarFunction::Constant { c } => write!(f, "constant({c})"),
            ScalarFunction::Indicator { a, b } => write!(f, "indicator({a},{b})"),
            ScalarFunction::Sampled { xs, .. } => write!(f, "sampled[{}]", xs.len()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum FunctionClass {
    Schwartz,
    /// `|f^{(n)}(x)| < C_n (1+|x|)^{m−n}`; empty `constants` means "measure them".
    Symbol { m: f64, constants: Vec<f64> },
    /// Odd, positive on positives, limits ±1.
    Normalizing,
    BoundedBorel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarFunctionSpec {
    pub function: ScalarFunction,
    pub class: FunctionClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCheck {
    pub ok: bool,
    /// Measured `sup |f^{(n)}|/(1+|x|)^{m−n}`, `n = 0..=4`, for symbol classes.
    pub measured_constants: Vec<f64>,
    pub detail: String,
}

fn sample_points() -> Vec<f64> {
    let mut xs = vec![0.0];
    for k in -16..=32 {
        let x = 10f64.powf(k as f64 / 8.0);
        xs.push(x);
        xs.push(-x);
    }
    xs
}

impl ScalarFunctionSpec {
    pub fn new(function: ScalarFunction) -> Self {
        let class = function.default_class();
        ScalarFunctionSpec { function, class }
    }

    pub fn with_class(mut self, class: FunctionClass) -> Self {
        self.class = class;
        self
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.function.eval(x)
    }

    pub fn name(&self) -> String {
        self.function.to_string()
    }

    /// Declared order of `f(P)` for `P` of order `k`.
    pub fn operator_order(&self, k: i32) -> i32 {
        match &self.class {
            FunctionClass::Schwartz => SMOOTHING_ORDER,
            FunctionClass::Symbol { m, .. } => (m * k as f64).ceil() as i32,
            _ => 0,
        }
    }

    /// Checks the declared class on a log-spaced sample grid up to `|x| = 10⁴`.
    pub fn verify_class(&self) -> ClassCheck {
        let f = &self.function;
        let xs = sample_points();
        match &self.class {
            FunctionClass::Symbol { m, constants } => {
                let mut measured = vec![0.0f64; 5];
                // per-decade maxima of the last derivative ratios, for the growth test
                let mut tail = [0.0f64; 2];
                for &x in &xs {
                    let h = 1e-2 * (1.0 + x.abs());
                    for (n, c) in measured.iter_mut().enumerate() {
                        let v = f.derivative(n, x, h).abs() / (1.0 + x.abs()).powf(m - n as f64);
                        *c = c.max(v);
                        if n == 4 && x.abs() >= 1e3 {
                            tail[1] = tail[1].max(v);
                        } else if n == 4 && x.abs() >= 1e2 {
                            tail[0] = tail[0].max(v);
                        }
                    }
                }
                let finite = measured.iter().all(|c| c.is_finite());
                let (ok, detail) = if constants.is_empty() {
                    let ok = finite && tail[1] <= 1.1 * tail[0] + 1e-12;
                    (ok, "constants measured, not declared".to_string())
                } else {
                    let bad: Vec<usize> = (0..constants.len().min(5)).filter(|&n| measured[n] >= constants[n]).collect();
                    (finite && bad.is_empty(), if bad.is_empty() { String::new() } else { format!("bound fails for n in {bad:?}") })
                };
                ClassCheck { ok, measured_constants: measured, detail }
            }
            FunctionClass::Normalizing => {
                let odd = xs.iter().map(|&x| (f.eval(x) + f.eval(-x)).abs()).fold(0.0, f64::max);
                let positive = xs.iter().filter(|&&x| x > 0.0).all(|&x| f.eval(x) > 0.0);
                let lim = (1.0 - f.eval(1e6)).abs().max((1.0 + f.eval(-1e6)).abs());
                let ok = odd <= 1e-12 && positive && lim < 1e-3;
                ClassCheck {
                    ok,
                    measured_constants: Vec::new(),
                    detail: format!("oddness defect {odd:e}, positive on positives {positive}, limit defect {lim:e}"),
                }
            }
            FunctionClass::Schwartz => {
                let top = xs.iter().map(|&x| f.eval(x).abs()).fold(0.0, f64::max);
                let mut worst: f64 = 0.0;
                for x in [-100.0, -50.0, 50.0, 100.0] {
                    for n in 0..=4 {
                        worst = worst.max((1.0 + f64::abs(x)).powi(6) * f.derivative(n, x, 1e-2).abs());
                    }
                }
                ClassCheck {
                    ok: worst <= 1e-8 * (1.0 + top),
                    measured_constants: Vec::new(),
                    detail: format!("max (1+|x|)^6 |f^(n)| at |x| ∈ {{50, 100}}: {worst:e}"),
                }
            }
            FunctionClass::BoundedBorel => {
                let sup = xs.iter().map(|&x| f.eval(x).abs()).fold(0.0, f64::max);
                ClassCheck { ok: sup.is_finite(), measured_constants: vec![sup], detail: String::new() }
            }
        }
    }
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
enum Basis {
    Dense(CMat),
    /// Per-mode `r × r` eigenvector blocks (row-major, eigenvectors in columns).
    Fourier(Vec<C64>),
}

/// `P = V diag(λ) V*` for a self-adjoint operator.
#[derive(Debug, Clone)]
pub struct SpectralData {
    pub grid: GridSpec,
    pub source_order: i32,
    /// Ascending for dense operators; mode-major for multipliers.
    pub eigenvalues: Vec<f64>,
    basis: Basis,
}

impl SpectralData {
    pub fn new(p: &DiscreteOperator) -> Result<Self> {
        if !p.self_adjoint {
            return Err(Error::NotSelfAdjoint(crate::linalg::hermitian_defect(&p.matrix)));
        }
        let g = p.grid;
        let r = g.fiber_dim;
        if let Some(m) = &p.multiplier {
            let mut eig = Vec::with_capacity(g.state_dim());
            let mut vecs = Vec::with_capacity(m.len());
            for blk in m.chunks(r * r) {
                if r == 1 {
                    eig.push(blk[0].re);
                    vecs.push(ONE);
                    continue;
                }
                let a = hermitian_part(&Array2::from_shape_vec((r, r), blk.to_vec()).unwrap());
                let (w, v) = eigh(&a)?;
                eig.extend(w.iter());
                vecs.extend(v.iter());
            }
            return Ok(SpectralData { grid: g, source_order: p.order, eigenvalues: eig, basis: Basis::Fourier(vecs) });
        }
        let (w, v) = eigh(&hermitian_part(&p.matrix))?;
        Ok(SpectralData { grid: g, source_order: p.order, eigenvalues: w.to_vec(), basis: Basis::Dense(v) })
    }

    pub fn spectral_radius(&self) -> f64 {
        self.eigenvalues.iter().fold(0.0f64, |m, l| m.max(l.abs()))
    }

    pub fn is_multiplier(&self) -> bool {
        matches!(self.basis, Basis::Fourier(_))
    }

    /// Dense eigenvector matrix in the position basis.
    pub fn eigenvectors(&self) -> CMat {
        match &self.basis {
            Basis::Dense(v) => v.clone(),
            Basis::Fourier(blocks) => {
                let g = self.grid;
                let r = g.fiber_dim;
                let n = g.state_dim();
                let mut fb = Array2::zeros((n, n));
                for q in 0..g.points() {
                    for a in 0..r {
                        for b in 0..r {
                            fb[[q * r + a, q * r + b]] = blocks[q * r * r + a * r + b];
                        }
                    }
                }
                // columns are F* applied to the Fourier-basis eigenvectors
                let mut vt: CMat = fb.t().as_standard_layout().into_owned();
                for mut row in vt.rows_mut() {
                    crate::lattice::idft_unitary(&g, row.as_slice_mut().unwrap());
                }
                vt.t().as_standard_layout().into_owned()
            }
        }
    }

    /// `(‖P − V Λ V*‖/‖P‖, ‖V*V − I‖)` in max-entry norm.
    pub fn verify(&self, p: &DiscreteOperator) -> (f64, f64) {
        let v = self.eigenvectors();
        let mut vl = v.clone();
        for (j, &l) in self.eigenvalues.iter().enumerate() {
            vl.column_mut(j).mapv_inplace(|z| z * l);
        }
        let rec = vl.dot(&mat_adjoint(&v));
        let scale = max_abs(p.matrix.view()).max(f64::MIN_POSITIVE);
        let recon = max_abs((&rec - &p.matrix).view()) / scale;
        let orth = max_abs((&mat_adjoint(&v).dot(&v) - &crate::linalg::identity(v.nrows())).view());
        (recon, orth)
    }

    /// `V diag(f(λ)) V*`; `real` asserts `f` is real-valued, which makes the result exactly Hermitian.
    pub fn apply(&self, f: impl Fn(f64) -> C64, real: bool, order: i32, name: impl Into<String>) -> Result<DiscreteOperator> {
        let g = self.grid;
        let name = name.into();
        let vals: Vec<C64> = self.eigenvalues.iter().map(|&l| f(l)).collect();
        match &self.basis {
            Basis::Fourier(vecs) => {
                let r = g.fiber_dim;
                let mut blocks = Vec::with_capacity(vecs.len());
                for q in 0..g.points() {
                    let u = &vecs[q * r * r..(q + 1) * r * r];
                    for a in 0..r {
                        for b in 0..r {
                            let mut z = ZERO;
                            for c in 0..r {
                                z += u[a * r + c] * vals[q * r + c] * u[b * r + c].conj();
                            }
                            blocks.push(if real && a == b { C64::new(z.re, 0.0) } else { z });
                        }
                    }
                }
                let mut op = fourier_multiplier(g, order, blocks, name)?;
                op.provenance = Provenance::FunctionOf;
                op.hermitian_symbol = real;
                Ok(op)
            }
            Basis::Dense(v) => {
                let mut w = v.clone();
                for (j, z) in vals.iter().enumerate() {
                    w.column_mut(j).mapv_inplace(|x| x * z);
                }
                let mut m = w.dot(&mat_adjoint(v));
                if real {
                    m = hermitian_part(&m);
                }
                let mut op = DiscreteOperator::from_matrix(g, order, m, Provenance::FunctionOf, name)?;
                op.self_adjoint = real;
                op.hermitian_symbol = real;
                Ok(op)
            }
        }
    }

    pub fn apply_spec(&self, f: &ScalarFunctionSpec) -> Result<DiscreteOperator> {
        self.apply(|x| C64::new(f.eval(x), 0.0), true, f.operator_order(self.source_order), format!("{}(P)", f.name()))
    }

    pub fn wave(&self, t: f64) -> Result<DiscreteOperator> {
        let mut op = self.apply(|x| (I * t * x).exp(), false, 0, format!("exp(i{t}P)"))?;
        if t == 0.0 {
            op.self_adjoint = true;
        }
        Ok(op)
    }

    /// `sup_λ |f(λ) − g(λ)|` over the spectrum.
    pub fn scalar_defect(&self, f: impl Fn(f64) -> C64, g: impl Fn(f64) -> C64) -> f64 {
        self.eigenvalues.iter().map(|&l| (f(l) - g(l)).norm()).fold(0.0, f64::max)
    }
}

/// `f(P)` by eigendecomposition; the reference for every other route.
pub fn spectral_apply(p: &DiscreteOperator, f: &ScalarFunctionSpec) -> Result<DiscreteOperator> {
    SpectralData::new(p)?.apply_spec(f)
}

/// `e^{itP}`.
pub fn wave_operator(p: &DiscreteOperator, t: f64) -> Result<DiscreteOperator> {
    SpectralData::new(p)?.wave(t)
}

fn diff_norm(a: &DiscreteOperator, b: &DiscreteOperator) -> Result<f64> {
    op_norm(&sub(a, b)?, 0.0, 0.0)
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureReport {
    pub route: String,
    pub function: String,
    pub n_quad: usize,
    /// `t_max` or `λ_max`.
    pub cutoff: f64,
    pub spectral_radius: f64,
    /// `‖route − spectral_apply‖` in operator norm.
    pub defect: f64,
    /// Error budget: quadrature estimate plus truncated-tail bound.
    pub budget: f64,
    pub tail_bound: f64,
    /// Defect above the requested tolerance.
    pub flagged: bool,
}

/// `(2π)^{−1/2} ∫ f̂(t) e^{itP} dt` by the trapezoid rule on `[−t_max, t_max]`
/// with `n_quad` intervals. The budget is the change from the `n_quad / 2` rule
/// plus the truncated tail and a rounding allowance; odd `n_quad` has no budget.
pub fn fourier_apply(
    p: &DiscreteOperator,
    f: &ScalarFunctionSpec,
    t_max: f64,
    n_quad: usize,
    tol: f64,
) -> Result<(DiscreteOperator, QuadratureReport)> {
    let sd = SpectralData::new(p)?;
    fourier_apply_with(&sd, f, t_max, n_quad, tol)
}

pub fn fourier_apply_with(
    sd: &SpectralData,
    f: &ScalarFunctionSpec,
    t_max: f64,
    n_quad: usize,
    tol: f64,
) -> Result<(DiscreteOperator, QuadratureReport)> {
    if n_quad == 0 || t_max <= 0.0 {
        return Err(Error::InvalidArgument("fourier_apply needs n_quad ≥ 1 and t_max > 0".into()));
    }
    let dt = 2.0 * t_max / n_quad as f64;
    let nodes: Vec<(f64, C64)> = (0..=n_quad)
        .map(|j| {
            let t = -t_max + j as f64 * dt;
            let w = if j == 0 || j == n_quad { 0.5 * dt } else { dt };
            f.function.fourier_transform(t).map(|ft| (t, ft * w))
        })
        .collect::<Result<_>>()?;
    let norm = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    let g = |l: f64| nodes.iter().fold(ZERO, |acc, (t, w)| acc + w * (I * t * l).exp()) * norm;
    // every other node with doubled weights: the rule at n_quad / 2
    let coarse = |l: f64| {
        nodes.iter().step_by(2).fold(ZERO, |acc, (t, w)| acc + w * 2.0 * (I * t * l).exp()) * norm
            - nodes[0].1 * (I * nodes[0].0 * l).exp() * norm
            - nodes[n_quad].1 * (I * nodes[n_quad].0 * l).exp() * norm
    };
    let op = sd.apply(g, false, f.operator_order(sd.source_order), format!("fourier[{}](P)", f.name()))?;
    let oracle = sd.apply_spec(f)?;
    let defect = diff_norm(&op, &oracle)?;
    let tail = norm * 2.0 * integrate(t_max, t_max + 60.0, 120, |t| f.function.fourier_transform(t).map(|z| z.norm()).unwrap_or(0.0));
    // both rules are functions of P, so their difference norm is a max over the spectrum
    let halving = if n_quad % 2 == 0 {
        sd.eigenvalues.iter().map(|&l| (g(l) - coarse(l)).norm()).fold(0.0, f64::max)
    } else {
        f64::INFINITY
    };
    let mass: f64 = nodes.iter().map(|(_, w)| w.norm()).sum::<f64>() * norm;
    let rounding = 16.0 * f64::EPSILON * (sd.eigenvalues.len() as f64).sqrt() * (1.0 + mass);
    let report = QuadratureReport {
        route: "fourier".into(),
        function: f.name(),
        n_quad,
        cutoff: t_max,
        spectral_radius: sd.spectral_radius(),
        defect,
        budget: halving + tail + rounding,
        tail_bound: tail,
        flagged: defect > tol,
    };
    Ok((op, report))
}

/// Trapezoid in `u = asinh λ` for `(2/π) ∫_0^{λ_max} x/(1+λ²+x²) dλ`.
fn resolvent_trapezoid(x: f64, u_max: f64, n: usize) -> f64 {
    let h = u_max / n as f64;
    let a = 1.0 + x * x;
    let mut s = 0.0;
    for j in 0..=n {
        let u = j as f64 * h;
        let sh = u.sinh();
        let w = if j == 0 || j == n { 0.5 } else { 1.0 };
        s += w * u.cosh() / (a + sh * sh);
    }
    2.0 / std::f64::consts::PI * x * s * h
}

/// `(2/π) x ∫_Λ^∞ dλ/(λ² + a)` as `Σ (−a)^n/((2n+1) Λ^{2n+1})`; returns `(sum, first omitted term)`.
fn resolvent_tail(x: f64, lambda_max: f64) -> Result<(f64, f64)> {
    let a = 1.0 + x * x;
    let q = a / (lambda_max * lambda_max);
    if q >= 0.5 {
        return Err(Error::Quadrature(format!("λ_max = {lambda_max} too small for the tail series at |x| = {}", x.abs())));
    }
    let mut sum: f64 = 0.0;
    let mut pow = 1.0 / lambda_max;
    let mut n = 0;
    loop {
        let term = pow / (2 * n + 1) as f64;
        if term < 1e-18 * sum.abs().max(1e-300) || n > 200 {
            let c = 2.0 / std::f64::consts::PI * x;
            return Ok((c * sum, (c * term).abs()));
        }
        sum += if n % 2 == 0 { term } else { -term };
        pow *= q;
        n += 1;
    }
}

/// `χ(P) = (2/π) ∫_0^∞ P (1 + λ² + P²)^{-1} dλ` for `χ(x) = x/√(1+x²)`: trapezoid
/// in `u = asinh λ` on `[0, λ_max]` plus the `λ > λ_max` tail as its convergent
/// series in `(1 + P²)/λ_max²`.
pub fn chi_resolvent_integral(
    p: &DiscreteOperator,
    lambda_max: f64,
    n_quad: usize,
    tol: f64,
) -> Result<(DiscreteOperator, QuadratureReport)> {
    let sd = SpectralData::new(p)?;
    chi_resolvent_integral_with(&sd, lambda_max, n_quad, tol)
}

pub fn chi_resolvent_integral_with(
    sd: &SpectralData,
    lambda_max: f64,
    n_quad: usize,
    tol: f64,
) -> Result<(DiscreteOperator, QuadratureReport)> {
    if n_quad < 2 || lambda_max <= 0.0 {
        return Err(Error::InvalidArgument("chi_resolvent_integral needs n_quad ≥ 2 and λ_max > 0".into()));
    }
    let u_max = lambda_max.asinh();
    let mut vals = Vec::with_capacity(sd.eigenvalues.len());
    let mut quad_err: f64 = 0.0;
    let mut tail_rem: f64 = 0.0;
    let mut tail_max: f64 = 0.0;
    for &x in &sd.eigenvalues {
        let fine = resolvent_trapezoid(x, u_max, n_quad);
        let coarse = resolvent_trapezoid(x, u_max, n_quad / 2);
        let (tail, rem) = resolvent_tail(x, lambda_max)?;
        quad_err = quad_err.max((fine - coarse).abs());
        tail_rem = tail_rem.max(rem);
        tail_max = tail_max.max(tail.abs());
        vals.push(fine + tail);
    }
    let idx: std::collections::HashMap<u64, f64> = sd.eigenvalues.iter().zip(&vals).map(|(l, v)| (l.to_bits(), *v)).collect();
    let op = sd.apply(|l| C64::new(idx[&l.to_bits()], 0.0), true, 0, "resolvent[chi_rational](P)")?;
    let chi = ScalarFunctionSpec::new(ScalarFunction::ChiRational);
    let oracle = sd.apply_spec(&chi)?;
    let defect = diff_norm(&op, &oracle)?;
    let report = QuadratureReport {
        route: "resolvent".into(),
        function: chi.name(),
        n_quad,
        cutoff: lambda_max,
        spectral_radius: sd.spectral_radius(),
        defect,
        budget: quad_err + tail_rem,
        tail_bound: tail_max,
        flagged: defect > tol,
    };
    Ok((op, report))
}

// ---------------------------------------------------------------------------

/// Probabilists' Hermite polynomial `He_n`.
fn hermite(n: usize, x: f64) -> f64 {
    let (mut a, mut b) = (1.0, x);
    if n == 0 {
        return a;
    }
    for k in 1..n {
        let c = x * b - k as f64 * a;
        a = b;
        b = c;
    }
    b
}

/// `q^{(n)}` for Gaussian `q(t) = e^{−t²/(2σ²)}`.
fn gaussian_derivative(sigma: f64, n: usize, t: f64) -> f64 {
    (-1.0 / sigma).powi(n as i32) * hermite(n, t / sigma) * (-t * t / (2.0 * sigma * sigma)).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QIntegralReport {
    pub n: usize,
    pub k: i32,
    /// `∫|t| |q^{(j)}(t)| dt` on the quadrature grid, `j = 0..=n`.
    pub moments: Vec<f64>,
    /// `‖LHS − RHS‖/‖LHS‖` of the integration-by-parts identity.
    pub identity_residual: f64,
    /// `‖Σ_j (iQ)^j S2 ∫ q^{(j)} e^{itP} dt‖`.
    pub remainder_norm: f64,
    /// `Σ_j ‖Q‖^j ‖S2‖ ‖∫ q^{(j)} e^{itP} dt‖`.
    pub remainder_bound: f64,
    pub leading_norm: f64,
    /// `(l, ‖∫ q e^{itP} dt‖_{l−nk+k−1, l})`.
    pub norms: Vec<(f64, f64)>,
}

/// `∫ q(t) e^{itP} dt` for Gaussian `q`, with the identity
/// `∫ q e^{itP} = (iQ)^n ∫ q^{(n)} e^{itP} + Σ_{j<n} (iQ)^j S2 ∫ q^{(j)} e^{itP}`
/// checked against the parametrix `QP = I − S2`.
pub fn q_integral(
    q: &ScalarFunctionSpec,
    n: usize,
    p: &DiscreteOperator,
    par: &ParametrixResult,
    t_max: f64,
    n_quad: usize,
    ls: &[f64],
) -> Result<(DiscreteOperator, QIntegralReport)> {
    let ScalarFunction::Gaussian { sigma } = q.function else {
        return Err(Error::Precondition("q_integral supports Gaussian q".into()));
    };
    let sd = SpectralData::new(p)?;
    let dt = 2.0 * t_max / n_quad as f64;
    // the trapezoid sum aliases λ onto λ − 2πk/dt; keep every image in the Gaussian tail
    if (std::f64::consts::PI / dt - sd.spectral_radius()) * sigma < 9.0 {
        return Err(Error::Quadrature(format!(
            "n_quad = {n_quad} aliases the spectrum (radius {:.3e}) at t_max = {t_max}",
            sd.spectral_radius()
        )));
    }
    let ts: Vec<(f64, f64)> = (0..=n_quad)
        .map(|j| (-t_max + j as f64 * dt, if j == 0 || j == n_quad { 0.5 * dt } else { dt }))
        .collect();
    let mut moments = Vec::new();
    let mut ints = Vec::new();
    for j in 0..=n {
        let top = ts.iter().map(|(t, _)| gaussian_derivative(sigma, j, *t).abs()).fold(0.0, f64::max);
        let edge = gaussian_derivative(sigma, j, t_max).abs() * t_max;
        if edge > 1e-10 * top {
            return Err(Error::Precondition(format!("|t| q^({j})(t) not negligible at t_max = {t_max}")));
        }
        moments.push(ts.iter().map(|(t, w)| w * t.abs() * gaussian_derivative(sigma, j, *t).abs()).sum());
        let w: Vec<(f64, f64)> = ts.iter().map(|(t, w)| (*t, w * gaussian_derivative(sigma, j, *t))).collect();
        let g = |l: f64| w.iter().fold(ZERO, |acc, (t, c)| acc + (I * t * l).exp() * *c);
        ints.push(sd.apply(g, false, SMOOTHING_ORDER, format!("∫q^({j})e^(itP)"))?);
    }
    let iq = scale(&par.q, I);
    let mut power = DiscreteOperator::identity(p.grid)?;
    let mut remainder = crate::linalg::CMat::zeros(ints[0].matrix.dim());
    let s2n = spectral_norm(par.s2.matrix.view())?;
    let qn = spectral_norm(par.q.matrix.view())?;
    let mut bound = 0.0;
    for (j, int) in ints.iter().enumerate().take(n) {
        remainder = remainder + power.matrix.dot(&par.s2.matrix).dot(&int.matrix);
        bound += qn.powi(j as i32) * s2n * spectral_norm(int.matrix.view())?;
        power = compose(&power, &iq)?;
    }
    let leading = power.matrix.dot(&ints[n].matrix);
    let rhs = &leading + &remainder;
    let lhs = &ints[0];
    let lhs_norm = spectral_norm(lhs.matrix.view())?;
    let residual = spectral_norm((&lhs.matrix - &rhs).view())? / lhs_norm.max(f64::MIN_POSITIVE);
    let k = p.order;
    let norms = ls
        .iter()
        .map(|&l| op_norm(lhs, l - (n as f64) * k as f64 + k as f64 - 1.0, l).map(|v| (l, v)))
        .collect::<Result<Vec<_>>>()?;
    let report = QIntegralReport {
        n,
        k,
        moments,
        identity_residual: residual,
        remainder_norm: spectral_norm(remainder.view())?,
        remainder_bound: bound,
        leading_norm: spectral_norm(leading.view())?,
        norms,
    };
    Ok((ints.swap_remove(0), report))
}

// ---------------------------------------------------------------------------

/// `C_ψ = (2π)^{−1} ∫ |s ψ̂(s)| ds` by Gauss–Legendre; returns `(C_ψ, tail estimate)`.
pub fn c_psi(psi: &ScalarFunction) -> Result<(f64, f64)> {
    let pi = std::f64::consts::PI;
    let (s_max, panels) = match psi {
        ScalarFunction::Gaussian { sigma } => (40.0 / sigma, 200),
        ScalarFunction::Tanh { scale } => (60.0 / scale, 200),
        ScalarFunction::ChiRational => (60.0, 240),
        ScalarFunction::Fejer { a } => (2.0 * a, 64),
        ScalarFunction::SignGap { gap } => (400.0 / gap, 800),
        ScalarFunction::SchwartzBump { a, b } => (400.0 / (b - a), 800),
        _ => {
            psi.derivative_transform_abs(1.0)?;
            unreachable!()
        }
    };
    let f = |s: f64| psi.derivative_transform_abs(s).unwrap_or(f64::NAN);
    let body = integrate(0.0, s_max, panels, f) / pi;
    if !body.is_finite() {
        return Err(Error::Quadrature(format!("s ψ̂(s) not integrable on the grid for {psi}")));
    }
    // algebraic tails decay at least like s^{-3}: extrapolate from the last sample
    let last = f(s_max);
    let tail = last * s_max / 2.0 / pi;
    Ok((body, tail))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsiBoundReport {
    pub psi: String,
    pub l: f64,
    pub q_order: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub c_psi: f64,
    pub c_psi_tail: f64,
    /// `lhs / rhs` (0 when both vanish).
    pub ratio: f64,
    pub holds: bool,
}

/// `‖ψ(P) − ψ(P′)‖_{l, l−q} ≤ C_ψ ‖P − P′‖_{l, l−q}` with slack `1 + tol`.
pub fn psi_difference_bound(
    psi: &ScalarFunctionSpec,
    p: &DiscreteOperator,
    p2: &DiscreteOperator,
    l: f64,
    q_order: f64,
    tol: f64,
) -> Result<PsiBoundReport> {
    let (c, tail) = c_psi(&psi.function)?;
    let a = spectral_apply(p, psi)?;
    let b = spectral_apply(p2, psi)?;
    let lhs = op_norm(&sub(&a, &b)?, l, l - q_order)?;
    let rhs = (c + tail) * op_norm(&sub(p, p2)?, l, l - q_order)?;
    let ratio = if rhs == 0.0 { if lhs == 0.0 { 0.0 } else { f64::INFINITY } } else { lhs / rhs };
    Ok(PsiBoundReport {
        psi: psi.name(),
        l,
        q_order,
        lhs,
        rhs,
        c_psi: c,
        c_psi_tail: tail,
        ratio,
        holds: lhs <= rhs * (1.0 + tol) + 1e-14,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantize::{multiplication, quantize, symmetrize};
    use crate::symbols::{Family, Symbol};
    use approx::assert_relative_eq;

    fn grid(n: usize, l: f64) -> GridSpec {
        GridSpec::one_d(n, l).unwrap()
    }

    fn dirac(g: GridSpec) -> DiscreteOperator {
        quantize(&Family::Dirac.build(g).unwrap()).unwrap()
    }

    fn spec(s: &str) -> ScalarFunctionSpec {
        ScalarFunctionSpec::new(s.parse().unwrap())
    }

    #[test]
    fn names_round_trip() {
        for s in ["gaussian(0.5)", "chi_rational", "tanh(2)", "fejer(1)", "sign_gap(0.25)", "schwartz_bump(-1,2)", "bracket(-1)", "identity", "constant(3)", "indicator(0,1)"] {
            let f: ScalarFunction = s.parse().unwrap();
            assert_eq!(f.to_string(), s);
        }
        assert!("gaussian(-1)".parse::<ScalarFunction>().is_err());
        assert!("tanh".parse::<ScalarFunction>().is_err());
        assert!("nope(1)".parse::<ScalarFunction>().is_err());
    }

    #[test]
    fn fejer_matches_its_derivative() {
        let f = ScalarFunction::Fejer { a: 1.5 };
        for x in [-7.0, -0.3, 0.0, 0.4, 3.0, 11.0] {
            let d = f.derivative(1, x, 1e-4);
            let want = 2.0 * 1.5 / std::f64::consts::PI * sinc(1.5 * x).powi(2);
            assert!((d - want).abs() < 1e-7, "{x}: {d} vs {want}");
        }
    }

    #[test]
    fn classes_verify() {
        for s in ["chi_rational", "tanh(1)", "fejer(1)", "sign_gap(0.5)"] {
            assert!(spec(s).verify_class().ok, "{s}");
        }
        for s in ["gaussian(1)", "schwartz_bump(-1,1)"] {
            assert!(spec(s).verify_class().ok, "{s}");
        }
        let b = spec("bracket(-1)").verify_class();
        assert!(b.ok);
        // sup (1+|x|)/√(1+x²) = √2 at x = 1, which is a sample point
        assert!((b.measured_constants[0] - 2f64.sqrt()).abs() < 1e-12);
        let declared = spec("bracket(-1)").with_class(FunctionClass::Symbol { m: -1.0, constants: vec![0.5] });
        assert!(!declared.verify_class().ok);
        assert!(!spec("bracket(1)").with_class(FunctionClass::Normalizing).verify_class().ok);
        assert!(!spec("gaussian(40)").verify_class().ok);
    }

    #[test]
    fn c_psi_closed_forms() {
        let pi = std::f64::consts::PI;
        let (g, _) = c_psi(&ScalarFunction::Gaussian { sigma: 1.0 }).unwrap();
        assert_relative_eq!(g, (2.0 / pi).sqrt(), max_relative = 1e-12);
        let (t, _) = c_psi(&ScalarFunction::Tanh { scale: 1.0 }).unwrap();
        assert_relative_eq!(t, 1.0, max_relative = 1e-12);
        let (c, tail) = c_psi(&ScalarFunction::ChiRational).unwrap();
        assert_relative_eq!(c + tail, 1.0, max_relative = 1e-10);
        let (f, _) = c_psi(&ScalarFunction::Fejer { a: 2.0 }).unwrap();
        assert_relative_eq!(f, 4.0 / pi, max_relative = 1e-13);
        // ψ' ≥ 0 with a nonnegative transform is not assumed for the quintic ramp
        let (s, tail) = c_psi(&ScalarFunction::SignGap { gap: 1.0 }).unwrap();
        assert!(s >= 1.0 / 1.0 - 1e-9 && tail < 1e-3, "{s} {tail}");
    }

    #[test]
    fn bessel_k1_values() {
        // K_1(1) = 0.6019072301972346, K_1(0.1) = 9.853844780870606
        assert_relative_eq!(bessel_k1(1.0), 0.601_907_230_197_234_6, max_relative = 1e-13);
        assert_relative_eq!(bessel_k1(0.1), 9.853_844_780_870_606, max_relative = 1e-12);
    }

    #[test]
    fn spectral_data_invariants() {
        let g = grid(64, 1.0);
        let p = symmetrize(&quantize(&Family::Drift(1.0).build(g).unwrap()).unwrap()).unwrap();
        let sd = SpectralData::new(&p).unwrap();
        let (rec, orth) = sd.verify(&p);
        assert!(rec < 1e-12 && orth < 1e-12, "{rec} {orth}");
        let m = SpectralData::new(&dirac(g)).unwrap();
        assert!(m.is_multiplier());
        let (rec, orth) = m.verify(&dirac(g));
        assert!(rec < 1e-12 && orth < 1e-12, "mult {rec} {orth}");
        let raw = quantize(&Family::Drift(1.0).build(g).unwrap()).unwrap();
        assert!(SpectralData::new(&raw).is_err());
    }

    #[test]
    fn trivial_functions() {
        let g = grid(32, 1.0);
        let p = symmetrize(&quantize(&Family::Drift(0.5).build(g).unwrap()).unwrap()).unwrap();
        let id = spectral_apply(&p, &spec("identity")).unwrap();
        assert!(max_abs((&id.matrix - &p.matrix).view()) < 1e-9 * max_abs(p.matrix.view()));
        let one = spectral_apply(&p, &spec("constant(1)")).unwrap();
        assert!(max_abs((&one.matrix - &crate::linalg::identity(32)).view()) < 1e-12);
        let lap = quantize(&Family::LaplacePlusOne.build(g).unwrap()).unwrap();
        let gauss = spectral_apply(&lap, &spec("gaussian(1)")).unwrap();
        let want = quantize(&Symbol::multiplier(g, 0, "", |xi, o| o[0] = C64::new((-(1.0 + xi[0] * xi[0]).powi(2) / 2.0).exp(), 0.0)).unwrap()).unwrap();
        assert!(max_abs((&gauss.matrix - &want.matrix).view()) < 1e-15);
    }

    #[test]
    fn wave_translation_and_group_law() {
        let g = grid(64, 1.0);
        let h = g.spacing();
        let w = wave_operator(&dirac(g), 3.0 * h).unwrap();
        // e^{itD} u(x) = u(x + t)
        for i in 0..64 {
            for j in 0..64 {
                let want = if j == (i + 3) % 64 { 1.0 } else { 0.0 };
                assert!((w.matrix[[i, j]] - C64::new(want, 0.0)).norm() < 1e-12);
            }
        }
        let p = symmetrize(&quantize(&Family::Drift(1.0).build(g).unwrap()).unwrap()).unwrap();
        let sd = SpectralData::new(&p).unwrap();
        let (a, b, ab) = (sd.wave(0.7).unwrap(), sd.wave(-1.9).unwrap(), sd.wave(-1.2).unwrap());
        assert!(max_abs((&a.matrix.dot(&b.matrix) - &ab.matrix).view()) < 1e-10);
        let u = a.matrix.dot(&mat_adjoint(&a.matrix));
        assert!(max_abs((&u - &crate::linalg::identity(64)).view()) < 1e-10);
        let zero = sd.wave(0.0).unwrap();
        assert!(max_abs((&zero.matrix - &crate::linalg::identity(64)).view()) < 1e-12);
        for s in [-2.0, -1.0, 0.0, 1.0, 2.0] {
            assert!((op_norm(&wave_operator(&dirac(g), 0.37).unwrap(), s, s).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fourier_route_matches_reference() {
        let g = grid(64, 1.0);
        let p = symmetrize(&quantize(&Family::Drift(0.5).build(g).unwrap()).unwrap()).unwrap();
        let (_, rep) = fourier_apply(&p, &spec("gaussian(1)"), 12.0, 2048, 1e-6).unwrap();
        assert!(rep.spectral_radius <= 100.0);
        assert!(rep.defect <= 1e-6 && !rep.flagged, "{rep:?}");
        let (zero, _) = fourier_apply(&p, &spec("constant(0)"), 12.0, 64, 1e-12).unwrap();
        assert_eq!(max_abs(zero.matrix.view()), 0.0);
        assert!(fourier_apply(&p, &spec("tanh(1)"), 12.0, 64, 1e-6).is_err());
    }

    #[test]
    fn resolvent_route_scalar_oracle() {
        let g = grid(32, 1.0);
        let p = dirac(g);
        let (op, rep) = chi_resolvent_integral(&p, 1e3, 4096, 1e-5).unwrap();
        assert!(rep.defect <= 1e-5 && rep.budget >= rep.defect * 0.01, "{rep:?}");
        let m = op.multiplier.unwrap();
        for (q, z) in m.iter().enumerate() {
            let x = g.xi(q)[0];
            assert!((z.re - x / (1.0 + x * x).sqrt()).abs() < 1e-5);
        }
        let zero = quantize(&Symbol::zero(g, 1).unwrap()).unwrap();
        let (z, _) = chi_resolvent_integral(&zero, 1e3, 64, 1e-5).unwrap();
        assert_eq!(max_abs(z.matrix.view()), 0.0);
    }

    #[test]
    fn q_integral_identity() {
        let g = grid(16, 1.0);
        let sym = Family::LaplacePlusOne.build(g).unwrap();
        let p = quantize(&sym).unwrap();
        let par = crate::parametrix::build_parametrix(&p, &sym, 1, 2.0).unwrap();
        let (op0, rep0) = q_integral(&spec("gaussian(1)"), 0, &p, &par, 12.0, 1024, &[0.0]).unwrap();
        // n = 0: √(2π) times the unitary-normalized Fourier route with f̂ = q
        let direct = spectral_apply(&p, &spec("gaussian(1)")).unwrap();
        let scaled = scale(&direct, C64::new((2.0 * std::f64::consts::PI).sqrt(), 0.0));
        assert!(max_abs((&op0.matrix - &scaled.matrix).view()) < 1e-10);
        assert!(rep0.identity_residual < 1e-12);
        let (_, rep) = q_integral(&spec("gaussian(1)"), 2, &p, &par, 12.0, 1024, &[0.0, 1.0]).unwrap();
        assert!(rep.identity_residual <= 10.0 * rep.remainder_bound.max(1e-12), "{rep:?}");
        assert!(rep.norms.iter().all(|(_, v)| v.is_finite()));
        let wide = quantize(&Family::LaplacePlusOne.build(grid(64, 1.0)).unwrap()).unwrap();
        assert!(q_integral(&spec("gaussian(1)"), 0, &wide, &par, 12.0, 1024, &[0.0]).is_err());
    }

    #[test]
    fn psi_bound_commuting_and_not() {
        let g = grid(32, 1.0);
        let a = dirac(g);
        let b = quantize(&Family::Bessel(1).build(g).unwrap()).unwrap();
        let psi = spec("tanh(1)");
        let rep = psi_difference_bound(&psi, &a, &b, 0.0, 0.0, 0.05).unwrap();
        // scalar oracle over the lattice
        let scalar = (0..32)
            .map(|q| {
                let x = g.xi(q)[0];
                (psi.eval(x) - psi.eval((1.0 + x * x).sqrt())).abs()
            })
            .fold(0.0, f64::max);
        assert!((rep.lhs - scalar).abs() < 1e-12);
        assert!(rep.holds);
        let f: Vec<f64> = (0..32).map(|i| 0.1 * g.coords(i)[0].cos()).collect();
        let pert = crate::quantize::add(&a, &multiplication(g, &f, "v").unwrap()).unwrap();
        let rep = psi_difference_bound(&spec("fejer(1)"), &a, &pert, 0.0, 0.0, 0.05).unwrap();
        assert!(rep.holds && rep.ratio > 0.0, "{rep:?}");
        let same = psi_difference_bound(&psi, &a, &a, 0.0, 0.0, 0.0).unwrap();
        assert_eq!(same.lhs, 0.0);
    }
}
