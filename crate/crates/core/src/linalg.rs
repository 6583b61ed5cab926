//! Dense complex linear algebra used throughout the crate.
//!
//! Large factorizations go to LAPACK (OpenBLAS); the small `r × r` fiber
//! matrices that appear per symbol cell are handled by hand-written routines
//! so that scanning a million cells does not pay LAPACK call overhead.

use ndarray::{Array1, Array2, ArrayView2, ShapeBuilder};
use ndarray_linalg::{Cholesky, Diag, Inverse, JobSvd, SolveTriangular, SVDDC, UPLO};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub use num_complex::Complex64 as C64;

pub type CMat = Array2<C64>;
pub type CVec = Array1<C64>;

pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };
pub const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Dimension up to which norms use an exact SVD instead of power iteration.
pub const DENSE_SVD_LIMIT: usize = 2000;

pub fn adjoint(a: &CMat) -> CMat {
    a.t().mapv(|z| z.conj())
}

pub fn identity(n: usize) -> CMat {
    Array2::from_diag_elem(n, ONE)
}

pub fn max_abs(a: ArrayView2<C64>) -> f64 {
    a.iter().fold(0.0f64, |m, z| m.max(z.norm()))
}

pub fn frobenius(a: ArrayView2<C64>) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn vec_norm(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn inner(u: &[C64], v: &[C64]) -> C64 {
    u.iter().zip(v).map(|(a, b)| a.conj() * b).sum()
}

/// `(A + A*) / 2`, exactly Hermitian in floating point.
pub fn hermitian_part(a: &CMat) -> CMat {
    let n = a.nrows();
    let mut out = a.clone();
    for i in 0..n {
        out[[i, i]] = C64::new(a[[i, i]].re, 0.0);
        for j in (i + 1)..n {
            let z = (a[[i, j]] + a[[j, i]].conj()) * 0.5;
            out[[i, j]] = z;
            out[[j, i]] = z.conj();
        }
    }
    out
}

/// Relative Frobenius defect `‖A − A*‖_F / ‖A‖_F` (0 for the zero matrix).
pub fn hermitian_defect(a: &CMat) -> f64 {
    let n = a.nrows();
    let mut num = 0.0;
    for i in 0..n {
        for j in 0..n {
            num += (a[[i, j]] - a[[j, i]].conj()).norm_sqr();
        }
    }
    let den = frobenius(a.view());
    if den == 0.0 {
        0.0
    } else {
        num.sqrt() / den
    }
}

/// Hermitian eigendecomposition `A = V diag(λ) V*` (divide and conquer, `zheevd`).
/// Eigenvalues ascending; eigenvectors are the columns of `V`.
pub fn eigh(a: &CMat) -> Result<(Array1<f64>, CMat)> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Shape {
            expected: format!("square matrix, {n} rows"),
            got: format!("{} columns", a.ncols()),
        });
    }
    if n == 0 {
        return Ok((Array1::zeros(0), Array2::zeros((0, 0))));
    }
    let ni = n as i32;
    // column-major copy
    let mut m: Vec<C64> = a.t().iter().cloned().collect();
    let mut w = vec![0.0; n];
    let jobz = b'V' as std::os::raw::c_char;
    let uplo = b'U' as std::os::raw::c_char;
    let mut info = 0;
    let mut wq = [ZERO];
    let mut rq = [0.0f64];
    let mut iq = [0i32];
    unsafe {
        lapack_sys::zheevd_(
            &jobz,
            &uplo,
            &ni,
            m.as_mut_ptr() as *mut _,
            &ni,
            w.as_mut_ptr(),
            wq.as_mut_ptr() as *mut _,
            &-1,
            rq.as_mut_ptr(),
            &-1,
            iq.as_mut_ptr(),
            &-1,
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Linalg(format!("zheevd workspace query failed, info = {info}")));
    }
    let lwork = wq[0].re.ceil() as i32;
    let lrwork = rq[0].ceil() as i32;
    let liwork = iq[0];
    let mut work = vec![ZERO; lwork.max(1) as usize];
    let mut rwork = vec![0.0; lrwork.max(1) as usize];
    let mut iwork = vec![0i32; liwork.max(1) as usize];
    unsafe {
        lapack_sys::zheevd_(
            &jobz,
            &uplo,
            &ni,
            m.as_mut_ptr() as *mut _,
            &ni,
            w.as_mut_ptr(),
            work.as_mut_ptr() as *mut _,
            &lwork,
            rwork.as_mut_ptr(),
            &lrwork,
            iwork.as_mut_ptr(),
            &liwork,
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Linalg(format!("zheevd failed, info = {info}")));
    }
    let v = Array2::from_shape_vec((n, n).f(), m)
        .map_err(|e| Error::Linalg(e.to_string()))?
        .as_standard_layout()
        .into_owned();
    Ok((Array1::from(w), v))
}

/// Singular values in descending order.
pub fn singular_values(a: ArrayView2<C64>) -> Result<Array1<f64>> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Ok(Array1::zeros(0));
    }
    let (_, s, _) = a.to_owned().svddc(JobSvd::None)?;
    Ok(s)
}

/// Largest singular value together with its right singular vector.
pub fn top_right_singular(a: ArrayView2<C64>) -> Result<(f64, CVec)> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Ok((0.0, Array1::zeros(a.ncols())));
    }
    let (_, s, vt) = a.to_owned().svddc(JobSvd::Some)?;
    let vt = vt.ok_or_else(|| Error::Linalg("missing right singular vectors".into()))?;
    let v = vt.row(0).mapv(|z| z.conj());
    Ok((s[0], v))
}

/// Operator 2-norm. Exact SVD up to [`DENSE_SVD_LIMIT`], power iteration on the
/// normal operator beyond, falling back to SVD if the iteration stalls.
pub fn spectral_norm(a: ArrayView2<C64>) -> Result<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Ok(0.0);
    }
    if a.nrows().max(a.ncols()) <= DENSE_SVD_LIMIT {
        return Ok(singular_values(a)?[0]);
    }
    match power_norm(a, 1e-6, 3000) {
        Some(v) => Ok(v),
        None => Ok(singular_values(a)?[0]),
    }
}

/// Power iteration on `A*A`; `None` if the relative change never drops below `tol`.
pub fn power_norm(a: ArrayView2<C64>, tol: f64, max_iter: usize) -> Option<f64> {
    let n = a.ncols();
    let mut v: CVec = Array1::from_shape_fn(n, |i| {
        C64::new(1.0 + 0.37 * ((i * 7919) % 101) as f64 / 101.0, 0.21 * ((i * 104729) % 37) as f64 / 37.0)
    });
    let nv = vec_norm(v.as_slice().unwrap());
    v.mapv_inplace(|z| z / nv);
    let ah = a.t().mapv(|z| z.conj());
    let mut prev = 0.0;
    for it in 0..max_iter {
        let w = a.dot(&v);
        let sigma = vec_norm(w.as_slice().unwrap());
        if sigma == 0.0 {
            return Some(0.0);
        }
        let mut z = ah.dot(&w);
        let nz = vec_norm(z.as_slice().unwrap());
        if nz == 0.0 {
            return Some(sigma);
        }
        z.mapv_inplace(|c| c / nz);
        v = z;
        if it > 3 && (sigma - prev).abs() <= tol * sigma {
            return Some(sigma);
        }
        prev = sigma;
    }
    None
}

/// Lower Cholesky factor of a Hermitian positive definite matrix.
pub fn cholesky_lower(a: &CMat) -> Result<CMat> {
    Ok(a.cholesky(UPLO::Lower)?)
}

/// Solves `L X = B` for lower-triangular `L`.
pub fn solve_lower(l: &CMat, b: &CMat) -> Result<CMat> {
    Ok(l.solve_triangular(UPLO::Lower, Diag::NonUnit, b)?)
}

pub fn inverse(a: &CMat) -> Result<CMat> {
    Ok(a.inv()?)
}

pub fn random_vector<R: Rng + ?Sized>(n: usize, rng: &mut R) -> CVec {
    Array1::from_shape_fn(n, |_| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(re, im)
    })
}

// ---------------------------------------------------------------------------
// Small fiber matrices, stored row-major in slices of length r*r.

pub fn small_matmul(a: &[C64], b: &[C64], r: usize) -> Vec<C64> {
    let mut out = vec![ZERO; r * r];
    for i in 0..r {
        for k in 0..r {
            let aik = a[i * r + k];
            if aik == ZERO {
                continue;
            }
            for j in 0..r {
                out[i * r + j] += aik * b[k * r + j];
            }
        }
    }
    out
}

pub fn small_adjoint(a: &[C64], r: usize) -> Vec<C64> {
    let mut out = vec![ZERO; r * r];
    for i in 0..r {
        for j in 0..r {
            out[j * r + i] = a[i * r + j].conj();
        }
    }
    out
}

/// Eigenvalues of a small Hermitian matrix by cyclic Jacobi sweeps, ascending.
pub fn small_hermitian_eigenvalues(a: &[C64], r: usize) -> Vec<f64> {
    if r == 1 {
        return vec![a[0].re];
    }
    let mut m = a.to_vec();
    for _sweep in 0..64 {
        let mut off = 0.0;
        let mut diag = 0.0;
        for i in 0..r {
            diag += m[i * r + i].norm_sqr();
            for j in 0..r {
                if i != j {
                    off += m[i * r + j].norm_sqr();
                }
            }
        }
        if off <= 1e-30 * diag.max(1e-300) {
            break;
        }
        for p in 0..r {
            for q in (p + 1)..r {
                let apq = m[p * r + q];
                let mag = apq.norm();
                if mag == 0.0 {
                    continue;
                }
                let phase = apq / mag;
                let app = m[p * r + p].re;
                let aqq = m[q * r + q].re;
                let theta = (aqq - app) / (2.0 * mag);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // U = diag(1, conj(phase)) * [[c, s], [-s, c]] on the (p, q) plane
                let u_pp = C64::new(c, 0.0);
                let u_pq = C64::new(s, 0.0);
                let u_qp = -phase.conj() * s;
                let u_qq = phase.conj() * c;
                // M <- M U
                for k in 0..r {
                    let mkp = m[k * r + p];
                    let mkq = m[k * r + q];
                    m[k * r + p] = mkp * u_pp + mkq * u_qp;
                    m[k * r + q] = mkp * u_pq + mkq * u_qq;
                }
                // M <- U* M
                for k in 0..r {
                    let mpk = m[p * r + k];
                    let mqk = m[q * r + k];
                    m[p * r + k] = u_pp.conj() * mpk + u_qp.conj() * mqk;
                    m[q * r + k] = u_pq.conj() * mpk + u_qq.conj() * mqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..r).map(|i| m[i * r + i].re).collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ev
}

/// Largest and smallest singular values of a small square matrix.
pub fn small_singular_extremes(a: &[C64], r: usize) -> (f64, f64) {
    if r == 1 {
        let v = a[0].norm();
        return (v, v);
    }
    let g = small_matmul(&small_adjoint(a, r), a, r);
    let ev = small_hermitian_eigenvalues(&g, r);
    (ev[r - 1].max(0.0).sqrt(), ev[0].max(0.0).sqrt())
}

pub fn small_spectral_norm(a: &[C64], r: usize) -> f64 {
    small_singular_extremes(a, r).0
}

/// Gauss–Jordan inverse with partial pivoting; `None` when a pivot vanishes.
pub fn small_inverse(a: &[C64], r: usize) -> Option<Vec<C64>> {
    if r == 1 {
        return if a[0] == ZERO { None } else { Some(vec![ONE / a[0]]) };
    }
    let mut m = a.to_vec();
    let mut inv = vec![ZERO; r * r];
    for i in 0..r {
        inv[i * r + i] = ONE;
    }
    for col in 0..r {
        let piv = (col..r)
            .max_by(|&x, &y| m[x * r + col].norm().partial_cmp(&m[y * r + col].norm()).unwrap())
            .unwrap();
        if m[piv * r + col] == ZERO {
            return None;
        }
        if piv != col {
            for k in 0..r {
                m.swap(piv * r + k, col * r + k);
                inv.swap(piv * r + k, col * r + k);
            }
        }
        let d = m[col * r + col];
        for k in 0..r {
            m[col * r + k] /= d;
            inv[col * r + k] /= d;
        }
        for row in 0..r {
            if row == col {
                continue;
            }
            let f = m[row * r + col];
            if f == ZERO {
                continue;
            }
            for k in 0..r {
                let mk = m[col * r + k];
                let ik = inv[col * r + k];
                m[row * r + k] -= f * mk;
                inv[row * r + k] -= f * ik;
            }
        }
    }
    Some(inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_hermitian(n: usize, seed: u64) -> CMat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Array2::from_shape_fn((n, n), |_| {
            C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
        });
        hermitian_part(&a)
    }

    #[test]
    fn eigh_reconstructs() {
        let a = random_hermitian(40, 3);
        let (w, v) = eigh(&a).unwrap();
        let vd = &v * &w.mapv(|x| C64::new(x, 0.0));
        let rec = vd.dot(&adjoint(&v));
        assert!(max_abs((&rec - &a).view()) < 1e-12);
        let g = adjoint(&v).dot(&v);
        assert!(max_abs((&g - &identity(40)).view()) < 1e-12);
        assert!(w.windows(2).into_iter().all(|p| p[0] <= p[1]));
    }

    #[test]
    fn jacobi_matches_lapack() {
        for seed in 0..20 {
            let a = random_hermitian(4, seed);
            let flat: Vec<C64> = a.iter().cloned().collect();
            let ev = small_hermitian_eigenvalues(&flat, 4);
            let (w, _) = eigh(&a).unwrap();
            for (x, y) in ev.iter().zip(w.iter()) {
                assert!((x - y).abs() < 1e-12 * (1.0 + y.abs()), "{ev:?} vs {w}");
            }
        }
    }

    #[test]
    fn small_inverse_roundtrip() {
        let a = [C64::new(2.0, 1.0), C64::new(0.5, 0.0), C64::new(-1.0, 0.3), C64::new(0.0, 3.0)];
        let inv = small_inverse(&a, 2).unwrap();
        let p = small_matmul(&a, &inv, 2);
        assert!((p[0] - ONE).norm() < 1e-14 && p[1].norm() < 1e-14);
        assert!(p[2].norm() < 1e-14 && (p[3] - ONE).norm() < 1e-14);
        assert!(small_inverse(&[ZERO; 4], 2).is_none());
    }

    #[test]
    fn power_iteration_agrees_with_svd() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = Array2::from_shape_fn((60, 45), |_| C64::new(rng.sample(StandardNormal), 0.0));
        let exact = singular_values(a.view()).unwrap()[0];
        let pow = power_norm(a.view(), 1e-12, 20_000).unwrap();
        assert!((exact - pow).abs() < 1e-6 * exact);
    }
}
