//! Hermitian matrix utilities: the real svec coordinate map, eigenvalue
//! helpers, and rank-one extraction.
//!
//! A hermitian n x n matrix is identified with a real vector of length n^2
//! laid out column by column: the (real) diagonal entry first, then for each
//! strictly-lower entry the pair (sqrt(2) Re, sqrt(2) Im). The scaling makes
//! the map an isometry: `svec(A) . svec(B) = Re tr(A B)` for hermitian A, B,
//! so trace functionals are plain dot products in svec coordinates.

use crate::{C64, CMat, CVec, Error, Result};
use nalgebra::DVector;

const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Length of the svec image of a hermitian `n x n` matrix.
pub fn svec_dim(n: usize) -> usize {
    n * n
}

/// Pack a hermitian matrix into svec coordinates. Only the lower triangle is
/// read; the caller is responsible for hermitian input.
pub fn svec(a: &CMat) -> DVector<f64> {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols());
    let mut out = DVector::zeros(svec_dim(n));
    let mut idx = 0;
    for j in 0..n {
        out[idx] = a[(j, j)].re;
        idx += 1;
        for i in j + 1..n {
            out[idx] = SQRT2 * a[(i, j)].re;
            out[idx + 1] = SQRT2 * a[(i, j)].im;
            idx += 2;
        }
    }
    out
}

/// Inverse of [`svec`].
pub fn smat(v: &[f64], n: usize) -> CMat {
    debug_assert_eq!(v.len(), svec_dim(n));
    let mut a = CMat::zeros(n, n);
    let mut idx = 0;
    for j in 0..n {
        a[(j, j)] = C64::new(v[idx], 0.0);
        idx += 1;
        for i in j + 1..n {
            let re = v[idx] / SQRT2;
            let im = v[idx + 1] / SQRT2;
            a[(i, j)] = C64::new(re, im);
            a[(j, i)] = C64::new(re, -im);
            idx += 2;
        }
    }
    a
}

/// (A + A^H)/2.
pub fn hermitian_part(a: &CMat) -> CMat {
    (a + a.adjoint()).scale(0.5)
}

/// Max-norm deviation from hermitian symmetry.
pub fn hermitian_defect(a: &CMat) -> f64 {
    let d = a - a.adjoint();
    d.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Eigendecomposition of a hermitian matrix, eigenvalues ascending.
pub fn eigh(a: &CMat) -> (DVector<f64>, CMat) {
    let se = a.clone().symmetric_eigen();
    let n = a.nrows();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.sort_by(|&i, &j| se.eigenvalues[i].partial_cmp(&se.eigenvalues[j]).unwrap());
    let vals = DVector::from_iterator(n, perm.iter().map(|&i| se.eigenvalues[i]));
    let mut vecs = CMat::zeros(n, n);
    for (dst, &src) in perm.iter().enumerate() {
        vecs.set_column(dst, &se.eigenvectors.column(src));
    }
    (vals, vecs)
}

/// Smallest eigenvalue of a hermitian matrix.
pub fn min_eig(a: &CMat) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    let (vals, _) = eigh(a);
    vals[0]
}

/// Largest eigenvalue and a unit eigenvector of a hermitian matrix.
///
/// Rejects inputs whose hermitian defect exceeds `1e-8 * max(1, ||a||)`.
pub fn max_eigpair(a: &CMat) -> Result<(f64, CVec)> {
    let n = a.nrows();
    if n == 0 || n != a.ncols() {
        return Err(Error::Dimension(format!("max_eigpair on {}x{}", n, a.ncols())));
    }
    let scale = a.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1.0);
    if hermitian_defect(a) > 1e-8 * scale {
        return Err(Error::Domain("matrix is not hermitian".into()));
    }
    let (vals, vecs) = eigh(&hermitian_part(a));
    let k = n - 1;
    Ok((vals[k], vecs.column(k).into_owned()))
}

/// Recover a vector from a (nearly) rank-one PSD matrix.
///
/// Returns `w = sqrt(lambda_max) e_max` with the first significant entry
/// rotated to the nonnegative real axis, together with the rank-one residual
/// `1 - lambda_max / tr(W)`. A zero-trace input yields the zero vector with
/// residual 0.
pub fn rank_one_extract(w: &CMat) -> (CVec, f64) {
    let n = w.nrows();
    let trace: f64 = (0..n).map(|i| w[(i, i)].re).sum();
    if trace <= 0.0 {
        return (CVec::zeros(n), 0.0);
    }
    let (vals, vecs) = eigh(&hermitian_part(w));
    let lam = vals[n - 1].max(0.0);
    let mut v: CVec = vecs.column(n - 1).into_owned() * C64::new(lam.sqrt(), 0.0);
    // global phase: first entry carrying weight becomes real nonnegative
    let norm = v.norm();
    if norm > 0.0 {
        if let Some(i) = (0..n).find(|&i| v[i].norm() > 1e-12 * norm) {
            let phase = v[i] / C64::new(v[i].norm(), 0.0);
            v /= phase;
        }
    }
    (v, 1.0 - lam / trace)
}

/// Hermitian square root via eigendecomposition. Negative eigenvalues within
/// roundoff of zero are clamped.
pub fn sqrtm(a: &CMat) -> CMat {
    let (vals, vecs) = eigh(a);
    let d = CMat::from_diagonal(&vals.map(|x| C64::new(x.max(0.0).sqrt(), 0.0)));
    &vecs * d * vecs.adjoint()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_hermitian(n: usize, rng: &mut ChaCha8Rng) -> CMat {
        let raw = CMat::from_fn(n, n, |_, _| {
            C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        hermitian_part(&raw)
    }

    #[test]
    fn svec_is_an_isometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let a = random_hermitian(5, &mut rng);
            let b = random_hermitian(5, &mut rng);
            let dot = svec(&a).dot(&svec(&b));
            let tr = (&a * &b).trace();
            assert_relative_eq!(dot, tr.re, max_relative = 1e-12);
            assert!(tr.im.abs() < 1e-12);
        }
    }

    #[test]
    fn svec_smat_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = random_hermitian(6, &mut rng);
        let back = smat(svec(&a).as_slice(), 6);
        assert!((&a - &back).norm() < 1e-14);
    }

    #[test]
    fn max_eigpair_identity_degenerate() {
        let a = CMat::identity(3, 3);
        let (lam, e) = max_eigpair(&a).unwrap();
        assert_relative_eq!(lam, 1.0, epsilon = 1e-12);
        let r = &a * &e - e.scale(lam);
        assert!(r.norm() <= 1e-10 * 3f64.sqrt());
    }

    #[test]
    fn max_eigpair_diagonal() {
        let a = CMat::from_diagonal(&CVec::from_vec(vec![
            C64::new(1.0, 0.0),
            C64::new(3.0, 0.0),
            C64::new(2.0, 0.0),
        ]));
        let (lam, e) = max_eigpair(&a).unwrap();
        assert_relative_eq!(lam, 3.0, epsilon = 1e-12);
        assert_relative_eq!(e[1].norm(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn max_eigpair_matches_full_decomposition() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let a = random_hermitian(8, &mut rng);
            let (lam, e) = max_eigpair(&a).unwrap();
            let scale = a.norm();
            let r = &a * &e - e.scale(lam);
            assert!(r.norm() <= 1e-10 * scale.max(1.0));
            let (vals, _) = eigh(&a);
            assert_relative_eq!(lam, vals[7], epsilon = 1e-10);
        }
    }

    #[test]
    fn max_eigpair_rejects_non_hermitian() {
        let a = CMat::from_row_slice(2, 2, &[
            C64::new(1.0, 0.0),
            C64::new(1.0, 0.0),
            C64::new(0.0, 0.0),
            C64::new(1.0, 0.0),
        ]);
        assert!(max_eigpair(&a).is_err());
    }

    #[test]
    fn rank_one_round_trip() {
        let w0 = CVec::from_vec(vec![C64::new(1.0, 0.0), C64::new(0.0, 1.0)]);
        let w = &w0 * w0.adjoint();
        let (v, res) = rank_one_extract(&w);
        assert!(res.abs() < 1e-12);
        // equal up to global phase; first entry was real positive already
        assert!((v - w0).norm() < 1e-10);
    }

    #[test]
    fn rank_one_identity_flags_half_residual() {
        let (_, res) = rank_one_extract(&CMat::identity(2, 2));
        assert_relative_eq!(res, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn rank_one_zero_trace() {
        let (v, res) = rank_one_extract(&CMat::zeros(3, 3));
        assert_eq!(res, 0.0);
        assert!(v.norm() == 0.0);
    }

    #[test]
    fn sqrtm_squares_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let a = random_hermitian(5, &mut rng);
        let psd = &a * a.adjoint(); // PSD
        let r = sqrtm(&psd);
        assert!((&r * &r - &psd).norm() < 1e-10 * psd.norm().max(1.0));
    }
}
