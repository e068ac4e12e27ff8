//! Dense matrix helpers for the evaluation metrics.
//!
//! Matrices are flat row-major `&[T]` with explicit dimensions. Only what the
//! Fréchet metric needs lives here: products, traces, and a cyclic Jacobi
//! eigensolver for symmetric matrices.

use num_traits::Float;

pub fn mat_mul<T: Float>(a: &[T], b: &[T], n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            if aik == T::zero() {
                continue;
            }
            for j in 0..n {
                out[i * n + j] = out[i * n + j] + aik * b[k * n + j];
            }
        }
    }
    out
}

pub fn trace<T: Float>(a: &[T], n: usize) -> T {
    (0..n).fold(T::zero(), |acc, i| acc + a[i * n + i])
}

pub fn transpose<T: Float>(a: &[T], n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..n {
            out[j * n + i] = a[i * n + j];
        }
    }
    out
}

/// Largest absolute asymmetry `max |a_ij - a_ji|`.
pub fn symmetry_residual<T: Float>(a: &[T], n: usize) -> T {
    let mut worst = T::zero();
    for i in 0..n {
        for j in (i + 1)..n {
            let d = (a[i * n + j] - a[j * n + i]).abs();
            if d > worst {
                worst = d;
            }
        }
    }
    worst
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns `(eigenvalues, eigenvectors)` with eigenvectors stored as rows of
/// the returned matrix, i.e. `a = V^T diag(w) V`.
pub fn sym_eigen<T: Float>(a: &[T], n: usize) -> (Vec<T>, Vec<T>) {
    assert_eq!(a.len(), n * n, "matrix shape mismatch");
    let mut m = a.to_vec();
    // Symmetrize first; callers tolerate tiny asymmetry.
    for i in 0..n {
        for j in 0..n {
            let avg = (a[i * n + j] + a[j * n + i]) / T::from(2.0).unwrap();
            m[i * n + j] = avg;
        }
    }
    let mut v = vec![T::zero(); n * n];
    for i in 0..n {
        v[i * n + i] = T::one();
    }
    if n <= 1 {
        return (m, v);
    }

    let eps = T::epsilon() * T::from(n as f64).unwrap();
    for _sweep in 0..100 {
        let mut off = T::zero();
        for i in 0..n {
            for j in (i + 1)..n {
                off = off + m[i * n + j] * m[i * n + j];
            }
        }
        let scale = trace(&mat_mul_self_abs_bound(&m, n), n).max(T::one());
        if off.sqrt() <= eps * scale {
            break;
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == T::zero() {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (T::from(2.0).unwrap() * apq);
                let t = {
                    let sign = if theta >= T::zero() { T::one() } else { -T::one() };
                    sign / (theta.abs() + (theta * theta + T::one()).sqrt())
                };
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                // Rotate rows/cols p and q of m.
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                // Accumulate the rotation into v (rows are eigenvectors).
                for k in 0..n {
                    let vpk = v[p * n + k];
                    let vqk = v[q * n + k];
                    v[p * n + k] = c * vpk - s * vqk;
                    v[q * n + k] = s * vpk + c * vqk;
                }
            }
        }
    }
    let w = (0..n).map(|i| m[i * n + i]).collect();
    (w, v)
}

fn mat_mul_self_abs_bound<T: Float>(m: &[T], n: usize) -> Vec<T> {
    // Diagonal |m_ii| used as a crude scale for the convergence test.
    let mut d = vec![T::zero(); n * n];
    for i in 0..n {
        d[i * n + i] = m[i * n + i].abs();
    }
    d
}

/// Symmetric PSD square root via eigendecomposition. Eigenvalues slightly
/// negative from roundoff are clamped to zero; values below `-tol` are an
/// error at the caller's level, so they are reported back.
pub fn sym_sqrt<T: Float>(a: &[T], n: usize) -> (Vec<T>, T) {
    let (w, v) = sym_eigen(a, n);
    let mut min_eig = T::infinity();
    for &wi in &w {
        if wi < min_eig {
            min_eig = wi;
        }
    }
    // sqrt = V^T diag(sqrt(max(w,0))) V
    let mut scaled = vec![T::zero(); n * n];
    for i in 0..n {
        let root = w[i].max(T::zero()).sqrt();
        for j in 0..n {
            scaled[i * n + j] = root * v[i * n + j];
        }
    }
    (mat_mul(&transpose(&v, n), &scaled, n), min_eig)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn eigen_2x2_known() {
        // [[2,1],[1,2]]: eigenvalues 1 and 3.
        let (mut w, _) = sym_eigen(&[2.0, 1.0, 1.0, 2.0], 2);
        w.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_close(w[0], 1.0, 1e-12);
        assert_close(w[1], 3.0, 1e-12);
    }

    #[test]
    fn eigen_reconstructs() {
        let n = 4;
        let a = vec![
            4.0, 1.0, 0.5, 0.0, //
            1.0, 3.0, 0.2, 0.1, //
            0.5, 0.2, 2.0, 0.3, //
            0.0, 0.1, 0.3, 1.0,
        ];
        let (w, v) = sym_eigen(&a, n);
        // rebuild V^T diag(w) V
        let mut dw = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                dw[i * n + j] = w[i] * v[i * n + j];
            }
        }
        let rebuilt = mat_mul(&transpose(&v, n), &dw, n);
        for (x, y) in rebuilt.iter().zip(&a) {
            assert_close(*x, *y, 1e-10);
        }
    }

    #[test]
    fn sqrt_squares_back() {
        let a = vec![4.0, 1.0, 1.0, 2.0];
        let (r, min_eig) = sym_sqrt(&a, 2);
        assert!(min_eig > 0.0);
        let sq = mat_mul(&r, &r, 2);
        for (x, y) in sq.iter().zip(&a) {
            assert_close(*x, *y, 1e-10);
        }
    }
}
