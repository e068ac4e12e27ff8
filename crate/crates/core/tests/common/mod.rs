#![allow(dead_code)] // shared across test binaries; not every binary uses every oracle

//! Independent oracles shared by the integration suites. Everything here is
//! deliberately brute-force and stays independent of the library's own
//! computation paths.

/// Full numeric Jacobian of `f` at `x` by central differences.
pub fn fd_jacobian(f: &dyn Fn(&[f64]) -> Vec<f64>, x: &[f64], h: f64) -> Vec<Vec<f64>> {
    let out_dim = f(x).len();
    let mut jac = vec![vec![0.0; x.len()]; out_dim];
    for j in 0..x.len() {
        let mut plus = x.to_vec();
        plus[j] += h;
        let mut minus = x.to_vec();
        minus[j] -= h;
        let fp = f(&plus);
        let fm = f(&minus);
        for i in 0..out_dim {
            jac[i][j] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    jac
}

/// log|det| by LU decomposition with partial pivoting.
pub fn lu_log_abs_det(mat: &[Vec<f64>]) -> f64 {
    let n = mat.len();
    let mut a: Vec<Vec<f64>> = mat.to_vec();
    let mut log_det = 0.0;
    for col in 0..n {
        let mut pivot = col;
        for row in col + 1..n {
            if a[row][col].abs() > a[pivot][col].abs() {
                pivot = row;
            }
        }
        if a[pivot][col] == 0.0 {
            return f64::NEG_INFINITY;
        }
        a.swap(col, pivot);
        log_det += a[col][col].abs().ln();
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
        }
    }
    log_det
}

/// Central difference of a scalar function of one parameter.
pub fn central_diff(f: &dyn Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Literal-definition improved precision/recall: full sort per point, k-th
/// smallest squared distance as the manifold radius, membership by linear
/// scan. Matches the library's metric contract (squared Euclidean) but not
/// its code path.
pub fn brute_force_precision_recall(
    gen: &[Vec<f64>],
    real: &[Vec<f64>],
    k: usize,
) -> (f64, f64) {
    fn d2(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
    }
    fn radii(set: &[Vec<f64>], k: usize) -> Vec<f64> {
        set.iter()
            .enumerate()
            .map(|(i, p)| {
                let mut all: Vec<f64> = set
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, q)| d2(p, q))
                    .collect();
                all.sort_by(|a, b| a.partial_cmp(b).unwrap());
                all[k - 1]
            })
            .collect()
    }
    fn inside(queries: &[Vec<f64>], manifold: &[Vec<f64>], radii: &[f64]) -> f64 {
        let mut count = 0;
        for q in queries {
            let mut hit = false;
            for (m, r) in manifold.iter().zip(radii) {
                if d2(q, m) <= *r {
                    hit = true;
                    break;
                }
            }
            if hit {
                count += 1;
            }
        }
        count as f64 / queries.len() as f64
    }
    let rr = radii(real, k);
    let rg = radii(gen, k);
    (inside(gen, real, &rr), inside(real, gen, &rg))
}

/// Relative-error check with an absolute floor for near-zero pairs.
pub fn close_rel(a: f64, b: f64, rel: f64, floor: f64) -> bool {
    let diff = (a - b).abs();
    diff <= rel * a.abs().max(b.abs()).max(floor)
}
