//! One-sided (Hestenes) Jacobi SVD.
//!
//! Used for every factorization inside the subspace model: the matrices are
//! small or have few columns, and Jacobi stays accurate on exactly
//! rank-deficient input where bidiagonal QR iterations can fail.

use nalgebra::{DMatrix, DVector};

const MAX_SWEEPS: usize = 80;

/// Thin SVD `m = u * diag(s) * v^T`, `s` non-increasing, `u` and `v` with
/// orthonormal columns (`min(rows, cols)` of them).
pub fn thin_svd(m: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let (rows, cols) = m.shape();
    if rows < cols {
        let (u, s, v) = thin_svd(&m.transpose());
        return (v, s, u);
    }
    let mut w = m.clone();
    let mut v = DMatrix::<f64>::identity(cols, cols);
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let alpha = w.column(p).norm_squared();
                let beta = w.column(q).norm_squared();
                let gamma = w.column(p).dot(&w.column(q));
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut w, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let norms: Vec<f64> = (0..cols).map(|j| w.column(j).norm()).collect();
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));

    let mut u = DMatrix::zeros(rows, cols);
    let mut v_sorted = DMatrix::zeros(cols, cols);
    let mut s = DVector::zeros(cols);
    for (k, &j) in order.iter().enumerate() {
        s[k] = norms[j];
        v_sorted.set_column(k, &v.column(j));
        if norms[j] > 0.0 {
            u.set_column(k, &(w.column(j) / norms[j]));
        }
    }
    complete_orthonormal(&mut u, &s);
    (u, s, v_sorted)
}

fn rotate(m: &mut DMatrix<f64>, p: usize, q: usize, c: f64, s: f64) {
    for r in 0..m.nrows() {
        let a = m[(r, p)];
        let b = m[(r, q)];
        m[(r, p)] = c * a - s * b;
        m[(r, q)] = s * a + c * b;
    }
}

/// Replaces the columns belonging to zero singular values with unit vectors
/// orthogonal to all other columns.
fn complete_orthonormal(u: &mut DMatrix<f64>, s: &DVector<f64>) {
    let (rows, cols) = u.shape();
    let max = s.iter().cloned().fold(0.0, f64::max);
    let mut candidate = 0;
    for k in 0..cols {
        if s[k] > 0.0 && s[k] > 1e-300 * max {
            continue;
        }
        loop {
            let mut e = DVector::zeros(rows);
            e[candidate % rows] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for j in 0..cols {
                    if j == k {
                        continue;
                    }
                    let proj = u.column(j).dot(&e);
                    e -= u.column(j) * proj;
                }
            }
            let n = e.norm();
            if n > 1e-8 {
                u.set_column(k, &(e / n));
                break;
            }
            if candidate > 2 * rows + cols {
                break;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check(m: &DMatrix<f64>) {
        let (u, s, v) = thin_svd(m);
        let back = &u * DMatrix::from_diagonal(&s) * v.transpose();
        assert!((back - m).abs().max() < 1e-12, "reconstruction");
        let k = s.len();
        assert!(((u.transpose() * &u) - DMatrix::identity(k, k)).abs().max() < 1e-12);
        assert!(((v.transpose() * &v) - DMatrix::identity(k, k)).abs().max() < 1e-12);
        assert!(s.as_slice().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn rank_deficient_tall() {
        let bg = DVector::from_fn(50, |i, _| 0.3 + 0.4 * ((i as f64) * 0.37).sin().abs());
        check(&DMatrix::from_fn(50, 3, |i, j| bg[i] * (1.0 + 0.1 * j as f64)));
    }

    #[test]
    fn wide_and_zero() {
        check(&DMatrix::from_fn(3, 5, |i, j| ((i * 5 + j) as f64).cos()));
        check(&DMatrix::zeros(4, 2));
        check(&DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]));
    }
}
