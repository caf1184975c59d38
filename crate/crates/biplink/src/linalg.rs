//! Dense linear solves by factorization.
//!
//! Desk-scale replacements for a LAPACK binding: Cholesky for symmetric
//! positive-definite systems and partially pivoted LU as the general
//! fallback. Both solve for multiple right-hand-side columns at once and
//! return `None` when the factorization breaks down, letting callers
//! escalate jitter.

use ndarray::Array2;

/// Solve `A X = B` for symmetric positive-definite `A` via Cholesky.
///
/// Returns `None` if a non-positive pivot shows up (A not PD).
pub fn solve_spd(a: &Array2<f64>, b: &Array2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    assert_eq!(a.ncols(), n, "solve_spd: A must be square");
    assert_eq!(b.nrows(), n, "solve_spd: B row count must match A");

    // Lower-triangular factor, A = L L^T.
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return None;
                }
                l[[i, j]] = s.sqrt();
            } else {
                l[[i, j]] = s / l[[j, j]];
            }
        }
    }

    let m = b.ncols();
    let mut x = b.clone();
    // L y = B (forward), then L^T x = y (backward), column by column.
    for c in 0..m {
        for i in 0..n {
            let mut s = x[[i, c]];
            for k in 0..i {
                s -= l[[i, k]] * x[[k, c]];
            }
            x[[i, c]] = s / l[[i, i]];
        }
        for i in (0..n).rev() {
            let mut s = x[[i, c]];
            for k in (i + 1)..n {
                s -= l[[k, i]] * x[[k, c]];
            }
            x[[i, c]] = s / l[[i, i]];
        }
    }
    Some(x)
}

/// Solve `A X = B` for general square `A` via LU with partial pivoting.
///
/// Returns `None` on a (numerically) singular pivot.
pub fn solve_general(a: &Array2<f64>, b: &Array2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    assert_eq!(a.ncols(), n, "solve_general: A must be square");
    assert_eq!(b.nrows(), n, "solve_general: B row count must match A");

    let mut lu = a.clone();
    let mut x = b.clone();
    let mut perm: Vec<usize> = (0..n).collect();

    for col in 0..n {
        // pivot: largest magnitude in the column at or below the diagonal
        let (pivot_row, pivot_val) = (col..n)
            .map(|r| (r, lu[[r, col]].abs()))
            .fold((col, 0.0), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
        if pivot_val < 1e-300 || !pivot_val.is_finite() {
            return None;
        }
        if pivot_row != col {
            for c in 0..n {
                lu.swap([col, c], [pivot_row, c]);
            }
            perm.swap(col, pivot_row);
            for c in 0..x.ncols() {
                x.swap([col, c], [pivot_row, c]);
            }
        }
        for r in (col + 1)..n {
            let f = lu[[r, col]] / lu[[col, col]];
            lu[[r, col]] = f;
            for c in (col + 1)..n {
                lu[[r, c]] -= f * lu[[col, c]];
            }
        }
    }

    for c in 0..x.ncols() {
        // forward substitution with unit lower triangle
        for i in 0..n {
            let mut s = x[[i, c]];
            for k in 0..i {
                s -= lu[[i, k]] * x[[k, c]];
            }
            x[[i, c]] = s;
        }
        // backward substitution
        for i in (0..n).rev() {
            let mut s = x[[i, c]];
            for k in (i + 1)..n {
                s -= lu[[i, k]] * x[[k, c]];
            }
            x[[i, c]] = s / lu[[i, i]];
        }
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;

    fn rand_spd(n: usize, seed: u64) -> Array2<f64> {
        let mut rng = crate::rng::seeded_rng(seed);
        let m = Array2::from_shape_fn((n, n), |_| rng.random_range(-1.0..1.0));
        let mut a = m.dot(&m.t());
        for i in 0..n {
            a[[i, i]] += n as f64; // diagonally dominant -> PD
        }
        a
    }

    #[test]
    fn spd_solve_recovers_known_solution() {
        let a = array![[4.0, 1.0], [1.0, 3.0]];
        let x_true = array![[1.0, -2.0], [0.5, 3.0]];
        let b = a.dot(&x_true);
        let x = solve_spd(&a, &b).unwrap();
        for (p, q) in x.iter().zip(x_true.iter()) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn spd_solve_rejects_indefinite() {
        let a = array![[1.0, 2.0], [2.0, 1.0]]; // eigenvalues 3, -1
        let b = array![[1.0], [1.0]];
        assert!(solve_spd(&a, &b).is_none());
    }

    #[test]
    fn spd_residuals_small_on_random_instances() {
        for seed in 0..20u64 {
            let n = 2 + (seed as usize % 15);
            let a = rand_spd(n, seed);
            let mut rng = crate::rng::seeded_rng(seed + 1000);
            let b = Array2::from_shape_fn((n, 3), |_| rng.random_range(-2.0..2.0));
            let x = solve_spd(&a, &b).unwrap();
            let r = &a.dot(&x) - &b;
            let rnorm: f64 = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(rnorm < 1e-9, "residual {rnorm} at n={n}");
        }
    }

    #[test]
    fn general_solve_handles_unsymmetric() {
        let a = array![[0.0, 2.0, 1.0], [1.0, -1.0, 0.5], [3.0, 0.1, -2.0]];
        let x_true = array![[1.0], [2.0], [-1.5]];
        let b = a.dot(&x_true);
        let x = solve_general(&a, &b).unwrap();
        for (p, q) in x.iter().zip(x_true.iter()) {
            assert!((p - q).abs() < 1e-10);
        }
    }

    #[test]
    fn general_solve_rejects_singular() {
        let a = array![[1.0, 2.0], [2.0, 4.0]];
        let b = array![[1.0], [1.0]];
        assert!(solve_general(&a, &b).is_none());
    }

    #[test]
    fn solvers_agree_on_spd_systems() {
        for seed in 0..10u64 {
            let a = rand_spd(6, 40 + seed);
            let mut rng = crate::rng::seeded_rng(seed);
            let b = Array2::from_shape_fn((6, 2), |_| rng.random_range(-1.0..1.0));
            let x1 = solve_spd(&a, &b).unwrap();
            let x2 = solve_general(&a, &b).unwrap();
            for (p, q) in x1.iter().zip(x2.iter()) {
                assert!((p - q).abs() < 1e-9);
            }
        }
    }
}
