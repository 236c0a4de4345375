//! Small dense LU factorization for the reduced KKT systems.

use crate::error::{Error, Result};

/// Row-major LU factors with partial pivoting.
pub(crate) struct Lu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
}

impl Lu {
    pub fn factor(n: usize, mut a: Vec<f64>) -> Result<Self> {
        debug_assert_eq!(a.len(), n * n);
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        for col in 0..n {
            let (pivot_row, pivot_abs) = (col..n)
                .map(|r| (r, a[r * n + col].abs()))
                .fold((col, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pivot_abs <= scale * 1e-300 || !pivot_abs.is_finite() {
                return Err(Error::numeric(format!("singular {n}×{n} system at column {col}")));
            }
            if pivot_row != col {
                for k in 0..n {
                    a.swap(col * n + k, pivot_row * n + k);
                }
                perm.swap(col, pivot_row);
            }
            let pivot = a[col * n + col];
            for r in col + 1..n {
                let factor = a[r * n + col] / pivot;
                a[r * n + col] = factor;
                if factor != 0.0 {
                    for k in col + 1..n {
                        a[r * n + k] -= factor * a[col * n + k];
                    }
                }
            }
        }
        Ok(Lu { n, lu: a, perm })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for r in 0..n {
            let s: f64 = (0..r).map(|k| self.lu[r * n + k] * x[k]).sum();
            x[r] -= s;
        }
        for r in (0..n).rev() {
            let s: f64 = (r + 1..n).map(|k| self.lu[r * n + k] * x[k]).sum();
            x[r] = (x[r] - s) / self.lu[r * n + r];
        }
        x
    }

    /// Solves `Aᵀ x = b`.
    pub fn solve_transposed(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        // Aᵀ = Uᵀ Lᵀ P, so solve Uᵀ y = b, Lᵀ z = y, x = Pᵀ z.
        let mut y = b.to_vec();
        for r in 0..n {
            let s: f64 = (0..r).map(|k| self.lu[k * n + r] * y[k]).sum();
            y[r] = (y[r] - s) / self.lu[r * n + r];
        }
        for r in (0..n).rev() {
            let s: f64 = (r + 1..n).map(|k| self.lu[k * n + r] * y[k]).sum();
            y[r] -= s;
        }
        let mut x = vec![0.0; n];
        for (i, &p) in self.perm.iter().enumerate() {
            x[p] = y[i];
        }
        x
    }

    pub fn inverse(&self) -> Vec<f64> {
        let n = self.n;
        let mut inv = vec![0.0; n * n];
        let mut e = vec![0.0; n];
        for c in 0..n {
            e.fill(0.0);
            e[c] = 1.0;
            let col = self.solve(&e);
            for r in 0..n {
                inv[r * n + c] = col[r];
            }
        }
        inv
    }
}

pub(crate) fn norm_1(n: usize, a: &[f64]) -> f64 {
    (0..n)
        .map(|c| (0..n).map(|r| a[r * n + c].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// 1-norm condition number; infinite when the matrix is singular.
pub(crate) fn condition_1(n: usize, a: &[f64]) -> f64 {
    match Lu::factor(n, a.to_vec()) {
        Ok(lu) => norm_1(n, a) * norm_1(n, &lu.inverse()),
        Err(_) => f64::INFINITY,
    }
}

/// Solves `A x = b` for a dense row-major `A`.
pub(crate) fn solve(n: usize, a: Vec<f64>, b: &[f64]) -> Result<Vec<f64>> {
    Ok(Lu::factor(n, a)?.solve(b))
}
