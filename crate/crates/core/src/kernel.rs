//! Kernel functions and Gram matrices.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Jitter added to Gram diagonals unless stated otherwise.
pub const DEFAULT_JITTER: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Rbf,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    /// Inverse squared latent distance.
    pub gamma: f64,
}

impl KernelSpec {
    pub fn rbf(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::usage(format!("RBF gamma must be positive, got {gamma}")));
        }
        Ok(KernelSpec {
            kind: KernelKind::Rbf,
            gamma,
        })
    }

    /// `k(a, b)`.
    pub fn eval(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        if a.len() != b.len() {
            return Err(Error::usage(format!(
                "kernel arguments of dimension {} and {}",
                a.len(),
                b.len()
            )));
        }
        Ok(self.eval_unchecked(a, b))
    }

    pub(crate) fn eval_unchecked(&self, a: &[f64], b: &[f64]) -> f64 {
        match self.kind {
            KernelKind::Rbf => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-self.gamma * d2).exp()
            }
        }
    }

    /// `k(z, z)`, constant for translation-invariant kernels.
    pub fn self_similarity(&self) -> f64 {
        match self.kind {
            KernelKind::Rbf => 1.0,
        }
    }

    /// Cross-kernel matrix `[k(a_i, b_j)]` recorded on a graph.
    pub fn cross_var(&self, g: &mut Graph, a: Var, b: Var) -> Result<Var> {
        match self.kind {
            KernelKind::Rbf => {
                let d2 = g.sq_dist(a, b)?;
                let scaled = g.scale(d2, -self.gamma)?;
                g.exp(scaled)
            }
        }
    }

    /// Gram matrix of the rows of `z` with `jitter` on the diagonal, recorded on a graph.
    pub fn gram_var(&self, g: &mut Graph, z: Var, jitter: f64) -> Result<Var> {
        let k = self.cross_var(g, z, z)?;
        let n = g.value(k).shape()[0];
        let mut diag = Tensor::zeros(&[n, n]);
        for i in 0..n {
            diag.data_mut()[i * n + i] = jitter;
        }
        g.add_const(k, &diag)
    }
}

/// `k(a, b)` for a kernel spec.
pub fn kernel_eval(spec: &KernelSpec, a: &[f64], b: &[f64]) -> Result<f64> {
    spec.eval(a, b)
}

/// Symmetric `n×n` kernel matrix with jitter on the diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct GramMatrix {
    n: usize,
    values: Vec<f64>,
    jitter: f64,
}

impl GramMatrix {
    /// Wraps an existing row-major matrix. Symmetry is checked to 1e-12.
    pub fn from_values(n: usize, values: Vec<f64>, jitter: f64) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::usage(format!("{} values for a {n}×{n} Gram matrix", values.len())));
        }
        for i in 0..n {
            for j in 0..i {
                if (values[i * n + j] - values[j * n + i]).abs() > 1e-12 {
                    return Err(Error::usage(format!("Gram matrix not symmetric at ({i},{j})")));
                }
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("non-finite Gram entry"));
        }
        Ok(GramMatrix { n, values, jitter })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    /// `K·v`.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).iter().zip(v).map(|(k, x)| k * x).sum())
            .collect()
    }
}

/// Builds the jittered Gram matrix of `points` (each a latent vector).
pub fn gram(spec: &KernelSpec, points: &[&[f64]], jitter: f64) -> Result<GramMatrix> {
    let n = points.len();
    if n == 0 {
        return Err(Error::usage("Gram matrix of zero points"));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::usage("latent vectors of different dimensions"));
    }
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        values[i * n + i] = spec.self_similarity() + jitter;
        for j in 0..i {
            let k = spec.eval_unchecked(points[i], points[j]);
            values[i * n + j] = k;
            values[j * n + i] = k;
        }
    }
    Ok(GramMatrix { n, values, jitter })
}

/// Gram matrix of the rows of a `[n, d]` tensor.
pub fn gram_of_rows(spec: &KernelSpec, z: &Tensor, jitter: f64) -> Result<GramMatrix> {
    let rows: Vec<&[f64]> = z.rows().collect();
    gram(spec, &rows, jitter)
}
