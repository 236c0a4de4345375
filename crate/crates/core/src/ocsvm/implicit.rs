//! Gradients of `(α*, ρ*)` with respect to the Gram matrix.
//!
//! With the bound-active coordinates held fixed, the margin set `F` obeys
//!
//! ```text
//! K_FF α_F + K_F,U α_U − ρ·1 = 0,    1ᵀα_F = 1 − |U|/(νn)
//! ```
//!
//! Differentiating gives `M [dα_F; dρ] = [−(dK α)_F; 0]` with
//! `M = [[K_FF, −1], [1ᵀ, 0]]`. For an upstream adjoint `(ḡ_α, ḡ_ρ)` the
//! Gram adjoint is `∂L/∂K_ij = −w_i α_j` for `i ∈ F`, where `w = M⁻ᵀ [ḡ_F; ḡ_ρ]`.
//! The averaged ρ differentiates to the same `dρ` because every margin row
//! satisfies the stationarity equation.

use std::cell::Cell;
use std::rc::Rc;

use super::OcsvmSolution;
use crate::autodiff::{CustomOp, Tensor};
use crate::error::{Error, Result};
use crate::kernel::GramMatrix;
use crate::linalg::{self, Lu};

/// Reduced systems with a larger 1-norm condition number get Tikhonov regularization.
pub const CONDITION_LIMIT: f64 = 1e12;
pub const TIKHONOV: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct ImplicitGradient {
    /// Symmetric `n×n` adjoint of the Gram entries.
    pub d_gram: Vec<f64>,
    pub condition: f64,
    pub regularized: bool,
}

pub fn implicit_grad(
    k: &GramMatrix,
    sol: &OcsvmSolution,
    d_alpha: &[f64],
    d_rho: f64,
) -> Result<ImplicitGradient> {
    let n = k.n();
    if sol.n() != n || d_alpha.len() != n {
        return Err(Error::usage("implicit_grad: size mismatch"));
    }
    let mut d_gram = vec![0.0; n * n];
    let free = &sol.margin_sv_indices;

    if free.is_empty() {
        // α is locally constant; ρ = (Kα)_{i*} for the fallback index.
        let g = k.mul_vec(&sol.alpha);
        let pivot = (0..n)
            .filter(|&i| sol.alpha[i] > 0.0)
            .min_by(|&a, &b| g[a].total_cmp(&g[b]));
        if let Some(i) = pivot {
            for j in 0..n {
                d_gram[i * n + j] += d_rho * sol.alpha[j];
            }
        }
        symmetrize(n, &mut d_gram);
        return Ok(ImplicitGradient {
            d_gram,
            condition: 1.0,
            regularized: false,
        });
    }

    let m = free.len();
    let dim = m + 1;
    let mut mat = vec![0.0; dim * dim];
    for (a, &i) in free.iter().enumerate() {
        for (b, &j) in free.iter().enumerate() {
            mat[a * dim + b] = k.get(i, j);
        }
        mat[a * dim + m] = -1.0;
        mat[m * dim + a] = 1.0;
    }
    let mut condition = linalg::condition_1(dim, &mat);
    let mut regularized = false;
    if !(condition <= CONDITION_LIMIT) {
        for a in 0..m {
            mat[a * dim + a] += TIKHONOV;
        }
        regularized = true;
        condition = linalg::condition_1(dim, &mat);
    }
    let lu = Lu::factor(dim, mat).map_err(|_| {
        Error::numeric(format!(
            "reduced KKT matrix of size {dim} is singular (condition {condition:.3e})"
        ))
    })?;
    let mut upstream: Vec<f64> = free.iter().map(|&i| d_alpha[i]).collect();
    upstream.push(d_rho);
    let w = lu.solve_transposed(&upstream);
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric(format!(
            "non-finite implicit gradient (condition {condition:.3e})"
        )));
    }
    for (a, &i) in free.iter().enumerate() {
        for j in 0..n {
            d_gram[i * n + j] -= w[a] * sol.alpha[j];
        }
    }
    symmetrize(n, &mut d_gram);
    Ok(ImplicitGradient {
        d_gram,
        condition,
        regularized,
    })
}

fn symmetrize(n: usize, d: &mut [f64]) {
    for i in 0..n {
        for j in 0..i {
            let avg = 0.5 * (d[i * n + j] + d[j * n + i]);
            d[i * n + j] = avg;
            d[j * n + i] = avg;
        }
    }
}

/// Graph op mapping a Gram matrix to the vector `[α*₁ … α*ₙ, ρ*]` of its
/// already-solved dual.
pub struct OcsvmLayer {
    gram: GramMatrix,
    solution: OcsvmSolution,
    regularized: Rc<Cell<bool>>,
}

impl OcsvmLayer {
    pub fn new(gram: GramMatrix, solution: OcsvmSolution) -> Self {
        OcsvmLayer {
            gram,
            solution,
            regularized: Rc::new(Cell::new(false)),
        }
    }

    /// Output tensor for the graph.
    pub fn output(&self) -> Tensor {
        let mut v = self.solution.alpha.clone();
        v.push(self.solution.rho);
        Tensor::from_vec(v)
    }

    /// Set once the backward pass needed Tikhonov regularization.
    pub fn regularized_flag(&self) -> Rc<Cell<bool>> {
        Rc::clone(&self.regularized)
    }
}

impl CustomOp for OcsvmLayer {
    fn name(&self) -> &'static str {
        "ocsvm_dual"
    }

    fn backward(&self, _inputs: &[&Tensor], _output: &Tensor, grad_output: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let n = self.gram.n();
        let g = grad_output.data();
        let ig = implicit_grad(&self.gram, &self.solution, &g[..n], g[n])?;
        if ig.regularized {
            self.regularized.set(true);
        }
        Ok(vec![Some(Tensor::new(vec![n, n], ig.d_gram)?)])
    }
}
