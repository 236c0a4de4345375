//! One-class SVM dual:
//!
//! ```text
//! min ½ αᵀKα   s.t.  0 ≤ αᵢ ≤ 1/(νn),  Σαᵢ = 1
//! ```
//!
//! with offset ρ recovered from the margin support vectors and decision
//! function `f(z) = Σ αⱼ k(zⱼ, z) − ρ`.

mod dense;
mod implicit;
mod model;
mod smo;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{GramMatrix, KernelSpec};

pub use implicit::{implicit_grad, ImplicitGradient, OcsvmLayer};
pub use model::{decision, LatentScaler, OcsvmModel, SolutionDiagnostics, SolutionFile, SOLUTION_FORMAT};
pub use smo::LazyKernel;

/// Scaled-unit tolerance separating margin SVs from bound ones.
pub const MARGIN_TOLERANCE: f64 = 1e-7;

/// Above this size `solve_dual` switches from the dense projected-gradient
/// solver to the pairwise (SMO) solver.
pub const DENSE_LIMIT: usize = 1000;

/// Problem parameters of the dual.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OcsvmSpec {
    pub nu: f64,
    pub n: usize,
    /// Solve in `α̃ = nν·α`, whose box is exactly `[0, 1]`.
    pub scaled: bool,
}

impl OcsvmSpec {
    pub fn new(nu: f64, n: usize) -> Result<Self> {
        if !(nu > 0.0 && nu <= 1.0) {
            return Err(Error::usage(format!("nu must lie in (0, 1], got {nu}")));
        }
        if n == 0 {
            return Err(Error::usage("OCSVM needs at least one sample"));
        }
        Ok(OcsvmSpec { nu, n, scaled: true })
    }

    pub fn unscaled(mut self) -> Self {
        self.scaled = false;
        self
    }

    pub fn upper_bound(&self) -> f64 {
        1.0 / (self.nu * self.n as f64)
    }

    /// `nν`: the factor between scaled and unscaled coefficients.
    pub fn scale(&self) -> f64 {
        self.nu * self.n as f64
    }

    /// Box and simplex total in the variables the solver works with.
    pub(crate) fn working_bounds(&self) -> (f64, f64) {
        if self.scaled {
            (1.0, self.scale())
        } else {
            (self.upper_bound(), 1.0)
        }
    }
}

/// Solved dual with support-vector partition and diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OcsvmSolution {
    pub alpha: Vec<f64>,
    pub rho: f64,
    pub nu: f64,
    /// `0 < α̃ᵢ < 1` (within [`MARGIN_TOLERANCE`]).
    pub margin_sv_indices: Vec<usize>,
    /// `α̃ᵢ = 1`.
    pub bound_sv_indices: Vec<usize>,
    /// `αᵢ = 0`.
    pub free_zero_indices: Vec<usize>,
    /// `½ αᵀKα`.
    pub objective: f64,
    pub iterations: usize,
    /// Frank–Wolfe gap `gᵀα − min_{feasible y} gᵀy`; bounds the suboptimality.
    pub primal_dual_gap: f64,
    /// ρ came from the empty-margin fallback rule.
    pub rho_fallback: bool,
}

impl OcsvmSolution {
    pub fn n(&self) -> usize {
        self.alpha.len()
    }

    pub fn upper_bound(&self) -> f64 {
        1.0 / (self.nu * self.alpha.len() as f64)
    }

    /// Indices with `αᵢ > 0`.
    pub fn support_indices(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = self
            .margin_sv_indices
            .iter()
            .chain(&self.bound_sv_indices)
            .copied()
            .collect();
        idx.sort_unstable();
        idx
    }
}

/// Support-vector partition in scaled units.
pub(crate) fn partition(alpha: &[f64], nu: f64) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let scale = nu * alpha.len() as f64;
    let (mut margin, mut bound, mut zero) = (Vec::new(), Vec::new(), Vec::new());
    for (i, &a) in alpha.iter().enumerate() {
        let s = a * scale;
        if s <= MARGIN_TOLERANCE {
            zero.push(i);
        } else if s >= 1.0 - MARGIN_TOLERANCE {
            bound.push(i);
        } else {
            margin.push(i);
        }
    }
    (margin, bound, zero)
}

/// ρ from precomputed `g = Kα`: the mean of `gᵢ` over margin SVs, or the
/// minimum over `αᵢ > 0` when there is no margin SV. Returns `(ρ, fallback)`.
pub(crate) fn rho_from_gradient(alpha: &[f64], g: &[f64], nu: f64) -> (f64, bool) {
    let (margin, _, _) = partition(alpha, nu);
    if !margin.is_empty() {
        let sum: f64 = margin.iter().map(|&i| g[i]).sum();
        return (sum / margin.len() as f64, false);
    }
    let rho = alpha
        .iter()
        .zip(g)
        .filter(|(a, _)| **a > 0.0)
        .map(|(_, gi)| *gi)
        .fold(f64::INFINITY, f64::min);
    (rho, true)
}

/// Offset ρ for coefficients `alpha` on Gram matrix `k`.
pub fn recover_rho(k: &GramMatrix, alpha: &[f64], nu: f64) -> Result<f64> {
    if alpha.len() != k.n() {
        return Err(Error::usage("alpha length differs from Gram size"));
    }
    let g = k.mul_vec(alpha);
    Ok(rho_from_gradient(alpha, &g, nu).0)
}

/// Frank–Wolfe gap over the box ∩ simplex set, in unscaled units.
pub(crate) fn frank_wolfe_gap(alpha: &[f64], g: &[f64], upper: f64) -> f64 {
    let mut order: Vec<usize> = (0..g.len()).collect();
    order.sort_by(|&a, &b| g[a].total_cmp(&g[b]));
    let mut remaining = 1.0f64;
    let mut best = 0.0;
    for i in order {
        if remaining <= 0.0 {
            break;
        }
        let take = remaining.min(upper);
        best += take * g[i];
        remaining -= take;
    }
    let current: f64 = alpha.iter().zip(g).map(|(a, b)| a * b).sum();
    (current - best).max(0.0)
}

/// Assembles the solution record from unscaled coefficients and `g = Kα`.
pub(crate) fn finish(alpha: Vec<f64>, g: &[f64], nu: f64, iterations: usize) -> OcsvmSolution {
    let (rho, rho_fallback) = rho_from_gradient(&alpha, g, nu);
    let (margin, bound, zero) = partition(&alpha, nu);
    let objective = 0.5 * alpha.iter().zip(g).map(|(a, b)| a * b).sum::<f64>();
    let upper = 1.0 / (nu * alpha.len() as f64);
    let primal_dual_gap = frank_wolfe_gap(&alpha, g, upper);
    OcsvmSolution {
        alpha,
        rho,
        nu,
        margin_sv_indices: margin,
        bound_sv_indices: bound,
        free_zero_indices: zero,
        objective,
        iterations,
        primal_dual_gap,
        rho_fallback,
    }
}

/// Exact solution of the dual for a precomputed Gram matrix.
pub fn solve_dual(k: &GramMatrix, spec: &OcsvmSpec) -> Result<OcsvmSolution> {
    if k.n() != spec.n {
        return Err(Error::usage(format!(
            "spec is for n = {}, Gram matrix is {}×{}",
            spec.n,
            k.n(),
            k.n()
        )));
    }
    if k.n() <= DENSE_LIMIT {
        dense::solve(k, spec)
    } else {
        smo::solve(k, spec, &smo::SmoParams::default())
    }
}

/// Solves the dual on latent points without materializing the Gram matrix
/// when `n` is large.
pub fn solve_dual_points(
    kernel: &KernelSpec,
    points: &[&[f64]],
    jitter: f64,
    spec: &OcsvmSpec,
) -> Result<OcsvmSolution> {
    if points.len() != spec.n {
        return Err(Error::usage("spec n differs from the number of points"));
    }
    if points.len() <= DENSE_LIMIT {
        let k = crate::kernel::gram(kernel, points, jitter)?;
        dense::solve(&k, spec)
    } else {
        let lazy = LazyKernel::new(*kernel, points, jitter)?;
        smo::solve(&lazy, spec, &smo::SmoParams::default())
    }
}

/// Solves with the pairwise (SMO) solver regardless of size.
pub fn solve_dual_smo(k: &GramMatrix, spec: &OcsvmSpec) -> Result<OcsvmSolution> {
    if k.n() != spec.n {
        return Err(Error::usage("spec n differs from Gram size"));
    }
    smo::solve(k, spec, &smo::SmoParams::default())
}
