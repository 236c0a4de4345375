//! OCSVM guidance term of the training loss.
//!
//! Each batch of latents is split by position: the first half fits a one-class
//! SVM, the second half is penalized by `Σ max(0, −f(z))` under that fit. The
//! penalty is written twice with different stop-gradient placement:
//!
//! * expander (weight β₁): gradients reach the SVM half (and, optionally, the
//!   dual solution); the loss half is frozen.
//! * compactor (weight β₂): gradients reach the loss half only.
//!
//! Both terms have the same forward value, so β₁ + β₂ = 1 leaves the loss value
//! unchanged and only reroutes gradients.

use std::cell::Cell;
use std::rc::Rc;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::kernel::{GramMatrix, KernelSpec, DEFAULT_JITTER};
use crate::ocsvm::{solve_dual, OcsvmLayer, OcsvmSolution, OcsvmSpec};

/// Smallest batch that gets a guidance term.
pub const MIN_GUIDED_BATCH: usize = 4;

/// Positional halves of an encoded batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchSplit {
    pub z_svm: Tensor,
    pub z_loss: Tensor,
}

/// Sizes of the SVM and loss halves; odd batches give the extra row to the SVM half.
pub fn split_sizes(n: usize) -> Result<(usize, usize)> {
    if n < MIN_GUIDED_BATCH {
        return Err(Error::usage(format!(
            "batch of {n} cannot be split (need at least {MIN_GUIDED_BATCH})"
        )));
    }
    let svm = n.div_ceil(2);
    Ok((svm, n - svm))
}

pub fn split_batch(z: &Tensor) -> Result<BatchSplit> {
    let n = *z.shape().first().ok_or_else(|| Error::usage("split of a 0-d tensor"))?;
    let (m, _) = split_sizes(n)?;
    let rows: Vec<usize> = (0..n).collect();
    Ok(BatchSplit {
        z_svm: z.select_rows(&rows[..m]),
        z_loss: z.select_rows(&rows[m..]),
    })
}

/// Per-epoch plan of expander/compactor weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BetaSchedule {
    /// The same weights every epoch.
    Constant { beta1: f64 },
    /// Expander only for the first half of training, then equal weights.
    ExpandThenBalanced,
    /// Explicit `(β₁, β₂)` per epoch; the last entry repeats.
    PerEpoch { betas: Vec<(f64, f64)> },
}

impl Default for BetaSchedule {
    fn default() -> Self {
        BetaSchedule::ExpandThenBalanced
    }
}

impl BetaSchedule {
    /// Weights for the zero-based `epoch` out of `epochs`.
    pub fn betas(&self, epoch: usize, epochs: usize) -> (f64, f64) {
        match self {
            BetaSchedule::Constant { beta1 } => (*beta1, 1.0 - beta1),
            BetaSchedule::ExpandThenBalanced => {
                if epoch < epochs / 2 {
                    (1.0, 0.0)
                } else {
                    (0.5, 0.5)
                }
            }
            BetaSchedule::PerEpoch { betas } => match betas.get(epoch).or(betas.last()) {
                Some(&b) => b,
                None => (1.0, 0.0),
            },
        }
    }

    fn validate(&self) -> Result<()> {
        let check = |b1: f64, b2: f64| -> Result<()> {
            if !(0.0..=1.0).contains(&b1) || !(0.0..=1.0).contains(&b2) || (b1 + b2 - 1.0).abs() > 1e-12 {
                return Err(Error::usage(format!(
                    "expander/compactor weights ({b1}, {b2}) must be in [0, 1] and sum to 1"
                )));
            }
            Ok(())
        };
        match self {
            BetaSchedule::Constant { beta1 } => check(*beta1, 1.0 - beta1),
            BetaSchedule::ExpandThenBalanced => Ok(()),
            BetaSchedule::PerEpoch { betas } => {
                if betas.is_empty() {
                    return Err(Error::usage("empty per-epoch beta schedule"));
                }
                betas.iter().try_for_each(|&(a, b)| check(a, b))
            }
        }
    }
}

/// Settings of the guidance term.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuidanceConfig {
    pub lambda: f64,
    pub schedule: BetaSchedule,
    /// Let expander gradients flow through the dual solution `(α*, ρ*)`.
    pub expander_through_qp: bool,
    /// Standardize latents (with statistics of the SVM half) before the per-batch fit.
    pub scale_latents: bool,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig {
            lambda: 0.1,
            schedule: BetaSchedule::default(),
            expander_through_qp: true,
            scale_latents: false,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::usage(format!("lambda must be ≥ 0, got {}", self.lambda)));
        }
        self.schedule.validate()
    }
}

/// Guidance term recorded on a graph.
pub struct GuidanceTerm {
    /// Scalar `β₁·E + β₂·C` (forward value equals the penalty).
    pub penalty: Var,
    pub solution: OcsvmSolution,
    /// Set by the backward pass when the implicit gradient needed regularization.
    pub regularized: Option<Rc<Cell<bool>>>,
}

/// Penalty `Σ relu(−f(z_L))` for the rows of `z_l` against the dual `out = [α…, ρ]`.
fn hinge_penalty(g: &mut Graph, kernel: &KernelSpec, z_l: Var, z_svm: Var, out: Var) -> Result<Var> {
    let m = g.value(z_svm).shape()[0];
    let cross = kernel.cross_var(g, z_l, z_svm)?;
    let alpha = g.slice_rows(out, 0, m)?;
    let alpha = g.reshape(alpha, &[m, 1])?;
    let rho = g.slice_rows(out, m, m + 1)?;
    let s = g.matmul(cross, alpha)?;
    let f = g.sub_scalar(s, rho)?;
    let neg = g.neg(f)?;
    let hinge = g.relu(neg)?;
    g.sum(hinge)
}

fn standardize(g: &mut Graph, z: Var, mean: &[f64], std: &[f64]) -> Result<Var> {
    let t = g.value(z);
    let (n, d) = (t.shape()[0], t.shape()[1]);
    let shift = Tensor::new(vec![n, d], (0..n * d).map(|i| -mean[i % d]).collect())?;
    let inv = Tensor::new(vec![n, d], (0..n * d).map(|i| 1.0 / std[i % d]).collect())?;
    let centered = g.add_const(z, &shift)?;
    let inv = g.constant(inv)?;
    g.mul(centered, inv)
}

fn column_stats(t: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let (n, d) = (t.shape()[0], t.shape()[1]);
    let mut mean = vec![0.0; d];
    for r in t.rows() {
        for k in 0..d {
            mean[k] += r[k];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; d];
    for r in t.rows() {
        for k in 0..d {
            var[k] += (r[k] - mean[k]).powi(2);
        }
    }
    let std = var
        .iter()
        .map(|v| {
            let s = (v / n as f64).sqrt();
            if s > 1e-12 {
                s
            } else {
                1.0
            }
        })
        .collect();
    (mean, std)
}

/// Records the guidance term for latents `z: [n, d]` on `g`.
///
/// Returns `Ok(None)` when the batch is too small to split or the per-batch
/// dual could not be solved; the caller skips guidance for that batch.
pub fn guidance_penalty(
    g: &mut Graph,
    z: Var,
    kernel: &KernelSpec,
    nu: f64,
    betas: (f64, f64),
    cfg: &GuidanceConfig,
) -> Result<Option<GuidanceTerm>> {
    let shape = g.value(z).shape().to_vec();
    if shape.len() != 2 {
        return Err(Error::usage(format!("latents must be [n, d], got {shape:?}")));
    }
    let n = shape[0];
    let Ok((m, _)) = split_sizes(n) else {
        return Ok(None);
    };
    let (beta1, beta2) = betas;

    let mut z_svm = g.slice_rows(z, 0, m)?;
    let mut z_l = g.slice_rows(z, m, n)?;
    if cfg.scale_latents {
        let (mean, std) = column_stats(g.value(z_svm));
        z_svm = standardize(g, z_svm, &mean, &std)?;
        z_l = standardize(g, z_l, &mean, &std)?;
    }

    let k_svm = kernel.gram_var(g, z_svm, DEFAULT_JITTER)?;
    let gram = GramMatrix::from_values(m, g.value(k_svm).data().to_vec(), DEFAULT_JITTER)?;
    let spec = OcsvmSpec::new(nu, m)?;
    let solution = match solve_dual(&gram, &spec) {
        Ok(s) => s,
        Err(e @ (Error::Solver { .. } | Error::Numeric(_))) => {
            warn!("per-batch OCSVM failed ({e}); guidance skipped for this batch");
            return Ok(None);
        }
        Err(e) => return Err(e),
    };

    let layer = OcsvmLayer::new(gram, solution.clone());
    let dual_value = layer.output();
    let mut regularized = None;

    let mut terms = Vec::new();
    if beta1 > 0.0 {
        let dual = if cfg.expander_through_qp {
            regularized = Some(layer.regularized_flag());
            g.custom(&[k_svm], dual_value.clone(), Box::new(layer))?
        } else {
            g.constant(dual_value.clone())?
        };
        let z_l_frozen = g.stop_gradient(z_l)?;
        let e = hinge_penalty(g, kernel, z_l_frozen, z_svm, dual)?;
        terms.push(if beta1 == 1.0 { e } else { g.scale(e, beta1)? });
    }
    if beta2 > 0.0 {
        let dual = g.constant(dual_value)?;
        let z_svm_frozen = g.stop_gradient(z_svm)?;
        let c = hinge_penalty(g, kernel, z_l, z_svm_frozen, dual)?;
        terms.push(if beta2 == 1.0 { c } else { g.scale(c, beta2)? });
    }
    let penalty = match terms.as_slice() {
        [single] => *single,
        [a, b] => g.add(*a, *b)?,
        _ => return Err(Error::usage("expander and compactor weights are both zero")),
    };
    Ok(Some(GuidanceTerm {
        penalty,
        solution,
        regularized,
    }))
}

/// Pieces of one batch's training loss.
pub struct LossParts {
    pub total: Var,
    pub reconstruction: f64,
    /// Penalty value before multiplication by λ; `None` when guidance was off or skipped.
    pub guidance: Option<f64>,
    /// The batch was eligible for guidance but its dual failed.
    pub skipped: bool,
    pub term: Option<GuidanceTerm>,
}

/// `Σ‖x − x̂‖² + λ·(β₁·E + β₂·C)` recorded on `g`.
pub fn ogae_loss(
    g: &mut Graph,
    x: Var,
    x_hat: Var,
    z: Var,
    cfg: &GuidanceConfig,
    betas: (f64, f64),
    kernel: &KernelSpec,
    nu: f64,
) -> Result<LossParts> {
    let recon = reconstruction_loss_var(g, x, x_hat)?;
    let reconstruction = g.value(recon).data()[0];
    if cfg.lambda == 0.0 {
        return Ok(LossParts {
            total: recon,
            reconstruction,
            guidance: None,
            skipped: false,
            term: None,
        });
    }
    let n = g.value(z).shape()[0];
    match guidance_penalty(g, z, kernel, nu, betas, cfg)? {
        Some(term) => {
            let value = g.value(term.penalty).data()[0];
            let weighted = g.scale(term.penalty, cfg.lambda)?;
            let total = g.add(recon, weighted)?;
            Ok(LossParts {
                total,
                reconstruction,
                guidance: Some(value),
                skipped: false,
                term: Some(term),
            })
        }
        None => Ok(LossParts {
            total: recon,
            reconstruction,
            guidance: None,
            skipped: n >= MIN_GUIDED_BATCH,
            term: None,
        }),
    }
}

/// `Σᵢ ‖xᵢ − x̂ᵢ‖²` over the whole batch.
pub fn reconstruction_loss_var(g: &mut Graph, x: Var, x_hat: Var) -> Result<Var> {
    let d = g.sub(x, x_hat)?;
    let sq = g.square(d)?;
    g.sum(sq)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn latents(n: usize, d: usize, seed: u64) -> Tensor {
        let data = (0..n * d)
            .map(|i| ((i as f64 + 1.0) * 0.618 + seed as f64).sin())
            .collect();
        Tensor::new(vec![n, d], data).unwrap()
    }

    #[test]
    fn split_positions() {
        let z = Tensor::new(vec![4, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let s = split_batch(&z).unwrap();
        assert_eq!(s.z_svm.data(), &[1.0, 2.0]);
        assert_eq!(s.z_loss.data(), &[3.0, 4.0]);
        assert_eq!(split_sizes(100).unwrap(), (50, 50));
        assert_eq!(split_sizes(5).unwrap(), (3, 2));
        assert!(split_sizes(3).is_err());
    }

    #[test]
    fn default_schedule_switches_at_half() {
        let s = BetaSchedule::default();
        assert_eq!(s.betas(0, 20), (1.0, 0.0));
        assert_eq!(s.betas(9, 20), (1.0, 0.0));
        assert_eq!(s.betas(10, 20), (0.5, 0.5));
        assert_eq!(s.betas(19, 20), (0.5, 0.5));
    }

    #[test]
    fn invalid_weights_rejected() {
        let cfg = GuidanceConfig {
            schedule: BetaSchedule::PerEpoch {
                betas: vec![(0.6, 0.6)],
            },
            ..GuidanceConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = GuidanceConfig {
            lambda: -1.0,
            ..GuidanceConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn penalty_is_hinge_of_decision() {
        // SVM half of two coincident points: α = [½, ½], ρ = 1 + jitter/2.
        let kernel = KernelSpec::rbf(1.0).unwrap();
        let z = Tensor::new(vec![4, 1], vec![0.0, 0.0, 0.0, 3.0]).unwrap();
        let mut g = Graph::new();
        let zv = g.param(z).unwrap();
        let cfg = GuidanceConfig::default();
        let term = guidance_penalty(&mut g, zv, &kernel, 0.5, (1.0, 0.0), &cfg).unwrap().unwrap();
        let rho = term.solution.rho;
        let f_far = (-9.0f64).exp() - rho;
        let f_near = 1.0 - rho;
        let expected = (-f_far).max(0.0) + (-f_near).max(0.0);
        assert!((g.value(term.penalty).data()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn lambda_zero_is_plain_reconstruction() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(vec![0.2, 0.4, 0.6, 0.8])).unwrap();
        let xh = g.constant(Tensor::from_vec(vec![0.0, 0.5, 0.5, 1.0])).unwrap();
        let z = g.param(latents(4, 2, 0)).unwrap();
        let cfg = GuidanceConfig {
            lambda: 0.0,
            ..GuidanceConfig::default()
        };
        let kernel = KernelSpec::rbf(1.0).unwrap();
        let parts = ogae_loss(&mut g, x, xh, z, &cfg, (1.0, 0.0), &kernel, 0.5).unwrap();
        let expected = 0.04 + 0.01 + 0.01 + 0.04;
        assert!((g.value(parts.total).data()[0] - expected).abs() < 1e-15);
        assert!(parts.term.is_none());
    }

    #[test]
    fn tiny_batches_are_not_guided() {
        let mut g = Graph::new();
        let z = g.param(latents(3, 2, 1)).unwrap();
        let kernel = KernelSpec::rbf(1.0).unwrap();
        let t = guidance_penalty(&mut g, z, &kernel, 0.5, (1.0, 0.0), &GuidanceConfig::default()).unwrap();
        assert!(t.is_none());
    }
}
