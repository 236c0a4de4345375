use serde::{Deserialize, Serialize};

use super::OcsvmSolution;
use crate::error::{Error, Result};
use crate::hash::fingerprint_f64;
use crate::kernel::KernelSpec;

/// Schema tag written into solution files.
pub const SOLUTION_FORMAT: &str = "ogae-ocsvm/1";

/// Decision function restricted to the support vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct OcsvmModel {
    pub kernel: KernelSpec,
    pub support_vectors: Vec<Vec<f64>>,
    pub coefficients: Vec<f64>,
    pub rho: f64,
    pub latent_dim: usize,
}

impl OcsvmModel {
    /// Keeps the training points with `αᵢ > 0`.
    pub fn from_points(sol: &OcsvmSolution, kernel: KernelSpec, points: &[&[f64]]) -> Result<Self> {
        if points.len() != sol.n() {
            return Err(Error::usage(format!(
                "{} training points for a solution over {}",
                points.len(),
                sol.n()
            )));
        }
        let latent_dim = points.first().map(|p| p.len()).unwrap_or(0);
        let support = sol.support_indices();
        Ok(OcsvmModel {
            kernel,
            support_vectors: support.iter().map(|&i| points[i].to_vec()).collect(),
            coefficients: support.iter().map(|&i| sol.alpha[i]).collect(),
            rho: sol.rho,
            latent_dim,
        })
    }

    /// `f(z) = Σ αⱼ k(zⱼ, z) − ρ`: positive inside the estimated support.
    pub fn decision(&self, z: &[f64]) -> Result<f64> {
        if z.len() != self.latent_dim {
            return Err(Error::usage(format!(
                "query of dimension {} for a model over dimension {}",
                z.len(),
                self.latent_dim
            )));
        }
        let s: f64 = self
            .support_vectors
            .iter()
            .zip(&self.coefficients)
            .map(|(sv, a)| a * self.kernel.eval_unchecked(sv, z))
            .sum();
        Ok(s - self.rho)
    }
}

/// `f(z)` evaluated straight from a solution and its training latents.
pub fn decision(sol: &OcsvmSolution, kernel: &KernelSpec, z_train: &[&[f64]], z: &[f64]) -> Result<f64> {
    if z_train.len() != sol.n() {
        return Err(Error::usage("training latents differ from solution size"));
    }
    let mut s = 0.0;
    for (zj, &a) in z_train.iter().zip(&sol.alpha) {
        if a > 0.0 {
            s += a * kernel.eval(zj, z)?;
        }
    }
    Ok(s - sol.rho)
}

/// Per-dimension latent standardization fitted on training latents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl LatentScaler {
    pub fn fit(rows: &[&[f64]]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::usage("cannot fit a scaler on zero rows"));
        }
        let d = rows[0].len();
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(*r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for r in rows {
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
        Ok(LatentScaler { mean, std })
    }

    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionDiagnostics {
    pub objective: f64,
    pub iterations: usize,
    pub primal_dual_gap: f64,
    pub margin_sv_count: usize,
    pub bound_sv_count: usize,
    pub rho_fallback: bool,
}

/// JSON document written by `fit-svm` and read by `score`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionFile {
    pub format: String,
    pub nu: f64,
    pub gamma: f64,
    pub latent_dim: usize,
    pub rho: f64,
    /// Coefficients of every training latent (zeros included).
    pub alpha: Vec<f64>,
    pub support_indices: Vec<usize>,
    /// Latents (after scaling, if any) of the support indices.
    pub support_vectors: Vec<Vec<f64>>,
    /// SHA-256 of the training latents the dual was solved on.
    pub training_fingerprint: String,
    pub scaler: Option<LatentScaler>,
    pub diagnostics: SolutionDiagnostics,
}

impl SolutionFile {
    pub fn new(
        sol: &OcsvmSolution,
        kernel: &KernelSpec,
        points: &[&[f64]],
        scaler: Option<LatentScaler>,
    ) -> Result<Self> {
        let model = OcsvmModel::from_points(sol, *kernel, points)?;
        let flat: Vec<f64> = points.iter().flat_map(|p| p.iter().copied()).collect();
        Ok(SolutionFile {
            format: SOLUTION_FORMAT.to_string(),
            nu: sol.nu,
            gamma: kernel.gamma,
            latent_dim: model.latent_dim,
            rho: sol.rho,
            alpha: sol.alpha.clone(),
            support_indices: sol.support_indices(),
            support_vectors: model.support_vectors,
            training_fingerprint: fingerprint_f64(&flat),
            scaler,
            diagnostics: SolutionDiagnostics {
                objective: sol.objective,
                iterations: sol.iterations,
                primal_dual_gap: sol.primal_dual_gap,
                margin_sv_count: sol.margin_sv_indices.len(),
                bound_sv_count: sol.bound_sv_indices.len(),
                rho_fallback: sol.rho_fallback,
            },
        })
    }

    pub fn model(&self) -> Result<OcsvmModel> {
        if self.format != SOLUTION_FORMAT {
            return Err(Error::format(format!("unknown solution format {:?}", self.format)));
        }
        if self.support_indices.len() != self.support_vectors.len() {
            return Err(Error::format("support index/vector count mismatch"));
        }
        let coefficients = self
            .support_indices
            .iter()
            .map(|&i| {
                self.alpha
                    .get(i)
                    .copied()
                    .ok_or_else(|| Error::format("support index out of range"))
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(OcsvmModel {
            kernel: KernelSpec::rbf(self.gamma)?,
            support_vectors: self.support_vectors.clone(),
            coefficients,
            rho: self.rho,
            latent_dim: self.latent_dim,
        })
    }

    /// Scores raw latents (scaling applied when the file carries a scaler).
    pub fn decision(&self, model: &OcsvmModel, z: &[f64]) -> Result<f64> {
        match &self.scaler {
            Some(s) => model.decision(&s.apply(z)),
            None => model.decision(z),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{gram, DEFAULT_JITTER};
    use crate::ocsvm::{solve_dual, OcsvmSpec};

    fn fitted() -> (OcsvmSolution, KernelSpec, Vec<Vec<f64>>) {
        let pts: Vec<Vec<f64>> = (0..10)
            .map(|i| vec![(i as f64 * 1.3).sin(), (i as f64 * 0.4).cos()])
            .collect();
        let refs: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
        let kernel = KernelSpec::rbf(1.5).unwrap();
        let k = gram(&kernel, &refs, DEFAULT_JITTER).unwrap();
        let sol = solve_dual(&k, &OcsvmSpec::new(0.3, 10).unwrap()).unwrap();
        (sol, kernel, pts)
    }

    #[test]
    fn margin_support_vectors_sit_on_the_boundary() {
        let (sol, kernel, pts) = fitted();
        let refs: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
        assert!(!sol.margin_sv_indices.is_empty());
        for &i in &sol.margin_sv_indices {
            let f = decision(&sol, &kernel, &refs, &pts[i]).unwrap();
            // The training Gram carries jitter on its diagonal; queries do not.
            assert!(f.abs() < 1e-6, "f = {f}");
        }
    }

    #[test]
    fn far_queries_score_minus_rho() {
        let (sol, kernel, pts) = fitted();
        let refs: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
        let model = OcsvmModel::from_points(&sol, kernel, &refs).unwrap();
        let f = model.decision(&[1e3, -1e3]).unwrap();
        assert!(sol.rho > 0.0);
        assert_eq!(f, -sol.rho);
    }

    #[test]
    fn model_and_direct_decision_agree() {
        let (sol, kernel, pts) = fitted();
        let refs: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
        let model = OcsvmModel::from_points(&sol, kernel, &refs).unwrap();
        for q in [[0.1, 0.2], [0.9, -0.4]] {
            let a = model.decision(&q).unwrap();
            let b = decision(&sol, &kernel, &refs, &q).unwrap();
            assert!((a - b).abs() < 1e-14);
        }
        assert!(model.decision(&[0.0]).is_err());
    }

    #[test]
    fn solution_file_json_roundtrip() {
        let (sol, kernel, pts) = fitted();
        let refs: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
        let file = SolutionFile::new(&sol, &kernel, &refs, None).unwrap();
        let text = serde_json::to_string(&file).unwrap();
        let back: SolutionFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back, file);
        let m = back.model().unwrap();
        let direct = OcsvmModel::from_points(&sol, kernel, &refs).unwrap();
        assert_eq!(m, direct);
    }

    #[test]
    fn scaler_standardizes() {
        let rows: [&[f64]; 3] = [&[1.0, 5.0], &[2.0, 5.0], &[3.0, 5.0]];
        let s = LatentScaler::fit(&rows).unwrap();
        assert_eq!(s.mean, vec![2.0, 5.0]);
        assert_eq!(s.std[1], 1.0);
        let z = s.apply(&[3.0, 5.0]);
        assert!((z[0] - 1.0 / (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(z[1], 0.0);
    }
}
