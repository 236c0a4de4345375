//! Two-phase procedure: guided autoencoder training followed by one OCSVM fit
//! on all encoded training data, plus baselines, scoring, manifests and the
//! validation-set hyperparameter search.

mod anomaly_map;
mod search;
mod train;

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data::{anomaly_labels, Experiment1Options, Experiment1Splits, LabeledImageSet};
use crate::error::{Error, Result};
use crate::guidance::GuidanceConfig;
use crate::kernel::{KernelSpec, DEFAULT_JITTER};
use crate::metrics::{curve_metrics, CurveMetrics};
use crate::models::{per_sample_mse, Architecture, Autoencoder};
use crate::ocsvm::{solve_dual_points, LatentScaler, OcsvmSolution, OcsvmSpec, SolutionFile};

pub use anomaly_map::{aggregate_map, map_quantile, patch_anomaly_map, AGGREGATION_QUANTILE};
pub use search::{hyperparameter_search, select_best, CellResult, SearchGrid, SearchOutcome};
pub use train::{epoch_order, mean_pairwise_mse, train_ogae, EpochLog, TrainOutcome, TrainingLog, MAX_SKIPPED_FRACTION};

pub const MANIFEST_FORMAT: &str = "ogae-manifest/1";

/// Training, per-batch and final OCSVM hyperparameters of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub architecture: Architecture,
    /// Architecture default when absent.
    pub latent_dim: Option<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Early-stopping patience in epochs; `None` trains every epoch.
    pub patience: Option<usize>,
    /// Seed of weight init and batch shuffling.
    pub seed: u64,
    pub guidance: GuidanceConfig,
    /// ν of both the per-batch and the final OCSVM.
    pub nu: f64,
    /// RBF width of both the per-batch and the final OCSVM.
    pub gamma: f64,
    /// Standardize latents before the final OCSVM fit.
    pub scale_latents: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            architecture: Architecture::DigitAe,
            latent_dim: None,
            epochs: 20,
            batch_size: 100,
            learning_rate: 1e-3,
            patience: Some(5),
            seed: 0,
            guidance: GuidanceConfig::default(),
            nu: 0.1,
            gamma: 0.1,
            scale_latents: false,
        }
    }
}

impl TrainConfig {
    pub fn latent_dim(&self) -> usize {
        self.latent_dim.unwrap_or(self.architecture.default_latent_dim())
    }

    pub fn kernel(&self) -> Result<KernelSpec> {
        KernelSpec::rbf(self.gamma)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size < 2 {
            return Err(Error::usage("need at least one epoch and batches of two or more"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::usage("learning rate must be positive"));
        }
        if !(self.nu > 0.0 && self.nu <= 1.0) {
            return Err(Error::usage(format!("nu must lie in (0, 1], got {}", self.nu)));
        }
        self.kernel()?;
        self.guidance.validate()
    }
}

/// The four compared scorers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    AeRecons,
    AeOcsvm,
    OgaeOcsvm,
    OgaeRecons,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::AeRecons, Method::AeOcsvm, Method::OgaeOcsvm, Method::OgaeRecons];

    pub fn id(self) -> &'static str {
        match self {
            Method::AeRecons => "ae-recons",
            Method::AeOcsvm => "ae-ocsvm",
            Method::OgaeOcsvm => "ogae-ocsvm",
            Method::OgaeRecons => "ogae-recons",
        }
    }

    pub fn from_id(id: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.id() == id)
            .ok_or_else(|| Error::usage(format!("unknown method {id:?}")))
    }

    pub fn guided(self) -> bool {
        matches!(self, Method::OgaeOcsvm | Method::OgaeRecons)
    }

    pub fn uses_ocsvm(self) -> bool {
        matches!(self, Method::AeOcsvm | Method::OgaeOcsvm)
    }

    /// `cfg` with guidance switched off for the plain autoencoder methods.
    pub fn effective_config(self, cfg: &TrainConfig) -> TrainConfig {
        let mut c = cfg.clone();
        if !self.guided() {
            c.guidance.lambda = 0.0;
        }
        c
    }
}

/// Final OCSVM fit on every encoded training sample.
pub fn fit_final_ocsvm(model: &Autoencoder, data: &LabeledImageSet, cfg: &TrainConfig) -> Result<(SolutionFile, OcsvmSolution)> {
    let z = model.encode(&data.to_tensor())?;
    fit_ocsvm_on_latents(&z, cfg.nu, &cfg.kernel()?, cfg.scale_latents)
}

pub fn fit_ocsvm_on_latents(z: &Tensor, nu: f64, kernel: &KernelSpec, scale: bool) -> Result<(SolutionFile, OcsvmSolution)> {
    let raw: Vec<&[f64]> = z.rows().collect();
    let scaler = if scale { Some(LatentScaler::fit(&raw)?) } else { None };
    let scaled: Vec<Vec<f64>>;
    let points: Vec<&[f64]> = match &scaler {
        Some(s) => {
            scaled = raw.iter().map(|r| s.apply(r)).collect();
            scaled.iter().map(|r| r.as_slice()).collect()
        }
        None => raw,
    };
    let spec = OcsvmSpec::new(nu, points.len())?;
    let sol = solve_dual_points(kernel, &points, DEFAULT_JITTER, &spec)?;
    let file = SolutionFile::new(&sol, kernel, &points, scaler)?;
    Ok((file, sol))
}

/// Reconstruction (mean squared error per sample) and OCSVM (`−f(z)`) scores
/// of `set`; higher means more anomalous for both.
#[derive(Clone, Debug, PartialEq)]
pub struct SetScores {
    pub recons: Vec<f64>,
    pub ocsvm: Option<Vec<f64>>,
}

pub fn score_set(model: &Autoencoder, solution: Option<&SolutionFile>, set: &LabeledImageSet) -> Result<SetScores> {
    const CHUNK: usize = 2000;
    let ocsvm_model = solution.map(|s| s.model()).transpose()?;
    let mut recons = Vec::with_capacity(set.len());
    let mut ocsvm = solution.map(|_| Vec::with_capacity(set.len()));
    let idx: Vec<usize> = (0..set.len()).collect();
    for chunk in idx.chunks(CHUNK) {
        let x = set.batch(chunk);
        let z = model.encode(&x)?;
        let xh = model.decode(&z)?;
        recons.extend(per_sample_mse(&x, &xh)?);
        if let (Some(out), Some(file), Some(m)) = (ocsvm.as_mut(), solution, ocsvm_model.as_ref()) {
            for r in z.rows() {
                out.push(-file.decision(m, r)?);
            }
        }
    }
    if recons.iter().chain(ocsvm.iter().flatten()).any(|v| !v.is_finite()) {
        return Err(Error::numeric("non-finite anomaly score"));
    }
    Ok(SetScores { recons, ocsvm })
}

/// Scores of one method on the validation and test sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodScores {
    pub method: Method,
    pub validation: Vec<f64>,
    pub test: Vec<f64>,
    pub metrics: MetricBlock,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricBlock {
    pub validation: CurveMetrics,
    pub test: CurveMetrics,
}

/// One trained autoencoder with its final OCSVM and both scorers.
pub struct TrainedRun {
    pub config: TrainConfig,
    pub outcome: TrainOutcome,
    pub solution: SolutionFile,
    pub recons: MethodScores,
    pub ocsvm: MethodScores,
    pub seconds: f64,
}

impl TrainedRun {
    pub fn scores(&self, method: Method) -> &MethodScores {
        if method.uses_ocsvm() {
            &self.ocsvm
        } else {
            &self.recons
        }
    }
}

/// Trains with `cfg`, fits the final OCSVM on train ∪ early-stop and scores
/// the validation and test sets with both scorers. `guided` picks the
/// method names (ogae-* or ae-*); an unguided run ignores λ.
pub fn run_training(cfg: &TrainConfig, guided: bool, splits: &Experiment1Splits, outlier: u8) -> Result<TrainedRun> {
    let start = Instant::now();
    let (m_ocsvm, m_recons) = if guided {
        (Method::OgaeOcsvm, Method::OgaeRecons)
    } else {
        (Method::AeOcsvm, Method::AeRecons)
    };
    let cfg = m_ocsvm.effective_config(cfg);
    let outcome = train_ogae(&splits.train, &splits.earlystop, &cfg)?;
    let (solution, _) = fit_final_ocsvm(&outcome.model, &splits.full_train(), &cfg)?;
    let val = score_set(&outcome.model, Some(&solution), &splits.val)?;
    let test = score_set(&outcome.model, Some(&solution), &splits.test)?;
    let yv = anomaly_labels(&splits.val, outlier);
    let yt = anomaly_labels(&splits.test, outlier);
    let make = |method: Method, v: Vec<f64>, t: Vec<f64>| -> Result<MethodScores> {
        let metrics = MetricBlock {
            validation: curve_metrics(&v, &yv)?,
            test: curve_metrics(&t, &yt)?,
        };
        Ok(MethodScores {
            method,
            validation: v,
            test: t,
            metrics,
        })
    };
    let recons = make(m_recons, val.recons, test.recons)?;
    let ocsvm = make(m_ocsvm, val.ocsvm.expect("solution given"), test.ocsvm.expect("solution given"))?;
    Ok(TrainedRun {
        config: cfg,
        outcome,
        solution,
        recons,
        ocsvm,
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitFingerprints {
    pub train: String,
    pub earlystop: String,
    pub validation: String,
    pub test: String,
}

impl SplitFingerprints {
    pub fn of(splits: &Experiment1Splits) -> Self {
        SplitFingerprints {
            train: splits.train.fingerprint(),
            earlystop: splits.earlystop.fingerprint(),
            validation: splits.val.fingerprint(),
            test: splits.test.fingerprint(),
        }
    }
}

/// A file written by the pipeline and its SHA-256.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRef {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to rerun one method and the metrics it produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub format: String,
    pub method: Method,
    pub config: TrainConfig,
    pub data: Experiment1Options,
    pub fingerprints: SplitFingerprints,
    #[serde(default)]
    pub artifacts: BTreeMap<String, ArtifactRef>,
    pub metrics: Option<MetricBlock>,
    pub best_epoch: Option<usize>,
    pub wall_clock_seconds: f64,
}

impl ExperimentManifest {
    pub fn new(method: Method, config: &TrainConfig, data: &Experiment1Options, splits: &Experiment1Splits) -> Self {
        ExperimentManifest {
            format: MANIFEST_FORMAT.to_string(),
            method,
            config: method.effective_config(config),
            data: data.clone(),
            fingerprints: SplitFingerprints::of(splits),
            artifacts: BTreeMap::new(),
            metrics: None,
            best_epoch: None,
            wall_clock_seconds: 0.0,
        }
    }

    pub fn from_run(method: Method, run: &TrainedRun, data: &Experiment1Options, splits: &Experiment1Splits) -> Self {
        let mut m = ExperimentManifest::new(method, &run.config, data, splits);
        m.metrics = Some(run.scores(method).metrics);
        m.best_epoch = Some(run.outcome.log.best_epoch);
        m.wall_clock_seconds = run.seconds;
        m
    }

    pub fn check_format(&self) -> Result<()> {
        if self.format != MANIFEST_FORMAT {
            return Err(Error::format(format!("unknown manifest format {:?}", self.format)));
        }
        Ok(())
    }

    /// Refuses splits whose content differs from the recorded fingerprints.
    pub fn check_splits(&self, splits: &Experiment1Splits) -> Result<()> {
        let now = SplitFingerprints::of(splits);
        if now != self.fingerprints {
            return Err(Error::Data("dataset splits differ from the manifest fingerprints".into()));
        }
        Ok(())
    }
}

/// Reruns the manifest's method on `splits` and returns the fresh metrics.
pub fn rerun_manifest(manifest: &ExperimentManifest, splits: &Experiment1Splits) -> Result<MetricBlock> {
    manifest.check_format()?;
    manifest.check_splits(splits)?;
    let run = run_training(&manifest.config, manifest.method.guided(), splits, manifest.data.outlier)?;
    Ok(run.scores(manifest.method).metrics)
}
