//! Ranking metrics for anomaly scores (higher = more anomalous, `true` =
//! anomalous) and the paired bootstrap comparison of several scorers.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper false-positive rate of the partial ROC area.
pub const PARTIAL_FPR: f64 = 0.3;
/// Family-wise significance level before Bonferroni correction.
pub const BASE_LEVEL: f64 = 0.01;
pub const DEFAULT_RESAMPLES: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Auroc,
    Auroc30,
    Aupr,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Auroc, Metric::Auroc30, Metric::Aupr];

    pub fn label(self) -> &'static str {
        match self {
            Metric::Auroc => "AUROC",
            Metric::Auroc30 => "AUROC30",
            Metric::Aupr => "AUPR",
        }
    }
}

/// All curve summaries of one scored set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveMetrics {
    pub auroc: f64,
    pub aupr: f64,
    /// Raw area under the ROC curve for FPR in `[0, 0.3]`.
    pub partial_auc: f64,
    /// McClish-standardized partial area: 0.5 for the diagonal, 1 for perfect.
    pub auroc30: f64,
}

impl CurveMetrics {
    pub fn get(&self, m: Metric) -> f64 {
        match m {
            Metric::Auroc => self.auroc,
            Metric::Auroc30 => self.auroc30,
            Metric::Aupr => self.aupr,
        }
    }
}

fn validate(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::usage(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(v) = scores.iter().find(|v| !v.is_finite()) {
        return Err(Error::numeric(format!("non-finite anomaly score {v}")));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::usage("ranking metrics need both normal and anomalous samples"));
    }
    Ok(())
}

/// Indices sorted by descending score.
fn descending_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// McClish standardization of a partial area over FPR in `[0, PARTIAL_FPR]`.
pub fn mcclish(partial_auc: f64) -> f64 {
    let min = 0.5 * PARTIAL_FPR * PARTIAL_FPR;
    let max = PARTIAL_FPR;
    0.5 * (1.0 + (partial_auc - min) / (max - min))
}

/// Sweep over tie groups in `order` with per-item multiplicities `weights`.
fn sweep(scores: &[f64], labels: &[bool], order: &[usize], weights: Option<&[u32]>) -> Option<CurveMetrics> {
    let w = |i: usize| weights.map_or(1.0, |w| w[i] as f64);
    let (mut p_total, mut n_total) = (0.0, 0.0);
    for &i in order {
        if labels[i] {
            p_total += w(i);
        } else {
            n_total += w(i);
        }
    }
    if p_total == 0.0 || n_total == 0.0 {
        return None;
    }
    let (mut tp, mut fp) = (0.0f64, 0.0f64);
    let (mut auc, mut ap, mut pauc) = (0.0, 0.0, 0.0);
    let mut k = 0;
    while k < order.len() {
        let s = scores[order[k]];
        let (mut dtp, mut dfp) = (0.0, 0.0);
        while k < order.len() && scores[order[k]] == s {
            let i = order[k];
            if labels[i] {
                dtp += w(i);
            } else {
                dfp += w(i);
            }
            k += 1;
        }
        if dtp == 0.0 && dfp == 0.0 {
            continue;
        }
        let (tpr0, fpr0) = (tp / p_total, fp / n_total);
        tp += dtp;
        fp += dfp;
        let (tpr1, fpr1) = (tp / p_total, fp / n_total);
        auc += (fpr1 - fpr0) * (tpr0 + tpr1) / 2.0;
        if dtp > 0.0 {
            ap += (dtp / p_total) * tp / (tp + fp);
        }
        if fpr0 < PARTIAL_FPR {
            let hi = fpr1.min(PARTIAL_FPR);
            let tpr_hi = if fpr1 > fpr0 {
                tpr0 + (tpr1 - tpr0) * (hi - fpr0) / (fpr1 - fpr0)
            } else {
                tpr1
            };
            pauc += (hi - fpr0) * (tpr0 + tpr_hi) / 2.0;
        }
    }
    Some(CurveMetrics {
        auroc: auc,
        aupr: ap,
        partial_auc: pauc,
        auroc30: mcclish(pauc),
    })
}

pub fn curve_metrics(scores: &[f64], labels: &[bool]) -> Result<CurveMetrics> {
    validate(scores, labels)?;
    let order = descending_order(scores);
    Ok(sweep(scores, labels, &order, None).expect("both classes present"))
}

/// Probability that a random anomaly outscores a random normal sample, ties ½.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    Ok(curve_metrics(scores, labels)?.auroc)
}

/// Step-interpolated area under the precision-recall curve.
pub fn aupr(scores: &[f64], labels: &[bool]) -> Result<f64> {
    Ok(curve_metrics(scores, labels)?.aupr)
}

/// McClish-standardized partial ROC area over FPR in `[0, 0.3]`.
pub fn auroc30(scores: &[f64], labels: &[bool]) -> Result<f64> {
    Ok(curve_metrics(scores, labels)?.auroc30)
}

/// Raw partial ROC area over FPR in `[0, 0.3]` (at most 0.3).
pub fn partial_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    Ok(curve_metrics(scores, labels)?.partial_auc)
}

/// One scorer's results over the shared test items.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelScores {
    pub name: String,
    pub scores: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    /// Metric on the full test set.
    pub value: f64,
    pub bootstrap_mean: f64,
    pub bootstrap_std: f64,
    /// Fraction of resamples in which this model matches or beats the best.
    pub p_value: f64,
    pub best: bool,
    /// Not significantly worse than the best model (and not the best itself).
    pub tied_with_best: bool,
    pub distribution: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub name: String,
    pub partial_auc: f64,
    pub metrics: BTreeMap<Metric, MetricSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub resamples: usize,
    pub seed: u64,
    pub items: usize,
    pub anomalies: usize,
    pub base_level: f64,
    /// Bonferroni-corrected level `base_level / (models − 1)`.
    pub adjusted_level: f64,
    pub best: BTreeMap<Metric, String>,
    pub models: Vec<ModelReport>,
}

fn resample_weights(rng: &mut ChaCha8Rng, labels: &[bool], weights: &mut [u32]) {
    let n = labels.len();
    loop {
        weights.iter_mut().for_each(|w| *w = 0);
        let mut pos = 0usize;
        for _ in 0..n {
            let i = rng.random_range(0..n);
            weights[i] += 1;
            pos += labels[i] as usize;
        }
        if pos > 0 && pos < n {
            return;
        }
    }
}

/// Index multiplicities of bootstrap resample `b`; resamples missing a class
/// are redrawn from the same stream.
pub fn bootstrap_weights(labels: &[bool], seed: u64, b: usize) -> Vec<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(b as u64);
    let mut w = vec![0u32; labels.len()];
    resample_weights(&mut rng, labels, &mut w);
    w
}

/// Paired bootstrap over shared test items. Every resample draws item
/// indices with replacement and evaluates all models on the same draw; the
/// best model has the highest bootstrap mean and each other model's p-value
/// is the fraction of resamples where it scores at least as high as the best.
pub fn paired_bootstrap_report(
    models: &[ModelScores],
    labels: &[bool],
    resamples: usize,
    seed: u64,
    jobs: usize,
) -> Result<TestReport> {
    if models.is_empty() {
        return Err(Error::usage("no models to compare"));
    }
    if resamples == 0 {
        return Err(Error::usage("need at least one bootstrap resample"));
    }
    for m in models {
        if m.scores.len() != labels.len() {
            return Err(Error::usage(format!(
                "model {} scored {} items, expected {}",
                m.name,
                m.scores.len(),
                labels.len()
            )));
        }
        validate(&m.scores, labels)?;
    }
    let full: Vec<CurveMetrics> = models
        .iter()
        .map(|m| curve_metrics(&m.scores, labels))
        .collect::<Result<_>>()?;
    let orders: Vec<Vec<usize>> = models.iter().map(|m| descending_order(&m.scores)).collect();

    // dist[b][model]
    let jobs = jobs.max(1).min(resamples);
    let chunk = resamples.div_ceil(jobs);
    let mut dist: Vec<Vec<CurveMetrics>> = Vec::with_capacity(resamples);
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..jobs)
            .map(|j| {
                let orders = &orders;
                scope.spawn(move || {
                    let lo = j * chunk;
                    let hi = ((j + 1) * chunk).min(resamples);
                    (lo..hi)
                        .map(|b| {
                            let w = bootstrap_weights(labels, seed, b);
                            models
                                .iter()
                                .zip(orders)
                                .map(|(m, o)| sweep(&m.scores, labels, o, Some(&w)).expect("both classes drawn"))
                                .collect::<Vec<_>>()
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            dist.extend(h.join().expect("bootstrap worker panicked"));
        }
    });

    let m = models.len();
    let adjusted_level = if m > 1 { BASE_LEVEL / (m - 1) as f64 } else { BASE_LEVEL };
    let mut best = BTreeMap::new();
    let mut reports: Vec<ModelReport> = models
        .iter()
        .zip(&full)
        .map(|(ms, f)| ModelReport {
            name: ms.name.clone(),
            partial_auc: f.partial_auc,
            metrics: BTreeMap::new(),
        })
        .collect();
    for metric in Metric::ALL {
        let series: Vec<Vec<f64>> = (0..m)
            .map(|k| dist.iter().map(|row| row[k].get(metric)).collect())
            .collect();
        let means: Vec<f64> = series.iter().map(|s| s.iter().sum::<f64>() / s.len() as f64).collect();
        let mut b_idx = 0;
        for k in 1..m {
            if means[k] > means[b_idx] {
                b_idx = k;
            }
        }
        best.insert(metric, models[b_idx].name.clone());
        for k in 0..m {
            let hits = series[k]
                .iter()
                .zip(&series[b_idx])
                .filter(|(v, b)| v >= b)
                .count();
            let p_value = hits as f64 / resamples as f64;
            let mean = means[k];
            let var = series[k].iter().map(|v| (v - mean).powi(2)).sum::<f64>() / resamples as f64;
            reports[k].metrics.insert(
                metric,
                MetricSummary {
                    value: full[k].get(metric),
                    bootstrap_mean: mean,
                    bootstrap_std: var.sqrt(),
                    p_value,
                    best: k == b_idx,
                    tied_with_best: k != b_idx && p_value >= adjusted_level,
                    distribution: series[k].clone(),
                },
            );
        }
    }
    Ok(TestReport {
        resamples,
        seed,
        items: labels.len(),
        anomalies: labels.iter().filter(|&&l| l).count(),
        base_level: BASE_LEVEL,
        adjusted_level,
        best,
        models: reports,
    })
}

impl TestReport {
    /// Models × metrics table. `*` marks the best model, `~` a model not
    /// significantly worse than it.
    pub fn render_table(&self) -> String {
        let width = self.models.iter().map(|m| m.name.len()).max().unwrap_or(5).max(5);
        let mut out = String::new();
        let _ = write!(out, "{:<width$}", "model");
        for metric in Metric::ALL {
            let _ = write!(out, "  {:>9}", metric.label());
        }
        let _ = writeln!(out, "  {:>9}", "pAUC(raw)");
        for m in &self.models {
            let _ = write!(out, "{:<width$}", m.name);
            for metric in Metric::ALL {
                let s = &m.metrics[&metric];
                let flag = if s.best {
                    '*'
                } else if s.tied_with_best {
                    '~'
                } else {
                    ' '
                };
                let _ = write!(out, "  {:>8.4}{flag}", s.value);
            }
            let _ = writeln!(out, "  {:>9.4}", m.partial_auc);
        }
        let _ = writeln!(
            out,
            "* best (highest bootstrap mean), ~ not significantly worse at {:.4} ({} resamples, {} items, {} anomalous)",
            self.adjusted_level, self.resamples, self.items, self.anomalies
        );
        out
    }
}
