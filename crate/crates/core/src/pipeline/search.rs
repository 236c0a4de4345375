use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use log::info;
use serde::{Deserialize, Serialize};

use super::{fit_final_ocsvm, score_set, train_ogae, Method, TrainConfig};
use crate::data::{anomaly_labels, Experiment1Splits};
use crate::error::{Error, Result};
use crate::guidance::BetaSchedule;
use crate::metrics::{curve_metrics, CurveMetrics};

/// Values tried for each searched hyperparameter; an empty list keeps the base value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchGrid {
    pub lambda: Vec<f64>,
    pub schedule: Vec<BetaSchedule>,
    pub nu: Vec<f64>,
    pub gamma: Vec<f64>,
    pub scale_latents: Vec<bool>,
}

fn or_base<T: Clone>(values: &[T], base: T) -> Vec<T> {
    if values.is_empty() {
        vec![base]
    } else {
        values.to_vec()
    }
}

impl SearchGrid {
    /// Cartesian product applied to `base`, restricted to the knobs `method` uses.
    pub fn cells(&self, base: &TrainConfig, method: Method) -> Vec<TrainConfig> {
        let base = method.effective_config(base);
        let (lambdas, schedules) = if method.guided() {
            (
                or_base(&self.lambda, base.guidance.lambda),
                or_base(&self.schedule, base.guidance.schedule.clone()),
            )
        } else {
            (vec![0.0], vec![base.guidance.schedule.clone()])
        };
        let per_batch_svm = method.guided();
        let (nus, gammas) = if method.uses_ocsvm() || per_batch_svm {
            (or_base(&self.nu, base.nu), or_base(&self.gamma, base.gamma))
        } else {
            (vec![base.nu], vec![base.gamma])
        };
        let scales = if method.uses_ocsvm() {
            or_base(&self.scale_latents, base.scale_latents)
        } else {
            vec![base.scale_latents]
        };
        let mut out = Vec::new();
        for &lambda in &lambdas {
            for schedule in &schedules {
                for &nu in &nus {
                    for &gamma in &gammas {
                        for &scale in &scales {
                            let mut c = base.clone();
                            c.guidance.lambda = lambda;
                            c.guidance.schedule = schedule.clone();
                            c.nu = nu;
                            c.gamma = gamma;
                            c.scale_latents = scale;
                            out.push(c);
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub config: TrainConfig,
    pub validation: CurveMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub method: Method,
    pub cells: Vec<CellResult>,
    pub best: usize,
}

impl SearchOutcome {
    pub fn best_config(&self) -> &TrainConfig {
        &self.cells[self.best].config
    }
}

/// Highest validation AUROC; ties go to higher AUPR, then smaller λ, then
/// grid order.
pub fn select_best(cells: &[CellResult]) -> Result<usize> {
    if cells.is_empty() {
        return Err(Error::usage("empty hyperparameter grid"));
    }
    let mut best = 0;
    for (i, c) in cells.iter().enumerate().skip(1) {
        let b = &cells[best];
        let better = c.validation.auroc > b.validation.auroc
            || (c.validation.auroc == b.validation.auroc
                && (c.validation.aupr > b.validation.aupr
                    || (c.validation.aupr == b.validation.aupr
                        && c.config.guidance.lambda < b.config.guidance.lambda)));
        if better {
            best = i;
        }
    }
    Ok(best)
}

/// Part of the configuration that changes the trained weights.
fn training_key(c: &TrainConfig) -> String {
    let mut k = c.clone();
    k.scale_latents = false;
    if k.guidance.lambda == 0.0 {
        k.guidance = Default::default();
        k.guidance.lambda = 0.0;
        k.nu = 0.0;
        k.gamma = 0.0;
    }
    serde_json::to_string(&k).expect("config serializes")
}

/// Evaluates every cell on the validation set. Cells that differ only in
/// final-fit settings share one trained model. Groups run on up to `jobs`
/// threads; results do not depend on `jobs`.
pub fn hyperparameter_search(
    method: Method,
    cells: &[TrainConfig],
    splits: &Experiment1Splits,
    outlier: u8,
    jobs: usize,
) -> Result<SearchOutcome> {
    if cells.is_empty() {
        return Err(Error::usage("empty hyperparameter grid"));
    }
    let cells: Vec<TrainConfig> = cells.iter().map(|c| method.effective_config(c)).collect();
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, c) in cells.iter().enumerate() {
        groups.entry(training_key(c)).or_default().push(i);
    }
    let groups: Vec<Vec<usize>> = groups.into_values().collect();
    let labels = anomaly_labels(&splits.val, outlier);
    let full_train = splits.full_train();
    let results: Mutex<Vec<Option<Result<CurveMetrics>>>> = Mutex::new((0..cells.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);

    let work = || loop {
        let gi = next.fetch_add(1, Ordering::SeqCst);
        let Some(group) = groups.get(gi) else {
            return;
        };
        let run = || -> Result<Vec<(usize, CurveMetrics)>> {
            let outcome = train_ogae(&splits.train, &splits.earlystop, &cells[group[0]])?;
            let mut out = Vec::new();
            for &ci in group {
                let scores = if method.uses_ocsvm() {
                    let (file, _) = fit_final_ocsvm(&outcome.model, &full_train, &cells[ci])?;
                    score_set(&outcome.model, Some(&file), &splits.val)?.ocsvm.expect("solution given")
                } else {
                    score_set(&outcome.model, None, &splits.val)?.recons
                };
                let m = curve_metrics(&scores, &labels)?;
                info!(
                    "{} cell {ci}: λ={} ν={} γ={} scale={} val AUROC {:.4} AUPR {:.4}",
                    method.id(),
                    cells[ci].guidance.lambda,
                    cells[ci].nu,
                    cells[ci].gamma,
                    cells[ci].scale_latents,
                    m.auroc,
                    m.aupr
                );
                out.push((ci, m));
            }
            Ok(out)
        };
        let outcome = run();
        let mut res = results.lock().expect("results lock");
        match outcome {
            Ok(list) => list.into_iter().for_each(|(ci, m)| res[ci] = Some(Ok(m))),
            Err(e) => {
                let msg = e.to_string();
                let numeric = e.is_numeric();
                res[group[0]] = Some(Err(e));
                for &ci in &group[1..] {
                    res[ci] = Some(Err(if numeric {
                        Error::Numeric(msg.clone())
                    } else {
                        Error::Usage(msg.clone())
                    }));
                }
            }
        }
    };
    let jobs = jobs.max(1).min(groups.len());
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(&work);
        }
    });

    let mut out = Vec::with_capacity(cells.len());
    for (config, r) in cells.into_iter().zip(results.into_inner().expect("results lock")) {
        let validation = r.expect("every cell evaluated")?;
        out.push(CellResult { config, validation });
    }
    let best = select_best(&out)?;
    Ok(SearchOutcome {
        method,
        cells: out,
        best,
    })
}
