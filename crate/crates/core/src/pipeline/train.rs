use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::autodiff::{Graph, Tensor};
use crate::data::LabeledImageSet;
use crate::error::{Error, Result};
use crate::guidance::{guidance_penalty, ogae_loss, reconstruction_loss_var};
use crate::models::{Adam, Autoencoder, AutoencoderSpec, Mode};

/// Fraction of guided batches per epoch whose dual may fail before training aborts.
pub const MAX_SKIPPED_FRACTION: f64 = 0.2;

/// Per-epoch record of the training loop. Losses are per sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub train_reconstruction: f64,
    /// Mean guidance penalty per loss-half sample, over guided batches.
    pub train_guidance: f64,
    pub guided_batches: usize,
    pub skipped_batches: usize,
    pub heldout_reconstruction: f64,
    pub heldout_guidance: f64,
    pub heldout_total: f64,
    /// Mean pairwise squared distance per latent dimension on the held-out set.
    pub latent_spread: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
    /// Epoch whose weights were kept (zero-based).
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub optimizer_steps: u64,
}

pub struct TrainOutcome {
    pub model: Autoencoder,
    pub log: TrainingLog,
}

/// Shuffled sample order of `epoch`, derived from the master seed.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// `2n/(n−1) · mean_k Var_k`: the mean over pairs `i < j` of `‖zᵢ − zⱼ‖² / d`.
pub fn mean_pairwise_mse(z: &Tensor) -> f64 {
    let (n, d) = (z.shape()[0], z.shape()[1]);
    if n < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for k in 0..d {
        let mean = z.rows().map(|r| r[k]).sum::<f64>() / n as f64;
        total += z.rows().map(|r| (r[k] - mean).powi(2)).sum::<f64>() / n as f64;
    }
    2.0 * n as f64 / (n - 1) as f64 * total / d as f64
}

struct Heldout {
    reconstruction: f64,
    guidance: f64,
    spread: f64,
}

fn evaluate_heldout(model: &Autoencoder, set: &LabeledImageSet, cfg: &TrainConfig, betas: (f64, f64)) -> Result<Heldout> {
    if set.is_empty() {
        return Ok(Heldout {
            reconstruction: 0.0,
            guidance: 0.0,
            spread: 0.0,
        });
    }
    let kernel = cfg.kernel()?;
    let (mut recon, mut guid) = (0.0, 0.0);
    let mut latents = Vec::with_capacity(set.len() * model.spec().latent_dim);
    let idx: Vec<usize> = (0..set.len()).collect();
    for chunk in idx.chunks(cfg.batch_size) {
        let mut g = Graph::new();
        let p = model.bind_frozen(&mut g)?;
        let x = g.constant(set.batch(chunk))?;
        let z = model.encode_var(&mut g, &p, x, Mode::Eval, &mut Vec::new())?;
        let xh = model.decode_var(&mut g, &p, z, Mode::Eval, &mut Vec::new())?;
        let r = reconstruction_loss_var(&mut g, x, xh)?;
        recon += g.value(r).data()[0];
        latents.extend_from_slice(g.value(z).data());
        if cfg.guidance.lambda > 0.0 {
            if let Some(term) = guidance_penalty(&mut g, z, &kernel, cfg.nu, betas, &cfg.guidance)? {
                guid += g.value(term.penalty).data()[0];
            }
        }
    }
    let z = Tensor::new(vec![set.len(), model.spec().latent_dim], latents)?;
    let n = set.len() as f64;
    Ok(Heldout {
        reconstruction: recon / n,
        guidance: guid / n,
        spread: mean_pairwise_mse(&z),
    })
}

/// Trains an autoencoder on normal samples with the guided loss (plain
/// reconstruction when λ = 0). Early stopping watches the per-sample held-out
/// loss `reconstruction + λ·guidance` and restores the best epoch's weights.
pub fn train_ogae(train: &LabeledImageSet, earlystop: &LabeledImageSet, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.len() < 2 {
        return Err(Error::usage("training needs at least two samples"));
    }
    let spec = AutoencoderSpec {
        architecture: cfg.architecture,
        latent_dim: cfg.latent_dim(),
        seed: cfg.seed,
    };
    let mut model = Autoencoder::new(spec)?;
    let [_, h, w] = cfg.architecture.input_shape();
    if train.height != h || train.width != w {
        return Err(Error::usage(format!(
            "{:?} expects {h}×{w} images, got {}×{}",
            cfg.architecture, train.height, train.width
        )));
    }
    let kernel = cfg.kernel()?;
    let mut adam = Adam::new(cfg.learning_rate);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Vec<f64>)> = None;
    let mut stopped_early = false;

    for epoch in 0..cfg.epochs {
        let betas = cfg.guidance.schedule.betas(epoch, cfg.epochs);
        let order = epoch_order(train.len(), cfg.seed, epoch);
        let (mut recon_sum, mut guid_sum, mut guid_samples) = (0.0, 0.0, 0usize);
        let (mut guided, mut skipped) = (0usize, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let mut g = Graph::new();
            let p = model.bind(&mut g)?;
            let x = g.constant(train.batch(chunk))?;
            let mut stats = Vec::new();
            let z = model.encode_var(&mut g, &p, x, Mode::Train, &mut stats)?;
            let xh = model.decode_var(&mut g, &p, z, Mode::Train, &mut stats)?;
            let parts = ogae_loss(&mut g, x, xh, z, &cfg.guidance, betas, &kernel, cfg.nu)?;
            let total = g.value(parts.total).data()[0];
            if !total.is_finite() {
                return Err(Error::numeric(format!("non-finite training loss at epoch {epoch}")));
            }
            recon_sum += parts.reconstruction;
            if let Some(v) = parts.guidance {
                guided += 1;
                guid_sum += v;
                guid_samples += chunk.len() - chunk.len().div_ceil(2);
            }
            if parts.skipped {
                guided += 1;
                skipped += 1;
            }
            let grads = g.backward(parts.total)?;
            let grads: Vec<Tensor> = p.all().iter().map(|&v| grads.get(v)).collect();
            adam.step(model.params_mut(), &grads)?;
            let counts = model.bn_counts(chunk.len());
            model.update_running_stats(&stats, &counts);
        }
        if guided > 0 && skipped as f64 > MAX_SKIPPED_FRACTION * guided as f64 {
            return Err(Error::numeric(format!(
                "per-batch OCSVM failed on {skipped} of {guided} batches in epoch {epoch}"
            )));
        }
        let held = evaluate_heldout(&model, earlystop, cfg, betas)?;
        let heldout_total = held.reconstruction + cfg.guidance.lambda * held.guidance;
        let log = EpochLog {
            epoch,
            beta1: betas.0,
            beta2: betas.1,
            train_reconstruction: recon_sum / train.len() as f64,
            train_guidance: if guid_samples > 0 { guid_sum / guid_samples as f64 } else { 0.0 },
            guided_batches: guided,
            skipped_batches: skipped,
            heldout_reconstruction: held.reconstruction,
            heldout_guidance: held.guidance,
            heldout_total,
            latent_spread: held.spread,
        };
        info!(
            "epoch {epoch}: recon {:.4} guidance {:.5} held-out {:.4} spread {:.4}",
            log.train_reconstruction, log.train_guidance, log.heldout_total, log.latent_spread
        );
        epochs.push(log);

        let Some(patience) = cfg.patience else {
            continue;
        };
        if earlystop.is_empty() {
            continue;
        }
        match &best {
            Some((value, _, _)) if heldout_total >= *value => {}
            _ => best = Some((heldout_total, epoch, model.state_vector())),
        }
        let best_epoch = best.as_ref().map(|b| b.1).unwrap_or(epoch);
        if epoch - best_epoch >= patience {
            debug!("early stop at epoch {epoch}, best epoch {best_epoch}");
            stopped_early = true;
            break;
        }
    }

    let best_epoch = match best {
        Some((_, e, state)) => {
            model.load_state_vector(&state)?;
            e
        }
        None => epochs.len().saturating_sub(1),
    };
    Ok(TrainOutcome {
        model,
        log: TrainingLog {
            epochs,
            best_epoch,
            stopped_early,
            optimizer_steps: adam.steps(),
        },
    })
}
