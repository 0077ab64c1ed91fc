//! Training loop: Adam over the epsilon-prediction objective with
//! classifier-free-guidance dropout on the prompt.
//!
//! Everything is driven by three independently seeded generators (dataset,
//! initialization, batch draws) so reruns with the same seed reproduce the
//! loss curve exactly.

use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::conditioning::{encode_prompt, Prompt, Vocabulary};
use crate::diffusion::q_sample;
use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;

use super::net::{DenoiserConfig, SceneModel};
use super::scene::{sample_dataset_item_sized, scene_vocabulary, DatasetItem};

/// Training hyperparameters. These are carried by the experiment config
/// file rather than hard-coded.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub dataset_size: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Linear warmup steps before the cosine decay.
    pub warmup_steps: usize,
    /// The cosine decay floor as a fraction of the base learning rate.
    pub lr_min_factor: f64,
    /// Probability of replacing the prompt with the null prompt, training
    /// the unconditional branch for classifier-free guidance.
    pub cfg_dropout: f64,
    pub seed: u64,
    pub model: DenoiserConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dataset_size: 2048,
            epochs: 24,
            batch_size: 64,
            learning_rate: 1e-3,
            warmup_steps: 50,
            lr_min_factor: 0.1,
            cfg_dropout: 0.1,
            seed: 42,
            model: DenoiserConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dataset_size == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("dataset_size, epochs and batch_size must be positive"));
        }
        if !(0.0..=1.0).contains(&self.cfg_dropout) {
            return Err(Error::invalid(format!(
                "cfg_dropout must be in [0, 1], got {}",
                self.cfg_dropout
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        self.model.validate()
    }
}

/// Adam with bias correction. Moment buffers are keyed by the fixed
/// parameter enumeration order of [`SceneModel::visit_params`].
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    t: usize,
}

impl Adam {
    pub fn new() -> Self {
        Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8, m: Vec::new(), v: Vec::new(), t: 0 }
    }

    pub fn step(&mut self, model: &mut SceneModel<f32>, grads: &mut SceneModel<f32>, lr: f64) {
        self.t += 1;
        let mut params = model.visit_params();
        let mut gparams = grads.visit_params();
        debug_assert_eq!(params.len(), gparams.len());
        if self.m.is_empty() {
            for (_, p) in params.iter_mut() {
                let n = p.shape().iter().product();
                self.m.push(vec![0.0; n]);
                self.v.push(vec![0.0; n]);
            }
        }
        let b1c = 1.0 - self.beta1.powi(self.t as i32);
        let b2c = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        for (((_, p), (_, g)), (m, v)) in params
            .iter_mut()
            .zip(gparams.iter_mut())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let pv = p.as_slice_mut();
            let gv = g.as_slice_mut();
            for i in 0..pv.len() {
                let grad = gv[i];
                m[i] = b1 * m[i] + (1.0 - b1) * grad;
                v[i] = b2 * v[i] + (1.0 - b2) * grad * grad;
                let mhat = m[i] as f64 / b1c;
                let vhat = v[i] as f64 / b2c;
                pv[i] -= (lr * mhat / (vhat.sqrt() + self.eps)) as f32;
            }
        }
    }
}

impl Default for Adam {
    fn default() -> Self {
        Self::new()
    }
}

/// Warmup then cosine decay to `lr * lr_min_factor`.
fn lr_at(cfg: &TrainConfig, step: usize, total_steps: usize) -> f64 {
    let base = cfg.learning_rate;
    if step < cfg.warmup_steps {
        return base * (step + 1) as f64 / cfg.warmup_steps as f64;
    }
    let span = (total_steps.saturating_sub(cfg.warmup_steps)).max(1) as f64;
    let progress = (step - cfg.warmup_steps) as f64 / span;
    let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress.min(1.0)).cos());
    base * (cfg.lr_min_factor + (1.0 - cfg.lr_min_factor) * cosine)
}

/// Mean epsilon-MSE over one batch together with the parameter gradients.
/// `draws` carries the pre-sampled `(t, eps, drop_prompt)` randomness so
/// the loss is a deterministic function of the model.
pub(crate) fn loss_and_grad(
    model: &SceneModel<f32>,
    batch: &[&DatasetItem],
    draws: &[(usize, Array3<f32>, bool)],
    schedule: &NoiseSchedule,
) -> Result<(f64, SceneModel<f32>)> {
    let mut grads = model.zeros_like();
    let mut loss = 0.0f64;
    let b = batch.len() as f64;
    let null_prompt = Prompt::null();
    for (item, (t, eps, drop)) in batch.iter().zip(draws) {
        let prompt = if *drop { &null_prompt } else { &item.global_prompt };
        let e = encode_prompt(&model.table, prompt)?;
        let z_t = q_sample(&item.image, *t, eps, schedule)?;
        let (out, tape) = model.net.forward_with_tape(&z_t, *t, &e)?;
        let diff = &out - eps;
        let n_el = diff.len() as f64;
        loss += diff.iter().map(|d| (*d as f64) * (*d as f64)).sum::<f64>() / n_el / b;
        let d_out = diff.mapv(|d| d * (2.0 / (n_el * b)) as f32);
        let d_e = model.net.backward(&tape, &d_out, &mut grads.net);
        for &tok in prompt.token_ids() {
            let mut row = grads.table.rows_mut().row_mut(tok);
            row += &d_e;
        }
    }
    Ok((loss, grads))
}

/// Everything a training run produces: the trained model, its vocabulary,
/// and the loss curve.
pub struct TrainOutcome {
    pub model: SceneModel<f32>,
    pub vocab: Vocabulary,
    pub dataset: Vec<DatasetItem>,
    /// `(step, batch loss)` pairs, one per optimizer step.
    pub losses: Vec<(usize, f64)>,
    /// Mean batch loss over the final epoch.
    pub final_loss: f64,
    pub steps: usize,
}

/// Trains the toy denoiser on procedurally generated scenes, conditioning
/// on each item's global prompt. Aborts with a diagnostic if the loss
/// leaves the finite range.
pub fn train(config: &TrainConfig, schedule: &NoiseSchedule) -> Result<TrainOutcome> {
    config.validate()?;
    let vocab = scene_vocabulary();

    let mut data_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let dataset: Vec<DatasetItem> = (0..config.dataset_size)
        .map(|_| sample_dataset_item_sized(&vocab, config.model.canvas, &mut data_rng))
        .collect::<Result<_>>()?;

    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut model = SceneModel::<f32>::init(config.model, vocab.len(), &mut init_rng)?;

    let mut batch_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x517c_c1b7_2722_0a95);
    let mut adam = Adam::new();

    let t_max = schedule.num_timesteps();
    let canvas = model.net.canvas_shape();
    let batches_per_epoch = config.dataset_size.div_ceil(config.batch_size);
    let total_steps = config.epochs * batches_per_epoch;
    let mut losses = Vec::with_capacity(total_steps);
    let mut step = 0usize;
    let mut final_epoch_sum = 0.0;
    let mut final_epoch_count = 0usize;

    let mut indices: Vec<usize> = (0..config.dataset_size).collect();
    for epoch in 0..config.epochs {
        indices.shuffle(&mut batch_rng);
        let last_epoch = epoch + 1 == config.epochs;
        for chunk in indices.chunks(config.batch_size) {
            let batch: Vec<&DatasetItem> = chunk.iter().map(|&i| &dataset[i]).collect();
            let draws: Vec<(usize, Array3<f32>, bool)> = batch
                .iter()
                .map(|_| {
                    let drop = batch_rng.random::<f64>() < config.cfg_dropout;
                    let t = batch_rng.random_range(1..=t_max);
                    let eps = Array3::from_shape_fn(canvas, |_| StandardNormal.sample(&mut batch_rng));
                    (t, eps, drop)
                })
                .collect();
            let (loss, mut grads) = loss_and_grad(&model, &batch, &draws, schedule)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss {loss} at step {step} (epoch {epoch}); \
                     try a lower learning rate"
                )));
            }
            let lr = lr_at(config, step, total_steps);
            adam.step(&mut model, &mut grads, lr);
            losses.push((step, loss));
            if last_epoch {
                final_epoch_sum += loss;
                final_epoch_count += 1;
            }
            step += 1;
        }
    }

    let final_loss = final_epoch_sum / final_epoch_count.max(1) as f64;
    Ok(TrainOutcome { model, vocab, dataset, losses, final_loss, steps: step })
}
