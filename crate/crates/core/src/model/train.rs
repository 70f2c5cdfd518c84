//! Mini-batch training with on-the-fly visual dependence.
//!
//! For every batch the current model scores each caption twice without
//! gradient, once with the clean scene feature and once with the feature
//! corrupted to `noise_step`. The resulting dependence profile feeds
//! [`training_weights`], and the weighted loss is then differentiated with
//! the weights held fixed.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gru::Tape;
use super::optim::{Optimizer, OptimizerKind};
use super::params::{ModelConfig, ModelParams};
use crate::dependence::{profile_trace, DependenceProfile, TokenClass};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::noise::{corrupt_for_sample, NoiseSchedule, DEFAULT_NOISE_STEP, DEFAULT_NUM_STEPS};
use crate::reweight::{training_weights, ReweightConfig, WeightVector};
use crate::seed::stream_rng;
use crate::synth::{SyntheticScene, Vocabulary};
use crate::trace::TokenTrace;

pub const DEFAULT_NOISE_AUGMENT: f64 = 0.1;

fn default_noise_augment() -> f64 {
    DEFAULT_NOISE_AUGMENT
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub reweight: ReweightConfig,
    pub noise_step: usize,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub d_emb: usize,
    pub d_hid: usize,
    /// Probability that a training caption is paired with its feature
    /// corrupted to `noise_step` instead of the clean one, so the model also
    /// learns what to say when the condition carries no information.
    #[serde(default = "default_noise_augment")]
    pub noise_augment: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 2,
            batch_size: 128,
            learning_rate: 3e-3,
            optimizer: OptimizerKind::Adam,
            seed: 0,
            reweight: ReweightConfig::default(),
            noise_step: DEFAULT_NOISE_STEP,
            clip_norm: Some(5.0),
            d_emb: 32,
            d_hid: 64,
            noise_augment: DEFAULT_NOISE_AUGMENT,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.d_emb == 0 || self.d_hid == 0 {
            return Err(Error::InvalidArgument(
                "epochs, batch size and model widths must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        if let Some(c) = self.clip_norm {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::InvalidArgument("clip norm must be positive".into()));
            }
        }
        if self.noise_step > DEFAULT_NUM_STEPS {
            return Err(Error::InvalidArgument(format!(
                "noise step must be in [0, {DEFAULT_NUM_STEPS}]"
            )));
        }
        if !(0.0..=1.0).contains(&self.noise_augment) {
            return Err(Error::InvalidArgument("noise augmentation must be in [0, 1]".into()));
        }
        self.reweight.validate()
    }

    pub fn model_config(&self, vocab: &Vocabulary) -> ModelConfig {
        ModelConfig {
            vocab_size: vocab.size(),
            cond_dim: vocab.num_objects(),
            d_emb: self.d_emb,
            d_hid: self.d_hid,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub loss: f64,
    /// Mean loss weight of image-positive tokens in the batch (NaN if none).
    pub mean_w_pos: f64,
    pub mean_w_inv: f64,
    pub mean_w_neg: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "step,loss,mean_w_pos,mean_w_inv,mean_w_neg").map_err(io)?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{}",
                r.step, r.loss, r.mean_w_pos, r.mean_w_inv, r.mean_w_neg
            )
            .map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: TrainLog,
}

/// Dependence trace of `sequence` under `scene`'s clean feature and a
/// noised copy of it.
pub fn dependence_trace(
    params: &ModelParams,
    vocab: &Vocabulary,
    scene_id: &str,
    clean: &[f64],
    noisy: &[f64],
    sequence: &[u32],
) -> Result<TokenTrace> {
    let p_clean = super::gru::target_probs(params, clean, sequence)?;
    let p_noisy = super::gru::target_probs(params, noisy, sequence)?;
    trace_from_probs(vocab, scene_id, sequence, p_clean, p_noisy)
}

fn trace_from_probs(
    vocab: &Vocabulary,
    scene_id: &str,
    sequence: &[u32],
    p_clean: Vec<f64>,
    p_noisy: Vec<f64>,
) -> Result<TokenTrace> {
    let targets = sequence[1..].to_vec();
    let eos_index = (targets.last() == Some(&crate::synth::EOS)).then(|| targets.len() - 1);
    TokenTrace::new(
        scene_id,
        targets.clone(),
        vocab.surfaces(&targets),
        p_clean,
        p_noisy,
        eos_index,
    )
}

struct SeqResult {
    loss: f64,
    grads: ModelParams,
    classes: Vec<TokenClass>,
    weights: WeightVector,
}

fn sequence_step(
    params: &ModelParams,
    vocab: &Vocabulary,
    schedule: &NoiseSchedule,
    cfg: &TrainConfig,
    scene: &SyntheticScene,
    step: usize,
    progress: f64,
) -> Result<SeqResult> {
    let step_label = (step as u64).to_le_bytes();
    let augmented = if cfg.noise_augment > 0.0 {
        let mut rng = stream_rng(cfg.seed, &[b"augment", scene.scene_id.as_bytes(), &step_label]);
        if rng.random::<f64>() < cfg.noise_augment {
            Some(schedule.corrupt_with(&scene.feature, cfg.noise_step, &mut rng)?)
        } else {
            None
        }
    } else {
        None
    };
    let condition = augmented.as_deref().unwrap_or(&scene.feature);
    let tape = Tape::record(params, condition, &scene.caption)?;
    let noisy = corrupt_for_sample(
        &scene.feature,
        cfg.noise_step,
        schedule,
        cfg.seed,
        &scene.scene_id,
        &[&step_label],
    )?;
    let p_noisy = super::gru::target_probs(params, &noisy, &scene.caption)?;
    let p_clean = match augmented {
        Some(_) => super::gru::target_probs(params, &scene.feature, &scene.caption)?,
        None => tape.target_probs(),
    };
    let trace = trace_from_probs(vocab, &scene.scene_id, &scene.caption, p_clean, p_noisy)?;
    let profile: DependenceProfile = profile_trace(&trace)?;
    let weights = training_weights(&profile, &cfg.reweight, progress, trace.eos_index())?;
    let (loss, grads) = tape.backward(params, condition, &weights)?;
    Ok(SeqResult {
        loss,
        grads,
        classes: profile.classes().to_vec(),
        weights,
    })
}

pub fn train(corpus: &[SyntheticScene], cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(corpus, cfg, Execution::default())
}

/// Train from a seeded initialisation. Per-sequence work may run in
/// parallel; gradients are summed in batch order, so the result does not
/// depend on `exec`.
pub fn train_with(corpus: &[SyntheticScene], cfg: &TrainConfig, exec: Execution) -> Result<TrainOutcome> {
    train_from(corpus, cfg, None, exec)
}

/// Like [`train_with`], but fine-tunes `init` when given. Its shape must
/// match the corpus vocabulary and `cfg`'s widths.
pub fn train_from(
    corpus: &[SyntheticScene],
    cfg: &TrainConfig,
    init: Option<&ModelParams>,
    exec: Execution,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let first = corpus
        .first()
        .ok_or_else(|| Error::InvalidArgument("cannot train on an empty corpus".into()))?;
    let vocab = Vocabulary::new(first.num_objects());
    let model_config = cfg.model_config(&vocab);
    let mut params = match init {
        Some(p) if p.config != model_config => {
            return Err(Error::Shape(format!(
                "initial model {:?} does not match {:?}",
                p.config, model_config
            )))
        }
        Some(p) => p.clone(),
        None => ModelParams::init(model_config, cfg.seed),
    };
    let schedule = NoiseSchedule::new(DEFAULT_NUM_STEPS)?;
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, &params);

    let batches_per_epoch = corpus.len().div_ceil(cfg.batch_size);
    let total_steps = batches_per_epoch * cfg.epochs;
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut stream_rng(cfg.seed, &[b"shuffle", &(epoch as u64).to_le_bytes()]));
        for batch in order.chunks(cfg.batch_size) {
            let progress = step as f64 / total_steps as f64;
            let results = exec.map(batch, |&i| {
                sequence_step(&params, &vocab, &schedule, cfg, &corpus[i], step, progress)
            });
            let mut grads = ModelParams::zeros(params.config);
            let mut loss = 0.0;
            let mut w_sum = [0.0; 3];
            let mut w_cnt = [0usize; 3];
            for r in results {
                let r = r?;
                loss += r.loss;
                grads.add_scaled(1.0, &r.grads);
                for (c, w) in r.classes.iter().zip(r.weights.weights()) {
                    w_sum[c.index()] += w;
                    w_cnt[c.index()] += 1;
                }
            }
            let inv_b = 1.0 / batch.len() as f64;
            loss *= inv_b;
            grads.scale(inv_b);
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::Divergence { step, loss });
            }
            if let Some(max_norm) = cfg.clip_norm {
                let norm = grads.sq_norm().sqrt();
                if norm > max_norm {
                    grads.scale(max_norm / norm);
                }
            }
            opt.step(&mut params, &grads);
            let mean = |k: usize| if w_cnt[k] == 0 { f64::NAN } else { w_sum[k] / w_cnt[k] as f64 };
            log.rows.push(LogRow {
                step,
                loss,
                mean_w_pos: mean(TokenClass::ImagePositive.index()),
                mean_w_inv: mean(TokenClass::ImageInvariant.index()),
                mean_w_neg: mean(TokenClass::ImageNegative.index()),
            });
            step += 1;
        }
    }
    if !params.is_finite() {
        return Err(Error::Divergence {
            step,
            loss: f64::NAN,
        });
    }
    Ok(TrainOutcome { params, log })
}
