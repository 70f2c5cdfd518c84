//! Per-token loss weights derived from visual dependence.
//!
//! Raw weights emphasise either image-negative tokens (`-d` for `d <= 0`) or
//! image-positive tokens (`d` for `d > 0`). They are turned into loss
//! weights with a temperature softmax scaled by the sequence length, so the
//! weights of one sequence always sum to its length. The EOS weight is then
//! clamped to at least 1, and nothing is re-weighted before training has
//! progressed past `start_fraction`.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dependence::DependenceProfile;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    /// Plain maximum likelihood.
    #[serde(rename = "mle")]
    Vanilla,
    #[serde(rename = "wneg")]
    EmphasizeNegative,
    #[serde(rename = "wpos")]
    EmphasizePositive,
}

impl LossMode {
    pub fn as_str(self) -> &'static str {
        match self {
            LossMode::Vanilla => "mle",
            LossMode::EmphasizeNegative => "wneg",
            LossMode::EmphasizePositive => "wpos",
        }
    }
}

impl FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mle" | "vanilla" => Ok(LossMode::Vanilla),
            "wneg" => Ok(LossMode::EmphasizeNegative),
            "wpos" => Ok(LossMode::EmphasizePositive),
            other => Err(Error::InvalidArgument(format!(
                "unknown loss mode '{other}' (expected mle, wneg or wpos)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReweightConfig {
    pub mode: LossMode,
    pub tau: f64,
    pub start_fraction: f64,
    pub eos_floor: bool,
}

impl Default for ReweightConfig {
    fn default() -> Self {
        ReweightConfig {
            mode: LossMode::Vanilla,
            tau: 0.5,
            start_fraction: 0.5,
            eos_floor: true,
        }
    }
}

impl ReweightConfig {
    pub fn with_mode(mode: LossMode) -> Self {
        ReweightConfig {
            mode,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidArgument(format!("tau must be >= 0, got {}", self.tau)));
        }
        if !(0.0..=1.0).contains(&self.start_fraction) {
            return Err(Error::InvalidArgument(format!(
                "start fraction must be in [0, 1], got {}",
                self.start_fraction
            )));
        }
        Ok(())
    }
}

/// Loss weights for one sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    weights: Vec<f64>,
}

impl WeightVector {
    /// Uniform weights of 1.
    pub fn ones(seq_len: usize) -> Self {
        WeightVector {
            weights: vec![1.0; seq_len],
        }
    }

    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidArgument(format!("loss weight {w} is not a finite non-negative value")));
        }
        Ok(WeightVector { weights })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn seq_len(&self) -> usize {
        self.weights.len()
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }
}

pub fn raw_weight(d: f64, mode: LossMode) -> Result<f64> {
    if !(-1.0..=1.0).contains(&d) {
        return Err(Error::InvalidArgument(format!("dependence {d} outside [-1, 1]")));
    }
    Ok(match mode {
        LossMode::EmphasizeNegative => {
            if d <= 0.0 {
                -d
            } else {
                0.0
            }
        }
        LossMode::EmphasizePositive => {
            if d > 0.0 {
                d
            } else {
                0.0
            }
        }
        LossMode::Vanilla => 0.0,
    })
}

/// `w_t = T * exp(tau r_t) / sum_j exp(tau r_j)` over one sequence.
pub fn normalize_weights(raw: &[f64], tau: f64) -> Result<WeightVector> {
    if raw.is_empty() {
        return Err(Error::InvalidArgument("cannot normalise an empty weight list".into()));
    }
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(Error::InvalidArgument(format!("tau must be >= 0, got {tau}")));
    }
    let n = raw.len();
    if tau == 0.0 || raw.iter().all(|&r| r == raw[0]) {
        return Ok(WeightVector::ones(n));
    }
    let scaled: Vec<f64> = raw.iter().map(|r| tau * r).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let t = n as f64;
    Ok(WeightVector {
        weights: exps.iter().map(|e| t * e / z).collect(),
    })
}

pub fn apply_eos_floor(mut w: WeightVector, eos_index: Option<usize>) -> Result<WeightVector> {
    if let Some(i) = eos_index {
        let n = w.weights.len();
        let slot = w.weights.get_mut(i).ok_or_else(|| {
            Error::InvalidArgument(format!("eos index {i} out of bounds for length {n}"))
        })?;
        if *slot < 1.0 {
            *slot = 1.0;
        }
    }
    Ok(w)
}

/// Weights used by the trainer at training progress `progress` in `[0, 1]`.
pub fn training_weights(
    profile: &DependenceProfile,
    cfg: &ReweightConfig,
    progress: f64,
    eos_index: Option<usize>,
) -> Result<WeightVector> {
    cfg.validate()?;
    let n = profile.len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty dependence profile".into()));
    }
    if cfg.mode == LossMode::Vanilla || progress < cfg.start_fraction {
        return Ok(WeightVector::ones(n));
    }
    let raw = profile
        .values()
        .iter()
        .map(|&d| raw_weight(d, cfg.mode))
        .collect::<Result<Vec<_>>>()?;
    let w = normalize_weights(&raw, cfg.tau)?;
    if cfg.eos_floor {
        apply_eos_floor(w, eos_index)
    } else {
        Ok(w)
    }
}
