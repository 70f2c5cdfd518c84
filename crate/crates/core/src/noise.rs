//! Forward-diffusion corruption of conditioning vectors.
//!
//! A linear variance schedule `beta_1..beta_N` from 1e-4 to 0.02 defines the
//! cumulative signal fraction `alpha_bar_t = prod_{s<=t} (1 - beta_s)`; a
//! vector corrupted to step `t` is `sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps`.
//! Step 0 is the clean input.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::stream_rng;

pub const DEFAULT_NUM_STEPS: usize = 1000;
pub const DEFAULT_NOISE_STEP: usize = 900;
pub const BETA_START: f64 = 1e-4;
pub const BETA_END: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    num_steps: usize,
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(num_steps: usize) -> Result<Self> {
        if num_steps < 1 {
            return Err(Error::InvalidArgument(
                "noise schedule needs at least one step".into(),
            ));
        }
        let betas: Vec<f64> = if num_steps == 1 {
            vec![BETA_START]
        } else {
            let span = (num_steps - 1) as f64;
            (0..num_steps)
                .map(|i| BETA_START + (BETA_END - BETA_START) * i as f64 / span)
                .collect()
        };
        let alpha_bars = betas
            .iter()
            .scan(1.0_f64, |acc, b| {
                *acc *= 1.0 - b;
                Some(*acc)
            })
            .collect();
        Ok(NoiseSchedule {
            num_steps,
            betas,
            alpha_bars,
        })
    }

    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// `alpha_bars()[t - 1]` is the signal fraction at step `t`.
    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    /// Signal fraction at `step`; step 0 is 1.
    pub fn alpha_bar(&self, step: usize) -> Result<f64> {
        match step {
            0 => Ok(1.0),
            s if s <= self.num_steps => Ok(self.alpha_bars[s - 1]),
            s => Err(Error::InvalidArgument(format!(
                "noise step {s} outside [0, {}]",
                self.num_steps
            ))),
        }
    }

    /// Corrupt `x0` to `step` with noise drawn from `rng`.
    pub fn corrupt_with<R: Rng + ?Sized>(&self, x0: &[f64], step: usize, rng: &mut R) -> Result<Vec<f64>> {
        if x0.is_empty() {
            return Err(Error::InvalidArgument("cannot corrupt an empty vector".into()));
        }
        let ab = self.alpha_bar(step)?;
        if step == 0 {
            return Ok(x0.to_vec());
        }
        let signal = ab.sqrt();
        let noise = (1.0 - ab).sqrt();
        Ok(x0
            .iter()
            .map(|&x| {
                let eps: f64 = rng.sample(StandardNormal);
                signal * x + noise * eps
            })
            .collect())
    }
}

pub fn make_schedule(num_steps: usize) -> Result<NoiseSchedule> {
    NoiseSchedule::new(num_steps)
}

/// Corrupt `x0` to `step`; the noise is a deterministic function of `rng_seed`.
pub fn corrupt(x0: &[f64], step: usize, schedule: &NoiseSchedule, rng_seed: u64) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    schedule.corrupt_with(x0, step, &mut rng)
}

/// Corrupt with an RNG stream derived from `(rng_seed, sample_id, extra labels)`,
/// so samples processed in parallel draw independent noise.
pub fn corrupt_for_sample(
    x0: &[f64],
    step: usize,
    schedule: &NoiseSchedule,
    rng_seed: u64,
    sample_id: &str,
    extra: &[&[u8]],
) -> Result<Vec<f64>> {
    let mut labels: Vec<&[u8]> = vec![b"noise", sample_id.as_bytes()];
    labels.extend_from_slice(extra);
    let mut rng = stream_rng(rng_seed, &labels);
    schedule.corrupt_with(x0, step, &mut rng)
}
