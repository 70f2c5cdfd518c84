//! Rank training samples by total visual dependence and drop a fraction.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dependence::{profile_trace, sample_dependence};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{dependence_trace, ModelParams};
use crate::noise::{corrupt_for_sample, NoiseSchedule, DEFAULT_NUM_STEPS};
use crate::seed::stream_rng;
use crate::synth::{SyntheticScene, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterStrategy {
    #[serde(rename = "highest")]
    RemoveHighest,
    #[serde(rename = "lowest")]
    RemoveLowest,
    #[serde(rename = "random")]
    RemoveRandom,
}

impl FromStr for FilterStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "highest" => Ok(FilterStrategy::RemoveHighest),
            "lowest" => Ok(FilterStrategy::RemoveLowest),
            "random" => Ok(FilterStrategy::RemoveRandom),
            other => Err(Error::InvalidArgument(format!(
                "unknown filter strategy '{other}' (expected highest, lowest or random)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterManifest {
    pub strategy: FilterStrategy,
    pub fraction: f64,
    pub seed: u64,
    pub kept: Vec<String>,
    pub removed: Vec<String>,
    pub scores: BTreeMap<String, f64>,
}

impl FilterManifest {
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, self).map_err(|e| Error::io(path, e.into()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })
    }

    /// Scenes of `corpus` that the manifest keeps, in corpus order.
    pub fn apply_to(&self, corpus: &[SyntheticScene]) -> Vec<SyntheticScene> {
        let removed: std::collections::BTreeSet<&str> = self.removed.iter().map(String::as_str).collect();
        corpus
            .iter()
            .filter(|s| !removed.contains(s.scene_id.as_str()))
            .cloned()
            .collect()
    }
}

/// Teacher-forced total dependence of every caption under `params`.
/// `draws > 1` averages the sum over independent noise draws.
pub fn score_corpus(
    corpus: &[SyntheticScene],
    params: &ModelParams,
    noise_step: usize,
    seed: u64,
    draws: usize,
    exec: Execution,
) -> Result<BTreeMap<String, f64>> {
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("cannot score an empty corpus".into()));
    }
    if draws == 0 {
        return Err(Error::InvalidArgument("need at least one noise draw".into()));
    }
    let vocab = Vocabulary::new(corpus[0].num_objects());
    let schedule = NoiseSchedule::new(DEFAULT_NUM_STEPS)?;
    let scored = exec.map(corpus, |scene| -> Result<(String, f64)> {
        let mut total = 0.0;
        for draw in 0..draws {
            let noisy = corrupt_for_sample(
                &scene.feature,
                noise_step,
                &schedule,
                seed,
                &scene.scene_id,
                &[b"score", &(draw as u64).to_le_bytes()],
            )?;
            let trace = dependence_trace(params, &vocab, &scene.scene_id, &scene.feature, &noisy, &scene.caption)?;
            total += sample_dependence(&profile_trace(&trace)?)?;
        }
        Ok((scene.scene_id.clone(), total / draws as f64))
    });
    scored.into_iter().collect()
}

pub fn apply_filter(
    scores: &BTreeMap<String, f64>,
    strategy: FilterStrategy,
    fraction: f64,
    seed: u64,
) -> Result<FilterManifest> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "filter fraction must be in (0, 1), got {fraction}"
        )));
    }
    let n_remove = (fraction * scores.len() as f64).round() as usize;
    // BTreeMap iteration is already in id order; stable sorts keep that
    // order among equal scores.
    let mut ids: Vec<(&String, f64)> = scores.iter().map(|(k, &v)| (k, v)).collect();
    match strategy {
        FilterStrategy::RemoveHighest => ids.sort_by(|a, b| b.1.total_cmp(&a.1)),
        FilterStrategy::RemoveLowest => ids.sort_by(|a, b| a.1.total_cmp(&b.1)),
        FilterStrategy::RemoveRandom => ids.shuffle(&mut stream_rng(seed, &[b"filter"])),
    }
    let removed_set: std::collections::BTreeSet<&String> = ids[..n_remove].iter().map(|x| x.0).collect();
    let (removed, kept): (Vec<String>, Vec<String>) = scores
        .keys()
        .cloned()
        .partition(|k| removed_set.contains(k));
    Ok(FilterManifest {
        strategy,
        fraction,
        seed,
        kept,
        removed,
        scores: scores.clone(),
    })
}
