//! Generate captions for held-out scenes and evaluate them.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::dependence::{profile_trace, DependenceProfile};
use crate::error::Result;
use crate::exec::Execution;
use crate::halleval::{
    class_object_counts, co_occurrence, evaluate, ClassObjectCounts, CoOccurrenceHistogram,
    HallucinationReport, Response, TokenMatcher, DEFAULT_WINDOW,
};
use crate::model::{dependence_trace, generate, ModelParams};
use crate::noise::{corrupt_for_sample, NoiseSchedule, DEFAULT_NUM_STEPS};
use crate::synth::{SyntheticScene, Vocabulary};
use crate::trace::{TokenTrace, TraceFile, TraceHeader};

/// Longest generated caption, in tokens including `<bos>`.
pub const DEFAULT_MAX_LEN: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub noise_step: usize,
    pub seed: u64,
    pub max_len: usize,
    pub window: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            noise_step: crate::noise::DEFAULT_NOISE_STEP,
            seed: 0,
            max_len: DEFAULT_MAX_LEN,
            window: DEFAULT_WINDOW,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: HallucinationReport,
    pub class_counts: ClassObjectCounts,
    pub cooccurrence: CoOccurrenceHistogram,
    pub traces: TraceFile,
    pub profiles: Vec<DependenceProfile>,
    pub responses: Vec<Response>,
}

/// Greedy-decode every scene, score the generations against the ground
/// truth, and profile each generation's visual dependence.
pub fn evaluate_model(
    params: &ModelParams,
    scenes: &[SyntheticScene],
    cfg: &EvalConfig,
    exec: Execution,
) -> Result<Evaluation> {
    let num_objects = scenes.first().map_or(params.config.cond_dim, SyntheticScene::num_objects);
    let vocab = Vocabulary::new(num_objects);
    let schedule = NoiseSchedule::new(DEFAULT_NUM_STEPS)?;
    let per_scene = exec.map(scenes, |scene| -> Result<(Response, TokenTrace)> {
        let generated = generate(params, &scene.feature, cfg.max_len)?;
        let noisy = corrupt_for_sample(
            &scene.feature,
            cfg.noise_step,
            &schedule,
            cfg.seed,
            &scene.scene_id,
            &[b"eval"],
        )?;
        let trace = dependence_trace(params, &vocab, &scene.scene_id, &scene.feature, &noisy, &generated)?;
        Ok((Response::from_tokens(generated[1..].to_vec(), &vocab), trace))
    });
    let mut responses = Vec::with_capacity(scenes.len());
    let mut traces = Vec::with_capacity(scenes.len());
    for r in per_scene {
        let (resp, trace) = r?;
        responses.push(resp);
        traces.push(trace);
    }
    let profiles = traces.iter().map(profile_trace).collect::<Result<Vec<_>>>()?;
    let truths: Vec<BTreeSet<u32>> = scenes.iter().map(SyntheticScene::truth_set).collect();
    let matcher = TokenMatcher { vocab: &vocab };
    let report = evaluate(&responses, &truths, &matcher)?;
    let class_counts = class_object_counts(&profiles, &responses, &truths, &matcher)?;
    let cooccurrence = co_occurrence(&profiles, &responses, &truths, &matcher, cfg.window)?;
    let header = TraceHeader::new(cfg.noise_step).with_generator("visdep toy captioner, greedy decode, teacher-forced re-scoring");
    Ok(Evaluation {
        report,
        class_counts,
        cooccurrence,
        traces: TraceFile::new(header, traces)?,
        profiles,
        responses,
    })
}
