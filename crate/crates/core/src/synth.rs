//! Synthetic scene-captioning corpus with controlled co-occurrence bias.
//!
//! A scene is a set of 3..=6 objects out of `vocab_objects`. Its "image" is
//! the multi-hot indicator of that set plus small Gaussian jitter, and its
//! caption lists every object once using a fixed template:
//!
//! ```text
//! <bos> the scene contains a O1 in view . there is also a O2 . and a O3 . and a O4 . <eos>
//! ```
//!
//! Bias pairs `(A, B, p)` model annotator habits: when `A` is present and `B`
//! is not, a mention of `B` is inserted right after `A` with probability
//! `p * hallucination_rate`. Those positions are recorded so every caption
//! token is attributable to a function word, a true object or an injected
//! hallucination.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::seed::stream_rng;

pub const MIN_OBJECTS: usize = 3;
pub const MAX_OBJECTS: usize = 6;
pub const DEFAULT_VOCAB_OBJECTS: usize = 40;
pub const DEFAULT_JITTER: f64 = 0.05;

pub const BOS: u32 = 0;
pub const EOS: u32 = 1;
pub const SEP: u32 = 2;
const SPECIALS: [&str; 3] = ["<bos>", "<eos>", "."];
/// The ten function words used by the caption template.
pub const FILLERS: [&str; 10] = [
    "the", "scene", "contains", "a", "in", "view", "and", "there", "is", "also",
];
const FIRST_OBJECT_ID: u32 = (SPECIALS.len() + FILLERS.len()) as u32;

// Token ids of the template words.
const THE: u32 = 3;
const SCENE: u32 = 4;
const CONTAINS: u32 = 5;
const A: u32 = 6;
const IN: u32 = 7;
const VIEW: u32 = 8;
const AND: u32 = 9;
const THERE: u32 = 10;
const IS: u32 = 11;
const ALSO: u32 = 12;

const OBJECT_NAMES: [&str; 80] = [
    "table", "chair", "dog", "frisbee", "keyboard", "mouse", "toothbrush", "sink", "surfboard",
    "wave", "bat", "glove", "fork", "knife", "skis", "pole", "person", "bicycle", "car",
    "motorcycle", "airplane", "bus", "train", "truck", "boat", "bench", "bird", "cat", "horse",
    "sheep", "cow", "elephant", "bear", "zebra", "giraffe", "backpack", "umbrella", "handbag",
    "tie", "suitcase", "kite", "skateboard", "bottle", "cup", "spoon", "bowl", "banana", "apple",
    "sandwich", "orange", "broccoli", "carrot", "pizza", "donut", "cake", "couch", "plant", "bed",
    "toilet", "tv", "laptop", "remote", "phone", "microwave", "oven", "toaster", "refrigerator",
    "book", "clock", "vase", "scissors", "teddy", "drier", "hydrant", "sign", "meter", "lamp",
    "rug", "window", "door",
];

/// Token vocabulary: specials, function words, then one token per object.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    surfaces: Vec<String>,
    num_objects: usize,
}

impl Vocabulary {
    pub fn new(num_objects: usize) -> Self {
        let mut surfaces: Vec<String> = SPECIALS.iter().chain(FILLERS.iter()).map(|s| s.to_string()).collect();
        surfaces.extend((0..num_objects).map(|i| match OBJECT_NAMES.get(i) {
            Some(name) => name.to_string(),
            None => format!("object{i}"),
        }));
        Vocabulary { surfaces, num_objects }
    }

    pub fn size(&self) -> usize {
        self.surfaces.len()
    }

    pub fn num_objects(&self) -> usize {
        self.num_objects
    }

    pub fn surface(&self, token: u32) -> &str {
        self.surfaces.get(token as usize).map(String::as_str).unwrap_or("<unk>")
    }

    pub fn surfaces(&self, tokens: &[u32]) -> Vec<String> {
        tokens.iter().map(|&t| self.surface(t).to_string()).collect()
    }

    pub fn object_token(&self, object: u32) -> u32 {
        FIRST_OBJECT_ID + object
    }

    /// Object id for an object token, `None` for function tokens.
    pub fn token_object(&self, token: u32) -> Option<u32> {
        token
            .checked_sub(FIRST_OBJECT_ID)
            .filter(|&o| (o as usize) < self.num_objects)
    }

    pub fn object_name(&self, object: u32) -> &str {
        self.surface(self.object_token(object))
    }

    /// Lowercase object names, indexed by object id.
    pub fn lexicon(&self) -> Vec<String> {
        (0..self.num_objects as u32)
            .map(|o| self.object_name(o).to_lowercase())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasPair {
    pub trigger: u32,
    pub partner: u32,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub num_scenes: usize,
    pub vocab_objects: usize,
    pub bias_pairs: Vec<BiasPair>,
    pub hallucination_rate: f64,
    pub seed: u64,
    pub jitter_std: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            num_scenes: 5000,
            vocab_objects: DEFAULT_VOCAB_OBJECTS,
            bias_pairs: default_bias_pairs(),
            hallucination_rate: DEFAULT_HALLUCINATION_RATE,
            seed: 42,
            jitter_std: DEFAULT_JITTER,
        }
    }
}

pub const DEFAULT_PAIR_PROBABILITY: f64 = 1.0;
pub const DEFAULT_HALLUCINATION_RATE: f64 = 1.0;

/// Eight disjoint pairs `(2i, 2i+1)`: table/chair, dog/frisbee, ...
pub fn default_bias_pairs() -> Vec<BiasPair> {
    (0..8)
        .map(|i| BiasPair {
            trigger: 2 * i,
            partner: 2 * i + 1,
            probability: DEFAULT_PAIR_PROBABILITY,
        })
        .collect()
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_scenes == 0 {
            return Err(Error::InvalidArgument("corpus needs at least one scene".into()));
        }
        if self.vocab_objects < MAX_OBJECTS {
            return Err(Error::InvalidArgument(format!(
                "object vocabulary must hold at least {MAX_OBJECTS} objects"
            )));
        }
        if !(0.0..=1.0).contains(&self.hallucination_rate) {
            return Err(Error::InvalidArgument("hallucination rate must be in [0, 1]".into()));
        }
        if !(self.jitter_std >= 0.0 && self.jitter_std.is_finite()) {
            return Err(Error::InvalidArgument("jitter std must be >= 0".into()));
        }
        for p in &self.bias_pairs {
            if p.trigger as usize >= self.vocab_objects || p.partner as usize >= self.vocab_objects {
                return Err(Error::InvalidArgument(format!(
                    "bias pair ({}, {}) references an unknown object",
                    p.trigger, p.partner
                )));
            }
            if p.trigger == p.partner {
                return Err(Error::InvalidArgument("bias pair must join two different objects".into()));
            }
            if !(0.0..=1.0).contains(&p.probability) {
                return Err(Error::InvalidArgument("bias probability must be in [0, 1]".into()));
            }
        }
        Ok(())
    }

    /// Expected injected mentions per scene and expected true mentions per
    /// scene, in closed form over the scene-size distribution.
    pub fn expected_mentions(&self) -> (f64, f64) {
        let v = self.vocab_objects as f64;
        let sizes = MIN_OBJECTS..=MAX_OBJECTS;
        let n_sizes = (MAX_OBJECTS - MIN_OBJECTS + 1) as f64;
        let mut injected = 0.0;
        let mut truth = 0.0;
        for k in sizes {
            let k = k as f64;
            // P(A in S, B not in S) for a uniform k-subset.
            let p_gap = (k / v) * ((v - k) / (v - 1.0));
            let per_pair: f64 = self
                .bias_pairs
                .iter()
                .map(|p| p.probability * self.hallucination_rate)
                .sum();
            injected += p_gap * per_pair / n_sizes;
            truth += k / n_sizes;
        }
        (injected, truth)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub scene_id: String,
    pub true_objects: Vec<u32>,
    pub feature: Vec<f64>,
    pub caption: Vec<u32>,
    pub caption_surfaces: Vec<String>,
    pub hallucinated_positions: Vec<usize>,
}

impl SyntheticScene {
    pub fn truth_set(&self) -> BTreeSet<u32> {
        self.true_objects.iter().copied().collect()
    }

    pub fn num_objects(&self) -> usize {
        self.feature.len()
    }
}

/// Render the caption template for an ordered list of mentions.
pub fn render_caption(mentions: &[u32], vocab: &Vocabulary) -> Vec<u32> {
    let mut caption = vec![BOS];
    for (i, &obj) in mentions.iter().enumerate() {
        match i {
            0 => caption.extend_from_slice(&[THE, SCENE, CONTAINS, A]),
            1 => caption.extend_from_slice(&[THERE, IS, ALSO, A]),
            _ => caption.extend_from_slice(&[AND, A]),
        }
        caption.push(vocab.object_token(obj));
        if i == 0 {
            caption.extend_from_slice(&[IN, VIEW]);
        }
        caption.push(SEP);
    }
    caption.push(EOS);
    caption
}

fn scene_id(index: usize) -> String {
    format!("scene-{index:06}")
}

fn generate_scene(cfg: &CorpusConfig, vocab: &Vocabulary, index: usize) -> SyntheticScene {
    let id = scene_id(index);
    let mut rng = stream_rng(cfg.seed, &[b"scene", id.as_bytes()]);
    let k = rng.random_range(MIN_OBJECTS..=MAX_OBJECTS);
    let all: Vec<u32> = (0..cfg.vocab_objects as u32).collect();
    let mut order: Vec<u32> = all.choose_multiple(&mut rng, k).copied().collect();
    order.shuffle(&mut rng);
    let truth: BTreeSet<u32> = order.iter().copied().collect();

    let jitter = Normal::new(0.0, cfg.jitter_std).expect("validated jitter");
    let feature: Vec<f64> = (0..cfg.vocab_objects as u32)
        .map(|o| {
            let base = if truth.contains(&o) { 1.0 } else { 0.0 };
            base + jitter.sample(&mut rng)
        })
        .collect();

    // Decide injections in pair order, then place each after its trigger.
    let mut injected: Vec<(u32, u32)> = Vec::new();
    for pair in &cfg.bias_pairs {
        let draw: f64 = rng.random();
        if truth.contains(&pair.trigger)
            && !truth.contains(&pair.partner)
            && !injected.iter().any(|&(_, b)| b == pair.partner)
            && draw < pair.probability * cfg.hallucination_rate
        {
            injected.push((pair.trigger, pair.partner));
        }
    }
    let mut mentions: Vec<(u32, bool)> = Vec::with_capacity(order.len() + injected.len());
    for &obj in &order {
        mentions.push((obj, false));
        for &(_, b) in injected.iter().filter(|(a, _)| *a == obj) {
            mentions.push((b, true));
        }
    }
    let objs: Vec<u32> = mentions.iter().map(|m| m.0).collect();
    let caption = render_caption(&objs, vocab);
    let hallucinated_positions = object_positions(&caption)
        .into_iter()
        .zip(&mentions)
        .filter(|(_, m)| m.1)
        .map(|(pos, _)| pos)
        .collect();
    SyntheticScene {
        scene_id: id,
        true_objects: truth.into_iter().collect(),
        feature,
        caption_surfaces: vocab.surfaces(&caption),
        caption,
        hallucinated_positions,
    }
}

/// Caption positions of object tokens (one per mention, template order).
fn object_positions(caption: &[u32]) -> Vec<usize> {
    caption
        .iter()
        .enumerate()
        .filter(|(_, &t)| t >= FIRST_OBJECT_ID)
        .map(|(i, _)| i)
        .collect()
}

pub fn generate_corpus(cfg: &CorpusConfig) -> Result<Vec<SyntheticScene>> {
    generate_corpus_with(cfg, Execution::Sequential)
}

/// Generate with an explicit execution strategy; the output does not depend
/// on it because every scene has its own RNG stream.
pub fn generate_corpus_with(cfg: &CorpusConfig, exec: Execution) -> Result<Vec<SyntheticScene>> {
    cfg.validate()?;
    let vocab = Vocabulary::new(cfg.vocab_objects);
    Ok(exec.map_range(cfg.num_scenes, |i| generate_scene(cfg, &vocab, i)))
}

/// Split into (train, test). Test captions are re-rendered from the true
/// objects only, so they carry no injected hallucinations.
pub fn train_test_split(
    scenes: &[SyntheticScene],
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<SyntheticScene>, Vec<SyntheticScene>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "test fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    let n = scenes.len();
    let n_test = (test_fraction * n as f64).round() as usize;
    if n_test == 0 || n_test == n {
        return Err(Error::InvalidArgument(format!(
            "test fraction {test_fraction} leaves an empty split for {n} scenes"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream_rng(seed, &[b"split"]));
    let mut is_test = vec![false; n];
    for &i in &idx[..n_test] {
        is_test[i] = true;
    }
    let mut train = Vec::with_capacity(n - n_test);
    let mut test = Vec::with_capacity(n_test);
    for (scene, t) in scenes.iter().zip(is_test) {
        if t {
            test.push(clean_caption(scene, seed));
        } else {
            train.push(scene.clone());
        }
    }
    Ok((train, test))
}

fn clean_caption(scene: &SyntheticScene, seed: u64) -> SyntheticScene {
    let vocab = Vocabulary::new(scene.num_objects());
    let mut order = scene.true_objects.clone();
    order.shuffle(&mut stream_rng(seed, &[b"test-caption", scene.scene_id.as_bytes()]));
    let caption = render_caption(&order, &vocab);
    SyntheticScene {
        caption_surfaces: vocab.surfaces(&caption),
        caption,
        hallucinated_positions: Vec::new(),
        ..scene.clone()
    }
}

/// How a caption token came to be there.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenOrigin {
    Function,
    TrueObject,
    Hallucination,
}

/// Attribute every caption token; errors if a token fits no category.
pub fn attribute_tokens(scene: &SyntheticScene) -> Result<Vec<TokenOrigin>> {
    let vocab = Vocabulary::new(scene.num_objects());
    let truth = scene.truth_set();
    scene
        .caption
        .iter()
        .enumerate()
        .map(|(pos, &tok)| match vocab.token_object(tok) {
            None => Ok(TokenOrigin::Function),
            Some(o) if scene.hallucinated_positions.contains(&pos) && !truth.contains(&o) => {
                Ok(TokenOrigin::Hallucination)
            }
            Some(o) if truth.contains(&o) && !scene.hallucinated_positions.contains(&pos) => {
                Ok(TokenOrigin::TrueObject)
            }
            Some(o) => Err(Error::invariant(
                format!("scene '{}'", scene.scene_id),
                format!("caption[{pos}]"),
                format!("object {o} is neither a true object nor a labelled hallucination"),
            )),
        })
        .collect()
}

pub fn write_corpus(scenes: &[SyntheticScene], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in scenes {
        serde_json::to_writer(&mut w, s).map_err(|e| Error::io(path, e.into()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<SyntheticScene>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut dim: Option<usize> = None;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let scene: SyntheticScene = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        let d = *dim.get_or_insert(scene.feature.len());
        if scene.feature.len() != d {
            return Err(Error::invariant(
                format!("scene '{}'", scene.scene_id),
                "feature",
                format!("length {} differs from corpus dimension {d}", scene.feature.len()),
            ));
        }
        attribute_tokens(&scene)?;
        out.push(scene);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> CorpusConfig {
        CorpusConfig {
            num_scenes: 300,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn template_and_invariants() {
        let scenes = generate_corpus(&small(1)).unwrap();
        let vocab = Vocabulary::new(40);
        for s in &scenes {
            assert!((MIN_OBJECTS..=MAX_OBJECTS).contains(&s.true_objects.len()));
            assert_eq!(s.caption[0], BOS);
            assert_eq!(*s.caption.last().unwrap(), EOS);
            // every true object mentioned exactly once
            for &o in &s.true_objects {
                let tok = vocab.object_token(o);
                assert_eq!(s.caption.iter().filter(|&&t| t == tok).count(), 1);
            }
            let origins = attribute_tokens(s).unwrap();
            assert_eq!(
                origins.iter().filter(|o| **o == TokenOrigin::Hallucination).count(),
                s.hallucinated_positions.len()
            );
            let recovered: Vec<u32> = s
                .feature
                .iter()
                .enumerate()
                .filter(|(_, &f)| f >= 0.5)
                .map(|(i, _)| i as u32)
                .collect();
            assert_eq!(recovered, s.true_objects);
            assert_eq!(s.caption_surfaces, vocab.surfaces(&s.caption));
        }
    }

    #[test]
    fn no_bias_no_hallucination() {
        let cfg = CorpusConfig {
            hallucination_rate: 0.0,
            ..small(3)
        };
        let scenes = generate_corpus(&cfg).unwrap();
        assert!(scenes.iter().all(|s| s.hallucinated_positions.is_empty()));
    }

    #[test]
    fn forced_bias() {
        let cfg = CorpusConfig {
            bias_pairs: vec![BiasPair { trigger: 0, partner: 1, probability: 1.0 }],
            hallucination_rate: 1.0,
            ..small(4)
        };
        let vocab = Vocabulary::new(40);
        let scenes = generate_corpus(&cfg).unwrap();
        let mut checked = 0;
        for s in scenes.iter().filter(|s| s.true_objects.contains(&0) && !s.true_objects.contains(&1)) {
            let pos_a = s.caption.iter().position(|&t| t == vocab.object_token(0)).unwrap();
            let pos_b = s.caption.iter().position(|&t| t == vocab.object_token(1)).unwrap();
            assert!(pos_b > pos_a);
            assert!(s.caption[pos_a + 1..pos_b].iter().all(|&t| t < FIRST_OBJECT_ID));
            assert_eq!(s.hallucinated_positions, vec![pos_b]);
            checked += 1;
        }
        assert!(checked > 0);
    }

    #[test]
    fn deterministic_and_strategy_independent() {
        let a = generate_corpus(&small(9)).unwrap();
        let b = generate_corpus_with(&small(9), Execution::Parallel).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_corpus(&small(10)).unwrap());
    }

    #[test]
    fn split_partitions() {
        let scenes = generate_corpus(&CorpusConfig { num_scenes: 100, ..small(2) }).unwrap();
        let (train, test) = train_test_split(&scenes, 0.2, 5).unwrap();
        assert_eq!((train.len(), test.len()), (80, 20));
        let ids: BTreeSet<&str> = train.iter().chain(&test).map(|s| s.scene_id.as_str()).collect();
        assert_eq!(ids.len(), 100);
        assert!(test.iter().all(|s| s.hallucinated_positions.is_empty()));
        for s in &test {
            assert_eq!(attribute_tokens(s).unwrap().iter().filter(|o| **o == TokenOrigin::Hallucination).count(), 0);
            assert_eq!(s.caption.iter().filter(|&&t| t >= FIRST_OBJECT_ID).count(), s.true_objects.len());
        }
        let (train2, test2) = train_test_split(&scenes, 0.2, 5).unwrap();
        assert_eq!((train, test), (train2, test2));
        assert!(train_test_split(&scenes, 0.0, 5).is_err());
        assert!(train_test_split(&scenes, 1.0, 5).is_err());
    }

    #[test]
    fn invalid_configs() {
        let mut c = small(1);
        c.bias_pairs.push(BiasPair { trigger: 99, partner: 1, probability: 0.5 });
        assert!(generate_corpus(&c).is_err());
        let c = CorpusConfig { hallucination_rate: 1.5, ..small(1) };
        assert!(generate_corpus(&c).is_err());
        let c = CorpusConfig { num_scenes: 0, ..small(1) };
        assert!(generate_corpus(&c).is_err());
    }

    #[test]
    fn corpus_roundtrip() {
        let scenes = generate_corpus(&CorpusConfig { num_scenes: 20, ..small(8) }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        write_corpus(&scenes, &p).unwrap();
        assert_eq!(read_corpus(&p).unwrap(), scenes);
    }
}
