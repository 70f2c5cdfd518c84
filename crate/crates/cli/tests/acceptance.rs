//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Criteria 7-9 are empirical claims about the synthetic task. Their outcome
//! is printed but, unless `VISDEP_STRICT=1`, does not fail the target; every
//! other criterion is a hard gate.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use visdep_core::filter::{apply_filter, score_corpus, FilterStrategy};
use visdep_core::halleval::{evaluate, Response, TokenMatcher};
use visdep_core::model::params::BLOCK_NAMES;
use visdep_core::model::{sequence_loss, train, ModelConfig, ModelParams, TrainConfig};
use visdep_core::pipeline::{evaluate_model, EvalConfig};
use visdep_core::reweight::{normalize_weights, raw_weight};
use visdep_core::synth::{generate_corpus, train_test_split, CorpusConfig, SyntheticScene, Vocabulary, BOS, EOS};
use visdep_core::{classify, visual_dependence, Execution, LossMode, ReweightConfig, TokenClass, WeightVector};

struct Outcome {
    id: u32,
    name: &'static str,
    pass: bool,
    gating: bool,
}

fn report(results: &mut Vec<Outcome>, id: u32, name: &'static str, pass: bool, detail: String, gating: bool) {
    println!("{} [{id:>2}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    results.push(Outcome { id, name, pass, gating });
}

fn eq1_oracle() -> (bool, String) {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    let mut invariants = true;
    for i in 0..100_000 {
        // Every 50th pair hits an exact 0 or 1 to cover the edges.
        let (a, b): (f64, f64) = match i % 50 {
            0 => (0.0, rng.random()),
            1 => (rng.random(), 0.0),
            2 => (1.0, rng.random()),
            3 => (0.0, 0.0),
            _ => (rng.random(), rng.random()),
        };
        let d = visual_dependence(a, b).unwrap();
        let expect = if a == 0.0 && b == 0.0 {
            0.0
        } else if a >= b {
            1.0 - b / a
        } else {
            a / b - 1.0
        };
        worst = worst.max((d - expect).abs());
        let back = visual_dependence(b, a).unwrap();
        invariants &= back == -d && (-1.0..=1.0).contains(&d);
    }
    let secs = start.elapsed().as_secs_f64();
    (
        worst <= 1e-12 && invariants && secs < 5.0,
        format!("max |err| {worst:.1e}, antisymmetry and range {}, {secs:.2}s", if invariants { "hold" } else { "broken" }),
    )
}

fn boundaries() -> (bool, String) {
    let at_pos = classify(0.25).unwrap();
    let at_neg = classify(-0.25).unwrap();
    (
        at_pos == TokenClass::ImagePositive && at_neg == TokenClass::ImageInvariant,
        format!("d=0.25 -> {at_pos}, d=-0.25 -> {at_neg}"),
    )
}

fn normalisation() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let modes = [LossMode::EmphasizeNegative, LossMode::EmphasizePositive];
    let (mut worst, mut ones, mut ordered) = (0.0f64, true, true);
    for _ in 0..10_000 {
        let n = rng.random_range(1..=2048);
        let mode = modes[rng.random_range(0..2)];
        let raw: Vec<f64> = (0..n).map(|_| raw_weight(rng.random_range(-1.0..=1.0), mode).unwrap()).collect();
        let tau = rng.random_range(0.0..=4.0);
        let w = normalize_weights(&raw, tau).unwrap();
        let w = w.weights();
        worst = worst.max((w.iter().sum::<f64>() - n as f64).abs() / n as f64);
        for _ in 0..8 {
            let (i, j) = (rng.random_range(0..n), rng.random_range(0..n));
            if raw[i] > raw[j] && w[i] < w[j] {
                ordered = false;
            }
        }
        ones &= normalize_weights(&raw, 0.0).unwrap().weights().iter().all(|&x| x == 1.0);
    }
    (
        worst <= 1e-9 && ones && ordered,
        format!("max relative sum error {worst:.1e}, tau=0 all ones {ones}, order preserved {ordered}"),
    )
}

fn gradient_check() -> (bool, String) {
    const EPS: f64 = 1e-4;
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut blocks_seen = BTreeSet::new();
    for seed in 1..=3u64 {
        let cfg = ModelConfig { vocab_size: 9, cond_dim: 4, d_emb: 3, d_hid: 5 };
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let mut p = ModelParams::init(cfg, seed);
        for b in p.blocks_mut() {
            b.data.iter_mut().for_each(|x| *x += rng.random_range(-0.3..0.3));
        }
        let c: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut seq = vec![BOS];
        seq.extend((0..4).map(|_| rng.random_range(2..9u32)));
        seq.push(EOS);
        let w = WeightVector::from_weights((0..5).map(|_| rng.random_range(0.2..2.0)).collect()).unwrap();
        let loss = |q: &ModelParams| sequence_loss(q, &c, &seq, &w).unwrap().0;
        let (_, grad) = sequence_loss(&p, &c, &seq, &w).unwrap();
        for bi in 0..BLOCK_NAMES.len() {
            for k in 0..p.blocks()[bi].data.len() {
                let mut plus = p.clone();
                plus.blocks_mut()[bi].data[k] += EPS;
                let mut minus = p.clone();
                minus.blocks_mut()[bi].data[k] -= EPS;
                let numeric = (loss(&plus) - loss(&minus)) / (2.0 * EPS);
                let analytic = grad.blocks()[bi].data[k];
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-9);
                worst = worst.max(rel);
                blocks_seen.insert(bi);
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    (
        worst < 1e-4 && blocks_seen.len() == 16 && secs < 30.0,
        format!("worst relative error {worst:.1e} over {} blocks, {secs:.2}s", blocks_seen.len()),
    )
}

fn gating() -> (bool, String) {
    let corpus = generate_corpus(&CorpusConfig { num_scenes: 200, ..Default::default() }).unwrap();
    let base = TrainConfig { batch_size: 8, learning_rate: 1e-2, seed: 5, d_emb: 16, d_hid: 24, ..Default::default() };
    let vanilla = train(&corpus, &TrainConfig { reweight: ReweightConfig::with_mode(LossMode::Vanilla), ..base.clone() })
        .unwrap();
    let gated = train(
        &corpus,
        &TrainConfig {
            reweight: ReweightConfig { start_fraction: 1.0, ..ReweightConfig::with_mode(LossMode::EmphasizeNegative) },
            ..base
        },
    )
    .unwrap();
    let same = gated.params == vanilla.params;
    (same, format!("{} parameters {}", vanilla.params.num_params(), if same { "bit-identical" } else { "differ" }))
}

fn chair_oracle() -> (bool, String) {
    let vocab = Vocabulary::new(40);
    let names: HashMap<String, u32> = (0..40).map(|o| (vocab.object_name(o).to_string(), o)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut responses = Vec::new();
    let mut truths: Vec<BTreeSet<u32>> = Vec::new();
    for _ in 0..1000 {
        let len = rng.random_range(0..30);
        let mut toks: Vec<u32> = (0..len).map(|_| rng.random_range(2..vocab.size() as u32)).collect();
        if rng.random_bool(0.7) {
            toks.push(EOS);
        }
        responses.push(Response::from_tokens(toks, &vocab));
        truths.push((0..rng.random_range(0..6)).map(|_| rng.random_range(0..40)).collect());
    }
    let r = evaluate(&responses, &truths, &TokenMatcher { vocab: &vocab }).unwrap();

    let (mut with_h, mut mentions, mut halluc, mut truth_n, mut recalled, mut len) = (0, 0, 0, 0, 0, 0);
    for (resp, truth) in responses.iter().zip(&truths) {
        let said: Vec<u32> = resp.surfaces.iter().filter_map(|s| names.get(s).copied()).collect();
        mentions += said.len();
        let bad = said.iter().filter(|o| !truth.contains(o)).count();
        halluc += bad;
        with_h += usize::from(bad > 0);
        truth_n += truth.len();
        recalled += truth.iter().filter(|t| said.contains(t)).count();
        len += resp.surfaces.iter().filter(|s| *s != "<eos>").count();
    }
    let expect = [
        with_h as f64 / 1000.0,
        halluc as f64 / mentions as f64,
        recalled as f64 / truth_n as f64,
        len as f64 / 1000.0,
    ];
    let got = [r.chair_s, r.chair_i, r.recall, r.mean_len];
    let worst = got.iter().zip(&expect).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    (worst <= 1e-12, format!("max |diff| {worst:.1e} over CHAIR_S, CHAIR_I, recall, length"))
}

#[derive(Default, Clone, Copy)]
struct Metrics {
    chair_i: f64,
    recall: f64,
    mean_len: f64,
    within_pos: f64,
    within_inv: f64,
}

impl Metrics {
    fn add(&mut self, o: &Metrics, k: f64) {
        self.chair_i += o.chair_i / k;
        self.recall += o.recall / k;
        self.mean_len += o.mean_len / k;
        self.within_pos += o.within_pos / k;
        self.within_inv += o.within_inv / k;
    }
}

const SEEDS: [u64; 3] = [1, 2, 3];

/// Three-seed means for every arm of the end-to-end protocol.
fn end_to_end() -> BTreeMap<&'static str, Metrics> {
    let corpus = generate_corpus(&CorpusConfig::default()).unwrap();
    let (train_set, test) = train_test_split(&corpus, 0.2, 42).unwrap();
    let ecfg = EvalConfig { seed: 42, ..Default::default() };
    let run = |scenes: &[SyntheticScene], cfg: &TrainConfig| -> (ModelParams, Metrics) {
        let params = train(scenes, cfg).unwrap().params;
        let ev = evaluate_model(&params, &test, &ecfg, Execution::Parallel).unwrap();
        let w = ev.cooccurrence.within_fraction;
        let m = Metrics {
            chair_i: ev.report.chair_i,
            recall: ev.report.recall,
            mean_len: ev.report.mean_len,
            within_pos: w[TokenClass::ImagePositive.index()].unwrap_or(f64::NAN),
            within_inv: w[TokenClass::ImageInvariant.index()].unwrap_or(f64::NAN),
        };
        (params, m)
    };
    let mut means: BTreeMap<&'static str, Metrics> = BTreeMap::new();
    let k = SEEDS.len() as f64;
    for seed in SEEDS {
        let base = TrainConfig { batch_size: 4, learning_rate: 1e-2, seed, ..Default::default() };
        let with = |mode| TrainConfig { reweight: ReweightConfig::with_mode(mode), ..base.clone() };
        let (mle_params, mle) = run(&train_set, &with(LossMode::Vanilla));
        let (_, wneg) = run(&train_set, &with(LossMode::EmphasizeNegative));
        let (_, wpos) = run(&train_set, &with(LossMode::EmphasizePositive));
        let scores = score_corpus(&train_set, &mle_params, 900, 42, 1, Execution::Parallel).unwrap();
        let filtered = |s| apply_filter(&scores, s, 0.1, 42).unwrap().apply_to(&train_set);
        let (_, high) = run(&filtered(FilterStrategy::RemoveHighest), &base);
        let (_, low) = run(&filtered(FilterStrategy::RemoveLowest), &base);
        for (name, m) in [("mle", mle), ("wneg", wneg), ("wpos", wpos), ("drop_highest", high), ("drop_lowest", low)] {
            println!(
                "     seed {seed} {name:<12} chair_i {:.4} recall {:.4} len {:.2} within3 pos {:.3} inv {:.3}",
                m.chair_i, m.recall, m.mean_len, m.within_pos, m.within_inv
            );
            means.entry(name).or_default().add(&m, k);
        }
    }
    means
}

fn reproducibility() -> (bool, String) {
    let bin = env!("CARGO_BIN_EXE_visdep");
    let stages = |dir: &Path| -> Vec<Vec<String>> {
        let d = |f: &str| dir.join(f).to_string_lossy().into_owned();
        let tiny = "--epochs 1 --batch-size 8 --lr 1e-2 --d-emb 12 --d-hid 16";
        [
            "synth --scenes 200 --seed 5".to_string(),
            format!("train --loss wneg --seed 5 {tiny}"),
            "eval --seed 5".into(),
            "analyze".into(),
            "filter --strategy highest --frac 0.1 --seed 5".into(),
            format!("plot --analysis {} --scores {} --limit 4", d("analysis.csv"), d("scores.csv")),
            format!("sweep --axis tau --values 0.5,1 --max-len 30 --seed 5 {tiny}"),
        ]
        .iter()
        .map(|s| {
            let mut v: Vec<String> = s.split_whitespace().map(String::from).collect();
            v.extend(["--out-dir".into(), dir.to_string_lossy().into_owned()]);
            v
        })
        .collect()
    };
    let run_all = |dir: &Path| {
        for argv in stages(dir) {
            let o = Command::new(bin).args(&argv).env_remove("VISDEP_OUT").output().unwrap();
            assert!(o.status.success(), "{argv:?}: {}", String::from_utf8_lossy(&o.stderr));
        }
    };
    let snapshot = |dir: &Path| -> BTreeMap<String, Vec<u8>> {
        let mut out = BTreeMap::new();
        let mut stack = vec![dir.to_path_buf()];
        while let Some(p) = stack.pop() {
            for e in fs::read_dir(&p).unwrap() {
                let path = e.unwrap().path();
                if path.is_dir() {
                    stack.push(path);
                } else {
                    let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                    out.insert(rel, fs::read(&path).unwrap());
                }
            }
        }
        out
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_all(a.path());
    let first = snapshot(a.path());
    run_all(a.path());
    let second = snapshot(a.path());
    run_all(b.path());
    // run.json records the out-dir, so across directories only the data
    // artifacts are compared.
    let elsewhere: BTreeMap<_, _> = snapshot(b.path())
        .into_iter()
        .filter(|(k, _)| k != "run.json" && !k.starts_with("runs"))
        .collect();
    let first_data: BTreeMap<_, _> = first
        .iter()
        .filter(|(k, _)| *k != "run.json" && !k.starts_with("runs"))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    let same_dir = first == second;
    let other_dir = first_data == elsewhere;
    (
        same_dir && other_dir,
        format!(
            "{} files byte-identical on re-run: {same_dir}; {} data files identical in a fresh directory: {other_dir}",
            first.len(),
            first_data.len()
        ),
    )
}

fn main() {
    let strict = std::env::var("VISDEP_STRICT").is_ok_and(|v| v == "1");
    let mut results = Vec::new();
    let start = Instant::now();

    let (p, d) = eq1_oracle();
    report(&mut results, 1, "dependence formula oracle", p, d, true);
    let (p, d) = boundaries();
    report(&mut results, 2, "class boundaries", p, d, true);
    let (p, d) = normalisation();
    report(&mut results, 3, "weight normalisation", p, d, true);
    let (p, d) = gradient_check();
    report(&mut results, 4, "gradient check", p, d, true);
    let (p, d) = gating();
    report(&mut results, 5, "late-start gating equals MLE", p, d, true);
    let (p, d) = chair_oracle();
    report(&mut results, 6, "CHAIR brute-force oracle", p, d, true);

    println!("     end-to-end protocol: 2 epochs, seeds {SEEDS:?}, means reported");
    let t = Instant::now();
    let m = end_to_end();
    let (mle, wneg, wpos, high, low) = (m["mle"], m["wneg"], m["wpos"], m["drop_highest"], m["drop_lowest"]);
    println!("     end-to-end runtime {:.0}s", t.elapsed().as_secs_f64());

    let reduction = 1.0 - wneg.chair_i / mle.chair_i;
    let len_ratio = wneg.mean_len / mle.mean_len - 1.0;
    let recall_drop = mle.recall - wneg.recall;
    report(
        &mut results,
        7,
        "w_neg reduces hallucination",
        reduction >= 0.20 && len_ratio.abs() <= 0.10 && recall_drop <= 0.05,
        format!(
            "CHAIR_I {:.4} -> {:.4} ({:+.1}%, need <= -20%), length {:+.1}% (need within 10%), recall drop {:.3} (need <= 0.05)",
            mle.chair_i,
            wneg.chair_i,
            -100.0 * reduction,
            100.0 * len_ratio,
            recall_drop
        ),
        false,
    );
    report(
        &mut results,
        8,
        "w_pos raises recall and hallucination",
        wpos.recall >= mle.recall && wpos.chair_i >= mle.chair_i,
        format!(
            "recall {:.4} -> {:.4}, CHAIR_I {:.4} -> {:.4}",
            mle.recall, wpos.recall, mle.chair_i, wpos.chair_i
        ),
        false,
    );
    report(
        &mut results,
        9,
        "dependence-ranked filtering",
        high.chair_i < mle.chair_i && high.recall < mle.recall && low.chair_i < mle.chair_i
            && (low.recall - mle.recall).abs() <= 0.01,
        format!(
            "drop highest: CHAIR_I {:.4} recall {:.4}; drop lowest: CHAIR_I {:.4} recall {:.4}; none: CHAIR_I {:.4} recall {:.4}",
            high.chair_i, high.recall, low.chair_i, low.recall, mle.chair_i, mle.recall
        ),
        false,
    );
    report(
        &mut results,
        10,
        "hallucinations sit near image-invariant tokens",
        mle.within_inv > mle.within_pos,
        format!("within-3 fraction invariant {:.3} vs positive {:.3}", mle.within_inv, mle.within_pos),
        true,
    );
    let (p, d) = reproducibility();
    report(&mut results, 11, "byte-identical re-runs", p, d, true);

    let passed = results.iter().filter(|r| r.pass).count();
    println!("{passed}/{} criteria pass, {:.0}s total", results.len(), start.elapsed().as_secs_f64());
    let blocking: Vec<&Outcome> = results.iter().filter(|r| !r.pass && (r.gating || strict)).collect();
    for r in &results {
        if !r.pass && !r.gating && !strict {
            println!("note: criterion {} ({}) is reported, not enforced", r.id, r.name);
        }
    }
    if !blocking.is_empty() {
        eprintln!("blocking failures: {:?}", blocking.iter().map(|r| r.id).collect::<Vec<_>>());
        std::process::exit(1);
    }
}
