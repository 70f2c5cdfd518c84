use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use visdep_core::filter::{apply_filter, score_corpus};
use visdep_core::halleval::{ClassObjectCounts, CoOccurrenceHistogram};
use visdep_core::model::{dependence_trace, train_from, ModelParams, TrainConfig};
use visdep_core::noise::{corrupt_for_sample, DEFAULT_NUM_STEPS};
use visdep_core::pipeline::{evaluate_model, EvalConfig};
use visdep_core::synth::{
    default_bias_pairs, generate_corpus_with, read_corpus, train_test_split, write_corpus, CorpusConfig,
    SyntheticScene, Vocabulary,
};
use visdep_core::trace::read_traces;
use visdep_core::{
    profile_trace, Error as CoreError, Execution, NoiseSchedule, ReweightConfig, TokenClass, TokenTrace,
};

use crate::args::*;
use crate::error::{CliError, Result};
use crate::svg;

/// Shared state for one invocation.
pub struct Ctx {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub exec: Execution,
    artifacts: Vec<String>,
}

/// What a command reports back for run.json.
pub struct Outcome {
    pub config: Value,
    pub artifacts: Vec<String>,
}

impl Ctx {
    pub fn new(seed: u64, out_dir: PathBuf, exec: Execution) -> Self {
        Ctx { seed, out_dir, exec, artifacts: Vec::new() }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn or_default(&self, given: &Option<PathBuf>, name: &str) -> PathBuf {
        given.clone().unwrap_or_else(|| self.path(name))
    }

    /// Record an artifact, relative to the out-dir, and hand back its path.
    fn artifact(&mut self, name: &str) -> Result<PathBuf> {
        let p = self.path(name);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
        self.artifacts.push(name.to_string());
        Ok(p)
    }

    fn finish(&mut self, config: Value) -> Outcome {
        Outcome { config, artifacts: std::mem::take(&mut self.artifacts) }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> CliError {
    CliError::Core(CoreError::Io { path: path.to_path_buf(), source })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serialisable");
    text.push('\n');
    write_text(path, &text)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| CliError::csv(path, e))
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Core(CoreError::InvalidArgument(msg.into()))
}

fn load_corpus(path: &Path) -> Result<Vec<SyntheticScene>> {
    let scenes = read_corpus(path)?;
    if scenes.is_empty() {
        return Err(CliError::Empty(format!("{} contains no scenes", path.display())));
    }
    Ok(scenes)
}

pub fn synth(ctx: &mut Ctx, a: &SynthArgs) -> Result<Outcome> {
    let bias_pairs = default_bias_pairs()
        .into_iter()
        .filter(|p| (p.partner as usize) < a.vocab_objects)
        .map(|mut p| {
            p.probability = a.pair_prob;
            p
        })
        .collect();
    let cfg = CorpusConfig {
        num_scenes: a.scenes,
        vocab_objects: a.vocab_objects,
        bias_pairs,
        hallucination_rate: a.hallucination_rate,
        seed: ctx.seed,
        jitter_std: a.jitter,
    };
    cfg.validate()?;
    if !(a.test_frac > 0.0 && a.test_frac < 1.0) {
        return Err(usage(format!("--test-frac must be in (0, 1), got {}", a.test_frac)));
    }
    let corpus = generate_corpus_with(&cfg, ctx.exec)?;
    let (train, test) = train_test_split(&corpus, a.test_frac, ctx.seed)?;
    write_corpus(&train, ctx.artifact("corpus.jsonl")?)?;
    write_corpus(&test, ctx.artifact("test.jsonl")?)?;
    Ok(ctx.finish(json!({ "corpus": cfg, "test_frac": a.test_frac, "train_scenes": train.len(), "test_scenes": test.len() })))
}

pub fn train_config(t: &TrainingFlags, seed: u64) -> Result<TrainConfig> {
    let cfg = TrainConfig {
        epochs: t.epochs,
        batch_size: t.batch_size,
        learning_rate: t.lr,
        optimizer: t.optimizer.into(),
        seed,
        reweight: ReweightConfig {
            mode: t.loss.into(),
            tau: t.tau,
            start_fraction: t.start_frac,
            eos_floor: !t.no_eos_floor,
        },
        noise_step: t.noise_step,
        clip_norm: (t.clip_norm != 0.0).then_some(t.clip_norm),
        d_emb: t.d_emb,
        d_hid: t.d_hid,
        noise_augment: t.noise_augment,
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn train(ctx: &mut Ctx, a: &TrainArgs) -> Result<Outcome> {
    let cfg = train_config(&a.training, ctx.seed)?;
    let corpus_path = ctx.or_default(&a.corpus, "corpus.jsonl");
    let corpus = load_corpus(&corpus_path)?;
    let init = a.init.as_ref().map(ModelParams::load).transpose()?;
    let out = train_from(&corpus, &cfg, init.as_ref(), ctx.exec)?;
    out.params.save(ctx.artifact("ckpt.json")?)?;
    out.log.write_csv(ctx.artifact("trainlog.csv")?)?;
    Ok(ctx.finish(json!({
        "corpus": corpus_path,
        "init": a.init,
        "train": cfg,
        "scenes": corpus.len(),
        "steps": out.log.rows.len(),
    })))
}

fn eval_config(noise_step: usize, e: &EvalFlags, seed: u64) -> Result<EvalConfig> {
    if noise_step > DEFAULT_NUM_STEPS {
        return Err(usage(format!("--noise-step must be in [0, {DEFAULT_NUM_STEPS}]")));
    }
    if e.max_len < 2 {
        return Err(usage("--max-len must be at least 2"));
    }
    Ok(EvalConfig { noise_step, seed, max_len: e.max_len, window: e.window })
}

fn write_class_counts(path: &Path, c: &ClassObjectCounts) -> Result<()> {
    let mut w = csv_writer(path)?;
    let wrap = |e| CliError::csv(path, e);
    w.write_record(["class", "grounded", "hallucinated", "grounded_distinct", "hallucinated_distinct"])
        .map_err(wrap)?;
    for class in TokenClass::ALL {
        let k = class.index();
        w.write_record([
            class.as_str().to_string(),
            c.grounded[k].to_string(),
            c.hallucinated[k].to_string(),
            c.grounded_distinct[k].to_string(),
            c.hallucinated_distinct[k].to_string(),
        ])
        .map_err(wrap)?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn write_cooccurrence(path: &Path, h: &CoOccurrenceHistogram) -> Result<()> {
    let mut w = csv_writer(path)?;
    let wrap = |e| CliError::csv(path, e);
    let mut header = vec!["class".to_string(), "within_fraction".into(), "absent".into()];
    header.extend((0..=h.window).map(|d| format!("d{d}")));
    header.push("far".into());
    w.write_record(&header).map_err(wrap)?;
    for class in TokenClass::ALL {
        let k = class.index();
        let mut row = vec![
            class.as_str().to_string(),
            h.within_fraction[k].map_or_else(String::new, |f| f.to_string()),
            h.absent[k].to_string(),
        ];
        row.extend(h.counts[k].iter().map(usize::to_string));
        w.write_record(&row).map_err(wrap)?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn eval(ctx: &mut Ctx, a: &EvalArgs) -> Result<Outcome> {
    let cfg = eval_config(a.noise_step, &a.eval, ctx.seed)?;
    let ckpt = ctx.or_default(&a.ckpt, "ckpt.json");
    let test = ctx.or_default(&a.test, "test.jsonl");
    let params = ModelParams::load(&ckpt)?;
    let scenes = load_corpus(&test)?;
    let ev = evaluate_model(&params, &scenes, &cfg, ctx.exec)?;
    write_json(&ctx.artifact("report.json")?, &ev.report)?;
    write_class_counts(&ctx.artifact("class_counts.csv")?, &ev.class_counts)?;
    write_cooccurrence(&ctx.artifact("cooccurrence.csv")?, &ev.cooccurrence)?;
    visdep_core::trace::write_traces(&ev.traces, ctx.artifact("traces.jsonl")?)?;
    Ok(ctx.finish(json!({ "ckpt": ckpt, "test": test, "eval": cfg })))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisRow {
    pub sample_id: String,
    pub t: usize,
    pub surface: String,
    pub p_clean: f64,
    pub p_noisy: f64,
    pub d: f64,
    pub class: String,
}

fn analysis_rows(traces: &[TokenTrace]) -> Result<Vec<AnalysisRow>> {
    let mut rows = Vec::new();
    for tr in traces {
        let profile = profile_trace(tr)?;
        for t in 0..tr.len() {
            rows.push(AnalysisRow {
                sample_id: tr.sample_id().to_string(),
                t,
                surface: tr.surfaces()[t].clone(),
                p_clean: tr.p_clean()[t],
                p_noisy: tr.p_noisy()[t],
                d: profile.values()[t],
                class: profile.classes()[t].as_str().to_string(),
            });
        }
    }
    Ok(rows)
}

fn model_traces(ctx: &Ctx, ckpt: &Path, corpus: &Path, noise_step: usize) -> Result<Vec<TokenTrace>> {
    let params = ModelParams::load(ckpt)?;
    let scenes = load_corpus(corpus)?;
    let vocab = Vocabulary::new(scenes[0].num_objects());
    let schedule = NoiseSchedule::new(DEFAULT_NUM_STEPS)?;
    ctx.exec
        .map(&scenes, |s| -> visdep_core::Result<TokenTrace> {
            let noisy = corrupt_for_sample(&s.feature, noise_step, &schedule, ctx.seed, &s.scene_id, &[b"analyze"])?;
            dependence_trace(&params, &vocab, &s.scene_id, &s.feature, &noisy, &s.caption)
        })
        .into_iter()
        .map(|r| r.map_err(CliError::from))
        .collect()
}

pub fn analyze(ctx: &mut Ctx, a: &AnalyzeArgs) -> Result<Outcome> {
    if a.noise_step > DEFAULT_NUM_STEPS {
        return Err(usage(format!("--noise-step must be in [0, {DEFAULT_NUM_STEPS}]")));
    }
    let (traces, source) = if a.ckpt.is_some() || a.corpus.is_some() {
        let ckpt = ctx.or_default(&a.ckpt, "ckpt.json");
        let corpus = ctx.or_default(&a.corpus, "corpus.jsonl");
        let traces = model_traces(ctx, &ckpt, &corpus, a.noise_step)?;
        (traces, json!({ "ckpt": ckpt, "corpus": corpus, "noise_step": a.noise_step }))
    } else {
        let path = ctx.or_default(&a.traces, "traces.jsonl");
        (read_traces(&path)?.into_traces(), json!({ "traces": path }))
    };
    let rows = analysis_rows(&traces)?;
    let path = ctx.artifact("analysis.csv")?;
    let mut w = csv_writer(&path)?;
    if rows.is_empty() {
        w.write_record(["sample_id", "t", "surface", "p_clean", "p_noisy", "d", "class"])
            .map_err(|e| CliError::csv(&path, e))?;
    }
    for r in &rows {
        w.serialize(r).map_err(|e| CliError::csv(&path, e))?;
    }
    w.flush().map_err(|e| io_err(&path, e))?;
    Ok(ctx.finish(json!({ "source": source, "traces": traces.len(), "rows": rows.len() })))
}

pub fn filter(ctx: &mut Ctx, a: &FilterArgs) -> Result<Outcome> {
    if !(a.frac > 0.0 && a.frac < 1.0) {
        return Err(usage(format!("--frac must be in (0, 1), got {}", a.frac)));
    }
    if a.noise_draws == 0 {
        return Err(usage("--noise-draws must be at least 1"));
    }
    if a.noise_step > DEFAULT_NUM_STEPS {
        return Err(usage(format!("--noise-step must be in [0, {DEFAULT_NUM_STEPS}]")));
    }
    let corpus_path = ctx.or_default(&a.corpus, "corpus.jsonl");
    let ckpt = ctx.or_default(&a.ckpt, "ckpt.json");
    let params = ModelParams::load(&ckpt)?;
    let corpus = load_corpus(&corpus_path)?;
    let scores = score_corpus(&corpus, &params, a.noise_step, ctx.seed, a.noise_draws, ctx.exec)?;
    let manifest = apply_filter(&scores, a.strategy.into(), a.frac, ctx.seed)?;
    manifest.write(ctx.artifact("manifest.json")?)?;

    let path = ctx.artifact("scores.csv")?;
    let mut w = csv_writer(&path)?;
    w.write_record(["sample_id", "score"]).map_err(|e| CliError::csv(&path, e))?;
    for (id, s) in &scores {
        w.write_record([id.clone(), s.to_string()]).map_err(|e| CliError::csv(&path, e))?;
    }
    w.flush().map_err(|e| io_err(&path, e))?;

    write_corpus(&manifest.apply_to(&corpus), ctx.artifact("filtered.jsonl")?)?;
    Ok(ctx.finish(json!({
        "corpus": corpus_path,
        "ckpt": ckpt,
        "strategy": a.strategy,
        "fraction": a.frac,
        "noise_step": a.noise_step,
        "noise_draws": a.noise_draws,
        "kept": manifest.kept.len(),
        "removed": manifest.removed.len(),
    })))
}

fn axis_name(axis: SweepAxis) -> &'static str {
    match axis {
        SweepAxis::Tau => "tau",
        SweepAxis::StartFrac => "start-frac",
        SweepAxis::NoiseStep => "noise-step",
    }
}

pub fn sweep(ctx: &mut Ctx, a: &SweepArgs) -> Result<Outcome> {
    let mut settings = Vec::with_capacity(a.values.len());
    for &v in &a.values {
        let mut flags = a.training.clone();
        match a.axis {
            SweepAxis::Tau => flags.tau = v,
            SweepAxis::StartFrac => flags.start_frac = v,
            SweepAxis::NoiseStep => {
                if v.fract() != 0.0 || v < 0.0 {
                    return Err(usage(format!("noise step must be a non-negative integer, got {v}")));
                }
                flags.noise_step = v as usize;
            }
        }
        let train_cfg = train_config(&flags, ctx.seed)?;
        let eval_cfg = eval_config(flags.noise_step, &a.eval, ctx.seed)?;
        settings.push((v, train_cfg, eval_cfg));
    }
    let corpus_path = ctx.or_default(&a.corpus, "corpus.jsonl");
    let test_path = ctx.or_default(&a.test, "test.jsonl");
    let corpus = load_corpus(&corpus_path)?;
    let test = load_corpus(&test_path)?;

    let name = axis_name(a.axis);
    let mut rows = Vec::with_capacity(settings.len());
    for (v, train_cfg, eval_cfg) in &settings {
        let out = train_from(&corpus, train_cfg, None, ctx.exec)?;
        let ev = evaluate_model(&out.params, &test, eval_cfg, ctx.exec)?;
        let dir = format!("{name}_{v}");
        out.log.write_csv(ctx.artifact(&format!("{dir}/trainlog.csv"))?)?;
        write_json(&ctx.artifact(&format!("{dir}/report.json"))?, &ev.report)?;
        rows.push((*v, ev.report));
    }
    let path = ctx.artifact("sweep.csv")?;
    let mut w = csv_writer(&path)?;
    let wrap = |e| CliError::csv(&path, e);
    w.write_record(["value", "chair_s", "chair_i", "recall", "mean_len"]).map_err(wrap)?;
    for (v, r) in &rows {
        w.write_record([v, &r.chair_s, &r.chair_i, &r.recall, &r.mean_len].map(|x| x.to_string()))
            .map_err(wrap)?;
    }
    w.flush().map_err(|e| io_err(&path, e))?;
    Ok(ctx.finish(json!({
        "axis": name,
        "values": a.values,
        "corpus": corpus_path,
        "test": test_path,
        "train": settings.first().map(|s| &s.1),
        "eval": settings.first().map(|s| &s.2),
    })))
}

fn parse_class(s: &str) -> Option<TokenClass> {
    TokenClass::ALL.into_iter().find(|c| c.as_str() == s)
}

fn file_stem(i: usize, id: &str) -> String {
    let clean: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("tokens_{i:04}_{clean}")
}

pub fn plot(ctx: &mut Ctx, a: &PlotArgs) -> Result<Outcome> {
    if a.analysis.is_none() && a.scores.is_none() {
        return Err(usage("plot needs --analysis and/or --scores"));
    }
    if a.bins == 0 {
        return Err(usage("--bins must be at least 1"));
    }
    // Read and check every input before writing anything.
    let mut groups: Vec<(String, Vec<AnalysisRow>)> = Vec::new();
    if let Some(path) = &a.analysis {
        let mut r = csv::Reader::from_path(path).map_err(|e| CliError::csv(path, e))?;
        for row in r.deserialize::<AnalysisRow>() {
            let row = row.map_err(|e| CliError::csv(path, e))?;
            if parse_class(&row.class).is_none() {
                return Err(CliError::Core(CoreError::Parse {
                    line: groups.iter().map(|g| g.1.len()).sum::<usize>() + 2,
                    message: format!("unknown class '{}'", row.class),
                }));
            }
            match groups.last_mut() {
                Some((id, rows)) if *id == row.sample_id => rows.push(row),
                _ => groups.push((row.sample_id.clone(), vec![row])),
            }
        }
        if groups.is_empty() {
            return Err(CliError::Empty(format!("{} holds no token rows", path.display())));
        }
    }
    let mut scores: Vec<(String, f64)> = Vec::new();
    if let Some(path) = &a.scores {
        let mut r = csv::Reader::from_path(path).map_err(|e| CliError::csv(path, e))?;
        for row in r.deserialize::<(String, f64)>() {
            scores.push(row.map_err(|e| CliError::csv(path, e))?);
        }
        if scores.is_empty() {
            return Err(CliError::Empty(format!("{} holds no scores", path.display())));
        }
    }

    let limit = a.limit.unwrap_or(usize::MAX);
    let mut plotted = 0;
    if !groups.is_empty() {
        let path = ctx.artifact("plots/tokens.csv")?;
        let mut w = csv_writer(&path)?;
        for (i, (id, rows)) in groups.iter().enumerate().take(limit) {
            let bars: Vec<svg::TokenBar> = rows
                .iter()
                .map(|r| svg::TokenBar {
                    surface: &r.surface,
                    p_clean: r.p_clean,
                    p_noisy: r.p_noisy,
                    class: parse_class(&r.class).expect("checked above"),
                })
                .collect();
            let name = format!("plots/{}.svg", file_stem(i, id));
            write_text(&ctx.artifact(&name)?, &svg::token_bars(id, &bars))?;
            for r in rows {
                w.serialize(r).map_err(|e| CliError::csv(&path, e))?;
            }
            plotted += 1;
        }
        w.flush().map_err(|e| io_err(&path, e))?;
    }
    let mut bins = Vec::new();
    if !scores.is_empty() {
        let values: Vec<f64> = scores.iter().map(|s| s.1).collect();
        bins = svg::histogram(&values, a.bins);
        write_text(&ctx.artifact("plots/score_hist.svg")?, &svg::histogram_svg("sample dependence", &bins))?;
        let path = ctx.artifact("plots/score_hist.csv")?;
        let mut w = csv_writer(&path)?;
        let wrap = |e| CliError::csv(&path, e);
        w.write_record(["lo", "hi", "count"]).map_err(wrap)?;
        for (lo, hi, n) in &bins {
            w.write_record([lo.to_string(), hi.to_string(), n.to_string()]).map_err(wrap)?;
        }
        w.flush().map_err(|e| io_err(&path, e))?;
    }
    Ok(ctx.finish(json!({
        "analysis": a.analysis,
        "scores": a.scores,
        "traces_plotted": plotted,
        "score_bins": bins.len(),
    })))
}

/// Everything needed to repeat a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub argv: Vec<String>,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub sequential: bool,
    pub config: Value,
    pub artifacts: Vec<String>,
}

impl RunRecord {
    pub fn write(&self, out_dir: &Path) -> Result<()> {
        write_json(&out_dir.join("run.json"), self)?;
        let dir = out_dir.join("runs");
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        write_json(&dir.join(format!("{}.json", self.command)), self)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        serde_json::from_str(&text).map_err(|e| {
            CliError::Core(CoreError::Parse { line: e.line(), message: e.to_string() })
        })
    }
}
