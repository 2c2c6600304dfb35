//! Subcommand configs and their runners.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use sonopose::bench::dataset::save_network_inputs;
use sonopose::bench::report::BenchmarkReport;
use sonopose::bench::{
    intra_session_benchmark_with, load_dataset, render_report, save_recording, split_session, synth_generate,
    BenchConfig, DataSource, ModelEntry, Preset, ReportFormat, Split, SplitRatios, SynthConfig,
};
use sonopose::hpo::{
    hp_importance, optimize, random_search, render_importance, write_history_csv, Assignment, ParamSpec,
    SearchSpace, TpeConfig, Trial,
};
use sonopose::models::{InputShape, Model};
use sonopose::signal::{preprocess, Modality, PreprocConfig, RfRecording};
use sonopose::train::{evaluate, train_spec, TrainConfig};
use sonopose::Execution;

use crate::objective::{noisy_surrogate, ObjectiveConfig, ObjectiveKind, TrainObjective, TRAIN_KEYS};
use crate::CliError;

/// Settings shared by every subcommand.
pub struct Context {
    pub out: PathBuf,
    /// Directory relative paths in the config resolve against.
    pub base_dir: PathBuf,
    pub exec: Execution,
    pub verbose: u8,
}

impl Context {
    fn create_out(&self) -> Result<(), CliError> {
        fs::create_dir_all(&self.out).map_err(|e| runtime(&self.out, e))
    }

    fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf, CliError> {
        let path = self.out.join(name);
        fs::write(&path, contents).map_err(|e| runtime(&path, e))?;
        Ok(path)
    }

    fn info(&self, msg: impl AsRef<str>) {
        if self.verbose > 0 {
            eprintln!("{}", msg.as_ref());
        }
    }
}

fn runtime(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

fn validation(errs: Vec<String>) -> Result<(), CliError> {
    if errs.is_empty() {
        Ok(())
    } else {
        Err(CliError::Validation(errs))
    }
}

/// Flattens a library error that carries a list of violations.
fn listed(e: impl std::fmt::Display) -> Vec<String> {
    vec![e.to_string()]
}

fn json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("value serializes to JSON") + "\n"
}

/// The session named `subject/session`, or the first one when `name` is empty.
pub fn pick_session<'a>(recs: &'a [RfRecording], name: &str) -> Result<&'a RfRecording, String> {
    if name.is_empty() {
        return recs.first().ok_or_else(|| "no sessions found".to_string());
    }
    recs.iter()
        .find(|r| format!("{}/{}", r.subject_id, r.session_id) == name)
        .ok_or_else(|| {
            let known: Vec<String> = recs.iter().map(|r| format!("{}/{}", r.subject_id, r.session_id)).collect();
            format!("session {name:?} not found; available: {}", known.join(", "))
        })
}

fn load_data(data: &DataSource, base_dir: &Path) -> Result<Vec<RfRecording>, CliError> {
    match data {
        DataSource::Synthetic(s) => synth_generate(s).map_err(|e| CliError::Validation(listed(e))),
        DataSource::Directory { path } => {
            load_dataset(&base_dir.join(path)).map_err(|e| CliError::Runtime(e.to_string()))
        }
    }
}

fn data_violations(data: &DataSource) -> Vec<String> {
    match data {
        DataSource::Synthetic(s) => s.validate().err().map(|e| e.0).unwrap_or_default(),
        DataSource::Directory { .. } => Vec::new(),
    }
}

fn train_violations(cfg: &TrainConfig) -> Vec<String> {
    match cfg.validate() {
        Err(sonopose::train::TrainError::Config(v)) => v,
        Err(e) => vec![e.to_string()],
        Ok(()) => Vec::new(),
    }
}

// ---- synth ----

pub type SynthCmd = SynthConfig;

pub fn synth(cfg: SynthCmd, ctx: &Context) -> Result<(), CliError> {
    validation(cfg.validate().err().map(|e| e.0).unwrap_or_default())?;
    let recs = synth_generate(&cfg).map_err(|e| CliError::Validation(e.0))?;
    ctx.create_out()?;
    for rec in &recs {
        let dir = save_recording(&ctx.out, rec).map_err(|e| CliError::Runtime(e.to_string()))?;
        ctx.info(format!("wrote {}", dir.display()));
    }
    ctx.write("synth.toml", toml::to_string_pretty(&cfg).expect("config serializes"))?;
    println!("wrote {} session(s) to {}", recs.len(), ctx.out.display());
    Ok(())
}

// ---- preprocess ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessCmd {
    pub modalities: Vec<Modality>,
    pub data: DataSource,
    /// `modality` is replaced by each entry of `modalities`.
    pub preprocess: PreprocConfig,
}

impl Default for PreprocessCmd {
    fn default() -> Self {
        Self {
            modalities: Modality::ALL.to_vec(),
            data: DataSource::default(),
            preprocess: PreprocConfig::default(),
        }
    }
}

pub fn preprocess_cmd(cfg: PreprocessCmd, ctx: &Context) -> Result<(), CliError> {
    let mut errs = data_violations(&cfg.data);
    if cfg.modalities.is_empty() {
        errs.push("modalities must not be empty".into());
    }
    validation(errs)?;
    let recs = load_data(&cfg.data, &ctx.base_dir)?;
    let mut errs = Vec::new();
    for rec in &recs {
        for &modality in &cfg.modalities {
            if let Err(e) = (PreprocConfig { modality, ..cfg.preprocess.clone() }).validate(rec) {
                errs.push(format!("{}/{} {}: {e}", rec.subject_id, rec.session_id, modality.key()));
            }
        }
    }
    validation(errs)?;
    for rec in &recs {
        for &modality in &cfg.modalities {
            let pcfg = PreprocConfig { modality, ..cfg.preprocess.clone() };
            let inputs = preprocess(rec, &pcfg, ctx.exec).map_err(|e| CliError::Runtime(e.to_string()))?;
            let dir = ctx.out.join(modality.key()).join(&rec.subject_id).join(&rec.session_id);
            save_network_inputs(&dir, &inputs).map_err(|e| CliError::Runtime(e.to_string()))?;
            ctx.info(format!("wrote {} inputs to {}", inputs.len(), dir.display()));
        }
    }
    println!(
        "preprocessed {} session(s) x {} modality(ies) into {}",
        recs.len(),
        cfg.modalities.len(),
        ctx.out.display()
    );
    Ok(())
}

// ---- train / eval ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainCmd {
    pub model: ModelEntry,
    pub modality: Modality,
    /// `subject/session`; empty picks the first session.
    pub session: String,
    pub data: DataSource,
    pub preprocess: PreprocConfig,
    pub split: SplitRatios,
    pub train: TrainConfig,
}

impl Default for TrainCmd {
    fn default() -> Self {
        Self {
            model: ModelEntry::preset("udacnn_ref", Preset::UdacnnRef),
            modality: Modality::AModeUs,
            session: String::new(),
            data: DataSource::default(),
            preprocess: PreprocConfig::default(),
            split: SplitRatios::default(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Serialize)]
struct TrainMetrics {
    model: String,
    session: String,
    modality: Modality,
    param_count: usize,
    digest: String,
    final_val_acc: f64,
    test_acc: f64,
}

pub fn train_cmd(mut cfg: TrainCmd, ctx: &Context) -> Result<(), CliError> {
    let mut errs = data_violations(&cfg.data);
    errs.extend(train_violations(&cfg.train));
    if let Err(e) = cfg.split.validate() {
        errs.push(e.to_string());
    }
    if let Err(e) = cfg.model.load_file(&ctx.base_dir) {
        errs.push(e);
    }
    validation(errs)?;
    let recs = load_data(&cfg.data, &ctx.base_dir)?;
    let rec = pick_session(&recs, &cfg.session).map_err(|e| CliError::Validation(vec![e]))?;
    let spec = cfg
        .model
        .resolve(rec.classes())
        .ok_or_else(|| CliError::Validation(vec!["model needs exactly one of preset, spec or file".into()]))?;
    let pcfg = PreprocConfig { modality: cfg.modality, ..cfg.preprocess.clone() };
    let shape = InputShape::new(rec.channels, pcfg.output_length(rec.samples_per_frame));
    spec.validate(shape).map_err(|e| CliError::Validation(listed(e)))?;
    pcfg.validate(rec).map_err(|e| CliError::Validation(listed(e)))?;

    let inputs = preprocess(rec, &pcfg, ctx.exec).map_err(|e| CliError::Runtime(e.to_string()))?;
    let ds = split_session(inputs, &cfg.split).map_err(|e| CliError::Runtime(e.to_string()))?;
    let (model, history) =
        train_spec(&spec, shape, &ds.train(), &ds.val(), &cfg.train).map_err(|e| CliError::Runtime(e.to_string()))?;
    let test_acc = evaluate(&model, &ds.test(), ctx.exec).map_err(|e| CliError::Runtime(e.to_string()))?;

    ctx.create_out()?;
    let model_dir = ctx.out.join("model");
    let digest = model.save(&model_dir).map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut csv = Vec::new();
    history.write_csv(&mut csv).map_err(|e| CliError::Runtime(e.to_string()))?;
    ctx.write("history.csv", csv)?;
    let metrics = TrainMetrics {
        model: cfg.model.name.clone(),
        session: format!("{}/{}", rec.subject_id, rec.session_id),
        modality: cfg.modality,
        param_count: model.param_count(),
        digest: digest.clone(),
        final_val_acc: history.records.last().map_or(0.0, |r| r.val_acc),
        test_acc,
    };
    ctx.write("metrics.json", json(&metrics))?;
    ctx.write("train.toml", toml::to_string_pretty(&cfg).expect("config serializes"))?;
    println!("checkpoint {} digest {digest}", model_dir.display());
    println!("test accuracy {:.2}%", 100.0 * test_acc);
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalCmd {
    /// Directory written by `train` (its `model/` subdirectory).
    pub checkpoint: PathBuf,
    pub split_name: Split,
    pub modality: Modality,
    pub session: String,
    pub data: DataSource,
    pub preprocess: PreprocConfig,
    pub split: SplitRatios,
}

impl Default for EvalCmd {
    fn default() -> Self {
        Self {
            checkpoint: PathBuf::from("model"),
            split_name: Split::Test,
            modality: Modality::AModeUs,
            session: String::new(),
            data: DataSource::default(),
            preprocess: PreprocConfig::default(),
            split: SplitRatios::default(),
        }
    }
}

pub fn eval_cmd(cfg: EvalCmd, ctx: &Context) -> Result<(), CliError> {
    let mut errs = data_violations(&cfg.data);
    if let Err(e) = cfg.split.validate() {
        errs.push(e.to_string());
    }
    validation(errs)?;
    let model = Model::load(&ctx.base_dir.join(&cfg.checkpoint)).map_err(|e| CliError::Runtime(e.to_string()))?;
    let recs = load_data(&cfg.data, &ctx.base_dir)?;
    let rec = pick_session(&recs, &cfg.session).map_err(|e| CliError::Validation(vec![e]))?;
    let pcfg = PreprocConfig { modality: cfg.modality, ..cfg.preprocess.clone() };
    let inputs = preprocess(rec, &pcfg, ctx.exec).map_err(|e| CliError::Runtime(e.to_string()))?;
    let ds = split_session(inputs, &cfg.split).map_err(|e| CliError::Runtime(e.to_string()))?;
    let set = match cfg.split_name {
        Split::Train => ds.train(),
        Split::Val => ds.val(),
        Split::Test => ds.test(),
    };
    let acc = evaluate(&model, &set, ctx.exec).map_err(|e| CliError::Runtime(e.to_string()))?;
    ctx.create_out()?;
    #[derive(Serialize)]
    struct EvalMetrics {
        digest: String,
        split: Split,
        frames: usize,
        accuracy: f64,
    }
    ctx.write(
        "eval.json",
        json(&EvalMetrics { digest: model.digest(), split: cfg.split_name, frames: set.len(), accuracy: acc }),
    )?;
    println!("{:?} accuracy {:.2}% over {} frames", cfg.split_name, 100.0 * acc, set.len());
    Ok(())
}

// ---- hpo ----

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Tpe,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HpoCmd {
    pub method: Method,
    /// Size of the top-k set summarized in `importance.txt`.
    pub top_k: usize,
    pub tpe: TpeConfig,
    pub objective: ObjectiveConfig,
    /// The search space.
    pub params: Vec<ParamSpec>,
}

impl Default for HpoCmd {
    fn default() -> Self {
        Self {
            method: Method::Tpe,
            top_k: 50,
            tpe: TpeConfig::default(),
            objective: ObjectiveConfig::default(),
            params: Vec::new(),
        }
    }
}

#[derive(Serialize)]
struct BestTrial {
    method: Method,
    trials: usize,
    failed: usize,
    best: Option<BestEntry>,
}

#[derive(Serialize)]
struct BestEntry {
    id: usize,
    objective: f64,
    params: Assignment,
}

pub fn hpo_cmd(cfg: HpoCmd, ctx: &Context) -> Result<(), CliError> {
    let mut errs = Vec::new();
    let space = match SearchSpace::new(cfg.params.clone()) {
        Ok(s) => Some(s),
        Err(sonopose::hpo::HpoError::Space(v)) => {
            errs.extend(v);
            None
        }
        Err(e) => {
            errs.push(e.to_string());
            None
        }
    };
    if cfg.params.is_empty() {
        errs.push("search space has no params".into());
    }
    if let Err(sonopose::hpo::HpoError::Config(v)) = cfg.tpe.validate() {
        errs.extend(v.into_iter().map(|e| format!("tpe: {e}")));
    }
    if cfg.top_k == 0 {
        errs.push("top_k must be at least 1".into());
    }
    let o = &cfg.objective;
    if !(o.noise_std >= 0.0 && o.noise_std.is_finite()) {
        errs.push(format!("objective.noise_std {} must be >= 0", o.noise_std));
    }
    if o.function == ObjectiveKind::Train {
        for p in &cfg.params {
            if !TRAIN_KEYS.contains(&p.name.as_str()) {
                errs.push(format!(
                    "param {} has no meaning for the train objective (known: {})",
                    p.name,
                    TRAIN_KEYS.join(", ")
                ));
            }
        }
        errs.extend(data_violations(&o.data).into_iter().map(|e| format!("objective.data: {e}")));
        errs.extend(train_violations(&o.train).into_iter().map(|e| format!("objective.train: {e}")));
    }
    validation(errs)?;
    let space = space.expect("validated");

    let trainer = match o.function {
        ObjectiveKind::Train => {
            Some(TrainObjective::prepare(o, &ctx.base_dir, ctx.exec).map_err(CliError::Runtime)?)
        }
        ObjectiveKind::Surrogate => None,
    };
    let objective = |x: &Assignment, seed: u64| -> Result<f64, String> {
        match &trainer {
            Some(t) => t.evaluate(x, seed),
            None => Ok(noisy_surrogate(&space, x, seed, o.noise_std)),
        }
    };
    let study = match cfg.method {
        Method::Tpe => optimize(&space, &cfg.tpe, ctx.exec, objective),
        Method::Random => random_search(&space, cfg.tpe.budget, cfg.tpe.seed, ctx.exec, objective),
    }
    .map_err(|e| CliError::Runtime(e.to_string()))?;

    ctx.create_out()?;
    let mut csv = Vec::new();
    write_history_csv(&study.history, &space, &mut csv).map_err(|e| CliError::Runtime(e.to_string()))?;
    ctx.write("history.csv", csv)?;
    let done = study.history.iter().filter(|t| t.objective.is_some()).count();
    if done > 0 {
        let k = cfg.top_k.min(done);
        let summaries = hp_importance(&study.history, &space, k).map_err(|e| CliError::Runtime(e.to_string()))?;
        ctx.write("importance.txt", render_importance(&summaries, k))?;
    }
    let best = BestTrial {
        method: cfg.method,
        trials: study.history.len(),
        failed: study.history.len() - done,
        best: study.best.as_ref().map(|t: &Trial| BestEntry {
            id: t.id,
            objective: t.objective.unwrap_or(f64::NAN),
            params: t.params.clone(),
        }),
    };
    ctx.write("best.json", json(&best))?;
    println!("{} trials ({} failed) written to {}", best.trials, best.failed, ctx.out.join("history.csv").display());
    match &best.best {
        Some(b) => println!("best trial {} objective {:.6}", b.id, b.objective),
        None => println!("no trial completed"),
    }
    Ok(())
}

// ---- bench / report ----

pub type BenchCmd = BenchConfig;

fn write_report(report: &BenchmarkReport, ctx: &Context) -> Result<String, CliError> {
    ctx.create_out()?;
    let text = render_report(report, ReportFormat::Text);
    ctx.write("report.txt", &text)?;
    ctx.write("cells.csv", render_report(report, ReportFormat::Csv))?;
    ctx.write("report.json", render_report(report, ReportFormat::Json))?;
    Ok(text)
}

pub fn bench_cmd(mut cfg: BenchCmd, ctx: &Context) -> Result<(), CliError> {
    let mut errs = match cfg.validate() {
        Err(sonopose::bench::BenchError::Config(v)) => v,
        Err(e) => vec![e.to_string()],
        Ok(()) => Vec::new(),
    };
    for m in &mut cfg.models {
        if let Err(e) = m.load_file(&ctx.base_dir) {
            errs.push(format!("model {}: {e}", m.name));
        }
    }
    validation(errs)?;
    let sessions = cfg.load_sessions(&ctx.base_dir).map_err(|e| CliError::Runtime(e.to_string()))?;
    let total = cfg.cell_count(sessions.len());
    let done = std::sync::atomic::AtomicUsize::new(0);
    let report = intra_session_benchmark_with(&cfg, &sessions, ctx.exec, &|c| {
        let n = done.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1;
        if ctx.verbose > 0 {
            let status = c.accuracy.map_or_else(|| "failed".to_string(), |a| format!("{:.2}%", 100.0 * a));
            eprintln!(
                "[{n}/{total}] {} {} {} {}/{} seed {}: {status}",
                c.model,
                c.modality.key(),
                c.scheduler.key(),
                c.subject_id,
                c.session_id,
                c.seed_index
            );
        }
    })
    .map_err(|e| CliError::Runtime(e.to_string()))?;
    let text = write_report(&report, ctx)?;
    ctx.write("bench.toml", toml::to_string_pretty(&cfg).expect("config serializes"))?;
    print!("{text}");
    let failed = report.failures().count();
    if failed > 0 {
        return Err(CliError::Runtime(format!(
            "{failed} of {} cells failed; see the failure section of {}",
            report.cells.len(),
            ctx.out.join("report.txt").display()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportCmd {
    /// `report.json` written by `bench`.
    pub input: PathBuf,
    pub format: ReportFormat,
}

impl Default for ReportCmd {
    fn default() -> Self {
        Self {
            input: PathBuf::from("report.json"),
            format: ReportFormat::Text,
        }
    }
}

pub fn report_cmd(cfg: ReportCmd, ctx: &Context) -> Result<(), CliError> {
    let path = ctx.base_dir.join(&cfg.input);
    let text = fs::read_to_string(&path).map_err(|e| runtime(&path, e))?;
    let report: BenchmarkReport =
        serde_json::from_str(&text).map_err(|e| CliError::Validation(vec![format!("{}: {e}", path.display())]))?;
    let rendered = render_report(&report, cfg.format);
    ctx.create_out()?;
    let name = match cfg.format {
        ReportFormat::Text => "report.txt",
        ReportFormat::Csv => "cells.csv",
        ReportFormat::Json => "report.json",
    };
    ctx.write(name, &rendered)?;
    print!("{rendered}");
    Ok(())
}
