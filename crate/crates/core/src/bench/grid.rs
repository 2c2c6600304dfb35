//! The intra-session benchmark grid.
//!
//! Every cell (model x modality x scheduler x session x seed) preprocesses,
//! splits, trains and evaluates independently. Each cell derives its own seed
//! from the base seed and its coordinates, so results do not depend on which
//! other cells exist or on the order they run in.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::dataset::{load_dataset, DatasetError};
use super::report::{BenchmarkReport, CellResult, ModelInfo, ReferenceTarget};
use super::split::{split_session, SessionDataset, SplitRatios};
use super::synth::{synth_generate, SynthConfig, SynthError};
use crate::models::{CnnSpec, InputShape, Model, ModelSpec, VitSpec};
use crate::par::Execution;
use crate::rng;
use crate::signal::{preprocess, Modality, PreprocConfig, RfRecording};
use crate::train::{evaluate, train_spec, Scheduler, TrainConfig};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("invalid benchmark config: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Synth(#[from] SynthError),
}

/// Built-in architectures, sized to the data's class count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    UdacnnRef,
    Usvit,
}

impl Preset {
    pub fn spec(self, classes: usize) -> ModelSpec {
        match self {
            Preset::UdacnnRef => ModelSpec::Cnn(CnnSpec::udacnn_ref(classes)),
            Preset::Usvit => ModelSpec::Vit(VitSpec::usvit(classes)),
        }
    }
}

/// A model in the grid: a preset, an inline spec, or a spec file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEntry {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<ModelSpec>,
    /// TOML file holding a [`ModelSpec`]; read by [`ModelEntry::load_file`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
}

impl ModelEntry {
    pub fn preset(name: &str, preset: Preset) -> Self {
        Self {
            name: name.to_string(),
            preset: Some(preset),
            spec: None,
            file: None,
        }
    }

    fn sources(&self) -> usize {
        usize::from(self.preset.is_some()) + usize::from(self.spec.is_some()) + usize::from(self.file.is_some())
    }

    /// Replaces `file` (relative to `base_dir`) by the spec it contains.
    pub fn load_file(&mut self, base_dir: &Path) -> Result<(), String> {
        if let Some(file) = self.file.take() {
            let path = base_dir.join(&file);
            let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
            let spec: ModelSpec = toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
            self.spec = Some(spec);
        }
        Ok(())
    }

    /// The spec to train, or `None` unless exactly one of `preset` and
    /// `spec` is set.
    pub fn resolve(&self, classes: usize) -> Option<ModelSpec> {
        match (&self.preset, &self.spec, &self.file) {
            (Some(p), None, None) => Some(p.spec(classes)),
            (None, Some(s), None) => Some(s.clone()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic(SynthConfig),
    /// A dataset in the on-disk layout; relative paths resolve against the
    /// config file's directory.
    Directory { path: PathBuf },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SynthConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub models: Vec<ModelEntry>,
    pub modalities: Vec<Modality>,
    pub schedulers: Vec<Scheduler>,
    /// Repetitions per cell; seed indices run `0..seeds`.
    pub seeds: usize,
    pub base_seed: u64,
    /// Template for every cell; `seed` and `scheduler` are set per cell.
    pub train: TrainConfig,
    pub split: SplitRatios,
    /// `modality` is set per cell.
    pub preprocess: PreprocConfig,
    pub data: DataSource,
    /// Optional published figures to compare against.
    pub references: Vec<ReferenceTarget>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            models: vec![ModelEntry::preset("udacnn_ref", Preset::UdacnnRef)],
            modalities: vec![Modality::AModeUs],
            schedulers: vec![Scheduler::None],
            seeds: 10,
            base_seed: 0,
            train: TrainConfig::default(),
            split: SplitRatios::default(),
            preprocess: PreprocConfig::default(),
            data: DataSource::default(),
            references: Vec::new(),
        }
    }
}

/// Stable identifier of a scheduler including its parameters.
pub fn scheduler_id(s: &Scheduler) -> String {
    match *s {
        Scheduler::None => "none".into(),
        Scheduler::Exponential { gamma } => format!("exponential(gamma={gamma})"),
        Scheduler::Step { step_size, gamma } => format!("step(step_size={step_size},gamma={gamma})"),
    }
}

/// Seed of one grid cell.
pub fn cell_seed(
    base: u64,
    model: &str,
    modality: Modality,
    scheduler: &Scheduler,
    subject_id: &str,
    session_id: &str,
    seed_index: usize,
) -> u64 {
    rng::derive_seed(
        base,
        &[
            model,
            modality.key(),
            &scheduler_id(scheduler),
            subject_id,
            session_id,
            &seed_index.to_string(),
        ],
    )
}

impl BenchConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, BenchError> {
        toml::from_str(text).map_err(|e| BenchError::Config(vec![e.to_string()]))
    }

    /// Lists every violated constraint that can be checked without data.
    pub fn validate(&self) -> Result<(), BenchError> {
        let mut v = Vec::new();
        if self.models.is_empty() {
            v.push("models must not be empty".to_string());
        }
        for (i, m) in self.models.iter().enumerate() {
            if m.sources() != 1 {
                v.push(format!("models[{i}] ({}) needs exactly one of preset, spec or file", m.name));
            }
            if self.models[..i].iter().any(|o| o.name == m.name) {
                v.push(format!("model name {:?} is used twice", m.name));
            }
        }
        if self.modalities.is_empty() {
            v.push("modalities must not be empty".into());
        }
        if self.schedulers.is_empty() {
            v.push("schedulers must not be empty".into());
        }
        for (i, s) in self.schedulers.iter().enumerate() {
            if self.schedulers[..i].contains(s) {
                v.push(format!("scheduler {} is listed twice", scheduler_id(s)));
            }
            let probe = TrainConfig {
                scheduler: *s,
                ..self.train.clone()
            };
            if let Err(crate::train::TrainError::Config(errs)) = probe.validate() {
                v.extend(errs.into_iter().map(|e| format!("train: {e}")));
            }
        }
        if self.seeds == 0 {
            v.push("seeds must be at least 1".into());
        }
        if let Err(super::split::SplitError::Ratios(errs)) = self.split.validate() {
            v.extend(errs.into_iter().map(|e| format!("split: {e}")));
        }
        if let DataSource::Synthetic(s) = &self.data {
            if let Err(SynthError(errs)) = s.validate() {
                v.extend(errs.into_iter().map(|e| format!("data: {e}")));
            }
        }
        v.dedup();
        if v.is_empty() {
            Ok(())
        } else {
            Err(BenchError::Config(v))
        }
    }

    /// Generates or loads the sessions named by `data`.
    pub fn load_sessions(&self, base_dir: &Path) -> Result<Vec<RfRecording>, BenchError> {
        match &self.data {
            DataSource::Synthetic(s) => Ok(synth_generate(s)?),
            DataSource::Directory { path } => Ok(load_dataset(&base_dir.join(path))?),
        }
    }

    /// Number of cells the grid will produce for `sessions` sessions.
    pub fn cell_count(&self, sessions: usize) -> usize {
        self.models.len() * self.modalities.len() * self.schedulers.len() * sessions * self.seeds
    }
}

struct Prepared {
    modality: Modality,
    subject_id: String,
    session_id: String,
    data: Result<(SessionDataset, InputShape), String>,
}

/// Runs the full grid over `sessions`.
pub fn intra_session_benchmark(
    cfg: &BenchConfig,
    sessions: &[RfRecording],
    exec: Execution,
) -> Result<BenchmarkReport, BenchError> {
    intra_session_benchmark_with(cfg, sessions, exec, &|_| {})
}

/// [`intra_session_benchmark`] with a callback invoked as each cell finishes
/// (in completion order, which varies under parallel execution).
pub fn intra_session_benchmark_with(
    cfg: &BenchConfig,
    sessions: &[RfRecording],
    exec: Execution,
    on_cell: &(dyn Fn(&CellResult) + Sync),
) -> Result<BenchmarkReport, BenchError> {
    cfg.validate()?;
    if sessions.is_empty() {
        return Err(BenchError::Config(vec!["no sessions to benchmark".into()]));
    }

    // Preprocessing and splitting depend only on (session, modality).
    let mut prepared = Vec::new();
    for rec in sessions {
        for &modality in &cfg.modalities {
            let pcfg = PreprocConfig {
                modality,
                ..cfg.preprocess.clone()
            };
            let data = preprocess(rec, &pcfg, exec)
                .map_err(|e| format!("preprocessing: {e}"))
                .and_then(|inputs| {
                    let shape = InputShape::new(rec.channels, pcfg.output_length(rec.samples_per_frame));
                    split_session(inputs, &cfg.split)
                        .map(|ds| (ds, shape))
                        .map_err(|e| format!("split: {e}"))
                });
            prepared.push(Prepared {
                modality,
                subject_id: rec.subject_id.clone(),
                session_id: rec.session_id.clone(),
                data,
            });
        }
    }

    let classes = sessions[0].classes();
    let specs: Vec<Option<ModelSpec>> = cfg.models.iter().map(|m| m.resolve(classes)).collect();
    let shape0 = InputShape::new(
        sessions[0].channels,
        cfg.preprocess.output_length(sessions[0].samples_per_frame),
    );
    let models = cfg
        .models
        .iter()
        .zip(&specs)
        .map(|(m, spec)| ModelInfo {
            name: m.name.clone(),
            param_count: spec
                .as_ref()
                .and_then(|s| Model::build(s, shape0, 0).ok())
                .map(|model| model.param_count()),
        })
        .collect();

    // Cell order: model, modality, scheduler, session, seed.
    let mut jobs = Vec::with_capacity(cfg.cell_count(sessions.len()));
    for (mi, model) in cfg.models.iter().enumerate() {
        for (di, &modality) in cfg.modalities.iter().enumerate() {
            for scheduler in &cfg.schedulers {
                for si in 0..sessions.len() {
                    let prep = &prepared[si * cfg.modalities.len() + di];
                    debug_assert_eq!(prep.modality, modality);
                    for seed_index in 0..cfg.seeds {
                        jobs.push((mi, model, prep, *scheduler, seed_index));
                    }
                }
            }
        }
    }

    let cells = exec.map(&jobs, |&(mi, model, prep, scheduler, seed_index)| {
        let seed = cell_seed(
            cfg.base_seed,
            &model.name,
            prep.modality,
            &scheduler,
            &prep.subject_id,
            &prep.session_id,
            seed_index,
        );
        let outcome = run_cell(cfg, specs[mi].as_ref(), prep, scheduler, seed);
        let cell = CellResult {
            model: model.name.clone(),
            modality: prep.modality,
            scheduler,
            subject_id: prep.subject_id.clone(),
            session_id: prep.session_id.clone(),
            seed_index,
            seed,
            accuracy: outcome.as_ref().ok().copied(),
            error: outcome.err(),
        };
        on_cell(&cell);
        cell
    });

    Ok(BenchmarkReport::new(
        models,
        cfg.modalities.clone(),
        cfg.schedulers.clone(),
        cfg.seeds,
        cells,
        cfg.references.clone(),
    ))
}

fn run_cell(
    cfg: &BenchConfig,
    spec: Option<&ModelSpec>,
    prep: &Prepared,
    scheduler: Scheduler,
    seed: u64,
) -> Result<f64, String> {
    let spec = spec.ok_or("model entry does not resolve to a spec (unread file or conflicting sources)")?;
    let (ds, shape) = prep.data.as_ref().map_err(Clone::clone)?;
    let tcfg = TrainConfig {
        seed,
        scheduler,
        ..cfg.train.clone()
    };
    let (model, _) = train_spec(spec, *shape, &ds.train(), &ds.val(), &tcfg).map_err(|e| e.to_string())?;
    evaluate(&model, &ds.test(), Execution::Sequential).map_err(|e| e.to_string())
}
