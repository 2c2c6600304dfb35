//! Objectives for `sonopose hpo`.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use sonopose::bench::{split_session, DataSource, ModelEntry, Preset, SplitRatios, SynthConfig};
use sonopose::hpo::{Assignment, Domain, Scale, SearchSpace, Value};
use sonopose::models::{InputShape, ModelSpec};
use sonopose::rng;
use sonopose::signal::{preprocess, Modality, NetworkInput, PreprocConfig};
use sonopose::train::{evaluate, train_spec, TrainConfig};
use sonopose::Execution;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    /// Cheap deterministic function with a known optimum.
    Surrogate,
    /// Validation accuracy of a model trained with the suggested values.
    Train,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveConfig {
    pub function: ObjectiveKind,
    /// Gaussian noise added to the surrogate, seeded per trial.
    pub noise_std: f64,
    pub model: ModelEntry,
    pub modality: Modality,
    /// `subject/session` to train on; empty picks the first session.
    pub session: String,
    pub data: DataSource,
    pub preprocess: PreprocConfig,
    pub split: SplitRatios,
    pub train: TrainConfig,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            function: ObjectiveKind::Surrogate,
            noise_std: 0.0,
            model: ModelEntry::preset("usvit", Preset::Usvit),
            modality: Modality::AModeUs,
            session: String::new(),
            data: DataSource::Synthetic(SynthConfig::default()),
            preprocess: PreprocConfig::default(),
            split: SplitRatios::default(),
            train: TrainConfig::default(),
        }
    }
}

/// Stable target in `[0, 1)` for a parameter name.
fn target(name: &str) -> f64 {
    (rng::derive_seed(0, &["surrogate", name]) >> 11) as f64 / (1u64 << 53) as f64
}

/// Position of `v` in its domain, mapped to `[0, 1]`.
fn unit(domain: &Domain, v: &Value) -> f64 {
    match domain {
        Domain::Float { low, high, scale } => {
            let x = v.as_f64().unwrap_or(*low);
            match scale {
                Scale::Log => (x.ln() - low.ln()) / (high.ln() - low.ln()),
                Scale::Linear => (x - low) / (high - low),
            }
        }
        Domain::Integer { low, high } => {
            let x = v.as_i64().unwrap_or(*low) as f64;
            if high > low {
                (x - *low as f64) / (*high - *low) as f64
            } else {
                0.0
            }
        }
        Domain::Categorical { choices } => {
            let i = choices.iter().position(|c| c == v).unwrap_or(0);
            if choices.len() > 1 {
                i as f64 / (choices.len() - 1) as f64
            } else {
                0.0
            }
        }
    }
}

/// `1 - mean squared distance` between the active parameters and per-name
/// targets; the maximum is 1.
pub fn surrogate(space: &SearchSpace, x: &Assignment) -> f64 {
    let mut sum = 0.0;
    let mut n = 0;
    for p in space.params() {
        if let Some(v) = x.get(&p.name) {
            let t = match &p.domain {
                // Snap categorical targets to an actual choice.
                Domain::Categorical { choices } if choices.len() > 1 => {
                    let k = (target(&p.name) * choices.len() as f64).floor();
                    k / (choices.len() - 1) as f64
                }
                _ => target(&p.name),
            };
            sum += (unit(&p.domain, v) - t).powi(2);
            n += 1;
        }
    }
    if n == 0 {
        1.0
    } else {
        1.0 - sum / n as f64
    }
}

/// Parameter names the train objective knows how to apply.
pub const TRAIN_KEYS: [&str; 10] = [
    "learning_rate",
    "epochs",
    "batch_size",
    "dropout",
    "patch_height",
    "patch_width",
    "pe_dimension",
    "heads",
    "encoder_blocks",
    "ffn_mul",
];

const VIT_KEYS: [&str; 6] = [
    "patch_height",
    "patch_width",
    "pe_dimension",
    "heads",
    "encoder_blocks",
    "ffn_mul",
];

fn as_usize(name: &str, v: &Value) -> Result<usize, String> {
    v.as_i64()
        .filter(|&i| i >= 0)
        .map(|i| i as usize)
        .ok_or_else(|| format!("{name} = {v} is not a non-negative integer"))
}

/// Applies one assignment to a model spec and training config.
pub fn apply(x: &Assignment, spec: &mut ModelSpec, train: &mut TrainConfig) -> Result<(), String> {
    for (name, v) in x {
        match name.as_str() {
            "learning_rate" => {
                train.learning_rate = v.as_f64().ok_or_else(|| format!("learning_rate = {v} is not a number"))?
            }
            "epochs" => train.epochs = as_usize(name, v)?,
            "batch_size" => train.batch_size = as_usize(name, v)?,
            "dropout" => spec.set_dropout(v.as_f64().ok_or_else(|| format!("dropout = {v} is not a number"))?),
            key if VIT_KEYS.contains(&key) => {
                let ModelSpec::Vit(vit) = spec else {
                    return Err(format!("{key} only applies to ViT models"));
                };
                let n = as_usize(name, v)?;
                match key {
                    "patch_height" => vit.patch_height = n,
                    "patch_width" => vit.patch_width = n,
                    "pe_dimension" => vit.pe_dimension = n,
                    "heads" => vit.heads = n,
                    "encoder_blocks" => vit.encoder_blocks = n,
                    _ => vit.ffn_mul = n,
                }
            }
            other => return Err(format!("unknown hyperparameter {other}")),
        }
    }
    Ok(())
}

/// Session data prepared once for the train objective.
pub struct TrainObjective {
    spec: ModelSpec,
    shape: InputShape,
    train: Vec<NetworkInput>,
    val: Vec<NetworkInput>,
    cfg: TrainConfig,
}

impl TrainObjective {
    pub fn prepare(cfg: &ObjectiveConfig, base_dir: &std::path::Path, exec: Execution) -> Result<Self, String> {
        let mut model = cfg.model.clone();
        model.load_file(base_dir)?;
        let recs = match &cfg.data {
            DataSource::Synthetic(s) => sonopose::bench::synth_generate(s).map_err(|e| e.to_string())?,
            DataSource::Directory { path } => {
                sonopose::bench::load_dataset(&base_dir.join(path)).map_err(|e| e.to_string())?
            }
        };
        let rec = crate::commands::pick_session(&recs, &cfg.session)?;
        let spec = model
            .resolve(rec.classes())
            .ok_or("model needs exactly one of preset, spec or file")?;
        let pcfg = PreprocConfig {
            modality: cfg.modality,
            ..cfg.preprocess.clone()
        };
        let inputs = preprocess(rec, &pcfg, exec).map_err(|e| e.to_string())?;
        let ds = split_session(inputs, &cfg.split).map_err(|e| e.to_string())?;
        Ok(Self {
            spec,
            shape: InputShape::new(rec.channels, pcfg.output_length(rec.samples_per_frame)),
            train: ds.train(),
            val: ds.val(),
            cfg: cfg.train.clone(),
        })
    }

    /// Validation accuracy for `x`, trained with `seed`.
    pub fn evaluate(&self, x: &Assignment, seed: u64) -> Result<f64, String> {
        let mut spec = self.spec.clone();
        let mut cfg = TrainConfig {
            seed,
            ..self.cfg.clone()
        };
        apply(x, &mut spec, &mut cfg)?;
        spec.validate(self.shape).map_err(|e| e.to_string())?;
        let (model, _) = train_spec(&spec, self.shape, &self.train, &self.val, &cfg).map_err(|e| e.to_string())?;
        evaluate(&model, &self.val, Execution::Sequential).map_err(|e| e.to_string())
    }
}

/// Surrogate value plus seeded noise.
pub fn noisy_surrogate(space: &SearchSpace, x: &Assignment, seed: u64, noise_std: f64) -> f64 {
    let clean = surrogate(space, x);
    if noise_std > 0.0 {
        let z: f64 = rng::derive(seed, &["noise"]).sample(StandardNormal);
        clean + noise_std * z
    } else {
        clean
    }
}
