//! Tree-structured Parzen Estimator search over mixed, optionally
//! conditional, hyperparameter spaces, plus a random-search baseline.
//!
//! Objectives are maximized. Wrap loss-style objectives with [`negate`].

mod parzen;
mod report;
mod space;
mod tpe;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::par::Execution;
use crate::rng::{self, Rng};

pub use parzen::{Density, Mixture};
pub use report::{hp_importance, render_importance, write_history_csv, ParamSummary, Summary};
pub use space::{Assignment, Condition, Domain, ParamSpec, Scale, SearchSpace, Value};
pub use tpe::{acquisition, fit_densities, split_observations, suggest, Densities};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HpoError {
    #[error("invalid search space: {}", .0.join("; "))]
    Space(Vec<String>),
    #[error("invalid study config: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("{0}")]
    Usage(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TpeConfig {
    /// Total objective evaluations, failures included.
    pub budget: usize,
    /// Completed trials drawn from the prior before modelling starts.
    pub warmup: usize,
    /// Fraction of completed trials treated as good.
    pub gamma: f64,
    pub n_candidates: usize,
    /// Lower bound on the bad-density denominator.
    pub eps_floor: f64,
    /// Weight of the uniform prior component in every density.
    pub prior_weight: f64,
    pub seed: u64,
    /// Suggestions generated per round and evaluated together.
    pub batch: usize,
}

impl Default for TpeConfig {
    fn default() -> Self {
        Self {
            budget: 100,
            warmup: 10,
            gamma: 0.25,
            n_candidates: 24,
            eps_floor: 1e-12,
            prior_weight: 1.0,
            seed: 0,
            batch: 1,
        }
    }
}

impl TpeConfig {
    pub fn validate(&self) -> Result<(), HpoError> {
        let mut v = Vec::new();
        if self.budget == 0 {
            v.push("budget must be positive".to_string());
        }
        if self.warmup >= self.budget {
            v.push(format!("warmup {} must be below budget {}", self.warmup, self.budget));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            v.push(format!("gamma {} outside (0, 1)", self.gamma));
        }
        if self.n_candidates == 0 {
            v.push("n_candidates must be at least 1".into());
        }
        if !(self.eps_floor > 0.0) {
            v.push("eps_floor must be positive".into());
        }
        if !(self.prior_weight > 0.0) {
            v.push("prior_weight must be positive".into());
        }
        if self.batch == 0 {
            v.push("batch must be at least 1".into());
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(HpoError::Config(v))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "reason", rename_all = "snake_case")]
pub enum TrialStatus {
    Complete,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub id: usize,
    pub params: Assignment,
    /// `None` when the objective failed.
    pub objective: Option<f64>,
    pub status: TrialStatus,
    /// Seed handed to the objective.
    pub seed: u64,
    pub duration_s: f64,
}

impl Trial {
    pub(crate) fn objective_or_min(&self) -> f64 {
        self.objective.unwrap_or(f64::NEG_INFINITY)
    }
}

/// Finished study: the best completed trial and the full ordered history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub best: Option<Trial>,
    pub history: Vec<Trial>,
}

/// Flips the sign of a loss-style objective.
pub fn negate<F>(f: F) -> impl Fn(&Assignment, u64) -> Result<f64, String> + Sync
where
    F: Fn(&Assignment, u64) -> Result<f64, String> + Sync,
{
    move |x, seed| f(x, seed).map(|y| -y)
}

fn run_trial<F>(id: usize, params: Assignment, seed: u64, objective: &F) -> Trial
where
    F: Fn(&Assignment, u64) -> Result<f64, String> + Sync,
{
    let start = Instant::now();
    let outcome = objective(&params, seed);
    let duration_s = start.elapsed().as_secs_f64();
    let (objective, status) = match outcome {
        Ok(y) if y.is_finite() => (Some(y), TrialStatus::Complete),
        Ok(y) => (None, TrialStatus::Failed(format!("non-finite objective {y}"))),
        Err(e) => (None, TrialStatus::Failed(e)),
    };
    Trial {
        id,
        params,
        objective,
        status,
        seed,
        duration_s,
    }
}

fn best_of(history: &[Trial]) -> Option<Trial> {
    let mut best: Option<&Trial> = None;
    for t in history.iter().filter(|t| t.objective.is_some()) {
        if best.map_or(true, |b| t.objective > b.objective) {
            best = Some(t);
        }
    }
    best.cloned()
}

fn study_rng(seed: u64) -> Rng {
    rng::derive(seed, &["study"])
}

fn trial_seed(seed: u64, id: usize) -> u64 {
    rng::derive_seed(seed, &["trial".to_string(), id.to_string()])
}

/// Runs exactly `cfg.budget` objective evaluations.
///
/// Each round suggests `cfg.batch` configurations against the current history
/// and evaluates them under `exec`; results are merged in suggestion order,
/// so the history is reproducible for any execution mode.
pub fn optimize<F>(
    space: &SearchSpace,
    cfg: &TpeConfig,
    exec: Execution,
    objective: F,
) -> Result<StudyResult, HpoError>
where
    F: Fn(&Assignment, u64) -> Result<f64, String> + Sync,
{
    cfg.validate()?;
    let mut rng = study_rng(cfg.seed);
    let mut history: Vec<Trial> = Vec::with_capacity(cfg.budget);
    while history.len() < cfg.budget {
        let n = cfg.batch.min(cfg.budget - history.len());
        let base = history.len();
        let batch: Vec<(usize, Assignment)> = (0..n)
            .map(|i| (base + i, suggest(&history, space, cfg, &mut rng)))
            .collect();
        let done = exec.map(&batch, |(id, x)| run_trial(*id, x.clone(), trial_seed(cfg.seed, *id), &objective));
        history.extend(done);
    }
    Ok(StudyResult {
        best: best_of(&history),
        history,
    })
}

/// Uniform independent sampling with the same contract as [`optimize`].
///
/// Draws come from the same stream as the TPE warmup, so the first `warmup`
/// configurations of a TPE study equal a random search with the same seed.
pub fn random_search<F>(
    space: &SearchSpace,
    budget: usize,
    seed: u64,
    exec: Execution,
    objective: F,
) -> Result<StudyResult, HpoError>
where
    F: Fn(&Assignment, u64) -> Result<f64, String> + Sync,
{
    if budget == 0 {
        return Err(HpoError::Config(vec!["budget must be positive".into()]));
    }
    let mut rng = study_rng(seed);
    let batch: Vec<(usize, Assignment)> = (0..budget).map(|i| (i, space.sample_prior(&mut rng))).collect();
    let history = exec.map(&batch, |(id, x)| run_trial(*id, x.clone(), trial_seed(seed, *id), &objective));
    Ok(StudyResult {
        best: best_of(&history),
        history,
    })
}
