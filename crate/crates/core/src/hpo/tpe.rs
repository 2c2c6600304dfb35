use std::collections::BTreeMap;

use super::parzen::Density;
use super::space::{Assignment, SearchSpace};
use super::{HpoError, TpeConfig, Trial};
use crate::rng::Rng;

/// Splits completed trials into the top `ceil(gamma * n)` and the rest.
///
/// Sorting is by objective descending and stable, so among equal objectives
/// earlier trials rank higher.
pub fn split_observations<'a>(
    trials: &[&'a Trial],
    gamma: f64,
) -> Result<(Vec<&'a Trial>, Vec<&'a Trial>), HpoError> {
    if trials.len() < 2 {
        return Err(HpoError::Usage(format!(
            "need at least 2 observations to split, got {}",
            trials.len()
        )));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(HpoError::Usage(format!("split fraction {gamma} outside (0, 1)")));
    }
    let mut ranked: Vec<&Trial> = trials.to_vec();
    ranked.sort_by(|a, b| b.objective_or_min().total_cmp(&a.objective_or_min()));
    let n_good = ((gamma * trials.len() as f64).ceil() as usize).clamp(1, trials.len());
    let bad = ranked.split_off(n_good);
    Ok((ranked, bad))
}

/// Per-parameter densities, keyed by parameter name.
pub type Densities = BTreeMap<String, Density>;

/// Fits one density per parameter over the trials where it is active.
pub fn fit_densities(trials: &[&Trial], space: &SearchSpace, prior_weight: f64) -> Densities {
    space
        .params()
        .iter()
        .map(|p| {
            let obs: Vec<_> = trials.iter().filter_map(|t| t.params.get(&p.name)).collect();
            (p.name.clone(), Density::fit(&p.domain, &obs, prior_weight))
        })
        .collect()
}

/// `prod_p pdf_good(x_p) / max(pdf_bad(x_p), floor)` over the parameters
/// present in `x`.
pub fn acquisition(x: &Assignment, good: &Densities, bad: &Densities, floor: f64) -> f64 {
    x.iter()
        .map(|(name, v)| {
            let g = good.get(name).map_or(1.0, |d| d.pdf(v));
            let b = bad.get(name).map_or(1.0, |d| d.pdf(v));
            g / b.max(floor)
        })
        .product()
}

/// Next configuration to evaluate.
///
/// Until `warmup` trials have completed (and at least two exist to split),
/// this is a prior draw. Afterwards `n_candidates` configurations are drawn
/// from the good densities and the one with the highest acquisition wins;
/// ties keep the earliest candidate.
pub fn suggest(trials: &[Trial], space: &SearchSpace, cfg: &TpeConfig, rng: &mut Rng) -> Assignment {
    let done: Vec<&Trial> = trials.iter().filter(|t| t.objective.is_some()).collect();
    if done.len() < cfg.warmup.max(2) {
        return space.sample_prior(rng);
    }
    let (good, bad) = split_observations(&done, cfg.gamma).expect("at least two observations");
    let good = fit_densities(&good, space, cfg.prior_weight);
    let bad = fit_densities(&bad, space, cfg.prior_weight);
    let mut best: Option<(f64, Assignment)> = None;
    for _ in 0..cfg.n_candidates {
        let mut x = Assignment::new();
        for p in space.params() {
            if space.is_active(p, &x) {
                x.insert(p.name.clone(), good[&p.name].sample(rng));
            }
        }
        let score = acquisition(&x, &good, &bad, cfg.eps_floor);
        if best.as_ref().map_or(true, |(s, _)| score > *s) {
            best = Some((score, x));
        }
    }
    best.expect("n_candidates >= 1").1
}
