//! One-dimensional Parzen estimators: truncated-Gaussian mixtures with a
//! uniform prior component for numeric parameters, smoothed frequencies for
//! categorical ones.

use rand::Rng as _;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use super::space::{Domain, Scale, Value};
use crate::rng::Rng;

/// Mixture over an interval `[lo, hi]` of internal coordinates (natural log
/// for log-scale floats, half-integer padded bounds for integers).
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    lo: f64,
    hi: f64,
    /// Weight of the uniform prior over `[lo, hi]`.
    prior_weight: f64,
    /// `(weight, mu, sigma, normalizer)` per observation.
    components: Vec<(f64, f64, f64, f64)>,
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

impl Mixture {
    /// Builds the mixture from observations in internal coordinates.
    ///
    /// Each bandwidth is the larger gap to the neighbouring observation (the
    /// interval ends count as neighbours), clipped to
    /// `[(hi - lo) / min(100, n + 1), hi - lo]`.
    pub fn fit(lo: f64, hi: f64, observations: &[f64], prior_weight: f64) -> Self {
        let n = observations.len();
        let span = hi - lo;
        let mut sorted: Vec<f64> = observations.iter().map(|x| x.clamp(lo, hi)).collect();
        sorted.sort_by(f64::total_cmp);
        let min_sigma = span / (n as f64 + 1.0).min(100.0);
        let total = n as f64 + prior_weight;
        let unit = std_normal();
        let components = (0..n)
            .map(|i| {
                let mu = sorted[i];
                let left = if i == 0 { lo } else { sorted[i - 1] };
                let right = if i + 1 == n { hi } else { sorted[i + 1] };
                let sigma = (mu - left).max(right - mu).clamp(min_sigma, span);
                let z = unit.cdf((hi - mu) / sigma) - unit.cdf((lo - mu) / sigma);
                (1.0 / total, mu, sigma, z.max(f64::MIN_POSITIVE))
            })
            .collect();
        Self {
            lo,
            hi,
            prior_weight: prior_weight / total,
            components,
        }
    }

    pub fn pdf(&self, u: f64) -> f64 {
        if u < self.lo || u > self.hi {
            return 0.0;
        }
        let unit = std_normal();
        let mut p = self.prior_weight / (self.hi - self.lo);
        for &(w, mu, sigma, z) in &self.components {
            p += w * unit.pdf((u - mu) / sigma) / (sigma * z);
        }
        p
    }

    pub fn cdf(&self, u: f64) -> f64 {
        let u = u.clamp(self.lo, self.hi);
        let unit = std_normal();
        let mut c = self.prior_weight * (u - self.lo) / (self.hi - self.lo);
        for &(w, mu, sigma, z) in &self.components {
            c += w * (unit.cdf((u - mu) / sigma) - unit.cdf((self.lo - mu) / sigma)) / z;
        }
        c
    }

    pub fn sample(&self, rng: &mut Rng) -> f64 {
        let mut pick = rng.gen::<f64>() - self.prior_weight;
        if pick < 0.0 || self.components.is_empty() {
            return rng.gen_range(self.lo..=self.hi);
        }
        let mut chosen = self.components.last().unwrap();
        for c in &self.components {
            pick -= c.0;
            if pick < 0.0 {
                chosen = c;
                break;
            }
        }
        let (_, mu, sigma, _) = *chosen;
        sample_truncated(mu, sigma, self.lo, self.hi, rng)
    }
}

/// Inverse-CDF draw from `N(mu, sigma)` restricted to `[lo, hi]`, working in
/// the lower tail for precision.
fn sample_truncated(mu: f64, sigma: f64, lo: f64, hi: f64, rng: &mut Rng) -> f64 {
    let unit = std_normal();
    let (mut a, mut b) = ((lo - mu) / sigma, (hi - mu) / sigma);
    let flip = a > 0.0;
    if flip {
        (a, b) = (-b, -a);
    }
    let (pa, pb) = (unit.cdf(a), unit.cdf(b));
    let u = pa + rng.gen::<f64>() * (pb - pa);
    let mut z = unit.inverse_cdf(u.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON));
    if !z.is_finite() {
        z = a;
    }
    z = z.clamp(a, b);
    if flip {
        z = -z;
    }
    (mu + sigma * z).clamp(lo, hi)
}

/// Per-parameter density used by the acquisition function.
#[derive(Debug, Clone, PartialEq)]
pub enum Density {
    Float { mixture: Mixture, log: bool, low: f64, high: f64 },
    Integer { mixture: Mixture, low: i64, high: i64 },
    Categorical { choices: Vec<Value>, probs: Vec<f64> },
}

impl Density {
    /// Fits the density of `domain` to `observations`; an empty slice gives
    /// the prior alone.
    pub fn fit(domain: &Domain, observations: &[&Value], prior_weight: f64) -> Self {
        match domain {
            Domain::Float { low, high, scale } => {
                let log = *scale == Scale::Log;
                let to_u = |x: f64| if log { x.ln() } else { x };
                let obs: Vec<f64> = observations
                    .iter()
                    .filter_map(|v| v.as_f64())
                    .map(to_u)
                    .collect();
                Density::Float {
                    mixture: Mixture::fit(to_u(*low), to_u(*high), &obs, prior_weight),
                    log,
                    low: *low,
                    high: *high,
                }
            }
            Domain::Integer { low, high } => {
                let obs: Vec<f64> = observations.iter().filter_map(|v| v.as_f64()).collect();
                Density::Integer {
                    mixture: Mixture::fit(*low as f64 - 0.5, *high as f64 + 0.5, &obs, prior_weight),
                    low: *low,
                    high: *high,
                }
            }
            Domain::Categorical { choices } => {
                let mut counts = vec![prior_weight; choices.len()];
                for v in observations {
                    if let Some(i) = choices.iter().position(|c| c == *v) {
                        counts[i] += 1.0;
                    }
                }
                let total: f64 = counts.iter().sum();
                Density::Categorical {
                    choices: choices.clone(),
                    probs: counts.into_iter().map(|c| c / total).collect(),
                }
            }
        }
    }

    /// Density (floats) or probability mass (integers, categories) at `v`.
    pub fn pdf(&self, v: &Value) -> f64 {
        match self {
            Density::Float {
                mixture, log, low, high,
            } => match v.as_f64() {
                Some(x) if x >= *low && x <= *high => {
                    if *log {
                        mixture.pdf(x.ln()) / x
                    } else {
                        mixture.pdf(x)
                    }
                }
                _ => 0.0,
            },
            Density::Integer { mixture, low, high } => match v.as_i64() {
                Some(k) if k >= *low && k <= *high => {
                    let k = k as f64;
                    mixture.cdf(k + 0.5) - mixture.cdf(k - 0.5)
                }
                _ => 0.0,
            },
            Density::Categorical { choices, probs } => choices
                .iter()
                .position(|c| c == v)
                .map_or(0.0, |i| probs[i]),
        }
    }

    pub fn sample(&self, rng: &mut Rng) -> Value {
        match self {
            Density::Float {
                mixture, log, low, high,
            } => {
                let u = mixture.sample(rng);
                let x = if *log { u.exp() } else { u };
                Value::Float(x.clamp(*low, *high))
            }
            Density::Integer { mixture, low, high } => {
                let k = mixture.sample(rng).round() as i64;
                Value::Int(k.clamp(*low, *high))
            }
            Density::Categorical { choices, probs } => {
                let mut pick = rng.gen::<f64>();
                for (c, p) in choices.iter().zip(probs) {
                    pick -= p;
                    if pick < 0.0 {
                        return c.clone();
                    }
                }
                choices.last().unwrap().clone()
            }
        }
    }
}
