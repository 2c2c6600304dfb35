use std::collections::{BTreeMap, HashMap};
use std::fmt;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::HpoError;
use crate::rng::Rng;

/// A sampled hyperparameter value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Int(i64),
    Float(f64),
    Text(String),
}

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(i) => Some(*i as f64),
            Value::Float(f) => Some(*f),
            Value::Text(_) => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            Value::Int(i) => Some(*i),
            _ => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(i) => write!(f, "{i}"),
            Value::Float(x) => write!(f, "{x}"),
            Value::Text(s) => f.write_str(s),
        }
    }
}

/// One configuration: parameter name to value, inactive parameters absent.
pub type Assignment = BTreeMap<String, Value>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    #[default]
    Linear,
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Domain {
    Float {
        low: f64,
        high: f64,
        #[serde(default)]
        scale: Scale,
    },
    Integer {
        low: i64,
        high: i64,
    },
    Categorical {
        choices: Vec<Value>,
    },
}

/// Activation rule: the parameter exists only when `parent` takes one of
/// `values`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub parent: String,
    pub values: Vec<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    #[serde(flatten)]
    pub domain: Domain,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub when: Option<Condition>,
}

/// Validated search space; parameters are kept in an order where every
/// parent precedes its children.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpace", into = "RawSpace")]
pub struct SearchSpace {
    params: Vec<ParamSpec>,
}

#[derive(Serialize, Deserialize)]
struct RawSpace {
    params: Vec<ParamSpec>,
}

impl TryFrom<RawSpace> for SearchSpace {
    type Error = HpoError;

    fn try_from(raw: RawSpace) -> Result<Self, HpoError> {
        SearchSpace::new(raw.params)
    }
}

impl From<SearchSpace> for RawSpace {
    fn from(s: SearchSpace) -> Self {
        RawSpace { params: s.params }
    }
}

impl SearchSpace {
    /// Validates bounds, choices and conditional edges, then orders the
    /// parameters so parents come first.
    pub fn new(params: Vec<ParamSpec>) -> Result<Self, HpoError> {
        let mut v = Vec::new();
        let mut index = HashMap::new();
        for (i, p) in params.iter().enumerate() {
            if index.insert(p.name.as_str(), i).is_some() {
                v.push(format!("duplicate parameter {}", p.name));
            }
            match &p.domain {
                Domain::Float { low, high, scale } => {
                    if !(low < high) || !low.is_finite() || !high.is_finite() {
                        v.push(format!("{}: low {low} must be below high {high}", p.name));
                    }
                    if *scale == Scale::Log && *low <= 0.0 {
                        v.push(format!("{}: log scale needs a positive low bound", p.name));
                    }
                }
                Domain::Integer { low, high } => {
                    if low >= high {
                        v.push(format!("{}: low {low} must be below high {high}", p.name));
                    }
                }
                Domain::Categorical { choices } => {
                    if choices.is_empty() {
                        v.push(format!("{}: no choices", p.name));
                    }
                    for (j, c) in choices.iter().enumerate() {
                        if choices[..j].contains(c) {
                            v.push(format!("{}: duplicate choice {c}", p.name));
                        }
                    }
                }
            }
        }
        for p in &params {
            let Some(cond) = &p.when else { continue };
            match index.get(cond.parent.as_str()).map(|&i| &params[i].domain) {
                None => v.push(format!("{}: unknown parent {}", p.name, cond.parent)),
                Some(Domain::Categorical { choices }) => {
                    for val in &cond.values {
                        if !choices.contains(val) {
                            v.push(format!("{}: {val} is not a choice of {}", p.name, cond.parent));
                        }
                    }
                }
                Some(_) => v.push(format!("{}: parent {} is not categorical", p.name, cond.parent)),
            }
        }
        if !v.is_empty() {
            return Err(HpoError::Space(v));
        }

        // Kahn ordering over parent -> child edges, stable in declaration order.
        let mut placed = vec![false; params.len()];
        let mut order = Vec::with_capacity(params.len());
        while order.len() < params.len() {
            let before = order.len();
            for (i, p) in params.iter().enumerate() {
                if placed[i] {
                    continue;
                }
                let ready = match &p.when {
                    None => true,
                    Some(c) => placed[index[c.parent.as_str()]],
                };
                if ready {
                    placed[i] = true;
                    order.push(i);
                }
            }
            if order.len() == before {
                let cyclic: Vec<String> = params
                    .iter()
                    .zip(&placed)
                    .filter(|(_, &done)| !done)
                    .map(|(p, _)| p.name.clone())
                    .collect();
                return Err(HpoError::Space(vec![format!(
                    "conditional edges form a cycle through {}",
                    cyclic.join(", ")
                )]));
            }
        }
        let mut params: Vec<Option<ParamSpec>> = params.into_iter().map(Some).collect();
        let params = order.into_iter().map(|i| params[i].take().unwrap()).collect();
        Ok(Self { params })
    }

    pub fn from_toml_str(text: &str) -> Result<Self, HpoError> {
        toml::from_str(text).map_err(|e| HpoError::Space(vec![e.to_string()]))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("search spaces serialize")
    }

    pub fn params(&self) -> &[ParamSpec] {
        &self.params
    }

    pub fn get(&self, name: &str) -> Option<&ParamSpec> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Whether `p` is active given the (partial) assignment of its parents.
    pub fn is_active(&self, p: &ParamSpec, x: &Assignment) -> bool {
        match &p.when {
            None => true,
            Some(c) => x.get(&c.parent).is_some_and(|v| c.values.contains(v)),
        }
    }

    /// Checks that `x` assigns exactly the active parameters, each in domain.
    pub fn check(&self, x: &Assignment) -> Result<(), HpoError> {
        let mut v = Vec::new();
        for p in &self.params {
            match (self.is_active(p, x), x.get(&p.name)) {
                (true, None) => v.push(format!("{} is active but missing", p.name)),
                (false, Some(_)) => v.push(format!("{} is inactive but assigned", p.name)),
                (true, Some(val)) if !p.domain.contains(val) => {
                    v.push(format!("{} = {val} is outside its domain", p.name))
                }
                _ => {}
            }
        }
        for name in x.keys() {
            if self.get(name).is_none() {
                v.push(format!("unknown parameter {name}"));
            }
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(HpoError::Space(v))
        }
    }

    /// Independent uniform draw (log-uniform on log-scale floats).
    pub fn sample_prior(&self, rng: &mut Rng) -> Assignment {
        let mut x = Assignment::new();
        for p in &self.params {
            if self.is_active(p, &x) {
                x.insert(p.name.clone(), p.domain.sample_uniform(rng));
            }
        }
        x
    }
}

impl Domain {
    pub fn contains(&self, v: &Value) -> bool {
        match (self, v) {
            (Domain::Float { low, high, .. }, Value::Float(x)) => low <= x && x <= high,
            (Domain::Integer { low, high }, Value::Int(i)) => low <= i && i <= high,
            (Domain::Categorical { choices }, v) => choices.contains(v),
            _ => false,
        }
    }

    pub fn sample_uniform(&self, rng: &mut Rng) -> Value {
        match self {
            Domain::Float {
                low,
                high,
                scale: Scale::Linear,
            } => Value::Float(rng.gen_range(*low..=*high)),
            Domain::Float {
                low,
                high,
                scale: Scale::Log,
            } => {
                let u = rng.gen_range(low.ln()..=high.ln());
                Value::Float(u.exp().clamp(*low, *high))
            }
            Domain::Integer { low, high } => Value::Int(rng.gen_range(*low..=*high)),
            Domain::Categorical { choices } => choices[rng.gen_range(0..choices.len())].clone(),
        }
    }
}
