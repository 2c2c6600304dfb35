use std::fmt::Write as _;
use std::io;

use serde::Serialize;

use super::space::{Domain, SearchSpace};
use super::{HpoError, Trial, TrialStatus};

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Summary {
    /// `(value, count)` pairs; categorical choices keep declaration order,
    /// integers ascend.
    Histogram { bins: Vec<(String, usize)> },
    Quantiles {
        min: f64,
        q25: f64,
        median: f64,
        q75: f64,
        max: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamSummary {
    pub name: String,
    /// Top-k trials in which the parameter was active.
    pub active: usize,
    pub summary: Summary,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (i, frac) = (pos.floor() as usize, pos - pos.floor());
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

/// Value distribution of every parameter over the `k` best completed trials
/// (ties keep history order).
pub fn hp_importance(
    history: &[Trial],
    space: &SearchSpace,
    k: usize,
) -> Result<Vec<ParamSummary>, HpoError> {
    let mut done: Vec<&Trial> = history.iter().filter(|t| t.objective.is_some()).collect();
    if k == 0 || k > done.len() {
        return Err(HpoError::Usage(format!(
            "top-k of {k} needs 1..={} completed trials",
            done.len()
        )));
    }
    done.sort_by(|a, b| b.objective_or_min().total_cmp(&a.objective_or_min()));
    let top = &done[..k];
    let mut out = Vec::new();
    for p in space.params() {
        let values: Vec<_> = top.iter().filter_map(|t| t.params.get(&p.name)).collect();
        let summary = match &p.domain {
            Domain::Categorical { choices } => Summary::Histogram {
                bins: choices
                    .iter()
                    .map(|c| (c.to_string(), values.iter().filter(|v| **v == c).count()))
                    .collect(),
            },
            Domain::Integer { .. } => {
                let mut ints: Vec<i64> = values.iter().filter_map(|v| v.as_i64()).collect();
                ints.sort_unstable();
                let mut bins: Vec<(String, usize)> = Vec::new();
                for i in ints {
                    match bins.last_mut() {
                        Some((label, n)) if *label == i.to_string() => *n += 1,
                        _ => bins.push((i.to_string(), 1)),
                    }
                }
                Summary::Histogram { bins }
            }
            Domain::Float { .. } => {
                let mut xs: Vec<f64> = values.iter().filter_map(|v| v.as_f64()).collect();
                if xs.is_empty() {
                    Summary::Histogram { bins: Vec::new() }
                } else {
                    xs.sort_by(f64::total_cmp);
                    Summary::Quantiles {
                        min: xs[0],
                        q25: quantile(&xs, 0.25),
                        median: quantile(&xs, 0.5),
                        q75: quantile(&xs, 0.75),
                        max: xs[xs.len() - 1],
                    }
                }
            }
        };
        out.push(ParamSummary {
            name: p.name.clone(),
            active: values.len(),
            summary,
        });
    }
    Ok(out)
}

/// Plain-text table of [`hp_importance`] output.
pub fn render_importance(summaries: &[ParamSummary], k: usize) -> String {
    let mut s = format!("Top-{k} hyperparameter distributions\n");
    for p in summaries {
        let _ = write!(s, "  {:<16} (active in {:>3}) ", p.name, p.active);
        match &p.summary {
            Summary::Histogram { bins } => {
                let cells: Vec<String> = bins
                    .iter()
                    .map(|(v, n)| format!("{v}: {:.0}%", 100.0 * *n as f64 / p.active.max(1) as f64))
                    .collect();
                s.push_str(&cells.join(", "));
            }
            Summary::Quantiles {
                min,
                q25,
                median,
                q75,
                max,
            } => {
                let _ = write!(
                    s,
                    "min {min:.4e}  q25 {q25:.4e}  median {median:.4e}  q75 {q75:.4e}  max {max:.4e}"
                );
            }
        }
        s.push('\n');
    }
    s
}

/// `trial, <params...>, objective, status, duration_s`; inactive parameters
/// and failed objectives are empty cells.
pub fn write_history_csv<W: io::Write>(
    history: &[Trial],
    space: &SearchSpace,
    out: W,
) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["trial".to_string()];
    header.extend(space.params().iter().map(|p| p.name.clone()));
    header.extend(["objective", "status", "duration_s"].map(String::from));
    w.write_record(&header)?;
    for t in history {
        let mut row = vec![t.id.to_string()];
        for p in space.params() {
            row.push(t.params.get(&p.name).map(|v| v.to_string()).unwrap_or_default());
        }
        row.push(t.objective.map(|y| y.to_string()).unwrap_or_default());
        row.push(match &t.status {
            TrialStatus::Complete => "complete".to_string(),
            TrialStatus::Failed(why) => format!("failed: {why}"),
        });
        row.push(format!("{:.6}", t.duration_s));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
