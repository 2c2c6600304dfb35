//! Benchmark results, aggregation and rendering.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::grid::scheduler_id;
use crate::signal::Modality;
use crate::train::Scheduler;

/// One (model, modality, scheduler, session, seed) result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub model: String,
    pub modality: Modality,
    pub scheduler: Scheduler,
    pub subject_id: String,
    pub session_id: String,
    pub seed_index: usize,
    pub seed: u64,
    /// Test accuracy in `[0, 1]`; `None` when the cell failed.
    pub accuracy: Option<f64>,
    pub error: Option<String>,
}

impl CellResult {
    pub fn failed(&self) -> bool {
        self.accuracy.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub name: String,
    /// `None` when the model could not be built for the data.
    pub param_count: Option<usize>,
}

/// A published accuracy to compare a grid cell against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceTarget {
    pub model: String,
    pub modality: Modality,
    pub scheduler: Scheduler,
    /// Target mean accuracy in percent.
    pub target_ca_percent: f64,
}

/// Mean accuracy over the completed cells of some group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    /// `None` when no cell in the group completed.
    pub mean_ca: Option<f64>,
    pub completed: usize,
    pub failed: usize,
}

impl Aggregate {
    fn over<'a>(cells: impl Iterator<Item = &'a CellResult>) -> Self {
        let (mut sum, mut completed, mut failed) = (0.0, 0, 0);
        for c in cells {
            match c.accuracy {
                Some(a) => {
                    sum += a;
                    completed += 1;
                }
                None => failed += 1,
            }
        }
        Aggregate {
            mean_ca: (completed > 0).then(|| sum / completed as f64),
            completed,
            failed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelAggregate {
    pub model: String,
    #[serde(flatten)]
    pub aggregate: Aggregate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridAggregate {
    pub model: String,
    pub modality: Modality,
    pub scheduler: Scheduler,
    #[serde(flatten)]
    pub aggregate: Aggregate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub models: Vec<ModelInfo>,
    pub modalities: Vec<Modality>,
    pub schedulers: Vec<Scheduler>,
    pub seeds: usize,
    pub cells: Vec<CellResult>,
    /// Per model, over every modality, scheduler, session and seed.
    pub per_model: Vec<ModelAggregate>,
    /// Per (model, modality, scheduler), over sessions and seeds.
    pub grid: Vec<GridAggregate>,
    #[serde(default)]
    pub references: Vec<ReferenceTarget>,
}

impl BenchmarkReport {
    /// Builds the report and its aggregates. Every cell counts equally.
    pub fn new(
        models: Vec<ModelInfo>,
        modalities: Vec<Modality>,
        schedulers: Vec<Scheduler>,
        seeds: usize,
        cells: Vec<CellResult>,
        references: Vec<ReferenceTarget>,
    ) -> Self {
        let per_model = models
            .iter()
            .map(|m| ModelAggregate {
                model: m.name.clone(),
                aggregate: Aggregate::over(cells.iter().filter(|c| c.model == m.name)),
            })
            .collect();
        let mut grid = Vec::new();
        for m in &models {
            for &modality in &modalities {
                for &scheduler in &schedulers {
                    grid.push(GridAggregate {
                        model: m.name.clone(),
                        modality,
                        scheduler,
                        aggregate: Aggregate::over(cells.iter().filter(|c| {
                            c.model == m.name && c.modality == modality && c.scheduler == scheduler
                        })),
                    });
                }
            }
        }
        Self {
            models,
            modalities,
            schedulers,
            seeds,
            cells,
            per_model,
            grid,
            references,
        }
    }

    pub fn failures(&self) -> impl Iterator<Item = &CellResult> {
        self.cells.iter().filter(|c| c.failed())
    }

    pub fn grid_mean(&self, model: &str, modality: Modality, scheduler: &Scheduler) -> Option<f64> {
        self.grid
            .iter()
            .find(|g| g.model == model && g.modality == modality && g.scheduler == *scheduler)
            .and_then(|g| g.aggregate.mean_ca)
    }

    /// Sessions in first-seen order, as `subject/session`.
    pub fn sessions(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for c in &self.cells {
            let id = format!("{}/{}", c.subject_id, c.session_id);
            if !out.contains(&id) {
                out.push(id);
            }
        }
        out
    }

    /// Model names ordered by mean accuracy, highest first. Models without
    /// any completed cell go last; ties keep configuration order.
    pub fn ranked_models(&self) -> Vec<&ModelAggregate> {
        let mut ranked: Vec<&ModelAggregate> = self.per_model.iter().collect();
        ranked.sort_by(|a, b| {
            let key = |m: &ModelAggregate| m.aggregate.mean_ca.unwrap_or(f64::NEG_INFINITY);
            key(b).total_cmp(&key(a))
        });
        ranked
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    #[default]
    Text,
    Csv,
    Json,
}

/// Renders `report`. Output depends only on the report's contents.
pub fn render_report(report: &BenchmarkReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Text => render_text(report),
        ReportFormat::Csv => render_csv(report),
        ReportFormat::Json => serde_json::to_string_pretty(report).expect("report serializes") + "\n",
    }
}

/// Column header for a scheduler, matching the published table when the
/// kind is unambiguous within the grid.
fn scheduler_label(s: &Scheduler, all: &[Scheduler]) -> String {
    let base = match s {
        Scheduler::None => "None",
        Scheduler::Exponential { .. } => "Exp. Scheduler",
        Scheduler::Step { .. } => "Step Scheduler",
    };
    if all.iter().filter(|o| o.key() == s.key()).count() > 1 {
        format!("{base} [{}]", scheduler_id(s))
    } else {
        base.to_string()
    }
}

fn percent(x: Option<f64>) -> String {
    x.map_or_else(|| "failed".to_string(), |v| format!("{:.2}", 100.0 * v))
}

fn thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

fn table(out: &mut String, header: &[String], rows: &[Vec<String>]) {
    let widths: Vec<usize> = (0..header.len())
        .map(|j| {
            rows.iter()
                .map(|r| r[j].chars().count())
                .chain([header[j].chars().count()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let line = |cells: &[String]| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(j, (c, w))| if j == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        format!("| {} |\n", parts.join(" | "))
    };
    out.push_str(&line(header));
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    out.push_str(&format!("|-{}-|\n", rule.join("-|-")));
    for r in rows {
        out.push_str(&line(r));
    }
}

fn render_text(report: &BenchmarkReport) -> String {
    let mut out = String::new();
    let failed = report.failures().count();
    out.push_str("Intra-session benchmark\n\n");
    let _ = writeln!(out, "sessions: {}", report.sessions().join(", "));
    let _ = writeln!(out, "seeds per cell: {}", report.seeds);
    let _ = writeln!(out, "cells: {} ({failed} failed)\n", report.cells.len());

    out.push_str("Average classification accuracy (%), models in descending order\n\n");
    let ranked = report.ranked_models();
    let mut header = vec![String::new()];
    header.extend(ranked.iter().map(|m| m.model.clone()));
    let mut ca = vec!["Average CA (%)".to_string()];
    ca.extend(ranked.iter().map(|m| percent(m.aggregate.mean_ca)));
    let mut params = vec!["Trainable parameters".to_string()];
    params.extend(ranked.iter().map(|m| {
        report
            .models
            .iter()
            .find(|i| i.name == m.model)
            .and_then(|i| i.param_count)
            .map_or_else(|| "n/a".to_string(), thousands)
    }));
    table(&mut out, &header, &[ca, params]);

    for m in &ranked {
        let _ = writeln!(out, "\nScheduler x modality grid, {}: average CA (%)\n", m.model);
        let mut header = vec!["Input".to_string()];
        header.extend(report.schedulers.iter().map(|s| scheduler_label(s, &report.schedulers)));
        let rows: Vec<Vec<String>> = report
            .modalities
            .iter()
            .map(|&modality| {
                let mut row = vec![modality.display_name().to_string()];
                row.extend(
                    report
                        .schedulers
                        .iter()
                        .map(|s| percent(report.grid_mean(&m.model, modality, s))),
                );
                row
            })
            .collect();
        table(&mut out, &header, &rows);
    }

    if !report.references.is_empty() {
        out.push_str("\nReference comparison\n\n");
        let header = ["Model", "Input", "Scheduler", "Target (%)", "Measured (%)", "Delta (pp)"]
            .map(String::from)
            .to_vec();
        let rows: Vec<Vec<String>> = report
            .references
            .iter()
            .map(|r| {
                let measured = report.grid_mean(&r.model, r.modality, &r.scheduler);
                vec![
                    r.model.clone(),
                    r.modality.display_name().to_string(),
                    scheduler_label(&r.scheduler, &report.schedulers),
                    format!("{:.2}", r.target_ca_percent),
                    measured.map_or_else(|| "n/a".into(), |v| format!("{:.2}", 100.0 * v)),
                    measured.map_or_else(|| "n/a".into(), |v| format!("{:+.2}", 100.0 * v - r.target_ca_percent)),
                ]
            })
            .collect();
        table(&mut out, &header, &rows);
    }

    if failed > 0 {
        out.push_str("\nFailed cells\n\n");
        for c in report.failures() {
            let _ = writeln!(
                out,
                "- {} / {} / {} / {}/{} / seed {}: {}",
                c.model,
                c.modality.key(),
                scheduler_id(&c.scheduler),
                c.subject_id,
                c.session_id,
                c.seed_index,
                c.error.as_deref().unwrap_or("unknown error")
            );
        }
    }
    out
}

fn render_csv(report: &BenchmarkReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let row_err = "writing to memory cannot fail";
    w.write_record([
        "model", "modality", "scheduler", "subject", "session", "seed_index", "seed", "status", "accuracy", "error",
    ])
    .expect(row_err);
    for c in &report.cells {
        w.write_record([
            c.model.clone(),
            c.modality.key().to_string(),
            scheduler_id(&c.scheduler),
            c.subject_id.clone(),
            c.session_id.clone(),
            c.seed_index.to_string(),
            c.seed.to_string(),
            if c.failed() { "failed" } else { "complete" }.to_string(),
            c.accuracy.map_or_else(String::new, |a| format!("{a:.17}")),
            c.error.clone().unwrap_or_default(),
        ])
        .expect(row_err);
    }
    String::from_utf8(w.into_inner().expect(row_err)).expect("csv output is utf-8")
}
