//! Result files: `results.csv`, `results.json`, `manifest.json`,
//! `figures/*.svg` and `checkpoints/*.json`.
//!
//! `results.csv` holds only deterministic quantities, so two sweeps with the
//! same seed produce byte-identical files. Wall-clock timings go to the
//! manifest.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::{Problem, SweepConfig};
use super::experiment::{run_experiment, ExperimentOutcome, Method, ResultRecord};
use crate::error::{Error, Result};

pub const RESULTS_HEADER: &str =
    "problem,method,n_train_structures,hidden,shots,nmse_mean,nmse_std,n_structures,n_failed";

pub const ERROR_BAR_CONVENTION: &str =
    "bars show the mean NMSE over testing structures; whiskers show +/- one standard deviation (1/N) across structures";

/// One line of `results.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub problem: Problem,
    pub method: Method,
    pub n_train_structures: usize,
    pub hidden: Option<usize>,
    pub shots: usize,
    pub nmse_mean: f64,
    pub nmse_std: f64,
    pub n_structures: usize,
    pub n_failed: usize,
}

impl From<&ResultRecord> for SummaryRow {
    fn from(r: &ResultRecord) -> Self {
        SummaryRow {
            problem: r.problem,
            method: r.method,
            n_train_structures: r.n_train_structures,
            hidden: r.hidden,
            shots: r.shots,
            nmse_mean: r.nmse_mean,
            nmse_std: r.nmse_std,
            n_structures: r.per_structure_nmse.len(),
            n_failed: r.failed_structures.len(),
        }
    }
}

/// `f64` Display is the shortest representation that parses back to the
/// same value, so the CSV round-trips exactly.
pub fn results_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from(RESULTS_HEADER);
    out.push('\n');
    for r in rows {
        let hidden = r.hidden.map(|h| h.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.problem.name(),
            r.method.name(),
            r.n_train_structures,
            hidden,
            r.shots,
            r.nmse_mean,
            r.nmse_std,
            r.n_structures,
            r.n_failed
        );
    }
    out
}

pub fn parse_results_csv(text: &str) -> Result<Vec<SummaryRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == RESULTS_HEADER => {}
        _ => return Err(Error::Parse("results.csv: unexpected header".into())),
    }
    let field = |f: &str, what: &str, line: usize| -> Result<String> {
        if f.is_empty() && what != "hidden" {
            return Err(Error::Parse(format!("results.csv line {line}: empty {what}")));
        }
        Ok(f.to_string())
    };
    let num = |s: String, line: usize| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|e| Error::Parse(format!("results.csv line {line}: {e}")))
    };
    let int = |s: String, line: usize| -> Result<usize> {
        s.parse::<usize>()
            .map_err(|e| Error::Parse(format!("results.csv line {line}: {e}")))
    };
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let line = i + 2;
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 9 {
                return Err(Error::Parse(format!("results.csv line {line}: expected 9 fields")));
            }
            let hidden = field(f[3], "hidden", line)?;
            Ok(SummaryRow {
                problem: field(f[0], "problem", line)?.parse()?,
                method: field(f[1], "method", line)?.parse()?,
                n_train_structures: int(field(f[2], "n_train_structures", line)?, line)?,
                hidden: if hidden.is_empty() { None } else { Some(int(hidden, line)?) },
                shots: int(field(f[4], "shots", line)?, line)?,
                nmse_mean: num(field(f[5], "nmse_mean", line)?, line)?,
                nmse_std: num(field(f[6], "nmse_std", line)?, line)?,
                n_structures: int(field(f[7], "n_structures", line)?, line)?,
                n_failed: int(field(f[8], "n_failed", line)?, line)?,
            })
        })
        .collect()
}

pub fn read_results_csv(path: &Path) -> Result<Vec<SummaryRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_results_csv(&text)
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

/// Grouped-bar chart of one problem: MAML panel on the left, GP on the right,
/// one bar group per shot count and one bar per training-population size.
///
/// Bars are drawn inside a y-flipped, scaled group so each `<rect>` height
/// is the NMSE value itself, in percent.
pub fn render_chart(rows: &[SummaryRow], problem: Problem) -> String {
    let rows: Vec<&SummaryRow> = rows.iter().filter(|r| r.problem == problem).collect();
    let (panel_w, panel_h, margin_l, margin_t, gap) = (460.0, 300.0, 60.0, 50.0, 60.0);
    let width = 2.0 * (margin_l + panel_w) + gap;
    let height = margin_t + panel_h + 80.0;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (p, method) in [Method::Maml, Method::Gp].into_iter().enumerate() {
        let panel: Vec<&&SummaryRow> = rows.iter().filter(|r| r.method == method).collect();
        let shots: BTreeSet<usize> = panel.iter().map(|r| r.shots).collect();
        let trains: BTreeSet<usize> = panel.iter().map(|r| r.n_train_structures).collect();
        let ymax = panel
            .iter()
            .map(|r| r.nmse_mean + r.nmse_std)
            .filter(|v| v.is_finite())
            .fold(0.0f64, f64::max)
            .max(1e-9)
            * 1.05;
        let scale = panel_h / ymax;
        let x0 = margin_l + p as f64 * (margin_l + panel_w + gap);
        let base = margin_t + panel_h;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle" font-size="14">{} NMSE (%), {}</text>"#,
            x0 + panel_w / 2.0,
            margin_t - 20.0,
            method.name(),
            problem.name()
        );
        let _ = writeln!(
            svg,
            r#"<line x1="{x0}" y1="{base}" x2="{}" y2="{base}" stroke="black"/><line x1="{x0}" y1="{margin_t}" x2="{x0}" y2="{base}" stroke="black"/>"#,
            x0 + panel_w
        );
        for k in 0..=4 {
            let v = ymax * k as f64 / 4.0;
            let y = base - v * scale;
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
                x0 - 6.0,
                y + 4.0,
                format_tick(v)
            );
        }
        let group_w = panel_w / shots.len().max(1) as f64;
        let bar_w = group_w * 0.8 / trains.len().max(1) as f64;
        let _ = writeln!(
            svg,
            r#"<g class="bars" data-method="{}" data-scale="{scale}" transform="translate({x0},{base}) scale(1,-{scale})">"#,
            method.name()
        );
        for (g, s) in shots.iter().enumerate() {
            for (b, n) in trains.iter().enumerate() {
                let Some(r) = panel.iter().find(|r| r.shots == *s && r.n_train_structures == *n) else {
                    continue;
                };
                let x = g as f64 * group_w + group_w * 0.1 + b as f64 * bar_w;
                let color = PALETTE[b % PALETTE.len()];
                let _ = writeln!(
                    svg,
                    r#"<rect class="bar" data-method="{}" data-train="{n}" data-shots="{s}" x="{x}" y="0" width="{bar_w}" height="{}" fill="{color}"/>"#,
                    method.name(),
                    r.nmse_mean
                );
                let cx = x + bar_w / 2.0;
                let _ = writeln!(
                    svg,
                    r#"<line x1="{cx}" y1="{}" x2="{cx}" y2="{}" stroke="black" vector-effect="non-scaling-stroke"/>"#,
                    (r.nmse_mean - r.nmse_std).max(0.0),
                    r.nmse_mean + r.nmse_std
                );
            }
        }
        let _ = writeln!(svg, "</g>");
        for (g, s) in shots.iter().enumerate() {
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{}" text-anchor="middle">{s}</text>"#,
                x0 + (g as f64 + 0.5) * group_w,
                base + 16.0
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle">shots</text>"#,
            x0 + panel_w / 2.0,
            base + 34.0
        );
        for (b, n) in trains.iter().enumerate() {
            let lx = x0 + b as f64 * 110.0;
            let ly = base + 56.0;
            let _ = writeln!(
                svg,
                r#"<rect x="{lx}" y="{}" width="12" height="12" fill="{}"/><text x="{}" y="{}">{n} training</text>"#,
                ly - 10.0,
                PALETTE[b % PALETTE.len()],
                lx + 16.0,
                ly
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}

fn format_tick(v: f64) -> String {
    if v >= 10.0 {
        format!("{v:.0}")
    } else if v >= 1.0 {
        format!("{v:.1}")
    } else {
        format!("{v:.2e}")
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes `results.csv`, `manifest.json` and one chart per problem under
/// `dest`, returning the paths written.
pub fn emit_outputs(records: &[ResultRecord], manifest: &serde_json::Value, dest: &Path) -> Result<Vec<PathBuf>> {
    if records.is_empty() {
        return Err(Error::Empty("result records"));
    }
    let rows: Vec<SummaryRow> = records.iter().map(SummaryRow::from).collect();
    let mut written = Vec::new();
    let csv = dest.join("results.csv");
    write_file(&csv, &results_csv(&rows))?;
    written.push(csv);
    let man = dest.join("manifest.json");
    write_file(&man, &serde_json::to_string_pretty(manifest)?)?;
    written.push(man);
    written.extend(emit_charts(&rows, dest)?);
    Ok(written)
}

/// Renders `figures/<problem>.svg` for every problem present in `rows`.
pub fn emit_charts(rows: &[SummaryRow], dest: &Path) -> Result<Vec<PathBuf>> {
    let problems: BTreeSet<Problem> = rows.iter().map(|r| r.problem).collect();
    let mut written = Vec::new();
    for p in problems {
        let path = dest.join("figures").join(format!("{}.svg", p.name()));
        write_file(&path, &render_chart(rows, p))?;
        written.push(path);
    }
    Ok(written)
}

pub struct SweepOutcome {
    pub cells: Vec<ExperimentOutcome>,
}

impl SweepOutcome {
    pub fn records(&self) -> Vec<ResultRecord> {
        self.cells.iter().flat_map(|c| c.records.iter().cloned()).collect()
    }

    pub fn record(&self, method: Method, n_train: usize, shots: usize) -> Option<&ResultRecord> {
        self.cells
            .iter()
            .flat_map(|c| &c.records)
            .find(|r| r.method == method && r.n_train_structures == n_train && r.shots == shots)
    }
}

fn ids_and_stiffness<'a>(it: impl Iterator<Item = &'a crate::population::StructureSpec>) -> BTreeMap<String, f64> {
    it.map(|s| (s.id.clone(), s.base_stiffness)).collect()
}

/// Run manifest: configuration, seeds, selections and timings.
pub fn sweep_manifest(config: &SweepConfig, outcome: &SweepOutcome) -> serde_json::Value {
    let cells: Vec<serde_json::Value> = outcome
        .cells
        .iter()
        .map(|c| {
            let gp_failed: BTreeSet<&String> = c
                .records
                .iter()
                .filter(|r| r.method == Method::Gp)
                .flat_map(|r| &r.failed_structures)
                .collect();
            json!({
                "n_train_structures": c.config.n_train_structures,
                "selected_hidden": c.selected_hidden,
                "hidden_candidates": c.candidates,
                "sigma_pop": c.data.sigma_pop,
                "training_stiffness": ids_and_stiffness(c.data.train.iter().map(|t| &t.structure)),
                "validation_stiffness": ids_and_stiffness(std::iter::once(&c.data.validation.structure)),
                "pca_explained_ratios": c.data.pca.as_ref().map(|p| p.explained_ratios.clone()),
                "gp_failed_structures": gp_failed,
                "training_seconds": c.training_seconds,
                "evaluation_seconds": c.records.first().map(|r| r.wall_time),
            })
        })
        .collect();
    let test_stiffness = outcome
        .cells
        .first()
        .map(|c| ids_and_stiffness(c.data.test.iter().map(|t| &t.spec)));
    json!({
        "software": { "name": env!("CARGO_PKG_NAME"), "version": env!("CARGO_PKG_VERSION") },
        "problem": config.base.problem.name(),
        "master_seed": config.base.master_seed,
        "config_text": config.to_text(),
        "config": config,
        "error_bars": ERROR_BAR_CONVENTION,
        "sigma_pop_source": "testing-population evaluation targets, 1/N convention",
        "cells": cells,
        "testing_stiffness": test_stiffness,
    })
}

/// Runs every training-population size of a sweep and, when `dest` is
/// given, writes all result files there.
pub fn run_sweep(config: &SweepConfig, dest: Option<&Path>) -> Result<SweepOutcome> {
    config.validate()?;
    let cells = config
        .train_structure_counts
        .iter()
        .map(|&n| run_experiment(&config.cell(n)))
        .collect::<Result<Vec<_>>>()?;
    let outcome = SweepOutcome { cells };
    if let Some(dest) = dest {
        let records = outcome.records();
        emit_outputs(&records, &sweep_manifest(config, &outcome), dest)?;
        let details = json!({
            "records": records,
            "gp_fits": outcome.cells.iter().map(|c| json!({
                "n_train_structures": c.config.n_train_structures,
                "fits": c.gp_fits,
            })).collect::<Vec<_>>(),
        });
        write_file(&dest.join("results.json"), &serde_json::to_string(&details)?)?;
        for c in &outcome.cells {
            let stem = format!("{}-n{}", config.base.problem.name(), c.config.n_train_structures);
            write_checkpoint(&c.model, &dest.join("checkpoints").join(format!("{stem}.json")))?;
            if let Some(p) = &c.data.pca {
                write_file(
                    &dest.join("checkpoints").join(format!("{stem}-pca.json")),
                    &serde_json::to_string_pretty(p)?,
                )?;
            }
        }
    }
    Ok(outcome)
}

pub fn write_checkpoint(model: &crate::maml::MetaModel, path: &Path) -> Result<()> {
    write_file(path, &serde_json::to_string_pretty(model)?)
}

pub fn read_checkpoint(path: &Path) -> Result<crate::maml::MetaModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
