use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::DciReport;

/// One evaluated training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    /// Model family label, e.g. `beta-VAE`.
    pub model: String,
    pub gated: bool,
    pub seed: u64,
    pub report: DciReport,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self { mean, std }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub regressor: String,
    pub model: String,
    pub gated: bool,
    pub runs: usize,
    pub disentanglement: MeanStd,
    pub completeness: MeanStd,
    pub uninformativeness: MeanStd,
}

/// Groups runs by (regressor, model, gated): regressors in first-seen
/// order, then models in first-seen order, ungated before gated. A model
/// missing one of its gated/ungated groups is reported with a warning.
pub fn comparison_rows(records: &[RunRecord]) -> Vec<ComparisonRow> {
    let mut regressors: Vec<&str> = Vec::new();
    let mut models: Vec<&str> = Vec::new();
    for r in records {
        if !regressors.contains(&r.report.regressor.name()) {
            regressors.push(r.report.regressor.name());
        }
        if !models.contains(&r.model.as_str()) {
            models.push(&r.model);
        }
    }
    let mut rows = Vec::new();
    for reg in &regressors {
        for model in &models {
            for gated in [false, true] {
                let group: Vec<&DciReport> = records
                    .iter()
                    .filter(|r| r.report.regressor.name() == *reg && r.model == *model && r.gated == gated)
                    .map(|r| &r.report)
                    .collect();
                if group.is_empty() {
                    let other = records
                        .iter()
                        .any(|r| r.report.regressor.name() == *reg && r.model == *model);
                    if other {
                        log::warn!(
                            "no {} runs for {model} with {reg}; row omitted",
                            if gated { "gated" } else { "ungated" }
                        );
                    }
                    continue;
                }
                let stat = |f: fn(&DciReport) -> f64| MeanStd::of(&group.iter().map(|r| f(r)).collect::<Vec<_>>());
                rows.push(ComparisonRow {
                    regressor: reg.to_string(),
                    model: model.to_string(),
                    gated,
                    runs: group.len(),
                    disentanglement: stat(|r| r.weighted_disentanglement),
                    completeness: stat(|r| r.mean_completeness),
                    uninformativeness: stat(|r| r.mean_nrmse),
                });
            }
        }
    }
    rows
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Contract(format!("csv encoding: {e}"));
    w.write_record([
        "regressor",
        "model",
        "gated",
        "runs",
        "disent_mean",
        "disent_std",
        "complete_mean",
        "complete_std",
        "uninform_mean",
        "uninform_std",
    ])
    .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.regressor.clone(),
            r.model.clone(),
            r.gated.to_string(),
            r.runs.to_string(),
            format!("{:.6}", r.disentanglement.mean),
            format!("{:.6}", r.disentanglement.std),
            format!("{:.6}", r.completeness.mean),
            format!("{:.6}", r.completeness.std),
            format!("{:.6}", r.uninformativeness.mean),
            format!("{:.6}", r.uninformativeness.std),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Contract(format!("csv encoding: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Fixed-width text rendering with `mean ± std` cells.
pub fn comparison_text(rows: &[ComparisonRow]) -> String {
    let cell = |m: &MeanStd| format!("{:.3} ± {:.3}", m.mean, m.std);
    let header = ["Regressor", "Model", "", "Disent.", "Complete.", "(Un)Inform."];
    let body: Vec<[String; 6]> = rows
        .iter()
        .map(|r| {
            [
                r.regressor.clone(),
                r.model.clone(),
                if r.gated { "Gated".into() } else { "--".into() },
                cell(&r.disentanglement),
                cell(&r.completeness),
                cell(&r.uninformativeness),
            ]
        })
        .collect();
    let mut widths = header.map(|h| h.chars().count());
    for row in &body {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &[String]| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, &w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&mut out, &header.map(String::from));
    line(&mut out, &widths.map(|w| "-".repeat(w)));
    for row in &body {
        line(&mut out, row);
    }
    out
}

/// Writes `<stem>.csv` and `<stem>.txt`; returns the aggregated rows.
pub fn emit_comparison_table(records: &[RunRecord], stem: &Path) -> Result<Vec<ComparisonRow>> {
    if records.is_empty() {
        return Err(Error::Contract("comparison needs at least one report".into()));
    }
    let rows = comparison_rows(records);
    let csv_path = stem.with_extension("csv");
    std::fs::write(&csv_path, comparison_csv(&rows)?).map_err(|e| Error::io(&csv_path, e))?;
    let txt_path = stem.with_extension("txt");
    std::fs::write(&txt_path, comparison_text(&rows)).map_err(|e| Error::io(&txt_path, e))?;
    Ok(rows)
}

/// One CSV row per run and regressor: regressor, model, gated, seed and
/// the three headline scores.
pub fn runs_csv(records: &[RunRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Contract(format!("csv encoding: {e}"));
    w.write_record(["regressor", "model", "gated", "seed", "disent", "complete", "uninform"])
        .map_err(csv_err)?;
    for r in records {
        w.write_record([
            r.report.regressor.name().to_string(),
            r.model.clone(),
            r.gated.to_string(),
            r.seed.to_string(),
            format!("{:.6}", r.report.weighted_disentanglement),
            format!("{:.6}", r.report.mean_completeness),
            format!("{:.6}", r.report.mean_nrmse),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Contract(format!("csv encoding: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
