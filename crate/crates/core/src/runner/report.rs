//! Tabular emission of grid and sweep results.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::experiments::{ensure_dir, write_json, GridResult, GridRow};
use crate::data::write_file_atomic;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportKind {
    /// K × N matrices of seed means (and a companion of seed stddevs) per metric.
    HeatmapCsv,
    /// Per-embedding series over (N, K) with means and stddevs.
    CurveCsv,
    /// Every row as JSON.
    SummaryJson,
    /// Every row as CSV.
    RowsCsv,
}

type Metric = (&'static str, fn(&GridRow) -> f64);

impl FromStr for ReportKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "heatmap_csv" => Ok(ReportKind::HeatmapCsv),
            "curve_csv" => Ok(ReportKind::CurveCsv),
            "summary_json" => Ok(ReportKind::SummaryJson),
            "rows_csv" => Ok(ReportKind::RowsCsv),
            _ => Err(Error::Config(format!("unknown report kind {s:?}"))),
        }
    }
}

/// Mean and sample stddev (zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

type CellKey = (usize, usize);

fn group(rows: &[GridRow]) -> BTreeMap<String, BTreeMap<CellKey, Vec<&GridRow>>> {
    let mut out: BTreeMap<String, BTreeMap<CellKey, Vec<&GridRow>>> = BTreeMap::new();
    for r in rows {
        out.entry(r.embedding.clone())
            .or_default()
            .entry((r.n_way, r.k_shot))
            .or_default()
            .push(r);
    }
    out
}

fn write_text(path: &Path, text: &str) -> Result<PathBuf> {
    write_file_atomic(path, text.as_bytes())?;
    Ok(path.to_path_buf())
}

fn heatmaps(result: &GridResult, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
    let grouped = group(&result.rows);
    let single = grouped.len() == 1;
    let mut files = Vec::new();
    for (embedding, cells) in &grouped {
        let ns: BTreeSet<usize> = cells.keys().map(|(n, _)| *n).collect();
        let ks: BTreeSet<usize> = cells.keys().map(|(_, k)| *k).collect();
        let suffix = if single {
            String::new()
        } else {
            format!("_{}", embedding.replace([':', '/', '\\'], "-"))
        };
        let metrics: [Metric; 2] = [("map", |r| r.map), ("auc", |r| r.mean_auc)];
        for (name, get) in metrics {
            let mut mean_csv = String::from("k\\n");
            for n in &ns {
                write!(mean_csv, ",{n}").unwrap();
            }
            mean_csv.push('\n');
            let mut std_csv = mean_csv.clone();
            for k in &ks {
                write!(mean_csv, "{k}").unwrap();
                write!(std_csv, "{k}").unwrap();
                for n in &ns {
                    match cells.get(&(*n, *k)) {
                        Some(rows) => {
                            let values: Vec<f64> = rows.iter().map(|r| get(r)).collect();
                            let (m, s) = mean_std(&values);
                            write!(mean_csv, ",{m}").unwrap();
                            write!(std_csv, ",{s}").unwrap();
                        }
                        None => {
                            mean_csv.push(',');
                            std_csv.push(',');
                        }
                    }
                }
                mean_csv.push('\n');
                std_csv.push('\n');
            }
            files.push(write_text(&dir.join(format!("{stem}_heatmap_{name}{suffix}.csv")), &mean_csv)?);
            files.push(write_text(&dir.join(format!("{stem}_heatmap_{name}_std{suffix}.csv")), &std_csv)?);
        }
    }
    Ok(files)
}

fn curve(result: &GridResult, dir: &Path, stem: &str) -> Result<PathBuf> {
    let mut csv = String::from(
        "embedding,n_way,k_shot,seeds,map_mean,map_std,auc_mean,auc_std,corr_mean,corr_std,corr_count\n",
    );
    for (embedding, cells) in group(&result.rows) {
        for ((n, k), rows) in cells {
            let (map_m, map_s) = mean_std(&rows.iter().map(|r| r.map).collect::<Vec<_>>());
            let (auc_m, auc_s) = mean_std(&rows.iter().map(|r| r.mean_auc).collect::<Vec<_>>());
            let corr: Vec<f64> = rows.iter().filter_map(|r| r.weight_correlation).collect();
            let (corr_m, corr_s) = if corr.is_empty() {
                (String::new(), String::new())
            } else {
                let (m, s) = mean_std(&corr);
                (m.to_string(), s.to_string())
            };
            writeln!(
                csv,
                "{embedding},{n},{k},{},{map_m},{map_s},{auc_m},{auc_s},{corr_m},{corr_s},{}",
                rows.len(),
                corr.len()
            )
            .unwrap();
        }
    }
    write_text(&dir.join(format!("{stem}_curve.csv")), &csv)
}

fn rows_csv(result: &GridResult, dir: &Path, stem: &str) -> Result<PathBuf> {
    let path = dir.join(format!("{stem}_rows.csv"));
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &result.rows {
        w.serialize(r).map_err(|e| Error::Validation(format!("csv: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Validation(format!("csv: {e}")))?;
    write_file_atomic(&path, &bytes)?;
    Ok(path)
}

/// Writes the requested report for `result` into `dir`, file names prefixed by `stem`.
pub fn emit_report(result: &GridResult, kind: ReportKind, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
    if result.rows.is_empty() {
        return Err(Error::Argument("no result rows to report".into()));
    }
    ensure_dir(dir)?;
    match kind {
        ReportKind::HeatmapCsv => heatmaps(result, dir, stem),
        ReportKind::CurveCsv => Ok(vec![curve(result, dir, stem)?]),
        ReportKind::SummaryJson => {
            let path = dir.join(format!("{stem}_summary.json"));
            write_json(&path, result)?;
            Ok(vec![path])
        }
        ReportKind::RowsCsv => Ok(vec![rows_csv(result, dir, stem)?]),
    }
}
