//! Cross-validated run and its output directory:
//!
//! ```text
//! RUNDIR/
//!   config.json
//!   fold_<k>/checkpoint.xfckpt
//!   fold_<k>/metrics.json
//!   fold_<k>/risks.tsv
//!   summary.json
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::fold::{train_fold, EpochHook, FoldMetrics, RiskRow, RunConfig};
use crate::data::{kfold_split, Dataset};
use crate::error::{Error, Result};
use crate::model::Variant;

pub const CONFIG_FILE: &str = "config.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.xfckpt";
pub const METRICS_FILE: &str = "metrics.json";
pub const RISKS_FILE: &str = "risks.tsv";

pub fn fold_dir(run: &Path, fold: usize) -> PathBuf {
    run.join(format!("fold_{fold}"))
}

/// `config.json`: the run configuration plus where the data came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub data_dir: PathBuf,
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub c_index: f64,
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub variant: Variant,
    pub folds: Vec<FoldSummary>,
    pub c_index_mean: f64,
    /// Sample standard deviation across folds.
    pub c_index_std: f64,
    /// `mean +/- std` at three decimals.
    pub mean_std: String,
}

impl RunSummary {
    pub fn from_folds(variant: Variant, metrics: &[FoldMetrics]) -> Self {
        let c: Vec<f64> = metrics.iter().map(|m| m.c_index).collect();
        let mean = c.iter().sum::<f64>() / c.len() as f64;
        let std = if c.len() > 1 {
            (c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (c.len() - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self {
            variant,
            folds: metrics
                .iter()
                .map(|m| FoldSummary { fold: m.fold, c_index: m.c_index, p_value: m.p_value })
                .collect(),
            c_index_mean: mean,
            c_index_std: std,
            mean_std: format!("{mean:.3} +/- {std:.3}"),
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::in_file(path, e.into()))
}

pub fn format_risks(rows: &[RiskRow]) -> String {
    let mut s = String::from("# slide_id\trisk\ttime\tevent\n");
    for r in rows {
        let _ = writeln!(s, "{}\t{}\t{}\t{}", r.slide_id, r.risk, r.time, u8::from(r.event));
    }
    s
}

pub fn parse_risks(text: &str) -> Result<Vec<RiskRow>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let err = |detail: &str| Error::Parse { line: i + 1, detail: detail.to_string() };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(err("expected 4 tab-separated fields"));
        }
        rows.push(RiskRow {
            slide_id: f[0].to_string(),
            risk: f[1].parse().map_err(|_| err("bad risk"))?,
            time: f[2].parse().map_err(|_| err("bad time"))?,
            event: match f[3] {
                "0" => false,
                "1" => true,
                _ => return Err(err("event must be 0 or 1")),
            },
        });
    }
    Ok(rows)
}

pub fn read_risks(path: &Path) -> Result<Vec<RiskRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_risks(&text).map_err(|e| Error::in_file(path, e))
}

/// Trains every fold in order and writes the run directory.
pub fn run(data: &Dataset, cfg: &RunConfig, out: &Path, hook: &mut EpochHook<'_>) -> Result<RunSummary> {
    cfg.validate()?;
    match data.d_in() {
        Some(d) if d == cfg.model.d_in => {}
        Some(d) => {
            return Err(Error::Config(format!("data has d_in {d}, model expects {}", cfg.model.d_in)));
        }
        None => return Err(Error::Input(format!("no slides under {}", data.root.display()))),
    }
    let folds = kfold_split(data.len(), cfg.folds, cfg.seed)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let data_dir = data.root.canonicalize().unwrap_or_else(|_| data.root.clone());
    write_json(&out.join(CONFIG_FILE), &RunManifest { data_dir, config: cfg.clone() })?;
    let mut all = Vec::with_capacity(folds.len());
    for (k, fold) in folds.iter().enumerate() {
        let outcome = train_fold(&data.slides, k, fold, cfg, &mut *hook)?;
        let dir = fold_dir(out, k);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        outcome.model.save(dir.join(CHECKPOINT_FILE))?;
        write_json(&dir.join(METRICS_FILE), &outcome.metrics)?;
        let risks = dir.join(RISKS_FILE);
        std::fs::write(&risks, format_risks(&outcome.report.risks)).map_err(|e| Error::io(&risks, e))?;
        all.push(outcome.metrics);
    }
    let summary = RunSummary::from_folds(cfg.model.variant, &all);
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}
