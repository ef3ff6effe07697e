//! Optimizer, per-fold training and evaluation, and the run directory.

mod adam;
mod fold;
mod run;

pub use adam::{lr_at, Adam, AdamConfig};
pub use fold::{
    evaluate, median_split, report_from_risks, train_fold, EpochHook, EvalReport, FoldMetrics, FoldOutcome, RiskRow,
    RunConfig,
};
pub use run::{
    fold_dir, format_risks, parse_risks, read_json, read_risks, run, FoldSummary, RunManifest, RunSummary,
    CHECKPOINT_FILE, CONFIG_FILE, METRICS_FILE, RISKS_FILE, SUMMARY_FILE,
};
