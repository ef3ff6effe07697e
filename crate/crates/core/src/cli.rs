//! The `xfuse` command line. Exit codes: 0 success, 1 runtime or data
//! failure, 2 usage or configuration error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::{kfold_split, synth_generate, write_dataset, Dataset, Scale, SignalMode, Slide, SynthConfig};
use crate::error::Error;
use crate::gradsuite::{run_suite, SuiteOptions};
use crate::model::{CrossFusion, ModelConfig, Variant};
use crate::report::{heatmap, heatmap_csv, heatmap_pgm, km_csv, km_svg, pooled_report, MapLayer};
use crate::tensor::OpKind;
use crate::train::{
    evaluate, fold_dir, read_json, run as run_folds, AdamConfig, FoldMetrics, RunConfig, RunManifest, CHECKPOINT_FILE,
    CONFIG_FILE, METRICS_FILE,
};

/// Head width `gradcheck` uses when `--heads` is not given.
const GRADCHECK_HEAD_WIDTH: usize = 4;

/// Environment variable that overrides every `--seed` flag.
pub const SEED_ENV: &str = "XFUSE_SEED";

#[derive(Debug, Parser)]
#[command(name = "xfuse", version, about = "Multi-scale attention fusion for survival prediction on patch-feature bags")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic cohort: bags/<id>.xfb plus manifest.tsv.
    Gen(GenArgs),
    /// Cross-validated training; writes a run directory.
    Train(TrainArgs),
    /// Re-evaluate every fold checkpoint of a run on its validation slides.
    Eval(EvalArgs),
    /// Finite-difference gradient checks on each layer type and the full model.
    Gradcheck(GradcheckArgs),
    /// Attention heatmap for one slide as CSV (x, y, score), optionally PGM.
    Heatmap(HeatmapArgs),
    /// Kaplan-Meier curves of the pooled median-split risk groups.
    Km(KmArgs),
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    n_slides: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "multi", value_parser = parse_signal)]
    signal: SignalMode,
    #[arg(long, default_value_t = 32)]
    d_in: usize,
    /// Probability that a slide draws a censoring time.
    #[arg(long, default_value_t = 0.3)]
    censor_rate: f64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 4e-6)]
    wd: f64,
    /// Warm-up epochs [default: min(5, epochs)].
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long, default_value_t = 4)]
    bins: usize,
    #[arg(long, default_value_t = 32)]
    d_model: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 0.1)]
    dropout: f64,
    #[arg(long, default_value = "full", value_parser = parse_variant)]
    variant: Variant,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Suppress per-epoch progress on stderr.
    #[arg(long)]
    quiet: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    run: PathBuf,
    /// Dataset directory [default: the one recorded in config.json].
    #[arg(long)]
    data: Option<PathBuf>,
    /// Write the per-fold reports as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 8)]
    d_model: usize,
    /// Attention heads [default: d_model / 4, i.e. head width 4].
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Negative control: corrupt the backward rule of one op kind.
    #[arg(long, hide = true, value_parser = parse_op)]
    inject_fault: Option<OpKind>,
}

#[derive(Debug, Args)]
struct HeatmapArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    fold: usize,
    #[arg(long)]
    slide: String,
    #[arg(long, value_parser = parse_layer)]
    layer: MapLayer,
    #[arg(long)]
    out: PathBuf,
    /// Also render the score grid as an 8-bit PGM.
    #[arg(long)]
    pgm: Option<PathBuf>,
    /// Dataset directory [default: the one recorded in config.json].
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct KmArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write an SVG step plot.
    #[arg(long)]
    svg: Option<PathBuf>,
}

fn parse_signal(s: &str) -> Result<SignalMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_layer(s: &str) -> Result<MapLayer, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_op(s: &str) -> Result<OpKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// A failed command: exit code plus message.
struct Failure {
    code: i32,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) => 2,
            _ => 1,
        };
        Failure { code, message: e.to_string() }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: 2, message: message.into() }
}

type CmdResult = std::result::Result<(), Failure>;

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let outcome = seed_override().and_then(|seed| match cli.command {
        Command::Gen(a) => gen(a, seed),
        Command::Train(a) => train(a, seed),
        Command::Eval(a) => eval(a),
        Command::Gradcheck(a) => gradcheck(a, seed),
        Command::Heatmap(a) => cmd_heatmap(a),
        Command::Km(a) => km(a),
    });
    match outcome {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn seed_override() -> std::result::Result<Option<u64>, Failure> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| usage(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(usage(format!("{SEED_ENV}: {e}"))),
    }
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> std::result::Result<(), Failure> {
    std::fs::write(path, bytes).map_err(|e| Failure::from(Error::io(path, e)))
}

fn gen(a: GenArgs, seed: Option<u64>) -> CmdResult {
    let mut cfg = SynthConfig::new(a.n_slides, seed.unwrap_or(a.seed));
    cfg.signal = a.signal;
    cfg.d_in = a.d_in;
    cfg.censor_rate = a.censor_rate;
    if cfg.n_slides == 0 {
        return Err(usage("--n-slides must be positive"));
    }
    let slides = synth_generate(&cfg)?;
    // an output location we cannot write to is a usage problem, not a data one
    write_dataset(&a.out, &slides).map_err(|e| match e {
        Error::Io { .. } => usage(e.to_string()),
        other => other.into(),
    })?;
    let mean = |s: Scale| slides.iter().map(|x| x.bag.scale(s).len() as f64).sum::<f64>() / slides.len() as f64;
    let events = slides.iter().filter(|s| s.event).count();
    println!(
        "wrote {} slides to {} ({} events); mean patches coarse {:.1}, source {:.1}, fine {:.1}",
        slides.len(),
        a.out.display(),
        events,
        mean(Scale::Coarse),
        mean(Scale::Source),
        mean(Scale::Fine)
    );
    Ok(())
}

fn train(a: TrainArgs, seed: Option<u64>) -> CmdResult {
    let model = ModelConfig {
        d_e: a.d_model,
        n_heads: a.heads,
        dropout: a.dropout,
        n_bins: a.bins,
        variant: a.variant,
        ..ModelConfig::new(0)
    };
    let mut cfg = RunConfig::new(model, seed.unwrap_or(a.seed));
    cfg.epochs = a.epochs;
    cfg.warmup_epochs = a.warmup.unwrap_or(a.epochs.min(5));
    cfg.folds = a.folds;
    cfg.optimizer = AdamConfig { lr: a.lr, weight_decay: a.wd, ..AdamConfig::default() };
    // catch flag errors before reading any data
    cfg.model.d_in = 1;
    cfg.validate()?;

    let data = Dataset::load(&a.data)?;
    cfg.model.d_in = data.d_in().ok_or_else(|| Failure::from(Error::Input(format!("{} lists no slides", a.data.display()))))?;
    if data.len() < cfg.folds {
        return Err(usage(format!("{} slides cannot fill {} folds", data.len(), cfg.folds)));
    }
    let quiet = a.quiet;
    let mut progress = |fold: usize, epoch: usize, loss: f64| {
        if !quiet {
            eprintln!("fold {fold} epoch {epoch} loss {loss:.5}");
        }
    };
    let summary = run_folds(&data, &cfg, &a.out, &mut progress)?;
    let mut out = std::io::stdout().lock();
    for f in &summary.folds {
        let p = f.p_value.map_or("n/a".to_string(), |p| format!("{p:.3e}"));
        let _ = writeln!(out, "fold {}: c-index {:.4}, log-rank p {p}", f.fold, f.c_index);
    }
    let _ = writeln!(out, "{} c-index {} over {} folds", summary.variant, summary.mean_std, summary.folds.len());
    Ok(())
}

fn load_manifest(run: &Path) -> std::result::Result<RunManifest, Failure> {
    Ok(read_json(&run.join(CONFIG_FILE))?)
}

fn eval(a: EvalArgs) -> CmdResult {
    let manifest = load_manifest(&a.run)?;
    let data = Dataset::load(a.data.as_ref().unwrap_or(&manifest.data_dir))?;
    let cfg = &manifest.config;
    let folds = kfold_split(data.len(), cfg.folds, cfg.seed)?;
    let mut reports = Vec::with_capacity(folds.len());
    for (k, fold) in folds.iter().enumerate() {
        let dir = fold_dir(&a.run, k);
        let model = CrossFusion::load(dir.join(CHECKPOINT_FILE))?;
        let val: Vec<&Slide> = fold.val.iter().map(|&i| &data.slides[i]).collect();
        let report = evaluate(&model, &val)?;
        let stored: FoldMetrics = read_json(&dir.join(METRICS_FILE))?;
        let p = report.logrank.map_or("n/a".to_string(), |l| format!("{:.3e}", l.p));
        let flag = if stored.c_index == report.c_index { "" } else { " (differs from metrics.json)" };
        println!("fold {k}: c-index {:.4}, log-rank p {p}{flag}", report.c_index);
        reports.push(report);
    }
    if let Some(out) = a.out {
        let mut text = serde_json::to_string_pretty(&reports).map_err(|e| Failure::from(Error::from(e)))?;
        text.push('\n');
        write_file(&out, text)?;
    }
    Ok(())
}

fn gradcheck(a: GradcheckArgs, seed: Option<u64>) -> CmdResult {
    let heads = match a.heads {
        Some(h) => h,
        None if a.d_model.is_multiple_of(GRADCHECK_HEAD_WIDTH) => a.d_model / GRADCHECK_HEAD_WIDTH,
        None => {
            return Err(usage(format!(
                "--d-model {} does not split into heads of width {GRADCHECK_HEAD_WIDTH}; pass --heads",
                a.d_model
            )))
        }
    };
    let mut opts = SuiteOptions::new(a.d_model, heads, seed.unwrap_or(a.seed));
    opts.fault = a.inject_fault;
    let checks = run_suite(&opts)?;
    println!("{:<20} {:>12} {:>8}  status", "component", "max_rel_err", "coords");
    for c in &checks {
        println!(
            "{:<20} {:>12.3e} {:>8}  {}",
            c.name,
            c.max_rel_error,
            c.coords_checked,
            if c.passed() { "ok" } else { "FAIL" }
        );
    }
    let failed: Vec<String> = checks
        .iter()
        .filter(|c| !c.passed())
        .map(|c| match &c.worst {
            Some((p, i)) => format!("{} ({p}[{i}])", c.name),
            None => c.name.clone(),
        })
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure { code: 1, message: format!("gradient check failed: {}", failed.join(", ")) })
    }
}

fn cmd_heatmap(a: HeatmapArgs) -> CmdResult {
    let manifest = load_manifest(&a.run)?;
    if a.fold >= manifest.config.folds {
        return Err(usage(format!("fold {} out of range: run has {} folds", a.fold, manifest.config.folds)));
    }
    let variant = manifest.config.model.variant;
    if matches!(a.layer, MapLayer::CabCoarse | MapLayer::CabFine) && variant == Variant::NoFc {
        return Err(usage(format!("layer {} is not part of the {variant} variant", a.layer)));
    }
    let data = Dataset::load(a.data.as_ref().unwrap_or(&manifest.data_dir))?;
    let slide = data.find(&a.slide).ok_or_else(|| usage(format!("unknown slide {:?}", a.slide)))?;
    let model = CrossFusion::load(fold_dir(&a.run, a.fold).join(CHECKPOINT_FILE))?;
    let cells = heatmap(&model, &slide.bag, a.layer)?;
    write_file(&a.out, heatmap_csv(&cells))?;
    if let Some(p) = &a.pgm {
        write_file(p, heatmap_pgm(&cells)?)?;
    }
    println!("{} scores for {} ({} layer, fold {})", cells.len(), a.slide, a.layer, a.fold);
    Ok(())
}

fn km(a: KmArgs) -> CmdResult {
    let report = pooled_report(&a.run)?;
    write_file(&a.out, km_csv(&report))?;
    if let Some(svg) = &a.svg {
        write_file(svg, km_svg(&report))?;
    }
    match report.logrank {
        Some(l) => println!("pooled {} slides: c-index {:.4}, log-rank chi2 {:.3}, p {:.3e}", report.risks.len(), report.c_index, l.chi2, l.p),
        None => println!("pooled {} slides: c-index {:.4}, log-rank undefined", report.risks.len(), report.c_index),
    }
    Ok(())
}
