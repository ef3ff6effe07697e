use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{lr_at, Adam, AdamConfig};
use crate::data::{Fold, Slide};
use crate::error::{Error, Result};
use crate::model::{CrossFusion, ModelConfig};
use crate::survival::{assign_bins, c_index, km_curve, logrank, nll_loss, risk_score, BinEdges, KmCurve, LogRank};
use crate::tensor::{CounterRng, Mode};

/// Everything that controls a cross-validated training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub folds: usize,
    pub seed: u64,
    pub optimizer: AdamConfig,
    pub model: ModelConfig,
}

impl RunConfig {
    pub fn new(model: ModelConfig, seed: u64) -> Self {
        Self { epochs: 20, warmup_epochs: 5, folds: 5, seed, optimizer: AdamConfig::default(), model }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if self.warmup_epochs > self.epochs {
            return Err(Error::Config(format!(
                "warm-up of {} epochs exceeds {} epochs",
                self.warmup_epochs, self.epochs
            )));
        }
        if self.folds < 2 {
            return Err(Error::Config(format!("need at least 2 folds, got {}", self.folds)));
        }
        let o = &self.optimizer;
        if !(o.lr >= 0.0 && o.lr.is_finite()) || !(o.weight_decay >= 0.0 && o.weight_decay.is_finite()) {
            return Err(Error::Config(format!("lr {} and weight decay {} must be non-negative", o.lr, o.weight_decay)));
        }
        Ok(())
    }
}

/// Stream tags mixed into derived seeds.
const TAG_INIT: u64 = 1;
const TAG_SHUFFLE: u64 = 2;
const TAG_DROPOUT: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub bin_edges: Vec<f64>,
    /// Mean training loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub c_index: f64,
    /// Log-rank p between the median-split risk groups; absent when undefined.
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskRow {
    pub slide_id: String,
    pub risk: f64,
    pub time: f64,
    pub event: bool,
}

/// Validation summary in the Kaplan-Meier / log-rank protocol.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub risks: Vec<RiskRow>,
    pub c_index: f64,
    pub median_risk: f64,
    /// Risk above the median.
    pub high: Option<KmCurve>,
    pub low: Option<KmCurve>,
    pub logrank: Option<LogRank>,
}

#[derive(Debug)]
pub struct FoldOutcome {
    pub model: CrossFusion,
    pub edges: BinEdges,
    pub metrics: FoldMetrics,
    pub report: EvalReport,
}

/// Called after each epoch with `(fold, epoch, mean loss)`.
pub type EpochHook<'a> = dyn FnMut(usize, usize, f64) + 'a;

/// Trains one fold from scratch and evaluates it on the validation slides.
pub fn train_fold(
    slides: &[Slide],
    fold_idx: usize,
    fold: &Fold,
    cfg: &RunConfig,
    hook: &mut EpochHook<'_>,
) -> Result<FoldOutcome> {
    cfg.validate()?;
    let train: Vec<&Slide> = fold.train.iter().map(|&i| &slides[i]).collect();
    let val: Vec<&Slide> = fold.val.iter().map(|&i| &slides[i]).collect();
    if train.is_empty() || val.is_empty() {
        return Err(Error::Config(format!("fold {fold_idx} has an empty split")));
    }
    let times: Vec<f64> = train.iter().map(|s| s.time).collect();
    let events: Vec<bool> = train.iter().map(|s| s.event).collect();
    let edges = assign_bins(&times, &events, cfg.model.n_bins)?;
    let bins: Vec<usize> = times.iter().map(|&t| edges.bin(t)).collect();

    let f = fold_idx as u64;
    let mut model = CrossFusion::new(cfg.model.clone(), CounterRng::derive(&[cfg.seed, f, TAG_INIT]))?;
    let mut opt = Adam::new(model.params(), cfg.optimizer);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, cfg.optimizer.lr, cfg.warmup_epochs);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(CounterRng::derive(&[cfg.seed, f, TAG_SHUFFLE, epoch as u64])));
        let mut total = 0.0;
        for (step, &i) in order.iter().enumerate() {
            let s = train[i];
            let seed = CounterRng::derive(&[cfg.seed, f, TAG_DROPOUT, epoch as u64, step as u64]);
            let grads = {
                let mut g = model.graph(Mode::Train).with_dropout_seed(seed);
                let out = model.forward(&mut g, &s.bag).map_err(|e| slide_context(e, &s.id))?;
                let loss = nll_loss(&mut g, out.hazards, bins[i], s.event)?;
                let value = g.value(loss).item()?;
                if !value.is_finite() {
                    return Err(Error::Divergence { epoch, slide: s.id.clone(), loss: value });
                }
                total += value;
                g.backward(loss)?
            };
            let store = model.params_mut();
            store.zero_grad();
            store.accumulate(&grads)?;
            opt.step(store, lr)?;
        }
        let mean = total / train.len() as f64;
        epoch_losses.push(mean);
        hook(fold_idx, epoch, mean);
    }

    let report = evaluate(&model, &val)?;
    let metrics = FoldMetrics {
        fold: fold_idx,
        n_train: train.len(),
        n_val: val.len(),
        bin_edges: edges.edges.clone(),
        epoch_losses,
        c_index: report.c_index,
        p_value: report.logrank.map(|l| l.p),
    };
    Ok(FoldOutcome { model, edges, metrics, report })
}

fn slide_context(e: Error, id: &str) -> Error {
    match e {
        Error::Input(msg) => Error::Input(format!("slide {id}: {msg}")),
        other => other,
    }
}

/// Median split: risks strictly above the median form the high-risk group.
pub fn median_split(risks: &[f64]) -> (f64, Vec<bool>) {
    let mut sorted = risks.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = if n % 2 == 1 { sorted[n / 2] } else { 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]) };
    (median, risks.iter().map(|&r| r > median).collect())
}

/// Risk table, concordance, and the two-group survival comparison.
pub fn report_from_risks(risks: Vec<RiskRow>) -> Result<EvalReport> {
    if risks.is_empty() {
        return Err(Error::Input("no slides to evaluate".into()));
    }
    let r: Vec<f64> = risks.iter().map(|x| x.risk).collect();
    let t: Vec<f64> = risks.iter().map(|x| x.time).collect();
    let e: Vec<bool> = risks.iter().map(|x| x.event).collect();
    let c = c_index(&r, &t, &e)?;
    let (median, high) = median_split(&r);
    let pick = |want: bool| -> (Vec<f64>, Vec<bool>) {
        let mut ts = Vec::new();
        let mut es = Vec::new();
        for ((&ti, &ei), &h) in t.iter().zip(&e).zip(&high) {
            if h == want {
                ts.push(ti);
                es.push(ei);
            }
        }
        (ts, es)
    };
    let (th, eh) = pick(true);
    let (tl, el) = pick(false);
    let curve = |ts: &[f64], es: &[bool]| (!ts.is_empty()).then(|| km_curve(ts, es)).transpose();
    let lr = if th.is_empty() || tl.is_empty() {
        None
    } else {
        match logrank(&th, &eh, &tl, &el) {
            Ok(v) => Some(v),
            Err(Error::UndefinedMetric(_)) => None,
            Err(e) => return Err(e),
        }
    };
    Ok(EvalReport { c_index: c, median_risk: median, high: curve(&th, &eh)?, low: curve(&tl, &el)?, logrank: lr, risks })
}

/// Eval-mode risks for `slides`, then [`report_from_risks`].
pub fn evaluate(model: &CrossFusion, slides: &[&Slide]) -> Result<EvalReport> {
    let mut risks = Vec::with_capacity(slides.len());
    for s in slides {
        let out = model.predict(&s.bag).map_err(|e| slide_context(e, &s.id))?;
        risks.push(RiskRow { slide_id: s.id.clone(), risk: risk_score(&out.survival), time: s.time, event: s.event });
    }
    report_from_risks(risks)
}
