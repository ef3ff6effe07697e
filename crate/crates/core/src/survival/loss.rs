use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Hazards are clamped to `[HAZARD_CLAMP, 1 - HAZARD_CLAMP]` before logs.
pub const HAZARD_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivalLabel {
    /// Follow-up time in days.
    pub time: f64,
    /// True when the event was observed, false when censored.
    pub event: bool,
    pub bin: usize,
}

/// Per-bin coefficients on `log h` and `log(1 - h)`.
fn masks(n_bins: usize, bin: usize, event: bool) -> Result<(Vec<f64>, Vec<f64>)> {
    if bin >= n_bins {
        return Err(Error::Contract(format!("bin {bin} out of range for {n_bins} bins")));
    }
    let mut on_h = vec![0.0; n_bins];
    let mut on_s = vec![0.0; n_bins];
    if event {
        on_h[bin] = 1.0;
        on_s[..bin].fill(1.0);
    } else {
        on_s[..=bin].fill(1.0);
    }
    Ok((on_h, on_s))
}

/// Negative log-likelihood of the discrete-time hazard model.
///
/// Observed event in bin `t`: `-(log h_t + sum_{k<t} log(1 - h_k))`.
/// Censored in bin `t`: `-sum_{k<=t} log(1 - h_k)`.
pub fn nll_loss(g: &mut Graph<'_>, hazards: Var, bin: usize, event: bool) -> Result<Var> {
    let shape = g.shape(hazards).to_vec();
    if shape.len() != 1 {
        return Err(Error::dim("nll_loss", format!("hazards must be rank 1, got {shape:?}")));
    }
    let (on_h, on_s) = masks(shape[0], bin, event)?;
    let h = g.clamp(hazards, HAZARD_CLAMP, 1.0 - HAZARD_CLAMP);
    let log_h = g.log(h);
    let one_minus = g.affine(h, -1.0, 1.0);
    let log_s = g.log(one_minus);
    let mh = g.input(Tensor::from_vec(on_h));
    let ms = g.input(Tensor::from_vec(on_s));
    let a = g.mul(log_h, mh)?;
    let b = g.mul(log_s, ms)?;
    let total = g.add(a, b)?;
    let total = g.sum(total);
    Ok(g.scale(total, -1.0))
}

/// Value of [`nll_loss`] without recording a graph.
pub fn nll_value(hazards: &[f64], bin: usize, event: bool) -> Result<f64> {
    let (on_h, on_s) = masks(hazards.len(), bin, event)?;
    let mut total = 0.0;
    for ((&h, a), b) in hazards.iter().zip(on_h).zip(on_s) {
        let h = h.clamp(HAZARD_CLAMP, 1.0 - HAZARD_CLAMP);
        total += a * h.ln() + b * (1.0 - h).ln();
    }
    Ok(-total)
}

/// Scalar risk `-sum_k S_k`; higher means shorter expected survival.
pub fn risk_score(survival: &[f64]) -> f64 {
    -survival.iter().sum::<f64>()
}
