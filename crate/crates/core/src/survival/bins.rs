use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Interior cut points splitting follow-up time into `edges.len() + 1` bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinEdges {
    pub edges: Vec<f64>,
}

impl BinEdges {
    pub fn n_bins(&self) -> usize {
        self.edges.len() + 1
    }

    /// Number of edges `<= t`.
    pub fn bin(&self, t: f64) -> usize {
        self.edges.partition_point(|&e| e <= t)
    }
}

/// Quantile of already sorted data by linear interpolation between order
/// statistics at position `q * (n - 1)`.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Edges at the `k / n_bins` quantiles (`k = 1..n_bins`) of the uncensored
/// times.
pub fn assign_bins(times: &[f64], events: &[bool], n_bins: usize) -> Result<BinEdges> {
    if times.len() != events.len() {
        return Err(Error::Contract(format!("{} times but {} event flags", times.len(), events.len())));
    }
    if n_bins < 2 {
        return Err(Error::Config(format!("need at least 2 bins, got {n_bins}")));
    }
    let mut observed: Vec<f64> = times.iter().zip(events).filter(|(_, &e)| e).map(|(&t, _)| t).collect();
    if observed.len() < n_bins {
        return Err(Error::Config(format!(
            "{} uncensored samples cannot define {n_bins} bins",
            observed.len()
        )));
    }
    if observed.iter().any(|t| !t.is_finite()) {
        return Err(Error::Input("non-finite event time".into()));
    }
    observed.sort_by(f64::total_cmp);
    let edges = (1..n_bins).map(|k| quantile(&observed, k as f64 / n_bins as f64)).collect();
    Ok(BinEdges { edges })
}
