use serde::Serialize;

use crate::error::{Error, Result};

/// Product-limit survival estimate at each distinct observed event time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KmCurve {
    pub times: Vec<f64>,
    pub survival: Vec<f64>,
    pub at_risk: Vec<usize>,
    pub events: Vec<usize>,
}

impl KmCurve {
    /// Step-function value at `t` (1 before the first event).
    pub fn survival_at(&self, t: f64) -> f64 {
        match self.times.partition_point(|&x| x <= t) {
            0 => 1.0,
            k => self.survival[k - 1],
        }
    }
}

fn check(times: &[f64], events: &[bool]) -> Result<()> {
    if times.len() != events.len() {
        return Err(Error::Contract(format!("{} times but {} event flags", times.len(), events.len())));
    }
    if times.is_empty() {
        return Err(Error::Input("empty cohort".into()));
    }
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::Input("non-finite time".into()));
    }
    Ok(())
}

/// Distinct event times in ascending order.
fn event_times(times: &[f64], events: &[bool]) -> Vec<f64> {
    let mut ts: Vec<f64> = times.iter().zip(events).filter(|(_, &e)| e).map(|(&t, _)| t).collect();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    ts
}

/// `(at risk, events)` at `t`; subjects censored at `t` still count as at risk.
fn tally(times: &[f64], events: &[bool], t: f64) -> (usize, usize) {
    let mut n = 0;
    let mut d = 0;
    for (&ti, &ei) in times.iter().zip(events) {
        if ti >= t {
            n += 1;
            if ti == t && ei {
                d += 1;
            }
        }
    }
    (n, d)
}

pub fn km_curve(times: &[f64], events: &[bool]) -> Result<KmCurve> {
    check(times, events)?;
    let mut curve = KmCurve { times: Vec::new(), survival: Vec::new(), at_risk: Vec::new(), events: Vec::new() };
    let mut s = 1.0;
    for t in event_times(times, events) {
        let (n, d) = tally(times, events, t);
        s *= 1.0 - d as f64 / n as f64;
        curve.times.push(t);
        curve.survival.push(s);
        curve.at_risk.push(n);
        curve.events.push(d);
    }
    Ok(curve)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogRank {
    pub chi2: f64,
    /// Upper tail of chi-square with one degree of freedom.
    pub p: f64,
}

/// Two-group log-rank test with the hypergeometric variance.
pub fn logrank(times_a: &[f64], events_a: &[bool], times_b: &[f64], events_b: &[bool]) -> Result<LogRank> {
    check(times_a, events_a)?;
    check(times_b, events_b)?;
    let pooled_t: Vec<f64> = times_a.iter().chain(times_b).copied().collect();
    let pooled_e: Vec<bool> = events_a.iter().chain(events_b).copied().collect();
    let (mut observed, mut expected, mut var) = (0.0, 0.0, 0.0);
    let distinct = event_times(&pooled_t, &pooled_e);
    if distinct.is_empty() {
        return Err(Error::UndefinedMetric("log-rank test with no events".into()));
    }
    for t in distinct {
        let (na, da) = tally(times_a, events_a, t);
        let (n, d) = tally(&pooled_t, &pooled_e, t);
        let (na, da, n, d) = (na as f64, da as f64, n as f64, d as f64);
        observed += da;
        expected += d * na / n;
        if n > 1.0 {
            var += d * (na / n) * (1.0 - na / n) * (n - d) / (n - 1.0);
        }
    }
    if !(var > 0.0) {
        return Err(Error::UndefinedMetric("log-rank variance is zero".into()));
    }
    let chi2 = (observed - expected).powi(2) / var;
    Ok(LogRank { chi2, p: chi2_sf_1df(chi2) })
}

/// `P(X > x)` for `X ~ chi-square(1)`.
pub fn chi2_sf_1df(x: f64) -> f64 {
    libm::erfc((x / 2.0).sqrt())
}
