use super::{Graph, Mode, ParamId, ParamStore, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub eps: f64,
    /// Coordinates probed per parameter tensor; all of them when `None`.
    pub max_coords_per_param: Option<usize>,
    /// Selects which coordinates are probed when sampling.
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { eps: 1e-4, max_coords_per_param: None, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
}

/// Compares analytic gradients of `f` against central finite differences
/// `(f(p+eps) - f(p-eps)) / (2 eps)` on the parameters of `store`.
///
/// Relative error uses the denominator `max(|analytic|, |numeric|, 1e-8)`.
/// `f` must be deterministic; it is evaluated on eval-mode graphs so dropout
/// never fires. Parameters `f` never touches are skipped.
pub fn finite_diff_check<F>(store: &mut ParamStore, f: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_>) -> Result<Var>,
{
    let analytic: Vec<(ParamId, Vec<f64>)> = {
        let mut g = Graph::with_params(store, Mode::Eval);
        let loss = f(&mut g)?;
        let grads = g.backward(loss)?;
        grads.params().map(|(id, d)| (id, d.to_vec())).collect()
    };
    let eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::with_params(store, Mode::Eval);
        let loss = f(&mut g)?;
        g.value(loss).item()
    };

    let mut report = GradCheckReport { max_rel_error: 0.0, coords_checked: 0, worst: None };
    let mut pick = super::CounterRng::new(opts.seed);
    for (id, grad) in analytic {
        let n = grad.len();
        let coords: Vec<usize> = match opts.max_coords_per_param {
            Some(k) if k < n => {
                // partial Fisher-Yates for a deterministic sample without repeats
                let mut idx: Vec<usize> = (0..n).collect();
                for i in 0..k {
                    let j = i + (pick.next_u64() % (n - i) as u64) as usize;
                    idx.swap(i, j);
                }
                idx.truncate(k);
                idx.sort_unstable();
                idx
            }
            _ => (0..n).collect(),
        };
        for c in coords {
            let orig = store.get(id).data()[c];
            store.get_mut(id).data_mut()[c] = orig + opts.eps;
            let plus = eval(store);
            store.get_mut(id).data_mut()[c] = orig - opts.eps;
            let minus = eval(store);
            store.get_mut(id).data_mut()[c] = orig;
            let numeric = (plus? - minus?) / (2.0 * opts.eps);
            let a = grad[c];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            let rel = (a - numeric).abs() / denom;
            if !rel.is_finite() {
                return Err(Error::Contract(format!(
                    "non-finite gradient comparison at {}[{c}]",
                    store.name(id)
                )));
            }
            report.coords_checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                if rel >= report.max_rel_error {
                    report.worst = Some((store.name(id).to_string(), c));
                }
            }
        }
    }
    Ok(report)
}
