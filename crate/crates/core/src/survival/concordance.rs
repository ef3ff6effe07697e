use crate::error::{Error, Result};

/// Pair tallies behind a concordance index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConcordanceCounts {
    pub concordant: u64,
    pub tied: u64,
    pub comparable: u64,
}

impl ConcordanceCounts {
    /// `(concordant + tied / 2) / comparable`, or `None` without pairs.
    pub fn index(&self) -> Option<f64> {
        (self.comparable > 0)
            .then(|| (2 * self.concordant + self.tied) as f64 / (2 * self.comparable) as f64)
    }
}

/// Fenwick tree over risk ranks.
struct Counter(Vec<u64>);

impl Counter {
    fn add(&mut self, rank: usize) {
        let mut i = rank + 1;
        while i < self.0.len() {
            self.0[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Entries with rank `< rank`.
    fn below(&self, rank: usize) -> u64 {
        let mut i = rank;
        let mut s = 0;
        while i > 0 {
            s += self.0[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// Pair counts in `O(n log n)`. A pair `(i, j)` is comparable when `i` had an
/// event and `t_i < t_j`; it is concordant when `risk_i > risk_j`.
pub fn c_index_counts(risks: &[f64], times: &[f64], events: &[bool]) -> Result<ConcordanceCounts> {
    let n = risks.len();
    if times.len() != n || events.len() != n {
        return Err(Error::Contract(format!(
            "lengths differ: {n} risks, {} times, {} events",
            times.len(),
            events.len()
        )));
    }
    if risks.iter().chain(times).any(|v| !v.is_finite()) {
        return Err(Error::Input("non-finite risk or time".into()));
    }
    let mut sorted_risks = risks.to_vec();
    sorted_risks.sort_by(f64::total_cmp);
    sorted_risks.dedup();
    let rank = |r: f64| sorted_risks.partition_point(|&v| v < r);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| times[b].total_cmp(&times[a]));
    let mut tree = Counter(vec![0; sorted_risks.len() + 1]);
    let mut later = 0u64;
    let mut counts = ConcordanceCounts::default();
    let mut start = 0;
    while start < n {
        let t = times[order[start]];
        let end = start + order[start..].iter().take_while(|&&i| times[i] == t).count();
        for &i in &order[start..end] {
            if events[i] {
                let r = rank(risks[i]);
                let below = tree.below(r);
                let tied = tree.below(r + 1) - below;
                counts.concordant += below;
                counts.tied += tied;
                counts.comparable += later;
            }
        }
        for &i in &order[start..end] {
            tree.add(rank(risks[i]));
        }
        later += (end - start) as u64;
        start = end;
    }
    Ok(counts)
}

/// Harrell's concordance index; undefined without comparable pairs.
pub fn c_index(risks: &[f64], times: &[f64], events: &[bool]) -> Result<f64> {
    c_index_counts(risks, times, events)?
        .index()
        .ok_or_else(|| Error::UndefinedMetric("no comparable pairs for the concordance index".into()))
}
