//! Discrete-time survival loss, risk scores, concordance, Kaplan-Meier and
//! log-rank statistics.

mod bins;
mod concordance;
mod km;
mod loss;

pub use bins::{assign_bins, quantile, BinEdges};
pub use concordance::{c_index, c_index_counts, ConcordanceCounts};
pub use km::{chi2_sf_1df, km_curve, logrank, KmCurve, LogRank};
pub use loss::{nll_loss, nll_value, risk_score, SurvivalLabel, HAZARD_CLAMP};
