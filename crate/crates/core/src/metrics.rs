//! Robustness and utility metrics over round reports.
//!
//! Detection metrics compare the cumulative end-of-run blacklist against the
//! ground-truth malicious set; utility metrics average benign clients' test
//! accuracy per round.

use std::collections::BTreeSet;

use crate::client::ClientId;
use crate::error::{Error, Result};
use crate::server::RoundReport;

/// Blacklist-vs-truth confusion counts over all clients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConfusionCounts {
    /// Malicious clients flagged.
    pub true_positive: usize,
    /// Benign clients flagged.
    pub false_positive: usize,
    /// Benign clients passed.
    pub true_negative: usize,
    /// Malicious clients passed.
    pub false_negative: usize,
}

impl ConfusionCounts {
    /// Tallies the final blacklist against ground truth over every client id.
    pub fn from_blacklist(
        blacklist: &BTreeSet<ClientId>,
        malicious: &BTreeSet<ClientId>,
        all_clients: &BTreeSet<ClientId>,
    ) -> Self {
        let mut counts = ConfusionCounts {
            true_positive: 0,
            false_positive: 0,
            true_negative: 0,
            false_negative: 0,
        };
        for id in all_clients {
            match (malicious.contains(id), blacklist.contains(id)) {
                (true, true) => counts.true_positive += 1,
                (false, true) => counts.false_positive += 1,
                (false, false) => counts.true_negative += 1,
                (true, false) => counts.false_negative += 1,
            }
        }
        counts
    }
}

/// Detection accuracy, false positive rate, and false negative rate, each on
/// a 0–100 scale; a metric with an empty denominator is not applicable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionMetrics {
    pub dacc: Option<f64>,
    pub fpr: Option<f64>,
    pub fnr: Option<f64>,
}

pub fn detection_metrics(counts: &ConfusionCounts) -> DetectionMetrics {
    let ratio = |num: usize, den: usize| -> Option<f64> {
        (den > 0).then(|| 100.0 * num as f64 / den as f64)
    };
    let total = counts.true_positive
        + counts.true_negative
        + counts.false_positive
        + counts.false_negative;
    DetectionMetrics {
        dacc: ratio(counts.true_positive + counts.true_negative, total),
        fpr: ratio(
            counts.false_positive,
            counts.false_positive + counts.true_negative,
        ),
        fnr: ratio(
            counts.false_negative,
            counts.false_negative + counts.true_positive,
        ),
    }
}

/// Which per-client model family the utility metric reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelChoice {
    Customized,
    Personalized,
    /// Whichever family has the higher round average (not per-client maxima).
    BestOfBoth,
}

impl ModelChoice {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelChoice::Customized => "customized",
            ModelChoice::Personalized => "personalized",
            ModelChoice::BestOfBoth => "best",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "customized" => ModelChoice::Customized,
            "personalized" => ModelChoice::Personalized,
            "best" | "best_of_both" => ModelChoice::BestOfBoth,
            other => return Err(Error::config(format!("unknown model choice '{other}'"))),
        })
    }
}

/// Mean accuracy over one report's benign rows for one family. Personalized
/// rows may be absent (baseline aggregators train no personalized model).
fn round_average(
    report: &RoundReport,
    benign: &BTreeSet<ClientId>,
    personalized: bool,
) -> Option<f64> {
    let mut total = 0.0f64;
    let mut count = 0usize;
    for row in &report.rows {
        if !benign.contains(&row.client_id) {
            continue;
        }
        let acc = if personalized {
            match row.acc_personalized {
                Some(a) => a,
                None => return None,
            }
        } else {
            row.acc_customized
        };
        total += acc;
        count += 1;
    }
    (count > 0).then(|| total / count as f64)
}

/// Per-round mean benign test accuracy; a round with no benign rows (or a
/// missing model family) yields no value.
pub fn tacc_series(
    reports: &[RoundReport],
    benign: &BTreeSet<ClientId>,
    choice: ModelChoice,
) -> Vec<Option<f64>> {
    reports
        .iter()
        .map(|report| match choice {
            ModelChoice::Customized => round_average(report, benign, false),
            ModelChoice::Personalized => round_average(report, benign, true),
            ModelChoice::BestOfBoth => {
                let customized = round_average(report, benign, false);
                match (customized, round_average(report, benign, true)) {
                    (Some(c), Some(p)) => Some(c.max(p)),
                    (c, _) => c,
                }
            }
        })
        .collect()
}

/// Mean final-round benign test accuracy.
pub fn tacc(
    reports: &[RoundReport],
    benign: &BTreeSet<ClientId>,
    choice: ModelChoice,
) -> Result<f64> {
    if benign.is_empty() {
        return Err(Error::config("test accuracy requires benign clients"));
    }
    tacc_series(reports, benign, choice)
        .last()
        .copied()
        .flatten()
        .ok_or_else(|| Error::config("no benign rows in the final round"))
}

/// First round whose benign test accuracy reaches `target`; later dips do
/// not matter.
pub fn r2acc(series: &[Option<f64>], target: f64) -> Option<usize> {
    series
        .iter()
        .position(|v| v.map(|a| a >= target).unwrap_or(false))
}
