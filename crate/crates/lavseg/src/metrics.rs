//! Confusion counts and derived segmentation metrics.
//!
//! All evaluation is micro-aggregated: confusion counts accumulate over
//! every evaluated pixel first, and the metrics derive from the pooled
//! counts. Under micro-aggregation the binary F1 score and the Dice
//! coefficient are the same quantity, and IoU = Dice / (2 - Dice); both
//! identities are asserted on every report.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pixel-level confusion counts. Mergeable by fieldwise addition.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Fieldwise sum (micro-aggregation across patches or scenes).
    pub fn merge(&self, other: &ConfusionCounts) -> ConfusionCounts {
        ConfusionCounts {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            fn_: self.fn_ + other.fn_,
            tn: self.tn + other.tn,
        }
    }
}

/// Accumulate confusion counts for one prediction/truth mask pair.
///
/// Both slices must hold 0/1 values of equal length.
pub fn accumulate(pred: &[u8], truth: &[u8]) -> Result<ConfusionCounts> {
    if pred.len() != truth.len() {
        return Err(Error::Argument(format!(
            "mask sizes differ: {} vs {}",
            pred.len(),
            truth.len()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &t) in pred.iter().zip(truth) {
        debug_assert!(p <= 1 && t <= 1);
        match (p, t) {
            (1, 1) => c.tp += 1,
            (1, 0) => c.fp += 1,
            (0, 1) => c.fn_ += 1,
            _ => c.tn += 1,
        }
    }
    Ok(c)
}

/// Metrics derived from one set of confusion counts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub combo: String,
    pub split: String,
    pub seed: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub dice: f64,
    pub iou: f64,
    pub counts: ConfusionCounts,
}

/// Context labels attached to a [`MetricsReport`].
#[derive(Debug, Clone, Default)]
pub struct ReportContext {
    pub model: String,
    pub combo: String,
    pub split: String,
    pub seed: u64,
}

/// Derive precision/recall/F1/Dice/IoU from pooled counts.
///
/// Degenerate conventions: with `tp = fp = fn = 0` (a perfect all-negative
/// match) Dice and IoU are 1.0; a 0/0 precision or recall is 0. F1 is set
/// to Dice itself, which it equals algebraically for pooled binary counts.
pub fn derive(counts: ConfusionCounts, ctx: ReportContext) -> Result<MetricsReport> {
    if counts.total() == 0 {
        return Err(Error::Argument("cannot derive metrics from all-zero counts".into()));
    }
    let (tp, fp, fn_) = (counts.tp as f64, counts.fp as f64, counts.fn_ as f64);
    let (dice, iou) = if counts.tp == 0 && counts.fp == 0 && counts.fn_ == 0 {
        (1.0, 1.0)
    } else {
        (2.0 * tp / (2.0 * tp + fp + fn_), tp / (tp + fp + fn_))
    };
    let precision = if counts.tp + counts.fp == 0 { 0.0 } else { tp / (tp + fp) };
    let recall = if counts.tp + counts.fn_ == 0 { 0.0 } else { tp / (tp + fn_) };
    Ok(MetricsReport {
        model: ctx.model,
        combo: ctx.combo,
        split: ctx.split,
        seed: ctx.seed,
        precision,
        recall,
        f1: dice,
        dice,
        iou,
        counts,
    })
}

pub const CSV_HEADER: &str = "model,combo,split,seed,precision,recall,f1,dice,iou";

/// Render reports as CSV with 4 decimal places per metric.
pub fn report_csv(reports: &[MetricsReport]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{:.4},{:.4},{:.4},{:.4},{:.4}\n",
            r.model, r.combo, r.split, r.seed, r.precision, r.recall, r.f1, r.dice, r.iou
        ));
    }
    out
}

/// JSON mirror of [`report_csv`].
pub fn report_json(reports: &[MetricsReport]) -> String {
    serde_json::to_string_pretty(reports).expect("metrics reports are always serializable")
}
