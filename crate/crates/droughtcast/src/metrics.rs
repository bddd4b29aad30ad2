//! Evaluation machinery: regression metrics, the overfit index, drought
//! phase classification and multi-class AUROC.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("length mismatch: actual has {actual}, predicted has {predicted}")]
    LengthMismatch { actual: usize, predicted: usize },
    #[error("need at least {needed} observations, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("actual values are constant; r2/nmse/nmae are undefined")]
    ConstantActual,
    #[error("multi-class AUROC needs at least 2 distinct classes, got {0}")]
    SingleClass(usize),
}

/// The regression metric suite computed for every fitted model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub mae: f64,
    pub mse: f64,
    pub rmse: f64,
    /// Mean absolute percentage error, in percent. Rows with |actual| < 1
    /// are excluded from the mean: the target scale starts at zero and
    /// near-zero actuals make the ratio meaningless.
    pub mape: f64,
    /// MSE divided by the (population) variance of the actuals.
    pub nmse: f64,
    /// MAE divided by the mean absolute deviation of the actuals.
    pub nmae: f64,
    pub r2: f64,
}

/// Compute the full metric set for a prediction against observations.
pub fn regression_metrics(actual: &[f64], predicted: &[f64]) -> Result<MetricSet, MetricsError> {
    if actual.len() != predicted.len() {
        return Err(MetricsError::LengthMismatch {
            actual: actual.len(),
            predicted: predicted.len(),
        });
    }
    if actual.len() < 2 {
        return Err(MetricsError::TooFew {
            needed: 2,
            got: actual.len(),
        });
    }
    let n = actual.len() as f64;
    let mean = actual.iter().sum::<f64>() / n;

    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    let mut mape_sum = 0.0;
    let mut mape_n = 0usize;
    let mut ss_tot = 0.0;
    let mut mad_sum = 0.0;
    for (&y, &p) in actual.iter().zip(predicted) {
        let e = p - y;
        abs_sum += e.abs();
        sq_sum += e * e;
        if y.abs() >= 1.0 {
            mape_sum += (e / y).abs();
            mape_n += 1;
        }
        ss_tot += (y - mean) * (y - mean);
        mad_sum += (y - mean).abs();
    }
    if ss_tot == 0.0 {
        return Err(MetricsError::ConstantActual);
    }

    let mae = abs_sum / n;
    let mse = sq_sum / n;
    Ok(MetricSet {
        mae,
        mse,
        rmse: mse.sqrt(),
        mape: if mape_n > 0 {
            100.0 * mape_sum / mape_n as f64
        } else {
            0.0
        },
        nmse: mse / (ss_tot / n),
        nmae: mae / (mad_sum / n),
        r2: 1.0 - sq_sum / ss_tot,
    })
}

/// Train-minus-validation R² and the overfit verdict at the 0.03 threshold.
pub fn overfit_index(r2_train: f64, r2_valid: f64) -> (f64, bool) {
    let index = r2_train - r2_valid;
    (index, index >= 0.03)
}

/// Ordinal drought phase derived from 3-monthly VCI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PhaseClass {
    ExtremeDeficit = 1,
    SevereDeficit = 2,
    ModerateDeficit = 3,
    Normal = 4,
    AboveNormal = 5,
}

impl PhaseClass {
    pub const ALL: [PhaseClass; 5] = [
        PhaseClass::ExtremeDeficit,
        PhaseClass::SevereDeficit,
        PhaseClass::ModerateDeficit,
        PhaseClass::Normal,
        PhaseClass::AboveNormal,
    ];

    pub fn ordinal(self) -> u8 {
        self as u8
    }

    pub fn from_ordinal(ordinal: u8) -> Option<Self> {
        Self::ALL.get(ordinal.checked_sub(1)? as usize).copied()
    }

    pub fn label(self) -> &'static str {
        match self {
            PhaseClass::ExtremeDeficit => "extreme vegetation deficit",
            PhaseClass::SevereDeficit => "severe vegetation deficit",
            PhaseClass::ModerateDeficit => "moderate vegetation deficit",
            PhaseClass::Normal => "normal vegetation conditions",
            PhaseClass::AboveNormal => "above normal vegetation conditions",
        }
    }

    /// `[lower, upper)` interval of each class on the VCI3M scale; the top
    /// class closes at 100.
    pub fn bounds(self) -> (f64, f64) {
        match self {
            PhaseClass::ExtremeDeficit => (0.0, 10.0),
            PhaseClass::SevereDeficit => (10.0, 20.0),
            PhaseClass::ModerateDeficit => (20.0, 35.0),
            PhaseClass::Normal => (35.0, 50.0),
            PhaseClass::AboveNormal => (50.0, 100.0),
        }
    }
}

/// Map a VCI3M value to its drought phase. Boundaries belong to the upper
/// class; the input is clamped into [0, 100] first, keeping the mapping
/// total.
pub fn classify_phase(vci3m: f64) -> PhaseClass {
    let v = vci3m.clamp(0.0, 100.0);
    if v < 10.0 {
        PhaseClass::ExtremeDeficit
    } else if v < 20.0 {
        PhaseClass::SevereDeficit
    } else if v < 35.0 {
        PhaseClass::ModerateDeficit
    } else if v < 50.0 {
        PhaseClass::Normal
    } else {
        PhaseClass::AboveNormal
    }
}

/// 5×5 contingency counts; rows are actual classes, columns predicted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 5]; 5],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..5).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sums(&self) -> [u64; 5] {
        let mut sums = [0; 5];
        for (i, row) in self.counts.iter().enumerate() {
            sums[i] = row.iter().sum();
        }
        sums
    }

    pub fn col_sums(&self) -> [u64; 5] {
        let mut sums = [0; 5];
        for row in &self.counts {
            for (j, v) in row.iter().enumerate() {
                sums[j] += v;
            }
        }
        sums
    }
}

pub fn confusion_and_accuracy(
    actual: &[PhaseClass],
    predicted: &[PhaseClass],
) -> Result<(ConfusionMatrix, f64), MetricsError> {
    if actual.len() != predicted.len() {
        return Err(MetricsError::LengthMismatch {
            actual: actual.len(),
            predicted: predicted.len(),
        });
    }
    if actual.is_empty() {
        return Err(MetricsError::TooFew { needed: 1, got: 0 });
    }
    let mut counts = [[0u64; 5]; 5];
    for (&a, &p) in actual.iter().zip(predicted) {
        counts[a.ordinal() as usize - 1][p.ordinal() as usize - 1] += 1;
    }
    let matrix = ConfusionMatrix { counts };
    let accuracy = matrix.trace() as f64 / matrix.total() as f64;
    Ok((matrix, accuracy))
}

/// Per-row pseudo-probabilities over the five phases (non-negative, sum 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores(pub [f64; 5]);

impl ClassScores {
    pub fn score(&self, class: PhaseClass) -> f64 {
        self.0[class.ordinal() as usize - 1]
    }
}

/// Bridge from a scalar VCI3M prediction to per-class scores, via a
/// triangular kernel centred on each phase interval and normalized onto the
/// simplex. The argmax always agrees with [`classify_phase`] at interval
/// centres.
pub fn class_scores_from_prediction(predicted_vci: f64) -> ClassScores {
    let v = predicted_vci.clamp(0.0, 100.0);
    let mut raw = [0.0f64; 5];
    for (slot, class) in raw.iter_mut().zip(PhaseClass::ALL) {
        let (lo, hi) = class.bounds();
        let centre = 0.5 * (lo + hi);
        let width = hi - lo;
        *slot = (1.0 - (v - centre).abs() / width).max(0.0);
    }
    let sum: f64 = raw.iter().sum();
    if sum <= 0.0 {
        // Unreachable after the clamp: the kernels cover [0, 100]. Kept as
        // a total fallback.
        let mut out = [0.0; 5];
        out[classify_phase(v).ordinal() as usize - 1] = 1.0;
        return ClassScores(out);
    }
    for slot in &mut raw {
        *slot /= sum;
    }
    ClassScores(raw)
}

/// Average ranks (1-based) with ties sharing the mean of their positions.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("NaN score"));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j + 2) as f64 / 2.0; // mean of 1-based positions i+1..=j+1
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// P(random class-`pos` row outranks a random class-`neg` row) under the
/// class-`pos` score column, ties counted half. Mann–Whitney via rank sums.
fn pairwise_separability(
    scores: &[ClassScores],
    actual: &[PhaseClass],
    pos: PhaseClass,
    neg: PhaseClass,
) -> f64 {
    let mut column = Vec::new();
    let mut is_pos = Vec::new();
    for (s, &a) in scores.iter().zip(actual) {
        if a == pos || a == neg {
            column.push(s.score(pos));
            is_pos.push(a == pos);
        }
    }
    let ranks = average_ranks(&column);
    let n_pos = is_pos.iter().filter(|&&p| p).count() as f64;
    let n_neg = is_pos.len() as f64 - n_pos;
    let rank_sum: f64 = ranks
        .iter()
        .zip(&is_pos)
        .filter(|(_, &p)| p)
        .map(|(r, _)| r)
        .sum();
    (rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg)
}

/// Multi-class AUROC: the unweighted mean over unordered class pairs of the
/// symmetrized pairwise separability. Only classes present in `actual`
/// enter the average.
pub fn hand_till_auroc(
    scores: &[ClassScores],
    actual: &[PhaseClass],
) -> Result<f64, MetricsError> {
    if scores.len() != actual.len() {
        return Err(MetricsError::LengthMismatch {
            actual: actual.len(),
            predicted: scores.len(),
        });
    }
    let mut present: Vec<PhaseClass> = PhaseClass::ALL
        .into_iter()
        .filter(|c| actual.contains(c))
        .collect();
    present.dedup();
    let c = present.len();
    if c < 2 {
        return Err(MetricsError::SingleClass(c));
    }
    let mut sum = 0.0;
    for i in 0..c {
        for j in (i + 1)..c {
            let a_ij = pairwise_separability(scores, actual, present[i], present[j]);
            let a_ji = pairwise_separability(scores, actual, present[j], present[i]);
            sum += 0.5 * (a_ij + a_ji);
        }
    }
    Ok(2.0 * sum / (c as f64 * (c as f64 - 1.0)))
}
