//! Model-ready feature tables, normalization and split plans.
//!
//! A feature row holds the 30 lagged predictors (1–3 month lags of each
//! index), the calendar month, its sine encoding, and the 3-monthly VCI
//! target at the row's own month. Rows containing any null are dropped
//! (listwise deletion). The split plan carves off a chronological test
//! holdout per county and partitions the remainder k times into seeded
//! random 70:30 train/validation splits.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::indices::{IndexKind, IndexTable};
use crate::model_space::{VariableCatalog, CATALOG_SIZE};
use crate::seed;
use crate::time::MonthStamp;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("month out of range: {0} (expected 1..=12)")]
    MonthOutOfRange(u32),
    #[error("index table spans {got} months for county {county}; need at least {needed}")]
    SpanTooShort {
        county: String,
        got: usize,
        needed: usize,
    },
    #[error("feature table is empty after listwise deletion")]
    Empty,
    #[error("column {0} is constant on the fitting rows (max == min)")]
    DegenerateColumn(String),
    #[error("holdout of {holdout} months leaves county {county} without development rows")]
    HoldoutTooLong { county: String, holdout: u32 },
    #[error("development set is empty after the holdout")]
    EmptyDev,
    #[error("needs at least {needed} partitions, got {got}")]
    TooFewPartitions { needed: u32, got: u32 },
    #[error("row set too small to split 70:30 ({0} rows)")]
    TooFewRows(usize),
}

pub const MAX_LAG: usize = 3;
/// 3-month aggregation window plus the deepest lag.
pub const MIN_SPAN_MONTHS: usize = 7;

/// One model-ready observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    /// Index into [`FeatureTable::counties`].
    pub county: usize,
    pub stamp: MonthStamp,
    /// Lagged predictors in catalog column order.
    pub predictors: Vec<f64>,
    /// Calendar month 1–12 of the target.
    pub month: u8,
    pub month_sine: f64,
    /// VCI3M at the row's month, in [0, 100].
    pub target: f64,
}

/// Immutable table of complete feature rows, ordered by (county, month).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTable {
    pub counties: Vec<String>,
    /// Predictor column names, parallel to `FeatureRow::predictors`.
    pub predictor_names: Vec<String>,
    pub rows: Vec<FeatureRow>,
}

/// Addressable columns of a feature table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColumnId {
    Predictor(usize),
    MonthSine,
    Target,
}

impl FeatureTable {
    pub fn column_name(&self, column: ColumnId) -> &str {
        match column {
            ColumnId::Predictor(i) => &self.predictor_names[i],
            ColumnId::MonthSine => "month_sine",
            ColumnId::Target => "target",
        }
    }

    pub fn value(&self, row: &FeatureRow, column: ColumnId) -> f64 {
        match column {
            ColumnId::Predictor(i) => row.predictors[i],
            ColumnId::MonthSine => row.month_sine,
            ColumnId::Target => row.target,
        }
    }
}

/// Seasonality encoding: a single sine wave over the calendar year,
/// anchored so January maps to 0.
pub fn encode_month_sine(month: u32) -> Result<f64, FeatureError> {
    if !(1..=12).contains(&month) {
        return Err(FeatureError::MonthOutOfRange(month));
    }
    Ok((std::f64::consts::TAU * (month as f64 - 1.0) / 12.0).sin())
}

/// Build the feature table from an index table: 30 lagged predictor
/// columns, month, month sine, and the VCI3M target. Rows with any null
/// are dropped.
pub fn build_feature_table(indices: &IndexTable) -> Result<FeatureTable, FeatureError> {
    let catalog = VariableCatalog::default();
    for (name, county) in indices.counties.iter().zip(&indices.per_county) {
        if county.rows.len() < MIN_SPAN_MONTHS {
            return Err(FeatureError::SpanTooShort {
                county: name.clone(),
                got: county.rows.len(),
                needed: MIN_SPAN_MONTHS,
            });
        }
    }

    let mut rows = Vec::new();
    for (c, county) in indices.per_county.iter().enumerate() {
        for t in MAX_LAG..county.rows.len() {
            let stamp = county.start.plus(t as i64);
            let target = match indices.value(c, t, IndexKind::Vci3M) {
                Some(v) => v,
                None => continue,
            };
            let mut predictors = Vec::with_capacity(CATALOG_SIZE);
            let mut complete = true;
            for entry in &catalog.entries {
                match indices.value(c, t - entry.lag as usize, entry.base) {
                    Some(v) => predictors.push(v),
                    None => {
                        complete = false;
                        break;
                    }
                }
            }
            if !complete {
                continue;
            }
            rows.push(FeatureRow {
                county: c,
                stamp,
                predictors,
                month: stamp.month,
                month_sine: encode_month_sine(stamp.month as u32)?,
                target,
            });
        }
    }
    if rows.is_empty() {
        return Err(FeatureError::Empty);
    }
    Ok(FeatureTable {
        counties: indices.counties.clone(),
        predictor_names: catalog.entries.iter().map(|e| e.name.clone()).collect(),
        rows,
    })
}

/// Per-column (min, max) fitted on a training view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub columns: Vec<ColumnRange>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnRange {
    pub column: ColumnId,
    pub name: String,
    pub min: f64,
    pub max: f64,
}

impl ColumnRange {
    /// Map into [0, 1]; out-of-range inputs clamp to the boundary.
    pub fn normalize(&self, x: f64) -> f64 {
        ((x - self.min) / (self.max - self.min)).clamp(0.0, 1.0)
    }

    pub fn denormalize(&self, x: f64) -> f64 {
        self.min + x * (self.max - self.min)
    }
}

impl NormParams {
    pub fn for_column(&self, column: ColumnId) -> Option<&ColumnRange> {
        self.columns.iter().find(|c| c.column == column)
    }
}

/// Fit min-max parameters on exactly the given rows. Taking the training
/// view as an index slice is what keeps validation and test rows out of
/// the fitted ranges.
pub fn minmax_fit(
    table: &FeatureTable,
    train_rows: &[usize],
    columns: &[ColumnId],
) -> Result<NormParams, FeatureError> {
    let mut out = Vec::with_capacity(columns.len());
    for &column in columns {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for &r in train_rows {
            let v = table.value(&table.rows[r], column);
            min = min.min(v);
            max = max.max(v);
        }
        let name = table.column_name(column).to_string();
        if !(max > min) {
            return Err(FeatureError::DegenerateColumn(name));
        }
        out.push(ColumnRange {
            column,
            name,
            min,
            max,
        });
    }
    Ok(NormParams { columns: out })
}

/// Normalized design rows for the given row indices, one value per fitted
/// column, in `params.columns` order.
pub fn minmax_apply(params: &NormParams, table: &FeatureTable, rows: &[usize]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|&r| {
            params
                .columns
                .iter()
                .map(|c| c.normalize(table.value(&table.rows[r], c.column)))
                .collect()
        })
        .collect()
}

/// One random 70:30 division of the development rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Chronological test holdout plus k seeded random train/validation
/// partitions of the remaining development rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub holdout_months: u32,
    pub k: u32,
    pub seed: u64,
    pub test: Vec<usize>,
    pub dev: Vec<usize>,
    pub partitions: Vec<Partition>,
}

/// Build the split plan: the last `holdout_months` months of each county's
/// feature rows form the test set; the rest is shuffled into k random
/// 70:30 partitions. Partition i draws its own sub-seed from (seed, i).
pub fn make_split_plan(
    table: &FeatureTable,
    holdout_months: u32,
    k: u32,
    seed_value: u64,
) -> Result<SplitPlan, FeatureError> {
    if k < 1 {
        return Err(FeatureError::TooFewPartitions { needed: 1, got: k });
    }
    let mut test = Vec::new();
    let mut dev = Vec::new();
    for (c, name) in table.counties.iter().enumerate() {
        let county_rows: Vec<usize> = (0..table.rows.len())
            .filter(|&r| table.rows[r].county == c)
            .collect();
        if county_rows.is_empty() {
            continue;
        }
        let last = county_rows
            .iter()
            .map(|&r| table.rows[r].stamp.index())
            .max()
            .unwrap();
        let first = county_rows
            .iter()
            .map(|&r| table.rows[r].stamp.index())
            .min()
            .unwrap();
        let span = last - first + 1;
        if i64::from(holdout_months) >= span {
            return Err(FeatureError::HoldoutTooLong {
                county: name.clone(),
                holdout: holdout_months,
            });
        }
        let cutoff = last - i64::from(holdout_months); // strictly-greater rows are test
        for &r in &county_rows {
            if table.rows[r].stamp.index() > cutoff {
                test.push(r);
            } else {
                dev.push(r);
            }
        }
    }
    if dev.is_empty() {
        return Err(FeatureError::EmptyDev);
    }
    if dev.len() < 4 {
        return Err(FeatureError::TooFewRows(dev.len()));
    }
    test.sort_unstable();
    dev.sort_unstable();

    let n_train = (dev.len() as f64 * 0.7).floor() as usize;
    let mut partitions = Vec::with_capacity(k as usize);
    for i in 0..k {
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed::derive(seed_value, "partition", u64::from(i)));
        let mut shuffled = dev.clone();
        shuffled.shuffle(&mut rng);
        let mut train: Vec<usize> = shuffled[..n_train].to_vec();
        let mut validation: Vec<usize> = shuffled[n_train..].to_vec();
        train.sort_unstable();
        validation.sort_unstable();
        partitions.push(Partition { train, validation });
    }

    Ok(SplitPlan {
        holdout_months,
        k,
        seed: seed_value,
        test,
        dev,
        partitions,
    })
}
