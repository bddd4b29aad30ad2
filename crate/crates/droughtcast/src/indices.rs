//! Anomaly indices and temporal aggregation.
//!
//! From a raw panel this module derives the ten predictor series used for
//! modelling: raw and anomaly-scaled vegetation measures (NDVI, VCI) at
//! dekadal, 1-month and 3-month aggregation, and rainfall measures (RFE,
//! SPI, RCI) at 1- and 3-month aggregation. Anomalies are computed against
//! a per-calendar-unit climatology over a baseline period.
//!
//! Conventions, applied uniformly:
//! * vegetation aggregates are means (a state), rainfall aggregates are
//!   sums (an accumulation);
//! * VCI and RCI are min-max anomalies scaled to [0, 100] and clamped
//!   there, so out-of-baseline extremes cannot leave the scale;
//! * SPI is the z-score of rainfall against the climatological mean and
//!   standard deviation of the aggregate being standardized.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::panel::{RawPanel, DEKADS_PER_MONTH};
use crate::time::{MonthStamp, YearRange};

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("baseline {baseline} not covered by the panel span for county {county}")]
    BaselineNotCovered { county: String, baseline: YearRange },
    #[error(
        "county {county}, calendar unit {unit}: {found} non-null baseline values (need >= 2)"
    )]
    InsufficientBaseline {
        county: String,
        unit: String,
        found: usize,
    },
    #[error("cadence mismatch: series is {series:?}, climatology is {clim:?}")]
    CadenceMismatch { series: Cadence, clim: Cadence },
    #[error("aggregation window must be 1 or 3, got {0}")]
    BadWindow(usize),
}

/// Sampling cadence of a series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cadence {
    Monthly,
    Dekadal,
}

impl Cadence {
    /// Calendar units per year: months, or (month, dekad) pairs.
    pub fn units_per_year(self) -> usize {
        match self {
            Cadence::Monthly => 12,
            Cadence::Dekadal => 36,
        }
    }
}

/// A contiguous per-county series at monthly or dekadal cadence.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesData {
    pub cadence: Cadence,
    pub counties: Vec<String>,
    pub per_county: Vec<CountyValues>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CountyValues {
    pub start: MonthStamp,
    /// Monthly cadence: one slot per month. Dekadal: three consecutive
    /// slots per month, dekad-major within the month.
    pub values: Vec<Option<f64>>,
}

impl CountyValues {
    pub fn months(&self, cadence: Cadence) -> usize {
        match cadence {
            Cadence::Monthly => self.values.len(),
            Cadence::Dekadal => self.values.len() / DEKADS_PER_MONTH,
        }
    }
}

impl SeriesData {
    /// Calendar unit of a slot: month-of-year index (0-11), or
    /// (month-of-year, dekad) index (0-35).
    fn unit_of(&self, county: &CountyValues, slot: usize) -> usize {
        match self.cadence {
            Cadence::Monthly => county.start.plus(slot as i64).month as usize - 1,
            Cadence::Dekadal => {
                let month = county.start.plus((slot / DEKADS_PER_MONTH) as i64).month as usize - 1;
                month * DEKADS_PER_MONTH + slot % DEKADS_PER_MONTH
            }
        }
    }

    fn year_of(&self, county: &CountyValues, slot: usize) -> i32 {
        match self.cadence {
            Cadence::Monthly => county.start.plus(slot as i64).year,
            Cadence::Dekadal => county.start.plus((slot / DEKADS_PER_MONTH) as i64).year,
        }
    }
}

/// Extract the dekadal NDVI series from a panel.
pub fn ndvi_series(panel: &RawPanel) -> SeriesData {
    SeriesData {
        cadence: Cadence::Dekadal,
        counties: panel.counties.clone(),
        per_county: panel
            .series
            .iter()
            .map(|s| CountyValues {
                start: s.start,
                values: s.ndvi.iter().flatten().copied().collect(),
            })
            .collect(),
    }
}

/// Extract the monthly RFE series from a panel.
pub fn rfe_series(panel: &RawPanel) -> SeriesData {
    SeriesData {
        cadence: Cadence::Monthly,
        counties: panel.counties.clone(),
        per_county: panel
            .series
            .iter()
            .map(|s| CountyValues {
                start: s.start,
                values: s.rfe.clone(),
            })
            .collect(),
    }
}

/// How a multi-slot window collapses to one value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggregateMethod {
    Mean,
    Sum,
}

/// Collapse a series onto monthly cadence over a trailing window of 1 or 3
/// months. Any null inside the window nulls the result, so incomplete
/// windows at a series head stay null.
pub fn aggregate(
    series: &SeriesData,
    window_months: usize,
    method: AggregateMethod,
) -> Result<SeriesData, IndexError> {
    if window_months != 1 && window_months != 3 {
        return Err(IndexError::BadWindow(window_months));
    }
    let slots_per_month = match series.cadence {
        Cadence::Monthly => 1,
        Cadence::Dekadal => DEKADS_PER_MONTH,
    };
    let per_county = series
        .per_county
        .iter()
        .map(|county| {
            let months = county.months(series.cadence);
            let mut values = Vec::with_capacity(months);
            for t in 0..months {
                if t + 1 < window_months {
                    values.push(None);
                    continue;
                }
                let begin = (t + 1 - window_months) * slots_per_month;
                let end = (t + 1) * slots_per_month;
                let window = &county.values[begin..end];
                if window.iter().any(Option::is_none) {
                    values.push(None);
                } else {
                    let sum: f64 = window.iter().map(|v| v.unwrap()).sum();
                    values.push(Some(match method {
                        AggregateMethod::Sum => sum,
                        AggregateMethod::Mean => sum / window.len() as f64,
                    }));
                }
            }
            CountyValues {
                start: county.start,
                values,
            }
        })
        .collect();
    Ok(SeriesData {
        cadence: Cadence::Monthly,
        counties: series.counties.clone(),
        per_county,
    })
}

/// Monthly series holding the last dekad of each month.
pub fn last_dekad_of_month(series: &SeriesData) -> SeriesData {
    assert_eq!(series.cadence, Cadence::Dekadal, "needs a dekadal series");
    SeriesData {
        cadence: Cadence::Monthly,
        counties: series.counties.clone(),
        per_county: series
            .per_county
            .iter()
            .map(|county| CountyValues {
                start: county.start,
                values: county
                    .values
                    .chunks(DEKADS_PER_MONTH)
                    .map(|month| month[DEKADS_PER_MONTH - 1])
                    .collect(),
            })
            .collect(),
    }
}

/// Per-calendar-unit statistics of a series over a baseline period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Climatology {
    pub baseline: YearRange,
    pub cadence: Cadence,
    /// `[county][calendar unit]`, units as in [`SeriesData::unit_of`].
    pub stats: Vec<Vec<UnitStats>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// Sample standard deviation (n−1 denominator).
    pub stdev: f64,
    pub n: usize,
}

fn unit_label(cadence: Cadence, unit: usize) -> String {
    match cadence {
        Cadence::Monthly => format!("month {}", unit + 1),
        Cadence::Dekadal => format!(
            "month {} dekad {}",
            unit / DEKADS_PER_MONTH + 1,
            unit % DEKADS_PER_MONTH + 1
        ),
    }
}

/// Compute a per-county climatology over the baseline years.
pub fn compute_climatology(
    series: &SeriesData,
    baseline: YearRange,
) -> Result<Climatology, IndexError> {
    let mut stats = Vec::with_capacity(series.per_county.len());
    for (name, county) in series.counties.iter().zip(&series.per_county) {
        let months = county.months(series.cadence);
        if months == 0 {
            return Err(IndexError::BaselineNotCovered {
                county: name.clone(),
                baseline,
            });
        }
        let first_year = county.start.year;
        let last_year = county.start.plus(months as i64 - 1).year;
        if baseline.start < first_year || baseline.end > last_year || baseline.is_empty() {
            return Err(IndexError::BaselineNotCovered {
                county: name.clone(),
                baseline,
            });
        }

        let n_units = series.cadence.units_per_year();
        let mut buckets: Vec<Vec<f64>> = vec![Vec::new(); n_units];
        for slot in 0..county.values.len() {
            if !baseline.contains(series.year_of(county, slot)) {
                continue;
            }
            if let Some(v) = county.values[slot] {
                buckets[series.unit_of(county, slot)].push(v);
            }
        }

        let mut county_stats = Vec::with_capacity(n_units);
        for (unit, bucket) in buckets.iter().enumerate() {
            if bucket.len() < 2 {
                return Err(IndexError::InsufficientBaseline {
                    county: name.clone(),
                    unit: unit_label(series.cadence, unit),
                    found: bucket.len(),
                });
            }
            let n = bucket.len() as f64;
            let mean = bucket.iter().sum::<f64>() / n;
            let ss: f64 = bucket.iter().map(|v| (v - mean) * (v - mean)).sum();
            county_stats.push(UnitStats {
                min: bucket.iter().copied().fold(f64::INFINITY, f64::min),
                max: bucket.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                mean,
                stdev: (ss / (n - 1.0)).sqrt(),
                n: bucket.len(),
            });
        }
        stats.push(county_stats);
    }
    Ok(Climatology {
        baseline,
        cadence: series.cadence,
        stats,
    })
}

/// Min-max anomaly on the [0, 100] scale, clamped. `None` when the
/// climatological range is degenerate.
pub fn condition_index_value(x: f64, min: f64, max: f64) -> Option<f64> {
    if max <= min {
        return None;
    }
    Some((100.0 * (x - min) / (max - min)).clamp(0.0, 100.0))
}

/// Z-score against the climatological mean/stdev. `None` when stdev is 0.
pub fn zscore_value(x: f64, mean: f64, stdev: f64) -> Option<f64> {
    if stdev <= 0.0 {
        return None;
    }
    Some((x - mean) / stdev)
}

fn apply_climatology(
    series: &SeriesData,
    clim: &Climatology,
    f: impl Fn(f64, &UnitStats) -> Option<f64>,
) -> Result<SeriesData, IndexError> {
    if series.cadence != clim.cadence {
        return Err(IndexError::CadenceMismatch {
            series: series.cadence,
            clim: clim.cadence,
        });
    }
    let per_county = series
        .per_county
        .iter()
        .enumerate()
        .map(|(c, county)| CountyValues {
            start: county.start,
            values: (0..county.values.len())
                .map(|slot| {
                    county.values[slot]
                        .and_then(|v| f(v, &clim.stats[c][series.unit_of(county, slot)]))
                })
                .collect(),
        })
        .collect();
    Ok(SeriesData {
        cadence: series.cadence,
        counties: series.counties.clone(),
        per_county,
    })
}

/// Vegetation condition index of an NDVI series at matching cadence.
pub fn compute_vci(ndvi: &SeriesData, clim: &Climatology) -> Result<SeriesData, IndexError> {
    apply_climatology(ndvi, clim, |x, s| condition_index_value(x, s.min, s.max))
}

/// Rainfall condition index; the same min-max anomaly applied to RFE.
pub fn compute_rci(rfe: &SeriesData, clim: &Climatology) -> Result<SeriesData, IndexError> {
    apply_climatology(rfe, clim, |x, s| condition_index_value(x, s.min, s.max))
}

/// Standardized precipitation index: the z-score of the RFE aggregate.
pub fn compute_spi(rfe: &SeriesData, clim: &Climatology) -> Result<SeriesData, IndexError> {
    apply_climatology(rfe, clim, |x, s| zscore_value(x, s.mean, s.stdev))
}

/// The ten predictor series, in catalog order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum IndexKind {
    NdviDekad,
    VciDekad,
    Vci1M,
    Vci3M,
    Rfe1M,
    Rfe3M,
    Spi1M,
    Spi3M,
    Rci1M,
    Rci3M,
}

pub const NUM_INDEX_KINDS: usize = 10;

impl IndexKind {
    pub const ALL: [IndexKind; NUM_INDEX_KINDS] = [
        IndexKind::NdviDekad,
        IndexKind::VciDekad,
        IndexKind::Vci1M,
        IndexKind::Vci3M,
        IndexKind::Rfe1M,
        IndexKind::Rfe3M,
        IndexKind::Spi1M,
        IndexKind::Spi3M,
        IndexKind::Rci1M,
        IndexKind::Rci3M,
    ];

    pub fn name(self) -> &'static str {
        match self {
            IndexKind::NdviDekad => "NDVIdekad",
            IndexKind::VciDekad => "VCIdekad",
            IndexKind::Vci1M => "VCI1M",
            IndexKind::Vci3M => "VCI3M",
            IndexKind::Rfe1M => "RFE1M",
            IndexKind::Rfe3M => "RFE3M",
            IndexKind::Spi1M => "SPI1M",
            IndexKind::Spi3M => "SPI3M",
            IndexKind::Rci1M => "RCI1M",
            IndexKind::Rci3M => "RCI3M",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    pub fn position(self) -> usize {
        Self::ALL.iter().position(|&k| k == self).unwrap()
    }

    pub fn is_vegetation(self) -> bool {
        matches!(
            self,
            IndexKind::NdviDekad | IndexKind::VciDekad | IndexKind::Vci1M | IndexKind::Vci3M
        )
    }
}

/// All ten predictor series on a common monthly grid, one block per county.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexTable {
    pub counties: Vec<String>,
    pub per_county: Vec<CountyIndices>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CountyIndices {
    pub start: MonthStamp,
    /// One row per month; columns in [`IndexKind::ALL`] order.
    pub rows: Vec<[Option<f64>; NUM_INDEX_KINDS]>,
}

impl IndexTable {
    pub fn value(&self, county: usize, offset: usize, kind: IndexKind) -> Option<f64> {
        self.per_county[county].rows.get(offset)?[kind.position()]
    }

    pub fn months(&self, county: usize) -> usize {
        self.per_county[county].rows.len()
    }
}

/// Derive the full predictor table from a panel.
///
/// The dekadal vegetation measures are sampled at the last dekad of each
/// month; every aggregate is computed first and then anomaly-scaled against
/// a climatology at its own aggregation level.
pub fn build_index_table(panel: &RawPanel, baseline: YearRange) -> Result<IndexTable, IndexError> {
    let ndvi_dek = ndvi_series(panel);
    let rfe_1m = rfe_series(panel);

    let clim_dek = compute_climatology(&ndvi_dek, baseline)?;
    let vci_dek = compute_vci(&ndvi_dek, &clim_dek)?;

    let ndvi_1m = aggregate(&ndvi_dek, 1, AggregateMethod::Mean)?;
    let clim_1m = compute_climatology(&ndvi_1m, baseline)?;
    let vci_1m = compute_vci(&ndvi_1m, &clim_1m)?;

    let ndvi_3m = aggregate(&ndvi_dek, 3, AggregateMethod::Mean)?;
    let clim_3m = compute_climatology(&ndvi_3m, baseline)?;
    let vci_3m = compute_vci(&ndvi_3m, &clim_3m)?;

    let rfe_3m = aggregate(&rfe_1m, 3, AggregateMethod::Sum)?;
    let clim_r1 = compute_climatology(&rfe_1m, baseline)?;
    let clim_r3 = compute_climatology(&rfe_3m, baseline)?;
    let spi_1m = compute_spi(&rfe_1m, &clim_r1)?;
    let spi_3m = compute_spi(&rfe_3m, &clim_r3)?;
    let rci_1m = compute_rci(&rfe_1m, &clim_r1)?;
    let rci_3m = compute_rci(&rfe_3m, &clim_r3)?;

    let ndvi_last = last_dekad_of_month(&ndvi_dek);
    let vci_last = last_dekad_of_month(&vci_dek);

    let columns: [&SeriesData; NUM_INDEX_KINDS] = [
        &ndvi_last, &vci_last, &vci_1m, &vci_3m, &rfe_1m, &rfe_3m, &spi_1m, &spi_3m, &rci_1m,
        &rci_3m,
    ];

    let per_county = (0..panel.counties.len())
        .map(|c| {
            let months = columns[0].per_county[c].values.len();
            let rows = (0..months)
                .map(|t| {
                    let mut row = [None; NUM_INDEX_KINDS];
                    for (slot, column) in row.iter_mut().zip(columns) {
                        *slot = column.per_county[c].values[t];
                    }
                    row
                })
                .collect();
            CountyIndices {
                start: columns[0].per_county[c].start,
                rows,
            }
        })
        .collect();

    Ok(IndexTable {
        counties: panel.counties.clone(),
        per_county,
    })
}

/// Default baseline: every covered year except the final two, but never
/// fewer than three years — the 3-month aggregates lose their first two
/// months, so a January unit only reaches two observations from the third
/// baseline year on.
pub fn default_baseline(panel: &RawPanel) -> Option<YearRange> {
    let (first, last) = panel.year_span()?;
    let end = (last - 2).max(first + 2);
    if end > last {
        return None;
    }
    Some(YearRange::new(first, end))
}
