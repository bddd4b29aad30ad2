//! Raw county panels: dekadal NDVI and monthly rainfall estimates.
//!
//! A [`RawPanel`] stores, per county, a contiguous monthly span where every
//! month carries exactly three dekadal NDVI slots and one rainfall (RFE)
//! slot. Gaps are explicit `None`s — a missing observation is data, not a
//! missing key. The seeded [`generate_synthetic_panel`] stands in for the
//! operational data feed in tests and benchmarks: rainfall follows a
//! 12-month seasonal cycle with AR(1) noise, and vegetation responds to
//! rainfall after a configurable delay so that short-lag predictors carry
//! real signal.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;
use crate::time::MonthStamp;

pub const DEKADS_PER_MONTH: usize = 3;

/// First calendar year emitted by the synthetic generator.
pub const SYNTHETIC_START_YEAR: i32 = 2001;

#[derive(Debug, Error)]
pub enum PanelError {
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
    #[error("county {county}: non-contiguous months around {stamp}")]
    NonContiguous { county: String, stamp: MonthStamp },
}

/// One county's contiguous slice of the panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountySeries {
    /// First month covered; months are contiguous from here.
    pub start: MonthStamp,
    /// Per month, the three dekadal NDVI values (unitless, in `[-1, 1]`).
    pub ndvi: Vec<[Option<f64>; DEKADS_PER_MONTH]>,
    /// Per month, the rainfall estimate in mm (`>= 0`).
    pub rfe: Vec<Option<f64>>,
}

impl CountySeries {
    pub fn months(&self) -> usize {
        self.rfe.len()
    }

    pub fn stamp(&self, offset: usize) -> MonthStamp {
        self.start.plus(offset as i64)
    }

    pub fn last_stamp(&self) -> MonthStamp {
        self.start.plus(self.months() as i64 - 1)
    }
}

/// Per-county time series of dekadal NDVI and monthly rainfall estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawPanel {
    pub counties: Vec<String>,
    /// Parallel to `counties`.
    pub series: Vec<CountySeries>,
}

impl RawPanel {
    pub fn county_index(&self, name: &str) -> Option<usize> {
        self.counties.iter().position(|c| c == name)
    }

    /// Total number of (county, year, month, dekad) NDVI slots.
    pub fn ndvi_slots(&self) -> usize {
        self.series.iter().map(|s| s.months() * DEKADS_PER_MONTH).sum()
    }

    /// Total number of (county, year, month) RFE slots.
    pub fn rfe_slots(&self) -> usize {
        self.series.iter().map(CountySeries::months).sum()
    }

    /// Calendar years fully or partially covered by every county.
    pub fn year_span(&self) -> Option<(i32, i32)> {
        let first = self.series.iter().map(|s| s.start.year).max()?;
        let last = self.series.iter().map(|s| s.last_stamp().year).min()?;
        Some((first, last))
    }
}

/// Configuration of the synthetic panel generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_counties: usize,
    pub n_years: usize,
    pub seed: u64,
    /// Relative amplitude of the seasonal rainfall cycle (0 = flat).
    pub seasonal_amplitude: f64,
    /// Standard deviation of the rainfall noise innovations, in mm. The
    /// vegetation noise scales from the same knob.
    pub noise_sd: f64,
    /// Months between a rainfall anomaly and the vegetation response.
    pub rainfall_to_ndvi_lag: usize,
    /// AR(1) coefficient shared by the rainfall and vegetation noise.
    pub ar_coefficient: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_counties: 4,
            n_years: 16,
            seed: 42,
            seasonal_amplitude: 0.6,
            noise_sd: 12.0,
            rainfall_to_ndvi_lag: 1,
            ar_coefficient: 0.55,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<(), PanelError> {
        if self.n_counties < 1 {
            return Err(PanelError::InvalidConfig("n_counties must be >= 1".into()));
        }
        if self.n_years < 4 {
            // climatology baseline needs at least 3 years plus an evaluation span
            return Err(PanelError::InvalidConfig("n_years must be >= 4".into()));
        }
        if !self.seasonal_amplitude.is_finite() || self.seasonal_amplitude < 0.0 {
            return Err(PanelError::InvalidConfig(
                "seasonal_amplitude must be finite and >= 0".into(),
            ));
        }
        if !self.noise_sd.is_finite() || self.noise_sd < 0.0 {
            return Err(PanelError::InvalidConfig("noise_sd must be finite and >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.ar_coefficient) {
            return Err(PanelError::InvalidConfig("ar_coefficient must be in [0, 1)".into()));
        }
        Ok(())
    }
}

// Generator constants. The vegetation response saturates with rainfall so
// NDVI stays well inside [-1, 1] for any plausible rainfall level.
const RFE_HALF_SATURATION: f64 = 60.0;
const NDVI_BASE: f64 = 0.12;
const NDVI_GAIN: f64 = 0.55;
const NDVI_NOISE_PER_MM: f64 = 0.004;
const DEKAD_STEP: f64 = 0.004;
const BURN_IN_MONTHS: usize = 36;

fn county_rain_level(idx: usize) -> f64 {
    40.0 + 10.0 * (idx % 4) as f64
}

fn county_phase(idx: usize) -> f64 {
    0.25 * idx as f64
}

fn vegetation_response(rainfall: f64) -> f64 {
    NDVI_BASE + NDVI_GAIN * rainfall / (rainfall + RFE_HALF_SATURATION)
}

/// Deterministic seeded panel with a lagged rainfall→vegetation causal link.
pub fn generate_synthetic_panel(config: &SyntheticConfig) -> Result<RawPanel, PanelError> {
    config.validate()?;
    let months = config.n_years * 12;
    let total = BURN_IN_MONTHS + months;

    let mut counties = Vec::with_capacity(config.n_counties);
    let mut series = Vec::with_capacity(config.n_counties);

    for c in 0..config.n_counties {
        let mut rain_rng =
            ChaCha8Rng::seed_from_u64(seed::derive(config.seed, "synth-rain", c as u64));
        let mut veg_rng =
            ChaCha8Rng::seed_from_u64(seed::derive(config.seed, "synth-veg", c as u64));

        let level = county_rain_level(c);
        let phase = county_phase(c);

        // Rainfall: seasonal mean plus AR(1) noise, truncated at zero.
        let mut rfe = Vec::with_capacity(total);
        let mut rain_noise = 0.0f64;
        for t in 0..total {
            let month0 = t % 12; // burn-in starts on a January
            let seasonal = level
                * (1.0
                    + config.seasonal_amplitude
                        * (std::f64::consts::TAU * month0 as f64 / 12.0 + phase).sin());
            let innovation: f64 = rain_rng.sample(StandardNormal);
            rain_noise = config.ar_coefficient * rain_noise + config.noise_sd * innovation;
            rfe.push((seasonal + rain_noise).max(0.0));
        }

        // Vegetation: saturating response to lagged rainfall plus its own
        // AR(1) noise. With noise_sd = 0 the NDVI is an exact function of
        // the lagged rainfall.
        let veg_noise_sd = config.noise_sd * NDVI_NOISE_PER_MM;
        let mut ndvi = Vec::with_capacity(total);
        let mut veg_noise = 0.0f64;
        for t in 0..total {
            let innovation: f64 = veg_rng.sample(StandardNormal);
            veg_noise = config.ar_coefficient * veg_noise + veg_noise_sd * innovation;
            let driving_rain = if t >= config.rainfall_to_ndvi_lag {
                rfe[t - config.rainfall_to_ndvi_lag]
            } else {
                rfe[0]
            };
            let monthly = vegetation_response(driving_rain) + veg_noise;
            let mut dekads = [None; DEKADS_PER_MONTH];
            for (d, slot) in dekads.iter_mut().enumerate() {
                let value = monthly + (d as f64 - 1.0) * DEKAD_STEP;
                *slot = Some(value.clamp(-1.0, 1.0));
            }
            ndvi.push(dekads);
        }

        counties.push(format!("county_{c:02}"));
        series.push(CountySeries {
            start: MonthStamp::new(SYNTHETIC_START_YEAR, 1),
            ndvi: ndvi.split_off(BURN_IN_MONTHS),
            rfe: rfe.split_off(BURN_IN_MONTHS).into_iter().map(Some).collect(),
        });
    }

    Ok(RawPanel { counties, series })
}

/// One out-of-range observation found by [`validate_panel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeViolation {
    pub county: String,
    pub stamp: MonthStamp,
    /// 1-based dekad for NDVI entries, `None` for RFE entries.
    pub dekad: Option<u8>,
    pub field: String,
    pub value: f64,
}

/// Outcome of a full panel scan; a panel is accepted iff
/// `range_violations` is empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub n_rows: usize,
    pub n_gaps: usize,
    pub range_violations: Vec<RangeViolation>,
    /// Per county: (first month, last month) covered.
    pub span_per_county: Vec<(String, MonthStamp, MonthStamp)>,
}

impl ValidationReport {
    pub fn accepted(&self) -> bool {
        self.range_violations.is_empty()
    }
}

/// Scan a panel for range violations and gaps. Reporting only; the panel is
/// never modified.
pub fn validate_panel(panel: &RawPanel) -> ValidationReport {
    let mut report = ValidationReport {
        n_rows: 0,
        n_gaps: 0,
        range_violations: Vec::new(),
        span_per_county: Vec::new(),
    };

    for (county, series) in panel.counties.iter().zip(&panel.series) {
        if series.months() > 0 {
            report
                .span_per_county
                .push((county.clone(), series.start, series.last_stamp()));
        }
        for offset in 0..series.months() {
            let stamp = series.stamp(offset);
            report.n_rows += 1;
            match series.rfe[offset] {
                None => report.n_gaps += 1,
                Some(v) if !(v >= 0.0) || !v.is_finite() => {
                    report.range_violations.push(RangeViolation {
                        county: county.clone(),
                        stamp,
                        dekad: None,
                        field: "rfe".into(),
                        value: v,
                    });
                }
                Some(_) => {}
            }
            for (d, slot) in series.ndvi[offset].iter().enumerate() {
                match slot {
                    None => report.n_gaps += 1,
                    Some(v) if !(-1.0..=1.0).contains(v) || !v.is_finite() => {
                        report.range_violations.push(RangeViolation {
                            county: county.clone(),
                            stamp,
                            dekad: Some(d as u8 + 1),
                            field: "ndvi".into(),
                            value: *v,
                        });
                    }
                    Some(_) => {}
                }
            }
        }
    }

    report
}
