//! Candidate-model enumeration.
//!
//! The variable catalog holds the ten indices at three lags (30 variables).
//! Candidate models take one or two of them plus a structural seasonality
//! term, pruned by three rules: at most two variables, never two variables
//! of the same category (vegetation / precipitation), and a single lag
//! level per model. For the full catalog this collapses an astronomically
//! large unconstrained space to 102 models.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::indices::IndexKind;

#[derive(Debug, Error)]
pub enum ModelSpaceError {
    #[error("binomial sum overflows u128 for n = {0}")]
    Overflow(u32),
    #[error("unknown variable name: {0}")]
    UnknownVariable(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Category {
    Vegetation,
    Precipitation,
}

/// One lagged variable available to models.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub name: String,
    pub base: IndexKind,
    /// Lag in months, 1–3.
    pub lag: u8,
    pub category: Category,
}

impl CatalogEntry {
    fn new(base: IndexKind, lag: u8) -> Self {
        Self {
            name: format!("{}_lag{lag}", base.name()),
            base,
            lag,
            category: if base.is_vegetation() {
                Category::Vegetation
            } else {
                Category::Precipitation
            },
        }
    }

    /// Column position in the feature table (kind-major, lag-minor).
    pub fn column(&self) -> usize {
        self.base.position() * 3 + (self.lag as usize - 1)
    }
}

pub const LAGS: [u8; 3] = [1, 2, 3];
pub const CATALOG_SIZE: usize = 30;

/// The 30 lagged variables in canonical column order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableCatalog {
    pub entries: Vec<CatalogEntry>,
}

impl Default for VariableCatalog {
    fn default() -> Self {
        let entries = IndexKind::ALL
            .into_iter()
            .flat_map(|kind| LAGS.into_iter().map(move |lag| CatalogEntry::new(kind, lag)))
            .collect();
        Self { entries }
    }
}

impl VariableCatalog {
    pub fn lookup(&self, name: &str) -> Result<&CatalogEntry, ModelSpaceError> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| ModelSpaceError::UnknownVariable(name.to_string()))
    }

    /// Entries restricted to one lag level.
    pub fn at_lag(&self, lag: u8) -> impl Iterator<Item = &CatalogEntry> {
        self.entries.iter().filter(move |e| e.lag == lag)
    }
}

/// One candidate model: 1–2 predictors at a single lag level, plus the
/// seasonality term every model carries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Canonical id: predictor names joined by `+`, vegetation first.
    pub id: String,
    pub lag: u8,
    pub predictors: Vec<CatalogEntry>,
    pub seasonality: bool,
}

impl ModelSpec {
    fn single(entry: &CatalogEntry) -> Self {
        Self {
            id: entry.name.clone(),
            lag: entry.lag,
            predictors: vec![entry.clone()],
            seasonality: true,
        }
    }

    fn pair(vegetation: &CatalogEntry, precipitation: &CatalogEntry) -> Self {
        Self {
            id: format!("{}+{}", vegetation.name, precipitation.name),
            lag: vegetation.lag,
            predictors: vec![vegetation.clone(), precipitation.clone()],
            seasonality: true,
        }
    }
}

/// Σ_{r=1..n} C(n, r) = 2ⁿ − 1 in exact integer arithmetic.
pub fn unconstrained_count(n: u32) -> Result<u128, ModelSpaceError> {
    binomial_sum(n, n)
}

/// Σ_{r=1..2} C(n, r) = n + n(n−1)/2.
pub fn two_variable_count(n: u32) -> Result<u128, ModelSpaceError> {
    binomial_sum(n, 2)
}

fn binomial_sum(n: u32, max_r: u32) -> Result<u128, ModelSpaceError> {
    let mut total: u128 = 0;
    let mut coeff: u128 = 1; // C(n, 0)
    for r in 1..=max_r.min(n) {
        coeff = coeff
            .checked_mul(u128::from(n - r + 1))
            .ok_or(ModelSpaceError::Overflow(n))?
            / u128::from(r);
        total = total
            .checked_add(coeff)
            .ok_or(ModelSpaceError::Overflow(n))?;
    }
    Ok(total)
}

/// Enumerate every admissible model over the catalog, in canonical order:
/// ascending lag, then lexicographic id. For the default catalog this
/// yields 34 models per lag — 10 singles and 4×6 cross-category pairs —
/// 102 in total.
pub fn enumerate_models(catalog: &VariableCatalog) -> Vec<ModelSpec> {
    let mut specs = Vec::new();
    let mut lags: Vec<u8> = catalog.entries.iter().map(|e| e.lag).collect();
    lags.sort_unstable();
    lags.dedup();

    for lag in lags {
        let mut at_lag = Vec::new();
        for entry in catalog.at_lag(lag) {
            at_lag.push(ModelSpec::single(entry));
        }
        for veg in catalog.at_lag(lag).filter(|e| e.category == Category::Vegetation) {
            for precip in catalog
                .at_lag(lag)
                .filter(|e| e.category == Category::Precipitation)
            {
                at_lag.push(ModelSpec::pair(veg, precip));
            }
        }
        at_lag.sort_by(|a, b| a.id.cmp(&b.id));
        specs.extend(at_lag);
    }
    specs
}
