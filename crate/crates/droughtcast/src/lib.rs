//! Drought early-warning modelling toolkit.
//!
//! The crate covers the full modelling chain for county-level vegetation
//! condition forecasting:
//!
//! * [`panel`] — raw dekadal NDVI / monthly rainfall panels, plus a seeded
//!   synthetic generator for testing and benchmarking.
//! * [`indices`] — climatologies and the anomaly indices (VCI, RCI, SPI)
//!   at dekadal, 1-month and 3-month aggregation.
//! * [`features`] — lagged predictor tables, seasonality encoding, min-max
//!   normalization and train/validation/test split plans.
//! * [`model_space`] — enumeration of the pruned candidate-model space.
//! * [`gam`] — penalized additive-model fits with a cyclic seasonal spline,
//!   used to screen the model space.
//! * [`ann`] — from-scratch feed-forward networks trained per partition,
//!   with champion selection.
//! * [`metrics`] — regression metrics, the overfit index, drought-phase
//!   classification and multi-class AUROC.
//!
//! All randomness is driven by explicit 64-bit seeds; re-running any stage
//! with the same inputs and seed reproduces its output exactly.

pub mod ann;
pub mod features;
pub mod gam;
pub mod indices;
pub mod linalg;
pub mod metrics;
pub mod model_space;
pub mod panel;
pub mod seed;
pub mod spline;
pub mod time;
