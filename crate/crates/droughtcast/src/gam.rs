//! Penalized additive model fits and the model-screening stage.
//!
//! The default model is `target = a + Σ β_j x_j + f(month) + ε` with the
//! predictors entering linearly and a cyclic cubic spline of the calendar
//! month capturing seasonality. In `smooth_all` mode every predictor enters
//! through its own natural cubic spline instead of a linear term (the
//! spline space contains the linear fit, so the two would be confounded).
//!
//! Smoothing parameters minimize the generalized cross-validation score
//! `GCV(λ) = n·RSS / (n − edf)²` over a log-spaced grid, ties resolved
//! towards the smoother fit; `edf` is the trace of the influence matrix.
//! Multiple smooths are optimized by coordinate descent on the same grid.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureTable, SplitPlan};
use crate::linalg::{dot, LdlFactor, LinalgError, Mat};
use crate::metrics::{self, MetricSet};
use crate::model_space::ModelSpec;
use crate::spline::{sum_to_zero_basis, SplineBasis, SplineError};

#[derive(Debug, Error)]
pub enum GamError {
    #[error("need at least {needed} training rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("design is rank deficient: {0}")]
    SingularDesign(#[from] LinalgError),
    #[error("spline construction failed: {0}")]
    Spline(#[from] SplineError),
    #[error("predictor {0} is constant on the training rows")]
    ConstantPredictor(String),
    #[error("no smoothing parameter on the grid produced a solvable system")]
    NoViableLambda,
    #[error("metrics: {0}")]
    Metrics(#[from] metrics::MetricsError),
    #[error("no models survived the screening threshold {0}")]
    NoSurvivors(f64),
}

pub const MIN_TRAIN_ROWS: usize = 30;

/// Fit options; `lambda_grid` must be ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GamOptions {
    pub smooth_all: bool,
    pub lambda_grid: Vec<f64>,
    pub month_basis_dim: usize,
    pub predictor_basis_dim: usize,
}

impl Default for GamOptions {
    fn default() -> Self {
        Self {
            smooth_all: false,
            lambda_grid: log_spaced_grid(1e-4, 1e6, 25),
            month_basis_dim: 12,
            predictor_basis_dim: 10,
        }
    }
}

/// `count` points log-uniform on `[lo, hi]`, inclusive of both ends.
pub fn log_spaced_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    assert!(count >= 2 && lo > 0.0 && hi > lo);
    let step = (hi / lo).ln() / (count - 1) as f64;
    (0..count).map(|i| lo * (step * i as f64).exp()).collect()
}

/// One fitted smooth term.
#[derive(Debug, Clone)]
pub struct SmoothTerm {
    pub name: String,
    pub basis: SplineBasis,
    /// Knot-value coefficients γ = Zδ; they sum to zero.
    pub coefficients: Vec<f64>,
    pub lambda: f64,
    pub edf: f64,
}

/// A fitted additive model.
#[derive(Debug, Clone)]
pub struct GamFit {
    pub model_id: String,
    pub intercept: f64,
    /// (feature column, name, coefficient) for linearly entering predictors.
    pub linear: Vec<(usize, String, f64)>,
    pub smooths: Vec<SmoothTerm>,
    pub edf_total: f64,
    pub gcv: f64,
    pub train_metrics: MetricSet,
}

/// Column layout of the working design matrix.
struct Design {
    x: Mat,
    y: Vec<f64>,
    /// (first column, constrained width) per smooth block.
    smooth_blocks: Vec<(usize, usize)>,
    /// Constrained penalties, one per smooth block.
    penalties: Vec<Mat>,
    /// Spline bases and Z maps for recovering γ from δ.
    smooth_meta: Vec<(String, SplineBasis, Mat)>,
    linear_columns: Vec<(usize, String)>,
}

#[derive(Debug, Clone, Copy)]
enum SmoothInput {
    Month,
    Predictor(usize),
}

fn smooth_input_value(table: &FeatureTable, row: usize, input: SmoothInput) -> f64 {
    match input {
        SmoothInput::Month => f64::from(table.rows[row].month),
        SmoothInput::Predictor(column) => table.rows[row].predictors[column],
    }
}

fn build_design(
    spec: &ModelSpec,
    table: &FeatureTable,
    rows: &[usize],
    options: &GamOptions,
) -> Result<Design, GamError> {
    let n = rows.len();
    let predictor_columns: Vec<(usize, String)> = spec
        .predictors
        .iter()
        .map(|p| (p.column(), p.name.clone()))
        .collect();

    // Decide the column plan.
    let mut smooth_specs: Vec<(String, SplineBasis, SmoothInput)> = Vec::new();
    if options.smooth_all {
        for (column, name) in &predictor_columns {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for &r in rows {
                let v = table.rows[r].predictors[*column];
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if !(hi > lo) {
                return Err(GamError::ConstantPredictor(name.clone()));
            }
            smooth_specs.push((
                name.clone(),
                SplineBasis::natural(lo, hi, options.predictor_basis_dim)?,
                SmoothInput::Predictor(*column),
            ));
        }
    }
    smooth_specs.push((
        "month".to_string(),
        SplineBasis::cyclic(1.0, 12.0, options.month_basis_dim)?,
        SmoothInput::Month,
    ));

    let linear_columns: Vec<(usize, String)> = if options.smooth_all {
        Vec::new()
    } else {
        predictor_columns
    };

    let p = 1
        + linear_columns.len()
        + smooth_specs.iter().map(|(_, b, _)| b.k() - 1).sum::<usize>();
    let mut x = Mat::zeros(n, p);
    let mut y = Vec::with_capacity(n);
    for (i, &r) in rows.iter().enumerate() {
        x[(i, 0)] = 1.0;
        for (j, (column, _)) in linear_columns.iter().enumerate() {
            x[(i, 1 + j)] = table.rows[r].predictors[*column];
        }
        y.push(table.rows[r].target);
    }

    let mut smooth_blocks = Vec::new();
    let mut penalties = Vec::new();
    let mut smooth_meta = Vec::new();
    let mut col = 1 + linear_columns.len();
    for (name, basis, input) in smooth_specs {
        let k = basis.k();
        let z = sum_to_zero_basis(k);
        // Constrained design block: rows of the basis times Z.
        for (i, &r) in rows.iter().enumerate() {
            let row = basis.basis_row(smooth_input_value(table, r, input));
            for j in 0..k - 1 {
                let mut acc = 0.0;
                for (value, &b) in row.iter().enumerate() {
                    acc += b * z[(value, j)];
                }
                x[(i, col + j)] = acc;
            }
        }
        // Constrained penalty Zᵀ S Z.
        let sz = basis.penalty.matmul(&z);
        let zsz = z.transpose_matmul(&sz);
        smooth_blocks.push((col, k - 1));
        penalties.push(zsz);
        smooth_meta.push((name, basis, z));
        col += k - 1;
    }

    Ok(Design {
        x,
        y,
        smooth_blocks,
        penalties,
        smooth_meta,
        linear_columns,
    })
}

/// Cached cross-products for fast per-λ refits.
struct NormalEquations {
    xtx: Mat,
    xty: Vec<f64>,
    yty: f64,
    n: usize,
}

impl NormalEquations {
    fn new(design: &Design) -> Self {
        let xtx = design.x.transpose_matmul(&design.x);
        let p = design.x.cols;
        let mut xty = vec![0.0; p];
        for (i, &yi) in design.y.iter().enumerate() {
            for (j, v) in design.x.row(i).iter().enumerate() {
                xty[j] += v * yi;
            }
        }
        Self {
            xtx,
            xty,
            yty: dot(&design.y, &design.y),
            n: design.y.len(),
        }
    }

    fn penalized(&self, design: &Design, lambdas: &[f64]) -> Mat {
        let mut a = self.xtx.clone();
        for ((&(start, width), penalty), &lambda) in design
            .smooth_blocks
            .iter()
            .zip(&design.penalties)
            .zip(lambdas)
        {
            for r in 0..width {
                for c in 0..width {
                    a[(start + r, start + c)] += lambda * penalty[(r, c)];
                }
            }
        }
        a
    }
}

struct LambdaEval {
    beta: Vec<f64>,
    gcv: f64,
    edf_total: f64,
    /// Per-smooth-block effective degrees of freedom.
    edf_blocks: Vec<f64>,
}

fn evaluate_lambdas(
    design: &Design,
    cache: &NormalEquations,
    lambdas: &[f64],
) -> Result<LambdaEval, GamError> {
    let a = cache.penalized(design, lambdas);
    let factor = LdlFactor::new(&a)?;
    let beta = factor.solve(&cache.xty);

    // RSS via the cached cross-products; clamp small negative round-off.
    let xtx_beta = cache.xtx.matvec(&beta);
    let rss = (cache.yty - 2.0 * dot(&beta, &cache.xty) + dot(&beta, &xtx_beta)).max(0.0);

    // edf = tr(A⁻¹ XᵀX), accumulated per column so smooth blocks can be
    // reported separately.
    let inv_xtx = factor.solve_mat(&cache.xtx);
    let p = cache.xtx.rows;
    let mut edf_total = 0.0;
    let mut per_column = vec![0.0; p];
    for j in 0..p {
        per_column[j] = inv_xtx[(j, j)];
        edf_total += per_column[j];
    }
    let edf_blocks = design
        .smooth_blocks
        .iter()
        .map(|&(start, width)| per_column[start..start + width].iter().sum())
        .collect();

    let n = cache.n as f64;
    let denominator = n - edf_total;
    let gcv = if denominator <= 1.0 {
        f64::INFINITY
    } else {
        n * rss / (denominator * denominator)
    };
    Ok(LambdaEval {
        beta,
        gcv,
        edf_total,
        edf_blocks,
    })
}

/// Grid scan for one smooth while the others stay fixed. Ties prefer the
/// larger (smoother) λ because the grid is scanned in ascending order with
/// a non-strict comparison.
fn scan_block(
    design: &Design,
    cache: &NormalEquations,
    lambdas: &mut [f64],
    block: usize,
    grid: &[f64],
) -> Result<(), GamError> {
    let mut best: Option<(f64, f64)> = None; // (gcv, lambda)
    let mut last_error = None;
    for &candidate in grid {
        lambdas[block] = candidate;
        match evaluate_lambdas(design, cache, lambdas) {
            Ok(eval) => {
                if best.map_or(true, |(gcv, _)| eval.gcv <= gcv) {
                    best = Some((eval.gcv, candidate));
                }
            }
            Err(e) => last_error = Some(e),
        }
    }
    match best {
        Some((_, lambda)) => {
            lambdas[block] = lambda;
            Ok(())
        }
        None => Err(last_error.unwrap_or(GamError::NoViableLambda)),
    }
}

/// Fit one additive model on the given training rows.
pub fn fit_gam(
    spec: &ModelSpec,
    table: &FeatureTable,
    rows: &[usize],
    options: &GamOptions,
) -> Result<GamFit, GamError> {
    if rows.len() < MIN_TRAIN_ROWS {
        return Err(GamError::TooFewRows {
            needed: MIN_TRAIN_ROWS,
            got: rows.len(),
        });
    }
    let design = build_design(spec, table, rows, options)?;
    let cache = NormalEquations::new(&design);
    let blocks = design.smooth_blocks.len();

    // Smoothing selection: single smooth → plain grid scan; several →
    // coordinate descent from the smooth end of the grid.
    let grid = &options.lambda_grid;
    let mut lambdas = vec![*grid.last().expect("non-empty grid"); blocks];
    if blocks == 1 {
        scan_block(&design, &cache, &mut lambdas, 0, grid)?;
    } else {
        for _sweep in 0..4 {
            let before = lambdas.clone();
            for block in 0..blocks {
                scan_block(&design, &cache, &mut lambdas, block, grid)?;
            }
            if lambdas == before {
                break;
            }
        }
    }

    let eval = evaluate_lambdas(&design, &cache, &lambdas)?;

    // Residual-based training metrics at the selected fit.
    let fitted: Vec<f64> = (0..design.y.len())
        .map(|i| dot(design.x.row(i), &eval.beta))
        .collect();
    let train_metrics = metrics::regression_metrics(&design.y, &fitted)?;

    let intercept = eval.beta[0];
    let linear = design
        .linear_columns
        .iter()
        .enumerate()
        .map(|(j, (column, name))| (*column, name.clone(), eval.beta[1 + j]))
        .collect();
    let smooths = design
        .smooth_meta
        .into_iter()
        .zip(&design.smooth_blocks)
        .zip(&eval.edf_blocks)
        .zip(&lambdas)
        .map(|((((name, basis, z), &(start, width)), &edf), &lambda)| {
            let delta = &eval.beta[start..start + width];
            let mut gamma = vec![0.0; basis.k()];
            for (i, slot) in gamma.iter_mut().enumerate() {
                for (j, d) in delta.iter().enumerate() {
                    *slot += z[(i, j)] * d;
                }
            }
            SmoothTerm {
                name,
                basis,
                coefficients: gamma,
                lambda,
                edf,
            }
        })
        .collect();

    Ok(GamFit {
        model_id: spec.id.clone(),
        intercept,
        linear,
        smooths,
        edf_total: eval.edf_total,
        gcv: eval.gcv,
        train_metrics,
    })
}

/// Evaluate a fitted model on arbitrary feature rows.
pub fn predict_gam(fit: &GamFit, table: &FeatureTable, rows: &[usize]) -> Vec<f64> {
    rows.iter()
        .map(|&r| {
            let mut value = fit.intercept;
            for (column, _, beta) in &fit.linear {
                value += beta * table.rows[r].predictors[*column];
            }
            for smooth in &fit.smooths {
                let x = if smooth.name == "month" {
                    f64::from(table.rows[r].month)
                } else {
                    // Predictor smooths are keyed by name.
                    let column = table
                        .predictor_names
                        .iter()
                        .position(|n| n == &smooth.name)
                        .expect("smooth name matches a predictor column");
                    table.rows[r].predictors[column]
                };
                value += smooth.basis.evaluate(&smooth.coefficients, x);
            }
            value
        })
        .collect()
}

/// Screening-stage record for one candidate model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GamModelRecord {
    pub model_id: String,
    pub lag: u8,
    /// Metric means over the partitions that fitted successfully.
    pub train: Option<MetricSet>,
    pub validation: Option<MetricSet>,
    /// Train-minus-validation mean R²; absent when every partition failed.
    pub overfit_index: Option<f64>,
    pub overfit: bool,
    pub selected: bool,
    /// 1-based position when ordered by mean training R², best first.
    pub rank: u32,
    /// Mean effective degrees of freedom of the seasonal smooth, for
    /// diagnostics.
    pub seasonal_edf_mean: Option<f64>,
    /// (partition, message) for every failed fit.
    pub failures: Vec<(u32, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GamStageReport {
    pub threshold: f64,
    pub smooth_all: bool,
    /// Sorted by mean training R² descending.
    pub records: Vec<GamModelRecord>,
    pub selected_ids: Vec<String>,
}

impl GamStageReport {
    pub fn record(&self, model_id: &str) -> Option<&GamModelRecord> {
        self.records.iter().find(|r| r.model_id == model_id)
    }
}

pub fn mean_metric_sets(sets: &[MetricSet]) -> Option<MetricSet> {
    if sets.is_empty() {
        return None;
    }
    let n = sets.len() as f64;
    let mut acc = MetricSet {
        mae: 0.0,
        mse: 0.0,
        rmse: 0.0,
        mape: 0.0,
        nmse: 0.0,
        nmae: 0.0,
        r2: 0.0,
    };
    for s in sets {
        acc.mae += s.mae;
        acc.mse += s.mse;
        acc.rmse += s.rmse;
        acc.mape += s.mape;
        acc.nmse += s.nmse;
        acc.nmae += s.nmae;
        acc.r2 += s.r2;
    }
    acc.mae /= n;
    acc.mse /= n;
    acc.rmse /= n;
    acc.mape /= n;
    acc.nmse /= n;
    acc.nmae /= n;
    acc.r2 /= n;
    Some(acc)
}

/// Selection rounds the mean training R² to two decimals first, so a model
/// sitting just under the threshold is still admitted.
fn passes_threshold(r2: f64, threshold: f64) -> bool {
    (r2 * 100.0).round() / 100.0 >= threshold - 1e-12
}

/// Run every candidate model over every partition, average the metrics and
/// select the survivors. Individual fit failures are recorded per model;
/// the stage keeps going.
pub fn run_gam_stage(
    models: &[ModelSpec],
    table: &FeatureTable,
    plan: &SplitPlan,
    threshold: f64,
    options: &GamOptions,
) -> GamStageReport {
    let mut records: Vec<GamModelRecord> = models
        .par_iter()
        .map(|spec| {
            let mut train_sets = Vec::new();
            let mut valid_sets = Vec::new();
            let mut seasonal_edfs = Vec::new();
            let mut failures = Vec::new();
            for (p, partition) in plan.partitions.iter().enumerate() {
                match fit_gam(spec, table, &partition.train, options) {
                    Ok(fit) => {
                        let evaluate = |rows: &[usize]| -> Result<MetricSet, GamError> {
                            let predictions = predict_gam(&fit, table, rows);
                            let actual: Vec<f64> =
                                rows.iter().map(|&r| table.rows[r].target).collect();
                            Ok(metrics::regression_metrics(&actual, &predictions)?)
                        };
                        match (evaluate(&partition.train), evaluate(&partition.validation)) {
                            (Ok(t), Ok(v)) => {
                                train_sets.push(t);
                                valid_sets.push(v);
                                if let Some(seasonal) =
                                    fit.smooths.iter().find(|s| s.name == "month")
                                {
                                    seasonal_edfs.push(seasonal.edf);
                                }
                            }
                            (t, v) => {
                                let message = t.err().or(v.err()).map_or_else(
                                    || "evaluation failed".to_string(),
                                    |e| e.to_string(),
                                );
                                failures.push((p as u32, message));
                            }
                        }
                    }
                    Err(e) => failures.push((p as u32, e.to_string())),
                }
            }
            let train = mean_metric_sets(&train_sets);
            let validation = mean_metric_sets(&valid_sets);
            let (overfit_index, overfit) = match (&train, &validation) {
                (Some(t), Some(v)) => {
                    let (index, flag) = metrics::overfit_index(t.r2, v.r2);
                    (Some(index), flag)
                }
                _ => (None, false),
            };
            let selected = train
                .as_ref()
                .is_some_and(|t| passes_threshold(t.r2, threshold));
            GamModelRecord {
                model_id: spec.id.clone(),
                lag: spec.lag,
                train,
                validation,
                overfit_index,
                overfit,
                selected,
                rank: 0,
                seasonal_edf_mean: if seasonal_edfs.is_empty() {
                    None
                } else {
                    Some(seasonal_edfs.iter().sum::<f64>() / seasonal_edfs.len() as f64)
                },
                failures,
            }
        })
        .collect();

    // Order by mean training R² descending; failed models sink to the
    // bottom. Model id breaks exact ties so the report is reproducible.
    records.sort_by(|a, b| {
        let ra = a.train.map_or(f64::NEG_INFINITY, |m| m.r2);
        let rb = b.train.map_or(f64::NEG_INFINITY, |m| m.r2);
        rb.partial_cmp(&ra)
            .unwrap()
            .then_with(|| a.model_id.cmp(&b.model_id))
    });
    for (i, record) in records.iter_mut().enumerate() {
        record.rank = i as u32 + 1;
    }
    let selected_ids = records
        .iter()
        .filter(|r| r.selected)
        .map(|r| r.model_id.clone())
        .collect();
    GamStageReport {
        threshold,
        smooth_all: options.smooth_all,
        records,
        selected_ids,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{FeatureRow, FeatureTable};
    use crate::model_space::VariableCatalog;
    use crate::time::MonthStamp;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// A feature table with controlled predictor columns and target.
    fn synthetic_table(
        n: usize,
        seed: u64,
        target_fn: impl Fn(&[f64; 2], u8, &mut ChaCha8Rng) -> f64,
    ) -> FeatureTable {
        let catalog = VariableCatalog::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::with_capacity(n);
        for i in 0..n {
            let month = (i % 12) as u8 + 1;
            let x = [rng.gen_range(0.0..10.0), rng.gen_range(-5.0..5.0)];
            let mut predictors = vec![0.0; 30];
            for (j, slot) in predictors.iter_mut().enumerate() {
                *slot = rng.gen_range(-1.0..1.0) * 0.01; // background noise
                if j == 3 {
                    *slot = x[0]; // VCIdekad_lag1
                }
                if j == 12 {
                    *slot = x[1]; // RFE1M_lag1
                }
            }
            let target = target_fn(&x, month, &mut rng);
            rows.push(FeatureRow {
                county: 0,
                stamp: MonthStamp::new(2001, 1).plus(i as i64),
                predictors,
                month,
                month_sine: crate::features::encode_month_sine(u32::from(month)).unwrap(),
                target,
            });
        }
        FeatureTable {
            counties: vec!["c".into()],
            predictor_names: catalog.entries.iter().map(|e| e.name.clone()).collect(),
            rows,
        }
    }

    fn single_model(name: &str) -> ModelSpec {
        let catalog = VariableCatalog::default();
        let entry = catalog.lookup(name).unwrap().clone();
        ModelSpec {
            id: entry.name.clone(),
            lag: entry.lag,
            predictors: vec![entry],
            seasonality: true,
        }
    }

    fn pair_model(a: &str, b: &str) -> ModelSpec {
        let catalog = VariableCatalog::default();
        let ea = catalog.lookup(a).unwrap().clone();
        let eb = catalog.lookup(b).unwrap().clone();
        ModelSpec {
            id: format!("{}+{}", ea.name, eb.name),
            lag: ea.lag,
            predictors: vec![ea, eb],
            seasonality: true,
        }
    }

    #[test]
    fn linear_recovery_without_seasonality() {
        // y = 2x, no noise, no month signal: slope recovered, spline edf
        // minimal with λ at the top of the grid.
        let table = synthetic_table(240, 1, |x, _m, _rng| 2.0 * x[0]);
        let spec = single_model("VCIdekad_lag1");
        let rows: Vec<usize> = (0..table.rows.len()).collect();
        let fit = fit_gam(&spec, &table, &rows, &GamOptions::default()).unwrap();
        assert!(
            (fit.linear[0].2 - 2.0).abs() < 1e-6,
            "slope {}",
            fit.linear[0].2
        );
        let seasonal = fit.smooths.iter().find(|s| s.name == "month").unwrap();
        let grid = GamOptions::default().lambda_grid;
        assert!(
            seasonal.lambda >= grid[grid.len() - 3],
            "λ not near grid max: {}",
            seasonal.lambda
        );
        assert!(seasonal.edf < 1.5, "seasonal edf {}", seasonal.edf);
    }

    #[test]
    fn lambda_limit_matches_plain_least_squares() {
        let table = synthetic_table(120, 2, |x, _m, rng| {
            1.0 + 2.0 * x[0] - 0.5 * x[1] + rng.gen_range(-0.005..0.005)
        });
        let spec = pair_model("VCIdekad_lag1", "RFE1M_lag1");
        let rows: Vec<usize> = (0..table.rows.len()).collect();
        // Degenerate grid pinned at a huge λ: the smooth must vanish and
        // the fit must coincide with ordinary least squares on
        // [1, x0, x1].
        let options = GamOptions {
            lambda_grid: vec![1e9, 1e10],
            ..GamOptions::default()
        };
        let fit = fit_gam(&spec, &table, &rows, &options).unwrap();

        // Explicit OLS oracle.
        let mut x = Mat::zeros(rows.len(), 3);
        let mut y = Vec::new();
        for (i, &r) in rows.iter().enumerate() {
            x[(i, 0)] = 1.0;
            x[(i, 1)] = table.rows[r].predictors[3];
            x[(i, 2)] = table.rows[r].predictors[12];
            y.push(table.rows[r].target);
        }
        let xtx = x.transpose_matmul(&x);
        let mut xty = vec![0.0; 3];
        for (i, &yi) in y.iter().enumerate() {
            for j in 0..3 {
                xty[j] += x[(i, j)] * yi;
            }
        }
        let beta = LdlFactor::new(&xtx).unwrap().solve(&xty);

        let fitted = predict_gam(&fit, &table, &rows);
        for (i, &r) in rows.iter().enumerate() {
            let ols = beta[0] + beta[1] * table.rows[r].predictors[3]
                + beta[2] * table.rows[r].predictors[12];
            assert!(
                (fitted[i] - ols).abs() < 1e-6,
                "row {i}: gam {} vs ols {ols}",
                fitted[i]
            );
        }
    }

    #[test]
    fn pure_seasonality_is_captured_by_the_spline() {
        // Target is a pure sinusoid of the month; predictors carry noise.
        let table = synthetic_table(360, 3, |_x, m, _rng| {
            20.0 + 10.0 * (std::f64::consts::TAU * f64::from(m - 1) / 12.0).sin()
        });
        // Overwrite the model predictors with pure noise columns.
        let spec = pair_model("VCIdekad_lag1", "RFE1M_lag1");
        let mut noisy = table.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for row in &mut noisy.rows {
            row.predictors[3] = rng.gen_range(-1.0..1.0);
            row.predictors[12] = rng.gen_range(-1.0..1.0);
        }
        let rows: Vec<usize> = (0..noisy.rows.len()).collect();
        let fit = fit_gam(&spec, &noisy, &rows, &GamOptions::default()).unwrap();
        assert!(
            fit.train_metrics.r2 > 0.99,
            "spline missed the seasonality: r2 {}",
            fit.train_metrics.r2
        );
        for (_, name, beta) in &fit.linear {
            assert!(beta.abs() < 0.05, "{name} coefficient {beta} not ~0");
        }

        // Direct least-squares oracle on a sine/cosine pair must not beat
        // the spline by any meaningful margin.
        let mut x = Mat::zeros(rows.len(), 3);
        let mut y = Vec::new();
        for (i, &r) in rows.iter().enumerate() {
            let angle = std::f64::consts::TAU * f64::from(noisy.rows[r].month - 1) / 12.0;
            x[(i, 0)] = 1.0;
            x[(i, 1)] = angle.sin();
            x[(i, 2)] = angle.cos();
            y.push(noisy.rows[r].target);
        }
        let xtx = x.transpose_matmul(&x);
        let mut xty = vec![0.0; 3];
        for (i, &yi) in y.iter().enumerate() {
            for j in 0..3 {
                xty[j] += x[(i, j)] * yi;
            }
        }
        let beta = LdlFactor::new(&xtx).unwrap().solve(&xty);
        let mut sse = 0.0;
        let mut sst = 0.0;
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        for (i, &yi) in y.iter().enumerate() {
            let fitted = beta[0] + beta[1] * x[(i, 1)] + beta[2] * x[(i, 2)];
            sse += (yi - fitted) * (yi - fitted);
            sst += (yi - mean) * (yi - mean);
        }
        let oracle_r2 = 1.0 - sse / sst;
        assert!(fit.train_metrics.r2 >= oracle_r2 - 1e-6);
    }

    #[test]
    fn duplicate_predictor_columns_are_singular() {
        let table = synthetic_table(100, 4, |x, _m, _rng| x[0]);
        let mut spec = pair_model("VCIdekad_lag1", "RFE1M_lag1");
        // Point both predictors at the same feature column.
        spec.predictors[1].name = spec.predictors[0].name.clone();
        spec.predictors[1].base = spec.predictors[0].base;
        spec.predictors[1].lag = spec.predictors[0].lag;
        let rows: Vec<usize> = (0..table.rows.len()).collect();
        let result = fit_gam(&spec, &table, &rows, &GamOptions::default());
        assert!(
            matches!(result, Err(GamError::SingularDesign(_))),
            "{result:?}"
        );
    }

    #[test]
    fn too_few_rows_is_an_error() {
        let table = synthetic_table(20, 5, |x, _m, _rng| x[0]);
        let spec = single_model("VCIdekad_lag1");
        let rows: Vec<usize> = (0..table.rows.len()).collect();
        assert!(matches!(
            fit_gam(&spec, &table, &rows, &GamOptions::default()),
            Err(GamError::TooFewRows { .. })
        ));
    }

    #[test]
    fn training_residuals_have_zero_mean() {
        let table = synthetic_table(150, 6, |x, m, rng| {
            10.0 + 3.0 * x[0] + f64::from(m) + rng.gen_range(-1.0..1.0)
        });
        let spec = single_model("VCIdekad_lag1");
        let rows: Vec<usize> = (0..table.rows.len()).collect();
        let fit = fit_gam(&spec, &table, &rows, &GamOptions::default()).unwrap();
        let fitted = predict_gam(&fit, &table, &rows);
        let mean_residual: f64 = rows
            .iter()
            .zip(&fitted)
            .map(|(&r, f)| table.rows[r].target - f)
            .sum::<f64>()
            / rows.len() as f64;
        assert!(mean_residual.abs() < 1e-9, "mean residual {mean_residual}");
        // Identical rows get identical predictions.
        let twice = predict_gam(&fit, &table, &[rows[0], rows[0]]);
        assert_eq!(twice[0].to_bits(), twice[1].to_bits());
    }

    #[test]
    fn gcv_trace_identity_matches_hat_diagonal() {
        let table = synthetic_table(80, 7, |x, m, rng| {
            5.0 + x[0] + 0.3 * f64::from(m) + rng.gen_range(-0.5..0.5)
        });
        let spec = single_model("VCIdekad_lag1");
        let rows: Vec<usize> = (0..table.rows.len()).collect();
        let options = GamOptions::default();
        let design = build_design(&spec, &table, &rows, &options).unwrap();
        let cache = NormalEquations::new(&design);
        for &lambda in &GamOptions::default().lambda_grid {
            let eval = evaluate_lambdas(&design, &cache, &[lambda]).unwrap();
            // The constrained seasonal smooth has k-1 = 11 free columns.
            assert!(
                eval.edf_blocks[0] > 0.0 && eval.edf_blocks[0] <= 11.0 + 1e-9,
                "λ={lambda}: block edf {} outside (0, k-1]",
                eval.edf_blocks[0]
            );
            // Direct hat-matrix diagonal: h_ii = x_iᵀ A⁻¹ x_i.
            let a = cache.penalized(&design, &[lambda]);
            let factor = LdlFactor::new(&a).unwrap();
            let mut edf_direct = 0.0;
            for i in 0..design.y.len() {
                let solved = factor.solve(design.x.row(i));
                edf_direct += dot(design.x.row(i), &solved);
            }
            let n = design.y.len() as f64;
            let fitted: Vec<f64> = (0..design.y.len())
                .map(|i| dot(design.x.row(i), &eval.beta))
                .collect();
            let rss: f64 = design
                .y
                .iter()
                .zip(&fitted)
                .map(|(y, f)| (y - f) * (y - f))
                .sum();
            let gcv_direct = n * rss / ((n - edf_direct) * (n - edf_direct));
            assert!(
                (eval.gcv - gcv_direct).abs() < 1e-9 * gcv_direct.max(1.0),
                "λ={lambda}: {} vs {gcv_direct}",
                eval.gcv
            );
        }
    }

    #[test]
    fn smooth_all_edf_stays_in_range() {
        let table = synthetic_table(200, 8, |x, m, rng| {
            8.0 + (x[0] - 5.0).powi(2) * 0.5
                + 4.0 * (std::f64::consts::TAU * f64::from(m - 1) / 12.0).sin()
                + rng.gen_range(-0.5..0.5)
        });
        let spec = pair_model("VCIdekad_lag1", "RFE1M_lag1");
        let rows: Vec<usize> = (0..table.rows.len()).collect();
        let options = GamOptions {
            smooth_all: true,
            ..GamOptions::default()
        };
        let fit = fit_gam(&spec, &table, &rows, &options).unwrap();
        assert_eq!(fit.smooths.len(), 3); // two predictors + month
        for smooth in &fit.smooths {
            assert!(
                smooth.edf > 0.0 && smooth.edf <= (smooth.basis.k() - 1) as f64 + 1e-9,
                "{}: edf {} outside (0, k-1]",
                smooth.name,
                smooth.edf
            );
        }
        // The quadratic response should pull real curvature into the x0
        // smooth.
        let x0 = fit.smooths.iter().find(|s| s.name == "VCIdekad_lag1").unwrap();
        assert!(x0.edf > 1.5, "x0 edf {} too small for a quadratic", x0.edf);
        assert!(fit.train_metrics.r2 > 0.9);
    }

    #[test]
    fn stage_selects_strong_models_and_ranks_deterministically() {
        let table = synthetic_table(240, 10, |x, m, rng| {
            (30.0 + 5.0 * x[0] + 2.0 * (std::f64::consts::TAU * f64::from(m - 1) / 12.0).sin()
                + rng.gen_range(-2.0..2.0))
            .clamp(0.0, 100.0)
        });
        let plan = crate::features::make_split_plan(&table, 24, 4, 11).unwrap();
        let models = vec![
            single_model("VCIdekad_lag1"),  // carries the real signal
            single_model("NDVIdekad_lag2"), // pure noise column
        ];
        let report = run_gam_stage(&models, &table, &plan, 0.7, &GamOptions::default());
        assert_eq!(report.records.len(), 2);
        assert_eq!(report.records[0].model_id, "VCIdekad_lag1");
        assert!(report.records[0].selected);
        assert!(!report.records[1].selected);
        assert_eq!(report.records[0].rank, 1);
        assert_eq!(report.selected_ids, vec!["VCIdekad_lag1".to_string()]);

        let again = run_gam_stage(&models, &table, &plan, 0.7, &GamOptions::default());
        assert_eq!(report, again);

        // An impossible threshold selects nothing.
        let strict = run_gam_stage(&models, &table, &plan, 1.01, &GamOptions::default());
        assert!(strict.selected_ids.is_empty());
    }

    #[test]
    fn threshold_rounding_admits_borderline_models() {
        assert!(passes_threshold(0.695, 0.70));
        assert!(passes_threshold(0.70, 0.70));
        assert!(!passes_threshold(0.6949, 0.70));
    }

    #[test]
    fn stage_records_per_model_failures_and_continues() {
        let table = synthetic_table(200, 12, |x, _m, rng| {
            20.0 + 4.0 * x[0] + rng.gen_range(-1.0..1.0)
        });
        let plan = crate::features::make_split_plan(&table, 24, 3, 2).unwrap();
        // Second model duplicates its own predictor column: singular on
        // every partition.
        let good = single_model("VCIdekad_lag1");
        let mut broken = pair_model("VCIdekad_lag1", "RFE1M_lag1");
        broken.predictors[1] = broken.predictors[0].clone();
        let report = run_gam_stage(
            &[good, broken],
            &table,
            &plan,
            0.5,
            &GamOptions::default(),
        );
        assert_eq!(report.records.len(), 2);
        let ok = report.record("VCIdekad_lag1").unwrap();
        assert!(ok.failures.is_empty());
        assert!(ok.train.is_some());
        let failed = &report.records[1];
        assert_eq!(failed.failures.len(), 3, "one failure per partition");
        assert!(failed.train.is_none());
        assert!(!failed.selected);
        assert!(failed
            .failures
            .iter()
            .all(|(_, message)| message.contains("rank deficient")));
    }

    #[test]
    fn fully_smoothed_out_fit_predicts_the_intercept() {
        let table = synthetic_table(120, 13, |x, _m, rng| {
            7.0 + 0.4 * x[0] + rng.gen_range(-0.2..0.2)
        });
        let spec = single_model("VCIdekad_lag1");
        let rows: Vec<usize> = (0..table.rows.len()).collect();
        // Pin λ so high that the seasonal smooth vanishes.
        let options = GamOptions {
            lambda_grid: vec![1e10, 1e11],
            ..GamOptions::default()
        };
        let fit = fit_gam(&spec, &table, &rows, &options).unwrap();
        // A probe row with a zero predictor leaves intercept + spline; the
        // spline is flat, so the prediction is the intercept.
        let mut probe = table.clone();
        probe.rows[0].predictors[3] = 0.0;
        let prediction = predict_gam(&fit, &probe, &[0])[0];
        assert!(
            (prediction - fit.intercept).abs() < 1e-6,
            "prediction {prediction} vs intercept {}",
            fit.intercept
        );
    }
}
