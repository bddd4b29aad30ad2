//! From-scratch feed-forward networks and the partition-replicated
//! training stage.
//!
//! Networks are small multilayer perceptrons (default hidden layout 5-3,
//! logistic hidden activations, identity output) trained by full-batch
//! backpropagation on the halved sum of squared errors. The default
//! optimizer is resilient backpropagation: per-parameter step sizes adapt
//! to gradient sign agreement, bounded to [1e-6, 50] with growth 1.2 and
//! shrink 0.5. Training stops when the largest gradient component falls
//! under the threshold, or at the max-step failsafe.
//!
//! The stage runs every screened model k times over the plan's random
//! partitions, normalizing inputs and target per partition on the training
//! rows only, and crowns as champion the non-overfit model with the best
//! mean validation R².

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{minmax_fit, ColumnId, FeatureTable, NormParams, SplitPlan};
use crate::gam::mean_metric_sets;
use crate::metrics::{self, MetricSet};
use crate::model_space::ModelSpec;
use crate::seed;

#[derive(Debug, Error)]
pub enum AnnError {
    #[error("invalid architecture: {0}")]
    BadArchitecture(String),
    #[error("input length {got} does not match the network input size {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("training diverged to a non-finite loss at step {step}")]
    Diverged { step: u64 },
    #[error("empty training batch")]
    EmptyBatch,
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error("no stage-eligible model: every model is overfit or failed to train")]
    NoEligibleModel,
    #[error("normalization failed: {0}")]
    Normalization(#[from] crate::features::FeatureError),
    #[error("metrics: {0}")]
    Metrics(#[from] metrics::MetricsError),
}

/// Layer sizes from input to the single output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkArch {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
}

impl NetworkArch {
    pub fn new(input: usize, hidden: Vec<usize>) -> Result<Self, AnnError> {
        if input == 0 || hidden.iter().any(|&h| h == 0) {
            return Err(AnnError::BadArchitecture(
                "all layer sizes must be >= 1".into(),
            ));
        }
        Ok(Self {
            input,
            hidden,
            output: 1,
        })
    }

    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut sizes = vec![self.input];
        sizes.extend_from_slice(&self.hidden);
        sizes.push(self.output);
        sizes.windows(2).map(|w| (w[1], w[0])).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_dims()
            .iter()
            .map(|(out, inp)| out * inp + out)
            .sum()
    }
}

/// Advisory sizing rule for the two hidden layers given N training samples
/// and m outputs. The default layout stays 5-3; this helper only reports
/// what the rule would pick.
pub fn hidden_nodes_rule(n_samples: usize, m_outputs: usize) -> (usize, usize) {
    assert!(n_samples >= 1 && m_outputs >= 1, "need N >= 1 and m >= 1");
    let n = n_samples as f64;
    let m = m_outputs as f64;
    let h1 = ((n * (m + 2.0)).sqrt() + 2.0 * (n / (m + 2.0)).sqrt()).ceil();
    let h2 = (m * (n / (m + 2.0)).sqrt()).ceil();
    (h1 as usize, h2 as usize)
}

/// One dense layer: row-major weights (output × input) plus biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub outputs: usize,
    pub inputs: usize,
    /// Row-major, `outputs × inputs`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub arch: NetworkArch,
    pub layers: Vec<Layer>,
    pub init_seed: u64,
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Network {
    /// Weights and biases i.i.d. uniform on [-0.5, 0.5] from a seeded
    /// generator.
    pub fn init(arch: &NetworkArch, init_seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
        let layers = arch
            .layer_dims()
            .into_iter()
            .map(|(outputs, inputs)| Layer {
                outputs,
                inputs,
                weights: (0..outputs * inputs)
                    .map(|_| rng.gen_range(-0.5..=0.5))
                    .collect(),
                biases: (0..outputs).map(|_| rng.gen_range(-0.5..=0.5)).collect(),
            })
            .collect();
        Self {
            arch: arch.clone(),
            layers,
            init_seed,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.arch.parameter_count()
    }

    /// Forward pass: logistic hidden layers, identity output.
    pub fn forward(&self, input: &[f64]) -> Result<f64, AnnError> {
        if input.len() != self.arch.input {
            return Err(AnnError::ShapeMismatch {
                expected: self.arch.input,
                got: input.len(),
            });
        }
        let mut activation = input.to_vec();
        let last = self.layers.len() - 1;
        for (idx, layer) in self.layers.iter().enumerate() {
            let mut next = Vec::with_capacity(layer.outputs);
            for o in 0..layer.outputs {
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                let z = layer.biases[o] + crate::linalg::dot(row, &activation);
                next.push(if idx == last { z } else { logistic(z) });
            }
            activation = next;
        }
        Ok(activation[0])
    }

    pub fn forward_batch(&self, inputs: &[Vec<f64>]) -> Result<Vec<f64>, AnnError> {
        inputs.iter().map(|row| self.forward(row)).collect()
    }

    fn flatten_len(&self) -> usize {
        self.parameter_count()
    }

    fn apply_flat_update(&mut self, f: impl Fn(usize) -> f64) {
        let mut idx = 0;
        for layer in &mut self.layers {
            for w in &mut layer.weights {
                *w += f(idx);
                idx += 1;
            }
            for b in &mut layer.biases {
                *b += f(idx);
                idx += 1;
            }
        }
    }
}

/// Preallocated buffers for the training hot loop; one per call chain, so
/// the per-row backpropagation never touches the allocator.
struct BackpropScratch {
    /// Activations per layer, input first.
    activations: Vec<Vec<f64>>,
    delta: Vec<f64>,
    next_delta: Vec<f64>,
}

impl BackpropScratch {
    fn new(net: &Network) -> Self {
        let mut sizes = vec![net.arch.input];
        sizes.extend(net.layers.iter().map(|l| l.outputs));
        let widest = sizes.iter().copied().max().unwrap_or(1);
        Self {
            activations: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            delta: vec![0.0; widest],
            next_delta: vec![0.0; widest],
        }
    }
}

/// Accumulate one row's gradient contribution into `grad`; returns the
/// row's loss contribution ½(ŷ − y)².
fn accumulate_row_gradient(
    net: &Network,
    input: &[f64],
    target: f64,
    scratch: &mut BackpropScratch,
    grad: &mut [f64],
) -> Result<f64, AnnError> {
    if input.len() != net.arch.input {
        return Err(AnnError::ShapeMismatch {
            expected: net.arch.input,
            got: input.len(),
        });
    }
    let last = net.layers.len() - 1;
    scratch.activations[0].copy_from_slice(input);
    for (idx, layer) in net.layers.iter().enumerate() {
        let (done, rest) = scratch.activations.split_at_mut(idx + 1);
        let prev = &done[idx];
        let next = &mut rest[0];
        for (o, slot) in next.iter_mut().enumerate() {
            let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
            let z = layer.biases[o] + crate::linalg::dot(row, prev);
            *slot = if idx == last { z } else { logistic(z) };
        }
    }
    let prediction = scratch.activations[last + 1][0];
    let error = prediction - target;

    // Backward pass: delta = ∂E/∂z per layer.
    scratch.delta[0] = error; // identity output
    let mut offset = grad.len();
    for idx in (0..net.layers.len()).rev() {
        let layer = &net.layers[idx];
        let prev = &scratch.activations[idx];
        offset -= layer.outputs * layer.inputs + layer.outputs;
        for o in 0..layer.outputs {
            let d = scratch.delta[o];
            let base = offset + o * layer.inputs;
            for (slot, p) in grad[base..base + layer.inputs].iter_mut().zip(prev) {
                *slot += d * p;
            }
            grad[offset + layer.outputs * layer.inputs + o] += d;
        }
        if idx > 0 {
            // Propagate through the logistic activation of layer idx-1.
            for i in 0..layer.inputs {
                let mut acc = 0.0;
                for o in 0..layer.outputs {
                    acc += scratch.delta[o] * layer.weights[o * layer.inputs + i];
                }
                let a = prev[i];
                scratch.next_delta[i] = acc * a * (1.0 - a);
            }
            std::mem::swap(&mut scratch.delta, &mut scratch.next_delta);
        }
    }
    Ok(0.5 * error * error)
}

/// Analytic gradient of E = ½ Σ (ŷ − y)² over the batch, flattened in
/// layer order (weights row-major, then biases), plus the loss itself.
pub fn gradient(
    net: &Network,
    inputs: &[Vec<f64>],
    targets: &[f64],
) -> Result<(Vec<f64>, f64), AnnError> {
    if inputs.is_empty() {
        return Err(AnnError::EmptyBatch);
    }
    let mut grad = vec![0.0; net.flatten_len()];
    let mut scratch = BackpropScratch::new(net);
    let mut loss = 0.0;
    for (input, &target) in inputs.iter().zip(targets) {
        loss += accumulate_row_gradient(net, input, target, &mut scratch, &mut grad)?;
    }
    Ok((grad, loss))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Optimizer {
    /// Sign-based per-parameter step adaptation.
    ResilientBackprop,
    /// Plain full-batch gradient descent.
    BatchGradientDescent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_steps: u64,
    /// Convergence threshold on max |∂E/∂w|.
    pub stop_threshold: f64,
    pub optimizer: Optimizer,
    /// Only used by gradient descent.
    pub learning_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_steps: 1_000_000,
            stop_threshold: 0.01,
            optimizer: Optimizer::ResilientBackprop,
            learning_rate: 0.01,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), AnnError> {
        if self.max_steps == 0 {
            return Err(AnnError::BadConfig("max_steps must be >= 1".into()));
        }
        if !(self.stop_threshold > 0.0) {
            return Err(AnnError::BadConfig("stop_threshold must be > 0".into()));
        }
        if self.optimizer == Optimizer::BatchGradientDescent && !(self.learning_rate > 0.0) {
            return Err(AnnError::BadConfig("learning_rate must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrainStatus {
    Converged,
    MaxStepsReached,
}

const RPROP_DELTA_INIT: f64 = 0.1;
const RPROP_DELTA_MIN: f64 = 1e-6;
const RPROP_DELTA_MAX: f64 = 50.0;
const RPROP_GROW: f64 = 1.2;
const RPROP_SHRINK: f64 = 0.5;

/// Train in place until the gradient threshold or the step failsafe.
/// Returns the status and the number of gradient evaluations used.
pub fn train(
    net: &mut Network,
    inputs: &[Vec<f64>],
    targets: &[f64],
    config: &TrainConfig,
) -> Result<(TrainStatus, u64), AnnError> {
    config.validate()?;
    if inputs.is_empty() {
        return Err(AnnError::EmptyBatch);
    }
    let n_params = net.flatten_len();
    let mut delta = vec![RPROP_DELTA_INIT; n_params];
    let mut prev_grad = vec![0.0; n_params];
    let mut grad = vec![0.0; n_params];
    let mut scratch = BackpropScratch::new(net);

    for step in 1..=config.max_steps {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        for (input, &target) in inputs.iter().zip(targets) {
            loss += accumulate_row_gradient(net, input, target, &mut scratch, &mut grad)?;
        }
        if !loss.is_finite() {
            return Err(AnnError::Diverged { step });
        }
        let grad_max = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if !grad_max.is_finite() {
            return Err(AnnError::Diverged { step });
        }
        if grad_max < config.stop_threshold {
            return Ok((TrainStatus::Converged, step));
        }
        match config.optimizer {
            Optimizer::ResilientBackprop => {
                for i in 0..n_params {
                    let sign_product = prev_grad[i] * grad[i];
                    if sign_product > 0.0 {
                        delta[i] = (delta[i] * RPROP_GROW).min(RPROP_DELTA_MAX);
                    } else if sign_product < 0.0 {
                        delta[i] = (delta[i] * RPROP_SHRINK).max(RPROP_DELTA_MIN);
                        grad[i] = 0.0; // skip the update after a sign flip
                    }
                }
                net.apply_flat_update(|i| -grad[i].signum() * delta[i]);
                std::mem::swap(&mut prev_grad, &mut grad);
            }
            Optimizer::BatchGradientDescent => {
                let lr = config.learning_rate;
                net.apply_flat_update(|i| -lr * grad[i]);
            }
        }
    }
    Ok((TrainStatus::MaxStepsReached, config.max_steps))
}

// ---------------------------------------------------------------------------
// Stage harness
// ---------------------------------------------------------------------------

/// Per-partition outcome for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnCell {
    pub partition: u32,
    pub status: Option<TrainStatus>,
    pub steps: u64,
    pub train: Option<MetricSet>,
    pub validation: Option<MetricSet>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

impl Aggregate {
    fn over(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        Some(Self {
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean: values.iter().sum::<f64>() / values.len() as f64,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnModelRecord {
    pub model_id: String,
    pub lag: u8,
    pub cells: Vec<AnnCell>,
    pub train_r2: Option<Aggregate>,
    pub validation_r2: Option<Aggregate>,
    pub train_mean: Option<MetricSet>,
    pub validation_mean: Option<MetricSet>,
    /// Train-minus-validation mean R²; absent when every cell failed.
    pub overfit_index: Option<f64>,
    pub overfit: bool,
    /// Partition with the best validation R², when any succeeded.
    pub best_partition: Option<u32>,
    /// Network and normalization of the best partition, kept so any model
    /// (not only the champion) can be scored on held-out data later.
    pub best_network: Option<Network>,
    pub best_norm: Option<NormParams>,
}

/// The champion: the trained network of the best partition of the best
/// model, with the normalization that was fitted for that partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChampionRecord {
    pub model_id: String,
    pub partition: u32,
    pub network: Network,
    pub norm: NormParams,
    pub validation_r2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnStageReport {
    pub arch_hidden: Vec<usize>,
    pub seed: u64,
    pub records: Vec<AnnModelRecord>,
    pub champion: Option<ChampionRecord>,
}

impl AnnStageReport {
    pub fn record(&self, model_id: &str) -> Option<&AnnModelRecord> {
        self.records.iter().find(|r| r.model_id == model_id)
    }
}

/// Normalization columns for a model: its predictors, the month sine, and
/// the target.
pub fn model_columns(spec: &ModelSpec) -> Vec<ColumnId> {
    let mut columns: Vec<ColumnId> = spec
        .predictors
        .iter()
        .map(|p| ColumnId::Predictor(p.column()))
        .collect();
    columns.push(ColumnId::MonthSine);
    columns.push(ColumnId::Target);
    columns
}

/// Normalized input rows (predictors + month sine) for the given rows.
pub fn normalized_inputs(
    params: &NormParams,
    table: &FeatureTable,
    rows: &[usize],
) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|&r| {
            params
                .columns
                .iter()
                .filter(|c| c.column != ColumnId::Target)
                .map(|c| c.normalize(table.value(&table.rows[r], c.column)))
                .collect()
        })
        .collect()
}

/// Predictions on the original target scale, clamped into [0, 100].
pub fn predict_denormalized(
    net: &Network,
    params: &NormParams,
    table: &FeatureTable,
    rows: &[usize],
) -> Result<Vec<f64>, AnnError> {
    let target_range = params
        .for_column(ColumnId::Target)
        .expect("norm params always carry the target column");
    normalized_inputs(params, table, rows)
        .iter()
        .map(|input| {
            let raw = net.forward(input)?;
            Ok(target_range.denormalize(raw).clamp(0.0, 100.0))
        })
        .collect()
}

/// Deterministic per-cell seed: independent of the position of the model in
/// the stage list, so adding models never perturbs other cells.
pub fn cell_seed(stage_seed: u64, model_id: &str, partition: u32) -> u64 {
    seed::derive(
        stage_seed ^ seed::fnv1a64(model_id.as_bytes()),
        "ann-cell",
        u64::from(partition),
    )
}

struct CellOutcome {
    cell: AnnCell,
    champion_candidate: Option<(f64, Network, NormParams)>,
}

fn run_cell(
    spec: &ModelSpec,
    table: &FeatureTable,
    train_rows: &[usize],
    validation_rows: &[usize],
    partition: u32,
    hidden: &[usize],
    config: &TrainConfig,
    stage_seed: u64,
) -> CellOutcome {
    let fail = |message: String| CellOutcome {
        cell: AnnCell {
            partition,
            status: None,
            steps: 0,
            train: None,
            validation: None,
            failure: Some(message),
        },
        champion_candidate: None,
    };

    let columns = model_columns(spec);
    let params = match minmax_fit(table, train_rows, &columns) {
        Ok(p) => p,
        Err(e) => return fail(e.to_string()),
    };
    let target_range = params.for_column(ColumnId::Target).unwrap().clone();

    let inputs = normalized_inputs(&params, table, train_rows);
    if inputs.is_empty() {
        return fail(AnnError::EmptyBatch.to_string());
    }
    let targets: Vec<f64> = train_rows
        .iter()
        .map(|&r| target_range.normalize(table.rows[r].target))
        .collect();

    let arch = match NetworkArch::new(inputs[0].len(), hidden.to_vec()) {
        Ok(a) => a,
        Err(e) => return fail(e.to_string()),
    };
    let mut net = Network::init(&arch, cell_seed(stage_seed, &spec.id, partition));
    let (status, steps) = match train(&mut net, &inputs, &targets, config) {
        Ok(outcome) => outcome,
        Err(e) => return fail(e.to_string()),
    };

    let evaluate = |rows: &[usize]| -> Result<MetricSet, AnnError> {
        let predictions = predict_denormalized(&net, &params, table, rows)?;
        let actual: Vec<f64> = rows.iter().map(|&r| table.rows[r].target).collect();
        Ok(metrics::regression_metrics(&actual, &predictions)?)
    };
    let (train_set, validation_set) = match (evaluate(train_rows), evaluate(validation_rows)) {
        (Ok(t), Ok(v)) => (t, v),
        (t, v) => {
            let message = t
                .err()
                .or(v.err())
                .map_or_else(|| "evaluation failed".to_string(), |e| e.to_string());
            return fail(message);
        }
    };

    CellOutcome {
        champion_candidate: Some((validation_set.r2, net, params)),
        cell: AnnCell {
            partition,
            status: Some(status),
            steps,
            train: Some(train_set),
            validation: Some(validation_set),
            failure: None,
        },
    }
}

/// Train every model over every partition and aggregate. Models whose
/// train/validation R² means differ by at least the overfit threshold are
/// flagged and excluded from the championship; ties break on mean
/// validation RMSE, then on the model id.
pub fn run_ann_stage(
    selected: &[ModelSpec],
    table: &FeatureTable,
    plan: &SplitPlan,
    hidden: &[usize],
    config: &TrainConfig,
    stage_seed: u64,
) -> AnnStageReport {
    let mut outcomes: Vec<(AnnModelRecord, Vec<Option<(f64, Network, NormParams)>>)> = selected
        .par_iter()
        .map(|spec| {
            let cells: Vec<CellOutcome> = plan
                .partitions
                .par_iter()
                .enumerate()
                .map(|(p, partition)| {
                    run_cell(
                        spec,
                        table,
                        &partition.train,
                        &partition.validation,
                        p as u32,
                        hidden,
                        config,
                        stage_seed,
                    )
                })
                .collect();

            let mut record = AnnModelRecord {
                model_id: spec.id.clone(),
                lag: spec.lag,
                cells: Vec::with_capacity(cells.len()),
                train_r2: None,
                validation_r2: None,
                train_mean: None,
                validation_mean: None,
                overfit_index: None,
                overfit: false,
                best_partition: None,
                best_network: None,
                best_norm: None,
            };
            let mut candidates = Vec::with_capacity(cells.len());
            let mut train_sets = Vec::new();
            let mut validation_sets = Vec::new();
            for outcome in cells {
                if let (Some(t), Some(v)) = (&outcome.cell.train, &outcome.cell.validation) {
                    train_sets.push(*t);
                    validation_sets.push(*v);
                }
                candidates.push(outcome.champion_candidate);
                record.cells.push(outcome.cell);
            }
            record.train_r2 =
                Aggregate::over(&train_sets.iter().map(|m| m.r2).collect::<Vec<_>>());
            record.validation_r2 =
                Aggregate::over(&validation_sets.iter().map(|m| m.r2).collect::<Vec<_>>());
            record.train_mean = mean_metric_sets(&train_sets);
            record.validation_mean = mean_metric_sets(&validation_sets);
            if let (Some(t), Some(v)) = (&record.train_mean, &record.validation_mean) {
                let (index, flag) = metrics::overfit_index(t.r2, v.r2);
                record.overfit_index = Some(index);
                record.overfit = flag;
            }
            record.best_partition = record
                .cells
                .iter()
                .filter(|c| c.validation.is_some())
                .max_by(|a, b| {
                    let ra = a.validation.unwrap().r2;
                    let rb = b.validation.unwrap().r2;
                    ra.partial_cmp(&rb)
                        .unwrap()
                        .then_with(|| b.partition.cmp(&a.partition))
                })
                .map(|c| c.partition);
            if let Some(best) = record.best_partition {
                if let Some((_, net, params)) = &candidates[best as usize] {
                    record.best_network = Some(net.clone());
                    record.best_norm = Some(params.clone());
                }
            }
            (record, candidates)
        })
        .collect();

    // Champion: best mean validation R² among non-overfit models with at
    // least one successful cell.
    let mut champion: Option<ChampionRecord> = None;
    let mut champion_key: Option<(f64, f64, String)> = None; // (mean r2, -rmse, id)
    for (record, candidates) in &outcomes {
        let (Some(validation_r2), Some(validation_mean)) =
            (&record.validation_r2, &record.validation_mean)
        else {
            continue;
        };
        if record.overfit {
            continue;
        }
        let better = match &champion_key {
            None => true,
            Some((best_r2, best_neg_rmse, best_id)) => {
                let key = (
                    validation_r2.mean,
                    -validation_mean.rmse,
                    record.model_id.clone(),
                );
                match key.0.partial_cmp(best_r2).unwrap() {
                    std::cmp::Ordering::Greater => true,
                    std::cmp::Ordering::Less => false,
                    std::cmp::Ordering::Equal => match key.1.partial_cmp(best_neg_rmse).unwrap() {
                        std::cmp::Ordering::Greater => true,
                        std::cmp::Ordering::Less => false,
                        std::cmp::Ordering::Equal => record.model_id < *best_id,
                    },
                }
            }
        };
        if better {
            let best_partition = record.best_partition.expect("successful cell exists");
            let (r2, net, params) = candidates[best_partition as usize]
                .as_ref()
                .expect("best partition has a trained network");
            champion = Some(ChampionRecord {
                model_id: record.model_id.clone(),
                partition: best_partition,
                network: net.clone(),
                norm: params.clone(),
                validation_r2: *r2,
            });
            champion_key = Some((
                validation_r2.mean,
                -validation_mean.rmse,
                record.model_id.clone(),
            ));
        }
    }

    AnnStageReport {
        arch_hidden: hidden.to_vec(),
        seed: stage_seed,
        records: outcomes.drain(..).map(|(record, _)| record).collect(),
        champion,
    }
}

/// Pull the champion out of a stage report, or fail if nothing is eligible.
pub fn select_champion(report: &AnnStageReport) -> Result<&ChampionRecord, AnnError> {
    report.champion.as_ref().ok_or(AnnError::NoEligibleModel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn hidden_nodes_rule_reference_values() {
        // N=3, m=1: √9 + 2√1 = 5 → (5, 1).
        assert_eq!(hidden_nodes_rule(3, 1), (5, 1));
        // N=27, m=1: h2 = √9 = 3; h1 = √81 + 2√9 = 15.
        assert_eq!(hidden_nodes_rule(27, 1), (15, 3));
    }

    #[test]
    #[should_panic(expected = "need N >= 1")]
    fn hidden_nodes_rule_rejects_zero_samples() {
        hidden_nodes_rule(0, 1);
    }

    #[test]
    fn init_is_seeded_and_shaped() {
        let arch = NetworkArch::new(2, vec![5, 3]).unwrap();
        let a = Network::init(&arch, 11);
        let b = Network::init(&arch, 11);
        let c = Network::init(&arch, 12);
        assert_eq!(a, b);
        assert_ne!(a, c);
        // 2-5-3-1: weights 10+15+3, biases 5+3+1 → 37 parameters.
        assert_eq!(a.parameter_count(), 37);
        assert_eq!(a.layers.len(), 3);
        assert_eq!((a.layers[0].outputs, a.layers[0].inputs), (5, 2));
        assert_eq!((a.layers[2].outputs, a.layers[2].inputs), (1, 3));
        for layer in &a.layers {
            assert!(layer.weights.iter().all(|w| (-0.5..=0.5).contains(w)));
            assert!(layer.biases.iter().all(|b| (-0.5..=0.5).contains(b)));
        }
    }

    #[test]
    fn forward_zero_weights_and_saturation() {
        let arch = NetworkArch::new(2, vec![5, 3]).unwrap();
        let mut net = Network::init(&arch, 0);
        for layer in &mut net.layers {
            layer.weights.iter_mut().for_each(|w| *w = 0.0);
            layer.biases.iter_mut().for_each(|b| *b = 0.0);
        }
        // All-zero parameters: hidden activations sit at 0.5, output bias 0.
        assert_eq!(net.forward(&[0.3, 0.9]).unwrap(), 0.0);

        // Give the output layer weights 1: output = Σ 0.5 over 3 inputs.
        let last = net.layers.len() - 1;
        net.layers[last].weights.iter_mut().for_each(|w| *w = 1.0);
        let out = net.forward(&[0.1, 0.2]).unwrap();
        assert!((out - 1.5).abs() < 1e-12);
    }

    #[test]
    fn forward_batch_matches_rowwise() {
        let arch = NetworkArch::new(3, vec![4, 2]).unwrap();
        let net = Network::init(&arch, 5);
        let rows: Vec<Vec<f64>> = (0..6)
            .map(|i| vec![0.1 * i as f64, 0.5, 1.0 - 0.1 * i as f64])
            .collect();
        let batch = net.forward_batch(&rows).unwrap();
        for (row, &b) in rows.iter().zip(&batch) {
            assert_eq!(net.forward(row).unwrap().to_bits(), b.to_bits());
        }
        assert!(matches!(
            net.forward(&[1.0, 2.0]),
            Err(AnnError::ShapeMismatch { .. })
        ));
    }

    fn numeric_gradient(net: &Network, inputs: &[Vec<f64>], targets: &[f64]) -> Vec<f64> {
        let h = 1e-5;
        let n = net.parameter_count();
        let mut out = vec![0.0; n];
        for i in 0..n {
            let mut plus = net.clone();
            plus.apply_flat_update(|j| if j == i { h } else { 0.0 });
            let mut minus = net.clone();
            minus.apply_flat_update(|j| if j == i { -h } else { 0.0 });
            let loss = |candidate: &Network| -> f64 {
                candidate
                    .forward_batch(inputs)
                    .unwrap()
                    .iter()
                    .zip(targets)
                    .map(|(p, t)| 0.5 * (p - t) * (p - t))
                    .sum()
            };
            out[i] = (loss(&plus) - loss(&minus)) / (2.0 * h);
        }
        out
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        for case in 0..10 {
            let input_size = rng.gen_range(1..4);
            let hidden: Vec<usize> = (0..rng.gen_range(1..3))
                .map(|_| rng.gen_range(2..6))
                .collect();
            let arch = NetworkArch::new(input_size, hidden).unwrap();
            let net = Network::init(&arch, 1000 + case);
            let batch: Vec<Vec<f64>> = (0..rng.gen_range(1..8))
                .map(|_| (0..input_size).map(|_| rng.gen_range(0.0..1.0)).collect())
                .collect();
            let targets: Vec<f64> = (0..batch.len()).map(|_| rng.gen_range(0.0..1.0)).collect();

            let (analytic, _) = gradient(&net, &batch, &targets).unwrap();
            let numeric = numeric_gradient(&net, &batch, &targets);
            for (a, n) in analytic.iter().zip(&numeric) {
                let denom = a.abs().max(n.abs()).max(1e-3);
                assert!(
                    (a - n).abs() / denom < 1e-4,
                    "case {case}: analytic {a} vs numeric {n}"
                );
            }
        }
    }

    #[test]
    fn gradient_is_zero_at_a_perfect_fit_and_additive() {
        let arch = NetworkArch::new(1, vec![2]).unwrap();
        let net = Network::init(&arch, 3);
        let rows = vec![vec![0.2], vec![0.8]];
        let targets = net.forward_batch(&rows).unwrap();
        let (grad, loss) = gradient(&net, &rows, &targets).unwrap();
        assert!(loss.abs() < 1e-30);
        assert!(grad.iter().all(|g| g.abs() < 1e-12));

        // Batch gradient is the sum of per-row gradients.
        let other_targets = [0.1, 0.9];
        let (combined, _) = gradient(&net, &rows, &other_targets).unwrap();
        let (first, _) = gradient(&net, &rows[..1].to_vec(), &other_targets[..1]).unwrap();
        let (second, _) = gradient(&net, &rows[1..].to_vec(), &other_targets[1..]).unwrap();
        for ((c, f), s) in combined.iter().zip(&first).zip(&second) {
            assert!((c - (f + s)).abs() < 1e-12);
        }
    }

    #[test]
    fn training_fits_a_line_and_freezes_the_outcome() {
        // y = 0.5 x on 50 rows; pinned seed, frozen convergence outcome.
        let arch = NetworkArch::new(1, vec![5, 3]).unwrap();
        let mut net = Network::init(&arch, 42);
        let rows: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64 / 49.0]).collect();
        let targets: Vec<f64> = rows.iter().map(|r| 0.5 * r[0]).collect();
        let (status, steps) = train(&mut net, &rows, &targets, &TrainConfig::default()).unwrap();
        assert_eq!(status, TrainStatus::Converged);
        assert!(steps < 100_000, "took {steps} steps");

        let predictions = net.forward_batch(&rows).unwrap();
        let m = crate::metrics::regression_metrics(&targets, &predictions).unwrap();
        assert!(m.r2 > 0.99, "train r2 {}", m.r2);
    }

    #[test]
    fn training_stopping_rules() {
        let arch = NetworkArch::new(1, vec![3]).unwrap();
        let rows = vec![vec![0.0], vec![1.0]];
        let targets = [0.0, 1.0];

        // One-step failsafe.
        let mut net = Network::init(&arch, 9);
        let config = TrainConfig {
            max_steps: 1,
            ..TrainConfig::default()
        };
        let (status, steps) = train(&mut net, &rows, &targets, &config).unwrap();
        assert_eq!(status, TrainStatus::MaxStepsReached);
        assert_eq!(steps, 1);

        // An enormous threshold converges at the first gradient check.
        let mut net = Network::init(&arch, 9);
        let config = TrainConfig {
            stop_threshold: 1e12,
            ..TrainConfig::default()
        };
        let (status, steps) = train(&mut net, &rows, &targets, &config).unwrap();
        assert_eq!(status, TrainStatus::Converged);
        assert_eq!(steps, 1);

        // Zero threshold is rejected.
        let config = TrainConfig {
            stop_threshold: 0.0,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&mut Network::init(&arch, 9), &rows, &targets, &config),
            Err(AnnError::BadConfig(_))
        ));
    }

    #[test]
    fn gradient_descent_loss_is_monotone_on_a_toy_problem() {
        let arch = NetworkArch::new(1, vec![3]).unwrap();
        let mut net = Network::init(&arch, 21);
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 / 19.0]).collect();
        let targets: Vec<f64> = rows.iter().map(|r| 0.3 + 0.4 * r[0]).collect();
        let config = TrainConfig {
            optimizer: Optimizer::BatchGradientDescent,
            learning_rate: 0.01,
            max_steps: 1,
            ..TrainConfig::default()
        };
        let mut last_loss = f64::INFINITY;
        for _ in 0..100 {
            let (_, loss) = gradient(&net, &rows, &targets).unwrap();
            assert!(loss <= last_loss + 1e-12, "loss rose: {loss} > {last_loss}");
            last_loss = loss;
            let _ = train(&mut net, &rows, &targets, &config).unwrap();
        }
    }

    #[test]
    fn diverging_training_reports_the_step() {
        let arch = NetworkArch::new(1, vec![3]).unwrap();
        let mut net = Network::init(&arch, 4);
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let targets: Vec<f64> = rows.iter().map(|r| 100.0 * r[0]).collect();
        let config = TrainConfig {
            optimizer: Optimizer::BatchGradientDescent,
            learning_rate: 10.0, // absurd on purpose
            max_steps: 10_000,
            ..TrainConfig::default()
        };
        match train(&mut net, &rows, &targets, &config) {
            Err(AnnError::Diverged { step }) => assert!(step > 0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn cell_seed_is_stable_and_model_local() {
        let a = cell_seed(1, "VCIdekad_lag1+RFE1M_lag1", 0);
        assert_eq!(a, cell_seed(1, "VCIdekad_lag1+RFE1M_lag1", 0));
        assert_ne!(a, cell_seed(1, "VCIdekad_lag1+RFE1M_lag1", 1));
        assert_ne!(a, cell_seed(1, "VCI1M_lag1", 0));
        assert_ne!(a, cell_seed(2, "VCIdekad_lag1+RFE1M_lag1", 0));
    }
}
