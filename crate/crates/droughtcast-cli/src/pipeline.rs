//! End-to-end pipeline orchestration with per-stage persistence.
//!
//! Stage order: panel → validation → indices → features → split plan →
//! model enumeration → additive-model screening → network training →
//! champion → held-out test evaluation. Every stage writes its artifact
//! into the output directory so each CLI subcommand can also be run in
//! isolation; a manifest records the configuration hash and which stage
//! files exist.
//!
//! All randomness flows from the single configured seed. Two runs with the
//! same configuration produce byte-identical artifacts, timestamps in the
//! manifest aside.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use droughtcast::ann::{
    self, predict_denormalized, run_ann_stage, select_champion, AnnStageReport, ChampionRecord,
    Optimizer, TrainConfig,
};
use droughtcast::features::{build_feature_table, make_split_plan, FeatureTable, SplitPlan};
use droughtcast::gam::{run_gam_stage, GamOptions, GamStageReport};
use droughtcast::indices::{build_index_table, default_baseline};
use droughtcast::metrics::{
    class_scores_from_prediction, classify_phase, confusion_and_accuracy, hand_till_auroc,
    regression_metrics, ConfusionMatrix, MetricSet, PhaseClass,
};
use droughtcast::model_space::{enumerate_models, ModelSpec, VariableCatalog};
use droughtcast::panel::{generate_synthetic_panel, validate_panel, RawPanel, SyntheticConfig};
use droughtcast::seed;
use droughtcast::time::YearRange;

use crate::formats::{self, FormatError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("input data: {0}")]
    Input(String),
    #[error("panel rejected: {0} range violations (see validation report)")]
    PanelRejected(usize),
    #[error("no models passed the screening threshold {0}")]
    NoSurvivors(f64),
    #[error("stage {stage} failed: {message}")]
    Stage { stage: String, message: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::Input(_) | PipelineError::PanelRejected(_) => 2,
            PipelineError::NoSurvivors(_) => 4,
            PipelineError::Stage { .. } | PipelineError::Io(_) => 3,
        }
    }
}

impl From<FormatError> for PipelineError {
    fn from(e: FormatError) -> Self {
        if e.is_input_error() {
            PipelineError::Input(e.to_string())
        } else {
            PipelineError::Stage {
                stage: "io".to_string(),
                message: e.to_string(),
            }
        }
    }
}

fn stage_err<E: std::fmt::Display>(stage: &str) -> impl Fn(E) -> PipelineError + '_ {
    move |e| PipelineError::Stage {
        stage: stage.to_string(),
        message: e.to_string(),
    }
}

/// Optional overrides for the synthetic panel; unset fields use the
/// generator defaults, and the generator seed derives from the pipeline
/// seed unless given explicitly.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSection {
    pub n_counties: Option<usize>,
    pub n_years: Option<usize>,
    pub seed: Option<u64>,
    pub seasonal_amplitude: Option<f64>,
    pub noise_sd: Option<f64>,
    pub rainfall_to_ndvi_lag: Option<usize>,
    pub ar_coefficient: Option<f64>,
}

impl SyntheticSection {
    pub fn resolve(&self, pipeline_seed: u64) -> SyntheticConfig {
        let defaults = SyntheticConfig::default();
        SyntheticConfig {
            n_counties: self.n_counties.unwrap_or(defaults.n_counties),
            n_years: self.n_years.unwrap_or(defaults.n_years),
            seed: self.seed.unwrap_or_else(|| seed::derive(pipeline_seed, "synth", 0)),
            seasonal_amplitude: self.seasonal_amplitude.unwrap_or(defaults.seasonal_amplitude),
            noise_sd: self.noise_sd.unwrap_or(defaults.noise_sd),
            rainfall_to_ndvi_lag: self
                .rainfall_to_ndvi_lag
                .unwrap_or(defaults.rainfall_to_ndvi_lag),
            ar_coefficient: self.ar_coefficient.unwrap_or(defaults.ar_coefficient),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InputConfig {
    /// Parse an existing panel CSV.
    Csv { path: PathBuf },
    /// Generate a seeded synthetic panel.
    Synthetic {
        #[serde(flatten)]
        synthetic: SyntheticSection,
    },
}

impl Default for InputConfig {
    fn default() -> Self {
        InputConfig::Synthetic {
            synthetic: SyntheticSection::default(),
        }
    }
}

fn default_holdout() -> u32 {
    24
}
fn default_partitions() -> u32 {
    10
}
fn default_threshold() -> f64 {
    0.70
}
fn default_arch() -> Vec<usize> {
    vec![5, 3]
}
fn default_max_steps() -> u64 {
    1_000_000
}

/// Full pipeline configuration. The seed is mandatory: no stage may fall
/// back to wall-clock entropy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    #[serde(default)]
    pub input: InputConfig,
    /// Climatology baseline; all-but-last-two years when omitted.
    #[serde(default)]
    pub baseline: Option<YearRange>,
    #[serde(default = "default_holdout")]
    pub holdout_months: u32,
    #[serde(default = "default_partitions")]
    pub k_partitions: u32,
    #[serde(default = "default_threshold")]
    pub gam_threshold: f64,
    #[serde(default = "default_arch")]
    pub arch: Vec<usize>,
    #[serde(default = "default_max_steps")]
    pub max_steps: u64,
    #[serde(default)]
    pub smooth_all: bool,
    #[serde(default)]
    pub validate_assumption: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            input: InputConfig::default(),
            baseline: None,
            holdout_months: default_holdout(),
            k_partitions: default_partitions(),
            gam_threshold: default_threshold(),
            arch: default_arch(),
            max_steps: default_max_steps(),
            smooth_all: false,
            validate_assumption: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.holdout_months == 0 {
            return Err(PipelineError::Config("holdout_months must be >= 1".into()));
        }
        if self.k_partitions < 2 {
            return Err(PipelineError::Config("k_partitions must be >= 2".into()));
        }
        if !(0.0..=1.0).contains(&self.gam_threshold) {
            return Err(PipelineError::Config(
                "gam_threshold must lie in [0, 1]".into(),
            ));
        }
        if self.arch.is_empty() || self.arch.iter().any(|&h| h == 0) {
            return Err(PipelineError::Config(
                "arch needs at least one hidden layer, all sizes >= 1".into(),
            ));
        }
        if self.max_steps == 0 {
            return Err(PipelineError::Config("max_steps must be >= 1".into()));
        }
        if let InputConfig::Synthetic { synthetic } = &self.input {
            synthetic
                .resolve(self.seed)
                .validate()
                .map_err(|e| PipelineError::Config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            max_steps: self.max_steps,
            optimizer: Optimizer::ResilientBackprop,
            ..TrainConfig::default()
        }
    }

    /// SHA-256 over the canonical JSON serialization; changes iff any
    /// configuration field changes.
    pub fn config_hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical))
    }
}

/// Held-out test evaluation of the champion: regression metrics plus the
/// full phase-classification analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_id: String,
    pub partition: u32,
    pub n_test_rows: usize,
    pub regression: MetricSet,
    pub overall_accuracy: f64,
    pub per_county_accuracy: Vec<CountyAccuracy>,
    pub confusion: ConfusionMatrix,
    /// Multi-class AUROC; absent when the test rows realize fewer than two
    /// phases.
    pub auroc: Option<f64>,
    pub phase_table: Vec<PhaseTableRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountyAccuracy {
    pub county: String,
    pub n_rows: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseTableRow {
    pub county: String,
    pub year: i32,
    pub month: u8,
    pub actual_vci3m: f64,
    pub predicted_vci3m: f64,
    pub actual_class: PhaseClass,
    pub predicted_class: PhaseClass,
}

/// Score a trained network on the plan's chronological test rows.
pub fn evaluate_on_test(
    champion: &ChampionRecord,
    table: &FeatureTable,
    plan: &SplitPlan,
) -> Result<EvalReport, PipelineError> {
    let rows = &plan.test;
    let predictions = predict_denormalized(&champion.network, &champion.norm, table, rows)
        .map_err(stage_err("evaluate"))?;
    let actual: Vec<f64> = rows.iter().map(|&r| table.rows[r].target).collect();
    let regression = regression_metrics(&actual, &predictions).map_err(stage_err("evaluate"))?;

    let actual_classes: Vec<PhaseClass> = actual.iter().map(|&v| classify_phase(v)).collect();
    let predicted_classes: Vec<PhaseClass> =
        predictions.iter().map(|&v| classify_phase(v)).collect();
    let (confusion, overall_accuracy) =
        confusion_and_accuracy(&actual_classes, &predicted_classes)
            .map_err(stage_err("evaluate"))?;

    let mut per_county_accuracy = Vec::new();
    for (c, county) in table.counties.iter().enumerate() {
        let pairs: Vec<(PhaseClass, PhaseClass)> = rows
            .iter()
            .enumerate()
            .filter(|(_, &r)| table.rows[r].county == c)
            .map(|(i, _)| (actual_classes[i], predicted_classes[i]))
            .collect();
        if pairs.is_empty() {
            continue;
        }
        let hits = pairs.iter().filter(|(a, p)| a == p).count();
        per_county_accuracy.push(CountyAccuracy {
            county: county.clone(),
            n_rows: pairs.len(),
            accuracy: hits as f64 / pairs.len() as f64,
        });
    }

    let scores: Vec<_> = predictions
        .iter()
        .map(|&v| class_scores_from_prediction(v))
        .collect();
    let auroc = hand_till_auroc(&scores, &actual_classes).ok();

    let phase_table = rows
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            let row = &table.rows[r];
            PhaseTableRow {
                county: table.counties[row.county].clone(),
                year: row.stamp.year,
                month: row.stamp.month,
                actual_vci3m: row.target,
                predicted_vci3m: predictions[i],
                actual_class: actual_classes[i],
                predicted_class: predicted_classes[i],
            }
        })
        .collect();

    Ok(EvalReport {
        model_id: champion.model_id.clone(),
        partition: champion.partition,
        n_test_rows: rows.len(),
        regression,
        overall_accuracy,
        per_county_accuracy,
        confusion,
        auroc,
        phase_table,
    })
}

/// Test-set outcomes for the models the screening stage rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    /// Sorted by test R² descending.
    pub records: Vec<AssumptionRecord>,
    pub best_test_r2: Option<f64>,
    pub best_model_id: Option<String>,
    pub champion_test_r2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionRecord {
    pub model_id: String,
    pub lag: u8,
    pub train_r2_mean: Option<f64>,
    pub validation_r2_mean: Option<f64>,
    pub test_r2: Option<f64>,
}

/// Artifact file names inside a bundle directory.
pub mod artifact {
    pub const PANEL: &str = "panel.csv";
    pub const VALIDATION: &str = "validation_report.json";
    pub const INDICES: &str = "indices.csv";
    pub const FEATURES: &str = "features.csv";
    pub const PLAN: &str = "plan.json";
    pub const MODELS: &str = "models.json";
    pub const GAM_REPORT: &str = "gam_report.json";
    pub const ANN_REPORT: &str = "ann_report.json";
    pub const CHAMPION: &str = "champion.json";
    pub const EVALUATION: &str = "eval_report.json";
    pub const ASSUMPTION: &str = "nonselected_report.json";
    pub const MANIFEST: &str = "bundle.json";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageEntry {
    pub name: String,
    pub file: String,
    pub status: StageStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Written,
    Skipped,
}

/// Run manifest: configuration hash, tool version, wall-clock timestamp and
/// the stage-file inventory. The timestamp is the only non-reproducible
/// field in a bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub config: PipelineConfig,
    pub tool_version: String,
    pub generated_unix_seconds: u64,
    pub stages: Vec<StageEntry>,
}

/// Everything a full run produces, in memory.
#[derive(Debug, Clone)]
pub struct ReportBundle {
    pub manifest: Manifest,
    pub gam: GamStageReport,
    pub ann: AnnStageReport,
    pub champion: ChampionRecord,
    pub evaluation: EvalReport,
    pub assumption: Option<AssumptionReport>,
}

fn now_unix_seconds() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

struct ManifestBuilder {
    stages: Vec<StageEntry>,
}

impl ManifestBuilder {
    fn new() -> Self {
        Self { stages: Vec::new() }
    }

    fn written(&mut self, name: &str, file: &str) {
        self.stages.push(StageEntry {
            name: name.to_string(),
            file: file.to_string(),
            status: StageStatus::Written,
        });
    }

    fn skipped(&mut self, name: &str, file: &str) {
        self.stages.push(StageEntry {
            name: name.to_string(),
            file: file.to_string(),
            status: StageStatus::Skipped,
        });
    }

    fn finish(self, config: &PipelineConfig) -> Manifest {
        Manifest {
            config_hash: config.config_hash(),
            config: config.clone(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            generated_unix_seconds: now_unix_seconds(),
            stages: self.stages,
        }
    }
}

fn load_panel(config: &PipelineConfig, out_dir: &Path) -> Result<RawPanel, PipelineError> {
    match &config.input {
        InputConfig::Csv { path } => Ok(formats::parse_panel_csv(path)?),
        InputConfig::Synthetic { synthetic } => {
            let resolved = synthetic.resolve(config.seed);
            let panel =
                generate_synthetic_panel(&resolved).map_err(|e| PipelineError::Config(e.to_string()))?;
            formats::write_panel_csv(&panel, &out_dir.join(artifact::PANEL))?;
            Ok(panel)
        }
    }
}

/// Persist a partial-failure manifest before bubbling the error, so an
/// aborted run still leaves an inspectable bundle.
fn persist_manifest(
    builder: ManifestBuilder,
    config: &PipelineConfig,
    out_dir: &Path,
) -> Result<Manifest, PipelineError> {
    let manifest = builder.finish(config);
    formats::write_json(&out_dir.join(artifact::MANIFEST), &manifest)?;
    Ok(manifest)
}

/// Execute the full pipeline into `out_dir`.
pub fn run_pipeline(config: &PipelineConfig, out_dir: &Path) -> Result<ReportBundle, PipelineError> {
    config.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let mut manifest = ManifestBuilder::new();

    // Panel. Synthetic runs persist it; CSV runs read the caller's file,
    // so the bundle records the stage as skipped.
    let panel = load_panel(config, out_dir)?;
    if matches!(config.input, InputConfig::Synthetic { .. }) {
        manifest.written("panel", artifact::PANEL);
    } else {
        manifest.skipped("panel", artifact::PANEL);
    }

    // Validation gate.
    let validation = validate_panel(&panel);
    formats::write_json(&out_dir.join(artifact::VALIDATION), &validation)?;
    manifest.written("validation", artifact::VALIDATION);
    if !validation.accepted() {
        persist_manifest(manifest, config, out_dir)?;
        return Err(PipelineError::PanelRejected(validation.range_violations.len()));
    }

    // Indices.
    let baseline = match config.baseline {
        Some(range) => range,
        None => default_baseline(&panel).ok_or_else(|| {
            PipelineError::Input("panel span too short for a default baseline".to_string())
        })?,
    };
    let indices = build_index_table(&panel, baseline).map_err(stage_err("indices"))?;
    formats::write_index_table(&indices, &out_dir.join(artifact::INDICES))?;
    manifest.written("indices", artifact::INDICES);

    // Features.
    let table = build_feature_table(&indices).map_err(stage_err("features"))?;
    formats::write_feature_table(&table, &out_dir.join(artifact::FEATURES))?;
    manifest.written("features", artifact::FEATURES);

    // Split plan.
    let plan = make_split_plan(&table, config.holdout_months, config.k_partitions, config.seed)
        .map_err(stage_err("split"))?;
    formats::write_json(&out_dir.join(artifact::PLAN), &plan)?;
    manifest.written("split", artifact::PLAN);

    // Model space.
    let models = enumerate_models(&VariableCatalog::default());
    formats::write_json(&out_dir.join(artifact::MODELS), &models)?;
    manifest.written("enumerate", artifact::MODELS);

    // Screening stage.
    let gam_options = GamOptions {
        smooth_all: config.smooth_all,
        ..GamOptions::default()
    };
    let gam = run_gam_stage(&models, &table, &plan, config.gam_threshold, &gam_options);
    formats::write_json(&out_dir.join(artifact::GAM_REPORT), &gam)?;
    manifest.written("gam", artifact::GAM_REPORT);

    let selected: Vec<ModelSpec> = models
        .iter()
        .filter(|m| gam.selected_ids.contains(&m.id))
        .cloned()
        .collect();
    if selected.is_empty() {
        persist_manifest(manifest, config, out_dir)?;
        return Err(PipelineError::NoSurvivors(config.gam_threshold));
    }

    // Network stage.
    let ann = run_ann_stage(
        &selected,
        &table,
        &plan,
        &config.arch,
        &config.train_config(),
        config.seed,
    );
    formats::write_json(&out_dir.join(artifact::ANN_REPORT), &ann)?;
    manifest.written("ann", artifact::ANN_REPORT);

    let champion = match select_champion(&ann) {
        Ok(c) => c.clone(),
        Err(e) => {
            persist_manifest(manifest, config, out_dir)?;
            return Err(PipelineError::Stage {
                stage: "champion".to_string(),
                message: e.to_string(),
            });
        }
    };
    formats::write_json(&out_dir.join(artifact::CHAMPION), &champion)?;
    manifest.written("champion", artifact::CHAMPION);

    // Held-out evaluation.
    let evaluation = evaluate_on_test(&champion, &table, &plan)?;
    formats::write_json(&out_dir.join(artifact::EVALUATION), &evaluation)?;
    manifest.written("evaluate", artifact::EVALUATION);

    // Optional assumption validation.
    let assumption = if config.validate_assumption {
        let report = assumption_validation(
            config,
            &models,
            &gam,
            &table,
            &plan,
            evaluation.regression.r2,
        );
        formats::write_json(&out_dir.join(artifact::ASSUMPTION), &report)?;
        manifest.written("validate-assumption", artifact::ASSUMPTION);
        Some(report)
    } else {
        manifest.skipped("validate-assumption", artifact::ASSUMPTION);
        None
    };

    let manifest = persist_manifest(manifest, config, out_dir)?;
    Ok(ReportBundle {
        manifest,
        gam,
        ann,
        champion,
        evaluation,
        assumption,
    })
}

/// Train the models the screening stage rejected and score each one's best
/// network on the chronological test rows.
pub fn assumption_validation(
    config: &PipelineConfig,
    models: &[ModelSpec],
    gam: &GamStageReport,
    table: &FeatureTable,
    plan: &SplitPlan,
    champion_test_r2: f64,
) -> AssumptionReport {
    let rejected: Vec<ModelSpec> = models
        .iter()
        .filter(|m| !gam.selected_ids.contains(&m.id))
        .cloned()
        .collect();
    let stage = run_ann_stage(
        &rejected,
        table,
        plan,
        &config.arch,
        &config.train_config(),
        config.seed,
    );

    let mut records: Vec<AssumptionRecord> = stage
        .records
        .iter()
        .map(|record| {
            let test_r2 = match (&record.best_network, &record.best_norm) {
                (Some(net), Some(norm)) => ann::predict_denormalized(net, norm, table, &plan.test)
                    .ok()
                    .and_then(|predictions| {
                        let actual: Vec<f64> =
                            plan.test.iter().map(|&r| table.rows[r].target).collect();
                        regression_metrics(&actual, &predictions).ok()
                    })
                    .map(|m| m.r2),
                _ => None,
            };
            AssumptionRecord {
                model_id: record.model_id.clone(),
                lag: record.lag,
                train_r2_mean: record.train_r2.map(|a| a.mean),
                validation_r2_mean: record.validation_r2.map(|a| a.mean),
                test_r2,
            }
        })
        .collect();
    records.sort_by(|a, b| {
        let ra = a.test_r2.unwrap_or(f64::NEG_INFINITY);
        let rb = b.test_r2.unwrap_or(f64::NEG_INFINITY);
        rb.partial_cmp(&ra)
            .unwrap()
            .then_with(|| a.model_id.cmp(&b.model_id))
    });
    let best = records.iter().find(|r| r.test_r2.is_some());
    AssumptionReport {
        best_test_r2: best.and_then(|r| r.test_r2),
        best_model_id: best.map(|r| r.model_id.clone()),
        champion_test_r2,
        records,
    }
}
