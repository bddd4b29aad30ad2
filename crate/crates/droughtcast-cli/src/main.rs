use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use droughtcast::ann::{run_ann_stage, select_champion};
use droughtcast::features::{build_feature_table, make_split_plan};
use droughtcast::gam::{run_gam_stage, GamOptions};
use droughtcast::indices::{build_index_table, default_baseline};
use droughtcast::model_space::{enumerate_models, VariableCatalog};
use droughtcast::panel::{generate_synthetic_panel, validate_panel};
use droughtcast::time::YearRange;

use droughtcast_cli::formats;
use droughtcast_cli::pipeline::{
    self, artifact, assumption_validation, evaluate_on_test, InputConfig, PipelineConfig,
    PipelineError, SyntheticSection,
};
use droughtcast_cli::report::{emit_report, load_bundle, ReportFormat};

/// Drought early-warning modelling pipeline: anomaly indices, model-space
/// screening, neural-network training and phase-classified evaluation.
#[derive(Parser)]
#[command(name = "droughtcast", version, about)]
struct Cli {
    /// Bound the worker-thread pool (defaults to the core count).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic panel CSV.
    Synth {
        /// Optional TOML with synthetic-generator overrides.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parse and validate a panel CSV.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        /// Write the validation report JSON here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Compute the ten anomaly-index series from a panel.
    Indices {
        #[arg(long)]
        input: PathBuf,
        /// Climatology years, e.g. 2001..2014; all-but-last-two by default.
        #[arg(long, value_parser = parse_year_range)]
        baseline: Option<YearRange>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the lagged feature table from an index table.
    Features {
        #[arg(long)]
        indices: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the chronological-holdout + k-partition split plan.
    Split {
        #[arg(long)]
        features: PathBuf,
        #[arg(long, default_value_t = 24)]
        holdout: u32,
        #[arg(long, default_value_t = 10)]
        k: u32,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Enumerate the pruned candidate-model space.
    Enumerate {
        #[arg(long)]
        out: PathBuf,
    },
    /// Screen every candidate model with penalized additive fits.
    Gam {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        #[arg(long, default_value_t = 0.70)]
        threshold: f64,
        /// Give every predictor its own spline instead of a linear term.
        #[arg(long)]
        smooth_all: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train networks for the screened models over every partition.
    Ann {
        #[arg(long)]
        features: PathBuf,
        /// Screening report whose selected models are trained.
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        /// Hidden layer sizes, e.g. 5,3.
        #[arg(long, value_delimiter = ',', default_values_t = vec![5, 3])]
        arch: Vec<usize>,
        #[arg(long, default_value_t = 1_000_000)]
        max_steps: u64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write the champion record here (for `evaluate`).
        #[arg(long)]
        champion: Option<PathBuf>,
    },
    /// Score a champion on the plan's chronological test rows.
    Evaluate {
        #[arg(long)]
        champion: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full pipeline into a bundle directory.
    Pipeline {
        /// TOML pipeline configuration; flags below override its fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        overrides: ConfigOverrides,
    },
    /// Train the models the screening stage rejected and score them on the
    /// test rows (requires a completed pipeline bundle).
    ValidateAssumption {
        #[arg(long)]
        dir: PathBuf,
    },
    /// Re-emit a bundle as json, csv-tables or markdown-summary.
    Report {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        format: String,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Every pipeline-config field is overridable from the command line.
#[derive(Args)]
struct ConfigOverrides {
    #[arg(long)]
    seed: Option<u64>,
    /// Use this panel CSV as input.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Use the synthetic generator as input (the default).
    #[arg(long)]
    synthetic: bool,
    #[arg(long, value_parser = parse_year_range)]
    baseline: Option<YearRange>,
    #[arg(long)]
    holdout_months: Option<u32>,
    #[arg(long)]
    k_partitions: Option<u32>,
    #[arg(long)]
    gam_threshold: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    arch: Option<Vec<usize>>,
    #[arg(long)]
    max_steps: Option<u64>,
    #[arg(long)]
    smooth_all: bool,
    #[arg(long)]
    validate_assumption: bool,
}

fn parse_year_range(s: &str) -> Result<YearRange, String> {
    let (start, end) = s
        .split_once("..")
        .ok_or_else(|| format!("expected <start>..<end>, got `{s}`"))?;
    let start: i32 = start.trim().parse().map_err(|e| format!("start year: {e}"))?;
    let end: i32 = end.trim().parse().map_err(|e| format!("end year: {e}"))?;
    if end < start {
        return Err(format!("empty year range {start}..{end}"));
    }
    Ok(YearRange::new(start, end))
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Format(#[from] formats::FormatError),
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Stage(String),
    #[error("panel rejected: {0} range violations")]
    PanelRejected(usize),
    #[error(transparent)]
    Report(#[from] droughtcast_cli::report::ReportError),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Pipeline(e) => e.exit_code() as u8,
            CliError::Format(e) if e.is_input_error() => 2,
            CliError::Format(_) => 3,
            CliError::Input(_) | CliError::PanelRejected(_) => 2,
            CliError::Stage(_) | CliError::Report(_) => 3,
        }
    }
}

fn stage<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Stage(e.to_string())
}

fn input_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Input(e.to_string())
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth { config, seed, out } => {
            let section: SyntheticSection = match config {
                Some(path) => read_toml(&path)?,
                None => SyntheticSection::default(),
            };
            // The flag seeds the generator; the config supplies the
            // remaining knobs.
            let mut resolved = section.resolve(seed);
            resolved.seed = seed;
            let panel = generate_synthetic_panel(&resolved).map_err(input_err)?;
            formats::write_panel_csv(&panel, &out)?;
            eprintln!(
                "wrote {} ({} counties, {} monthly rows)",
                out.display(),
                panel.counties.len(),
                panel.rfe_slots()
            );
            Ok(())
        }
        Command::Ingest { input, report } => {
            let panel = formats::parse_panel_csv(&input)?;
            let validation = validate_panel(&panel);
            if let Some(path) = report {
                formats::write_json(&path, &validation)?;
            }
            eprintln!(
                "{} rows, {} gaps, {} range violations",
                validation.n_rows,
                validation.n_gaps,
                validation.range_violations.len()
            );
            if !validation.accepted() {
                return Err(CliError::PanelRejected(validation.range_violations.len()));
            }
            Ok(())
        }
        Command::Indices {
            input,
            baseline,
            out,
        } => {
            let panel = formats::parse_panel_csv(&input)?;
            let baseline = match baseline {
                Some(range) => range,
                None => default_baseline(&panel)
                    .ok_or_else(|| CliError::Input("panel span too short".to_string()))?,
            };
            let table = build_index_table(&panel, baseline).map_err(stage)?;
            formats::write_index_table(&table, &out)?;
            eprintln!("wrote {} (baseline {baseline})", out.display());
            Ok(())
        }
        Command::Features { indices, out } => {
            let table = formats::read_index_table(&indices)?;
            let features = build_feature_table(&table).map_err(stage)?;
            formats::write_feature_table(&features, &out)?;
            eprintln!("wrote {} ({} rows)", out.display(), features.rows.len());
            Ok(())
        }
        Command::Split {
            features,
            holdout,
            k,
            seed,
            out,
        } => {
            let table = formats::read_feature_table(&features)?;
            let plan = make_split_plan(&table, holdout, k, seed).map_err(stage)?;
            formats::write_json(&out, &plan)?;
            eprintln!(
                "wrote {} ({} test rows, {} dev rows, k={k})",
                out.display(),
                plan.test.len(),
                plan.dev.len()
            );
            Ok(())
        }
        Command::Enumerate { out } => {
            let models = enumerate_models(&VariableCatalog::default());
            formats::write_json(&out, &models)?;
            eprintln!("wrote {} ({} models)", out.display(), models.len());
            Ok(())
        }
        Command::Gam {
            features,
            models,
            plan,
            threshold,
            smooth_all,
            out,
        } => {
            let table = formats::read_feature_table(&features)?;
            let specs: Vec<droughtcast::model_space::ModelSpec> = formats::read_json(&models)?;
            let plan: droughtcast::features::SplitPlan = formats::read_json(&plan)?;
            let options = GamOptions {
                smooth_all,
                ..GamOptions::default()
            };
            let report = run_gam_stage(&specs, &table, &plan, threshold, &options);
            formats::write_json(&out, &report)?;
            eprintln!(
                "wrote {} ({} of {} selected)",
                out.display(),
                report.selected_ids.len(),
                report.records.len()
            );
            if report.selected_ids.is_empty() {
                return Err(CliError::Pipeline(PipelineError::NoSurvivors(threshold)));
            }
            Ok(())
        }
        Command::Ann {
            features,
            models,
            plan,
            arch,
            max_steps,
            seed,
            out,
            champion: champion_out,
        } => {
            let table = formats::read_feature_table(&features)?;
            let gam: droughtcast::gam::GamStageReport = formats::read_json(&models)?;
            let plan: droughtcast::features::SplitPlan = formats::read_json(&plan)?;
            let all = enumerate_models(&VariableCatalog::default());
            let selected: Vec<_> = all
                .iter()
                .filter(|m| gam.selected_ids.contains(&m.id))
                .cloned()
                .collect();
            if selected.is_empty() {
                return Err(CliError::Pipeline(PipelineError::NoSurvivors(gam.threshold)));
            }
            let config = droughtcast::ann::TrainConfig {
                max_steps,
                ..droughtcast::ann::TrainConfig::default()
            };
            let report = run_ann_stage(&selected, &table, &plan, &arch, &config, seed);
            let champion = select_champion(&report).map_err(stage)?;
            formats::write_json(&out, &report)?;
            if let Some(path) = champion_out {
                formats::write_json(&path, champion)?;
            }
            eprintln!(
                "wrote {} (champion {}, validation R² {:.3})",
                out.display(),
                champion.model_id,
                champion.validation_r2
            );
            Ok(())
        }
        Command::Evaluate {
            champion,
            features,
            plan,
            out,
        } => {
            let champion: droughtcast::ann::ChampionRecord = formats::read_json(&champion)?;
            let table = formats::read_feature_table(&features)?;
            let plan: droughtcast::features::SplitPlan = formats::read_json(&plan)?;
            let report = evaluate_on_test(&champion, &table, &plan)?;
            formats::write_json(&out, &report)?;
            eprintln!(
                "wrote {} (test R² {:.3}, accuracy {:.1}%)",
                out.display(),
                report.regression.r2,
                100.0 * report.overall_accuracy
            );
            Ok(())
        }
        Command::Pipeline {
            config,
            out_dir,
            overrides,
        } => {
            let mut config: PipelineConfig = match config {
                Some(path) => read_toml(&path)?,
                None => {
                    let seed = overrides.seed.ok_or_else(|| {
                        CliError::Input("--seed (or a config file) is required".to_string())
                    })?;
                    PipelineConfig {
                        seed,
                        ..PipelineConfig::default()
                    }
                }
            };
            apply_overrides(&mut config, &overrides);
            let bundle = pipeline::run_pipeline(&config, &out_dir)?;
            eprintln!(
                "bundle at {} — champion {} (test R² {:.3})",
                out_dir.display(),
                bundle.champion.model_id,
                bundle.evaluation.regression.r2
            );
            Ok(())
        }
        Command::ValidateAssumption { dir } => {
            let manifest: pipeline::Manifest = formats::read_json(&dir.join(artifact::MANIFEST))?;
            let table = formats::read_feature_table(&dir.join(artifact::FEATURES))?;
            let plan: droughtcast::features::SplitPlan =
                formats::read_json(&dir.join(artifact::PLAN))?;
            let models: Vec<droughtcast::model_space::ModelSpec> =
                formats::read_json(&dir.join(artifact::MODELS))?;
            let gam: droughtcast::gam::GamStageReport =
                formats::read_json(&dir.join(artifact::GAM_REPORT))?;
            let evaluation: pipeline::EvalReport =
                formats::read_json(&dir.join(artifact::EVALUATION))?;
            let report = assumption_validation(
                &manifest.config,
                &models,
                &gam,
                &table,
                &plan,
                evaluation.regression.r2,
            );
            formats::write_json(&dir.join(artifact::ASSUMPTION), &report)?;
            match (&report.best_model_id, report.best_test_r2) {
                (Some(id), Some(r2)) => eprintln!(
                    "best rejected model {id}: test R² {r2:.3} (champion {:.3})",
                    report.champion_test_r2
                ),
                _ => eprintln!("no rejected model produced a usable test score"),
            }
            Ok(())
        }
        Command::Report { dir, format, out } => {
            let format: ReportFormat = format.parse()?;
            let bundle = load_bundle(&dir)?;
            let written = emit_report(&bundle, format, &out)?;
            for path in written {
                eprintln!("wrote {}", path.display());
            }
            Ok(())
        }
    }
}

fn apply_overrides(config: &mut PipelineConfig, overrides: &ConfigOverrides) {
    if let Some(seed) = overrides.seed {
        config.seed = seed;
    }
    if let Some(path) = &overrides.input {
        config.input = InputConfig::Csv { path: path.clone() };
    } else if overrides.synthetic {
        config.input = InputConfig::Synthetic {
            synthetic: SyntheticSection::default(),
        };
    }
    if let Some(base) = overrides.baseline {
        config.baseline = Some(base);
    }
    if let Some(h) = overrides.holdout_months {
        config.holdout_months = h;
    }
    if let Some(k) = overrides.k_partitions {
        config.k_partitions = k;
    }
    if let Some(t) = overrides.gam_threshold {
        config.gam_threshold = t;
    }
    if let Some(arch) = &overrides.arch {
        config.arch = arch.clone();
    }
    if let Some(steps) = overrides.max_steps {
        config.max_steps = steps;
    }
    if overrides.smooth_all {
        config.smooth_all = true;
    }
    if overrides.validate_assumption {
        config.validate_assumption = true;
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        // Falls back silently if a pool already exists (e.g. in tests).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
