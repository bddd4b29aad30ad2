//! Bundle re-emission as CSV tables or a markdown summary.

use std::path::Path;

use thiserror::Error;

use droughtcast::gam::GamStageReport;
use droughtcast::ann::AnnStageReport;

use crate::formats::{self, FormatError};
use crate::pipeline::{artifact, AssumptionReport, EvalReport, Manifest};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("unknown report format `{0}` (expected json, csv-tables or markdown-summary)")]
    UnknownFormat(String),
    #[error("bundle is incomplete: missing {0}")]
    MissingArtifact(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    CsvTables,
    MarkdownSummary,
}

impl std::str::FromStr for ReportFormat {
    type Err = ReportError;
    fn from_str(s: &str) -> Result<Self, ReportError> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv-tables" => Ok(ReportFormat::CsvTables),
            "markdown-summary" => Ok(ReportFormat::MarkdownSummary),
            other => Err(ReportError::UnknownFormat(other.to_string())),
        }
    }
}

/// The artifacts a report draws on, loaded back from a bundle directory.
pub struct LoadedBundle {
    pub manifest: Manifest,
    pub gam: GamStageReport,
    pub ann: AnnStageReport,
    pub evaluation: EvalReport,
    pub assumption: Option<AssumptionReport>,
}

pub fn load_bundle(dir: &Path) -> Result<LoadedBundle, ReportError> {
    let must = |name: &str| {
        let path = dir.join(name);
        if path.exists() {
            Ok(path)
        } else {
            Err(ReportError::MissingArtifact(name.to_string()))
        }
    };
    let assumption_path = dir.join(artifact::ASSUMPTION);
    Ok(LoadedBundle {
        manifest: formats::read_json(&must(artifact::MANIFEST)?)?,
        gam: formats::read_json(&must(artifact::GAM_REPORT)?)?,
        ann: formats::read_json(&must(artifact::ANN_REPORT)?)?,
        evaluation: formats::read_json(&must(artifact::EVALUATION)?)?,
        assumption: if assumption_path.exists() {
            Some(formats::read_json(&assumption_path)?)
        } else {
            None
        },
    })
}

/// Emit the bundle in the requested format; returns the files written.
pub fn emit_report(
    bundle: &LoadedBundle,
    format: ReportFormat,
    out_dir: &Path,
) -> Result<Vec<std::path::PathBuf>, ReportError> {
    std::fs::create_dir_all(out_dir)?;
    match format {
        ReportFormat::Json => {
            let path = out_dir.join("report.json");
            let combined = serde_json::json!({
                "manifest": bundle.manifest,
                "gam": bundle.gam,
                "ann": bundle.ann,
                "evaluation": bundle.evaluation,
                "assumption": bundle.assumption,
            });
            formats::write_json(&path, &combined)?;
            Ok(vec![path])
        }
        ReportFormat::CsvTables => {
            let selected = out_dir.join("gam_selected.csv");
            write_gam_table(&bundle.gam, &selected)?;
            let ann = out_dir.join("ann_models.csv");
            write_ann_table(&bundle.ann, &ann)?;
            Ok(vec![selected, ann])
        }
        ReportFormat::MarkdownSummary => {
            let path = out_dir.join("summary.md");
            std::fs::write(&path, markdown_summary(bundle))?;
            Ok(vec![path])
        }
    }
}

/// Screening survivors, ordered by training R² (the report is already
/// rank-ordered).
fn write_gam_table(gam: &GamStageReport, path: &Path) -> Result<(), FormatError> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record([
        "no",
        "model",
        "r2_training",
        "r2_validation",
        "overfit_index",
        "overfit",
        "lag_time",
    ])?;
    for (i, record) in gam.records.iter().filter(|r| r.selected).enumerate() {
        writer.write_record([
            (i + 1).to_string(),
            record.model_id.clone(),
            record.train.map_or_else(String::new, |m| format!("{}", m.r2)),
            record
                .validation
                .map_or_else(String::new, |m| format!("{}", m.r2)),
            record
                .overfit_index
                .map_or_else(String::new, |v| format!("{v}")),
            if record.overfit { "Yes" } else { "No" }.to_string(),
            record.lag.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

/// Per-model network results with min/max/mean columns, ordered by mean
/// validation R² descending.
fn write_ann_table(ann: &AnnStageReport, path: &Path) -> Result<(), FormatError> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record([
        "no",
        "model",
        "train_min",
        "train_max",
        "train_mean",
        "validation_min",
        "validation_max",
        "validation_mean",
        "overfit_index",
        "overfit",
    ])?;
    let mut records: Vec<_> = ann.records.iter().collect();
    records.sort_by(|a, b| {
        let ra = a.validation_r2.map_or(f64::NEG_INFINITY, |x| x.mean);
        let rb = b.validation_r2.map_or(f64::NEG_INFINITY, |x| x.mean);
        rb.partial_cmp(&ra)
            .unwrap()
            .then_with(|| a.model_id.cmp(&b.model_id))
    });
    for (i, record) in records.iter().enumerate() {
        let agg = |a: Option<droughtcast::ann::Aggregate>, f: fn(droughtcast::ann::Aggregate) -> f64| {
            a.map_or_else(String::new, |x| format!("{}", f(x)))
        };
        writer.write_record([
            (i + 1).to_string(),
            record.model_id.clone(),
            agg(record.train_r2, |a| a.min),
            agg(record.train_r2, |a| a.max),
            agg(record.train_r2, |a| a.mean),
            agg(record.validation_r2, |a| a.min),
            agg(record.validation_r2, |a| a.max),
            agg(record.validation_r2, |a| a.mean),
            record
                .overfit_index
                .map_or_else(String::new, |v| format!("{v}")),
            if record.overfit { "Yes" } else { "No" }.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

fn histogram(values: &[f64]) -> Vec<(String, usize)> {
    // 0.1-wide bins from 0 upward; everything below zero pools into one bin.
    let mut negative = 0usize;
    let mut bins = vec![0usize; 10];
    for &v in values {
        if v < 0.0 {
            negative += 1;
        } else {
            let idx = ((v * 10.0).floor() as usize).min(9);
            bins[idx] += 1;
        }
    }
    let mut out = Vec::new();
    if negative > 0 {
        out.push(("< 0.0".to_string(), negative));
    }
    for (i, count) in bins.iter().enumerate() {
        out.push((
            format!("{:.1}–{:.1}", i as f64 / 10.0, (i + 1) as f64 / 10.0),
            *count,
        ));
    }
    out
}

fn markdown_summary(bundle: &LoadedBundle) -> String {
    use std::fmt::Write as _;
    let mut out = String::new();
    let manifest = &bundle.manifest;
    let _ = writeln!(out, "# Run summary\n");
    let _ = writeln!(out, "- config hash: `{}`", manifest.config_hash);
    let _ = writeln!(out, "- tool version: {}", manifest.tool_version);
    let _ = writeln!(out, "- seed: {}", manifest.config.seed);
    let _ = writeln!(
        out,
        "- screening threshold: {} ({} survivors)",
        bundle.gam.threshold,
        bundle.gam.selected_ids.len()
    );

    let _ = writeln!(out, "\n## Screening R² distribution\n");
    let _ = writeln!(out, "| R² range | training | validation |");
    let _ = writeln!(out, "|---|---|---|");
    let train: Vec<f64> = bundle
        .gam
        .records
        .iter()
        .filter_map(|r| r.train.map(|m| m.r2))
        .collect();
    let valid: Vec<f64> = bundle
        .gam
        .records
        .iter()
        .filter_map(|r| r.validation.map(|m| m.r2))
        .collect();
    let train_hist = histogram(&train);
    let valid_hist = histogram(&valid);
    for (label, count) in &train_hist {
        let valid_count = valid_hist
            .iter()
            .find(|(l, _)| l == label)
            .map_or(0, |(_, c)| *c);
        let _ = writeln!(out, "| {label} | {count} | {valid_count} |");
    }

    let _ = writeln!(out, "\n## Performance by lag\n");
    let _ = writeln!(out, "| lag | models | mean training R² | max training R² |");
    let _ = writeln!(out, "|---|---|---|---|");
    for lag in [1u8, 2, 3] {
        let r2s: Vec<f64> = bundle
            .gam
            .records
            .iter()
            .filter(|r| r.lag == lag)
            .filter_map(|r| r.train.map(|m| m.r2))
            .collect();
        if r2s.is_empty() {
            continue;
        }
        let mean = r2s.iter().sum::<f64>() / r2s.len() as f64;
        let max = r2s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let _ = writeln!(out, "| {lag} | {} | {mean:.3} | {max:.3} |", r2s.len());
    }

    let eval = &bundle.evaluation;
    let _ = writeln!(out, "\n## Champion\n");
    let _ = writeln!(out, "- model: `{}` (partition {})", eval.model_id, eval.partition);
    let _ = writeln!(
        out,
        "- test: R² {:.3}, RMSE {:.3}, MAE {:.3} over {} rows",
        eval.regression.r2, eval.regression.rmse, eval.regression.mae, eval.n_test_rows
    );
    let _ = writeln!(out, "- phase accuracy: {:.1}%", 100.0 * eval.overall_accuracy);
    for county in &eval.per_county_accuracy {
        let _ = writeln!(
            out,
            "  - {}: {:.1}% over {} months",
            county.county,
            100.0 * county.accuracy,
            county.n_rows
        );
    }
    if let Some(auroc) = eval.auroc {
        let _ = writeln!(out, "- multi-class AUROC: {:.2}%", 100.0 * auroc);
    }

    if let Some(assumption) = &bundle.assumption {
        let _ = writeln!(out, "\n## Non-selected models on test data\n");
        let _ = writeln!(
            out,
            "- models trained: {} (champion test R² {:.3})",
            assumption.records.len(),
            assumption.champion_test_r2
        );
        if let (Some(best_id), Some(best)) = (&assumption.best_model_id, assumption.best_test_r2) {
            let _ = writeln!(out, "- best rejected model: `{best_id}` at test R² {best:.3}");
        }
        let test: Vec<f64> = assumption.records.iter().filter_map(|r| r.test_r2).collect();
        let _ = writeln!(out, "\n| test R² range | models |");
        let _ = writeln!(out, "|---|---|");
        for (label, count) in histogram(&test) {
            let _ = writeln!(out, "| {label} | {count} |");
        }
    }
    out
}
