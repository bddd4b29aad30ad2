//! CSV and JSON artifact formats shared by the CLI subcommands.
//!
//! Every stage persists its output, so each subcommand can be run in
//! isolation against the previous stage's files. CSV floats are written in
//! shortest round-trip form; an empty string is a null.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use droughtcast::indices::{CountyIndices, IndexKind, IndexTable, NUM_INDEX_KINDS};
use droughtcast::features::{FeatureRow, FeatureTable};
use droughtcast::panel::{CountySeries, RawPanel, DEKADS_PER_MONTH};
use droughtcast::time::MonthStamp;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("header is missing column `{0}`")]
    MissingColumn(String),
    #[error("header has unexpected column `{0}`")]
    UnknownColumn(String),
    #[error("row {row}: invalid `{column}`: {message}")]
    Value {
        row: usize,
        column: String,
        message: String,
    },
    #[error("row {row}: {message}")]
    Validation { row: usize, message: String },
    #[error("{0}")]
    Structural(String),
}

impl FormatError {
    /// Input-data problems exit with code 2; everything else is a stage
    /// failure.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, FormatError::Io(_) | FormatError::Json(_))
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), FormatError> {
    let mut writer = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut writer, value)?;
    writer.write_all(b"\n")?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, FormatError> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

fn fmt_opt(value: Option<f64>) -> String {
    value.map_or_else(String::new, |v| format!("{v}"))
}

fn parse_opt(field: &str, row: usize, column: &str) -> Result<Option<f64>, FormatError> {
    if field.is_empty() {
        return Ok(None);
    }
    field
        .parse::<f64>()
        .map(Some)
        .map_err(|e| FormatError::Value {
            row,
            column: column.to_string(),
            message: e.to_string(),
        })
}

fn parse_num<T: std::str::FromStr>(field: &str, row: usize, column: &str) -> Result<T, FormatError>
where
    T::Err: std::fmt::Display,
{
    field.parse::<T>().map_err(|e| FormatError::Value {
        row,
        column: column.to_string(),
        message: e.to_string(),
    })
}

/// Resolve the positions of exactly the expected columns, naming any
/// missing or unexpected one.
fn header_positions<S: AsRef<str>>(
    headers: &csv::StringRecord,
    expected: &[S],
) -> Result<Vec<usize>, FormatError> {
    for field in headers.iter() {
        if !expected.iter().any(|e| e.as_ref() == field) {
            return Err(FormatError::UnknownColumn(field.to_string()));
        }
    }
    expected
        .iter()
        .map(|name| {
            headers
                .iter()
                .position(|h| h == name.as_ref())
                .ok_or_else(|| FormatError::MissingColumn(name.as_ref().to_string()))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Panel CSV: county, year, month, dekad, ndvi, rfe
// ---------------------------------------------------------------------------

pub const PANEL_COLUMNS: [&str; 6] = ["county", "year", "month", "dekad", "ndvi", "rfe"];

pub fn write_panel_csv(panel: &RawPanel, path: &Path) -> Result<(), FormatError> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(PANEL_COLUMNS)?;
    for (county, series) in panel.counties.iter().zip(&panel.series) {
        for offset in 0..series.months() {
            let stamp = series.stamp(offset);
            for dekad in 0..DEKADS_PER_MONTH {
                writer.write_record([
                    county.as_str(),
                    &stamp.year.to_string(),
                    &stamp.month.to_string(),
                    &(dekad + 1).to_string(),
                    &fmt_opt(series.ndvi[offset][dekad]),
                    &fmt_opt(series.rfe[offset]),
                ])?;
            }
        }
    }
    writer.flush()?;
    Ok(())
}

#[derive(Default, Clone)]
struct MonthAccumulator {
    /// Per dekad: row seen, and its NDVI / RFE cells.
    seen: [bool; DEKADS_PER_MONTH],
    ndvi: [Option<f64>; DEKADS_PER_MONTH],
    rfe: [Option<f64>; DEKADS_PER_MONTH],
}

pub fn parse_panel_csv(path: &Path) -> Result<RawPanel, FormatError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let positions = header_positions(reader.headers()?, &PANEL_COLUMNS)?;

    let mut counties: Vec<String> = Vec::new();
    let mut data: BTreeMap<usize, BTreeMap<i64, MonthAccumulator>> = BTreeMap::new();
    let mut n_rows = 0usize;

    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = i + 1; // 1-based data row number
        n_rows += 1;
        let field = |slot: usize| record.get(positions[slot]).unwrap_or("");

        let county = field(0).to_string();
        let year: i32 = parse_num(field(1), row, "year")?;
        let month: u8 = parse_num(field(2), row, "month")?;
        if !(1..=12).contains(&month) {
            return Err(FormatError::Validation {
                row,
                message: format!("month {month} out of range 1..=12"),
            });
        }
        let dekad: u8 = parse_num(field(3), row, "dekad")?;
        if !(1..=3).contains(&dekad) {
            return Err(FormatError::Validation {
                row,
                message: format!("dekad {dekad} out of range 1..=3"),
            });
        }
        let ndvi = parse_opt(field(4), row, "ndvi")?;
        if let Some(v) = ndvi {
            if !(-1.0..=1.0).contains(&v) {
                return Err(FormatError::Validation {
                    row,
                    message: format!("ndvi {v} outside [-1, 1]"),
                });
            }
        }
        let rfe = parse_opt(field(5), row, "rfe")?;
        if let Some(v) = rfe {
            if v < 0.0 {
                return Err(FormatError::Validation {
                    row,
                    message: format!("rfe {v} is negative"),
                });
            }
        }

        let county_idx = match counties.iter().position(|c| c == &county) {
            Some(idx) => idx,
            None => {
                counties.push(county.clone());
                counties.len() - 1
            }
        };
        let stamp = MonthStamp::new(year, month);
        let acc = data
            .entry(county_idx)
            .or_default()
            .entry(stamp.index())
            .or_default();
        let d = dekad as usize - 1;
        if acc.seen[d] {
            return Err(FormatError::Validation {
                row,
                message: format!("duplicate entry for {county} {stamp} dekad {dekad}"),
            });
        }
        acc.seen[d] = true;
        acc.ndvi[d] = ndvi;
        acc.rfe[d] = rfe;
    }

    if n_rows == 0 {
        return Err(FormatError::Structural("no records".to_string()));
    }

    let mut series = Vec::with_capacity(counties.len());
    for (county_idx, months) in &data {
        let county = &counties[*county_idx];
        let first = *months.keys().next().unwrap();
        let last = *months.keys().last().unwrap();
        let mut ndvi = Vec::with_capacity((last - first + 1) as usize);
        let mut rfe = Vec::with_capacity(ndvi.capacity());
        for index in first..=last {
            let stamp = MonthStamp::from_index(index);
            let Some(acc) = months.get(&index) else {
                return Err(FormatError::Structural(format!(
                    "county {county}: months are not contiguous; {stamp} is absent"
                )));
            };
            if let Some(missing) = acc.seen.iter().position(|s| !s) {
                return Err(FormatError::Structural(format!(
                    "county {county} {stamp}: dekad {} row is absent (every month needs 3)",
                    missing + 1
                )));
            }
            // RFE may repeat identically across the three dekad rows or
            // appear only on dekad 3.
            let month_rfe = match acc.rfe {
                [Some(a), Some(b), Some(c)] if a == b && b == c => Some(c),
                [None, None, value] => value,
                _ => {
                    return Err(FormatError::Structural(format!(
                        "county {county} {stamp}: inconsistent rfe across dekad rows \
                         (expected identical values or dekad-3 only)"
                    )));
                }
            };
            ndvi.push(acc.ndvi);
            rfe.push(month_rfe);
        }
        series.push(CountySeries {
            start: MonthStamp::from_index(first),
            ndvi,
            rfe,
        });
    }

    Ok(RawPanel { counties, series })
}

// ---------------------------------------------------------------------------
// Index table CSV: county, year, month, <ten index kinds>
// ---------------------------------------------------------------------------

fn index_header() -> Vec<String> {
    let mut header = vec!["county".to_string(), "year".to_string(), "month".to_string()];
    header.extend(IndexKind::ALL.iter().map(|k| k.name().to_string()));
    header
}

pub fn write_index_table(table: &IndexTable, path: &Path) -> Result<(), FormatError> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(index_header())?;
    for (county, block) in table.counties.iter().zip(&table.per_county) {
        for (offset, row) in block.rows.iter().enumerate() {
            let stamp = block.start.plus(offset as i64);
            let mut record = vec![
                county.clone(),
                stamp.year.to_string(),
                stamp.month.to_string(),
            ];
            record.extend(row.iter().map(|v| fmt_opt(*v)));
            writer.write_record(record)?;
        }
    }
    writer.flush()?;
    Ok(())
}

pub fn read_index_table(path: &Path) -> Result<IndexTable, FormatError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let positions = header_positions(reader.headers()?, &index_header())?;

    let mut counties: Vec<String> = Vec::new();
    let mut data: BTreeMap<usize, BTreeMap<i64, [Option<f64>; NUM_INDEX_KINDS]>> = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = i + 1;
        let field = |slot: usize| record.get(positions[slot]).unwrap_or("");
        let county = field(0).to_string();
        let year: i32 = parse_num(field(1), row, "year")?;
        let month: u8 = parse_num(field(2), row, "month")?;
        let county_idx = match counties.iter().position(|c| c == &county) {
            Some(idx) => idx,
            None => {
                counties.push(county.clone());
                counties.len() - 1
            }
        };
        let mut values = [None; NUM_INDEX_KINDS];
        for (k, slot) in values.iter_mut().enumerate() {
            *slot = parse_opt(field(3 + k), row, IndexKind::ALL[k].name())?;
        }
        let previous = data
            .entry(county_idx)
            .or_default()
            .insert(MonthStamp::new(year, month).index(), values);
        if previous.is_some() {
            return Err(FormatError::Validation {
                row,
                message: format!("duplicate entry for {county} {year}-{month:02}"),
            });
        }
    }
    if counties.is_empty() {
        return Err(FormatError::Structural("no records".to_string()));
    }

    let mut per_county = Vec::with_capacity(counties.len());
    for (county_idx, months) in &data {
        let county = &counties[*county_idx];
        let first = *months.keys().next().unwrap();
        let last = *months.keys().last().unwrap();
        let mut rows = Vec::with_capacity((last - first + 1) as usize);
        for index in first..=last {
            match months.get(&index) {
                Some(values) => rows.push(*values),
                None => {
                    return Err(FormatError::Structural(format!(
                        "county {county}: months are not contiguous; {} is absent",
                        MonthStamp::from_index(index)
                    )));
                }
            }
        }
        per_county.push(CountyIndices {
            start: MonthStamp::from_index(first),
            rows,
        });
    }
    Ok(IndexTable {
        counties,
        per_county,
    })
}

// ---------------------------------------------------------------------------
// Feature table CSV: county, year, month, <30 lags>, month_sine, target
// ---------------------------------------------------------------------------

pub fn write_feature_table(table: &FeatureTable, path: &Path) -> Result<(), FormatError> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec!["county".to_string(), "year".to_string(), "month".to_string()];
    header.extend(table.predictor_names.iter().cloned());
    header.push("month_sine".to_string());
    header.push("target".to_string());
    writer.write_record(&header)?;
    for row in &table.rows {
        let mut record = vec![
            table.counties[row.county].clone(),
            row.stamp.year.to_string(),
            row.stamp.month.to_string(),
        ];
        record.extend(row.predictors.iter().map(|v| format!("{v}")));
        record.push(format!("{}", row.month_sine));
        record.push(format!("{}", row.target));
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_feature_table(path: &Path) -> Result<FeatureTable, FormatError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let fields: Vec<&str> = headers.iter().collect();
    if fields.len() < 6
        || fields[0] != "county"
        || fields[1] != "year"
        || fields[2] != "month"
        || fields[fields.len() - 2] != "month_sine"
        || fields[fields.len() - 1] != "target"
    {
        return Err(FormatError::Structural(
            "feature header must be county, year, month, <predictors>, month_sine, target"
                .to_string(),
        ));
    }
    let predictor_names: Vec<String> = fields[3..fields.len() - 2]
        .iter()
        .map(|s| s.to_string())
        .collect();
    // Model specs address predictors by canonical column position, so the
    // file must carry exactly the catalog columns in catalog order.
    let catalog = droughtcast::model_space::VariableCatalog::default();
    let expected: Vec<&str> = catalog.entries.iter().map(|e| e.name.as_str()).collect();
    if predictor_names != expected {
        return Err(FormatError::Structural(format!(
            "feature predictors must be the {} catalog columns in canonical order",
            expected.len()
        )));
    }

    let mut counties: Vec<String> = Vec::new();
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row_no = i + 1;
        let county = record.get(0).unwrap_or("").to_string();
        let year: i32 = parse_num(record.get(1).unwrap_or(""), row_no, "year")?;
        let month: u8 = parse_num(record.get(2).unwrap_or(""), row_no, "month")?;
        let county_idx = match counties.iter().position(|c| c == &county) {
            Some(idx) => idx,
            None => {
                counties.push(county.clone());
                counties.len() - 1
            }
        };
        let mut predictors = Vec::with_capacity(predictor_names.len());
        for (k, name) in predictor_names.iter().enumerate() {
            predictors.push(parse_num(record.get(3 + k).unwrap_or(""), row_no, name)?);
        }
        let month_sine: f64 = parse_num(
            record.get(3 + predictor_names.len()).unwrap_or(""),
            row_no,
            "month_sine",
        )?;
        let target: f64 = parse_num(
            record.get(4 + predictor_names.len()).unwrap_or(""),
            row_no,
            "target",
        )?;
        rows.push(FeatureRow {
            county: county_idx,
            stamp: MonthStamp::new(year, month),
            predictors,
            month,
            month_sine,
            target,
        });
    }
    if rows.is_empty() {
        return Err(FormatError::Structural("no records".to_string()));
    }
    Ok(FeatureTable {
        counties,
        predictor_names,
        rows,
    })
}
