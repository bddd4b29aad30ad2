//! Artifact format round-trips and the tolerated panel-CSV variants.

use droughtcast::features::build_feature_table;
use droughtcast::indices::{build_index_table, default_baseline};
use droughtcast::panel::{generate_synthetic_panel, RawPanel, SyntheticConfig};
use droughtcast_cli::formats::{
    parse_panel_csv, read_feature_table, read_index_table, write_feature_table, write_index_table,
    write_panel_csv, FormatError,
};
use proptest::prelude::*;
use tempfile::TempDir;

fn write_then_parse(panel: &RawPanel) -> RawPanel {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("panel.csv");
    write_panel_csv(panel, &path).unwrap();
    parse_panel_csv(&path).unwrap()
}

#[test]
fn panel_round_trips_with_gaps() {
    let mut panel = generate_synthetic_panel(&SyntheticConfig {
        n_counties: 2,
        n_years: 4,
        ..SyntheticConfig::default()
    })
    .unwrap();
    panel.series[0].rfe[3] = None;
    panel.series[1].ndvi[10][1] = None;
    assert_eq!(write_then_parse(&panel), panel);
}

#[test]
fn dekad3_only_rfe_variant_is_accepted() {
    let mut csv = String::from("county,year,month,dekad,ndvi,rfe\n");
    for month in 1..=3u8 {
        csv.push_str(&format!("a,2001,{month},1,0.2,\n"));
        csv.push_str(&format!("a,2001,{month},2,0.25,\n"));
        csv.push_str(&format!("a,2001,{month},3,0.3,{}\n", 10 * month));
    }
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("panel.csv");
    std::fs::write(&path, csv).unwrap();
    let panel = parse_panel_csv(&path).unwrap();
    assert_eq!(panel.series[0].rfe, vec![Some(10.0), Some(20.0), Some(30.0)]);
}

#[test]
fn inconsistent_rfe_is_rejected() {
    let mut csv = String::from("county,year,month,dekad,ndvi,rfe\n");
    csv.push_str("a,2001,1,1,0.2,10\n");
    csv.push_str("a,2001,1,2,0.2,11\n"); // differs from dekad 1
    csv.push_str("a,2001,1,3,0.2,10\n");
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("panel.csv");
    std::fs::write(&path, csv).unwrap();
    match parse_panel_csv(&path) {
        Err(FormatError::Structural(message)) => assert!(message.contains("rfe")),
        other => panic!("expected structural error, got {other:?}"),
    }
}

#[test]
fn missing_dekad_row_is_rejected() {
    let mut csv = String::from("county,year,month,dekad,ndvi,rfe\n");
    csv.push_str("a,2001,1,1,0.2,10\n");
    csv.push_str("a,2001,1,3,0.2,10\n");
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("panel.csv");
    std::fs::write(&path, csv).unwrap();
    match parse_panel_csv(&path) {
        Err(FormatError::Structural(message)) => assert!(message.contains("dekad 2")),
        other => panic!("expected structural error, got {other:?}"),
    }
}

#[test]
fn duplicate_dekad_row_cites_position() {
    let mut csv = String::from("county,year,month,dekad,ndvi,rfe\n");
    csv.push_str("a,2001,1,1,0.2,10\n");
    csv.push_str("a,2001,1,1,0.3,10\n");
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("panel.csv");
    std::fs::write(&path, csv).unwrap();
    match parse_panel_csv(&path) {
        Err(FormatError::Validation { row, .. }) => assert_eq!(row, 2),
        other => panic!("expected validation error, got {other:?}"),
    }
}

#[test]
fn index_and_feature_tables_round_trip() {
    let panel = generate_synthetic_panel(&SyntheticConfig {
        n_counties: 2,
        n_years: 5,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let baseline = default_baseline(&panel).unwrap();
    let indices = build_index_table(&panel, baseline).unwrap();
    let features = build_feature_table(&indices).unwrap();

    let dir = TempDir::new().unwrap();
    let index_path = dir.path().join("indices.csv");
    write_index_table(&indices, &index_path).unwrap();
    assert_eq!(read_index_table(&index_path).unwrap(), indices);

    let feature_path = dir.path().join("features.csv");
    write_feature_table(&features, &feature_path).unwrap();
    assert_eq!(read_feature_table(&feature_path).unwrap(), features);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// Field-by-field panel round-trip, nulls included, over random
    /// generator configs and random knocked-out cells.
    #[test]
    fn panel_round_trip_over_random_panels(
        seed in any::<u64>(),
        n_counties in 1usize..3,
        n_years in 4usize..6,
        holes in proptest::collection::vec((0usize..48, 0usize..4), 0..6),
    ) {
        let mut panel = generate_synthetic_panel(&SyntheticConfig {
            n_counties,
            n_years,
            seed,
            ..SyntheticConfig::default()
        })
        .unwrap();
        let months = panel.series[0].months();
        for (slot, what) in holes {
            let m = slot % months;
            match what {
                0 => panel.series[0].rfe[m] = None,
                d => panel.series[0].ndvi[m][(d - 1) % 3] = None,
            }
        }
        prop_assert_eq!(write_then_parse(&panel), panel);
    }
}
