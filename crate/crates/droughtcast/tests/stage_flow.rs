//! End-to-end flow over the library stages on a small synthetic panel.

use droughtcast::ann::{run_ann_stage, TrainConfig};
use droughtcast::features::{build_feature_table, make_split_plan};
use droughtcast::gam::{run_gam_stage, GamOptions};
use droughtcast::indices::{build_index_table, default_baseline, IndexKind};
use droughtcast::model_space::{enumerate_models, VariableCatalog};
use droughtcast::panel::{generate_synthetic_panel, validate_panel, SyntheticConfig};

fn small_config() -> SyntheticConfig {
    SyntheticConfig {
        n_counties: 2,
        n_years: 8,
        seed: 5,
        ..SyntheticConfig::default()
    }
}

#[test]
fn stages_compose_on_a_small_panel() {
    let panel = generate_synthetic_panel(&small_config()).unwrap();
    assert!(validate_panel(&panel).accepted());

    let baseline = default_baseline(&panel).unwrap();
    let indices = build_index_table(&panel, baseline).unwrap();
    let table = build_feature_table(&indices).unwrap();
    assert_eq!(table.predictor_names.len(), 30);
    assert!(table.rows.len() > 150);

    let plan = make_split_plan(&table, 12, 3, 5).unwrap();
    assert_eq!(plan.partitions.len(), 3);

    // Screen a handful of models spanning the lags.
    let models: Vec<_> = enumerate_models(&VariableCatalog::default())
        .into_iter()
        .filter(|m| {
            m.id == "VCIdekad_lag1+RFE1M_lag1"
                || m.id == "VCIdekad_lag2+RFE1M_lag2"
                || m.id == "VCI1M_lag3"
        })
        .collect();
    assert_eq!(models.len(), 3);
    let gam = run_gam_stage(&models, &table, &plan, 0.5, &GamOptions::default());
    assert_eq!(gam.records.len(), 3);
    assert!(gam.records.iter().all(|r| r.failures.is_empty()));
    // Lag-1 information dominates on this generator.
    assert_eq!(gam.records[0].model_id, "VCIdekad_lag1+RFE1M_lag1");

    let train_config = TrainConfig {
        max_steps: 50_000,
        ..TrainConfig::default()
    };
    let ann = run_ann_stage(&models, &table, &plan, &[5, 3], &train_config, 5);
    assert_eq!(ann.records.len(), 3);
    for record in &ann.records {
        assert_eq!(record.cells.len(), 3);
        if let (Some(train), Some(valid)) = (&record.train_r2, &record.validation_r2) {
            assert!(train.min <= train.mean && train.mean <= train.max);
            assert!(valid.min <= valid.mean && valid.mean <= valid.max);
        }
    }
    // A champion exists exactly when some model is eligible: trained at
    // least once and not flagged overfit.
    match &ann.champion {
        Some(champion) => {
            let record = ann.record(&champion.model_id).unwrap();
            assert!(!record.overfit);
            assert_eq!(record.best_partition, Some(champion.partition));
        }
        None => {
            assert!(ann
                .records
                .iter()
                .all(|r| r.overfit || r.validation_r2.is_none()));
            assert!(droughtcast::ann::select_champion(&ann).is_err());
        }
    }
}

#[test]
fn ann_stage_is_bit_reproducible() {
    let panel = generate_synthetic_panel(&small_config()).unwrap();
    let baseline = default_baseline(&panel).unwrap();
    let indices = build_index_table(&panel, baseline).unwrap();
    let table = build_feature_table(&indices).unwrap();
    let plan = make_split_plan(&table, 12, 2, 9).unwrap();

    let models: Vec<_> = enumerate_models(&VariableCatalog::default())
        .into_iter()
        .filter(|m| m.lag == 1 && m.predictors.len() == 2)
        .take(3)
        .collect();
    let config = TrainConfig {
        max_steps: 20_000,
        ..TrainConfig::default()
    };
    let a = run_ann_stage(&models, &table, &plan, &[5, 3], &config, 31);
    let b = run_ann_stage(&models, &table, &plan, &[5, 3], &config, 31);
    assert_eq!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&b).unwrap()
    );
}

#[test]
fn index_table_target_matches_feature_target() {
    let panel = generate_synthetic_panel(&small_config()).unwrap();
    let baseline = default_baseline(&panel).unwrap();
    let indices = build_index_table(&panel, baseline).unwrap();
    let table = build_feature_table(&indices).unwrap();
    for row in table.rows.iter().step_by(17) {
        let offset = (row.stamp.index() - indices.per_county[row.county].start.index()) as usize;
        assert_eq!(
            Some(row.target),
            indices.value(row.county, offset, IndexKind::Vci3M)
        );
    }
}
