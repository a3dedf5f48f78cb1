//! Whole-pipeline integration at desk scale: raw check-in text through
//! parsing, filtering, splitting, matrices, kernel, training, and ranking.

use std::io::Cursor;

use saenad::data::{
    build_matrices, filter_sparse, parse_checkins, split_train_test, Dataset, SplitSpec,
};
use saenad::eval::evaluate;
use saenad::geo::{build_kernel, Metric};
use saenad::model::{
    read_checkpoint, write_checkpoint, Architecture, Variant,
};
use saenad::rng::{stream_rng, Stream};
use saenad::train::{train, TrainConfig};

/// Two 6-POI neighborhoods far apart; 10 users with 8+ visits each, biased
/// to one neighborhood.
fn raw_data(seed: u64) -> (String, String) {
    use rand::Rng;
    let mut rng = stream_rng(seed, Stream::Synth);
    let mut coords = String::new();
    for p in 0..12 {
        let (lat0, lon0) = if p < 6 { (40.0, -100.0) } else { (30.0, -80.0) };
        coords.push_str(&format!(
            "p{p}\t{}\t{}\n",
            lat0 + rng.random_range(-0.05..0.05),
            lon0 + rng.random_range(-0.05..0.05)
        ));
    }
    let mut checkins = String::new();
    for u in 0..10 {
        let home = u % 2;
        for t in 0..8 {
            let p = if rng.random::<f64>() < 0.85 {
                home * 6 + rng.random_range(0..6)
            } else {
                (1 - home) * 6 + rng.random_range(0..6)
            };
            checkins.push_str(&format!("u{u}\tp{p}\t{t}\n"));
        }
        checkins.push_str(&format!("u{u}\tp{}\t8\n", home * 6));
        checkins.push_str(&format!("u{u}\tp{}\t9\n", home * 6 + 1));
    }
    (checkins, coords)
}

#[test]
fn end_to_end_pipeline_produces_consistent_artifacts() {
    let (checkins, coords) = raw_data(1);
    let log = parse_checkins(Cursor::new(&checkins), Cursor::new(&coords)).unwrap();
    let filtered = filter_sparse(&log, 2, 1).unwrap();
    let spec = SplitSpec {
        test_fraction: 0.2,
        seed: 11,
        partition_count: 1,
    };
    let (train_log, test_sets) = split_train_test(&filtered, &spec).unwrap();
    let data = build_matrices(&train_log, 2.0, 1e-5).unwrap();
    let kernel = build_kernel(&train_log.catalog, 60.0, 0.1, Metric::EuclideanDegrees).unwrap();

    let arch = Architecture {
        num_pois: data.num_pois,
        hidden1: 12,
        bottleneck: 6,
        aspects: 3,
        variant: Variant::SaeNad,
        dropout_p: 0.2,
    };
    let config = TrainConfig {
        num_iterations: 40,
        batch_size: 4,
        seed: 11,
        ..TrainConfig::default()
    };
    let (params, history) = train::<f64>(&config, &arch, &data, Some(&kernel)).unwrap();
    assert_eq!(history.epoch_mean_objective.len(), 40);
    assert!(history.epoch_mean_objective[39] < history.epoch_mean_objective[0]);

    // checkpoint bytes round-trip and reproduce the evaluation exactly
    let bytes = write_checkpoint(&arch, config.seed, &params);
    let (arch2, _, params2) = read_checkpoint::<f64>(&bytes).unwrap();
    let report = evaluate(&params, &arch, Some(&kernel), &data, &test_sets, &[3, 5]).unwrap();
    let report2 = evaluate(&params2, &arch2, Some(&kernel), &data, &test_sets, &[3, 5]).unwrap();
    assert_eq!(report, report2);
    assert!(report.users_evaluated > 0);
    for row in &report.rows {
        assert!((0.0..=1.0).contains(&row.precision));
        assert!((0.0..=1.0).contains(&row.recall));
        assert!((0.0..=1.0).contains(&row.map));
    }
    assert!(report.rows[1].recall >= report.rows[0].recall);
}

#[test]
fn dataset_cache_round_trips_through_the_pipeline() {
    let (checkins, coords) = raw_data(2);
    let log = parse_checkins(Cursor::new(&checkins), Cursor::new(&coords)).unwrap();
    let filtered = filter_sparse(&log, 1, 1).unwrap();
    let spec = SplitSpec {
        test_fraction: 0.25,
        seed: 3,
        partition_count: 2,
    };
    let (train_log, test_sets) = split_train_test(&filtered, &spec).unwrap();
    let dataset = Dataset {
        user_ids: train_log.user_ids.clone(),
        catalog: train_log.catalog.clone(),
        interactions: build_matrices(&train_log, 2.0, 1e-5).unwrap(),
        test_sets,
    };
    let restored = Dataset::from_bytes(&dataset.to_bytes()).unwrap();
    assert_eq!(dataset, restored);

    // training from the restored cache is bit-identical
    let arch = Architecture {
        num_pois: dataset.interactions.num_pois,
        hidden1: 8,
        bottleneck: 4,
        aspects: 2,
        variant: Variant::Wae,
        dropout_p: 0.0,
    };
    let config = TrainConfig {
        num_iterations: 5,
        batch_size: 16,
        seed: 9,
        ..TrainConfig::default()
    };
    let (p1, _) = train::<f64>(&config, &arch, &dataset.interactions, None).unwrap();
    let (p2, _) = train::<f64>(&config, &arch, &restored.interactions, None).unwrap();
    assert_eq!(p1, p2);
}
