//! End-to-end command behavior on a small synthetic dataset: cache hits,
//! checkpoint determinism, report emission, and the exit-status mapping.

use std::path::{Path, PathBuf};

use saenad_cli::commands::{cmd_eval, cmd_gradcheck, cmd_preprocess, cmd_synth, cmd_train};
use saenad_cli::config::RunConfig;
use saenad_cli::error::{CliError, EXIT_GRADCHECK, EXIT_IO, EXIT_VALIDATION};
use saenad_cli::synth::SyntheticSpec;

fn small_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        clusters: 3,
        pois_per_cluster: 8,
        users: 12,
        checkins_per_user: 10,
        intra_cluster_prob: 0.9,
        coordinate_spread: 0.04,
        seed,
    }
}

fn small_config(dir: &Path, seed: u64) -> RunConfig {
    let spec = small_spec(seed);
    let checkins = dir.join("checkins.tsv");
    let coords = dir.join("coords.tsv");
    cmd_synth(&spec, &checkins, &coords).unwrap();
    let mut cfg = RunConfig::default();
    cfg.checkins = checkins;
    cfg.coords = coords;
    cfg.cache_dir = dir.join("cache");
    cfg.checkpoint = dir.join("model.ckpt");
    cfg.hidden1 = 16;
    cfg.bottleneck = 8;
    cfg.aspects = 4;
    cfg.dropout = 0.0;
    cfg.min_user_checkins = 1;
    cfg.min_poi_visits = 1;
    cfg.train.num_iterations = 3;
    cfg.train.batch_size = 8;
    cfg.train.seed = seed;
    cfg.cutoffs = vec![3, 5];
    cfg
}

#[test]
fn preprocess_writes_manifest_and_hits_cache() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 1);
    let first = cmd_preprocess(&cfg).unwrap();
    assert!(!first.cache_hit);
    let manifest = std::fs::read_to_string(&first.manifest_path).unwrap();
    assert!(manifest.contains("min_user_checkins\t1"));
    assert!(manifest.contains(&format!("key\t{}", first.key)));
    assert!(manifest.contains("users\t12"));

    let second = cmd_preprocess(&cfg).unwrap();
    assert!(second.cache_hit);
    assert_eq!(first.key, second.key);
    assert_eq!(
        manifest,
        std::fs::read_to_string(&second.manifest_path).unwrap()
    );
    // lock released
    assert!(!cfg.cache_dir.join(".lock").exists());
}

#[test]
fn gowalla_style_thresholds_are_recorded() {
    let dir = tempfile::tempdir().unwrap();
    // Dense enough data to survive (20, 20) filtering: 30 users all visiting
    // the same small POI universe repeatedly.
    let spec = SyntheticSpec {
        clusters: 1,
        pois_per_cluster: 5,
        users: 30,
        checkins_per_user: 25,
        intra_cluster_prob: 1.0,
        coordinate_spread: 0.02,
        seed: 2,
    };
    let mut cfg = small_config(dir.path(), 2);
    cmd_synth(&spec, &cfg.checkins, &cfg.coords).unwrap();
    cfg.min_user_checkins = 20;
    cfg.min_poi_visits = 20;
    let outcome = cmd_preprocess(&cfg).unwrap();
    let manifest = std::fs::read_to_string(&outcome.manifest_path).unwrap();
    assert!(manifest.contains("min_user_checkins\t20"));
    assert!(manifest.contains("min_poi_visits\t20"));
}

#[test]
fn missing_input_is_an_io_error_without_partial_cache() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path(), 3);
    cfg.coords = PathBuf::from(dir.path().join("nope.tsv"));
    let err = cmd_preprocess(&cfg).unwrap_err();
    assert_eq!(err.exit_code(), EXIT_IO);
    // nothing half-written
    let leftovers: Vec<_> = std::fs::read_dir(&cfg.cache_dir)
        .map(|rd| rd.collect())
        .unwrap_or_default();
    assert!(leftovers.is_empty(), "{leftovers:?}");
}

#[test]
fn train_without_cache_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 4);
    let err = cmd_train(&cfg).unwrap_err();
    assert_eq!(err.exit_code(), EXIT_VALIDATION);
    assert!(err.to_string().contains("preprocess"));
}

#[test]
fn train_twice_yields_identical_checkpoints_and_logs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 5);
    cmd_preprocess(&cfg).unwrap();
    let first = cmd_train(&cfg).unwrap();
    let bytes1 = std::fs::read(&first.checkpoint_path).unwrap();
    let log1 = std::fs::read(&first.log_path).unwrap();
    let second = cmd_train(&cfg).unwrap();
    let bytes2 = std::fs::read(&second.checkpoint_path).unwrap();
    let log2 = std::fs::read(&second.log_path).unwrap();
    assert_eq!(bytes1, bytes2);
    assert_eq!(log1, log2);
    assert!(first.final_objective.is_finite());
    // progress log shape: iteration<TAB>batch<TAB>objective
    let text = String::from_utf8(log1).unwrap();
    for line in text.lines() {
        let fields: Vec<_> = line.split('\t').collect();
        assert_eq!(fields.len(), 3, "{line:?}");
        fields[0].parse::<usize>().unwrap();
        fields[1].parse::<usize>().unwrap();
        fields[2].parse::<f64>().unwrap();
    }
}

#[test]
fn zero_iterations_checkpoints_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path(), 6);
    cfg.train.num_iterations = 0;
    cmd_preprocess(&cfg).unwrap();
    let outcome = cmd_train(&cfg).unwrap();
    assert!(outcome.checkpoint_path.exists());
    assert!(outcome.final_objective.is_nan());
    // evaluating the untrained checkpoint is valid and yields low metrics
    let eval = cmd_eval(&cfg).unwrap();
    for row in &eval.report.rows {
        assert!(row.precision >= 0.0 && row.precision <= 1.0);
    }
}

#[test]
fn eval_emits_table_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 7);
    cmd_preprocess(&cfg).unwrap();
    cmd_train(&cfg).unwrap();
    let first = cmd_eval(&cfg).unwrap();
    let tsv1 = std::fs::read(&first.tsv_path).unwrap();
    let json1 = std::fs::read(&first.json_path).unwrap();
    let second = cmd_eval(&cfg).unwrap();
    assert_eq!(tsv1, std::fs::read(&second.tsv_path).unwrap());
    assert_eq!(json1, std::fs::read(&second.json_path).unwrap());
    let text = String::from_utf8(tsv1).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines[0], "k\tprecision\trecall\tmap");
    assert_eq!(lines.len(), 1 + cfg.cutoffs.len());
    assert!(lines[1].starts_with("3\t"));
    assert!(lines[2].starts_with("5\t"));
}

#[test]
fn eval_rejects_mismatched_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 8);
    cmd_preprocess(&cfg).unwrap();
    cmd_train(&cfg).unwrap();

    // Second dataset with a different POI universe, same checkpoint.
    let dir2 = tempfile::tempdir().unwrap();
    let mut cfg2 = small_config(dir2.path(), 9);
    cfg2.checkpoint = cfg.checkpoint.clone();
    let spec = SyntheticSpec {
        pois_per_cluster: 4,
        ..small_spec(9)
    };
    cmd_synth(&spec, &cfg2.checkins, &cfg2.coords).unwrap();
    cmd_preprocess(&cfg2).unwrap();
    let err = cmd_eval(&cfg2).unwrap_err();
    assert_eq!(err.exit_code(), EXIT_VALIDATION);
    assert!(err.to_string().contains("POIs"), "{err}");
}

#[test]
fn f32_pipeline_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path(), 10);
    cfg.precision = saenad::Dtype::F32;
    cmd_preprocess(&cfg).unwrap();
    cmd_train(&cfg).unwrap();
    let outcome = cmd_eval(&cfg).unwrap();
    assert_eq!(outcome.report.rows.len(), 2);
}

#[test]
fn gradcheck_passes_and_the_canary_fails() {
    let cfg = RunConfig::default();
    let results = cmd_gradcheck(&cfg, None).unwrap();
    assert_eq!(results.len(), 4);
    for (variant, err) in &results {
        assert!(*err < 1e-4, "{variant}: {err}");
    }
    let err = cmd_gradcheck(&cfg, Some(0.5)).unwrap_err();
    assert_eq!(err.exit_code(), EXIT_GRADCHECK);
    assert!(matches!(err, CliError::GradCheckFailed { .. }));
}

#[test]
fn variant_flag_trains_the_ablation() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path(), 11);
    cfg.variant = saenad::model::Variant::Wae;
    cmd_preprocess(&cfg).unwrap();
    let outcome = cmd_train(&cfg).unwrap();
    let (arch, _, _) =
        saenad::model::load_checkpoint::<f64>(&outcome.checkpoint_path).unwrap();
    assert_eq!(arch.variant, saenad::model::Variant::Wae);
}
