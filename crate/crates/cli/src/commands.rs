//! The five pipeline commands. Every command is a pure function of its
//! config file, input files, and seed: reruns produce byte-identical
//! artifacts, and cache entries are content-addressed by input hashes.

use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use saenad::data::{
    build_matrices, cache_key, filter_sparse, parse_checkins, split_partition, Dataset,
    PoiCatalog, PreprocessParams, SplitSpec,
};
use saenad::eval::{evaluate, EvalReport};
use saenad::geo::{build_kernel_with, kernel_cache_key, GeoKernel, KernelStrategy};
use saenad::model::{
    checkpoint_dtype, load_checkpoint, save_checkpoint, Architecture, Variant,
};
use saenad::train::{default_gradcheck_arch, grad_check_detailed, train_with, TrainEvent};
use saenad::{Dtype, Scalar};

use crate::config::RunConfig;
use crate::error::{read_file, write_file, CliError, CliResult};
use crate::synth::{generate, SyntheticSpec};

pub const GRADCHECK_THRESHOLD: f64 = 1e-4;
pub const GRADCHECK_SAMPLES_PER_TENSOR: usize = 2000;

/// Advisory lock on a cache directory; removed on drop.
struct CacheLock {
    path: PathBuf,
}

impl CacheLock {
    fn acquire(dir: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let path = dir.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(CacheLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(CliError::Locked(path))
            }
            Err(source) => Err(CliError::Io { path, source }),
        }
    }
}

impl Drop for CacheLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

fn preprocess_params(cfg: &RunConfig) -> PreprocessParams {
    PreprocessParams {
        min_user_checkins: cfg.min_user_checkins,
        min_poi_visits: cfg.min_poi_visits,
        split: SplitSpec {
            test_fraction: cfg.test_fraction,
            seed: cfg.train.seed,
            partition_count: cfg.partition_count,
        },
        partition: cfg.split_partition,
        alpha: cfg.train.alpha,
        epsilon: cfg.train.epsilon,
    }
}

fn dataset_key(cfg: &RunConfig) -> CliResult<String> {
    let checkins = read_file(&cfg.checkins)?;
    let coords = read_file(&cfg.coords)?;
    Ok(cache_key(&checkins, &coords, &preprocess_params(cfg)))
}

fn dataset_paths(cfg: &RunConfig, key: &str) -> (PathBuf, PathBuf) {
    let stem = &key[..16];
    (
        cfg.cache_dir.join(format!("dataset-{stem}.bin")),
        cfg.cache_dir.join(format!("dataset-{stem}.manifest.tsv")),
    )
}

#[derive(Debug)]
pub struct PreprocessOutcome {
    pub key: String,
    pub cache_hit: bool,
    pub num_users: usize,
    pub num_pois: usize,
    pub density: f64,
    pub data_path: PathBuf,
    pub manifest_path: PathBuf,
}

fn manifest_text(cfg: &RunConfig, key: &str, dataset: &Dataset) -> String {
    let params = preprocess_params(cfg);
    let inter = &dataset.interactions;
    format!(
        "key\t{key}\nmin_user_checkins\t{}\nmin_poi_visits\t{}\ntest_fraction\t{}\nseed\t{}\npartition_count\t{}\npartition\t{}\nalpha\t{}\nepsilon\t{}\nusers\t{}\npois\t{}\ndensity\t{}\n",
        params.min_user_checkins,
        params.min_poi_visits,
        params.split.test_fraction,
        params.split.seed,
        params.split.partition_count,
        params.partition,
        params.alpha,
        params.epsilon,
        inter.num_users,
        inter.num_pois,
        inter.density(),
    )
}

/// Parse, filter, split, and materialize the matrices, writing the binary
/// cache and its manifest. A rerun with identical inputs and parameters is a
/// cache hit and leaves both files untouched.
pub fn cmd_preprocess(cfg: &RunConfig) -> CliResult<PreprocessOutcome> {
    let checkins = read_file(&cfg.checkins)?;
    let coords = read_file(&cfg.coords)?;
    let params = preprocess_params(cfg);
    let key = cache_key(&checkins, &coords, &params);
    let (data_path, manifest_path) = dataset_paths(cfg, &key);

    if data_path.exists() && manifest_path.exists() {
        let dataset = Dataset::from_bytes(&read_file(&data_path)?)?;
        return Ok(PreprocessOutcome {
            key,
            cache_hit: true,
            num_users: dataset.interactions.num_users,
            num_pois: dataset.interactions.num_pois,
            density: dataset.interactions.density(),
            data_path,
            manifest_path,
        });
    }

    let lock = CacheLock::acquire(&cfg.cache_dir)?;
    let log = parse_checkins(checkins.as_slice(), coords.as_slice())?;
    let filtered = filter_sparse(&log, cfg.min_user_checkins, cfg.min_poi_visits)?;
    let (train, test_sets) = split_partition(&filtered, &params.split, params.partition)?;
    let interactions = build_matrices(&train, params.alpha, params.epsilon)?;
    let dataset = Dataset {
        user_ids: train.user_ids.clone(),
        catalog: train.catalog.clone(),
        interactions,
        test_sets,
    };
    write_file(&data_path, &dataset.to_bytes())?;
    write_file(&manifest_path, manifest_text(cfg, &key, &dataset).as_bytes())?;
    drop(lock);

    Ok(PreprocessOutcome {
        key,
        cache_hit: false,
        num_users: dataset.interactions.num_users,
        num_pois: dataset.interactions.num_pois,
        density: dataset.interactions.density(),
        data_path,
        manifest_path,
    })
}

fn load_dataset(cfg: &RunConfig) -> CliResult<Dataset> {
    let key = dataset_key(cfg)?;
    let (data_path, _) = dataset_paths(cfg, &key);
    if !data_path.exists() {
        return Err(CliError::Config(format!(
            "no preprocessed cache at {} — run `preprocess` with this config first",
            data_path.display()
        )));
    }
    Ok(Dataset::from_bytes(&read_file(&data_path)?)?)
}

fn load_or_build_kernel(cfg: &RunConfig, catalog: &PoiCatalog) -> CliResult<GeoKernel> {
    let gamma = cfg.effective_gamma();
    let key = kernel_cache_key(catalog, gamma, cfg.kernel_threshold, cfg.metric);
    let path = cfg.cache_dir.join(format!("kernel-{}.bin", &key[..16]));
    if path.exists() {
        return Ok(GeoKernel::from_bytes(&read_file(&path)?)?);
    }
    let strategy = if cfg.kernel_grid {
        KernelStrategy::Grid
    } else {
        KernelStrategy::BruteForce
    };
    let kernel = build_kernel_with(catalog, gamma, cfg.kernel_threshold, cfg.metric, strategy)?;
    let lock = CacheLock::acquire(&cfg.cache_dir)?;
    write_file(&path, &kernel.to_bytes())?;
    drop(lock);
    Ok(kernel)
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint_path: PathBuf,
    pub log_path: PathBuf,
    pub final_objective: f64,
}

/// Train per the config, writing the checkpoint, and a progress log with one
/// `iteration<TAB>batch<TAB>objective` line per batch.
pub fn cmd_train(cfg: &RunConfig) -> CliResult<TrainOutcome> {
    let dataset = load_dataset(cfg)?;
    let arch = Architecture {
        num_pois: dataset.interactions.num_pois,
        hidden1: cfg.hidden1,
        bottleneck: cfg.bottleneck,
        aspects: cfg.aspects,
        variant: cfg.variant,
        dropout_p: cfg.dropout,
    };
    let kernel = if arch.variant.uses_neighbors() {
        Some(load_or_build_kernel(cfg, &dataset.catalog)?)
    } else {
        None
    };
    match cfg.precision {
        Dtype::F64 => train_impl::<f64>(cfg, &arch, &dataset, kernel.as_ref()),
        Dtype::F32 => train_impl::<f32>(cfg, &arch, &dataset, kernel.as_ref()),
    }
}

fn train_impl<F: Scalar>(
    cfg: &RunConfig,
    arch: &Architecture,
    dataset: &Dataset,
    kernel: Option<&GeoKernel>,
) -> CliResult<TrainOutcome> {
    let log_path = PathBuf::from(format!("{}.log", cfg.checkpoint.display()));
    if let Some(parent) = cfg.checkpoint.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|source| CliError::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
    }
    let mut log = std::io::BufWriter::new(
        std::fs::File::create(&log_path).map_err(|source| CliError::Io {
            path: log_path.clone(),
            source,
        })?,
    );
    let seed = cfg.train.seed;
    let every = cfg.checkpoint_every;
    let checkpoint_path = cfg.checkpoint.clone();
    let (params, history) = train_with::<F>(
        &cfg.train,
        arch,
        &dataset.interactions,
        kernel,
        &mut |event| match event {
            TrainEvent::BatchDone {
                iteration,
                batch,
                objective,
            } => {
                writeln!(log, "{iteration}\t{batch}\t{objective}")?;
                Ok(())
            }
            TrainEvent::IterationDone {
                iteration, params, ..
            } => {
                if every > 0 && (iteration + 1) % every == 0 {
                    save_checkpoint(&checkpoint_path, arch, seed, params)?;
                }
                Ok(())
            }
        },
    )?;
    save_checkpoint(&cfg.checkpoint, arch, seed, &params)?;
    log.flush().map_err(|source| CliError::Io {
        path: log_path.clone(),
        source,
    })?;
    Ok(TrainOutcome {
        checkpoint_path: cfg.checkpoint.clone(),
        log_path,
        final_objective: history.epoch_mean_objective.last().copied().unwrap_or(f64::NAN),
    })
}

#[derive(Debug)]
pub struct EvalOutcome {
    pub report: EvalReport,
    pub tsv_path: PathBuf,
    pub json_path: PathBuf,
}

/// Evaluate a checkpoint against the held-out sets, emitting the metric
/// table as TSV (returned for stdout) plus TSV and JSON report files.
pub fn cmd_eval(cfg: &RunConfig) -> CliResult<EvalOutcome> {
    let dataset = load_dataset(cfg)?;
    match checkpoint_dtype(&cfg.checkpoint)? {
        Dtype::F64 => eval_impl::<f64>(cfg, &dataset),
        Dtype::F32 => eval_impl::<f32>(cfg, &dataset),
    }
}

fn eval_impl<F: Scalar>(cfg: &RunConfig, dataset: &Dataset) -> CliResult<EvalOutcome> {
    let (arch, _seed, params) = load_checkpoint::<F>(&cfg.checkpoint)?;
    if arch.num_pois != dataset.interactions.num_pois {
        return Err(CliError::Core(saenad::Error::Shape(format!(
            "checkpoint was trained on {} POIs but the cache holds {}",
            arch.num_pois, dataset.interactions.num_pois
        ))));
    }
    let kernel = if arch.variant.uses_neighbors() {
        Some(load_or_build_kernel(cfg, &dataset.catalog)?)
    } else {
        None
    };
    let report = evaluate(
        &params,
        &arch,
        kernel.as_ref(),
        &dataset.interactions,
        &dataset.test_sets,
        &cfg.cutoffs,
    )?;
    let stem = cfg.report_stem();
    let tsv_path = PathBuf::from(format!("{}.tsv", stem.display()));
    let json_path = PathBuf::from(format!("{}.json", stem.display()));
    if let Some(parent) = tsv_path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|source| CliError::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
    }
    write_file(&tsv_path, report.to_tsv().as_bytes())?;
    write_file(&json_path, report.to_json().as_bytes())?;
    Ok(EvalOutcome {
        report,
        tsv_path,
        json_path,
    })
}

/// Gradient check for all four variants; errors (exit status 5) if any
/// exceeds the threshold. `corruption` is a test-only hook proving the
/// failing path works.
pub fn cmd_gradcheck(
    cfg: &RunConfig,
    corruption: Option<f64>,
) -> CliResult<Vec<(Variant, f64)>> {
    let mut results = Vec::new();
    for variant in Variant::ALL {
        let arch = default_gradcheck_arch(variant);
        let report = grad_check_detailed(
            &arch,
            GRADCHECK_SAMPLES_PER_TENSOR,
            cfg.train.seed,
            corruption,
        )?;
        results.push((variant, report.max_rel_error));
    }
    if let Some(&(variant, err)) = results
        .iter()
        .filter(|(_, e)| !(*e < GRADCHECK_THRESHOLD))
        .max_by(|a, b| a.1.total_cmp(&b.1))
    {
        return Err(CliError::GradCheckFailed {
            variant: variant.to_string(),
            max_rel_error: err,
            threshold: GRADCHECK_THRESHOLD,
        });
    }
    Ok(results)
}

/// Generate synthetic check-in and coordinate files.
pub fn cmd_synth(
    spec: &SyntheticSpec,
    out_checkins: &Path,
    out_coords: &Path,
) -> CliResult<()> {
    let (checkins, coords) = generate(spec)?;
    write_file(out_checkins, checkins.as_bytes())?;
    write_file(out_coords, coords.as_bytes())?;
    Ok(())
}
