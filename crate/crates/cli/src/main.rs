use std::path::PathBuf;

use clap::{Parser, Subcommand};

use saenad_cli::commands::{
    cmd_eval, cmd_gradcheck, cmd_preprocess, cmd_synth, cmd_train,
};
use saenad_cli::config::RunConfig;
use saenad_cli::error::{CliError, CliResult};
use saenad_cli::synth::SyntheticSpec;

#[derive(Parser)]
#[command(name = "saenad", version, about = "Self-attentive autoencoder with neighbor-aware geographic decoding for POI recommendation")]
struct Cli {
    /// Run configuration file (flat `key = value` lines)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the config's master seed
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for parallel sections (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse, filter, split, and cache the interaction matrices
    Preprocess,
    /// Train a model from the preprocessed cache
    Train,
    /// Evaluate a checkpoint and write the metric report
    Eval,
    /// Verify analytic gradients against central finite differences
    Gradcheck,
    /// Generate a geo-clustered synthetic dataset
    Synth {
        #[arg(long, default_value_t = 5)]
        clusters: usize,
        #[arg(long, default_value_t = 40)]
        pois_per_cluster: usize,
        #[arg(long, default_value_t = 100)]
        users: usize,
        #[arg(long, default_value_t = 30)]
        checkins_per_user: usize,
        /// Probability a check-in stays in the user's home cluster
        #[arg(long, default_value_t = 0.9)]
        intra_prob: f64,
        /// Gaussian POI spread around cluster centers, degrees
        #[arg(long, default_value_t = 0.05)]
        spread: f64,
        #[arg(long)]
        out_checkins: PathBuf,
        #[arg(long)]
        out_coords: PathBuf,
    },
}

fn required_config(cli: &Cli) -> CliResult<RunConfig> {
    let path = cli.config.as_ref().ok_or_else(|| {
        CliError::Config("--config <path> is required for this command".into())
    })?;
    let mut cfg = RunConfig::from_file(path)?;
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot configure {threads} threads: {e}")))?;
    }
    match &cli.command {
        Command::Preprocess => {
            let outcome = cmd_preprocess(&required_config(&cli)?)?;
            println!(
                "{}\tusers {}\tpois {}\tdensity {}\tkey {}",
                if outcome.cache_hit { "cache hit" } else { "written" },
                outcome.num_users,
                outcome.num_pois,
                outcome.density,
                outcome.key
            );
        }
        Command::Train => {
            let outcome = cmd_train(&required_config(&cli)?)?;
            println!("final epoch objective\t{}", outcome.final_objective);
            println!("checkpoint\t{}", outcome.checkpoint_path.display());
        }
        Command::Eval => {
            let outcome = cmd_eval(&required_config(&cli)?)?;
            print!("{}", outcome.report.to_tsv());
            println!("report\t{}", outcome.tsv_path.display());
        }
        Command::Gradcheck => {
            // gradcheck needs no input files, so the config is optional
            let cfg = match &cli.config {
                Some(path) => {
                    let mut cfg = RunConfig::from_file(path)?;
                    if let Some(seed) = cli.seed {
                        cfg.train.seed = seed;
                    }
                    cfg
                }
                None => {
                    let mut cfg = RunConfig::default();
                    if let Some(seed) = cli.seed {
                        cfg.train.seed = seed;
                    }
                    cfg
                }
            };
            let results = cmd_gradcheck(&cfg, None)?;
            for (variant, err) in results {
                println!("{variant}\tmax_rel_error {err:e}");
            }
        }
        Command::Synth {
            clusters,
            pois_per_cluster,
            users,
            checkins_per_user,
            intra_prob,
            spread,
            out_checkins,
            out_coords,
        } => {
            let spec = SyntheticSpec {
                clusters: *clusters,
                pois_per_cluster: *pois_per_cluster,
                users: *users,
                checkins_per_user: *checkins_per_user,
                intra_cluster_prob: *intra_prob,
                coordinate_spread: *spread,
                seed: cli.seed.unwrap_or(0),
            };
            cmd_synth(&spec, out_checkins, out_coords)?;
            println!(
                "wrote {} and {} ({} POIs, {} users)",
                out_checkins.display(),
                out_coords.display(),
                spec.num_pois(),
                spec.users
            );
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
