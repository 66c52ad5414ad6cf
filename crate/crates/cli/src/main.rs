use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use reefseg_core::pipeline::{compute_curve, load_config};
use reefseg_core::synthetic::{SyntheticReef, DEFAULT_SEED};
use reefseg_core::{run_pipeline, Error, Exec, Result};

#[derive(Parser)]
#[command(name = "reefseg", version, about = "Cluster reef imagery into habitat maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a pipeline and write map.png, labels.bnd, legend.json and provenance.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a WCSS (kmeans) or BIC (gmm) curve as CSV.
    Curves {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        k_min: usize,
        #[arg(long)]
        k_max: usize,
        /// Defaults to curves.csv in the config output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a config and print it with defaults filled in.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write the synthetic reef scene (mosaic, bathymetry, truth maps).
    Synth {
        #[arg(long, default_value = "data")]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match e.root() {
                Error::Config(list) => {
                    eprintln!("reefseg: invalid configuration");
                    for item in list {
                        eprintln!("  - {item}");
                    }
                }
                _ => eprintln!("reefseg: {e}"),
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run { config, seed, out } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            let exec = Exec::from_env()?;
            let artifacts = run_pipeline(&cfg, &exec)?;
            for path in artifacts.write(&cfg.output_dir)? {
                println!("{}", path.display());
            }
            let classes: Vec<_> = artifacts.habitat.classes().into_iter().collect();
            eprintln!(
                "{} raw clusters, {} final labels: {}",
                artifacts.clustering.metrics.clusters,
                artifacts.habitat.legend.len(),
                classes.join(", ")
            );
            Ok(())
        }
        Command::Curves {
            config,
            k_min,
            k_max,
            out,
        } => {
            let cfg = load_config(&config)?;
            let method = cfg.method.curve_method().ok_or_else(|| {
                Error::Config(vec![format!("curves need method kmeans or gmm, not {}", cfg.method.name())])
            })?;
            if k_min == 0 || k_min > k_max {
                return Err(Error::Config(vec![format!("empty k range {k_min}..={k_max}")]));
            }
            let exec = Exec::from_env()?;
            let inputs = reefseg_core::pipeline::Inputs::load(&cfg.mosaic, cfg.bathymetry.as_deref())?;
            let features = inputs.features(cfg.mode)?;
            let curve = compute_curve(&features, method, cfg.normalization, k_min, k_max, cfg.seed, &exec)?;
            let path = out.unwrap_or_else(|| cfg.output_dir.join("curves.csv"));
            write_file(&path, curve.to_csv().as_bytes())?;
            println!("{}", path.display());
            match curve.proposed_k {
                Some(k) => eprintln!("proposed k = {k}"),
                None => eprintln!("no knee found"),
            }
            Ok(())
        }
        Command::Validate { config } => {
            let cfg = load_config(&config)?;
            print!("{}", cfg.to_json());
            Ok(())
        }
        Command::Synth { out, seed } => {
            SyntheticReef::generate(seed).write(&out)?;
            println!("{}", out.display());
            Ok(())
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    reefseg_core::fsutil::write_atomic(path, bytes)
}
