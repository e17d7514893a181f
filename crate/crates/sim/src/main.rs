//! Command-line front end: run simulations, verify chain dumps, generate
//! IDX datasets, and time the aggregation path across device counts.
//!
//! Exit codes: 0 success, 2 configuration error, 3 integrity failure,
//! 4 training divergence.

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fedchain_core::ledger::Chain;
use fedchain_core::params::{gen_synthetic_skewed, write_idx_images, write_idx_labels, Dataset};
use fedchain_sim::{
    run_simulation, timing_sweep, write_metrics, ConfigError, SimConfig, SimError,
};

const EXIT_CONFIG: u8 = 2;
const EXIT_INTEGRITY: u8 = 3;
const EXIT_DIVERGENCE: u8 = 4;

#[derive(Parser)]
#[command(name = "fedchain", about = "Federated aggregation ledger simulator", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the round loop described by a config file.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Metrics destination (line-delimited JSON); stdout when omitted.
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Writes node 0's chain dump here after the run.
        #[arg(long)]
        dump_chain: Option<PathBuf>,
    },
    /// Check every digest and link of a chain dump.
    VerifyChain { path: PathBuf },
    /// Generate per-cluster synthetic datasets as IDX file pairs.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        clusters: u32,
        #[arg(long)]
        per_cluster: usize,
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 0.0)]
        skew: f64,
        /// Rows in the held-out test pair.
        #[arg(long, default_value_t = 100)]
        test_rows: usize,
    },
    /// Time the aggregation path across ascending device counts.
    Sweep {
        /// Comma-separated ascending device counts.
        #[arg(long, value_delimiter = ',')]
        devices: Vec<u32>,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 5)]
        reps: u32,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    ChainVerification { path: String, message: String },
}

fn exit_code(err: &CliError) -> u8 {
    match err {
        CliError::Config(_) | CliError::Sim(SimError::Config(_)) => EXIT_CONFIG,
        CliError::Sim(SimError::Divergence { .. }) => EXIT_DIVERGENCE,
        CliError::Sim(SimError::Integrity(_)) | CliError::ChainVerification { .. } => {
            EXIT_INTEGRITY
        }
        _ => 1,
    }
}

fn write_file(path: &PathBuf, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes)
        .map_err(|source| CliError::Io { path: path.display().to_string(), source })
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate { config, seed, metrics, dump_chain } => {
            let mut cfg = SimConfig::from_path(&config)?;
            if let Some(seed) = seed {
                cfg.master_seed = seed;
            }
            let out = run_simulation(&cfg)?;

            let mut buf = Vec::new();
            write_metrics(&mut buf, &out.metrics)
                .map_err(|source| CliError::Io { path: "<metrics>".into(), source })?;
            match &metrics {
                Some(path) => write_file(path, &buf)?,
                None => {
                    std::io::stdout()
                        .write_all(&buf)
                        .map_err(|source| CliError::Io { path: "<stdout>".into(), source })?;
                }
            }

            if let Some(path) = &dump_chain {
                write_file(path, &out.chains[0].dump())?;
            }

            let committed = out.committed_hashes.iter().filter(|h| h.is_some()).count();
            eprintln!(
                "{} rounds: {committed} committed, {} aborted; chain height {}",
                out.metrics.len(),
                out.metrics.len() - committed,
                out.chains[0].height(),
            );
            Ok(())
        }
        Command::VerifyChain { path } => {
            let bytes = fs::read(&path)
                .map_err(|source| CliError::Io { path: path.display().to_string(), source })?;
            let chain = Chain::load(&bytes).map_err(|e| CliError::ChainVerification {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            match chain.verify() {
                Ok(()) => {
                    println!("ok: {} blocks, tip height {}", chain.blocks().len(), chain.height());
                    Ok(())
                }
                Err(fault) => Err(CliError::ChainVerification {
                    path: path.display().to_string(),
                    message: format!(
                        "verification failed at height {} cause {}",
                        fault.height,
                        fault.cause.as_str()
                    ),
                }),
            }
        }
        Command::GenData { out, clusters, per_cluster, dim, seed, skew, test_rows } => {
            if clusters == 0 || per_cluster == 0 || dim == 0 || test_rows == 0 {
                return Err(ConfigError::Invalid("all gen-data counts must be >= 1".into()).into());
            }
            fs::create_dir_all(&out)
                .map_err(|source| CliError::Io { path: out.display().to_string(), source })?;
            let datasets = gen_synthetic_skewed(clusters as usize, per_cluster, dim, seed, skew);
            for (i, ds) in datasets.iter().enumerate() {
                write_idx_pair(&out, &format!("cluster-{i:02}"), ds)?;
            }
            let test = gen_synthetic_skewed(1, test_rows, dim, seed.wrapping_add(1), 0.0);
            write_idx_pair(&out, "test", &test[0])?;
            println!("wrote {} cluster pairs and a test pair to {}", clusters, out.display());
            Ok(())
        }
        Command::Sweep { devices, config, reps } => {
            let cfg = SimConfig::from_path(&config)?;
            let spec = cfg.model_spec()?;
            let rows = timing_sweep(&devices, &spec, cfg.master_seed, reps)?;
            println!("devices  mean_aggregation_us");
            for row in &rows {
                println!("{:>7}  {:>19.1}", row.devices, row.mean_duration_micros);
            }
            Ok(())
        }
    }
}

/// Quantizes features from the synthetic range [-2, 2] into bytes and
/// writes an images/labels IDX pair.
fn write_idx_pair(dir: &PathBuf, stem: &str, ds: &Dataset) -> Result<(), CliError> {
    let n = ds.len();
    let d = ds.dim();
    let mut pixels = Vec::with_capacity(n * d);
    for i in 0..n {
        for &x in ds.row(i) {
            let byte = (((x + 2.0) / 4.0) * 255.0).round().clamp(0.0, 255.0) as u8;
            pixels.push(byte);
        }
    }
    let labels: Vec<u8> = ds.labels().iter().map(|&l| l as u8).collect();
    let images_path = dir.join(format!("{stem}-images.idx"));
    let labels_path = dir.join(format!("{stem}-labels.idx"));
    write_idx_images(&images_path, &pixels, n, 1, d)
        .map_err(|e| CliError::Io { path: images_path.display().to_string(), source: std::io::Error::other(e.to_string()) })?;
    write_idx_labels(&labels_path, &labels)
        .map_err(|e| CliError::Io { path: labels_path.display().to_string(), source: std::io::Error::other(e.to_string()) })?;
    Ok(())
}
