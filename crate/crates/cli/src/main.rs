//! `cpsp`: dataset generation, WMMSE solving, training, evaluation and
//! latency benchmarking from the command line.
//!
//! Exit status: 0 on success, 1 on a usage error, 2 on a runtime error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cps_precoding::ParamKind;

#[derive(Parser, Debug)]
#[command(
    name = "cpsp",
    version,
    about = "MU-MISO precoding: WMMSE labels and learned precoders"
)]
pub struct Cli {
    /// Seed for every random draw (dataset, initialization, shuffling).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// JSON file with default settings; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate channels with WMMSE labels.
    Generate(GenerateArgs),
    /// Run WMMSE on one instance and print its WSR trace.
    Solve(SolveArgs),
    /// Train networks on a dataset.
    Train(TrainArgs),
    /// Accuracy and SNR sweep of trained checkpoints.
    Evaluate(EvaluateArgs),
    /// Batch latency of WMMSE and the network pipelines.
    Bench(BenchArgs),
    /// Print metadata of a dataset or checkpoint.
    Inspect(InspectArgs),
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub antennas: Option<usize>,
    #[arg(long)]
    pub users: Option<usize>,
    #[arg(long)]
    pub noise_variance: Option<f64>,
    #[arg(long)]
    pub snr_min: Option<f64>,
    #[arg(long)]
    pub snr_max: Option<f64>,
    /// File name inside the output directory.
    #[arg(long, default_value = "dataset.bin")]
    pub name: String,
}

#[derive(Args, Debug)]
pub struct SolveArgs {
    /// JSON instance: `{"n_antennas", "n_users", "snr_db", "noise_variance", "channel"}`
    /// with `channel` as interleaved (re, im) pairs in column-major order.
    #[arg(long, conflicts_with_all = ["antennas", "users", "snr_db"])]
    pub input: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    pub antennas: usize,
    #[arg(long, default_value_t = 4)]
    pub users: usize,
    #[arg(long, default_value_t = 10.0)]
    pub snr_db: f64,
    #[arg(long, default_value_t = 10)]
    pub iterations: usize,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// ri, ncv, cps, hsc or all.
    #[arg(long, default_value = "all")]
    pub kind: String,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub sessions: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub split_seed: Option<u64>,
    /// 100 epochs and 3 sessions unless overridden.
    #[arg(long)]
    pub desk: bool,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, required = true, num_args = 1..)]
    pub checkpoint: Vec<PathBuf>,
    /// Samples to score: test (held-out split) or all.
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long)]
    pub split_seed: Option<u64>,
    #[arg(long)]
    pub snr_start: Option<f64>,
    #[arg(long)]
    pub snr_step: Option<f64>,
    #[arg(long)]
    pub snr_count: Option<usize>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Trained models; untrained networks of every kind when omitted.
    #[arg(long, num_args = 1..)]
    pub checkpoint: Vec<PathBuf>,
    #[arg(long, default_value_t = 4)]
    pub antennas: usize,
    #[arg(long, default_value_t = 4)]
    pub users: usize,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long)]
    pub repeats: Option<usize>,
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    pub path: PathBuf,
}

pub fn parse_kinds(s: &str) -> anyhow::Result<Vec<ParamKind>> {
    if s.eq_ignore_ascii_case("all") {
        return Ok(ParamKind::ALL.to_vec());
    }
    s.split(',')
        .map(|k| k.trim().parse::<ParamKind>().map_err(anyhow::Error::from))
        .collect()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
