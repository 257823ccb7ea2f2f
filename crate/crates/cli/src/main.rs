//! `ptbnn`: run a parallel-tempering experiment from a profile.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use ptbnn::experiment::ExperimentError;
use ptbnn::{run_experiment, Execution, Method, RunConfig, RunReport};

#[derive(Debug, Parser)]
#[command(name = "ptbnn", version, about = "Parallel-tempering MCMC for Bayesian neural networks")]
struct Args {
    /// Experiment profile (TOML key = value)
    #[arg(long)]
    config: PathBuf,
    /// pt-rw or pt-lg
    #[arg(long)]
    method: Option<Method>,
    /// Total samples across all replicas
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    replicas: Option<usize>,
    #[arg(long)]
    swap_interval: Option<usize>,
    #[arg(long)]
    max_temp: Option<f64>,
    #[arg(long)]
    lg_freq: Option<f64>,
    #[arg(long)]
    learn_rate: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for report and chains
    #[arg(long)]
    out: Option<PathBuf>,
    /// Advance replicas on one thread instead of one worker each
    #[arg(long)]
    sequential: bool,
}

impl Args {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(m) = self.method {
            cfg.method = m;
        }
        if let Some(v) = self.samples {
            cfg.total_samples = v;
        }
        if let Some(v) = self.replicas {
            cfg.replicas = v;
        }
        if let Some(v) = self.swap_interval {
            cfg.swap_interval = v;
        }
        if let Some(v) = self.max_temp {
            cfg.max_temp = v;
        }
        if let Some(v) = self.lg_freq {
            cfg.lg_freq = v;
        }
        if let Some(v) = self.learn_rate {
            cfg.learn_rate = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = &self.out {
            cfg.out = Some(v.clone());
        }
        if self.sequential {
            cfg.execution = Execution::Sequential;
        }
    }
}

fn print_report(r: &RunReport) {
    println!("{} {:?} ({})", r.name, r.method, r.metric);
    println!("  train (mean, best, std): {:.4} {:.4} {:.4}", r.train.mean, r.train.best, r.train.std);
    println!("  test  (mean, best, std): {:.4} {:.4} {:.4}", r.test.mean, r.test.best, r.test.std);
    println!("  swap {:.2}%  accept {:.2}%  samples {}  time {:.2}s", r.swap_percent, r.accept_percent, r.retained_samples, r.elapsed_seconds);
    if r.numerical_failures > 0 {
        println!("  numerical failures: {}", r.numerical_failures);
    }
}

fn run(args: &Args) -> Result<RunReport, ExperimentError> {
    let mut cfg = RunConfig::from_file(&args.config)?;
    args.apply(&mut cfg);
    let exp = run_experiment(&cfg)?;
    if let Some(out) = &cfg.out {
        log::info!("artifacts written to {}", out.display());
    }
    Ok(exp.report)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    match run(&args) {
        Ok(report) => {
            print_report(&report);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
