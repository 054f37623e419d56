use std::path::PathBuf;
use std::process::ExitCode;

use blaircomp_cli::config::parse_config;
use blaircomp_cli::run_experiment;
use clap::{Args, Parser, Subcommand};

/// Blind over-the-air computation by randomly initialized Wirtinger flow.
#[derive(Debug, Parser)]
#[command(name = "blaircomp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a preset or custom experiment.
    Run(ExperimentArgs),
    /// Leave-one-out / random-sign hypothesis diagnostics (the `diagnostics` preset).
    Diagnostics(ExperimentArgs),
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    /// Flat `key = value` config file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// fig1-convergence, components, ratio-growth, noise-sweep, diagnostics or custom.
    #[arg(long)]
    preset: Option<String>,
    /// Number of nodes.
    #[arg(long)]
    s: Option<usize>,
    /// Channel length.
    #[arg(long = "K")]
    k: Option<usize>,
    /// Data length.
    #[arg(long = "N")]
    n: Option<usize>,
    /// Number of measurements.
    #[arg(long)]
    m: Option<usize>,
    /// Measurements per unit of K; exclusive with --m.
    #[arg(long)]
    m_factor: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Stop at this aligned relative error (`inf` never stops early).
    #[arg(long)]
    tol: Option<String>,
    /// Measurement noise variance.
    #[arg(long)]
    noise_var: Option<f64>,
    /// Comma-separated alignment-noise levels for noise-sweep.
    #[arg(long)]
    sigma_w: Option<String>,
    /// Comma-separated signal norms q_i, or a single value for all nodes.
    #[arg(long)]
    q: Option<String>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Log every this many iterations.
    #[arg(long)]
    cadence: Option<usize>,
    /// Leave-one-out sequences per trial (diagnostics).
    #[arg(long)]
    loo_samples: Option<usize>,
    /// Rotate the designs so that each x̄_i lies along e₁ (diagnostics).
    #[arg(long)]
    canonicalize: Option<bool>,
    /// Worker threads.
    #[arg(long, env = "BLAIRCOMP_JOBS")]
    jobs: Option<usize>,
}

impl ExperimentArgs {
    fn overrides(&self) -> Vec<(String, String)> {
        let mut kv = Vec::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                kv.push((k.to_string(), v));
            }
        };
        put("preset", self.preset.clone());
        put("s", self.s.map(|v| v.to_string()));
        put("k", self.k.map(|v| v.to_string()));
        put("n", self.n.map(|v| v.to_string()));
        put("m", self.m.map(|v| v.to_string()));
        put("m_factor", self.m_factor.map(|v| v.to_string()));
        put("eta", self.eta.map(|v| v.to_string()));
        put("max_iters", self.max_iters.map(|v| v.to_string()));
        put("tol", self.tol.clone());
        put("noise_var", self.noise_var.map(|v| v.to_string()));
        put("sigma_w", self.sigma_w.clone());
        put("q", self.q.clone());
        put("trials", self.trials.map(|v| v.to_string()));
        put("seed", self.seed.map(|v| v.to_string()));
        put("out", self.out.as_ref().map(|p| p.display().to_string()));
        put("cadence", self.cadence.map(|v| v.to_string()));
        put("loo_samples", self.loo_samples.map(|v| v.to_string()));
        put("canonicalize", self.canonicalize.map(|v| v.to_string()));
        put("jobs", self.jobs.map(|v| v.to_string()));
        kv
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (args, forced) = match &cli.command {
        Command::Run(a) => (a, None),
        Command::Diagnostics(a) => (a, Some("diagnostics")),
    };
    let mut kv = args.overrides();
    if let Some(p) = forced {
        if args.preset.as_deref().is_some_and(|given| given != p) {
            eprintln!("error: the diagnostics command always uses the diagnostics preset");
            return ExitCode::from(2);
        }
        kv.push(("preset".into(), p.into()));
    }

    let cfg = match parse_config(args.config.as_deref(), &kv) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let summary = match run_experiment(&cfg) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };

    println!(
        "{}: {} trials, {} converged, {} diverged, {:.2}s -> {}",
        cfg.preset,
        summary.trials,
        summary.converged,
        summary.diverged.len(),
        summary.wall_clock_seconds,
        summary.out.display()
    );
    if let Some(noise) = &summary.noise {
        for p in &noise.points {
            println!("  sigma_w = {:>8.1} dB  error = {:>8.2} dB", p.sigma_w_db, p.error_db);
        }
        if let Some(slope) = noise.slope {
            println!("  slope = {slope:.3} dB/dB");
        }
    }
    if summary.diverged.is_empty() {
        ExitCode::SUCCESS
    } else {
        eprintln!("diverged trials: {:?}", summary.diverged);
        ExitCode::from(1)
    }
}
