use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use dflsim::harness::rate::{rate_fit, RateFit};
use dflsim::harness::sweep::{check_sweep, format_cell_csv, read_csv_column, sweep, SweepAxes};
use dflsim::harness::verify::{run_verify, VerifyOptions};
use dflsim::harness::run_averaged;
use dflsim::{Algorithm, Result, RunConfig, TopologyKind};

#[derive(Parser)]
#[command(name = "dflsim", version, about = "Decentralized federated learning over noisy channels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration (averaged over repeats) and write its CSV.
    Run(RunArgs),
    /// Run the cartesian product of the given axes.
    Sweep(SweepArgs),
    /// Run the theory checks and exit nonzero on any failure.
    Verify(VerifyArgs),
    /// Fit the empirical convergence rate of a grad_norm_sq series.
    Rate(RateArgs),
}

/// Experiment flags. Each one overrides the same key from `--config`.
#[derive(Args, Debug, Default)]
struct Common {
    /// `key = value` file applied before the flags.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long, value_parser = ["fedndl1", "fedndl2", "fedndl3", "fednmut"])]
    algorithm: Option<String>,
    #[arg(long, value_parser = ["ring", "torus", "full"])]
    topology: Option<String>,
    #[arg(long)]
    clients: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    rounds: Option<usize>,
    /// Per-coordinate channel noise variance.
    #[arg(long)]
    noise_var: Option<f64>,
    /// Label noise variance of the synthetic data.
    #[arg(long)]
    label_noise: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr0: Option<f64>,
    #[arg(long)]
    lr_gamma: Option<f64>,
    /// Rounds between learning-rate decays.
    #[arg(long)]
    lr_interval: Option<usize>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = ["zeros", "shared", "independent"])]
    x0: Option<String>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// d = 2000, m = 10000.
    #[arg(long)]
    paper_scale: bool,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut c = RunConfig::default();
        if let Some(path) = &self.config {
            c.apply_file_text(&fs::read_to_string(path)?)?;
        }
        if self.paper_scale {
            c = c.paper_scale();
        }
        let flags: [(&str, Option<String>); 18] = [
            ("algorithm", self.algorithm.clone()),
            ("topology", self.topology.clone()),
            ("clients", self.clients.map(|v| v.to_string())),
            ("dim", self.dim.map(|v| v.to_string())),
            ("samples", self.samples.map(|v| v.to_string())),
            ("rounds", self.rounds.map(|v| v.to_string())),
            ("noise-var", self.noise_var.map(|v| v.to_string())),
            ("label-noise", self.label_noise.map(|v| v.to_string())),
            ("mu", self.mu.map(|v| v.to_string())),
            ("lambda", self.lambda.map(|v| v.to_string())),
            ("batch-size", self.batch_size.map(|v| v.to_string())),
            ("lr0", self.lr0.map(|v| v.to_string())),
            ("lr-gamma", self.lr_gamma.map(|v| v.to_string())),
            ("lr-interval", self.lr_interval.map(|v| v.to_string())),
            ("repeats", self.repeats.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
            ("x0", self.x0.clone()),
            ("out", self.out.as_ref().map(|p| p.display().to_string())),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                c.set(key, &v)?;
            }
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated algorithms.
    #[arg(long, value_delimiter = ',')]
    algorithms: Vec<Algorithm>,
    /// Comma-separated topologies.
    #[arg(long, value_delimiter = ',')]
    topologies: Vec<TopologyKind>,
    /// Comma-separated channel noise variances.
    #[arg(long, value_delimiter = ',')]
    noise_vars: Vec<f64>,
    /// Comma-separated tracking parameters.
    #[arg(long, value_delimiter = ',')]
    mus: Vec<f64>,
    /// Re-run the sweep stored in DIR and compare its CSVs byte for byte.
    #[arg(long, value_name = "DIR")]
    check: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    common: Common,
    /// Rounds of the bound-comparison run.
    #[arg(long, default_value_t = 2000)]
    bound_rounds: usize,
    /// Monte-Carlo trials of the bias check.
    #[arg(long, default_value_t = 10_000)]
    trials: usize,
}

#[derive(Args)]
struct RateArgs {
    #[command(flatten)]
    common: Common,
    /// Per-cell CSV to fit; without it the configured run is executed.
    #[arg(long, value_name = "CSV")]
    input: Option<PathBuf>,
}

fn describe(fit: RateFit) -> String {
    match fit {
        RateFit::Slope(s) => format!("slope {s:.6}"),
        RateFit::ExactConvergence => "exact convergence (all running averages zero)".into(),
    }
}

fn cmd_run(args: RunArgs) -> Result<ExitCode> {
    let config = args.common.resolve()?;
    let rows = sweep(&config, &SweepAxes::default(), &config.out_dir)?;
    for r in &rows {
        println!("{}", config.out_dir.join(&r.csv_path).display());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_sweep(args: SweepArgs) -> Result<ExitCode> {
    if let Some(dir) = &args.check {
        let results = check_sweep(dir)?;
        let mut ok = true;
        for (cell, same) in &results {
            println!("{} {cell}", if *same { "identical" } else { "DIFFERS" });
            ok &= same;
        }
        return Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE });
    }
    let config = args.common.resolve()?;
    let axes = SweepAxes {
        algorithms: args.algorithms,
        topologies: args.topologies,
        noise_vars: args.noise_vars,
        mus: args.mus,
    };
    let rows = sweep(&config, &axes, &config.out_dir)?;
    info!("wrote {} cells to {}", rows.len(), config.out_dir.display());
    println!("{}", config.out_dir.join("manifest.csv").display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(args: VerifyArgs) -> Result<ExitCode> {
    let config = args.common.resolve()?;
    let opts = VerifyOptions {
        bound_rounds: args.bound_rounds,
        bias_trials: args.trials,
        ..Default::default()
    };
    let report = run_verify(&config, &opts)?;
    report.write(&config.out_dir)?;
    print!("{}", report.to_text());
    Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn cmd_rate(args: RateArgs) -> Result<ExitCode> {
    let series = match &args.input {
        Some(path) => read_csv_column(&fs::read_to_string(path)?, "grad_norm_sq_mean")?,
        None => {
            let config = args.common.resolve()?;
            let avg = run_averaged(&config)?;
            fs::create_dir_all(&config.out_dir)?;
            fs::write(config.out_dir.join("rate_input.csv"), format_cell_csv(&avg))?;
            let len = avg.rows.len() - 1;
            avg.rows[..len].iter().map(|r| r.grad_norm_sq_mean).collect()
        }
    };
    println!("{}", describe(rate_fit(&series)?));
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Rate(a) => cmd_rate(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
