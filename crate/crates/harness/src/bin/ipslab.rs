use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ipslab_harness::config::{parse_seeds, ConfigError, Experiment, ExperimentConfig};
use ipslab_harness::experiments;

#[derive(Parser)]
#[command(name = "ipslab", version, about = "Mode collapse under expected return, and the IPS correction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the deterministic bandit logit flow under both objectives.
    BanditFlow(Common),
    /// Sampled group updates on an equal-reward bandit.
    BanditStochastic(Common),
    /// Train GRPO and IPS-GRPO on the hyper-grid.
    Hypergrid(Common),
    /// Two equal-reward goals with different path counts.
    EqualReward(Common),
    /// Group size × clipping threshold sweep.
    Ablate(Common),
    /// Write the exact target table for a grid.
    OracleDump(Common),
}

#[derive(Args)]
struct Common {
    /// TOML file merged over the built-in preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seeds as a list of values and ranges, e.g. `1-5,9`.
    #[arg(long)]
    seeds: Option<String>,
    /// Validate and print the plan without training or writing files.
    #[arg(long)]
    dry_run: bool,
    /// Worker threads; 0 uses one per core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

fn resolve(experiment: Experiment, args: &Common) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path, experiment)?,
        None => ExperimentConfig::preset(experiment),
    };
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    if let Some(list) = &args.seeds {
        cfg.seeds = parse_seeds(list)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (experiment, args) = match &cli.command {
        Command::BanditFlow(a) => (Experiment::BanditFlow, a),
        Command::BanditStochastic(a) => (Experiment::BanditStochastic, a),
        Command::Hypergrid(a) => (Experiment::Hypergrid, a),
        Command::EqualReward(a) => (Experiment::EqualReward, a),
        Command::Ablate(a) => (Experiment::Ablation, a),
        Command::OracleDump(a) => (Experiment::OracleDump, a),
    };
    let cfg = match resolve(experiment, args) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(2);
        }
    };
    let report = match experiments::run(&cfg, args.jobs, args.dry_run) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };

    println!("{} (config {})", report.experiment, report.config_hash);
    if let Some(lines) = report.summary.get("preflight").and_then(|v| v.as_array()) {
        for l in lines.iter().filter_map(|l| l.as_str()) {
            println!("  {l}");
        }
    }
    if report.dry_run {
        println!("{}", serde_json::to_string_pretty(&report.summary).expect("json value"));
        return ExitCode::SUCCESS;
    }
    for c in &report.checks {
        println!("{}", c.line());
    }
    println!("{} files written to {}", report.files.len(), cfg.output_dir.display());
    if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
