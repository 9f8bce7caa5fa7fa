use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cellfree::channel::{build_simlike_statistics, sample_ensemble};
use cellfree::experiment::{emit_results, run_experiment, ExperimentSpec, PowerMode};
use cellfree::precoders::PrecoderKind;
use cellfree::scenario::{generate_scenario, GeometryConfig, NetworkScenario};
use cellfree::{Error, Result};

#[derive(Parser)]
#[command(name = "cellfree", version, about = "Cell-free downlink feasibility experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a feasibility sweep and write results.csv / results.json.
    Run(RunArgs),
    /// Draw one scenario and write it as JSON.
    Scenario {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw a CSI ensemble for a stored scenario.
    Ensemble {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Experiment description in TOML.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    drops: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated SINR targets; replaces any targets from the config.
    #[arg(long, value_delimiter = ',')]
    gammas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    precoders: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    modes: Option<Vec<String>>,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    #[arg(long)]
    log_trajectories: bool,
}

fn build_spec(args: &RunArgs) -> Result<ExperimentSpec> {
    let mut spec = match &args.config {
        Some(path) => ExperimentSpec::load(path)?,
        None => ExperimentSpec::default(),
    };
    if let Some(d) = args.drops {
        spec.drops = d;
    }
    if let Some(s) = args.samples {
        spec.samples = s;
    }
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    if let Some(g) = &args.gammas {
        spec.gammas = g.clone();
        spec.rates.clear();
    }
    if let Some(p) = &args.precoders {
        spec.precoders = p.iter().map(|n| PrecoderKind::parse(n)).collect::<Result<_>>()?;
    }
    if let Some(m) = &args.modes {
        spec.modes = m.iter().map(|n| PowerMode::parse(n)).collect::<Result<_>>()?;
    }
    spec.log_trajectories |= args.log_trajectories;
    spec.validate()?;
    Ok(spec)
}

fn load_geometry(path: &Option<PathBuf>) -> Result<GeometryConfig> {
    match path {
        Some(p) => {
            let cfg: GeometryConfig = toml::from_str(&std::fs::read_to_string(p)?)?;
            cfg.validate()?;
            Ok(cfg)
        }
        None => Ok(GeometryConfig::default()),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => {
            let spec = build_spec(&args)?;
            log::info!("running {} drops", spec.drops);
            let res = run_experiment(&spec)?;
            let csv = emit_results(&res, &args.out)?;
            for c in &res.cells {
                println!(
                    "gamma={:.4} precoder={} mode={} feasible={}/{} excluded={} rate={:.3}",
                    c.gamma,
                    c.precoder.name(),
                    c.mode.name(),
                    c.feasible,
                    c.drops,
                    c.excluded,
                    c.rate_feasible
                );
            }
            println!("wrote {} ({:.1} s)", csv.display(), res.timing.wall_time_s);
        }
        Command::Scenario { config, seed, out } => {
            let cfg = load_geometry(&config)?;
            generate_scenario(&cfg, seed)?.save(&out)?;
        }
        Command::Ensemble { scenario, samples, seed, out } => {
            if samples == 0 {
                return Err(Error::InvalidConfig("samples must be at least 1".into()));
            }
            let scn = NetworkScenario::load(&scenario)?;
            sample_ensemble(&build_simlike_statistics(&scn), samples, seed)?.save(&out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
