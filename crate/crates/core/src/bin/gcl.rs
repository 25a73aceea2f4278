use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use guided_cost::costmodel::CostNetwork;
use guided_cost::envs::{generate_demos, write_demos, EnvSpec};
use guided_cost::gcl::{evaluate_distance, reoptimize};
use guided_cost::harness::config::start_state;
use guided_cost::harness::{exit_code, run_experiment, ExperimentConfig, ExperimentKind, RunSummary};
use guided_cost::rng::substream;
use guided_cost::{Error, Result};

#[derive(Parser)]
#[command(name = "gcl", version, about = "Guided cost learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate demonstrations from the ground-truth cost.
    GenDemos {
        #[arg(long)]
        env: String,
        #[arg(long, default_value_t = 40)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        conditions: usize,
        #[arg(long, default_value_t = 1.0)]
        noise_scale: f64,
        /// Defaults to `demos/<env>` under the output root.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the experiment a config file describes.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Reoptimize a policy against a saved cost and report its final distance.
    Eval {
        #[arg(long)]
        cost: PathBuf,
        #[arg(long)]
        env: String,
        /// Comma-separated start: a position, joint angles, or a full state.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        start: Option<Vec<f64>>,
        #[arg(long, default_value_t = 20)]
        rollouts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Point-mass consistency experiment with its ablations.
    Consistency {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Regularizer ablation.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
}

#[derive(clap::Args)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Overrides {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
    }
}

fn preset_or_file(kind: ExperimentKind, config: &Option<PathBuf>) -> Result<ExperimentConfig> {
    let cfg = match config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::preset(kind),
    };
    if cfg.experiment != kind {
        return Err(Error::Config(format!(
            "config describes a '{}' experiment, expected '{}'",
            cfg.experiment.name(),
            kind.name()
        )));
    }
    Ok(cfg)
}

fn run(cfg: &ExperimentConfig) -> Result<()> {
    let RunSummary { dir, manifest, lines } = run_experiment(cfg)?;
    for line in lines {
        println!("{line}");
    }
    println!("wrote {} artifacts to {} (inputs {})", manifest.artifacts.len(), dir.display(), &manifest.input_hash[..12]);
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenDemos {
            env,
            n,
            seed,
            conditions,
            noise_scale,
            out,
        } => {
            let spec = EnvSpec::by_name(&env)?;
            let mut cfg = ExperimentConfig::preset(ExperimentKind::Train);
            cfg.output_dir = out.unwrap_or_else(|| PathBuf::from("demos").join(&spec.name));
            let dir = cfg.resolved_output_dir();
            let conditions = conditions.min(n.max(1));
            let mut rng = substream(seed, "demos");
            let set = generate_demos(&spec, &spec.initial_conditions(conditions), n, noise_scale, &mut rng)?;
            let manifest = write_demos(&dir, &spec, seed, &set)?;
            println!("wrote {} demos to {}", manifest.files.len(), dir.display());
            Ok(())
        }
        Command::Train { config, overrides } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            overrides.apply(&mut cfg);
            run(&cfg)
        }
        Command::Eval {
            cost,
            env,
            start,
            rollouts,
            seed,
        } => {
            if rollouts == 0 {
                return Err(Error::Config("--rollouts must be positive".into()));
            }
            let spec = EnvSpec::by_name(&env)?;
            let net = CostNetwork::load(&cost)?;
            if net.state_dim != spec.d_x() {
                return Err(Error::Config(format!(
                    "cost expects {}-dimensional states but {} has {}",
                    net.state_dim,
                    spec.name,
                    spec.d_x()
                )));
            }
            let x0 = match &start {
                Some(values) => start_state(&spec, values)?,
                None => nalgebra::DVector::from_vec(spec.init_mean.clone()),
            };
            let ctrl = reoptimize(&spec, &net, &x0)?;
            let d = evaluate_distance(&spec, &ctrl, &x0, rollouts, &mut substream(seed, "eval"))?;
            println!("final distance-to-goal {d:.6}");
            Ok(())
        }
        Command::Consistency { config, overrides } => {
            let mut cfg = preset_or_file(ExperimentKind::Consistency, &config)?;
            overrides.apply(&mut cfg);
            run(&cfg)
        }
        Command::Ablate { config, overrides } => {
            let mut cfg = preset_or_file(ExperimentKind::AblateReg, &config)?;
            overrides.apply(&mut cfg);
            run(&cfg)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
