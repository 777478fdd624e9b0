use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use iontronic_rc::experiment::{
    activation_table, emit_plotdata, preset, run_experiment, sweep, ExperimentConfig,
    ExperimentError, Figure, RunOptions, SearchSpace, PRESET_NAMES, VENTILATOR_ENV,
};
use iontronic_rc::memristor::ChannelSpec;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const OUTPUT_ROOT_ENV: &str = "IONTRONIC_OUTPUT_ROOT";

#[derive(Parser)]
#[command(name = "iontronic-rc", version, about = "Iontronic reservoir computing experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write metrics, traces and per-seed results.
    Run {
        #[command(flatten)]
        source: ConfigSource,
        #[command(flatten)]
        overrides: Overrides,
        /// Output directory; defaults to <output root>/<config name>.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Seeded random search over configuration values.
    Sweep {
        #[command(flatten)]
        source: ConfigSource,
        /// JSON search space with `parameters` and `objective`.
        #[arg(long)]
        space: PathBuf,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        /// Seed of the trial sequence.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Derive plotting CSV from a finished run.
    Plotdata {
        /// Run directory holding metrics.json and traces.
        #[arg(long)]
        run: PathBuf,
        /// fig2a, fig2b, fig3a, fig3b or activation.
        #[arg(long)]
        which: Figure,
        /// Defaults to <run>/plots.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tabulate the normalised steady-state conductance next to tanh.
    ActivationDump {
        /// Channel spec as JSON; defaults to the reference channel.
        #[arg(long)]
        channel: Option<PathBuf>,
        #[arg(long, default_value_t = -6.0, allow_negative_numbers = true)]
        v_min: f64,
        #[arg(long, default_value_t = 6.0, allow_negative_numbers = true)]
        v_max: f64,
        #[arg(long, default_value_t = 241)]
        points: usize,
        /// CSV file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a configuration without running it.
    ValidateConfig {
        #[command(flatten)]
        source: ConfigSource,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct ConfigSource {
    /// JSON experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Bundled configuration: mg400, harmonic12, vent-classify or vent-predict.
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Args)]
struct Overrides {
    /// Master seed for weights, timescales and generated data.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of seeded runs per network.
    #[arg(long)]
    runs: Option<usize>,
}

/// Failures grouped by exit code.
enum Failure {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Config(_) => Failure::Validation(e.into()),
            other => Failure::Runtime(other.into()),
        }
    }
}

fn load(source: &ConfigSource) -> Result<ExperimentConfig, Failure> {
    let config = match (&source.config, &source.preset) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))
                .map_err(Failure::Validation)?;
            ExperimentConfig::from_json(&text)
                .map_err(|e| Failure::Validation(anyhow!("{}: {e}", path.display())))?
        }
        (None, Some(name)) => preset(name).ok_or_else(|| {
            Failure::Validation(anyhow!(
                "unknown preset {name:?}; available: {}",
                PRESET_NAMES.join(", ")
            ))
        })?,
        (None, None) => unreachable!("clap requires a config source"),
    };
    Ok(config)
}

fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

/// `--out`, else the config's `output.dir` under the output root, else `<root>/<name>`.
fn options(out: Option<PathBuf>, config: &ExperimentConfig, suffix: &str) -> RunOptions {
    let dir = out.unwrap_or_else(|| match &config.output.dir {
        Some(dir) => output_root().join(dir),
        None => output_root().join(format!("{}{suffix}", config.name)),
    });
    RunOptions {
        output_dir: Some(dir),
        ventilator_csv: std::env::var_os(VENTILATOR_ENV).map(PathBuf::from),
    }
}

fn write_or_print(table: &iontronic_rc::experiment::run::Table, out: Option<&Path>) -> anyhow::Result<()> {
    match out {
        Some(path) => table.write(path).map_err(Into::into),
        None => {
            println!("{}", table.header.join(","));
            for row in &table.rows {
                println!("{}", row.join(","));
            }
            Ok(())
        }
    }
}

fn execute(command: Command) -> Result<bool, Failure> {
    match command {
        Command::Run {
            source,
            overrides,
            out,
        } => {
            let mut config = load(&source)?;
            if let Some(seed) = overrides.seed {
                config.run.master_seed = seed;
            }
            if let Some(runs) = overrides.runs {
                config.run.runs = runs;
            }
            let opts = options(out, &config, "");
            let report = run_experiment(&config, &opts)?;
            println!("{}", report.to_json());
            if let Some(dir) = &opts.output_dir {
                log::info!("artifacts written to {}", dir.display());
            }
            Ok(report.diverged_runs > 0)
        }
        Command::Sweep {
            source,
            space,
            trials,
            seed,
            out,
        } => {
            let config = load(&source)?;
            let text = std::fs::read_to_string(&space)
                .with_context(|| format!("reading {}", space.display()))
                .map_err(Failure::Validation)?;
            let space: SearchSpace = serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", space.display()))
                .map_err(Failure::Validation)?;
            let opts = options(out, &config, "-sweep");
            let report = sweep(&config, &space, trials, seed, &opts)?;
            println!("{}", serde_json::to_string_pretty(&report).map_err(|e| Failure::Runtime(e.into()))?);
            Ok(false)
        }
        Command::Plotdata { run, which, out } => {
            let out = out.unwrap_or_else(|| run.join("plots"));
            for path in emit_plotdata(&run, which, &out)? {
                println!("{}", path.display());
            }
            Ok(false)
        }
        Command::ActivationDump {
            channel,
            v_min,
            v_max,
            points,
            out,
        } => {
            let spec = match channel {
                Some(path) => {
                    let text = std::fs::read_to_string(&path)
                        .with_context(|| format!("reading {}", path.display()))
                        .map_err(Failure::Validation)?;
                    serde_json::from_str::<ChannelSpec>(&text)
                        .with_context(|| format!("parsing {}", path.display()))
                        .map_err(Failure::Validation)?
                }
                None => ChannelSpec::reference(),
            };
            let params = spec.to_params().map_err(|e| Failure::Validation(e.into()))?;
            let table = activation_table(&params, v_min, v_max, points)?;
            write_or_print(&table, out.as_deref()).map_err(Failure::Runtime)?;
            Ok(false)
        }
        Command::ValidateConfig { source } => {
            let config = load(&source)?;
            config.validate().map_err(|e| Failure::Validation(e.into()))?;
            println!("{}: ok", config.name);
            Ok(false)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => {
            log::warn!("some runs diverged");
            ExitCode::from(3)
        }
        Err(Failure::Validation(e)) => {
            eprintln!("invalid configuration: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
