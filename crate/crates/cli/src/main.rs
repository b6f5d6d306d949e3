use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use coopfuse::bev_fusion::GridSpec;
use coopfuse::wire::{FusionLevel, ShapeConfig};
use coopfuse_cli::commands::{
    self, bandwidth_table, format_bandwidth, load_config, noise_sweep_cmd, simulate, wire_decode, wire_encode,
    CliError, Overrides,
};
use coopfuse_cli::config::ConfigError;

/// Multi-level cooperative perception experiments.
#[derive(Debug, Parser)]
#[command(name = "coopfuse", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evaluate fusion levels over a scene batch and write reports.
    Simulate(RunArgs),
    /// Print the per-sender link rate of each level.
    Bandwidth(ShapeArgs),
    /// Compare baseline, localization, calibration and combined noise.
    NoiseSweep {
        #[command(flatten)]
        run: RunArgs,
        /// Level to evaluate (defaults to the config's sweep level).
        #[arg(long)]
        level: Option<String>,
    },
    /// Convert cooperative messages between JSON and the binary format.
    #[command(subcommand)]
    Wire(WireCommand),
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated subset of rpf,qff,bff,adaptive.
    #[arg(long, value_delimiter = ',')]
    levels: Option<Vec<String>>,
    #[arg(long)]
    seed: Option<u64>,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            out: self.out.clone(),
            levels: self.levels.clone(),
            seed: self.seed,
        }
    }
}

#[derive(Debug, Args)]
struct ShapeArgs {
    #[arg(long, default_value_t = 200)]
    height: usize,
    #[arg(long, default_value_t = 200)]
    width: usize,
    #[arg(long, default_value_t = 256)]
    channels: usize,
    #[arg(long, default_value_t = 900)]
    query_count: u32,
    /// Floats per query: embedding width plus ref point and score.
    #[arg(long, default_value_t = 516)]
    query_floats: u32,
    #[arg(long, default_value_t = 900)]
    refpoint_count: u32,
    #[arg(long, default_value_t = 5)]
    fps: u32,
    /// Emit JSON instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Subcommand)]
enum WireCommand {
    /// JSON message to binary.
    Encode {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Binary message to a field summary, optionally also to JSON.
    Decode {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(args) => {
            let cfg = load_config(&args.config, &args.overrides())?;
            let out = simulate(&cfg)?;
            print!("{}", String::from_utf8_lossy(&commands::report_csv(&out.report).map_err(CliError::Runtime)?));
        }
        Command::Bandwidth(a) => {
            let shape = ShapeConfig {
                bev: GridSpec {
                    height: a.height,
                    width: a.width,
                    channels: a.channels,
                    ..GridSpec::default()
                },
                query_count: a.query_count,
                query_floats: a.query_floats,
                refpoint_count: a.refpoint_count,
                fps: a.fps,
            };
            let rows = bandwidth_table(&shape)?;
            if a.json {
                println!("{}", serde_json::to_string_pretty(&rows).map_err(|e| CliError::Runtime(e.into()))?);
            } else {
                print!("{}", format_bandwidth(&rows));
            }
        }
        Command::NoiseSweep { run, level } => {
            let cfg = load_config(&run.config, &run.overrides())?;
            let level = level
                .map(|l| {
                    FusionLevel::parse(&l).ok_or_else(|| ConfigError::Invalid(format!("unknown level {l:?}")))
                })
                .transpose()?;
            let report = noise_sweep_cmd(&cfg, level)?;
            print!("{}", String::from_utf8_lossy(&commands::report_csv(&report).map_err(CliError::Runtime)?));
        }
        Command::Wire(WireCommand::Encode { input, output }) => {
            let n = wire_encode(&input, &output)?;
            println!("wrote {n} bytes to {}", output.display());
        }
        Command::Wire(WireCommand::Decode { input, json }) => {
            let (_, summary) = wire_decode(&input, json.as_deref())?;
            print!("{summary}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { commands::EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
