use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gnn_featcache::harness::{self, RunConfig, RunOutput};
use gnn_featcache::{Error, Result};

/// Trace-driven simulator of a shared, window-aware GPU feature cache.
#[derive(Parser)]
#[command(name = "featcache", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample minibatches and run the pipeline.
    Simulate(RunArgs),
    /// Like simulate, also writing trace files.
    Record(RunArgs),
    /// Drive the pipeline from recorded trace files.
    Replay {
        #[arg(long)]
        trace_dir: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Repeat a run over several values of one key, e.g. policy=RR,Hybrid.
    Sweep {
        #[arg(long)]
        vary: String,
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Config overrides as `--<key> <value>` pairs.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    overrides: Vec<String>,
}

impl RunArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::from_file(&self.config)?;
        cfg.apply_overrides(&self.overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn report(out: &RunOutput) {
    let s = &out.summary;
    match s.hit_ratio {
        Some(h) => println!("run {}: hit ratio {h:.4} over {} iterations", s.run_id, s.measured_iters),
        None => println!("run {}: no measured iterations", s.run_id),
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(args) => report(&harness::simulate(&args.load()?)?),
        Command::Record(args) => report(&harness::record(&args.load()?)?),
        Command::Replay { trace_dir, run } => report(&harness::replay(&run.load()?, &trace_dir)?),
        Command::Sweep { vary, run } => {
            let (key, values) = vary
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--vary expects key=v1,v2,..., got `{vary}`")))?;
            let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).collect();
            for e in harness::sweep(&run.load()?, key, &values)? {
                match e.summary.hit_ratio {
                    Some(h) => println!("{key}={}: hit ratio {h:.4}", e.value),
                    None => println!("{key}={}: no measured iterations", e.value),
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage_error = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage_error { 1 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
