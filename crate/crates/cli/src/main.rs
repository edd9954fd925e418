use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use revpf_cli::commands::{cmd_diagnose, cmd_estimate, cmd_simulate, cmd_verify};
use revpf_cli::config::RunConfig;
use revpf_cli::{CliError, CliResult};
use revpf_core::estimator::Mode;
use revpf_core::identlab::{Grid, ScanSpec};
use revpf_core::{Execution, TechKind};

#[derive(Parser)]
#[command(name = "revpf", version, about = "Simulate, estimate and diagnose revenue production functions")]
struct Cli {
    /// Worker threads for the data-parallel loops (0 = all cores).
    #[arg(long, global = true, env = "REVPF_THREADS", default_value_t = 0)]
    threads: usize,

    /// Run every loop on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a firm panel; writes panel.csv and provenance.json.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Two-stage GMM on a panel file; writes estimate.json.
    Estimate {
        panel: PathBuf,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        kind: Option<TechKind>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Identification diagnostics; writes report.json and profile CSVs.
    Diagnose {
        panel: PathBuf,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        kind: Option<TechKind>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Parameter to profile, together with --grid.
        #[arg(long, requires = "grid")]
        scan: Option<String>,
        /// Profile grid as lo:hi:n.
        #[arg(long, requires = "scan")]
        grid: Option<Grid>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Checks a panel against the identities of the simulated model.
    Verify {
        panel: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .map_err(|e| CliError::Validation(format!("thread pool: {e}")))?;
    let exec = if cli.sequential { Execution::Sequential } else { Execution::Parallel };
    match cli.command {
        Command::Simulate { config, seed, out } => {
            let cfg = RunConfig::load(config.as_deref())?;
            let prov = cmd_simulate(&cfg, seed, &out, exec)?;
            let panel = &prov.outputs[0];
            println!("wrote {} ({})", out.join(&panel.name).display(), panel.sha256);
        }
        Command::Estimate { panel, mode, kind, config, out } => {
            let cfg = RunConfig::load(config.as_deref())?;
            let res = cmd_estimate(&cfg, &panel, mode, kind, &out, exec)?;
            println!("{} {} estimate {:?} objective {:.3e}", res.mode, res.kind, res.estimate, res.objective);
            if !res.non_identified_axes.is_empty() {
                println!("non-identified axes: {}", res.non_identified_axes.join(", "));
            }
        }
        Command::Diagnose { panel, mode, kind, config, scan, grid, out } => {
            let cfg = RunConfig::load(config.as_deref())?;
            let scan = scan.zip(grid).map(|(param, grid)| ScanSpec { param, grid });
            let report = cmd_diagnose(&cfg, &panel, mode, kind, scan, &out, exec)?;
            for (name, v) in &report.verdicts {
                println!("{name}: {v}");
            }
        }
        Command::Verify { panel, config, out } => {
            let cfg = config.as_deref().map(|p| RunConfig::load(Some(p))).transpose()?;
            let res = cmd_verify(cfg.as_ref(), &panel, &out)?;
            if !res.passed {
                let r = &res.report;
                return Err(CliError::Validation(format!(
                    "{} violations (revenue identity rows {:?}, reduced form rows {:?}, FOC price rows {:?}, markup rows {:?}, share rows {:?})",
                    res.violations, r.revenue_identity, r.reduced_form, r.foc_price, r.markup, r.share_elasticity
                )));
            }
            println!("pass: {} rows, {} skipped checks", res.report.rows, res.report.skipped);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
