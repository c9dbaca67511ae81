use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pod2c::artifact::{load_policy, load_trajectory};
use pod2c_harness::pipeline::{
    write_evaluation, write_policy, write_sysid_check, write_training, POLICY_FILE, TRAJECTORY_FILE,
};
use pod2c_harness::{Experiment, HarnessError};

/// Print to stdout, ignoring a closed pipe.
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

#[derive(Parser)]
#[command(name = "pod2c", version, about = "Output-feedback trajectory optimization from black-box rollouts")]
struct Cli {
    /// Override a configuration key, e.g. `--set eval.episodes=50`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE", global = true)]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Report observability ranks and identification residuals per ARMA order.
    SysidCheck { config: PathBuf },
    /// Optimize the nominal trajectory.
    Train { config: PathBuf },
    /// Fit the final model and compute feedback and observer gains.
    Synthesize {
        config: PathBuf,
        /// Trajectory artifact; defaults to the one in the output directory.
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// Monte-Carlo comparison of open-loop and closed-loop control.
    Evaluate {
        config: PathBuf,
        /// Policy artifact; defaults to the one in the output directory.
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Also write SVG charts.
        #[arg(long)]
        svg: bool,
    },
}

fn list(paths: &[PathBuf]) {
    for p in paths {
        out!("wrote {}", p.display());
    }
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let load = |path: &Path| Experiment::load(path, &cli.overrides);
    match cli.command {
        Command::SysidCheck { config } => {
            let exp = load(&config)?;
            let check = exp.sysid_check()?;
            out!("{:>3} {:>14} {:>12} {:>6}", "q", "residual", "ratio", "rank");
            for (i, r) in check.empirical.residuals.iter().enumerate() {
                let ratio = check.empirical.ratios.get(i).map_or(String::from("-"), |v| format!("{v:.4}"));
                let rank = check
                    .analytic
                    .as_ref()
                    .and_then(|a| a.get(i))
                    .map_or(String::from("-"), |(_, rep)| format!("{}/{}", rep.rank, rep.state_dim));
                out!("{:>3} {:>14.6e} {:>12} {:>6}", i + 1, r, ratio, rank);
            }
            if let Some(q) = check.analytic_order() {
                out!("analytic order: {q}");
            } else if check.analytic.is_some() {
                out!("analytic order: none up to q_max");
            }
            let fallback = if check.empirical.fallback { " (fallback to q_max)" } else { "" };
            out!("recommended order: {}{fallback}", check.empirical.q);
            list(&[write_sysid_check(&exp.config.output_dir(), &check)?]);
        }
        Command::Train { config } => {
            let exp = load(&config)?;
            let result = exp.train()?;
            let last = result.trajectory.outputs.last().expect("non-empty");
            out!(
                "{:?} after {} iterations, cost {:.6e}, terminal output {:?}",
                result.termination,
                result.iterations(),
                result.trajectory.cost,
                last.as_slice()
            );
            list(&write_training(&exp.config.output_dir(), &result)?);
        }
        Command::Synthesize { config, trajectory } => {
            let exp = load(&config)?;
            let dir = exp.config.output_dir();
            let path = trajectory.unwrap_or_else(|| dir.join(TRAJECTORY_FILE));
            let nominal = load_trajectory(&path)?;
            let policy = exp.synthesize(&nominal)?;
            out!("information state dimension {}, horizon {}", policy.dim(), policy.horizon());
            list(&[write_policy(&dir, &policy)?]);
        }
        Command::Evaluate { config, policy, svg } => {
            let exp = load(&config)?;
            let dir = exp.config.output_dir();
            let path = policy.unwrap_or_else(|| dir.join(POLICY_FILE));
            let policy = load_policy(&path)?;
            let report = exp.evaluate(&policy)?;
            out!("nominal cost {:.6e}", report.nominal_cost);
            out!(
                "{:>12} {:>8} {:>8} {:>12} {:>12} {:>12} {:>12}",
                "sweep", "process", "meas", "open mean", "open std", "closed mean", "closed std"
            );
            for l in &report.levels {
                out!(
                    "{:>12} {:>8.3} {:>8.3} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e}",
                    l.point.sweep.name(),
                    l.point.process_std,
                    l.point.measurement_std,
                    l.open_loop.mean,
                    l.open_loop.std(),
                    l.closed_loop.mean,
                    l.closed_loop.std()
                );
            }
            list(&write_evaluation(&dir, &report, svg || exp.config.output.svg)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
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
