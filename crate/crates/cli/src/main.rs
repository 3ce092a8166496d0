//! Command-line entry point: dataset generation, labeling, two-phase
//! training, evaluation, corruption sweeps, plots and oracle self-checks.

mod selfcheck;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use wilddrive::run::{self, RunConfig};
use wilddrive::Error;

#[derive(Parser)]
#[command(name = "wilddrive", version, about = "Modality-routed captioning and planning on synthetic off-road scenes")]
struct Cli {
    /// Base directory for every relative path.
    #[arg(long, global = true, default_value = ".")]
    workdir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides applied after the config file, e.g. `--set train.epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Gen {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the action vocabulary and trajectory labels of a dataset.
    Label {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train phase 1 (experts, heads, planner) or phase 2 (router).
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        phase: u8,
        #[arg(long)]
        data: PathBuf,
        /// Phase-1 checkpoint to start phase 2 from.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a dataset.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate every cell of the degradation grid (`eval.grid`).
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export report CSVs and a trajectory SVG.
    Plot {
        #[command(flatten)]
        common: Common,
        /// Directory of metric reports (a sweep output).
        #[arg(long)]
        reports: Option<PathBuf>,
        /// Prediction dump written by `eval`.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the gradient, mask, metric and clustering oracles.
    Selfcheck,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Data(_)
        | Error::Checksum { .. }
        | Error::Version { .. }
        | Error::Dependency(_)
        | Error::Io(_)
        | Error::Json(_) => 3,
        Error::Invariant(_) | Error::Num(_) => 4,
    }
}

fn kind(e: &Error) -> &'static str {
    match e {
        Error::Config(_) => "config",
        Error::Data(_) => "data",
        Error::Checksum { .. } => "checksum",
        Error::Version { .. } => "version",
        Error::Dependency(_) => "dependency",
        Error::Io(_) => "io",
        Error::Json(_) => "json",
        Error::Invariant(_) => "invariant",
        Error::Num(_) => "numeric",
    }
}

fn fail(e: &Error) -> ExitCode {
    let msg = e.to_string().replace('\n', " ");
    eprintln!("error kind={} message={:?}", kind(e), msg);
    ExitCode::from(exit_code(e))
}

fn load(common: &Common, wd: &Path) -> wilddrive::Result<RunConfig> {
    RunConfig::load(common.config.as_ref().map(|p| wd.join(p)).as_deref(), &common.overrides)
}

fn dispatch(cli: Cli) -> wilddrive::Result<()> {
    let wd = cli.workdir;
    let at = |p: &Path| wd.join(p);
    match cli.command {
        Command::Gen { common, count, seed, out } => {
            let cfg = load(&common, &wd)?;
            let sum = run::cmd_gen(&cfg, count, seed, &at(&out))?;
            println!("dataset {} records checksum {sum}", count);
        }
        Command::Label { common, data, out } => {
            let cfg = load(&common, &wd)?;
            run::cmd_label(&cfg, &at(&data), &at(&out))?;
            println!("labels written to {}", out.display());
        }
        Command::Train { common, phase, data, init, seed, out } => {
            let mut cfg = load(&common, &wd)?;
            cfg.train.phase = phase;
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            cfg.train.validate()?;
            run::cmd_train(&cfg, &at(&data), init.as_deref().map(at).as_deref(), &at(&out), |e| {
                match (e.l_total, e.l_route) {
                    (Some(t), _) => println!("epoch {} steps {} l_total {t:.5}", e.epoch, e.steps),
                    (_, Some(r)) => println!(
                        "epoch {} steps {} l_route {r:.5} router_accuracy {:.4}",
                        e.epoch,
                        e.steps,
                        e.router_accuracy.unwrap_or(0.0)
                    ),
                    _ => {}
                }
            })?;
            println!("checkpoint written to {}", out.join(run::CHECKPOINT).display());
        }
        Command::Eval { common, checkpoint, data, out } => {
            let cfg = load(&common, &wd)?;
            let r = run::cmd_eval(&cfg, &at(&checkpoint), &at(&data), &at(&out))?;
            println!(
                "records {} bleu_4 {:.4} macro_accuracy {:.4} min_ade {:.4} fde {:.4}",
                r.record_count, r.bleu_4, r.macro_accuracy, r.min_ade, r.fde
            );
        }
        Command::Sweep { common, checkpoint, data, out } => {
            let cfg = load(&common, &wd)?;
            let r = run::cmd_sweep(&cfg, &at(&checkpoint), &at(&data), &at(&out))?;
            for b in &r.breakdown {
                println!("{} macro_accuracy {:.4} min_ade {:.4}", b.degradation, b.macro_accuracy, b.min_ade);
            }
        }
        Command::Plot { common, reports, predictions, out } => {
            let cfg = load(&common, &wd)?;
            let written = run::cmd_plot(&cfg, reports.as_deref().map(at).as_deref(), predictions.as_deref().map(at).as_deref(), &at(&out))?;
            for p in written {
                println!("wrote {}", p.display());
            }
        }
        Command::Selfcheck => {
            if !selfcheck::run_all() {
                return Err(Error::Invariant("selfcheck failed".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let msg = e.to_string();
                let first = msg.lines().next().unwrap_or("usage error");
                eprintln!("error kind=usage message={first:?}");
                return ExitCode::from(2);
            }
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}
