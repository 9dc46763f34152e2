//! Command-line entry point. Exit codes: 0 success, 1 usage error, 2
//! runtime failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use adashare_core::trainer::BaselineKind;
use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};

use crate::config::{WorkbenchConfig, PRESET_DEFAULT};
use crate::error::{Result, WorkbenchError};
use crate::plan::{render_workspace, run_plan, with_workers};
use crate::runs::Workspace;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "adashare", version, about = "Learned select-or-skip sharing for multi-task networks")]
pub struct Cli {
    /// `preset_default` or a JSON configuration file.
    #[arg(long, global = true, default_value = PRESET_DEFAULT)]
    pub config: String,
    /// Seed of a single run, or the only seed of a plan.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "runs")]
    pub out: PathBuf,
    /// Worker threads (all cores by default).
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    pub workers: Option<u16>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the synthetic splits of one seed as CSV.
    SynthGen,
    /// Learn a policy (warm-up and policy phase).
    PolicyLearn {
        /// Plan variant whose overrides apply.
        #[arg(long)]
        variant: Option<String>,
    },
    /// Sample architectures from a learned policy and retrain them.
    Retrain {
        #[arg(long)]
        variant: Option<String>,
    },
    /// Train a baseline.
    Baseline {
        #[arg(long, value_enum)]
        kind: BaselineArg,
    },
    /// Test-split metrics of retrained checkpoints (uses the stored config).
    Eval,
    /// Regenerate results, heatmaps and summary from stored runs (uses the
    /// stored config).
    Report,
    /// Run every experiment of the configuration for every seed.
    Plan,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum BaselineArg {
    SingleTask,
    HardSharing,
    Random1,
    Random2,
}

impl From<BaselineArg> for BaselineKind {
    fn from(a: BaselineArg) -> Self {
        match a {
            BaselineArg::SingleTask => BaselineKind::SingleTask,
            BaselineArg::HardSharing => BaselineKind::HardSharing,
            BaselineArg::Random1 => BaselineKind::Random1,
            BaselineArg::Random2 => BaselineKind::Random2,
        }
    }
}

/// Parses `args` (program name first), executes and returns the exit code.
pub fn main_with_args<I, T>(args: I, stdout: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(lines) => {
            for line in lines {
                let _ = writeln!(stdout, "{line}");
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}

fn variant<'c>(config: &'c WorkbenchConfig, name: Option<&str>) -> Result<Option<&'c crate::config::Variant>> {
    let Some(name) = name else { return Ok(None) };
    let v = config
        .variant(name)
        .ok_or_else(|| WorkbenchError::config(format!("no variant named `{name}`")))?;
    if v.baseline.is_some() {
        return Err(WorkbenchError::config(format!("variant `{name}` is a baseline")));
    }
    Ok(Some(v))
}

pub fn execute(cli: &Cli) -> Result<Vec<String>> {
    let workers = cli.workers.map(usize::from);
    let open = || -> Result<(Workspace, u64)> {
        let config = WorkbenchConfig::load(&cli.config)?;
        let seed = cli.seed.unwrap_or(config.seeds[0]);
        Ok((Workspace::open(&cli.out, config)?, seed))
    };
    match &cli.command {
        Command::SynthGen => {
            let (ws, seed) = open()?;
            let dir = ws.seed(seed).export_data()?;
            Ok(vec![format!("wrote {}", dir.display())])
        }
        Command::PolicyLearn { variant: name } => {
            let (ws, seed) = open()?;
            let v = variant(ws.config(), name.as_deref())?;
            let runs = ws.seed(seed);
            let (logits, record) = with_workers(workers, || runs.policy(v))??;
            let dir = runs.run_dir(v.map_or(crate::runs::ADASHARE, |v| v.name.as_str()));
            Ok(vec![
                format!(
                    "{} warm-up + {} policy iterations, final epoch {}, final tau {}",
                    record.warmup_iters, record.policy_iters, record.final_epoch, record.final_tau
                ),
                format!("argmax decisions (block rows, task columns):\n{}", logits.argmax_decision().render().trim_end()),
                format!("wrote {}", dir.join("policy.csv").display()),
            ])
        }
        Command::Retrain { variant: name } => {
            let (ws, seed) = open()?;
            let v = variant(ws.config(), name.as_deref())?;
            let runs = ws.seed(seed);
            let report = with_workers(workers, || runs.retrain(v))??;
            let m = runs.completed(&report.name)?.expect("retrain completed");
            let mut lines: Vec<String> = m
                .samples
                .iter()
                .map(|s| format!("sample {}: delta_t {:.4}", s.index, s.delta_overall))
                .collect();
            lines.push(format!(
                "best sample {}: delta_t {:.4}",
                m.best_index.unwrap_or_default(),
                report.delta_overall
            ));
            Ok(lines)
        }
        Command::Baseline { kind } => {
            let (ws, seed) = open()?;
            let runs = ws.seed(seed);
            let report = with_workers(workers, || runs.baseline((*kind).into(), None))??;
            Ok(vec![format!("{}: delta_t {:.4}", report.name, report.delta_overall)])
        }
        Command::Eval => {
            let ws = Workspace::existing(&cli.out)?;
            let seeds = match cli.seed {
                Some(s) => vec![s],
                None => ws.seeds_on_disk()?,
            };
            let mut lines = Vec::new();
            for s in seeds {
                let runs = ws.seed(s);
                let metrics = runs.evaluate_test()?;
                for (name, tasks) in metrics {
                    for t in tasks {
                        let values: Vec<String> = t.metrics.iter().map(|m| format!("{} {:.4}", m.name, m.value)).collect();
                        lines.push(format!("seed {s} {name} {}: {}", t.task, values.join(", ")));
                    }
                }
            }
            Ok(lines)
        }
        Command::Report => {
            let summary = render_workspace(&cli.out)?;
            Ok(summary
                .runs
                .iter()
                .map(|(name, r)| format!("{name}: mean {:.4} min {:.4} max {:.4}", r.mean, r.min, r.max))
                .collect())
        }
        Command::Plan => {
            let mut config = WorkbenchConfig::load(&cli.config)?;
            if let Some(s) = cli.seed {
                config.seeds = vec![s];
            }
            let summary = run_plan(&cli.out, config, workers)?;
            let mut lines: Vec<String> = summary
                .runs
                .iter()
                .map(|(name, r)| format!("{name}: mean {:.4} min {:.4} max {:.4}", r.mean, r.min, r.max))
                .collect();
            lines.push(format!("wrote {}", cli.out.join("summary.json").display()));
            Ok(lines)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn code(args: &[&str]) -> i32 {
        main_with_args(std::iter::once("adashare").chain(args.iter().copied()), &mut Vec::new())
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(code(&[]), EXIT_USAGE);
        assert_eq!(code(&["frobnicate"]), EXIT_USAGE);
        assert_eq!(code(&["plan", "--bogus"]), EXIT_USAGE);
        assert_eq!(code(&["plan", "--workers", "0"]), EXIT_USAGE);
        assert_eq!(code(&["baseline", "--kind", "nope"]), EXIT_USAGE);
    }

    #[test]
    fn help_exits_zero() {
        assert_eq!(code(&["--help"]), EXIT_OK);
        assert_eq!(code(&["plan", "--help"]), EXIT_OK);
    }

    #[test]
    fn runtime_failures_exit_two() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        assert_eq!(code(&["report", "--out", out]), EXIT_FAILURE);
        assert_eq!(code(&["plan", "--config", "/nonexistent.json", "--out", out]), EXIT_FAILURE);
    }

    #[test]
    fn global_flags_parse_anywhere() {
        let cli = Cli::try_parse_from(["adashare", "--seed", "3", "plan", "--workers", "2", "--out", "x"]).unwrap();
        assert_eq!(cli.seed, Some(3));
        assert_eq!(cli.workers, Some(2));
        assert_eq!(cli.out, PathBuf::from("x"));
        assert_eq!(cli.config, PRESET_DEFAULT);
        assert!(matches!(cli.command, Command::Plan));
    }
}
