//! Command-line front end: `adc prep | train | eval | sweep | report`.

pub mod commands;
pub mod error;
pub mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use commands::{EvalArgs, EvalSplit, PrepArgs, SweepArgs, SweepAxis, TrainArgs};
use error::{CliError, EXIT_OK, EXIT_USAGE};

#[derive(Debug, Parser)]
#[command(name = "adc", version, about = "Cross-domain recommendation with adaptive loss balancing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load or generate domains, write normalized copies, statistics and the split.
    Prep(PrepCmd),
    /// Train every run and report test metrics.
    Train(TrainCmd),
    /// Re-evaluate trained runs.
    Eval(EvalCmd),
    /// Train once per value of gamma or depth.
    Sweep(SweepCmd),
    /// Verify manifests and print a summary of the experiment.
    Report(DirArg),
}

#[derive(Debug, Args)]
struct DirArg {
    /// Experiment directory; relative paths resolve under $ADC_RUN_ROOT when set.
    #[arg(long, default_value = "run")]
    dir: PathBuf,
}

#[derive(Debug, Args)]
struct PrepCmd {
    #[command(flatten)]
    dir: DirArg,
    /// Domain rating files (`user<TAB>item<TAB>rating`), one per domain.
    files: Vec<PathBuf>,
    /// Generate synthetic domains: `p,users,items,overlap,noise[,density]`.
    #[arg(long)]
    synthetic: Option<String>,
    /// Per-domain densities for synthetic data.
    #[arg(long, value_delimiter = ',')]
    densities: Option<Vec<f64>>,
    /// Per-domain item counts for synthetic data.
    #[arg(long, value_delimiter = ',')]
    items: Option<Vec<usize>>,
    /// Index of the target domain.
    #[arg(long, default_value_t = 0)]
    target: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct TrainOpts {
    #[command(flatten)]
    dir: DirArg,
    /// Configuration file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key, `key=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    gamma: Option<String>,
    /// Number of shared hidden layers.
    #[arg(long)]
    h: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    runs: Option<String>,
    #[arg(long)]
    max_epochs: Option<String>,
}

impl TrainOpts {
    fn into_args(self) -> TrainArgs {
        let mut overrides = self.sets;
        for (key, value) in [
            ("gamma", self.gamma),
            ("h", self.h),
            ("seed", self.seed),
            ("runs", self.runs),
            ("max_epochs", self.max_epochs),
        ] {
            if let Some(v) = value {
                overrides.push(format!("{key} = {v}"));
            }
        }
        TrainArgs {
            dir: commands::resolve_dir(&self.dir.dir),
            config: self.config,
            overrides,
            ..TrainArgs::default()
        }
    }
}

#[derive(Debug, Args)]
struct TrainCmd {
    #[command(flatten)]
    opts: TrainOpts,
    /// Also train and report the single-domain BPR baseline.
    #[arg(long)]
    with_baseline: bool,
    /// Validate configuration and data, then exit without training.
    #[arg(long)]
    dry_run: bool,
    /// Continue each run from its last checkpoint.
    #[arg(long)]
    resume: bool,
    /// Stop each run after this many epochs, keeping the checkpoint.
    #[arg(long)]
    stop_after: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Test,
    Validation,
}

#[derive(Debug, Args)]
struct EvalCmd {
    #[command(flatten)]
    dir: DirArg,
    #[arg(long, value_delimiter = ',')]
    cutoffs: Option<Vec<usize>>,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AxisArg {
    Gamma,
    H,
}

#[derive(Debug, Args)]
struct SweepCmd {
    #[command(flatten)]
    opts: TrainOpts,
    #[arg(long, value_enum)]
    axis: AxisArg,
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<String>,
    /// Number of values trained concurrently.
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    #[arg(long)]
    with_baseline: bool,
}

fn dispatch(command: Command) -> Result<String, CliError> {
    match command {
        Command::Prep(c) => {
            let out = commands::cmd_prep(&PrepArgs {
                dir: commands::resolve_dir(&c.dir.dir),
                files: c.files,
                synthetic: c.synthetic,
                densities: c.densities,
                items: c.items,
                target: c.target,
                seed: c.seed,
            })?;
            Ok(out.stats)
        }
        Command::Train(c) => {
            let mut args = c.opts.into_args();
            args.with_baseline = c.with_baseline;
            args.dry_run = c.dry_run;
            args.resume = c.resume;
            args.stop_after = c.stop_after;
            Ok(commands::cmd_train(&args)?.text)
        }
        Command::Eval(c) => {
            let out = commands::cmd_eval(&EvalArgs {
                dir: commands::resolve_dir(&c.dir.dir),
                cutoffs: c.cutoffs,
                split: match c.split {
                    SplitArg::Test => EvalSplit::Test,
                    SplitArg::Validation => EvalSplit::Validation,
                },
            })?;
            Ok(out.text)
        }
        Command::Sweep(c) => {
            let mut train = c.opts.into_args();
            train.with_baseline = c.with_baseline;
            let (_, table) = commands::cmd_sweep(&SweepArgs {
                train,
                axis: match c.axis {
                    AxisArg::Gamma => SweepAxis::Gamma,
                    AxisArg::H => SweepAxis::H,
                },
                values: c.values,
                parallel: c.parallel.max(1),
            })?;
            Ok(table)
        }
        Command::Report(d) => commands::cmd_report(&commands::resolve_dir(&d.dir)),
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(text) => {
            print!("{text}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
