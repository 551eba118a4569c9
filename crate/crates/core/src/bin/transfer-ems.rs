use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use transfer_ems::cycles::SpeedUnit;
use transfer_ems::explore::NoiseSpec;
use transfer_ems::runner::{self, Mode, Overrides, Profile, RunError};

#[derive(Parser)]
#[command(name = "transfer-ems", version, about = "HEV energy management with DDPG and weight transfer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on the source cycles and save a checkpoint.
    TrainSource(Common),
    /// Train on the target cycles, from scratch or from --checkpoint.
    TrainTarget(Common),
    /// Source runs for every noise, then the source-init x target-noise grid.
    Grid(Common),
    /// Clean-policy trace of a checkpoint on the target cycles.
    Rollout(Common),
    /// Recompute report rows from target run directories.
    Report(WithInputs),
    /// Merge learning curves into plot data and an SVG overlay.
    Plots(WithInputs),
}

#[derive(Args, Clone, Default)]
struct Common {
    /// TOML config file; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated cycle refs (`builtin:<name>` or file paths) for the
    /// cycles this mode runs on.
    #[arg(long, value_delimiter = ',')]
    cycles: Option<Vec<String>>,
    /// Unit of speed columns in cycle files.
    #[arg(long)]
    speed_unit: Option<SpeedUnit>,
    /// Exploration noise, e.g. `OU_AS(0.09)`, `APS(OU:0.09&0.03)`, `None`.
    #[arg(long)]
    noise: Option<NoiseSpec>,
    #[arg(long)]
    sigma2_action: Option<f64>,
    #[arg(long)]
    sigma2_param: Option<f64>,
    /// Source checkpoint to transfer from (train-target) or run (rollout).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    profile: Option<Profile>,
}

#[derive(Args, Clone)]
struct WithInputs {
    /// Run directories, or grid directories containing them.
    #[arg(required = true)]
    dirs: Vec<PathBuf>,
    #[command(flatten)]
    common: Common,
}

impl Common {
    fn overrides(&self, inputs: Vec<PathBuf>) -> Overrides {
        Overrides {
            profile: self.profile,
            seed: self.seed,
            out: self.out.clone(),
            cycles: self.cycles.clone(),
            speed_unit: self.speed_unit,
            noise: self.noise.clone(),
            sigma2_action: self.sigma2_action,
            sigma2_param: self.sigma2_param,
            checkpoint: self.checkpoint.clone(),
            inputs,
        }
    }
}

fn run(cli: Cli) -> Result<(), RunError> {
    let (mode, common, inputs) = match cli.command {
        Command::TrainSource(c) => (Mode::TrainSource, c, vec![]),
        Command::TrainTarget(c) => (Mode::TrainTarget, c, vec![]),
        Command::Grid(c) => (Mode::Grid, c, vec![]),
        Command::Rollout(c) => (Mode::Rollout, c, vec![]),
        Command::Report(w) => (Mode::Report, w.common, w.dirs),
        Command::Plots(w) => (Mode::Plots, w.common, w.dirs),
    };
    let mut flags = common.overrides(inputs);
    // report and plots are pure post-processing; keep the seed optional there
    if matches!(mode, Mode::Report | Mode::Plots) && flags.seed.is_none() {
        flags.seed = Some(0);
    }
    let cfg = runner::resolve_config(mode, common.config.as_deref(), &flags)?;
    match mode {
        Mode::TrainSource => {
            let r = runner::run_train_source(&cfg)?;
            let last = r.curve.last().map_or("-".to_string(), |v| format!("{v:.3}"));
            println!("trained {} episodes, last return {last}, checkpoint {}", r.curve.len(), r.checkpoint.display());
        }
        Mode::TrainTarget => {
            let r = runner::run_train_target(&cfg)?;
            println!("{}", transfer_ems::transfer::REPORT_HEADER);
            println!("{}", r.csv_row());
        }
        Mode::Grid => {
            let s = runner::run_grid(&cfg)?;
            print!("{}", s.to_csv());
            let failed = s.rows.iter().filter(|r| r.result.is_err()).count();
            eprintln!("{} cells, {failed} failed, summary {}", s.rows.len(), s.path.display());
        }
        Mode::Rollout => {
            for (name, log) in runner::run_rollout(&cfg)? {
                println!("{name}: return {:.3}, fuel {:.1} g", log.total_return, log.total_fuel_g());
            }
        }
        Mode::Report => {
            let r = runner::run_report(&cfg)?;
            println!("{}", transfer_ems::transfer::REPORT_HEADER);
            for row in &r.rows {
                println!("{row}");
            }
            for (dir, why) in &r.skipped {
                eprintln!("skipped {}: {why}", dir.display());
            }
        }
        Mode::Plots => {
            let r = runner::emit_plots(&cfg.inputs, &cfg.out)?;
            println!("{} series written to {}", r.series.len(), cfg.out.display());
            for dir in &r.missing {
                eprintln!("missing curve: {}", dir.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.category());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
