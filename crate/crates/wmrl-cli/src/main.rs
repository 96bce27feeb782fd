use clap::{Parser, Subcommand};

use wmrl_cli::commands::analyze_critic::{cmd_analyze_critic, AnalyzeCriticArgs};
use wmrl_cli::commands::calibrate::{cmd_calibrate, CalibrateArgs};
use wmrl_cli::commands::export_curves::{cmd_export_curves, ExportCurvesArgs};
use wmrl_cli::commands::gen_dataset::{cmd_gen_dataset, GenDatasetArgs};
use wmrl_cli::commands::grad_check::{cmd_grad_check, GradCheckArgs};
use wmrl_cli::commands::run::{cmd_run, RunArgs};
use wmrl_cli::commands::train_wm::{cmd_train_wm, TrainWmArgs};

/// Model-based data augmentation for offline-to-online reinforcement
/// learning, on small deterministic control environments.
#[derive(Parser)]
#[command(name = "wmrl", version, about, max_term_width = 100)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Establish score references (and the medium policy) for an environment.
    Calibrate(CalibrateArgs),
    /// Build an offline dataset of a given flavor.
    GenDataset(GenDatasetArgs),
    /// Train a world model on an offline dataset.
    TrainWm(TrainWmArgs),
    /// Run the two-phase experiment: offline pre-training, online fine-tuning.
    Run(RunArgs),
    /// Score an expert episode with a checkpoint's critics.
    AnalyzeCritic(AnalyzeCriticArgs),
    /// Verify analytic gradients against finite differences.
    GradCheck(GradCheckArgs),
    /// Merge learning curves from several runs into one table.
    ExportCurves(ExportCurvesArgs),
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Calibrate(args) => cmd_calibrate(args),
        Command::GenDataset(args) => cmd_gen_dataset(args),
        Command::TrainWm(args) => cmd_train_wm(args),
        Command::Run(args) => cmd_run(args),
        Command::AnalyzeCritic(args) => cmd_analyze_critic(args),
        Command::GradCheck(args) => cmd_grad_check(args),
        Command::ExportCurves(args) => cmd_export_curves(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
