//! `scr`: data generation, training, trajectory optimization, open-loop
//! execution, stress tests, ablations, reports and the live simulator.

mod commands;
mod docs;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Exit statuses, one per failure class.
pub mod exit {
    pub const FAILURE: u8 = 1;
    /// Unknown flags or bad flag values (reported by the argument parser).
    pub const USAGE: u8 = 2;
    pub const MISSING_FILE: u8 = 3;
    pub const VERSION_MISMATCH: u8 = 4;
    pub const MALFORMED_INPUT: u8 = 5;
    pub const INVALID_ARGUMENT: u8 = 6;
    pub const NUMERICAL_FAILURE: u8 = 7;
}

#[derive(Debug, Parser)]
#[command(name = "scr", version, about = "Latent dynamics and open-loop control for a soft continuum robot")]
struct Cli {
    /// Print a machine-readable JSON summary on standard output.
    #[arg(long, global = true)]
    json: bool,
    /// Run sequentially even when the parallel feature is compiled in.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the plant under random excitation and write a dataset file.
    GenData(GenData),
    /// Train a model on a dataset and write a checkpoint.
    Train(Train),
    /// Optimize open-loop controls for exported waypoints.
    Optimize(Optimize),
    /// Apply an optimized control sequence to the plant and score it.
    Execute(Execute),
    /// Design and run a whole trajectory suite, writing a run report.
    Evaluate(Evaluate),
    /// Run a stress test on a checkpoint.
    Stress(Stress),
    /// Train the full model and its single-change ablations and score them.
    Ablate(Ablate),
    /// Merge run reports and recompute their aggregates.
    Report(Report),
    /// Serve checkpoints to live-simulator clients.
    Serve(Serve),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ProfileArg {
    Sinusoidal,
    Step,
}

#[derive(Debug, Args)]
struct GenData {
    #[arg(long, value_enum)]
    kind: ProfileArg,
    /// Duration in seconds (at least 10).
    #[arg(long, default_value_t = 900.0)]
    duration: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FamilyArg {
    Koopman,
    Mlp,
    Oscillator,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DecoderArg {
    Dense,
    Keypoint,
}

#[derive(Debug, Args)]
struct Train {
    /// Training configuration (JSON); overrides --family and --decoder.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FamilyArg::Oscillator)]
    family: FamilyArg,
    #[arg(long, value_enum, default_value_t = DecoderArg::Keypoint)]
    decoder: DecoderArg,
    /// Training dataset.
    #[arg(long)]
    data: PathBuf,
    /// Validation dataset for the latent scale statistic.
    #[arg(long)]
    val: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    steps_per_epoch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SolverArgs {
    #[arg(long, default_value_t = 500)]
    iterations: usize,
    #[arg(long, default_value_t = 0.5)]
    learning_rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct Optimize {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Waypoint export; its first state is the start configuration.
    #[arg(long)]
    waypoints: PathBuf,
    /// Trajectory suite preset supplying horizon, waypoint count and weights.
    #[arg(long, conflicts_with = "weights")]
    suite: Option<String>,
    /// Tracking weights w_Q,w_Qdot,w_Qk,w_Qdot_k,w_Qf,w_Qdot_f (needs --horizon).
    #[arg(long, value_delimiter = ',')]
    weights: Option<Vec<f64>>,
    /// Horizon T; defaults to the suite's or the export's.
    #[arg(long)]
    horizon: Option<usize>,
    /// Upper pressure bound (kPa).
    #[arg(long, default_value_t = 86.0)]
    p_max: f64,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct Execute {
    /// Solution written by `optimize`.
    #[arg(long)]
    solution: PathBuf,
    /// Include every rendered frame in the output.
    #[arg(long)]
    frames: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct Evaluate {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Model name recorded in the report; defaults to the checkpoint file stem.
    #[arg(long)]
    model_id: Option<String>,
    #[arg(long)]
    suite: String,
    /// Step dataset providing settled setpoint targets.
    #[arg(long)]
    step_data: PathBuf,
    /// Number of trajectories; defaults to the suite's.
    #[arg(long)]
    count: Option<usize>,
    #[arg(long, default_value_t = 0)]
    task_seed: u64,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StressTest {
    Hold,
    Release,
    Ramp,
}

#[derive(Debug, Args)]
struct Stress {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_enum)]
    test: StressTest,
    /// Step dataset with settled frames (hold test) and for the reconstruction floor.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    states: usize,
    #[arg(long, default_value_t = 500)]
    steps: usize,
    /// Ramp end pressures (kPa), four comma-separated values.
    #[arg(long, value_delimiter = ',', default_values_t = [100.0, 0.0, 95.0, 10.0])]
    target: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct Ablate {
    /// Base training configuration (JSON); defaults to oscillator with keypoint decoder.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    val: PathBuf,
    #[arg(long)]
    step_data: PathBuf,
    #[arg(long, default_value_t = 40)]
    epochs: usize,
    #[arg(long, default_value_t = 50)]
    steps_per_epoch: usize,
    #[arg(long, default_value_t = 50)]
    trajectories: usize,
    #[arg(long, default_value_t = 50)]
    setpoints: usize,
    #[arg(long, default_value_t = 500)]
    iterations: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct Report {
    /// Run reports to merge.
    #[arg(long, num_args = 1.., required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the per-trajectory table as tab-separated values.
    #[arg(long)]
    table: bool,
}

#[derive(Debug, Args)]
struct Serve {
    /// Directory of checkpoint files; the SCR_CHECKPOINT_DIR variable overrides it.
    #[arg(long, default_value = "checkpoints")]
    checkpoints: PathBuf,
    #[arg(long, default_value_t = 7878)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
