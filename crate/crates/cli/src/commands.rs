use std::fs;
use std::io;
use std::net::TcpListener;
use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use nalgebra::DVector;
use serde::Serialize;
use serde_json::json;

use scr_core::dynamics::{FamilyKind, LatentState};
use scr_core::eval::{
    commands_from_controls, design_tasks, execute_open_loop, reconstruction_floor, run_ablation_study, run_tasks,
    stress_ramp_extrapolate, stress_release, stress_static_hold, waypoint_mse, AblationSettings, RunReport, SuiteKind,
    REPORT_KIND,
};
use scr_core::formats::{
    load_checkpoint, load_dataset, load_document, save_checkpoint, save_dataset, save_document, WaypointExport,
    WAYPOINT_EXPORT_KIND,
};
use scr_core::ocp::{make_waypoints, solve_ocp, CostWeights, OcpProblem, SolverSettings};
use scr_core::parallel::Execution;
use scr_core::plant::{generate_dataset, ExcitationProfile, PlantParams, DATASET_MAX_PRESSURE};
use scr_core::service::{serve, ModelRegistry};
use scr_core::sysid::{train, Checkpoint, DecoderKind, TrainConfig};

use crate::docs::{ExecutionDoc, SolutionDoc, StressDoc, EXECUTION_KIND, SOLUTION_KIND, STRESS_KIND};
use crate::{exit, Cli, Command, DecoderArg, FamilyArg, ProfileArg, SolverArgs, StressTest};

/// Environment variable overriding `serve --checkpoints`.
pub const CHECKPOINT_DIR_ENV: &str = "SCR_CHECKPOINT_DIR";

pub fn run(cli: Cli) -> Result<()> {
    let exec = if cli.sequential { Execution::Sequential } else { Execution::default() };
    let out = Output { json: cli.json };
    match cli.command {
        Command::GenData(a) => gen_data(a, out),
        Command::Train(a) => train_cmd(a, out, exec),
        Command::Optimize(a) => optimize(a, out),
        Command::Execute(a) => execute(a, out),
        Command::Evaluate(a) => evaluate(a, out, exec),
        Command::Stress(a) => stress(a, out, exec),
        Command::Ablate(a) => ablate(a, out, exec),
        Command::Report(a) => report(a, out),
        Command::Serve(a) => serve_cmd(a),
    }
}

/// Maps an error chain to the exit status of its root cause.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(core) = cause.downcast_ref::<scr_core::Error>() {
            return match core {
                scr_core::Error::Io(io) if io.kind() == io::ErrorKind::NotFound => exit::MISSING_FILE,
                scr_core::Error::Io(_) => exit::FAILURE,
                scr_core::Error::Version { .. } => exit::VERSION_MISMATCH,
                scr_core::Error::Malformed { .. } | scr_core::Error::Json(_) => exit::MALFORMED_INPUT,
                scr_core::Error::InvalidArgument(_) | scr_core::Error::DimensionMismatch { .. } => exit::INVALID_ARGUMENT,
                scr_core::Error::Divergence { .. }
                | scr_core::Error::TrainingDiverged { .. }
                | scr_core::Error::NonFiniteCost
                | scr_core::Error::SingularDamping { .. } => exit::NUMERICAL_FAILURE,
            };
        }
        if let Some(io) = cause.downcast_ref::<io::Error>() {
            return if io.kind() == io::ErrorKind::NotFound { exit::MISSING_FILE } else { exit::FAILURE };
        }
        if cause.downcast_ref::<serde_json::Error>().is_some() {
            return exit::MALFORMED_INPUT;
        }
        if cause.downcast_ref::<UsageError>().is_some() {
            return exit::INVALID_ARGUMENT;
        }
    }
    exit::FAILURE
}

/// A flag combination the parser cannot rule out on its own.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Clone, Copy)]
struct Output {
    json: bool,
}

impl Output {
    /// Prints `summary` as JSON when requested, otherwise the human line.
    fn emit<T: Serialize>(self, summary: &T, human: impl FnOnce() -> String) -> Result<()> {
        if self.json {
            println!("{}", serde_json::to_string(summary)?);
        } else {
            println!("{}", human());
        }
        Ok(())
    }
}

fn checkpoint_at(path: &Path) -> Result<Checkpoint> {
    load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn dataset_at(path: &Path) -> Result<scr_core::plant::Dataset> {
    load_dataset(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn stem(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or("model").to_string()
}

fn settings(s: &SolverArgs) -> SolverSettings {
    SolverSettings {
        iterations: s.iterations,
        learning_rate: s.learning_rate,
        seed: s.seed,
        ..SolverSettings::default()
    }
}

fn gen_data(a: crate::GenData, out: Output) -> Result<()> {
    let kind = match a.kind {
        ProfileArg::Sinusoidal => ExcitationProfile::Sinusoidal,
        ProfileArg::Step => ExcitationProfile::Step,
    };
    let data = generate_dataset(kind, a.duration, a.seed, &PlantParams::default())?;
    save_dataset(&data, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    out.emit(
        &json!({"frames": data.len(), "height": data.height, "width": data.width, "out": a.out}),
        || format!("wrote {} frames to {}", data.len(), a.out.display()),
    )
}

fn base_config(config: Option<&Path>, family: FamilyArg, decoder: DecoderArg) -> Result<TrainConfig> {
    if let Some(path) = config {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: TrainConfig = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        return Ok(cfg);
    }
    let family = match family {
        FamilyArg::Koopman => FamilyKind::Koopman,
        FamilyArg::Mlp => FamilyKind::Mlp,
        FamilyArg::Oscillator => FamilyKind::Oscillator,
    };
    let decoder = match decoder {
        DecoderArg::Dense => DecoderKind::Dense,
        DecoderArg::Keypoint => DecoderKind::KeypointBroadcast,
    };
    Ok(TrainConfig::for_model(family, decoder))
}

fn train_cmd(a: crate::Train, out: Output, exec: Execution) -> Result<()> {
    let mut cfg = base_config(a.config.as_deref(), a.family, a.decoder)?;
    if let Some(e) = a.epochs {
        cfg = cfg.with_epochs(e);
    }
    if let Some(s) = a.steps_per_epoch {
        cfg.steps_per_epoch = s;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.execution = exec;
    let train_set = dataset_at(&a.data)?;
    let val = dataset_at(&a.val)?;
    let quiet = out.json;
    let ck = train(&cfg, &train_set, &val, &mut |r| {
        if !quiet {
            eprintln!("epoch {:>3}  H {:>2}  loss {:.6}", r.epoch, r.horizon, r.loss.total);
        }
    })?;
    save_checkpoint(&ck, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    let last = ck.history.last().map(|r| r.loss.total);
    out.emit(
        &json!({"out": a.out, "epochs": ck.history.len(), "final_loss": last, "latent_scale": ck.latent_scale}),
        || format!("wrote {} (latent scale {:.4})", a.out.display(), ck.latent_scale),
    )
}

fn optimize(a: crate::Optimize, out: Output) -> Result<()> {
    let ck = checkpoint_at(&a.checkpoint)?;
    let export: WaypointExport = load_document(WAYPOINT_EXPORT_KIND, &a.waypoints)
        .with_context(|| format!("loading waypoints {}", a.waypoints.display()))?;
    if export.states.len() < 2 {
        bail!(usage("the waypoint export needs a start state and at least one target"));
    }
    let suite = a.suite.as_deref().map(SuiteKind::parse).transpose()?;
    let (horizon, weights) = match (suite, &a.weights) {
        (Some(kind), _) => {
            let s = kind.suite();
            if export.states.len() != s.waypoints {
                bail!(usage(format!(
                    "{} uses {} waypoints (start included); the export has {}",
                    s.name,
                    s.waypoints,
                    export.states.len()
                )));
            }
            (a.horizon.unwrap_or(s.horizon), s.cost_weights())
        }
        (None, Some(w)) => {
            if w.len() != 6 {
                bail!(usage(format!("--weights takes 6 values, got {}", w.len())));
            }
            let horizon = a
                .horizon
                .or(export.horizon)
                .ok_or_else(|| usage("--weights needs --horizon or an export with a horizon"))?;
            (horizon, CostWeights::tracking([w[0], w[1], w[2], w[3], w[4], w[5]]))
        }
        (None, None) => bail!(usage("pass --suite or --weights")),
    };
    let start = &export.states[0];
    let enc = &ck.model.encoder;
    let targets = export.targets();
    let waypoints = make_waypoints(enc, &targets, horizon, ck.model.dynamics.dt())?;
    let problem = OcpProblem {
        initial: LatentState::at_rest(enc.mean(&start.observation)?),
        u0: DVector::from_column_slice(&start.u),
        horizon,
        waypoints,
        weights,
        latent_scale: ck.latent_scale,
        settings: SolverSettings {
            p_max: a.p_max,
            ..settings(&a.solver)
        },
    };
    let solution = solve_ocp(&ck.model.dynamics, &problem)?;
    if let Some(w) = &solution.warning {
        eprintln!("warning: {w}");
    }
    let doc = SolutionDoc {
        model_id: export.model_id.clone(),
        suite,
        setpoint: suite.is_some_and(SuiteKind::is_setpoint),
        horizon,
        tau: problem.waypoints.tau.clone(),
        weights,
        p_max: a.p_max,
        start_observation: start.observation.clone(),
        start_pressure: start.u,
        targets: targets.into_iter().map(|t| t.observation).collect(),
        commands: commands_from_controls(&solution.controls),
        solution,
    };
    save_document(SOLUTION_KIND, &doc, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    out.emit(
        &json!({
            "out": a.out,
            "horizon": doc.horizon,
            "waypoints": doc.tau.len(),
            "tau": doc.tau,
            "cost": doc.solution.cost.total,
            "best_iteration": doc.solution.best_iteration,
        }),
        || format!("T = {}, K = {}, cost {:.6e}", doc.horizon, doc.tau.len(), doc.solution.cost.total),
    )
}

fn execute(a: crate::Execute, out: Output) -> Result<()> {
    let sol: SolutionDoc =
        load_document(SOLUTION_KIND, &a.solution).with_context(|| format!("loading solution {}", a.solution.display()))?;
    let plant = PlantParams::default().with_max_pressure(sol.p_max.max(DATASET_MAX_PRESSURE));
    let run = execute_open_loop(&plant, &plant.equilibrium(sol.start_pressure), &sol.commands);
    let mse = waypoint_mse(&run.frames, &sol.targets, &sol.tau, sol.setpoint)?;
    let still = vec![sol.start_observation.clone(); run.frames.len()];
    let baseline = waypoint_mse(&still, &sol.targets, &sol.tau, sol.setpoint)?;
    let actual_pressures = run.actual_pressures();
    let doc = ExecutionDoc {
        model_id: sol.model_id,
        commands: sol.commands,
        actual_pressures,
        mse,
        baseline_mse: baseline,
        frames: a.frames.then_some(run.frames),
    };
    save_document(EXECUTION_KIND, &doc, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    out.emit(&json!({"out": a.out, "mse": mse, "baseline_mse": baseline}), || {
        format!("waypoint MSE {mse:.6e} (holding still: {baseline:.6e})")
    })
}

fn evaluate(a: crate::Evaluate, out: Output, exec: Execution) -> Result<()> {
    let ck = checkpoint_at(&a.checkpoint)?;
    let kind = SuiteKind::parse(&a.suite)?;
    let step_data = dataset_at(&a.step_data)?;
    let params = PlantParams::default();
    let count = a.count.unwrap_or(kind.suite().n);
    let tasks = design_tasks(kind, &params, &step_data, count, a.task_seed)?;
    let model_id = a.model_id.unwrap_or_else(|| stem(&a.checkpoint));
    let mut report = RunReport::default();
    for r in run_tasks(&ck, &model_id, &params, &tasks, settings(&a.solver), exec) {
        report.trajectories.push(r?);
    }
    report.refresh_aggregates();
    save_document(REPORT_KIND, &report, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    let mean = report.aggregates.iter().find(|g| g.suite.is_none()).map(|g| g.mean_mse);
    out.emit(&json!({"out": a.out, "trajectories": report.trajectories.len(), "mean_mse": mean}), || {
        format!("{} {}: mean MSE {:.6e} over {} trajectories", model_id, kind.slug(), mean.unwrap_or(f64::NAN), count)
    })
}

fn stress(a: crate::Stress, out: Output, exec: Execution) -> Result<()> {
    let ck = checkpoint_at(&a.checkpoint)?;
    let data = a.data.as_deref().map(dataset_at).transpose()?;
    let floor = data.as_ref().map(|d| reconstruction_floor(&ck, d, 500)).transpose()?;
    let doc = match a.test {
        StressTest::Hold => {
            let data = data.as_ref().ok_or_else(|| usage("the hold test needs --data"))?;
            let holds = stress_static_hold(&ck, data, a.states, a.steps, a.seed, exec)?;
            StressDoc {
                test: "hold".into(),
                reconstruction_floor: floor,
                value: holds.iter().map(|h| h.drift()).reduce(f64::max),
                commands: holds.iter().map(|h| h.pressure).collect(),
                series: holds.into_iter().map(|h| h.mse).collect(),
            }
        }
        StressTest::Release => {
            let r = stress_release(&ck)?;
            StressDoc {
                test: "release".into(),
                reconstruction_floor: floor,
                value: Some(r.final_mse()),
                series: vec![r.mse_to_rest],
                commands: r.commands,
            }
        }
        StressTest::Ramp => {
            if a.target.len() != 4 {
                bail!(usage(format!("--target takes 4 pressures, got {}", a.target.len())));
            }
            let target = [a.target[0], a.target[1], a.target[2], a.target[3]];
            let r = stress_ramp_extrapolate(&ck, &PlantParams::default(), target)?;
            StressDoc {
                test: "ramp".into(),
                reconstruction_floor: floor,
                value: r.balance_residual,
                series: vec![r.mse],
                commands: r.commands,
            }
        }
    };
    save_document(STRESS_KIND, &doc, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    out.emit(
        &json!({"out": a.out, "test": doc.test, "value": doc.value, "reconstruction_floor": floor}),
        || match doc.value {
            Some(v) => format!("{} test: {v:.6e}", doc.test),
            None => format!("{} test: no force balance for this model family", doc.test),
        },
    )
}

fn ablate(a: crate::Ablate, out: Output, exec: Execution) -> Result<()> {
    let base = base_config(a.config.as_deref(), FamilyArg::Oscillator, DecoderArg::Keypoint)?;
    let train_set = dataset_at(&a.data)?;
    let val = dataset_at(&a.val)?;
    let step_data = dataset_at(&a.step_data)?;
    let s = AblationSettings {
        epochs: a.epochs,
        steps_per_epoch: a.steps_per_epoch,
        trajectories: a.trajectories,
        setpoints: a.setpoints,
        ocp_iterations: a.iterations,
        seed: a.seed,
        ..AblationSettings::default()
    };
    let entries = run_ablation_study(&base, &train_set, &val, &step_data, &PlantParams::default(), &s, exec)?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let report = RunReport {
        ablation: entries,
        ..RunReport::default()
    };
    let path = a.out_dir.join("ablation.json");
    save_document(REPORT_KIND, &report, &path).with_context(|| format!("writing {}", path.display()))?;
    out.emit(&report.ablation, || {
        let mut lines = vec![format!("wrote {}", path.display())];
        for e in &report.ablation {
            lines.push(format!(
                "{:<28} multi-step MSE {:>12}  pressure MAE {:>8}{}",
                e.label,
                e.multistep_mse.map_or("-".into(), |v| format!("{v:.4e}")),
                e.pressure_mae.map_or("-".into(), |v| format!("{v:.2}")),
                e.error.as_deref().map_or(String::new(), |m| format!("  ({m})")),
            ));
        }
        lines.join("\n")
    })
}

fn report(a: crate::Report, out: Output) -> Result<()> {
    let mut merged = RunReport::default();
    for path in &a.inputs {
        let r: RunReport = load_document(REPORT_KIND, path).with_context(|| format!("loading report {}", path.display()))?;
        let recomputed = RunReport::compute_aggregates(&r.trajectories);
        if !r.aggregates.is_empty() && r.aggregates != recomputed {
            eprintln!("warning: stored aggregates in {} differ from the recomputed ones", path.display());
        }
        merged.trajectories.extend(r.trajectories);
        merged.pressure_mae.extend(r.pressure_mae);
        merged.multistep_mse.extend(r.multistep_mse);
        merged.stress.extend(r.stress);
        merged.ablation.extend(r.ablation);
    }
    merged.refresh_aggregates();
    if let Some(path) = &a.out {
        save_document(REPORT_KIND, &merged, path).with_context(|| format!("writing {}", path.display()))?;
    }
    if a.table {
        print!("{}", merged.trajectory_table());
        return Ok(());
    }
    out.emit(&merged.aggregates, || {
        merged
            .aggregates
            .iter()
            .map(|g| {
                let suite = g.suite.map_or("all", SuiteKind::slug);
                format!("{:<20} {:<14} n={:<3} mean MSE {:.6e}", g.model, suite, g.count, g.mean_mse)
            })
            .collect::<Vec<_>>()
            .join("\n")
    })
}

fn serve_cmd(a: crate::Serve) -> Result<()> {
    let dir = std::env::var_os(CHECKPOINT_DIR_ENV).map_or(a.checkpoints, Into::into);
    let registry = ModelRegistry::from_dir(&dir).with_context(|| format!("loading checkpoints from {}", dir.display()))?;
    if registry.is_empty() {
        bail!(usage(format!("no checkpoints found in {}", dir.display())));
    }
    let listener = TcpListener::bind((a.host.as_str(), a.port))?;
    eprintln!(
        "serving {} model(s) [{}] on {}",
        registry.len(),
        registry.ids().join(", "),
        listener.local_addr()?
    );
    serve(listener, Arc::new(registry))?;
    Ok(())
}
