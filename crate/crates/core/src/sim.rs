//! Deterministic multi-rate simulation on a virtual clock.
//!
//! Every periodic task fires at `t_k = ⌊k·10⁹/rate⌋` ns. Events sharing a
//! timestamp run in the order plant, tracker, solver completion, solver start,
//! operator, logger. A plant event at `t_k` advances the plant from `t_{k−1}`
//! to `t_k`, so the tracker at the same instant sees the current state.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::Arc;
use std::thread::JoinHandle;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ExperimentConfig, MetricsConfig};
use crate::model::{discrete_step, ee_jacobian, AugmentedTarget, DynamicsModel, PlanarArm, PlantInput, PlantState};
use crate::mpc::{
    evaluate_command, hold_command, mpc_step, Command, ControllerVariant, DelayModel, MpcConfig, MpcRequest,
    PolicySnapshot, SnapshotSlot,
};
use crate::ocp::OcpProblem;
use crate::teleop::{device_step, force_feedback, Coupling, HapticDevice, OperatorModel};

/// Version tag written into every log artifact.
pub const LOG_VERSION: u32 = 1;

/// Metric names accepted by ordering assertions and reports.
pub const METRIC_NAMES: &[&str] = &[
    "tracking_error",
    "force_std",
    "max_penetration",
    "instability",
    "replans",
    "skipped_replans",
    "failed_solves",
    "stale_evaluations",
];

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error("simulation diverged at t = {t} s: {what}")]
    Diverged { t: f64, what: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed log {path}: {message}")]
    Log { path: PathBuf, message: String },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("log has no clutched samples")]
    NoClutchedSamples,
    #[error("no contact detected")]
    NoContact,
    #[error("log lacks channel {0}")]
    MissingChannel(String),
}

/// Spring-damper half-space `{p : (p − point)·normal ≥ 0}` is free space.
#[derive(Debug, Clone, PartialEq)]
pub struct Wall {
    pub point: DVector<f64>,
    pub normal: DVector<f64>,
    pub stiffness: f64,
    pub damping: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Obstacle {
    pub center: DVector<f64>,
    pub radius: f64,
    pub buffer: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Environment {
    pub wall: Option<Wall>,
    pub obstacles: Vec<Obstacle>,
}

impl Environment {
    pub fn from_config(config: &ExperimentConfig) -> Self {
        let env = &config.environment;
        Self {
            wall: env.wall.as_ref().map(|w| {
                let n = DVector::from_column_slice(&w.normal);
                Wall {
                    point: DVector::from_column_slice(&w.point),
                    normal: &n / n.norm(),
                    stiffness: w.stiffness,
                    damping: w.damping,
                }
            }),
            obstacles: env
                .obstacles
                .iter()
                .map(|o| Obstacle {
                    center: DVector::from_column_slice(&o.center),
                    radius: o.radius,
                    buffer: o.buffer,
                })
                .collect(),
        }
    }
}

/// Force of the wall on the end effector: `(k·p + d·max(0, −v·n))·n` with
/// penetration `p = max(0, −(x − x_w)·n)`; zero without penetration.
pub fn contact_force(env: &Environment, ee_pos: &DVector<f64>, ee_vel: &DVector<f64>) -> DVector<f64> {
    let Some(w) = &env.wall else {
        return DVector::zeros(ee_pos.len());
    };
    let depth = -(ee_pos - &w.point).dot(&w.normal);
    if depth <= 0.0 {
        return DVector::zeros(ee_pos.len());
    }
    let approach = (-ee_vel.dot(&w.normal)).max(0.0);
    &w.normal * (w.stiffness * depth + w.damping * approach)
}

/// Joint-level tracking law: `u + Kp·(q_nom − q)` for velocity-controlled
/// plants, pass-through otherwise.
pub fn tracking_loop_step(model: &dyn DynamicsModel, x_plant: &PlantState, command: &Command, kp_joint: f64) -> PlantInput {
    if model.velocity_controlled() && kp_joint != 0.0 {
        &command.input + (&command.nominal_state - x_plant) * kp_joint
    } else {
        command.input.clone()
    }
}

/// Outcome of one replan tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveRecord {
    pub tick: u64,
    pub t: f64,
    pub id: Option<u64>,
    pub variant: ControllerVariant,
    pub status: SolveStatus,
    pub available_at: Option<f64>,
    pub iterations: usize,
    pub final_cost: f64,
    pub converged: bool,
    /// Wall-clock solve time; only recorded with the measured delay model.
    pub wall_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveStatus {
    Ok,
    Skipped,
    Failed(String),
}

/// Uniformly sampled record of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentLog {
    pub channels: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub solves: Vec<SolveRecord>,
    pub meta: LogMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogMeta {
    pub log_version: u32,
    pub code_version: String,
    pub config_name: String,
    pub config_hash: String,
    pub seed: u64,
    pub variant: ControllerVariant,
    pub duration: f64,
    pub logger_hz: f64,
    pub ee_dim: usize,
    pub obstacles: Vec<(Vec<f64>, f64, f64)>,
    pub float_mode: String,
}

fn write_file(path: &Path, contents: &str) -> Result<(), SimError> {
    fs::write(path, contents).map_err(|source| SimError::Io {
        path: path.to_path_buf(),
        source,
    })
}

impl ExperimentLog {
    pub fn channel(&self, name: &str) -> Option<usize> {
        self.channels.iter().position(|c| c == name)
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>, MetricError> {
        let i = self.channel(name).ok_or_else(|| MetricError::MissingChannel(name.into()))?;
        Ok(self.rows.iter().map(|r| r[i]).collect())
    }

    /// Rows of a vector channel `prefix_0 … prefix_{d−1}`.
    pub fn vectors(&self, prefix: &str) -> Result<Vec<DVector<f64>>, MetricError> {
        let idx: Vec<usize> = (0..)
            .map(|i| self.channel(&format!("{prefix}_{i}")))
            .take_while(|c| c.is_some())
            .flatten()
            .collect();
        if idx.is_empty() {
            return Err(MetricError::MissingChannel(prefix.into()));
        }
        Ok(self
            .rows
            .iter()
            .map(|r| DVector::from_iterator(idx.len(), idx.iter().map(|&i| r[i])))
            .collect())
    }

    fn header_comment(&self) -> String {
        format!(
            "# haptic-mpc log v{} config_hash={} seed={} variant={}",
            self.meta.log_version, self.meta.config_hash, self.meta.seed, self.meta.variant
        )
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(self.rows.len() * self.channels.len() * 12);
        s.push_str(&self.header_comment());
        s.push('\n');
        s.push_str(&self.channels.join(","));
        s.push('\n');
        for row in &self.rows {
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    s.push(',');
                }
                let _ = write!(s, "{v:?}");
            }
            s.push('\n');
        }
        s
    }

    pub fn solves_csv(&self) -> String {
        let mut s = self.header_comment();
        s.push_str("\ntick,t,id,variant,status,available_at,iterations,final_cost,converged,wall_time\n");
        for r in &self.solves {
            let status = match &r.status {
                SolveStatus::Ok => "ok".to_string(),
                SolveStatus::Skipped => "skipped".to_string(),
                SolveStatus::Failed(m) => format!("failed: {}", m.replace(',', ";")),
            };
            let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{:?},{},{},{},{},{},{:?},{},{}",
                r.tick,
                r.t,
                r.id.map(|i| i.to_string()).unwrap_or_default(),
                r.variant,
                status,
                opt(r.available_at),
                r.iterations,
                r.final_cost,
                r.converged,
                opt(r.wall_time)
            );
        }
        s
    }

    /// Writes `log.csv`, `solves.csv` and `meta.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), SimError> {
        fs::create_dir_all(dir).map_err(|source| SimError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        write_file(&dir.join("log.csv"), &self.to_csv())?;
        write_file(&dir.join("solves.csv"), &self.solves_csv())?;
        let meta = serde_json::to_string_pretty(&self.meta).expect("metadata serializes");
        write_file(&dir.join("meta.json"), &(meta + "\n"))
    }

    /// Reads a log written by [`ExperimentLog::write`] (solve records are not
    /// reloaded).
    pub fn read(dir: &Path) -> Result<Self, SimError> {
        let read = |name: &str| {
            let path = dir.join(name);
            fs::read_to_string(&path).map_err(|source| SimError::Io { path, source })
        };
        let malformed = |message: String| SimError::Log {
            path: dir.to_path_buf(),
            message,
        };
        let meta: LogMeta = serde_json::from_str(&read("meta.json")?).map_err(|e| malformed(e.to_string()))?;
        if meta.log_version != LOG_VERSION {
            return Err(malformed(format!(
                "log version {} is not supported (expected {LOG_VERSION})",
                meta.log_version
            )));
        }
        let text = read("log.csv")?;
        let mut lines = text.lines().filter(|l| !l.starts_with('#'));
        let channels: Vec<String> = lines
            .next()
            .ok_or_else(|| malformed("missing header".into()))?
            .split(',')
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let row: Result<Vec<f64>, _> = line.split(',').map(str::parse::<f64>).collect();
            let row = row.map_err(|e| malformed(format!("row {}: {e}", i + 1)))?;
            if row.len() != channels.len() {
                return Err(malformed(format!("row {} has {} fields, expected {}", i + 1, row.len(), channels.len())));
            }
            rows.push(row);
        }
        let solves = match fs::read_to_string(dir.join("solves.csv")) {
            Ok(text) => parse_solves(&text).map_err(malformed)?,
            Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
            Err(source) => {
                return Err(SimError::Io {
                    path: dir.join("solves.csv"),
                    source,
                })
            }
        };
        Ok(Self {
            channels,
            rows,
            solves,
            meta,
        })
    }
}

fn parse_solves(text: &str) -> Result<Vec<SolveRecord>, String> {
    let mut out = Vec::new();
    for (i, line) in text.lines().filter(|l| !l.starts_with('#')).skip(1).enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        let bad = |what: &str| format!("solves row {}: bad {what}", i + 1);
        if f.len() != 10 {
            return Err(bad("field count"));
        }
        let opt = |s: &str, what: &str| -> Result<Option<f64>, String> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| bad(what))
            }
        };
        let status = match f[4] {
            "ok" => SolveStatus::Ok,
            "skipped" => SolveStatus::Skipped,
            s => SolveStatus::Failed(s.strip_prefix("failed: ").ok_or_else(|| bad("status"))?.to_string()),
        };
        out.push(SolveRecord {
            tick: f[0].parse().map_err(|_| bad("tick"))?,
            t: f[1].parse().map_err(|_| bad("t"))?,
            id: if f[2].is_empty() { None } else { Some(f[2].parse().map_err(|_| bad("id"))?) },
            variant: f[3].parse().map_err(|_| bad("variant"))?,
            status,
            available_at: opt(f[5], "available_at")?,
            iterations: f[6].parse().map_err(|_| bad("iterations"))?,
            final_cost: f[7].parse().map_err(|_| bad("final_cost"))?,
            converged: f[8].parse().map_err(|_| bad("converged"))?,
            wall_time: opt(f[9], "wall_time")?,
        });
    }
    Ok(out)
}

/// Scalar results of one run, computed from its log.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub tracking_error: Result<f64, MetricError>,
    pub force_std: Result<f64, MetricError>,
    pub bump_time: Option<f64>,
    pub max_penetration: f64,
    pub instability: bool,
    pub replans: usize,
    pub skipped_replans: usize,
    pub failed_solves: usize,
    pub stale_evaluations: usize,
}

impl Metrics {
    pub fn from_log(log: &ExperimentLog, config: &MetricsConfig) -> Self {
        let obstacles: Vec<Obstacle> = log
            .meta
            .obstacles
            .iter()
            .map(|(c, r, b)| Obstacle {
                center: DVector::from_column_slice(c),
                radius: *r,
                buffer: *b,
            })
            .collect();
        let stale = log
            .column("stale")
            .map(|c| c.iter().filter(|v| **v != 0.0).count())
            .unwrap_or(0);
        Self {
            tracking_error: metric_tracking_error(log),
            force_std: metric_force_stability(log, config),
            bump_time: bump_time(log, config.bump_threshold),
            max_penetration: obstacles.iter().map(|o| metric_constraint(log, o)).fold(0.0, f64::max),
            instability: instability_flag(log, config),
            replans: log.solves.iter().filter(|s| s.status == SolveStatus::Ok).count(),
            skipped_replans: log.solves.iter().filter(|s| s.status == SolveStatus::Skipped).count(),
            failed_solves: log
                .solves
                .iter()
                .filter(|s| matches!(s.status, SolveStatus::Failed(_)))
                .count(),
            stale_evaluations: stale,
        }
    }

    /// Value of a named metric; errors and flags map to NaN and 0/1.
    pub fn get(&self, name: &str) -> Option<f64> {
        let v = match name {
            "tracking_error" => self.tracking_error.clone().unwrap_or(f64::NAN),
            "force_std" => self.force_std.clone().unwrap_or(f64::NAN),
            "max_penetration" => self.max_penetration,
            "instability" => f64::from(u8::from(self.instability)),
            "replans" => self.replans as f64,
            "skipped_replans" => self.skipped_replans as f64,
            "failed_solves" => self.failed_solves as f64,
            "stale_evaluations" => self.stale_evaluations as f64,
            _ => return None,
        };
        Some(v)
    }

    /// Flat `key = value` report.
    pub fn to_report(&self, meta: &LogMeta) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "config_hash = {}", meta.config_hash);
        let _ = writeln!(s, "seed = {}", meta.seed);
        let _ = writeln!(s, "variant = {}", meta.variant);
        for name in METRIC_NAMES {
            let _ = writeln!(s, "{name} = {}", self.get(name).expect("known metric"));
        }
        if let Err(e) = &self.tracking_error {
            let _ = writeln!(s, "tracking_error_error = {e}");
        }
        if let Err(e) = &self.force_std {
            let _ = writeln!(s, "force_std_error = {e}");
        }
        if let Some(t) = self.bump_time {
            let _ = writeln!(s, "bump_time = {t}");
        }
        s
    }
}

/// Median of a non-empty slice.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Population standard deviation.
pub fn std_dev(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// Median `‖ee − x_d‖` over clutched samples.
pub fn metric_tracking_error(log: &ExperimentLog) -> Result<f64, MetricError> {
    let ee = log.vectors("ee")?;
    let xd = log.vectors("x_d")?;
    let clutch = log.column("clutch")?;
    let errs: Vec<f64> = ee
        .iter()
        .zip(xd.iter())
        .zip(clutch.iter())
        .filter(|(_, c)| **c != 0.0)
        .map(|((e, d), _)| (e - d).norm())
        .collect();
    if errs.is_empty() {
        return Err(MetricError::NoClutchedSamples);
    }
    Ok(median(&errs))
}

/// Time of the first sample whose felt force exceeds `threshold`.
pub fn bump_time(log: &ExperimentLog, threshold: f64) -> Option<f64> {
    let t = log.column("t").ok()?;
    let f = log.column("f_hf").ok()?;
    t.iter().zip(f.iter()).find(|(_, f)| **f > threshold).map(|(t, _)| *t)
}

fn stability_window(log: &ExperimentLog, config: &MetricsConfig) -> Result<Vec<f64>, MetricError> {
    let t0 = bump_time(log, config.bump_threshold).ok_or(MetricError::NoContact)? + config.settle;
    let t1 = t0 + config.window;
    let t = log.column("t")?;
    let f = log.column("f_hf")?;
    Ok(t.iter()
        .zip(f.iter())
        .filter(|(t, _)| **t >= t0 && **t <= t1)
        .map(|(_, f)| *f)
        .collect())
}

/// Std-dev of the felt force over `[t_bump + settle, t_bump + settle + window]`.
pub fn metric_force_stability(log: &ExperimentLog, config: &MetricsConfig) -> Result<f64, MetricError> {
    Ok(std_dev(&stability_window(log, config)?))
}

/// Sustained oscillation in the stability window: enough crossings of a
/// hysteresis band around the window mean, with the force still spread out in
/// the second half of the window.
pub fn instability_flag(log: &ExperimentLog, config: &MetricsConfig) -> bool {
    let Ok(w) = stability_window(log, config) else {
        return false;
    };
    if w.len() < 4 {
        return false;
    }
    let osc = &config.oscillation;
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    let band = osc.band.max(osc.relative_band * mean.abs());
    let mut side = 0i8;
    let mut crossings = 0usize;
    for f in &w {
        let s = if *f > mean + band {
            1
        } else if *f < mean - band {
            -1
        } else {
            0
        };
        if s != 0 {
            if side != 0 && s != side {
                crossings += 1;
            }
            side = s;
        }
    }
    crossings >= osc.min_crossings && std_dev(&w[w.len() / 2..]) >= osc.min_std
}

/// Largest penetration of the end effector inside the hard radius.
pub fn metric_constraint(log: &ExperimentLog, obstacle: &Obstacle) -> f64 {
    log.vectors("ee")
        .map(|ee| {
            ee.iter()
                .map(|p| (obstacle.radius - (p - &obstacle.center).norm()).max(0.0))
                .fold(0.0, f64::max)
        })
        .unwrap_or(0.0)
}

/// How the simulation obtains solver results.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolverMode {
    /// Solve inline at the replan instant and release the result after the
    /// sampled delay (deterministic).
    #[default]
    Inline,
    /// Solve on a worker thread; results become available when they arrive.
    Threaded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum EventKind {
    Plant = 0,
    Tracker = 1,
    SolverComplete = 2,
    SolverStart = 3,
    Operator = 4,
    Logger = 5,
}

#[derive(Debug, Clone, Copy)]
struct Periodic {
    rate: f64,
    k: u64,
}

impl Periodic {
    fn time(&self) -> u64 {
        tick_ns(self.k, self.rate)
    }
}

/// `⌊k·10⁹/rate⌋` in nanoseconds.
pub fn tick_ns(k: u64, rate: f64) -> u64 {
    if rate.fract() == 0.0 {
        ((k as u128 * 1_000_000_000u128) / rate as u128) as u64
    } else {
        (k as f64 * 1e9 / rate).floor() as u64
    }
}

fn ns_to_s(ns: u64) -> f64 {
    ns as f64 * 1e-9
}

fn s_to_ns(s: f64) -> u64 {
    (s * 1e9).round().max(0.0) as u64
}

struct SolveJob {
    config: MpcConfig,
    x: PlantState,
    target: AugmentedTarget,
    now: f64,
    warm: Option<PolicySnapshot>,
    id: u64,
    seed: u64,
}

type SolveResult = (u64, f64, Result<PolicySnapshot, String>);

struct Worker {
    jobs: Option<Sender<SolveJob>>,
    results: Receiver<SolveResult>,
    handle: Option<JoinHandle<()>>,
}

impl Worker {
    fn spawn(template: OcpProblem) -> Self {
        let (job_tx, job_rx) = mpsc::channel::<SolveJob>();
        let (res_tx, res_rx) = mpsc::channel();
        let handle = std::thread::spawn(move || {
            while let Ok(job) = job_rx.recv() {
                let mut rng = ChaCha8Rng::seed_from_u64(job.seed);
                let request = MpcRequest {
                    x_measured: &job.x,
                    target: &job.target,
                    now: job.now,
                    warm: job.warm.as_ref(),
                    id: job.id,
                };
                let out = mpc_step(&job.config, &template, request, &mut rng).map_err(|e| e.to_string());
                if res_tx.send((job.id, job.now, out)).is_err() {
                    break;
                }
            }
        });
        Self {
            jobs: Some(job_tx),
            results: res_rx,
            handle: Some(handle),
        }
    }
}

impl Drop for Worker {
    fn drop(&mut self) {
        self.jobs.take();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

/// Observable state for telemetry.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub t: f64,
    pub ee: DVector<f64>,
    pub target: AugmentedTarget,
    pub plant: PlantState,
    /// Joint positions of the arm, base first, end effector last.
    pub joints: Vec<DVector<f64>>,
    pub contact_force: DVector<f64>,
    pub f_hf: DVector<f64>,
    pub policy_age: Option<f64>,
    pub snapshot_id: Option<u64>,
    pub variant: ControllerVariant,
    pub clutched: bool,
    pub device_position: DVector<f64>,
    pub device_velocity: DVector<f64>,
}

/// Steppable simulation of one controller variant.
pub struct Simulation {
    config: ExperimentConfig,
    config_hash: String,
    variant: ControllerVariant,
    model: Arc<dyn DynamicsModel>,
    arm: Option<PlanarArm>,
    template: OcpProblem,
    mpc: MpcConfig,
    env: Environment,
    rng: ChaCha8Rng,
    solver_mode: SolverMode,
    worker: Option<Worker>,
    remote_operator: bool,

    x: PlantState,
    u_applied: PlantInput,
    ee: DVector<f64>,
    contact: DVector<f64>,
    f_hf: DVector<f64>,

    device: HapticDevice,
    coupling: Coupling,
    operator: Box<dyn OperatorModel>,
    operator_target: AugmentedTarget,
    robot_target: AugmentedTarget,
    transport: VecDeque<AugmentedTarget>,
    transport_ticks: usize,
    clutch_cursor: usize,

    slot: SnapshotSlot,
    last_solved: Option<PolicySnapshot>,
    in_flight: Option<(u64, u64)>,
    next_id: u64,
    stale_now: bool,

    plant: Periodic,
    tracker: Periodic,
    operator_tick: Periodic,
    logger: Periodic,
    replan: Periodic,
    now_ns: u64,
    end_ns: u64,

    channels: Vec<String>,
    rows: Vec<Vec<f64>>,
    solves: Vec<SolveRecord>,
    plant_steps: u64,
    logging: bool,
}

impl Simulation {
    pub fn new(config: &ExperimentConfig, variant: ControllerVariant) -> Result<Self, SimError> {
        Self::with_options(config, variant, SolverMode::Inline, false)
    }

    /// `remote_operator` disables the scripted operator; the device state is
    /// then set through [`Simulation::set_device_state`], which re-couples the
    /// target immediately when there is no transport delay.
    pub fn with_options(
        config: &ExperimentConfig,
        variant: ControllerVariant,
        solver_mode: SolverMode,
        remote_operator: bool,
    ) -> Result<Self, SimError> {
        config.validate()?;
        if let Ok(warnings) = config.mpc_config(variant).validate() {
            for w in warnings {
                log::warn!("{}: {w}", config.name);
            }
        }
        let model = config.plant();
        let arm = match &config.model {
            crate::config::ModelConfig::PlanarArm { link_lengths, .. } => {
                Some(PlanarArm::new(link_lengths.clone()).expect("validated"))
            }
            _ => None,
        };
        let x = config.initial_plant_state();
        let ee = model.end_effector(&x);
        let device = config.device();
        let mut coupling = config.coupling(&device);
        let target = coupling.couple(&device);
        let template = config.ocp_template();
        let d = ee.len();
        let n = x.len();
        let m = model.input_dim();
        let mut channels: Vec<String> = ["t", "clutch", "snapshot_id", "policy_age", "stale"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for (prefix, count) in [("x_d", d), ("v_d", d), ("ee", d), ("q", n), ("u", m), ("f", d)] {
            channels.extend((0..count).map(|i| format!("{prefix}_{i}")));
        }
        channels.push("f_hf".into());
        let worker = (solver_mode == SolverMode::Threaded).then(|| Worker::spawn(template.clone()));
        let rates = config.rates;
        Ok(Self {
            config_hash: config.hash(),
            variant,
            arm,
            mpc: config.mpc_config(variant),
            env: Environment::from_config(config),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            solver_mode,
            worker,
            remote_operator,
            u_applied: DVector::zeros(m),
            ee,
            contact: DVector::zeros(d),
            f_hf: DVector::zeros(d),
            operator: config.operator(),
            operator_target: target.clone(),
            robot_target: target,
            transport: VecDeque::new(),
            transport_ticks: (config.coupling.transport_delay * rates.operator_hz).round() as usize,
            clutch_cursor: 0,
            slot: SnapshotSlot::new(),
            last_solved: None,
            in_flight: None,
            next_id: 0,
            stale_now: false,
            plant: Periodic { rate: rates.plant_hz, k: 1 },
            tracker: Periodic { rate: rates.tracker_hz, k: 0 },
            operator_tick: Periodic { rate: rates.operator_hz, k: 0 },
            logger: Periodic { rate: rates.logger_hz, k: 0 },
            replan: Periodic { rate: rates.replan_hz, k: 0 },
            now_ns: 0,
            end_ns: s_to_ns(config.duration),
            channels,
            rows: Vec::new(),
            solves: Vec::new(),
            plant_steps: 0,
            logging: true,
            model,
            template,
            x,
            device,
            coupling: {
                coupling.clutched = config.coupling.clutched;
                coupling
            },
            config: config.clone(),
        })
    }

    pub fn now(&self) -> f64 {
        ns_to_s(self.now_ns)
    }

    pub fn end(&self) -> f64 {
        ns_to_s(self.end_ns)
    }

    pub fn variant(&self) -> ControllerVariant {
        self.variant
    }

    pub fn plant_steps(&self) -> u64 {
        self.plant_steps
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn environment(&self) -> &Environment {
        &self.env
    }

    pub fn arm(&self) -> Option<&PlanarArm> {
        self.arm.as_ref()
    }

    /// Switches the variant used by subsequent solves.
    pub fn set_variant(&mut self, variant: ControllerVariant) {
        self.variant = variant;
        self.mpc.variant = variant;
    }

    /// Disables row and solve recording (long-running sessions).
    pub fn set_logging(&mut self, on: bool) {
        self.logging = on;
    }

    pub fn set_delay_model(&mut self, delay: DelayModel) {
        self.mpc.delay = delay;
    }

    pub fn delay_model(&self) -> DelayModel {
        self.mpc.delay
    }

    /// Overrides the device pose (remote operator).
    pub fn set_device_state(&mut self, position: DVector<f64>, velocity: DVector<f64>) {
        let d = self.device.dim();
        if position.len() != d || velocity.len() != d {
            return;
        }
        for i in 0..d {
            self.device.position[i] = position[i].clamp(self.device.workspace_min[i], self.device.workspace_max[i]);
        }
        self.device.velocity = velocity;
        if self.remote_operator && self.transport_ticks == 0 {
            let mut target = self.coupling.couple(&self.device);
            if let Some(v) = self.config.tracking.max_target_speed {
                target = target.clamped(v);
            }
            self.operator_target = target.clone();
            self.robot_target = target;
        }
    }

    pub fn set_clutch(&mut self, engage: bool) {
        let current = self.operator_target.clone();
        self.coupling.clutch(&self.device, &current, engage);
        self.operator_target = self.coupling.couple(&self.device);
    }

    pub fn clutched(&self) -> bool {
        self.coupling.clutched
    }

    fn next_event(&self) -> Option<(u64, EventKind)> {
        let mut candidates = Vec::with_capacity(6);
        let p = self.plant.time();
        if p <= self.end_ns {
            candidates.push((p, EventKind::Plant));
        }
        for (periodic, kind) in [
            (&self.tracker, EventKind::Tracker),
            (&self.replan, EventKind::SolverStart),
            (&self.operator_tick, EventKind::Operator),
            (&self.logger, EventKind::Logger),
        ] {
            let t = periodic.time();
            if t < self.end_ns {
                candidates.push((t, kind));
            }
        }
        if let (SolverMode::Inline, Some((_, at))) = (self.solver_mode, self.in_flight) {
            if at < self.end_ns {
                candidates.push((at, EventKind::SolverComplete));
            }
        }
        candidates.into_iter().min()
    }

    pub fn finished(&self) -> bool {
        self.next_event().is_none()
    }

    /// Processes the next event. Returns `false` once the run is over.
    pub fn step_event(&mut self) -> Result<bool, SimError> {
        let Some((t, kind)) = self.next_event() else {
            return Ok(false);
        };
        self.now_ns = t;
        match kind {
            EventKind::Plant => {
                self.plant_event()?;
                self.plant.k += 1;
            }
            EventKind::Tracker => {
                self.tracker_event();
                self.tracker.k += 1;
            }
            EventKind::SolverComplete => self.solver_complete_event(),
            EventKind::SolverStart => {
                self.solver_start_event();
                self.replan.k += 1;
            }
            EventKind::Operator => {
                self.operator_event();
                self.operator_tick.k += 1;
            }
            EventKind::Logger => {
                self.logger_event();
                self.logger.k += 1;
            }
        }
        Ok(true)
    }

    /// Processes every event with timestamp ≤ `t` seconds.
    pub fn advance_to(&mut self, t: f64) -> Result<(), SimError> {
        let limit = s_to_ns(t);
        while let Some((at, _)) = self.next_event() {
            if at > limit {
                break;
            }
            self.step_event()?;
        }
        self.now_ns = self.now_ns.max(limit.min(self.end_ns));
        Ok(())
    }

    pub fn run_to_end(&mut self) -> Result<(), SimError> {
        while self.step_event()? {}
        Ok(())
    }

    fn plant_event(&mut self) -> Result<(), SimError> {
        let dt = 1.0 / self.plant.rate;
        let t0 = ns_to_s(tick_ns(self.plant.k - 1, self.plant.rate));
        let next = discrete_step(self.model.as_ref(), &self.x, &self.u_applied, t0, dt, 1);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(SimError::Diverged {
                t: self.now(),
                what: "plant state".into(),
            });
        }
        self.x = next;
        self.ee = self.model.end_effector(&self.x);
        let ee_vel = ee_jacobian(self.model.as_ref(), &self.x) * self.model.flow(&self.x, &self.u_applied, self.now());
        self.contact = contact_force(&self.env, &self.ee, &ee_vel);
        self.plant_steps += 1;
        Ok(())
    }

    fn poll_worker(&mut self) {
        let Some(worker) = &self.worker else { return };
        let mut arrived = Vec::new();
        while let Ok(r) = worker.results.try_recv() {
            arrived.push(r);
        }
        for (id, solved_at, out) in arrived {
            self.in_flight = None;
            match out {
                Ok(mut snap) => {
                    snap.available_at = self.now().max(solved_at + snap.delay);
                    self.finish_solve(snap);
                    self.publish_latest();
                }
                Err(message) => self.record_failure(id, solved_at, message),
            }
        }
    }

    fn publish_latest(&mut self) {
        if let Some(s) = &self.last_solved {
            self.slot.publish(s.clone());
        }
    }

    fn tracker_event(&mut self) {
        if self.solver_mode == SolverMode::Threaded {
            self.poll_worker();
        }
        let now = self.now();
        let command = match self.slot.current(now) {
            Some(snap) => evaluate_command(snap.variant, &snap, now, &self.robot_target, &self.x)
                .unwrap_or_else(|_| hold_command(self.model.as_ref(), &self.x)),
            None => hold_command(self.model.as_ref(), &self.x),
        };
        self.stale_now = command.stale;
        self.u_applied = tracking_loop_step(self.model.as_ref(), &self.x, &command, self.config.tracking.kp_joint);
    }

    fn solver_start_event(&mut self) {
        let now = self.now();
        let tick = self.replan.k;
        if self.in_flight.is_some() {
            self.record(SolveRecord {
                tick,
                t: now,
                id: None,
                variant: self.variant,
                status: SolveStatus::Skipped,
                available_at: None,
                iterations: 0,
                final_cost: f64::NAN,
                converged: false,
                wall_time: None,
            });
            return;
        }
        let id = self.next_id;
        self.next_id += 1;
        match self.solver_mode {
            SolverMode::Inline => {
                let request = MpcRequest {
                    x_measured: &self.x,
                    target: &self.robot_target,
                    now,
                    warm: self.last_solved.as_ref(),
                    id,
                };
                match mpc_step(&self.mpc, &self.template, request, &mut self.rng) {
                    Ok(snap) => {
                        let at = self.now_ns + s_to_ns(snap.delay);
                        self.in_flight = Some((id, at));
                        self.finish_solve(snap);
                    }
                    Err(e) => self.record_failure(id, now, e.to_string()),
                }
            }
            SolverMode::Threaded => {
                let job = SolveJob {
                    config: self.mpc.clone(),
                    x: self.x.clone(),
                    target: self.robot_target.clone(),
                    now,
                    warm: self.last_solved.clone(),
                    id,
                    seed: self.config.seed.wrapping_add(id),
                };
                let sent = self
                    .worker
                    .as_ref()
                    .and_then(|w| w.jobs.as_ref())
                    .map(|tx| tx.send(job).is_ok())
                    .unwrap_or(false);
                if sent {
                    self.in_flight = Some((id, u64::MAX));
                } else {
                    self.record_failure(id, now, "solver worker unavailable".into());
                }
            }
        }
    }

    fn record(&mut self, r: SolveRecord) {
        if self.logging {
            self.solves.push(r);
        }
    }

    fn finish_solve(&mut self, snap: PolicySnapshot) {
        let measured = matches!(self.mpc.delay, DelayModel::Measured { .. });
        self.record(SolveRecord {
            tick: self.replan.k,
            t: snap.solved_at,
            id: Some(snap.id),
            variant: snap.variant,
            status: SolveStatus::Ok,
            available_at: Some(snap.available_at),
            iterations: snap.report.iterations,
            final_cost: snap.report.final_cost,
            converged: snap.report.converged,
            wall_time: measured.then_some(snap.report.solve_time_s),
        });
        self.last_solved = Some(snap);
    }

    fn record_failure(&mut self, id: u64, t: f64, message: String) {
        log::warn!("solve {id} at t = {t:.4} s failed: {message}");
        self.record(SolveRecord {
            tick: self.replan.k,
            t,
            id: Some(id),
            variant: self.variant,
            status: SolveStatus::Failed(message),
            available_at: None,
            iterations: 0,
            final_cost: f64::NAN,
            converged: false,
            wall_time: None,
        });
    }

    fn solver_complete_event(&mut self) {
        self.in_flight = None;
        self.publish_latest();
    }

    fn operator_event(&mut self) {
        let now = self.now();
        let dt = 1.0 / self.operator_tick.rate;
        while let Some(ev) = self.config.clutch_events.get(self.clutch_cursor) {
            if ev.t > now {
                break;
            }
            let engage = ev.engage;
            self.clutch_cursor += 1;
            self.set_clutch(engage);
        }
        let sensed = -&self.contact;
        self.f_hf = force_feedback(&sensed, self.config.force_feedback.gain, self.config.force_feedback.cap);
        if !self.remote_operator {
            let f_hu = self.operator.hand_force(now, dt, &self.device, &self.f_hf);
            self.device = device_step(&self.device, &self.f_hf, &f_hu, dt);
        }
        let mut target = self.coupling.couple(&self.device);
        if let Some(v) = self.config.tracking.max_target_speed {
            target = target.clamped(v);
        }
        self.operator_target = target.clone();
        self.transport.push_back(target);
        while self.transport.len() > self.transport_ticks {
            self.robot_target = self.transport.pop_front().expect("non-empty");
        }
    }

    fn logger_event(&mut self) {
        if !self.logging {
            return;
        }
        let now = self.now();
        let active = self.slot.active();
        let mut row = Vec::with_capacity(self.channels.len());
        row.push(now);
        row.push(f64::from(u8::from(self.coupling.clutched)));
        row.push(active.map(|s| s.id as f64).unwrap_or(-1.0));
        row.push(active.map(|s| s.age(now)).unwrap_or(-1.0));
        row.push(f64::from(u8::from(self.stale_now)));
        row.extend(self.robot_target.position.iter());
        row.extend(self.robot_target.velocity.iter());
        row.extend(self.ee.iter());
        row.extend(self.x.iter());
        row.extend(self.u_applied.iter());
        row.extend(self.contact.iter());
        row.push(self.f_hf.norm());
        self.rows.push(row);
    }

    pub fn state(&self) -> SimState {
        let joints = match &self.arm {
            Some(arm) => arm
                .joint_positions(&self.x)
                .into_iter()
                .map(|p| DVector::from_column_slice(&p))
                .collect(),
            None => vec![self.ee.clone()],
        };
        let active = self.slot.active();
        SimState {
            t: self.now(),
            ee: self.ee.clone(),
            target: self.robot_target.clone(),
            plant: self.x.clone(),
            joints,
            contact_force: self.contact.clone(),
            f_hf: self.f_hf.clone(),
            policy_age: active.map(|s| s.age(self.now())),
            snapshot_id: active.map(|s| s.id),
            variant: self.variant,
            clutched: self.coupling.clutched,
            device_position: self.device.position.clone(),
            device_velocity: self.device.velocity.clone(),
        }
    }

    /// Log of everything recorded so far.
    pub fn log(&self) -> ExperimentLog {
        ExperimentLog {
            channels: self.channels.clone(),
            rows: self.rows.clone(),
            solves: self.solves.clone(),
            meta: LogMeta {
                log_version: LOG_VERSION,
                code_version: env!("CARGO_PKG_VERSION").to_string(),
                config_name: self.config.name.clone(),
                config_hash: self.config_hash.clone(),
                seed: self.config.seed,
                variant: self.variant,
                duration: self.config.duration,
                logger_hz: self.config.rates.logger_hz,
                ee_dim: self.ee.len(),
                obstacles: self
                    .env
                    .obstacles
                    .iter()
                    .map(|o| (o.center.iter().copied().collect(), o.radius, o.buffer))
                    .collect(),
                float_mode: "IEEE-754 binary64, round-to-nearest-even".into(),
            },
        }
    }
}

/// Runs one variant of `config` to completion.
pub fn run_experiment(config: &ExperimentConfig, variant: ControllerVariant) -> Result<(ExperimentLog, Metrics), SimError> {
    let mut sim = Simulation::new(config, variant)?;
    sim.run_to_end()?;
    let log = sim.log();
    let metrics = Metrics::from_log(&log, &config.metrics);
    Ok((log, metrics))
}

/// Writes log, solve records, metadata and `metrics.txt` into `dir`.
pub fn write_run(dir: &Path, log: &ExperimentLog, metrics: &Metrics) -> Result<(), SimError> {
    log.write(dir)?;
    write_file(&dir.join("metrics.txt"), &metrics.to_report(&log.meta))
}
