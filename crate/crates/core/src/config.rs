//! Experiment configuration: TOML schema, validation and hashing.

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{augment_model, DoubleIntegrator, DynamicsModel, PlanarArm};
use crate::mpc::{ControllerVariant, DelayModel, MpcConfig};
use crate::ocp::{
    obstacle_constraint, CostWeights, OcpProblem, ReferenceSource, RelaxedBarrier, SoftConstraint,
};
use crate::slq::SolverSettings;
use crate::teleop::{
    ContactPresser, Coupling, DevicePath, HapticDevice, Idle, OperatorModel, Reflex, StepReflex,
    WaypointFollower,
};

/// Keys that name features deliberately left out, with the reason given to
/// the user.
const OUT_OF_SCOPE: &[(&str, &str)] = &[
    ("orientation_weight", "end-effector orientation is fixed; only position is teleoperated"),
    ("orientation", "end-effector orientation is fixed; only position is teleoperated"),
    ("centroidal", "centroidal legged dynamics are not modelled; the plant is a fixed-base arm"),
    ("friction_cone", "contact forces and friction cones of legged locomotion are not modelled"),
    ("gait", "gait schedules belong to legged locomotion, which is not modelled"),
    ("whole_body_qp", "the hierarchical whole-body QP is replaced by a joint-space tracking law"),
    ("hierarchical_qp", "the hierarchical whole-body QP is replaced by a joint-space tracking law"),
    ("yaw_frame", "a single world frame is used; there is no yaw-following frame"),
    ("frequency_shaping", "frequency-shaped full-state feedback is not implemented"),
    ("state_estimator", "state estimation is not modelled; the plant state is measured exactly"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigIssue {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(String),
    #[error("{path}: unsupported key ({reason})")]
    OutOfScope { path: String, reason: String },
    #[error("{path}: {message}")]
    Schema { path: String, message: String },
    #[error("invalid configuration:\n{}", .0.iter().map(|i| format!("  {i}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<ConfigIssue>),
}

/// Diagonal weight given as one value per axis or a single scalar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Diagonal {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl Diagonal {
    pub fn to_matrix(&self, n: usize) -> Option<DMatrix<f64>> {
        match self {
            Diagonal::Scalar(s) => Some(DMatrix::identity(n, n) * *s),
            Diagonal::Vector(v) if v.len() == n => Some(DMatrix::from_diagonal(&DVector::from_column_slice(v))),
            Diagonal::Vector(_) => None,
        }
    }

    pub fn to_vector(&self, n: usize) -> Option<DVector<f64>> {
        self.to_matrix(n).map(|m| m.diagonal())
    }

    fn values(&self) -> Vec<f64> {
        match self {
            Diagonal::Scalar(s) => vec![*s],
            Diagonal::Vector(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    PlanarArm {
        link_lengths: Vec<f64>,
        initial_joints: Vec<f64>,
    },
    DoubleIntegrator {
        dim: usize,
        #[serde(default)]
        initial_position: Option<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsConfig {
    pub ee_position: Diagonal,
    pub input: Diagonal,
    pub terminal: Diagonal,
}

impl Default for WeightsConfig {
    fn default() -> Self {
        Self {
            ee_position: Diagonal::Scalar(100.0),
            input: Diagonal::Scalar(1.0),
            terminal: Diagonal::Scalar(100.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub horizon: f64,
    pub dt_knot: f64,
    pub max_iterations: usize,
    pub convergence_tol: f64,
    pub backtrack_factor: f64,
    pub min_step: f64,
    pub substeps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let s = SolverSettings::default();
        Self {
            horizon: 1.0,
            dt_knot: s.dt_knot,
            max_iterations: s.max_iterations,
            convergence_tol: s.convergence_tol,
            backtrack_factor: s.backtrack_factor,
            min_step: s.min_step,
            substeps: s.substeps,
        }
    }
}

impl SolverConfig {
    pub fn settings(&self) -> SolverSettings {
        SolverSettings {
            max_iterations: self.max_iterations,
            convergence_tol: self.convergence_tol,
            backtrack_factor: self.backtrack_factor,
            min_step: self.min_step,
            substeps: self.substeps,
            dt_knot: self.dt_knot,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RatesConfig {
    pub plant_hz: f64,
    pub tracker_hz: f64,
    pub operator_hz: f64,
    pub logger_hz: f64,
    pub replan_hz: f64,
}

impl Default for RatesConfig {
    fn default() -> Self {
        Self {
            plant_hz: 2500.0,
            tracker_hz: 400.0,
            operator_hz: 400.0,
            logger_hz: 400.0,
            replan_hz: 70.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackingConfig {
    /// Joint-space P gain of the tracking law (1/s).
    pub kp_joint: f64,
    /// Optional cap on the commanded target speed (m/s).
    pub max_target_speed: Option<f64>,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        Self {
            kp_joint: 5.0,
            max_target_speed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceConfig {
    pub mass: Diagonal,
    pub damping: Diagonal,
    pub workspace_min: Diagonal,
    pub workspace_max: Diagonal,
    pub initial_position: Option<Vec<f64>>,
}

impl Default for DeviceConfig {
    fn default() -> Self {
        Self {
            mass: Diagonal::Scalar(0.1),
            damping: Diagonal::Scalar(3.0),
            workspace_min: Diagonal::Scalar(-0.5),
            workspace_max: Diagonal::Scalar(0.5),
            initial_position: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CouplingConfig {
    pub scale: f64,
    /// Target anchor; defaults to the initial end-effector position.
    pub target_anchor: Option<Vec<f64>>,
    pub clutched: bool,
    /// Operator-to-robot transport delay (s), rounded to operator ticks.
    pub transport_delay: f64,
}

impl Default for CouplingConfig {
    fn default() -> Self {
        Self {
            scale: 1.0,
            target_anchor: None,
            clutched: true,
            transport_delay: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForceFeedbackConfig {
    pub gain: f64,
    pub cap: f64,
}

impl Default for ForceFeedbackConfig {
    fn default() -> Self {
        Self { gain: 0.5, cap: 20.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WallConfig {
    pub point: Vec<f64>,
    /// Outward normal (points away from the solid).
    pub normal: Vec<f64>,
    #[serde(default = "default_wall_stiffness")]
    pub stiffness: f64,
    #[serde(default = "default_wall_damping")]
    pub damping: f64,
}

fn default_wall_stiffness() -> f64 {
    2000.0
}

fn default_wall_damping() -> f64 {
    50.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleConfig {
    pub center: Vec<f64>,
    pub radius: f64,
    #[serde(default)]
    pub buffer: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BarrierConfig {
    pub mu: f64,
    pub delta: f64,
}

impl Default for BarrierConfig {
    fn default() -> Self {
        let b = RelaxedBarrier::default();
        Self { mu: b.mu, delta: b.delta }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvironmentConfig {
    pub wall: Option<WallConfig>,
    pub obstacles: Vec<ObstacleConfig>,
    pub barrier: BarrierConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OperatorConfig {
    Idle,
    Follower {
        path: DevicePath,
        #[serde(default = "default_hand_stiffness")]
        stiffness: f64,
        #[serde(default = "default_hand_damping")]
        damping: f64,
        #[serde(default = "default_max_hand_force")]
        max_force: f64,
    },
    ContactPress {
        direction: Vec<f64>,
        approach_speed: f64,
        target_force: f64,
        force_gain: f64,
        #[serde(default = "default_hand_stiffness")]
        stiffness: f64,
        #[serde(default = "default_hand_damping")]
        damping: f64,
        #[serde(default = "default_max_hand_force")]
        max_force: f64,
        #[serde(default)]
        reflex: Option<Reflex>,
    },
    StepReflex {
        axis: Vec<f64>,
        speed: f64,
        period: f64,
        #[serde(default = "default_hand_stiffness")]
        stiffness: f64,
        #[serde(default = "default_hand_damping")]
        damping: f64,
        #[serde(default = "default_max_hand_force")]
        max_force: f64,
    },
}

fn default_hand_stiffness() -> f64 {
    200.0
}

fn default_hand_damping() -> f64 {
    5.0
}

fn default_max_hand_force() -> f64 {
    40.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClutchEvent {
    pub t: f64,
    pub engage: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OscillationConfig {
    /// Absolute half-width of the hysteresis band around the window mean (N).
    pub band: f64,
    /// Band half-width relative to the window mean.
    pub relative_band: f64,
    /// Band crossings needed to call the oscillation sustained.
    pub min_crossings: usize,
    /// Minimum force std-dev (N) over the second half of the window.
    pub min_std: f64,
}

impl Default for OscillationConfig {
    fn default() -> Self {
        Self {
            band: 1.0,
            relative_band: 0.1,
            min_crossings: 6,
            min_std: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Felt force (N) that marks the first contact.
    pub bump_threshold: f64,
    /// Delay after the bump before the stability window opens (s).
    pub settle: f64,
    /// Stability window length (s).
    pub window: f64,
    pub oscillation: OscillationConfig,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            bump_threshold: 2.0,
            settle: 0.1,
            window: 1.5,
            oscillation: OscillationConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "<")]
    Less,
    #[serde(rename = "<=")]
    LessEqual,
    #[serde(rename = ">")]
    Greater,
    #[serde(rename = ">=")]
    GreaterEqual,
}

impl Relation {
    pub fn holds(self, a: f64, b: f64) -> bool {
        match self {
            Relation::Less => a < b,
            Relation::LessEqual => a <= b,
            Relation::Greater => a > b,
            Relation::GreaterEqual => a >= b,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Relation::Less => "<",
            Relation::LessEqual => "<=",
            Relation::Greater => ">",
            Relation::GreaterEqual => ">=",
        }
    }
}

/// `metric(lhs) relation factor·metric(rhs)`, checked by `compare`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrderingAssertion {
    pub metric: String,
    pub lhs: ControllerVariant,
    pub relation: Relation,
    pub rhs: ControllerVariant,
    #[serde(default = "one")]
    pub factor: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub duration: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "all_variants")]
    pub variants: Vec<ControllerVariant>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub model: ModelConfig,
    #[serde(default)]
    pub weights: WeightsConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub rates: RatesConfig,
    #[serde(default)]
    pub delay: DelayModel,
    #[serde(default)]
    pub tracking: TrackingConfig,
    #[serde(default)]
    pub device: DeviceConfig,
    #[serde(default)]
    pub coupling: CouplingConfig,
    #[serde(default)]
    pub force_feedback: ForceFeedbackConfig,
    #[serde(default)]
    pub environment: EnvironmentConfig,
    pub operator: OperatorConfig,
    #[serde(default)]
    pub clutch_events: Vec<ClutchEvent>,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub assertions: Vec<OrderingAssertion>,
}

fn default_seed() -> u64 {
    1
}

fn all_variants() -> Vec<ControllerVariant> {
    ControllerVariant::ALL.to_vec()
}

fn find_out_of_scope(value: &toml::Value, path: &str) -> Option<ConfigError> {
    match value {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let p = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                if let Some((_, reason)) = OUT_OF_SCOPE.iter().find(|(key, _)| key == k) {
                    return Some(ConfigError::OutOfScope {
                        path: p,
                        reason: (*reason).to_string(),
                    });
                }
                if let Some(e) = find_out_of_scope(v, &p) {
                    return Some(e);
                }
            }
            None
        }
        toml::Value::Array(a) => a
            .iter()
            .enumerate()
            .find_map(|(i, v)| find_out_of_scope(v, &format!("{path}[{i}]"))),
        _ => None,
    }
}

impl ExperimentConfig {
    /// Parses and validates TOML text.
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let raw: toml::Value = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        if let Some(e) = find_out_of_scope(&raw, "") {
            return Err(e);
        }
        let de = toml::Deserializer::parse(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let config: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            ConfigError::Schema {
                path: if path == "." { "<root>".into() } else { path },
                message: e.into_inner().message().trim().to_string(),
            }
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn plant(&self) -> Arc<dyn DynamicsModel> {
        match &self.model {
            ModelConfig::PlanarArm { link_lengths, .. } => {
                Arc::new(PlanarArm::new(link_lengths.clone()).expect("validated link lengths"))
            }
            ModelConfig::DoubleIntegrator { dim, .. } => {
                Arc::new(DoubleIntegrator::new(*dim).expect("validated dimension"))
            }
        }
    }

    pub fn initial_plant_state(&self) -> DVector<f64> {
        match &self.model {
            ModelConfig::PlanarArm { initial_joints, .. } => DVector::from_column_slice(initial_joints),
            ModelConfig::DoubleIntegrator { dim, initial_position } => {
                let mut x = DVector::zeros(2 * dim);
                if let Some(p) = initial_position {
                    x.rows_mut(0, *dim).copy_from_slice(p);
                }
                x
            }
        }
    }

    pub fn ee_dim(&self) -> usize {
        match &self.model {
            ModelConfig::PlanarArm { .. } => 2,
            ModelConfig::DoubleIntegrator { dim, .. } => *dim,
        }
    }

    fn input_dim(&self) -> usize {
        match &self.model {
            ModelConfig::PlanarArm { link_lengths, .. } => link_lengths.len(),
            ModelConfig::DoubleIntegrator { dim, .. } => *dim,
        }
    }

    pub fn weights(&self) -> CostWeights {
        let d = self.ee_dim();
        CostWeights::new(
            self.weights.ee_position.to_matrix(d).expect("validated"),
            self.weights.input.to_matrix(self.input_dim()).expect("validated"),
            self.weights.terminal.to_matrix(d).expect("validated"),
        )
        .expect("validated weights")
    }

    pub fn barrier(&self) -> RelaxedBarrier {
        RelaxedBarrier::new(self.environment.barrier.mu, self.environment.barrier.delta).expect("validated barrier")
    }

    /// OCP template with the obstacles as soft constraints; the reference is
    /// set per solve.
    pub fn ocp_template(&self) -> OcpProblem {
        let model = Arc::new(augment_model(self.plant()));
        let constraints = self
            .environment
            .obstacles
            .iter()
            .map(|o| {
                let c = obstacle_constraint(DVector::from_column_slice(&o.center), o.radius, o.buffer)
                    .expect("validated obstacle");
                SoftConstraint::new(Arc::new(c), self.barrier())
            })
            .collect();
        OcpProblem::new(
            model,
            self.weights(),
            constraints,
            self.solver.horizon,
            ReferenceSource::AugmentedTarget,
        )
        .expect("validated problem")
    }

    pub fn mpc_config(&self, variant: ControllerVariant) -> MpcConfig {
        MpcConfig {
            replan_period: 1.0 / self.rates.replan_hz,
            delay: self.delay,
            horizon: self.solver.horizon,
            variant,
            solver: self.solver.settings(),
        }
    }

    pub fn device(&self) -> HapticDevice {
        let d = self.ee_dim();
        let mut dev = HapticDevice::new(
            self.device.mass.to_vector(d).expect("validated"),
            self.device.damping.to_vector(d).expect("validated"),
            self.device.workspace_min.to_vector(d).expect("validated"),
            self.device.workspace_max.to_vector(d).expect("validated"),
        )
        .expect("validated device");
        if let Some(p) = &self.device.initial_position {
            dev.position = DVector::from_column_slice(p);
        }
        dev
    }

    pub fn coupling(&self, device: &HapticDevice) -> Coupling {
        let anchor = match &self.coupling.target_anchor {
            Some(a) => DVector::from_column_slice(a),
            None => self.plant().end_effector(&self.initial_plant_state()),
        };
        let mut c = Coupling::new(device.position.clone(), anchor, self.coupling.scale).expect("validated coupling");
        c.clutched = self.coupling.clutched;
        c
    }

    pub fn operator(&self) -> Box<dyn OperatorModel> {
        match &self.operator {
            OperatorConfig::Idle => Box::new(Idle),
            OperatorConfig::Follower {
                path,
                stiffness,
                damping,
                max_force,
            } => Box::new(WaypointFollower {
                path: path.clone(),
                stiffness: *stiffness,
                damping: *damping,
                max_force: *max_force,
            }),
            OperatorConfig::ContactPress {
                direction,
                approach_speed,
                target_force,
                force_gain,
                stiffness,
                damping,
                max_force,
                reflex,
            } => Box::new(
                ContactPresser::new(
                    DVector::from_column_slice(direction),
                    *approach_speed,
                    *target_force,
                    *force_gain,
                    *stiffness,
                    *damping,
                    *max_force,
                    *reflex,
                )
                .expect("validated presser"),
            ),
            OperatorConfig::StepReflex {
                axis,
                speed,
                period,
                stiffness,
                damping,
                max_force,
            } => Box::new(
                StepReflex::new(DVector::from_column_slice(axis), *speed, *period, *stiffness, *damping, *max_force)
                    .expect("validated step reflex"),
            ),
        }
    }

    /// SHA-256 of the canonical JSON form of the configuration.
    ///
    /// Seed, variant list and output directory are excluded: they are recorded
    /// per run, and runs of one scenario share a hash.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("configuration serializes");
        if let Some(map) = value.as_object_mut() {
            for key in ["seed", "variants", "output_dir"] {
                map.remove(key);
            }
        }
        let canonical = serde_json::to_vec(&value).expect("configuration serializes");
        hex::encode(Sha256::digest(&canonical))
    }

    /// Copy with command-line overrides applied and revalidated.
    pub fn with_overrides(
        &self,
        seed: Option<u64>,
        variant: Option<ControllerVariant>,
        duration: Option<f64>,
        output_dir: Option<PathBuf>,
    ) -> Result<Self, ConfigError> {
        let mut c = self.clone();
        if let Some(s) = seed {
            c.seed = s;
        }
        if let Some(v) = variant {
            c.variants = vec![v];
        }
        if let Some(d) = duration {
            c.duration = d;
        }
        if output_dir.is_some() {
            c.output_dir = output_dir;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut issues = Vec::new();
        let mut bad = |path: &str, message: String| {
            issues.push(ConfigIssue {
                path: path.to_string(),
                message,
            })
        };
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());

        if !(self.duration > 0.0 && self.duration.is_finite()) {
            bad("duration", format!("must be positive, got {}", self.duration));
        }
        if self.variants.is_empty() {
            bad("variants", "at least one variant is required".into());
        }
        match &self.model {
            ModelConfig::PlanarArm {
                link_lengths,
                initial_joints,
            } => {
                if link_lengths.is_empty() || link_lengths.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
                    bad("model.link_lengths", "must be a non-empty list of positive lengths".into());
                }
                if initial_joints.len() != link_lengths.len() || !finite(initial_joints) {
                    bad(
                        "model.initial_joints",
                        format!("needs {} finite joint angles", link_lengths.len()),
                    );
                }
            }
            ModelConfig::DoubleIntegrator { dim, initial_position } => {
                if *dim == 0 {
                    bad("model.dim", "must be at least 1".into());
                }
                if let Some(p) = initial_position {
                    if p.len() != *dim || !finite(p) {
                        bad("model.initial_position", format!("needs {dim} finite coordinates"));
                    }
                }
            }
        }
        let d = self.ee_dim();
        let nu = self.input_dim();
        let weight_checks = [
            ("weights.ee_position", &self.weights.ee_position, d, false),
            ("weights.input", &self.weights.input, nu, true),
            ("weights.terminal", &self.weights.terminal, d, false),
        ];
        for (path, w, n, strict) in weight_checks {
            match w.to_vector(n) {
                None => bad(path, format!("expected a scalar or {n} values")),
                Some(v) if v.iter().any(|x| !x.is_finite() || *x < 0.0 || (strict && *x <= 0.0)) => bad(
                    path,
                    if strict { "entries must be positive".into() } else { "entries must be non-negative".into() },
                ),
                _ => {}
            }
        }

        let s = &self.solver;
        if !(s.horizon > 0.0 && s.horizon.is_finite()) {
            bad("solver.horizon", "must be positive".into());
        }
        if !(s.dt_knot > 0.0 && s.dt_knot < s.horizon) {
            bad("solver.dt_knot", "must be positive and shorter than the horizon".into());
        }
        if let Err(e) = s.settings().validate() {
            bad("solver", e.to_string());
        }

        let r = &self.rates;
        for (path, v) in [
            ("rates.plant_hz", r.plant_hz),
            ("rates.tracker_hz", r.tracker_hz),
            ("rates.operator_hz", r.operator_hz),
            ("rates.logger_hz", r.logger_hz),
            ("rates.replan_hz", r.replan_hz),
        ] {
            if !(v > 0.0 && v.is_finite() && v <= 1e6) {
                bad(path, format!("must be a positive rate up to 1 MHz, got {v}"));
            }
        }
        if r.replan_hz > 0.0 && s.horizon <= 1.0 / r.replan_hz {
            bad("solver.horizon", "must exceed the replan period".into());
        }
        if let Err(m) = self.delay.validate() {
            bad("delay", m);
        }
        if !(self.tracking.kp_joint >= 0.0 && self.tracking.kp_joint.is_finite()) {
            bad("tracking.kp_joint", "must be non-negative".into());
        }
        if let Some(v) = self.tracking.max_target_speed {
            if !(v > 0.0) {
                bad("tracking.max_target_speed", "must be positive".into());
            }
        }

        let dev = &self.device;
        for (path, w, positive) in [
            ("device.mass", &dev.mass, true),
            ("device.damping", &dev.damping, false),
        ] {
            match w.to_vector(d) {
                None => bad(path, format!("expected a scalar or {d} values")),
                Some(v) if v.iter().any(|x| !x.is_finite() || *x < 0.0 || (positive && *x == 0.0)) => {
                    bad(path, if positive { "must be positive".into() } else { "must be non-negative".into() })
                }
                _ => {}
            }
        }
        match (dev.workspace_min.to_vector(d), dev.workspace_max.to_vector(d)) {
            (Some(lo), Some(hi)) => {
                if lo.iter().zip(hi.iter()).any(|(a, b)| !(a < b)) {
                    bad("device.workspace_max", "must exceed workspace_min on every axis".into());
                } else if let Some(p) = &dev.initial_position {
                    if p.len() != d || p.iter().enumerate().any(|(i, x)| !(*x >= lo[i] && *x <= hi[i])) {
                        bad("device.initial_position", format!("needs {d} coordinates inside the workspace"));
                    }
                }
            }
            _ => bad("device.workspace_min", format!("expected a scalar or {d} values")),
        }
        if dev.workspace_min.values().iter().chain(dev.workspace_max.values().iter()).any(|x| !x.is_finite()) {
            bad("device.workspace_min", "bounds must be finite".into());
        }

        let c = &self.coupling;
        if !(c.scale > 0.0 && c.scale.is_finite()) {
            bad("coupling.scale", "must be positive".into());
        }
        if let Some(a) = &c.target_anchor {
            if a.len() != d || !finite(a) {
                bad("coupling.target_anchor", format!("needs {d} finite coordinates"));
            }
        }
        if !(c.transport_delay >= 0.0 && c.transport_delay.is_finite()) {
            bad("coupling.transport_delay", "must be non-negative".into());
        }
        if !(self.force_feedback.gain > 0.0 && self.force_feedback.gain.is_finite()) {
            bad("force_feedback.gain", "must be positive".into());
        }
        if !(self.force_feedback.cap > 0.0) {
            bad("force_feedback.cap", "must be positive".into());
        }

        let env = &self.environment;
        if let Some(w) = &env.wall {
            if w.point.len() != d || !finite(&w.point) {
                bad("environment.wall.point", format!("needs {d} finite coordinates"));
            }
            let n: f64 = w.normal.iter().map(|x| x * x).sum::<f64>().sqrt();
            if w.normal.len() != d || !(n > 0.0 && n.is_finite()) {
                bad("environment.wall.normal", format!("needs {d} coordinates and non-zero length"));
            }
            if !(w.stiffness >= 0.0 && w.stiffness.is_finite()) {
                bad("environment.wall.stiffness", format!("must be non-negative, got {}", w.stiffness));
            }
            if !(w.damping >= 0.0 && w.damping.is_finite()) {
                bad("environment.wall.damping", format!("must be non-negative, got {}", w.damping));
            }
        }
        for (i, o) in env.obstacles.iter().enumerate() {
            if o.center.len() != d || !finite(&o.center) {
                bad(&format!("environment.obstacles[{i}].center"), format!("needs {d} finite coordinates"));
            }
            if !(o.radius > 0.0 && o.radius.is_finite()) {
                bad(&format!("environment.obstacles[{i}].radius"), "must be positive".into());
            }
            if !(o.buffer >= 0.0 && o.buffer.is_finite()) {
                bad(&format!("environment.obstacles[{i}].buffer"), "must be non-negative".into());
            }
        }
        if RelaxedBarrier::new(env.barrier.mu, env.barrier.delta).is_err() {
            bad("environment.barrier", "mu and delta must be positive".into());
        }

        match &self.operator {
            OperatorConfig::Idle => {}
            OperatorConfig::Follower {
                path,
                stiffness,
                damping,
                max_force,
            } => {
                if let Err(e) = path.validate(d) {
                    bad("operator.path", e.to_string());
                }
                if [stiffness, damping, max_force].iter().any(|v| !(**v >= 0.0 && v.is_finite())) {
                    bad("operator", "hand stiffness, damping and max_force must be non-negative".into());
                }
            }
            OperatorConfig::ContactPress {
                direction,
                approach_speed,
                target_force,
                force_gain,
                stiffness,
                damping,
                max_force,
                reflex,
            } => {
                if direction.len() != d {
                    bad("operator.direction", format!("needs {d} coordinates"));
                } else if ContactPresser::new(
                    DVector::from_column_slice(direction),
                    *approach_speed,
                    *target_force,
                    *force_gain,
                    *stiffness,
                    *damping,
                    *max_force,
                    *reflex,
                )
                .is_err()
                {
                    bad("operator", "press parameters must be non-negative with a non-zero direction".into());
                }
                if let Some(r) = reflex {
                    if !(r.threshold > 0.0 && r.speed >= 0.0 && r.duration > 0.0) {
                        bad("operator.reflex", "threshold and duration must be positive, speed non-negative".into());
                    }
                }
            }
            OperatorConfig::StepReflex { axis, period, .. } => {
                if axis.len() != d {
                    bad("operator.axis", format!("needs {d} coordinates"));
                }
                if !(*period > 0.0) {
                    bad("operator.period", "must be positive".into());
                }
            }
        }
        if self.clutch_events.windows(2).any(|w| w[1].t < w[0].t) {
            bad("clutch_events", "events must be sorted by time".into());
        }
        let m = &self.metrics;
        if !(m.bump_threshold > 0.0 && m.settle >= 0.0 && m.window > 0.0) {
            bad("metrics", "bump_threshold and window must be positive, settle non-negative".into());
        }
        for (i, a) in self.assertions.iter().enumerate() {
            if !crate::sim::METRIC_NAMES.contains(&a.metric.as_str()) {
                bad(
                    &format!("assertions[{i}].metric"),
                    format!("unknown metric '{}' (expected one of {:?})", a.metric, crate::sim::METRIC_NAMES),
                );
            }
        }

        if issues.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(issues))
        }
    }
}
