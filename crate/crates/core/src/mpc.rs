//! Receding-horizon runner: controller variants, solver snapshots and the
//! tracking-rate command evaluation.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DVector;
use rand::{Rng, RngExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AugmentedTarget, DynamicsModel, PlantInput, PlantState};
use crate::ocp::{OcpError, OcpProblem, ReferenceSource, ReferenceTrajectory};
use crate::slq::{solve, AffinePolicy, SolveReport, SolverError, SolverSettings};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MpcError {
    #[error("invalid MPC configuration: {0}")]
    Config(String),
    #[error("target dimension {actual} does not match end-effector dimension {expected}")]
    TargetDimension { expected: usize, actual: usize },
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Ocp(#[from] OcpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerVariant {
    /// Tracks the target held constant over the horizon.
    Baseline,
    /// Tracks the target extrapolated with its velocity.
    FeedForward,
    /// Tracks the augmented target and applies target feedback at the tracking rate.
    Feedback,
}

impl ControllerVariant {
    pub const ALL: [ControllerVariant; 3] = [
        ControllerVariant::Baseline,
        ControllerVariant::FeedForward,
        ControllerVariant::Feedback,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ControllerVariant::Baseline => "baseline",
            ControllerVariant::FeedForward => "feedforward",
            ControllerVariant::Feedback => "feedback",
        }
    }
}

impl fmt::Display for ControllerVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ControllerVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "baseline" => Ok(Self::Baseline),
            "feedforward" | "feed-forward" | "ff" => Ok(Self::FeedForward),
            "feedback" => Ok(Self::Feedback),
            other => Err(format!(
                "unknown variant '{other}' (expected baseline, feedforward or feedback)"
            )),
        }
    }
}

/// Solver compute delay between triggering a solve and using its result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DelayModel {
    Fixed { delay: f64 },
    Uniform { min: f64, max: f64 },
    /// Actual solver wall time, never below `floor`.
    Measured { floor: f64 },
}

impl Default for DelayModel {
    fn default() -> Self {
        DelayModel::Uniform {
            min: 0.012,
            max: 0.015,
        }
    }
}

impl DelayModel {
    pub fn validate(&self) -> Result<(), String> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        match *self {
            DelayModel::Fixed { delay } if !ok(delay) => Err(format!("fixed delay {delay} must be ≥ 0")),
            DelayModel::Uniform { min, max } if !(ok(min) && ok(max) && min <= max) => {
                Err(format!("uniform delay range [{min}, {max}] is invalid"))
            }
            DelayModel::Measured { floor } if !ok(floor) => Err(format!("measured delay floor {floor} must be ≥ 0")),
            _ => Ok(()),
        }
    }

    /// Largest delay the model can produce, if bounded.
    pub fn upper_bound(&self) -> Option<f64> {
        match *self {
            DelayModel::Fixed { delay } => Some(delay),
            DelayModel::Uniform { max, .. } => Some(max),
            DelayModel::Measured { .. } => None,
        }
    }

    /// Draws a delay in seconds. `measured` is the solver wall time, used only
    /// by [`DelayModel::Measured`]. The uniform model always consumes exactly
    /// one random draw so that runs stay aligned across variants.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, measured: f64) -> f64 {
        match *self {
            DelayModel::Fixed { delay } => delay,
            DelayModel::Uniform { min, max } => {
                let r: f64 = rng.random();
                min + (max - min) * r
            }
            DelayModel::Measured { floor } => measured.max(floor),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcConfig {
    pub replan_period: f64,
    pub delay: DelayModel,
    pub horizon: f64,
    pub variant: ControllerVariant,
    pub solver: SolverSettings,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            replan_period: 1.0 / 70.0,
            delay: DelayModel::default(),
            horizon: 1.0,
            variant: ControllerVariant::Feedback,
            solver: SolverSettings::default(),
        }
    }
}

impl MpcConfig {
    /// Checks hard invariants and returns soft warnings.
    pub fn validate(&self) -> Result<Vec<String>, MpcError> {
        if !(self.replan_period > 0.0 && self.replan_period.is_finite()) {
            return Err(MpcError::Config("replan period must be positive".into()));
        }
        if !(self.horizon > self.replan_period) {
            return Err(MpcError::Config(format!(
                "horizon {} must exceed the replan period {}",
                self.horizon, self.replan_period
            )));
        }
        self.delay.validate().map_err(MpcError::Config)?;
        self.solver.validate()?;
        let mut warnings = Vec::new();
        if let Some(d) = self.delay.upper_bound() {
            if d > self.replan_period {
                warnings.push(format!(
                    "compute delay up to {d} s exceeds the replan period {} s; ticks will be skipped",
                    self.replan_period
                ));
            }
        }
        Ok(warnings)
    }
}

/// Immutable solver output handed to the tracking loop.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySnapshot {
    pub id: u64,
    pub variant: ControllerVariant,
    pub policy: Arc<AffinePolicy>,
    pub solved_at: f64,
    pub available_at: f64,
    /// Sampled compute delay, `available_at − solved_at` before rounding.
    pub delay: f64,
    pub target_at_solve: AugmentedTarget,
    pub report: SolveReport,
}

impl PolicySnapshot {
    pub fn age(&self, t: f64) -> f64 {
        t - self.solved_at
    }
}

/// What the OCP tracks for a given variant.
#[derive(Debug, Clone, PartialEq)]
pub enum ReferencePlan {
    Trajectory(ReferenceTrajectory),
    /// Track the target block of the augmented state.
    Augmented,
}

impl ReferencePlan {
    pub fn into_source(self) -> ReferenceSource {
        match self {
            ReferencePlan::Trajectory(r) => ReferenceSource::External(r),
            ReferencePlan::Augmented => ReferenceSource::AugmentedTarget,
        }
    }
}

/// Reference over `[0, horizon]` sampled at `knots + 1` points.
pub fn build_reference(
    variant: ControllerVariant,
    target: &AugmentedTarget,
    horizon: f64,
    knots: usize,
) -> Result<ReferencePlan, MpcError> {
    if !target.is_finite() {
        return Err(MpcError::Config("target is not finite".into()));
    }
    if knots == 0 || !(horizon > 0.0) {
        return Err(MpcError::Config("reference needs a positive horizon and knot count".into()));
    }
    let samples = |velocity_scale: f64| {
        (0..=knots)
            .map(|i| {
                let s = i as f64 / knots as f64;
                let p = &target.position + &target.velocity * (velocity_scale * s * horizon);
                (s * horizon, p)
            })
            .collect::<Vec<_>>()
    };
    let plan = match variant {
        ControllerVariant::Baseline => ReferencePlan::Trajectory(ReferenceTrajectory::new(samples(0.0))?),
        ControllerVariant::FeedForward => ReferencePlan::Trajectory(ReferenceTrajectory::new(samples(1.0))?),
        ControllerVariant::Feedback => ReferencePlan::Augmented,
    };
    Ok(plan)
}

/// Everything one replan needs besides the snapshot bookkeeping.
pub struct MpcRequest<'a> {
    pub x_measured: &'a PlantState,
    pub target: &'a AugmentedTarget,
    pub now: f64,
    pub warm: Option<&'a PolicySnapshot>,
    pub id: u64,
}

/// Solves the variant's OCP from the measured state and stamps the result.
/// `template` supplies model, weights, constraints and horizon; its reference
/// is replaced.
pub fn mpc_step<R: Rng + ?Sized>(
    config: &MpcConfig,
    template: &OcpProblem,
    request: MpcRequest<'_>,
    rng: &mut R,
) -> Result<PolicySnapshot, MpcError> {
    let model = template.model();
    if request.target.dim() != model.target_dim() {
        return Err(MpcError::TargetDimension {
            expected: model.target_dim(),
            actual: request.target.dim(),
        });
    }
    let knots = config.solver.intervals(template.horizon());
    let plan = build_reference(config.variant, request.target, template.horizon(), knots)?;
    let problem = template.with_reference(plan.into_source())?;
    let x0 = model.compose(request.x_measured, request.target);
    let warm = request.warm.map(|s| s.policy.as_ref());
    let result = solve(&problem, &x0, request.now, warm, &config.solver);
    // Draw the delay even on failure so later solves see the same random stream.
    let (policy, report) = match result {
        Ok(v) => v,
        Err(e) => {
            config.delay.sample(rng, 0.0);
            return Err(e.into());
        }
    };
    let delay = config.delay.sample(rng, report.solve_time_s);
    Ok(PolicySnapshot {
        id: request.id,
        variant: config.variant,
        policy: Arc::new(policy),
        solved_at: request.now,
        available_at: request.now + delay,
        delay,
        target_at_solve: request.target.clone(),
        report,
    })
}

/// Command produced at the tracking rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Command {
    pub input: PlantInput,
    /// Nominal plant state of the policy at the query time.
    pub nominal_state: PlantState,
    /// Query time lay past the end of the policy.
    pub stale: bool,
}

/// Evaluates the snapshot at time `t`.
///
/// Baseline and FeedForward return the interpolated nominal input. Feedback
/// adds `K_aug(t)·(x_aug − x̄_aug(t))` using the live target; the plant columns
/// of the gain are not applied.
pub fn evaluate_command(
    variant: ControllerVariant,
    snapshot: &PolicySnapshot,
    t: f64,
    live_target: &AugmentedTarget,
    x_measured: &PlantState,
) -> Result<Command, MpcError> {
    let policy = &snapshot.policy;
    let a = policy.aug_start();
    if x_measured.len() != a {
        return Err(MpcError::Config(format!(
            "measured state has {} entries, policy expects {a}",
            x_measured.len()
        )));
    }
    if 2 * live_target.dim() != policy.state_dim() - a {
        return Err(MpcError::TargetDimension {
            expected: (policy.state_dim() - a) / 2,
            actual: live_target.dim(),
        });
    }
    let sample = policy.interpolate(t);
    let mut input = sample.input;
    if variant == ControllerVariant::Feedback {
        let nominal_aug = sample.state.rows(a, policy.state_dim() - a);
        let err = live_target.to_vector() - nominal_aug;
        input += sample.gain.columns(a, policy.state_dim() - a) * err;
    }
    Ok(Command {
        input,
        nominal_state: sample.state.rows(0, a).into_owned(),
        stale: sample.stale,
    })
}

/// Joint-level tracking law: `u + Kp·(q_nom − q)` for velocity-controlled
/// plants, pass-through otherwise.
pub fn tracking_law(
    model: &dyn DynamicsModel,
    x_plant: &PlantState,
    command: &Command,
    kp_joint: f64,
) -> PlantInput {
    if model.velocity_controlled() && kp_joint != 0.0 {
        &command.input + (&command.nominal_state - x_plant) * kp_joint
    } else {
        command.input.clone()
    }
}

/// Snapshot slot as seen by the tracker: the newest snapshot whose
/// `available_at` has passed.
#[derive(Debug, Clone, Default)]
pub struct SnapshotSlot {
    active: Option<Arc<PolicySnapshot>>,
    pending: Vec<Arc<PolicySnapshot>>,
}

impl SnapshotSlot {
    pub fn new() -> Self {
        Self::default()
    }

    /// Queues a snapshot; it becomes active once `available_at` is reached.
    pub fn publish(&mut self, snapshot: PolicySnapshot) {
        self.pending.push(Arc::new(snapshot));
    }

    /// Promotes every pending snapshot available at `now` and returns the
    /// active one.
    pub fn current(&mut self, now: f64) -> Option<Arc<PolicySnapshot>> {
        let mut i = 0;
        while i < self.pending.len() {
            if self.pending[i].available_at <= now {
                let s = self.pending.remove(i);
                if self.active.as_ref().is_none_or(|a| a.id < s.id) {
                    self.active = Some(s);
                }
            } else {
                i += 1;
            }
        }
        self.active.clone()
    }

    pub fn active(&self) -> Option<&Arc<PolicySnapshot>> {
        self.active.as_ref()
    }

    pub fn clear(&mut self) {
        self.active = None;
        self.pending.clear();
    }
}

/// Zero command of the right size, used before the first snapshot arrives.
pub fn hold_command(model: &dyn DynamicsModel, x_plant: &PlantState) -> Command {
    Command {
        input: DVector::zeros(model.input_dim()),
        nominal_state: x_plant.clone(),
        stale: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{augment_model, DoubleIntegrator, PlanarArm};
    use crate::ocp::CostWeights;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn arm_template() -> OcpProblem {
        let model = Arc::new(augment_model(Arc::new(PlanarArm::new(vec![0.5, 0.5, 0.3]).unwrap())));
        OcpProblem::new(
            model,
            CostWeights::diagonal(2, 3, 100.0, 1.0, 100.0).unwrap(),
            vec![],
            1.0,
            ReferenceSource::AugmentedTarget,
        )
        .unwrap()
    }

    fn fixed(delay: f64, variant: ControllerVariant) -> MpcConfig {
        MpcConfig {
            delay: DelayModel::Fixed { delay },
            variant,
            ..MpcConfig::default()
        }
    }

    fn step(
        config: &MpcConfig,
        template: &OcpProblem,
        q: &PlantState,
        target: &AugmentedTarget,
        warm: Option<&PolicySnapshot>,
        now: f64,
    ) -> PolicySnapshot {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let request = MpcRequest {
            x_measured: q,
            target,
            now,
            warm,
            id: 0,
        };
        mpc_step(config, template, request, &mut rng).unwrap()
    }

    #[test]
    fn baseline_reference_is_constant() {
        let t = AugmentedTarget::new(v(&[1.0, 2.0, 3.0]), v(&[0.4, 0.0, -1.0]));
        let ReferencePlan::Trajectory(r) = build_reference(ControllerVariant::Baseline, &t, 1.0, 10).unwrap() else {
            panic!("expected trajectory");
        };
        assert_eq!(r.samples().len(), 11);
        assert!(r.samples().iter().all(|(_, p)| *p == v(&[1.0, 2.0, 3.0])));
    }

    #[test]
    fn feedforward_reference_extrapolates() {
        let t = AugmentedTarget::new(v(&[1.0, 0.0, 0.0]), v(&[0.5, 0.0, 0.0]));
        let ReferencePlan::Trajectory(r) = build_reference(ControllerVariant::FeedForward, &t, 1.0, 10).unwrap() else {
            panic!("expected trajectory");
        };
        assert!((&r.samples()[5].1 - v(&[1.25, 0.0, 0.0])).norm() < 1e-15);
        assert!((r.samples()[5].0 - 0.5).abs() < 1e-15);
    }

    #[test]
    fn feedforward_without_velocity_matches_baseline() {
        let t = AugmentedTarget::stationary(v(&[0.3, -0.1]));
        let a = build_reference(ControllerVariant::FeedForward, &t, 1.0, 50).unwrap();
        let b = build_reference(ControllerVariant::Baseline, &t, 1.0, 50).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            build_reference(ControllerVariant::Feedback, &t, 1.0, 50).unwrap(),
            ReferencePlan::Augmented
        );
    }

    #[test]
    fn variant_names_round_trip() {
        for v in ControllerVariant::ALL {
            assert_eq!(v.name().parse::<ControllerVariant>().unwrap(), v);
        }
        assert!("fast".parse::<ControllerVariant>().is_err());
    }

    #[test]
    fn config_validation() {
        // Default delay range tops out above the 70 Hz period.
        assert_eq!(MpcConfig::default().validate().unwrap().len(), 1);
        assert!(fixed(0.012, ControllerVariant::Feedback).validate().unwrap().is_empty());
        let slow = MpcConfig {
            delay: DelayModel::Fixed { delay: 0.05 },
            ..MpcConfig::default()
        };
        assert_eq!(slow.validate().unwrap().len(), 1);
        let short = MpcConfig {
            horizon: 0.01,
            ..MpcConfig::default()
        };
        assert!(short.validate().is_err());
        let bad = MpcConfig {
            delay: DelayModel::Uniform { min: 0.02, max: 0.01 },
            ..MpcConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn uniform_delay_stays_in_range_and_is_seeded() {
        let d = DelayModel::default();
        let mut a = ChaCha8Rng::seed_from_u64(7);
        let mut b = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let x = d.sample(&mut a, 0.0);
            assert!((0.012..=0.015).contains(&x));
            assert_eq!(x, d.sample(&mut b, 0.0));
        }
        assert_eq!(DelayModel::Measured { floor: 0.001 }.sample(&mut a, 0.0002), 0.001);
    }

    #[test]
    fn fixed_delay_is_exact() {
        let template = arm_template();
        let q = v(&[0.2, 0.5, 0.1]);
        let target = AugmentedTarget::stationary(v(&[0.6, 0.6]));
        let s = step(&fixed(0.014, ControllerVariant::Baseline), &template, &q, &target, None, 2.0);
        assert_eq!(s.delay, 0.014);
        assert!((s.available_at - s.solved_at - 0.014).abs() < 1e-15);
        assert_eq!(s.policy.start(), 2.0);
        let s = step(&fixed(0.014, ControllerVariant::Baseline), &template, &q, &target, None, 0.0);
        assert_eq!(s.available_at - s.solved_at, 0.014);
    }

    #[test]
    fn target_at_end_effector_needs_no_input() {
        let template = arm_template();
        let q = v(&[0.2, 0.5, 0.1]);
        let ee = template.model().plant().end_effector(&q);
        let target = AugmentedTarget::stationary(ee);
        let s = step(&fixed(0.0, ControllerVariant::Feedback), &template, &q, &target, None, 0.0);
        for u in s.policy.inputs() {
            assert!(u.norm() < 1e-6);
        }
    }

    #[test]
    fn warm_start_does_not_increase_cost() {
        let template = arm_template();
        let config = fixed(0.0, ControllerVariant::Feedback);
        let q = v(&[0.2, 0.5, 0.1]);
        let target = AugmentedTarget::new(v(&[0.6, 0.7]), v(&[0.1, 0.0]));
        let first = step(&config, &template, &q, &target, None, 0.0);
        let second = step(&config, &template, &q, &target, Some(&first), 0.0);
        assert!(second.report.final_cost <= first.report.final_cost * (1.0 + 1e-9));
    }

    #[test]
    fn feedback_with_predicted_target_returns_nominal_input() {
        let template = arm_template();
        let q = v(&[0.2, 0.5, 0.1]);
        let target = AugmentedTarget::new(v(&[0.6, 0.7]), v(&[0.2, -0.1]));
        let s = step(&fixed(0.0, ControllerVariant::Feedback), &template, &q, &target, None, 1.0);
        let t = 1.013;
        let nominal = s.policy.interpolate(t);
        let live = AugmentedTarget::from_vec(nominal.state.rows(3, 4).into_owned());
        let fb = evaluate_command(ControllerVariant::Feedback, &s, t, &live, &q).unwrap();
        assert!((&fb.input - &nominal.input).amax() < 1e-12);
        let base = evaluate_command(ControllerVariant::Baseline, &s, t, &live, &q).unwrap();
        assert_eq!(base.input, nominal.input);
    }

    #[test]
    fn feedback_with_zero_gain_matches_baseline() {
        let template = arm_template();
        let q = v(&[0.2, 0.5, 0.1]);
        let target = AugmentedTarget::new(v(&[0.6, 0.7]), v(&[0.2, -0.1]));
        let mut s = step(&fixed(0.0, ControllerVariant::Feedback), &template, &q, &target, None, 0.0);
        s.policy = Arc::new(s.policy.map_gains(|k| DMatrix::zeros(k.nrows(), k.ncols())));
        let live = AugmentedTarget::new(v(&[0.9, 0.1]), v(&[-0.3, 0.3]));
        let fb = evaluate_command(ControllerVariant::Feedback, &s, 0.3, &live, &q).unwrap();
        let base = evaluate_command(ControllerVariant::Baseline, &s, 0.3, &live, &q).unwrap();
        assert_eq!(fb.input, base.input);
    }

    #[test]
    fn baseline_ignores_live_target() {
        let template = arm_template();
        let q = v(&[0.2, 0.5, 0.1]);
        let target = AugmentedTarget::stationary(v(&[0.6, 0.7]));
        let s = step(&fixed(0.0, ControllerVariant::FeedForward), &template, &q, &target, None, 0.0);
        let a = evaluate_command(ControllerVariant::FeedForward, &s, 0.1, &target, &q).unwrap();
        let moved = AugmentedTarget::new(v(&[0.0, 0.0]), v(&[1.0, 1.0]));
        let b = evaluate_command(ControllerVariant::FeedForward, &s, 0.1, &moved, &q).unwrap();
        assert_eq!(a, b);
        let s = step(&fixed(0.0, ControllerVariant::Feedback), &template, &q, &target, None, 0.0);
        let fa = evaluate_command(ControllerVariant::Feedback, &s, 0.1, &target, &q).unwrap();
        let fb = evaluate_command(ControllerVariant::Feedback, &s, 0.1, &moved, &q).unwrap();
        assert_ne!(fa.input, fb.input);
    }

    #[test]
    fn stale_queries_are_flagged() {
        let template = arm_template();
        let q = v(&[0.2, 0.5, 0.1]);
        let target = AugmentedTarget::stationary(v(&[0.6, 0.7]));
        let s = step(&fixed(0.0, ControllerVariant::Baseline), &template, &q, &target, None, 0.0);
        assert!(!evaluate_command(ControllerVariant::Baseline, &s, 0.5, &target, &q).unwrap().stale);
        assert!(evaluate_command(ControllerVariant::Baseline, &s, 1.5, &target, &q).unwrap().stale);
    }

    #[test]
    fn target_dimension_is_checked() {
        let template = arm_template();
        let q = v(&[0.2, 0.5, 0.1]);
        let target = AugmentedTarget::stationary(v(&[0.6, 0.7, 0.0]));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let request = MpcRequest {
            x_measured: &q,
            target: &target,
            now: 0.0,
            warm: None,
            id: 0,
        };
        assert!(matches!(
            mpc_step(&MpcConfig::default(), &template, request, &mut rng),
            Err(MpcError::TargetDimension { .. })
        ));
    }

    #[test]
    fn slot_switches_only_when_available() {
        let template = arm_template();
        let q = v(&[0.2, 0.5, 0.1]);
        let target = AugmentedTarget::stationary(v(&[0.6, 0.7]));
        let mut a = step(&fixed(0.01, ControllerVariant::Baseline), &template, &q, &target, None, 0.0);
        a.id = 1;
        let mut b = a.clone();
        b.id = 2;
        b.solved_at = 0.02;
        b.available_at = 0.03;
        let mut slot = SnapshotSlot::new();
        slot.publish(a);
        slot.publish(b);
        assert!(slot.current(0.005).is_none());
        assert_eq!(slot.current(0.01).unwrap().id, 1);
        assert_eq!(slot.current(0.029).unwrap().id, 1);
        assert_eq!(slot.current(0.03).unwrap().id, 2);
    }

    #[test]
    fn tracking_law_applies_joint_correction() {
        let arm = PlanarArm::new(vec![0.5, 0.5, 0.3]).unwrap();
        let cmd = Command {
            input: v(&[0.1, 0.0, 0.0]),
            nominal_state: v(&[0.1, 0.0, 0.0]),
            stale: false,
        };
        let q = v(&[0.0, 0.0, 0.0]);
        assert!((tracking_law(&arm, &q, &cmd, 5.0) - v(&[0.6, 0.0, 0.0])).norm() < 1e-15);
        assert_eq!(tracking_law(&arm, &q, &cmd, 0.0), cmd.input);
        assert_eq!(tracking_law(&arm, &cmd.nominal_state, &cmd, 5.0), cmd.input);
        let di = DoubleIntegrator::new(1).unwrap();
        let cmd = Command {
            input: v(&[1.0]),
            nominal_state: v(&[1.0, 0.0]),
            stale: false,
        };
        assert_eq!(tracking_law(&di, &v(&[0.0, 0.0]), &cmd, 5.0), v(&[1.0]));
    }
}
