//! Operator side: haptic device, coupling with clutch, force feedback and
//! scripted operator models.

use std::f64::consts::TAU;
use std::fmt::Debug;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::AugmentedTarget;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TeleopError {
    #[error("invalid device parameter: {0}")]
    Device(String),
    #[error("invalid operator script: {0}")]
    Script(String),
}

/// Cartesian point-mass device `M·v̇ = f_hf + f_hu − B·v`.
#[derive(Debug, Clone, PartialEq)]
pub struct HapticDevice {
    /// Diagonal of the inertia matrix (kg).
    pub mass: DVector<f64>,
    /// Diagonal of the damping matrix (N·s/m).
    pub damping: DVector<f64>,
    pub position: DVector<f64>,
    pub velocity: DVector<f64>,
    pub workspace_min: DVector<f64>,
    pub workspace_max: DVector<f64>,
}

impl HapticDevice {
    pub fn new(
        mass: DVector<f64>,
        damping: DVector<f64>,
        workspace_min: DVector<f64>,
        workspace_max: DVector<f64>,
    ) -> Result<Self, TeleopError> {
        let d = mass.len();
        if d == 0 || damping.len() != d || workspace_min.len() != d || workspace_max.len() != d {
            return Err(TeleopError::Device("mass, damping and workspace must share one dimension".into()));
        }
        if mass.iter().any(|m| !(*m > 0.0 && m.is_finite())) {
            return Err(TeleopError::Device("mass must be positive".into()));
        }
        if damping.iter().any(|b| !(*b >= 0.0 && b.is_finite())) {
            return Err(TeleopError::Device("damping must be non-negative".into()));
        }
        if workspace_min.iter().zip(workspace_max.iter()).any(|(lo, hi)| !(lo < hi)) {
            return Err(TeleopError::Device("workspace box is empty".into()));
        }
        let mut position = DVector::zeros(d);
        for i in 0..d {
            position[i] = 0.0f64.clamp(workspace_min[i], workspace_max[i]);
        }
        Ok(Self {
            mass,
            damping,
            position,
            velocity: DVector::zeros(d),
            workspace_min,
            workspace_max,
        })
    }

    /// Bring-up defaults: 0.1 kg, 3 N·s/m, ±0.5 m box.
    pub fn with_defaults(dim: usize) -> Self {
        Self::new(
            DVector::from_element(dim, 0.1),
            DVector::from_element(dim, 3.0),
            DVector::from_element(dim, -0.5),
            DVector::from_element(dim, 0.5),
        )
        .expect("default device parameters are valid")
    }

    pub fn dim(&self) -> usize {
        self.mass.len()
    }

    pub fn kinetic_energy(&self) -> f64 {
        0.5 * self
            .velocity
            .iter()
            .zip(self.mass.iter())
            .map(|(v, m)| m * v * v)
            .sum::<f64>()
    }
}

/// One step of the device dynamics. Damping is taken implicitly, the position
/// is advanced with the new velocity, and the workspace walls stop motion
/// along the blocked axis.
pub fn device_step(dev: &HapticDevice, f_hf: &DVector<f64>, f_hu: &DVector<f64>, dt: f64) -> HapticDevice {
    let mut next = dev.clone();
    for i in 0..dev.dim() {
        let m = dev.mass[i];
        let v = (m * dev.velocity[i] + dt * (f_hf[i] + f_hu[i])) / (m + dt * dev.damping[i]);
        let mut p = dev.position[i] + dt * v;
        let mut v = v;
        if p < dev.workspace_min[i] {
            p = dev.workspace_min[i];
            v = v.max(0.0);
        } else if p > dev.workspace_max[i] {
            p = dev.workspace_max[i];
            v = v.min(0.0);
        }
        next.position[i] = p;
        next.velocity[i] = v;
    }
    next
}

/// Position-to-position coupling `x_d = x_d0 + s·(x_h − x_h0)`, `v_d = s·v_h`.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    pub device_anchor: DVector<f64>,
    pub target_anchor: DVector<f64>,
    pub clutched: bool,
    pub scale: f64,
    /// Last target produced while clutched.
    pub last: AugmentedTarget,
}

impl Coupling {
    pub fn new(device_anchor: DVector<f64>, target_anchor: DVector<f64>, scale: f64) -> Result<Self, TeleopError> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(TeleopError::Device(format!("coupling scale {scale} must be positive")));
        }
        if device_anchor.len() != target_anchor.len() {
            return Err(TeleopError::Device("anchor dimensions differ".into()));
        }
        Ok(Self {
            last: AugmentedTarget::stationary(target_anchor.clone()),
            device_anchor,
            target_anchor,
            clutched: true,
            scale,
        })
    }

    /// Target commanded by the device. While unclutched the last target is
    /// returned with zero velocity.
    pub fn couple(&mut self, dev: &HapticDevice) -> AugmentedTarget {
        if self.clutched {
            self.last = AugmentedTarget::new(
                &self.target_anchor + (&dev.position - &self.device_anchor) * self.scale,
                &dev.velocity * self.scale,
            );
            self.last.clone()
        } else {
            AugmentedTarget::stationary(self.last.position.clone())
        }
    }

    /// Engaging re-anchors at the current device position and target so the
    /// target does not jump.
    pub fn clutch(&mut self, dev: &HapticDevice, current_target: &AugmentedTarget, engage: bool) {
        if engage {
            if !self.clutched {
                self.device_anchor = dev.position.clone();
                self.target_anchor = current_target.position.clone();
                self.last = AugmentedTarget::stationary(current_target.position.clone());
            }
            self.clutched = true;
        } else {
            self.clutched = false;
        }
    }
}

/// Free-function form of [`Coupling::couple`].
pub fn couple(coupling: &mut Coupling, dev: &HapticDevice) -> AugmentedTarget {
    coupling.couple(dev)
}

/// Free-function form of [`Coupling::clutch`].
pub fn clutch(coupling: &mut Coupling, dev: &HapticDevice, current_target: &AugmentedTarget, engage: bool) {
    coupling.clutch(dev, current_target, engage)
}

/// `f_hf = −gain·f_sensed`, capped in norm at `cap`. `sensed` is the force the
/// robot exerts on its environment.
pub fn force_feedback(sensed: &DVector<f64>, gain: f64, cap: f64) -> DVector<f64> {
    cap_norm(-sensed * gain, cap)
}

fn cap_norm(f: DVector<f64>, cap: f64) -> DVector<f64> {
    let n = f.norm();
    if n > cap && n > 0.0 {
        f * (cap / n)
    } else {
        f
    }
}

/// Source of the hand force `f_hu` applied to the device.
pub trait OperatorModel: Debug + Send {
    /// Hand force at time `t` given the device state and the felt force.
    fn hand_force(&mut self, t: f64, dt: f64, device: &HapticDevice, f_hf: &DVector<f64>) -> DVector<f64>;
}

/// Scripted device-space path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DevicePath {
    /// Piecewise-linear through `(t, position)` points, held at the ends.
    Waypoints { points: Vec<(f64, Vec<f64>)> },
    /// `center + Σ a_i·sin(2π f_i t + φ_i)`.
    MultiSine { center: Vec<f64>, terms: Vec<SineTerm> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SineTerm {
    pub amplitude: Vec<f64>,
    pub frequency: f64,
    #[serde(default)]
    pub phase: f64,
}

impl DevicePath {
    pub fn validate(&self, dim: usize) -> Result<(), TeleopError> {
        match self {
            DevicePath::Waypoints { points } => {
                if points.is_empty() {
                    return Err(TeleopError::Script("waypoint list is empty".into()));
                }
                if points.iter().any(|(_, p)| p.len() != dim) {
                    return Err(TeleopError::Script(format!("waypoints must have {dim} coordinates")));
                }
                if points.windows(2).any(|w| !(w[1].0 > w[0].0)) {
                    return Err(TeleopError::Script("waypoint times must increase".into()));
                }
            }
            DevicePath::MultiSine { center, terms } => {
                if center.len() != dim || terms.iter().any(|s| s.amplitude.len() != dim) {
                    return Err(TeleopError::Script(format!("multi-sine vectors must have {dim} coordinates")));
                }
                if terms.iter().any(|s| !(s.frequency >= 0.0 && s.frequency.is_finite())) {
                    return Err(TeleopError::Script("sine frequencies must be non-negative".into()));
                }
            }
        }
        Ok(())
    }

    /// Position and velocity at time `t`.
    pub fn sample(&self, t: f64) -> (DVector<f64>, DVector<f64>) {
        match self {
            DevicePath::Waypoints { points } => {
                let d = points[0].1.len();
                let first = &points[0];
                let last = &points[points.len() - 1];
                if t <= first.0 {
                    return (DVector::from_column_slice(&first.1), DVector::zeros(d));
                }
                if t >= last.0 {
                    return (DVector::from_column_slice(&last.1), DVector::zeros(d));
                }
                let i = points.partition_point(|(ti, _)| *ti <= t) - 1;
                let (t0, p0) = (&points[i].0, DVector::from_column_slice(&points[i].1));
                let (t1, p1) = (&points[i + 1].0, DVector::from_column_slice(&points[i + 1].1));
                let vel = (&p1 - &p0) / (t1 - t0);
                (&p0 + &vel * (t - t0), vel)
            }
            DevicePath::MultiSine { center, terms } => {
                let mut p = DVector::from_column_slice(center);
                let mut v = DVector::zeros(center.len());
                for s in terms {
                    let w = TAU * s.frequency;
                    let a = DVector::from_column_slice(&s.amplitude);
                    p += &a * (w * t + s.phase).sin();
                    v += a * (w * (w * t + s.phase).cos());
                }
                (p, v)
            }
        }
    }
}

/// PD pull of the hand toward a scripted path.
#[derive(Debug, Clone, PartialEq)]
pub struct WaypointFollower {
    pub path: DevicePath,
    pub stiffness: f64,
    pub damping: f64,
    pub max_force: f64,
}

impl OperatorModel for WaypointFollower {
    fn hand_force(&mut self, t: f64, _dt: f64, device: &HapticDevice, _f_hf: &DVector<f64>) -> DVector<f64> {
        let (p, v) = self.path.sample(t);
        let f = (p - &device.position) * self.stiffness + (v - &device.velocity) * self.damping;
        cap_norm(f, self.max_force)
    }
}

/// Reflexive retreat after a force spike.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Reflex {
    /// Felt force (N) that triggers a retreat.
    pub threshold: f64,
    /// Retreat speed of the hand set-point (m/s).
    pub speed: f64,
    /// Retreat duration (s).
    pub duration: f64,
}

/// Hand that pushes the device along `direction` until the felt force
/// reaches `target_force`, optionally retreating on force spikes.
///
/// The hand is an impedance around a set-point that moves at up to
/// `approach_speed`; its speed is proportional to the force error.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactPresser {
    pub direction: DVector<f64>,
    pub approach_speed: f64,
    pub target_force: f64,
    /// Set-point speed per newton of force error (m/(s·N)).
    pub force_gain: f64,
    pub stiffness: f64,
    pub damping: f64,
    pub max_force: f64,
    pub reflex: Option<Reflex>,
    setpoint: Option<DVector<f64>>,
    retreat_until: f64,
    retreats: usize,
}

impl ContactPresser {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        direction: DVector<f64>,
        approach_speed: f64,
        target_force: f64,
        force_gain: f64,
        stiffness: f64,
        damping: f64,
        max_force: f64,
        reflex: Option<Reflex>,
    ) -> Result<Self, TeleopError> {
        let n = direction.norm();
        if !(n > 0.0 && n.is_finite()) {
            return Err(TeleopError::Script("press direction must be non-zero".into()));
        }
        if [approach_speed, target_force, force_gain, stiffness, damping, max_force]
            .iter()
            .any(|v| !(*v >= 0.0 && v.is_finite()))
        {
            return Err(TeleopError::Script("press parameters must be non-negative".into()));
        }
        Ok(Self {
            direction: direction / n,
            approach_speed,
            target_force,
            force_gain,
            stiffness,
            damping,
            max_force,
            reflex,
            setpoint: None,
            retreat_until: f64::NEG_INFINITY,
            retreats: 0,
        })
    }

    /// Number of reflexive retreats so far.
    pub fn retreats(&self) -> usize {
        self.retreats
    }
}

impl OperatorModel for ContactPresser {
    fn hand_force(&mut self, t: f64, dt: f64, device: &HapticDevice, f_hf: &DVector<f64>) -> DVector<f64> {
        let felt = (-f_hf.dot(&self.direction)).max(0.0);
        if let Some(r) = self.reflex {
            if t >= self.retreat_until && felt > r.threshold {
                self.retreat_until = t + r.duration;
                self.retreats += 1;
            }
        }
        let speed = match self.reflex {
            Some(r) if t < self.retreat_until => -r.speed,
            _ => (self.force_gain * (self.target_force - felt)).clamp(-self.approach_speed, self.approach_speed),
        };
        let sp = self.setpoint.get_or_insert_with(|| device.position.clone());
        *sp += &self.direction * (speed * dt);
        let f = (&*sp - &device.position) * self.stiffness - &device.velocity * self.damping;
        cap_norm(f, self.max_force)
    }
}

/// Hand set-point moving back and forth along `axis` at constant speed,
/// reversing direction abruptly every half `period`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReflex {
    pub axis: DVector<f64>,
    pub speed: f64,
    pub period: f64,
    pub stiffness: f64,
    pub damping: f64,
    pub max_force: f64,
    setpoint: Option<DVector<f64>>,
}

impl StepReflex {
    pub fn new(
        axis: DVector<f64>,
        speed: f64,
        period: f64,
        stiffness: f64,
        damping: f64,
        max_force: f64,
    ) -> Result<Self, TeleopError> {
        let n = axis.norm();
        if !(n > 0.0 && n.is_finite()) || !(period > 0.0) {
            return Err(TeleopError::Script("step reflex needs a non-zero axis and positive period".into()));
        }
        Ok(Self {
            axis: axis / n,
            speed,
            period,
            stiffness,
            damping,
            max_force,
            setpoint: None,
        })
    }

    /// Signed set-point speed at time `t`.
    pub fn setpoint_speed(&self, t: f64) -> f64 {
        if (t / (0.5 * self.period)).floor() as i64 % 2 == 0 {
            self.speed
        } else {
            -self.speed
        }
    }
}

impl OperatorModel for StepReflex {
    fn hand_force(&mut self, t: f64, dt: f64, device: &HapticDevice, _f_hf: &DVector<f64>) -> DVector<f64> {
        let speed = self.setpoint_speed(t);
        let sp = self.setpoint.get_or_insert_with(|| device.position.clone());
        *sp += &self.axis * (speed * dt);
        let f = (&*sp - &device.position) * self.stiffness - &device.velocity * self.damping;
        cap_norm(f, self.max_force)
    }
}

/// Hands off the device.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Idle;

impl OperatorModel for Idle {
    fn hand_force(&mut self, _t: f64, _dt: f64, device: &HapticDevice, _f_hf: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(device.dim())
    }
}
