//! Optimal control problem: end-effector tracking cost, input regularization
//! and inequality constraints folded into the cost through relaxed
//! log-barriers.

use std::fmt::Debug;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::model::{ee_hessians, ee_jacobian, AugmentedModel, DynamicsModel, ModelError};

/// Floor applied to the smallest eigenvalue of input Hessians.
pub const INPUT_HESSIAN_FLOOR: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OcpError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid weight {name}: {reason}")]
    Weight { name: &'static str, reason: String },
    #[error("non-finite {0} in cost expansion")]
    NonFinite(&'static str),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn check_symmetric(name: &'static str, m: &DMatrix<f64>) -> Result<(), OcpError> {
    if !m.is_square() {
        return Err(OcpError::Weight {
            name,
            reason: format!("not square ({}x{})", m.nrows(), m.ncols()),
        });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(OcpError::Weight {
            name,
            reason: "non-finite entry".into(),
        });
    }
    let scale = m.amax().max(1.0);
    if (m - m.transpose()).amax() > 1e-12 * scale {
        return Err(OcpError::Weight {
            name,
            reason: "not symmetric".into(),
        });
    }
    Ok(())
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigenvalues().min()
}

/// Quadratic weights of the tracking objective.
#[derive(Debug, Clone, PartialEq)]
pub struct CostWeights {
    ee_position: DMatrix<f64>,
    input: DMatrix<f64>,
    terminal: DMatrix<f64>,
}

impl CostWeights {
    pub fn new(
        ee_position: DMatrix<f64>,
        input: DMatrix<f64>,
        terminal: DMatrix<f64>,
    ) -> Result<Self, OcpError> {
        check_symmetric("ee_position", &ee_position)?;
        check_symmetric("input", &input)?;
        check_symmetric("terminal", &terminal)?;
        for (name, m) in [("ee_position", &ee_position), ("terminal", &terminal)] {
            if min_eigenvalue(m) < -1e-12 {
                return Err(OcpError::Weight {
                    name,
                    reason: "not positive semi-definite".into(),
                });
            }
        }
        if min_eigenvalue(&input) <= 0.0 {
            return Err(OcpError::Weight {
                name: "input",
                reason: "not positive definite".into(),
            });
        }
        if ee_position.nrows() != terminal.nrows() {
            return Err(OcpError::Weight {
                name: "terminal",
                reason: "dimension differs from ee_position".into(),
            });
        }
        Ok(Self {
            ee_position,
            input,
            terminal,
        })
    }

    /// Diagonal weights `q·I`, `r·I`, `q_terminal·I`.
    pub fn diagonal(
        ee_dim: usize,
        input_dim: usize,
        q: f64,
        r: f64,
        q_terminal: f64,
    ) -> Result<Self, OcpError> {
        Self::new(
            DMatrix::identity(ee_dim, ee_dim) * q,
            DMatrix::identity(input_dim, input_dim) * r,
            DMatrix::identity(ee_dim, ee_dim) * q_terminal,
        )
    }

    pub fn ee_position(&self) -> &DMatrix<f64> {
        &self.ee_position
    }

    pub fn input(&self) -> &DMatrix<f64> {
        &self.input
    }

    pub fn terminal(&self) -> &DMatrix<f64> {
        &self.terminal
    }
}

/// Relaxed log-barrier parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelaxedBarrier {
    pub mu: f64,
    pub delta: f64,
}

impl Default for RelaxedBarrier {
    fn default() -> Self {
        Self {
            mu: 0.1,
            delta: 0.01,
        }
    }
}

impl RelaxedBarrier {
    pub fn new(mu: f64, delta: f64) -> Result<Self, OcpError> {
        if !(mu > 0.0 && mu.is_finite()) || !(delta > 0.0 && delta.is_finite()) {
            return Err(OcpError::Contract(format!(
                "barrier needs mu > 0 and delta > 0, got mu={mu}, delta={delta}"
            )));
        }
        Ok(Self { mu, delta })
    }

    /// `−μ ln g` above `δ`; below it the quadratic that matches value, slope
    /// and curvature at `δ`:
    /// `μ (½ (((g − 2δ)/δ)² − 1) − ln δ)`.
    pub fn value(&self, g: f64) -> f64 {
        let (mu, d) = (self.mu, self.delta);
        if g > d {
            -mu * g.ln()
        } else {
            let z = (g - 2.0 * d) / d;
            mu * (0.5 * (z * z - 1.0) - d.ln())
        }
    }

    pub fn derivative(&self, g: f64) -> f64 {
        let (mu, d) = (self.mu, self.delta);
        if g > d {
            -mu / g
        } else {
            mu * (g - 2.0 * d) / (d * d)
        }
    }

    pub fn second_derivative(&self, g: f64) -> f64 {
        let (mu, d) = (self.mu, self.delta);
        if g > d {
            mu / (g * g)
        } else {
            mu / (d * d)
        }
    }
}

/// Relaxed barrier penalty of a constraint value.
pub fn barrier(g_value: f64, params: &RelaxedBarrier) -> f64 {
    params.value(g_value)
}

/// Second-order expansion of a scalar constraint `g(x, u, t) ≥ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintExpansion {
    pub value: f64,
    pub grad_x: DVector<f64>,
    pub grad_u: DVector<f64>,
    pub hess_xx: DMatrix<f64>,
    pub hess_uu: DMatrix<f64>,
    pub hess_ux: DMatrix<f64>,
}

/// Scalar inequality constraint `g(x, u, t) ≥ 0`.
pub trait InequalityConstraint: Debug + Send + Sync {
    fn name(&self) -> String;

    fn value(&self, model: &dyn DynamicsModel, x: &DVector<f64>, u: &DVector<f64>, t: f64) -> f64;

    fn expansion(
        &self,
        model: &dyn DynamicsModel,
        x: &DVector<f64>,
        u: &DVector<f64>,
        t: f64,
    ) -> ConstraintExpansion;

    /// Constraints that only read the state are integrated with the state
    /// terms of the cost.
    fn depends_on_input(&self) -> bool {
        false
    }

    /// Distance above which the penalty is switched off. `None` keeps the
    /// raw barrier everywhere.
    fn activation(&self) -> Option<f64> {
        None
    }
}

/// Keep-out ball (circle in the plane) around `center`; with `axis` set it
/// becomes an infinite cylinder.
#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleConstraint {
    pub center: DVector<f64>,
    pub radius: f64,
    pub buffer: f64,
    pub axis: Option<DVector<f64>>,
}

/// `g(x) = ‖ee(x) − center‖ − radius`; the penalty is active only inside
/// `radius + buffer`.
pub fn obstacle_constraint(
    center: DVector<f64>,
    radius: f64,
    buffer: f64,
) -> Result<ObstacleConstraint, OcpError> {
    if !(radius > 0.0) || !(buffer >= 0.0) {
        return Err(OcpError::Contract(format!(
            "obstacle needs radius > 0 and buffer >= 0, got {radius}, {buffer}"
        )));
    }
    Ok(ObstacleConstraint {
        center,
        radius,
        buffer,
        axis: None,
    })
}

impl ObstacleConstraint {
    pub fn with_axis(mut self, axis: DVector<f64>) -> Self {
        let n = axis.norm();
        self.axis = Some(axis / n);
        self
    }

    fn projector(&self, dim: usize) -> DMatrix<f64> {
        let eye = DMatrix::identity(dim, dim);
        match &self.axis {
            Some(a) => eye - a * a.transpose(),
            None => eye,
        }
    }

    /// Signed clearance of a point from the obstacle surface.
    pub fn clearance(&self, p: &DVector<f64>) -> f64 {
        (self.projector(p.len()) * (p - &self.center)).norm() - self.radius
    }
}

impl InequalityConstraint for ObstacleConstraint {
    fn name(&self) -> String {
        "obstacle".into()
    }

    fn value(&self, model: &dyn DynamicsModel, x: &DVector<f64>, _u: &DVector<f64>, _t: f64) -> f64 {
        self.clearance(&model.end_effector(x))
    }

    fn expansion(
        &self,
        model: &dyn DynamicsModel,
        x: &DVector<f64>,
        u: &DVector<f64>,
        _t: f64,
    ) -> ConstraintExpansion {
        let nx = x.len();
        let nu = u.len();
        let ee = model.end_effector(x);
        let p = self.projector(ee.len());
        let r = &p * (&ee - &self.center);
        let dist = r.norm().max(1e-9);
        let n = &r / dist;
        let j = ee_jacobian(model, x);
        let grad_x = j.transpose() * &n;
        let curvature = (&p - &n * n.transpose()) / dist;
        let mut hess_xx = j.transpose() * curvature * &j;
        for (i, h) in ee_hessians(model, x).iter().enumerate() {
            hess_xx += h * n[i];
        }
        ConstraintExpansion {
            value: dist - self.radius,
            grad_x,
            grad_u: DVector::zeros(nu),
            hess_xx,
            hess_uu: DMatrix::zeros(nu, nu),
            hess_ux: DMatrix::zeros(nu, nx),
        }
    }

    fn activation(&self) -> Option<f64> {
        Some(self.buffer)
    }
}

/// One-sided joint limit: `q_i − lower ≥ 0` or `upper − q_i ≥ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointLimitConstraint {
    pub joint: usize,
    pub bound: f64,
    pub upper: bool,
    /// Penalty activation distance (rad).
    pub margin: f64,
}

impl InequalityConstraint for JointLimitConstraint {
    fn name(&self) -> String {
        format!(
            "joint{}_{}",
            self.joint,
            if self.upper { "upper" } else { "lower" }
        )
    }

    fn value(&self, _model: &dyn DynamicsModel, x: &DVector<f64>, _u: &DVector<f64>, _t: f64) -> f64 {
        if self.upper {
            self.bound - x[self.joint]
        } else {
            x[self.joint] - self.bound
        }
    }

    fn expansion(
        &self,
        model: &dyn DynamicsModel,
        x: &DVector<f64>,
        u: &DVector<f64>,
        t: f64,
    ) -> ConstraintExpansion {
        let (nx, nu) = (x.len(), u.len());
        let mut grad_x = DVector::zeros(nx);
        grad_x[self.joint] = if self.upper { -1.0 } else { 1.0 };
        ConstraintExpansion {
            value: self.value(model, x, u, t),
            grad_x,
            grad_u: DVector::zeros(nu),
            hess_xx: DMatrix::zeros(nx, nx),
            hess_uu: DMatrix::zeros(nu, nu),
            hess_ux: DMatrix::zeros(nu, nx),
        }
    }

    fn activation(&self) -> Option<f64> {
        Some(self.margin)
    }
}

/// A constraint together with the barrier that penalizes it.
///
/// When the constraint has an activation distance `a`, the penalty is the
/// barrier minus its tangent at `a`: zero (with zero slope) for `g ≥ a`,
/// non-negative and non-increasing below.
#[derive(Debug, Clone)]
pub struct SoftConstraint {
    pub constraint: Arc<dyn InequalityConstraint>,
    pub barrier: RelaxedBarrier,
}

impl SoftConstraint {
    pub fn new(constraint: Arc<dyn InequalityConstraint>, barrier: RelaxedBarrier) -> Self {
        Self {
            constraint,
            barrier,
        }
    }

    /// Returns `(penalty, d/dg, d²/dg²)`.
    pub fn penalty(&self, g: f64) -> (f64, f64, f64) {
        let b = &self.barrier;
        match self.constraint.activation() {
            Some(a) if g >= a => (0.0, 0.0, 0.0),
            Some(a) => (
                b.value(g) - b.value(a) - b.derivative(a) * (g - a),
                b.derivative(g) - b.derivative(a),
                b.second_derivative(g),
            ),
            None => (b.value(g), b.derivative(g), b.second_derivative(g)),
        }
    }
}

/// Desired end-effector positions sampled over the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTrajectory {
    samples: Vec<(f64, DVector<f64>)>,
}

impl ReferenceTrajectory {
    pub fn new(samples: Vec<(f64, DVector<f64>)>) -> Result<Self, OcpError> {
        if samples.len() < 2 {
            return Err(OcpError::Contract(
                "reference needs at least two samples".into(),
            ));
        }
        if samples.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(OcpError::Contract(
                "reference times must be strictly increasing".into(),
            ));
        }
        let d = samples[0].1.len();
        if samples.iter().any(|(_, p)| p.len() != d) {
            return Err(OcpError::Contract(
                "reference samples differ in dimension".into(),
            ));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[(f64, DVector<f64>)] {
        &self.samples
    }

    pub fn start(&self) -> f64 {
        self.samples[0].0
    }

    pub fn end(&self) -> f64 {
        self.samples[self.samples.len() - 1].0
    }

    pub fn dim(&self) -> usize {
        self.samples[0].1.len()
    }

    /// Piecewise-linear interpolation, clamped at the ends.
    pub fn at(&self, t: f64) -> DVector<f64> {
        let s = &self.samples;
        if t <= s[0].0 {
            return s[0].1.clone();
        }
        let last = s.len() - 1;
        if t >= s[last].0 {
            return s[last].1.clone();
        }
        let i = s.partition_point(|(ti, _)| *ti <= t) - 1;
        let (t0, p0) = &s[i];
        let (t1, p1) = &s[i + 1];
        let w = (t - t0) / (t1 - t0);
        p0 * (1.0 - w) + p1 * w
    }
}

/// Where the tracking cost takes its desired position from.
#[derive(Debug, Clone, PartialEq)]
pub enum ReferenceSource {
    External(ReferenceTrajectory),
    /// Track the `x_d` block of the augmented state itself.
    AugmentedTarget,
}

/// Second-order expansion `q0 + q_xᵀδx + q_uᵀδu + ½[δx;δu]ᵀH[δx;δu]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticExpansion {
    pub value: f64,
    pub q_x: DVector<f64>,
    pub q_u: DVector<f64>,
    pub q_xx: DMatrix<f64>,
    pub q_uu: DMatrix<f64>,
    pub q_ux: DMatrix<f64>,
}

impl QuadraticExpansion {
    pub fn zeros(nx: usize, nu: usize) -> Self {
        Self {
            value: 0.0,
            q_x: DVector::zeros(nx),
            q_u: DVector::zeros(nu),
            q_xx: DMatrix::zeros(nx, nx),
            q_uu: DMatrix::zeros(nu, nu),
            q_ux: DMatrix::zeros(nu, nx),
        }
    }

    pub fn add_scaled(&mut self, other: &Self, w: f64) {
        self.value += w * other.value;
        self.q_x += &other.q_x * w;
        self.q_u += &other.q_u * w;
        self.q_xx += &other.q_xx * w;
        self.q_uu += &other.q_uu * w;
        self.q_ux += &other.q_ux * w;
    }

    /// Evaluates the model at a perturbation `(dx, du)`.
    pub fn predict(&self, dx: &DVector<f64>, du: &DVector<f64>) -> f64 {
        self.value
            + self.q_x.dot(dx)
            + self.q_u.dot(du)
            + 0.5 * dx.dot(&(&self.q_xx * dx))
            + 0.5 * du.dot(&(&self.q_uu * du))
            + du.dot(&(&self.q_ux * dx))
    }

    fn check_finite(&self) -> Result<(), OcpError> {
        let ok = self.value.is_finite()
            && self.q_x.iter().all(|v| v.is_finite())
            && self.q_u.iter().all(|v| v.is_finite())
            && self.q_xx.iter().all(|v| v.is_finite())
            && self.q_uu.iter().all(|v| v.is_finite())
            && self.q_ux.iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(OcpError::NonFinite("derivative"))
        }
    }
}

/// Shifts a symmetric matrix so that its smallest eigenvalue is at least `floor`.
pub fn floor_eigenvalues(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let lo = min_eigenvalue(m);
    if lo >= floor {
        m.clone()
    } else {
        m + DMatrix::identity(m.nrows(), m.ncols()) * (floor - lo)
    }
}

/// Which second-order terms enter a cost expansion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Curvature {
    /// Full Hessian, including kinematic and constraint curvature.
    Exact,
    /// Drops terms weighted by residuals or penalty slopes; always convex.
    GaussNewton,
}

/// Stage cost split by how the transcription integrates it: state terms are
/// weighted trapezoidally over knots, input terms per interval.
#[derive(Debug, Clone, PartialEq)]
pub struct StageParts {
    pub state: QuadraticExpansion,
    pub input: QuadraticExpansion,
}

/// Tracking OCP over a horizon `[0, T]` on an augmented model.
#[derive(Debug, Clone)]
pub struct OcpProblem {
    model: Arc<AugmentedModel>,
    weights: CostWeights,
    constraints: Vec<SoftConstraint>,
    horizon: f64,
    reference: ReferenceSource,
}

const TIME_SLACK: f64 = 1e-9;

impl OcpProblem {
    pub fn new(
        model: Arc<AugmentedModel>,
        weights: CostWeights,
        constraints: Vec<SoftConstraint>,
        horizon: f64,
        reference: ReferenceSource,
    ) -> Result<Self, OcpError> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(OcpError::Contract(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        if weights.ee_position.nrows() != model.ee_dim() {
            return Err(OcpError::Weight {
                name: "ee_position",
                reason: format!(
                    "expected {}x{}, got {}x{}",
                    model.ee_dim(),
                    model.ee_dim(),
                    weights.ee_position.nrows(),
                    weights.ee_position.ncols()
                ),
            });
        }
        if weights.input.nrows() != model.input_dim() {
            return Err(OcpError::Weight {
                name: "input",
                reason: format!(
                    "expected {}x{}, got {}x{}",
                    model.input_dim(),
                    model.input_dim(),
                    weights.input.nrows(),
                    weights.input.ncols()
                ),
            });
        }
        if let ReferenceSource::External(r) = &reference {
            if r.dim() != model.ee_dim() {
                return Err(OcpError::Contract(format!(
                    "reference dimension {} does not match end-effector dimension {}",
                    r.dim(),
                    model.ee_dim()
                )));
            }
            if r.start() > TIME_SLACK || r.end() < horizon - TIME_SLACK {
                return Err(OcpError::Contract(format!(
                    "reference spans [{}, {}], horizon is [0, {horizon}]",
                    r.start(),
                    r.end()
                )));
            }
        }
        Ok(Self {
            model,
            weights,
            constraints,
            horizon,
            reference,
        })
    }

    pub fn model(&self) -> &Arc<AugmentedModel> {
        &self.model
    }

    pub fn weights(&self) -> &CostWeights {
        &self.weights
    }

    pub fn constraints(&self) -> &[SoftConstraint] {
        &self.constraints
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn reference(&self) -> &ReferenceSource {
        &self.reference
    }

    /// Same problem with a different reference source.
    pub fn with_reference(&self, reference: ReferenceSource) -> Result<Self, OcpError> {
        Self::new(
            self.model.clone(),
            self.weights.clone(),
            self.constraints.clone(),
            self.horizon,
            reference,
        )
    }

    fn check_time(&self, t: f64) -> Result<(), OcpError> {
        if t < -TIME_SLACK || t > self.horizon + TIME_SLACK || !t.is_finite() {
            Err(OcpError::Contract(format!(
                "time {t} outside horizon [0, {}]",
                self.horizon
            )))
        } else {
            Ok(())
        }
    }

    fn check_dims(&self, x: &DVector<f64>, u: Option<&DVector<f64>>) -> Result<(), OcpError> {
        if x.len() != self.model.state_dim() {
            return Err(ModelError::Dimension {
                what: "state",
                expected: self.model.state_dim(),
                actual: x.len(),
            }
            .into());
        }
        if let Some(u) = u {
            if u.len() != self.model.input_dim() {
                return Err(ModelError::Dimension {
                    what: "input",
                    expected: self.model.input_dim(),
                    actual: u.len(),
                }
                .into());
            }
        }
        Ok(())
    }

    /// Tracking error `ee(x) − x_ref(t)` and its state Jacobian.
    fn tracking_error(&self, x: &DVector<f64>, t: f64) -> (DVector<f64>, DMatrix<f64>) {
        let model = self.model.as_ref();
        let ee = model.end_effector(x);
        let mut jac = ee_jacobian(model, x);
        let desired = match &self.reference {
            ReferenceSource::External(r) => r.at(t),
            ReferenceSource::AugmentedTarget => {
                let n = model.aug_start();
                let d = model.target_dim();
                for i in 0..d {
                    jac[(i, n + i)] -= 1.0;
                }
                model.target_block(x).position
            }
        };
        (ee - desired, jac)
    }

    fn tracking_expansion(
        &self,
        x: &DVector<f64>,
        t: f64,
        weight: &DMatrix<f64>,
        curvature: Curvature,
    ) -> QuadraticExpansion {
        let nx = x.len();
        let nu = self.model.input_dim();
        let (e, jac) = self.tracking_error(x, t);
        let qe = weight * &e;
        let mut q_xx = jac.transpose() * weight * &jac * 2.0;
        if curvature == Curvature::Exact {
            for (i, h) in ee_hessians(self.model.as_ref(), x).iter().enumerate() {
                q_xx += h * (2.0 * qe[i]);
            }
        }
        QuadraticExpansion {
            value: e.dot(&qe),
            q_x: jac.transpose() * &qe * 2.0,
            q_u: DVector::zeros(nu),
            q_xx,
            q_uu: DMatrix::zeros(nu, nu),
            q_ux: DMatrix::zeros(nu, nx),
        }
    }

    fn constraint_expansion(
        &self,
        c: &SoftConstraint,
        x: &DVector<f64>,
        u: &DVector<f64>,
        t: f64,
        curvature: Curvature,
    ) -> QuadraticExpansion {
        let (nx, nu) = (x.len(), u.len());
        let g = c.constraint.value(self.model.as_ref(), x, u, t);
        let (p, dp, ddp) = c.penalty(g);
        if p == 0.0 && dp == 0.0 {
            return QuadraticExpansion::zeros(nx, nu);
        }
        let ex = c.constraint.expansion(self.model.as_ref(), x, u, t);
        let dp2 = match curvature {
            Curvature::Exact => dp,
            Curvature::GaussNewton => 0.0,
        };
        QuadraticExpansion {
            value: p,
            q_x: &ex.grad_x * dp,
            q_u: &ex.grad_u * dp,
            q_xx: &ex.grad_x * ex.grad_x.transpose() * ddp + &ex.hess_xx * dp2,
            q_uu: &ex.grad_u * ex.grad_u.transpose() * ddp + &ex.hess_uu * dp2,
            q_ux: &ex.grad_u * ex.grad_x.transpose() * ddp + &ex.hess_ux * dp2,
        }
    }

    /// Stage cost expansion split into state and input parts (no regularization).
    pub fn stage_parts(&self, x: &DVector<f64>, u: &DVector<f64>, t: f64) -> Result<StageParts, OcpError> {
        self.stage_parts_with(x, u, t, Curvature::Exact)
    }

    pub fn stage_parts_with(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        t: f64,
        curvature: Curvature,
    ) -> Result<StageParts, OcpError> {
        self.check_time(t)?;
        self.check_dims(x, Some(u))?;
        let (nx, nu) = (x.len(), u.len());
        let mut state = self.tracking_expansion(x, t, &self.weights.ee_position, curvature);
        let r = &self.weights.input;
        let ru = r * u;
        let mut input = QuadraticExpansion {
            value: u.dot(&ru),
            q_x: DVector::zeros(nx),
            q_u: &ru * 2.0,
            q_xx: DMatrix::zeros(nx, nx),
            q_uu: r * 2.0,
            q_ux: DMatrix::zeros(nu, nx),
        };
        for c in &self.constraints {
            let ex = self.constraint_expansion(c, x, u, t, curvature);
            if c.constraint.depends_on_input() {
                input.add_scaled(&ex, 1.0);
            } else {
                state.add_scaled(&ex, 1.0);
            }
        }
        state.check_finite()?;
        input.check_finite()?;
        Ok(StageParts { state, input })
    }

    /// Terminal cost expansion (state only).
    pub fn terminal_expansion(&self, x: &DVector<f64>) -> Result<QuadraticExpansion, OcpError> {
        self.terminal_expansion_with(x, Curvature::Exact)
    }

    pub fn terminal_expansion_with(&self, x: &DVector<f64>, curvature: Curvature) -> Result<QuadraticExpansion, OcpError> {
        self.check_dims(x, None)?;
        let ex = self.tracking_expansion(x, self.horizon, &self.weights.terminal, curvature);
        ex.check_finite()?;
        Ok(ex)
    }

    pub fn terminal_cost(&self, x: &DVector<f64>) -> Result<f64, OcpError> {
        self.check_dims(x, None)?;
        let (e, _) = self.tracking_error(x, self.horizon);
        Ok(e.dot(&(&self.weights.terminal * &e)))
    }

    /// Value of the state-only part of the stage cost.
    pub(crate) fn state_cost_value(&self, x: &DVector<f64>, u: &DVector<f64>, t: f64) -> f64 {
        let (e, _) = self.tracking_error(x, t);
        let mut v = e.dot(&(&self.weights.ee_position * &e));
        for c in self.constraints.iter().filter(|c| !c.constraint.depends_on_input()) {
            v += c.penalty(c.constraint.value(self.model.as_ref(), x, u, t)).0;
        }
        v
    }

    /// Value of the input part of the stage cost.
    pub(crate) fn input_cost_value(&self, x: &DVector<f64>, u: &DVector<f64>, t: f64) -> f64 {
        let mut v = u.dot(&(&self.weights.input * u));
        for c in self.constraints.iter().filter(|c| c.constraint.depends_on_input()) {
            v += c.penalty(c.constraint.value(self.model.as_ref(), x, u, t)).0;
        }
        v
    }
}

/// `‖ee(x) − x_ref(t)‖²_Q + ‖u‖²_R + Σ penalties`.
pub fn stage_cost(problem: &OcpProblem, x: &DVector<f64>, u: &DVector<f64>, t: f64) -> Result<f64, OcpError> {
    problem.check_time(t)?;
    problem.check_dims(x, Some(u))?;
    Ok(problem.state_cost_value(x, u, t) + problem.input_cost_value(x, u, t))
}

/// Second-order expansion of the stage cost with the input Hessian floored at
/// [`INPUT_HESSIAN_FLOOR`].
pub fn quadratize(
    problem: &OcpProblem,
    x: &DVector<f64>,
    u: &DVector<f64>,
    t: f64,
) -> Result<QuadraticExpansion, OcpError> {
    let parts = problem.stage_parts(x, u, t)?;
    let mut q = parts.state;
    q.add_scaled(&parts.input, 1.0);
    q.q_uu = floor_eigenvalues(&q.q_uu, INPUT_HESSIAN_FLOOR);
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{augment_model, AugmentedTarget, DoubleIntegrator, PlanarArm};

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn di_problem(q: f64, r: f64, constraints: Vec<SoftConstraint>) -> OcpProblem {
        let model = Arc::new(augment_model(Arc::new(DoubleIntegrator::default())));
        OcpProblem::new(
            model,
            CostWeights::diagonal(3, 3, q, r, q).unwrap(),
            constraints,
            1.0,
            ReferenceSource::AugmentedTarget,
        )
        .unwrap()
    }

    fn di_state(p: &[f64], xd: &[f64]) -> DVector<f64> {
        let mut x = DVector::zeros(12);
        x.rows_mut(0, 3).copy_from_slice(p);
        x.rows_mut(6, 3).copy_from_slice(xd);
        x
    }

    #[test]
    fn stage_cost_examples() {
        let p = di_problem(1.0, 1.0, vec![]);
        let u0 = v(&[0.0, 0.0, 0.0]);
        let x = di_state(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]);
        assert_eq!(stage_cost(&p, &x, &u0, 0.5).unwrap(), 0.0);
        let x = di_state(&[1.1, 2.0, 3.0], &[1.0, 2.0, 3.0]);
        assert!((stage_cost(&p, &x, &u0, 0.5).unwrap() - 0.01).abs() < 1e-15);

        let p = di_problem(1.0, 2.0, vec![]);
        let x = di_state(&[0.0; 3], &[0.0; 3]);
        assert_eq!(stage_cost(&p, &x, &v(&[1.0, 1.0, 1.0]), 0.0).unwrap(), 6.0);
    }

    #[test]
    fn stage_cost_rejects_time_outside_horizon() {
        let p = di_problem(1.0, 1.0, vec![]);
        let x = di_state(&[0.0; 3], &[0.0; 3]);
        let err = stage_cost(&p, &x, &v(&[0.0; 3]), 1.5).unwrap_err();
        assert!(matches!(err, OcpError::Contract(_)));
    }

    #[test]
    fn weights_validation() {
        assert!(CostWeights::diagonal(2, 3, 1.0, 0.0, 1.0).is_err());
        assert!(CostWeights::diagonal(2, 3, -1.0, 1.0, 1.0).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(CostWeights::new(asym, DMatrix::identity(2, 2), DMatrix::identity(2, 2)).is_err());
    }

    #[test]
    fn quadratic_expansion_is_exact_for_quadratic_cost() {
        let p = di_problem(3.0, 0.5, vec![]);
        let x = di_state(&[0.2, -0.1, 0.4], &[1.0, 0.5, 0.0]);
        let u = v(&[0.3, -0.2, 0.1]);
        let q = quadratize(&p, &x, &u, 0.3).unwrap();
        let dx = DVector::from_fn(12, |i, _| 0.1 * ((i as f64) - 5.0).sin());
        let du = v(&[0.05, 0.2, -0.3]);
        let exact = stage_cost(&p, &(&x + &dx), &(&u + &du), 0.3).unwrap();
        assert!((q.predict(&dx, &du) - exact).abs() < 1e-12);
    }

    #[test]
    fn gradient_vanishes_at_quadratic_minimum() {
        let p = di_problem(3.0, 0.5, vec![]);
        let x = di_state(&[1.0, 0.5, 0.0], &[1.0, 0.5, 0.0]);
        let q = quadratize(&p, &x, &v(&[0.0; 3]), 0.3).unwrap();
        assert!(q.q_x.amax() < 1e-10);
        assert!(q.q_u.amax() < 1e-10);
    }

    #[test]
    fn barrier_examples() {
        let b = RelaxedBarrier::new(0.1, 0.01).unwrap();
        assert!((barrier(0.01, &b) - (-0.1 * 0.01f64.ln())).abs() < 1e-15);
        // Slopes from each side of the switch point.
        let h = 1e-9;
        let left = (b.value(0.01) - b.value(0.01 - h)) / h;
        let right = (b.value(0.01 + h) - b.value(0.01)) / h;
        assert!((left - right).abs() < 1e-4);
        assert!((b.derivative(0.01) - (-10.0)).abs() < 1e-12);
        assert!((barrier(10.0, &b) - (-0.230_258_509_299_404_6)).abs() < 1e-12);
        // Quadratic branch: 0.1 * (0.5 * (49 - 1) - ln 0.01) = 2.4 + 0.460517...
        let expected = 0.1 * (0.5 * (((-0.05 - 0.02) / 0.01f64).powi(2) - 1.0) - 0.01f64.ln());
        assert!((barrier(-0.05, &b) - expected).abs() < 1e-12);
        assert!((expected - 2.860_517_018_598_809).abs() < 1e-12);
    }

    #[test]
    fn barrier_is_monotone() {
        let b = RelaxedBarrier::default();
        let grid: Vec<f64> = (0..2000).map(|i| -0.5 + i as f64 * 0.001).collect();
        for w in grid.windows(2) {
            assert!(b.value(w[1]) <= b.value(w[0]));
            assert!(b.value(w[0]).is_finite());
        }
    }

    #[test]
    fn soft_penalty_is_zero_outside_activation_and_monotone() {
        let obstacle = obstacle_constraint(v(&[0.0, 0.0]), 0.1, 0.05).unwrap();
        let c = SoftConstraint::new(Arc::new(obstacle), RelaxedBarrier::default());
        assert_eq!(c.penalty(0.06), (0.0, 0.0, 0.0));
        let (p_at, dp_at, _) = c.penalty(0.05 - 1e-12);
        assert!(p_at.abs() < 1e-9 && dp_at.abs() < 1e-6);
        let mut prev = f64::INFINITY;
        for i in 0..200 {
            let g = -0.1 + i as f64 * 0.001;
            let (p, _, _) = c.penalty(g);
            assert!(p >= 0.0 && p <= prev);
            prev = p;
        }
    }

    #[test]
    fn obstacle_examples() {
        let o = obstacle_constraint(v(&[0.5, 0.5]), 0.2, 0.05).unwrap();
        assert!((o.clearance(&v(&[0.5, 1.7])) - 1.0).abs() < 1e-15);
        assert!((o.clearance(&v(&[0.5, 0.5])) + 0.2).abs() < 1e-15);
        assert!(obstacle_constraint(v(&[0.0, 0.0]), 0.0, 0.0).is_err());
        assert!(obstacle_constraint(v(&[0.0, 0.0]), 0.1, -0.1).is_err());
    }

    #[test]
    fn obstacle_gradient_matches_differences() {
        let arm = PlanarArm::new(vec![0.5, 0.5, 0.3]).unwrap();
        let o = obstacle_constraint(v(&[0.6, 0.5]), 0.1, 0.05).unwrap();
        let x = v(&[0.4, 0.7, -0.3]);
        let u = v(&[0.0; 3]);
        let ex = o.expansion(&arm, &x, &u, 0.0);
        for i in 0..3 {
            let h = 1e-6;
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (o.value(&arm, &xp, &u, 0.0) - o.value(&arm, &xm, &u, 0.0)) / (2.0 * h);
            assert!((fd - ex.grad_x[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn inactive_barrier_contributes_nothing() {
        let model = Arc::new(augment_model(Arc::new(PlanarArm::new(vec![0.5, 0.5, 0.3]).unwrap())));
        let obstacle = obstacle_constraint(v(&[-1.0, -1.0]), 0.1, 0.05).unwrap();
        let soft = SoftConstraint::new(Arc::new(obstacle), RelaxedBarrier::default());
        let with = OcpProblem::new(
            model.clone(),
            CostWeights::diagonal(2, 3, 10.0, 1.0, 10.0).unwrap(),
            vec![soft],
            1.0,
            ReferenceSource::AugmentedTarget,
        )
        .unwrap();
        let without = OcpProblem::new(
            model.clone(),
            with.weights().clone(),
            vec![],
            1.0,
            ReferenceSource::AugmentedTarget,
        )
        .unwrap();
        let x = model.compose(
            &v(&[0.3, 0.5, 0.2]),
            &AugmentedTarget::stationary(v(&[0.8, 0.6])),
        );
        let u = v(&[0.1, 0.0, -0.1]);
        let a = quadratize(&with, &x, &u, 0.2).unwrap();
        let b = quadratize(&without, &x, &u, 0.2).unwrap();
        assert!((a.q_x - b.q_x).amax() < 1e-8);
    }

    #[test]
    fn reference_trajectory_validation_and_interpolation() {
        assert!(ReferenceTrajectory::new(vec![(0.0, v(&[0.0]))]).is_err());
        assert!(ReferenceTrajectory::new(vec![(0.0, v(&[0.0])), (0.0, v(&[1.0]))]).is_err());
        let r = ReferenceTrajectory::new(vec![(0.0, v(&[0.0])), (1.0, v(&[2.0]))]).unwrap();
        assert_eq!(r.at(0.25), v(&[0.5]));
        assert_eq!(r.at(3.0), v(&[2.0]));
    }

    #[test]
    fn input_hessian_floor() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -2.0]);
        let f = floor_eigenvalues(&m, 1e-6);
        assert!((min_eigenvalue(&f) - 1e-6).abs() < 1e-12);
    }
}
