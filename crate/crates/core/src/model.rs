//! Plant and target dynamics.
//!
//! A [`DynamicsModel`] describes a continuous-time flow `ẋ = f(x, u, t)` and an
//! end-effector map. Two plants ship with the crate: a point-mass
//! [`DoubleIntegrator`] and a velocity-controlled [`PlanarArm`]. Either can be
//! wrapped by [`AugmentedModel`], which appends the operator target
//! `(x_d, v_d)` to the state with constant-velocity dynamics.
//!
//! State layout of an augmented model is always `[plant | x_d | v_d]`; the
//! feedback-gain partition relies on this order.

use std::fmt::Debug;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Joint positions (and velocities for second-order plants).
pub type PlantState = DVector<f64>;
/// Joint-velocity or acceleration commands, depending on the plant.
pub type PlantInput = DVector<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch for {what}: expected {expected}, got {actual}")]
    Dimension {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("non-finite entry in {what} at ({row}, {col})")]
    NonFinite {
        what: &'static str,
        row: usize,
        col: usize,
    },
    #[error("invalid model parameter: {0}")]
    Parameter(String),
}

/// Continuous-time plant description.
///
/// Implementors provide the raw flow and end-effector maps; the free functions
/// in this module ([`eval_flow`], [`forward_kinematics`], [`linearize`]) wrap
/// them with dimension checks.
pub trait DynamicsModel: Debug + Send + Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    /// Dimension of the end-effector position (2 for planar models).
    fn ee_dim(&self) -> usize;

    fn flow(&self, x: &DVector<f64>, u: &DVector<f64>, t: f64) -> DVector<f64>;

    fn end_effector(&self, x: &DVector<f64>) -> DVector<f64>;

    /// Analytic `(∂f/∂x, ∂f/∂u)`, if the model has them.
    fn flow_jacobians(
        &self,
        _x: &DVector<f64>,
        _u: &DVector<f64>,
        _t: f64,
    ) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        None
    }

    /// Analytic `∂ee/∂x` (`ee_dim × state_dim`).
    fn ee_jacobian(&self, _x: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }

    /// Analytic second derivatives of each end-effector coordinate with
    /// respect to the state, one `state_dim × state_dim` matrix per coordinate.
    fn ee_hessians(&self, _x: &DVector<f64>) -> Option<Vec<DMatrix<f64>>> {
        None
    }

    /// Whether the plant input is a velocity (first-order plant). Used by the
    /// joint-level tracking law.
    fn velocity_controlled(&self) -> bool;
}

/// Point mass in `dim` dimensions: state `(p, v)`, input acceleration.
#[derive(Debug, Clone, PartialEq)]
pub struct DoubleIntegrator {
    dim: usize,
}

impl DoubleIntegrator {
    pub fn new(dim: usize) -> Result<Self, ModelError> {
        if dim == 0 {
            return Err(ModelError::Parameter(
                "double integrator needs at least one axis".into(),
            ));
        }
        Ok(Self { dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

impl Default for DoubleIntegrator {
    fn default() -> Self {
        Self { dim: 3 }
    }
}

impl DynamicsModel for DoubleIntegrator {
    fn state_dim(&self) -> usize {
        2 * self.dim
    }

    fn input_dim(&self) -> usize {
        self.dim
    }

    fn ee_dim(&self) -> usize {
        self.dim
    }

    fn flow(&self, x: &DVector<f64>, u: &DVector<f64>, _t: f64) -> DVector<f64> {
        let n = self.dim;
        let mut dx = DVector::zeros(2 * n);
        dx.rows_mut(0, n).copy_from(&x.rows(n, n));
        dx.rows_mut(n, n).copy_from(u);
        dx
    }

    fn end_effector(&self, x: &DVector<f64>) -> DVector<f64> {
        x.rows(0, self.dim).into_owned()
    }

    fn flow_jacobians(
        &self,
        _x: &DVector<f64>,
        _u: &DVector<f64>,
        _t: f64,
    ) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        let n = self.dim;
        let mut a = DMatrix::zeros(2 * n, 2 * n);
        a.view_mut((0, n), (n, n)).fill_with_identity();
        let mut b = DMatrix::zeros(2 * n, n);
        b.view_mut((n, 0), (n, n)).fill_with_identity();
        Some((a, b))
    }

    fn ee_jacobian(&self, _x: &DVector<f64>) -> Option<DMatrix<f64>> {
        let n = self.dim;
        let mut j = DMatrix::zeros(n, 2 * n);
        j.view_mut((0, 0), (n, n)).fill_with_identity();
        Some(j)
    }

    fn ee_hessians(&self, _x: &DVector<f64>) -> Option<Vec<DMatrix<f64>>> {
        Some(vec![DMatrix::zeros(2 * self.dim, 2 * self.dim); self.dim])
    }

    fn velocity_controlled(&self) -> bool {
        false
    }
}

/// Planar serial arm with revolute joints commanded in joint velocity,
/// `q̇ = u`. The base sits at the world origin; joint angles are relative.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanarArm {
    lengths: Vec<f64>,
}

impl PlanarArm {
    pub fn new(lengths: Vec<f64>) -> Result<Self, ModelError> {
        if lengths.is_empty() {
            return Err(ModelError::Parameter("arm needs at least one link".into()));
        }
        if let Some(l) = lengths.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(ModelError::Parameter(format!(
                "link length must be positive and finite, got {l}"
            )));
        }
        Ok(Self { lengths })
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    /// Absolute link angles (cumulative joint sums).
    fn absolute_angles(&self, q: &DVector<f64>) -> Vec<f64> {
        q.iter()
            .scan(0.0, |acc, qi| {
                *acc += qi;
                Some(*acc)
            })
            .collect()
    }

    /// Positions of every joint and the tip, base first.
    pub fn joint_positions(&self, q: &DVector<f64>) -> Vec<[f64; 2]> {
        let mut out = vec![[0.0, 0.0]];
        let mut p = [0.0, 0.0];
        for (l, th) in self.lengths.iter().zip(self.absolute_angles(q)) {
            p[0] += l * th.cos();
            p[1] += l * th.sin();
            out.push(p);
        }
        out
    }
}

impl DynamicsModel for PlanarArm {
    fn state_dim(&self) -> usize {
        self.lengths.len()
    }

    fn input_dim(&self) -> usize {
        self.lengths.len()
    }

    fn ee_dim(&self) -> usize {
        2
    }

    fn flow(&self, _x: &DVector<f64>, u: &DVector<f64>, _t: f64) -> DVector<f64> {
        u.clone()
    }

    fn end_effector(&self, x: &DVector<f64>) -> DVector<f64> {
        let tip = *self.joint_positions(x).last().expect("at least one link");
        DVector::from_column_slice(&tip)
    }

    fn flow_jacobians(
        &self,
        _x: &DVector<f64>,
        _u: &DVector<f64>,
        _t: f64,
    ) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        let n = self.lengths.len();
        Some((DMatrix::zeros(n, n), DMatrix::identity(n, n)))
    }

    fn ee_jacobian(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        let n = self.lengths.len();
        let th = self.absolute_angles(x);
        let mut j = DMatrix::zeros(2, n);
        // Column i collects every link at or beyond joint i.
        for i in 0..n {
            for k in i..n {
                j[(0, i)] -= self.lengths[k] * th[k].sin();
                j[(1, i)] += self.lengths[k] * th[k].cos();
            }
        }
        Some(j)
    }

    fn ee_hessians(&self, x: &DVector<f64>) -> Option<Vec<DMatrix<f64>>> {
        let n = self.lengths.len();
        let th = self.absolute_angles(x);
        let mut hx = DMatrix::zeros(n, n);
        let mut hy = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                for k in i.max(j)..n {
                    hx[(i, j)] -= self.lengths[k] * th[k].cos();
                    hy[(i, j)] -= self.lengths[k] * th[k].sin();
                }
            }
        }
        Some(vec![hx, hy])
    }

    fn velocity_controlled(&self) -> bool {
        true
    }
}

/// Operator target: commanded end-effector position and velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedTarget {
    pub position: DVector<f64>,
    pub velocity: DVector<f64>,
}

impl AugmentedTarget {
    pub fn new(position: DVector<f64>, velocity: DVector<f64>) -> Self {
        Self { position, velocity }
    }

    pub fn stationary(position: DVector<f64>) -> Self {
        let n = position.len();
        Self {
            position,
            velocity: DVector::zeros(n),
        }
    }

    pub fn dim(&self) -> usize {
        self.position.len()
    }

    /// Scales the velocity down to at most `v_max` in norm.
    pub fn clamped(mut self, v_max: f64) -> Self {
        let speed = self.velocity.norm();
        if speed > v_max && speed > 0.0 {
            self.velocity *= v_max / speed;
        }
        self
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().chain(self.velocity.iter()).all(|v| v.is_finite())
    }

    /// `[x_d | v_d]` stacked.
    pub fn to_vector(&self) -> DVector<f64> {
        let n = self.dim();
        let mut v = DVector::zeros(2 * n);
        v.rows_mut(0, n).copy_from(&self.position);
        v.rows_mut(n, n).copy_from(&self.velocity);
        v
    }

    /// Splits a stacked `[x_d | v_d]` vector.
    pub fn from_vec(v: DVector<f64>) -> Self {
        let d = v.len() / 2;
        Self {
            position: v.rows(0, d).into_owned(),
            velocity: v.rows(d, d).into_owned(),
        }
    }

    /// Exact constant-velocity prediction `dt` seconds ahead.
    pub fn predict(&self, dt: f64) -> Self {
        Self {
            position: &self.position + &self.velocity * dt,
            velocity: self.velocity.clone(),
        }
    }
}

/// Plant state plus target, concatenated plant-then-target.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedState {
    pub plant: PlantState,
    pub target: AugmentedTarget,
}

impl AugmentedState {
    pub fn to_vector(&self) -> DVector<f64> {
        let np = self.plant.len();
        let t = self.target.to_vector();
        let mut v = DVector::zeros(np + t.len());
        v.rows_mut(0, np).copy_from(&self.plant);
        v.rows_mut(np, t.len()).copy_from(&t);
        v
    }

    pub fn from_vector(v: &DVector<f64>, plant_dim: usize) -> Result<Self, ModelError> {
        let rest = v.len().checked_sub(plant_dim).filter(|r| r % 2 == 0).ok_or(
            ModelError::Dimension {
                what: "augmented state",
                expected: plant_dim,
                actual: v.len(),
            },
        )?;
        let d = rest / 2;
        Ok(Self {
            plant: v.rows(0, plant_dim).into_owned(),
            target: AugmentedTarget {
                position: v.rows(plant_dim, d).into_owned(),
                velocity: v.rows(plant_dim + d, d).into_owned(),
            },
        })
    }
}

/// Plant model with the target appended to its state:
/// `d/dt (x, x_d, v_d) = (f(x, u, t), v_d, 0)`.
#[derive(Debug, Clone)]
pub struct AugmentedModel {
    plant: Arc<dyn DynamicsModel>,
}

/// Wraps `model` with constant-velocity target dynamics.
pub fn augment_model(model: Arc<dyn DynamicsModel>) -> AugmentedModel {
    AugmentedModel { plant: model }
}

impl AugmentedModel {
    pub fn plant(&self) -> &Arc<dyn DynamicsModel> {
        &self.plant
    }

    pub fn plant_dim(&self) -> usize {
        self.plant.state_dim()
    }

    pub fn target_dim(&self) -> usize {
        self.plant.ee_dim()
    }

    /// Column index where the target states begin.
    pub fn aug_start(&self) -> usize {
        self.plant.state_dim()
    }

    pub fn compose(&self, plant: &PlantState, target: &AugmentedTarget) -> DVector<f64> {
        AugmentedState {
            plant: plant.clone(),
            target: target.clone(),
        }
        .to_vector()
    }

    pub fn plant_block(&self, x: &DVector<f64>) -> DVector<f64> {
        x.rows(0, self.plant_dim()).into_owned()
    }

    pub fn target_block(&self, x: &DVector<f64>) -> AugmentedTarget {
        let n = self.plant_dim();
        let d = self.target_dim();
        AugmentedTarget {
            position: x.rows(n, d).into_owned(),
            velocity: x.rows(n + d, d).into_owned(),
        }
    }
}

impl DynamicsModel for AugmentedModel {
    fn state_dim(&self) -> usize {
        self.plant.state_dim() + 2 * self.plant.ee_dim()
    }

    fn input_dim(&self) -> usize {
        self.plant.input_dim()
    }

    fn ee_dim(&self) -> usize {
        self.plant.ee_dim()
    }

    fn flow(&self, x: &DVector<f64>, u: &DVector<f64>, t: f64) -> DVector<f64> {
        let n = self.plant_dim();
        let d = self.target_dim();
        let mut dx = DVector::zeros(n + 2 * d);
        let fp = self.plant.flow(&x.rows(0, n).into_owned(), u, t);
        dx.rows_mut(0, n).copy_from(&fp);
        dx.rows_mut(n, d).copy_from(&x.rows(n + d, d));
        dx
    }

    fn end_effector(&self, x: &DVector<f64>) -> DVector<f64> {
        self.plant.end_effector(&self.plant_block(x))
    }

    fn flow_jacobians(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        t: f64,
    ) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        let n = self.plant_dim();
        let d = self.target_dim();
        let nx = n + 2 * d;
        let (ap, bp) = self.plant.flow_jacobians(&self.plant_block(x), u, t)?;
        let mut a = DMatrix::zeros(nx, nx);
        a.view_mut((0, 0), (n, n)).copy_from(&ap);
        a.view_mut((n, n + d), (d, d)).fill_with_identity();
        let mut b = DMatrix::zeros(nx, self.input_dim());
        b.view_mut((0, 0), (n, self.input_dim())).copy_from(&bp);
        Some((a, b))
    }

    fn ee_jacobian(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        let n = self.plant_dim();
        let jp = self.plant.ee_jacobian(&self.plant_block(x))?;
        let mut j = DMatrix::zeros(self.ee_dim(), self.state_dim());
        j.view_mut((0, 0), (self.ee_dim(), n)).copy_from(&jp);
        Some(j)
    }

    fn ee_hessians(&self, x: &DVector<f64>) -> Option<Vec<DMatrix<f64>>> {
        let n = self.plant_dim();
        let nx = self.state_dim();
        let hp = self.plant.ee_hessians(&self.plant_block(x))?;
        Some(
            hp.into_iter()
                .map(|h| {
                    let mut full = DMatrix::zeros(nx, nx);
                    full.view_mut((0, 0), (n, n)).copy_from(&h);
                    full
                })
                .collect(),
        )
    }

    fn velocity_controlled(&self) -> bool {
        self.plant.velocity_controlled()
    }
}

fn check_dim(what: &'static str, expected: usize, actual: usize) -> Result<(), ModelError> {
    if expected == actual {
        Ok(())
    } else {
        Err(ModelError::Dimension {
            what,
            expected,
            actual,
        })
    }
}

fn check_finite(what: &'static str, m: &DMatrix<f64>) -> Result<(), ModelError> {
    for c in 0..m.ncols() {
        for r in 0..m.nrows() {
            if !m[(r, c)].is_finite() {
                return Err(ModelError::NonFinite {
                    what,
                    row: r,
                    col: c,
                });
            }
        }
    }
    Ok(())
}

/// Evaluates `ẋ = f(x, u, t)` after checking dimensions.
pub fn eval_flow(
    model: &dyn DynamicsModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
    t: f64,
) -> Result<DVector<f64>, ModelError> {
    check_dim("state", model.state_dim(), x.len())?;
    check_dim("input", model.input_dim(), u.len())?;
    Ok(model.flow(x, u, t))
}

/// End-effector position in the world frame.
pub fn forward_kinematics(
    model: &dyn DynamicsModel,
    x: &DVector<f64>,
) -> Result<DVector<f64>, ModelError> {
    check_dim("state", model.state_dim(), x.len())?;
    Ok(model.end_effector(x))
}

/// Continuous-time Jacobians of the flow map.
#[derive(Debug, Clone, PartialEq)]
pub struct Linearization {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

fn fd_step(v: f64) -> f64 {
    1e-6 * v.abs().max(1.0)
}

/// Central finite-difference flow Jacobians.
pub fn finite_difference_jacobians(
    model: &dyn DynamicsModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
    t: f64,
) -> Linearization {
    let nx = model.state_dim();
    let nu = model.input_dim();
    let mut a = DMatrix::zeros(nx, nx);
    let mut b = DMatrix::zeros(nx, nu);
    for i in 0..nx {
        let h = fd_step(x[i]);
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        let col = (model.flow(&xp, u, t) - model.flow(&xm, u, t)) / (2.0 * h);
        a.set_column(i, &col);
    }
    for i in 0..nu {
        let h = fd_step(u[i]);
        let mut up = u.clone();
        let mut um = u.clone();
        up[i] += h;
        um[i] -= h;
        let col = (model.flow(x, &up, t) - model.flow(x, &um, t)) / (2.0 * h);
        b.set_column(i, &col);
    }
    Linearization { a, b }
}

/// Central finite-difference end-effector Jacobian.
pub fn finite_difference_ee_jacobian(model: &dyn DynamicsModel, x: &DVector<f64>) -> DMatrix<f64> {
    let nx = model.state_dim();
    let mut j = DMatrix::zeros(model.ee_dim(), nx);
    for i in 0..nx {
        let h = fd_step(x[i]);
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        let col = (model.end_effector(&xp) - model.end_effector(&xm)) / (2.0 * h);
        j.set_column(i, &col);
    }
    j
}

/// `(∂f/∂x, ∂f/∂u)`: analytic when the model provides them, otherwise central
/// differences.
pub fn linearize(
    model: &dyn DynamicsModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
    t: f64,
) -> Result<Linearization, ModelError> {
    check_dim("state", model.state_dim(), x.len())?;
    check_dim("input", model.input_dim(), u.len())?;
    let lin = match model.flow_jacobians(x, u, t) {
        Some((a, b)) => Linearization { a, b },
        None => finite_difference_jacobians(model, x, u, t),
    };
    check_finite("A", &lin.a)?;
    check_finite("B", &lin.b)?;
    Ok(lin)
}

/// End-effector Jacobian, analytic or finite-difference.
pub fn ee_jacobian(model: &dyn DynamicsModel, x: &DVector<f64>) -> DMatrix<f64> {
    model
        .ee_jacobian(x)
        .unwrap_or_else(|| finite_difference_ee_jacobian(model, x))
}

/// End-effector Hessians, falling back to differences of the Jacobian.
pub fn ee_hessians(model: &dyn DynamicsModel, x: &DVector<f64>) -> Vec<DMatrix<f64>> {
    if let Some(h) = model.ee_hessians(x) {
        return h;
    }
    let nx = model.state_dim();
    let mut out = vec![DMatrix::zeros(nx, nx); model.ee_dim()];
    for i in 0..nx {
        let h = 1e-5 * x[i].abs().max(1.0);
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        let dj = (ee_jacobian(model, &xp) - ee_jacobian(model, &xm)) / (2.0 * h);
        for (c, hc) in out.iter_mut().enumerate() {
            for k in 0..nx {
                hc[(k, i)] = dj[(c, k)];
            }
        }
    }
    for h in &mut out {
        *h = (&*h + h.transpose()) * 0.5;
    }
    out
}

/// One classical Runge-Kutta step of length `h`.
pub fn rk4_step(
    model: &dyn DynamicsModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
    t: f64,
    h: f64,
) -> DVector<f64> {
    let k1 = model.flow(x, u, t);
    let k2 = model.flow(&(x + &k1 * (0.5 * h)), u, t + 0.5 * h);
    let k3 = model.flow(&(x + &k2 * (0.5 * h)), u, t + 0.5 * h);
    let k4 = model.flow(&(x + &k3 * h), u, t + h);
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// Zero-order-hold transition over `dt` using `substeps` RK4 steps.
pub fn discrete_step(
    model: &dyn DynamicsModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
    t: f64,
    dt: f64,
    substeps: usize,
) -> DVector<f64> {
    let h = dt / substeps as f64;
    let mut x = x.clone();
    for s in 0..substeps {
        x = rk4_step(model, &x, u, t + s as f64 * h, h);
    }
    x
}

/// Exact Jacobians of [`discrete_step`] with respect to `x` and `u`, obtained
/// by differentiating each RK4 stage.
pub fn discrete_jacobians(
    model: &dyn DynamicsModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
    t: f64,
    dt: f64,
    substeps: usize,
) -> Result<(DVector<f64>, DMatrix<f64>, DMatrix<f64>), ModelError> {
    let nx = model.state_dim();
    let nu = model.input_dim();
    let h = dt / substeps as f64;
    let mut x = x.clone();
    let mut phi_x = DMatrix::<f64>::identity(nx, nx);
    let mut phi_u = DMatrix::<f64>::zeros(nx, nu);
    for s in 0..substeps {
        let ts = t + s as f64 * h;
        let lin1 = linearize(model, &x, u, ts)?;
        let k1 = model.flow(&x, u, ts);
        let x2 = &x + &k1 * (0.5 * h);
        let lin2 = linearize(model, &x2, u, ts + 0.5 * h)?;
        let k2 = model.flow(&x2, u, ts + 0.5 * h);
        let x3 = &x + &k2 * (0.5 * h);
        let lin3 = linearize(model, &x3, u, ts + 0.5 * h)?;
        let k3 = model.flow(&x3, u, ts + 0.5 * h);
        let x4 = &x + &k3 * h;
        let lin4 = linearize(model, &x4, u, ts + h)?;
        let k4 = model.flow(&x4, u, ts + h);

        // Stage sensitivities with respect to the step's initial state and input.
        let eye = DMatrix::<f64>::identity(nx, nx);
        let d1x = &lin1.a;
        let d1u = lin1.b.clone();
        let d2x = &lin2.a * (&eye + d1x * (0.5 * h));
        let d2u = &lin2.a * (&d1u * (0.5 * h)) + &lin2.b;
        let d3x = &lin3.a * (&eye + &d2x * (0.5 * h));
        let d3u = &lin3.a * (&d2u * (0.5 * h)) + &lin3.b;
        let d4x = &lin4.a * (&eye + &d3x * h);
        let d4u = &lin4.a * (&d3u * h) + &lin4.b;
        let step_x = &eye + (d1x + &d2x * 2.0 + &d3x * 2.0 + &d4x) * (h / 6.0);
        let step_u = (d1u + d2u * 2.0 + d3u * 2.0 + d4u) * (h / 6.0);

        phi_u = &step_x * phi_u + step_u;
        phi_x = step_x * phi_x;
        x = &x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    Ok((x, phi_x, phi_u))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn kinematic_arm_flow_is_input() {
        let arm = PlanarArm::new(vec![0.5, 0.5, 0.3]).unwrap();
        let dx = eval_flow(&arm, &v(&[0.0, 0.0, 0.0]), &v(&[0.1, -0.2, 0.3]), 0.0).unwrap();
        assert_eq!(dx, v(&[0.1, -0.2, 0.3]));
        let rest = eval_flow(&arm, &v(&[0.4, 1.0, -2.0]), &v(&[0.0, 0.0, 0.0]), 3.0).unwrap();
        assert_eq!(rest, v(&[0.0, 0.0, 0.0]));
    }

    #[test]
    fn double_integrator_flow() {
        let di = DoubleIntegrator::default();
        let dx = eval_flow(
            &di,
            &v(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
            &v(&[0.0, 0.0, -1.0]),
            0.0,
        )
        .unwrap();
        assert_eq!(dx, v(&[0.0, 0.0, 0.0, 0.0, 0.0, -1.0]));
    }

    #[test]
    fn flow_rejects_wrong_dimensions() {
        let arm = PlanarArm::new(vec![1.0, 1.0]).unwrap();
        let err = eval_flow(&arm, &v(&[0.0]), &v(&[0.0, 0.0]), 0.0).unwrap_err();
        assert!(matches!(err, ModelError::Dimension { what: "state", .. }));
        let err = eval_flow(&arm, &v(&[0.0, 0.0]), &v(&[0.0]), 0.0).unwrap_err();
        assert!(matches!(err, ModelError::Dimension { what: "input", .. }));
    }

    #[test]
    fn augmented_target_block() {
        let aug = augment_model(Arc::new(DoubleIntegrator::default()));
        assert_eq!(aug.aug_start(), 6);
        assert_eq!(aug.state_dim(), 12);
        let target = AugmentedTarget::new(v(&[1.0, 0.0, 0.0]), v(&[0.1, 0.0, 0.0]));
        let x = aug.compose(&v(&[0.3, -0.2, 0.1, 0.5, 0.0, 1.0]), &target);
        let dx = aug.flow(&x, &v(&[0.2, 0.2, 0.2]), 0.0);
        assert_eq!(dx.rows(6, 6).into_owned(), v(&[0.1, 0.0, 0.0, 0.0, 0.0, 0.0]));

        let frozen = aug.compose(&v(&[0.0; 6]), &AugmentedTarget::stationary(v(&[1.0, 2.0, 3.0])));
        let dx = aug.flow(&frozen, &v(&[1.0, 1.0, 1.0]), 0.0);
        assert!(dx.rows(6, 6).iter().all(|e| *e == 0.0));
    }

    #[test]
    fn augmented_block_integrates_exactly() {
        let aug = augment_model(Arc::new(DoubleIntegrator::default()));
        let target = AugmentedTarget::new(v(&[0.0, 0.0, 0.0]), v(&[0.2, 0.0, 0.0]));
        let x = aug.compose(&v(&[0.0; 6]), &target);
        let x1 = discrete_step(&aug, &x, &v(&[0.0, 0.0, 0.0]), 0.0, 0.5, 1);
        let t1 = aug.target_block(&x1);
        assert!((t1.position - v(&[0.1, 0.0, 0.0])).norm() < 1e-15);
        assert_eq!(t1.velocity, target.velocity);
    }

    #[test]
    fn planar_fk_examples() {
        let arm = PlanarArm::new(vec![1.0, 1.0]).unwrap();
        let p = forward_kinematics(&arm, &v(&[0.0, 0.0])).unwrap();
        assert!((p - v(&[2.0, 0.0])).norm() < 1e-15);
        let p = forward_kinematics(&arm, &v(&[FRAC_PI_2, 0.0])).unwrap();
        assert!((p - v(&[0.0, 2.0])).norm() < 1e-15);
    }

    #[test]
    fn planar_fk_matches_transform_composition() {
        // Homogeneous 2D transforms: rotate by q_i then translate along x by L_i.
        let lengths = [0.5, 0.5, 0.3];
        let q: [f64; 3] = [0.3, -0.2, 0.5];
        let mut t = nalgebra::Matrix3::<f64>::identity();
        for (l, qi) in lengths.iter().zip(q) {
            let (s, c) = qi.sin_cos();
            let rot = nalgebra::Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
            let tr = nalgebra::Matrix3::new(1.0, 0.0, *l, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
            t = t * rot * tr;
        }
        let arm = PlanarArm::new(lengths.to_vec()).unwrap();
        let p = forward_kinematics(&arm, &v(&q)).unwrap();
        assert!((p[0] - t[(0, 2)]).abs() < 1e-14);
        assert!((p[1] - t[(1, 2)]).abs() < 1e-14);
    }

    #[test]
    fn linearize_kinematic_and_augmented() {
        let arm = PlanarArm::new(vec![0.5, 0.5, 0.3]).unwrap();
        let lin = linearize(&arm, &v(&[0.1, 0.2, 0.3]), &v(&[1.0, 0.0, 0.0]), 0.0).unwrap();
        assert_eq!(lin.a, DMatrix::zeros(3, 3));
        assert_eq!(lin.b, DMatrix::identity(3, 3));

        let aug = augment_model(Arc::new(arm));
        let x = aug.compose(
            &v(&[0.1, 0.2, 0.3]),
            &AugmentedTarget::new(v(&[1.0, 0.5]), v(&[0.1, 0.0])),
        );
        let lin = linearize(&aug, &x, &v(&[0.0, 0.0, 0.0]), 0.0).unwrap();
        // ẋ_d = v_d
        assert_eq!(lin.a.view((3, 5), (2, 2)), DMatrix::<f64>::identity(2, 2));
        assert_eq!(lin.a.view((3, 0), (4, 5)), DMatrix::<f64>::zeros(4, 5));
        assert_eq!(lin.a.view((5, 0), (2, 7)), DMatrix::<f64>::zeros(2, 7));
        assert_eq!(lin.b.view((3, 0), (4, 3)), DMatrix::<f64>::zeros(4, 3));
    }

    #[test]
    fn linearize_flags_non_finite() {
        #[derive(Debug)]
        struct Blowup;
        impl DynamicsModel for Blowup {
            fn state_dim(&self) -> usize {
                1
            }
            fn input_dim(&self) -> usize {
                1
            }
            fn ee_dim(&self) -> usize {
                1
            }
            fn flow(&self, x: &DVector<f64>, _u: &DVector<f64>, _t: f64) -> DVector<f64> {
                x.map(|e| 1.0 / e)
            }
            fn end_effector(&self, x: &DVector<f64>) -> DVector<f64> {
                x.clone()
            }
            fn flow_jacobians(
                &self,
                x: &DVector<f64>,
                _u: &DVector<f64>,
                _t: f64,
            ) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
                Some((
                    DMatrix::from_element(1, 1, -1.0 / (x[0] * x[0])),
                    DMatrix::zeros(1, 1),
                ))
            }
            fn velocity_controlled(&self) -> bool {
                true
            }
        }
        let err = linearize(&Blowup, &v(&[0.0]), &v(&[0.0]), 0.0).unwrap_err();
        assert_eq!(
            err,
            ModelError::NonFinite {
                what: "A",
                row: 0,
                col: 0
            }
        );
    }

    #[test]
    fn discrete_jacobians_match_differences() {
        let aug = augment_model(Arc::new(PlanarArm::new(vec![0.5, 0.5, 0.3]).unwrap()));
        let x = aug.compose(
            &v(&[0.3, 0.8, -0.4]),
            &AugmentedTarget::new(v(&[0.7, 0.2]), v(&[0.2, -0.1])),
        );
        let u = v(&[0.2, -0.5, 0.1]);
        let (_, ax, bu) = discrete_jacobians(&aug, &x, &u, 0.0, 0.02, 2).unwrap();
        for i in 0..x.len() {
            let h = 1e-6;
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let col = (discrete_step(&aug, &xp, &u, 0.0, 0.02, 2)
                - discrete_step(&aug, &xm, &u, 0.0, 0.02, 2))
                / (2.0 * h);
            assert!((col - ax.column(i)).amax() < 1e-8);
        }
        for i in 0..u.len() {
            let h = 1e-6;
            let mut up = u.clone();
            let mut um = u.clone();
            up[i] += h;
            um[i] -= h;
            let col = (discrete_step(&aug, &x, &up, 0.0, 0.02, 2)
                - discrete_step(&aug, &x, &um, 0.0, 0.02, 2))
                / (2.0 * h);
            assert!((col - bu.column(i)).amax() < 1e-8);
        }
    }

    #[test]
    fn target_clamp() {
        let t = AugmentedTarget::new(v(&[0.0, 0.0]), v(&[3.0, 4.0])).clamped(1.0);
        assert!((t.velocity.norm() - 1.0).abs() < 1e-15);
        assert!((t.velocity[0] - 0.6).abs() < 1e-15);
        let slow = AugmentedTarget::new(v(&[0.0, 0.0]), v(&[0.3, 0.4])).clamped(1.0);
        assert_eq!(slow.velocity, v(&[0.3, 0.4]));
    }
}
