//! Iterative LQ solver on a fixed knot grid.
//!
//! The horizon `[0, T]` is split into `N` intervals of length `dt`; inputs are
//! held constant over each interval and the plant is integrated with RK4.
//! The discrete objective is
//!
//! ```text
//! J = Σ_{k=0..N} w_k·l_state(x_k) + Σ_{k<N} dt·l_input(x_k, u_k) + φ(x_N)
//! ```
//!
//! with trapezoidal knot weights `w_0 = w_N = dt/2`, `w_k = dt` otherwise.
//! Each iteration runs a Riccati backward pass on the local LQ approximation
//! and a backtracking line search on the feedforward correction. The result
//! is an [`AffinePolicy`]: nominal states and inputs plus a feedback gain per
//! knot.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::model::{discrete_jacobians, discrete_step, DynamicsModel, ModelError};
use crate::ocp::{floor_eigenvalues, Curvature, OcpError, OcpProblem, QuadraticExpansion, INPUT_HESSIAN_FLOOR};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("rollout diverged at knot {knot}")]
    RolloutDivergence { knot: usize },
    #[error("input Hessian not positive definite at knot {knot}")]
    NotPositiveDefinite { knot: usize },
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("invalid solver settings: {0}")]
    Settings(String),
    #[error(transparent)]
    Ocp(#[from] OcpError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverSettings {
    pub max_iterations: usize,
    /// Stop once the relative cost decrease of an iteration falls below this.
    pub convergence_tol: f64,
    pub backtrack_factor: f64,
    /// Smallest step size tried before the line search gives up.
    pub min_step: f64,
    /// RK4 substeps per knot interval.
    pub substeps: usize,
    pub dt_knot: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            max_iterations: 20,
            convergence_tol: 1e-6,
            backtrack_factor: 0.5,
            min_step: 1e-3,
            substeps: 1,
            dt_knot: 0.02,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |m: &str| Err(SolverError::Settings(m.to_string()));
        if self.max_iterations == 0 {
            return bad("max_iterations must be positive");
        }
        if !(self.convergence_tol > 0.0) {
            return bad("convergence_tol must be positive");
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return bad("backtrack_factor must lie in (0, 1)");
        }
        if !(self.min_step > 0.0 && self.min_step <= 1.0) {
            return bad("min_step must lie in (0, 1]");
        }
        if self.substeps == 0 {
            return bad("substeps must be positive");
        }
        if !(self.dt_knot > 0.0 && self.dt_knot.is_finite()) {
            return bad("dt_knot must be positive");
        }
        Ok(())
    }

    /// Number of intervals covering `horizon`; the knot spacing is adjusted
    /// to divide the horizon exactly.
    pub fn intervals(&self, horizon: f64) -> usize {
        ((horizon / self.dt_knot).round() as usize).max(1)
    }
}

/// Summary of one solve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub final_cost: f64,
    pub cost_trace: Vec<f64>,
    pub converged: bool,
    /// Wall-clock time; not deterministic.
    pub solve_time_s: f64,
}

/// States and inputs on the knot grid with their total cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub cost: f64,
}

impl Trajectory {
    pub fn intervals(&self) -> usize {
        self.inputs.len()
    }
}

/// Time-indexed affine feedback law `u = ū(t) + K(t)(x − x̄(t))`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinePolicy {
    times: Vec<f64>,
    states: Vec<DVector<f64>>,
    inputs: Vec<DVector<f64>>,
    gains: Vec<DMatrix<f64>>,
    aug_start: usize,
}

/// Policy quantities interpolated at a query time.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySample {
    pub state: DVector<f64>,
    pub input: DVector<f64>,
    pub gain: DMatrix<f64>,
    /// Query time lay beyond the last knot.
    pub stale: bool,
}

impl AffinePolicy {
    pub fn new(
        times: Vec<f64>,
        states: Vec<DVector<f64>>,
        inputs: Vec<DVector<f64>>,
        gains: Vec<DMatrix<f64>>,
        aug_start: usize,
    ) -> Result<Self, SolverError> {
        let n = times.len();
        if n < 2 {
            return Err(SolverError::InvalidPolicy("need at least two knots".into()));
        }
        if states.len() != n || inputs.len() != n || gains.len() != n {
            return Err(SolverError::InvalidPolicy(format!(
                "knot count mismatch: {n} times, {} states, {} inputs, {} gains",
                states.len(),
                inputs.len(),
                gains.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(SolverError::InvalidPolicy(
                "knot times must be strictly increasing".into(),
            ));
        }
        let nx = states[0].len();
        let nu = inputs[0].len();
        if states.iter().any(|s| s.len() != nx)
            || inputs.iter().any(|u| u.len() != nu)
            || gains.iter().any(|k| k.shape() != (nu, nx))
        {
            return Err(SolverError::InvalidPolicy("inconsistent dimensions".into()));
        }
        if aug_start == 0 || aug_start >= nx {
            return Err(SolverError::InvalidPolicy(format!(
                "aug_start {aug_start} outside (0, {nx})"
            )));
        }
        Ok(Self {
            times,
            states,
            inputs,
            gains,
            aug_start,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[DVector<f64>] {
        &self.states
    }

    pub fn inputs(&self) -> &[DVector<f64>] {
        &self.inputs
    }

    pub fn gains(&self) -> &[DMatrix<f64>] {
        &self.gains
    }

    pub fn aug_start(&self) -> usize {
        self.aug_start
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    pub fn state_dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs[0].len()
    }

    /// Copy of this policy with every gain replaced by `f(gain)`.
    pub fn map_gains(&self, f: impl Fn(&DMatrix<f64>) -> DMatrix<f64>) -> Self {
        Self {
            gains: self.gains.iter().map(f).collect(),
            ..self.clone()
        }
    }

    /// Linear interpolation of nominal state, input and gain (entrywise).
    /// Queries past the last knot return the terminal knot with `stale` set.
    pub fn interpolate(&self, t: f64) -> PolicySample {
        let last = self.times.len() - 1;
        if t <= self.times[0] {
            return PolicySample {
                state: self.states[0].clone(),
                input: self.inputs[0].clone(),
                gain: self.gains[0].clone(),
                stale: false,
            };
        }
        if t >= self.times[last] {
            return PolicySample {
                state: self.states[last].clone(),
                input: self.inputs[last].clone(),
                gain: self.gains[last].clone(),
                stale: t > self.times[last],
            };
        }
        let i = self.times.partition_point(|ti| *ti <= t) - 1;
        let w = (t - self.times[i]) / (self.times[i + 1] - self.times[i]);
        if w == 0.0 {
            return PolicySample {
                state: self.states[i].clone(),
                input: self.inputs[i].clone(),
                gain: self.gains[i].clone(),
                stale: false,
            };
        }
        PolicySample {
            state: &self.states[i] * (1.0 - w) + &self.states[i + 1] * w,
            input: &self.inputs[i] * (1.0 - w) + &self.inputs[i + 1] * w,
            gain: &self.gains[i] * (1.0 - w) + &self.gains[i + 1] * w,
            stale: false,
        }
    }

    /// Full-state policy output `ū(t) + K(t)(x − x̄(t))`.
    pub fn evaluate(&self, x: &DVector<f64>, t: f64) -> DVector<f64> {
        let s = self.interpolate(t);
        s.input + s.gain * (x - s.state)
    }
}

/// Free-function form of [`AffinePolicy::interpolate`].
pub fn interpolate(policy: &AffinePolicy, t: f64) -> PolicySample {
    policy.interpolate(t)
}

/// What drives a rollout.
#[derive(Debug, Clone, Copy)]
pub enum Controls<'a> {
    OpenLoop(&'a [DVector<f64>]),
    /// Full-state feedback policy; knot `k` is evaluated at
    /// `policy.start() + k·dt`.
    Policy(&'a AffinePolicy),
}

fn knot_weight(k: usize, n: usize, dt: f64) -> f64 {
    if k == 0 || k == n {
        0.5 * dt
    } else {
        dt
    }
}

fn is_finite(v: &DVector<f64>) -> bool {
    v.iter().all(|e| e.is_finite())
}

/// Total discrete cost of a state/input sequence.
pub fn trajectory_cost(
    problem: &OcpProblem,
    states: &[DVector<f64>],
    inputs: &[DVector<f64>],
    dt: f64,
) -> Result<f64, SolverError> {
    let n = inputs.len();
    let mut cost = 0.0;
    for k in 0..=n {
        let t = (k as f64 * dt).min(problem.horizon());
        let u = &inputs[k.min(n - 1)];
        cost += knot_weight(k, n, dt) * problem.state_cost_value(&states[k], u, t);
        if k < n {
            cost += dt * problem.input_cost_value(&states[k], u, t);
        }
    }
    cost += problem.terminal_cost(&states[n])?;
    Ok(cost)
}

fn grid(problem: &OcpProblem, settings: &SolverSettings) -> (usize, f64) {
    let n = settings.intervals(problem.horizon());
    (n, problem.horizon() / n as f64)
}

/// Forward-integrates the augmented flow from `x0` and returns the knot
/// trajectory with its cost.
pub fn rollout(
    problem: &OcpProblem,
    x0: &DVector<f64>,
    controls: Controls<'_>,
    settings: &SolverSettings,
) -> Result<Trajectory, SolverError> {
    let model = problem.model().as_ref();
    if x0.len() != model.state_dim() {
        return Err(ModelError::Dimension {
            what: "initial state",
            expected: model.state_dim(),
            actual: x0.len(),
        }
        .into());
    }
    let (n, dt) = grid(problem, settings);
    if let Controls::OpenLoop(us) = controls {
        if us.len() != n {
            return Err(SolverError::InvalidPolicy(format!(
                "expected {n} inputs, got {}",
                us.len()
            )));
        }
    }
    let mut states = Vec::with_capacity(n + 1);
    let mut inputs = Vec::with_capacity(n);
    states.push(x0.clone());
    for k in 0..n {
        let x = &states[k];
        let u = match controls {
            Controls::OpenLoop(us) => us[k].clone(),
            Controls::Policy(p) => p.evaluate(x, p.start() + k as f64 * dt),
        };
        let next = discrete_step(model, x, &u, k as f64 * dt, dt, settings.substeps);
        if !is_finite(&next) || !is_finite(&u) {
            return Err(SolverError::RolloutDivergence { knot: k + 1 });
        }
        inputs.push(u);
        states.push(next);
    }
    let cost = trajectory_cost(problem, &states, &inputs, dt)?;
    Ok(Trajectory {
        dt,
        states,
        inputs,
        cost,
    })
}

/// Output of one Riccati sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct BackwardPass {
    /// Feedforward corrections `k_k` per interval.
    pub feedforward: Vec<DVector<f64>>,
    /// Feedback gains `K_k` per interval.
    pub gains: Vec<DMatrix<f64>>,
    /// Value-function Hessians per knot (`N + 1` entries).
    pub value_hessians: Vec<DMatrix<f64>>,
    /// Coefficients of the predicted cost change `α·d1 + ½α²·d2`.
    pub expected: (f64, f64),
    /// Second-order model the recursion ended up using.
    pub curvature: Curvature,
}

impl BackwardPass {
    pub fn expected_change(&self, alpha: f64) -> f64 {
        alpha * self.expected.0 + 0.5 * alpha * alpha * self.expected.1
    }
}

/// Riccati recursion on the LQ approximation about `trajectory`.
///
/// The exact second-order model is tried first. If it leaves some `Q_uu` with
/// less than half the curvature of the input cost alone, the recursion is
/// repeated with the Gauss-Newton model, whose value Hessians are positive
/// semidefinite.
pub fn backward_pass(
    problem: &OcpProblem,
    trajectory: &Trajectory,
    settings: &SolverSettings,
) -> Result<BackwardPass, SolverError> {
    match riccati(problem, trajectory, settings, Curvature::Exact)? {
        Some(bp) => Ok(bp),
        None => riccati(problem, trajectory, settings, Curvature::GaussNewton)?
            .ok_or(SolverError::NotPositiveDefinite { knot: 0 }),
    }
}

fn riccati(
    problem: &OcpProblem,
    trajectory: &Trajectory,
    settings: &SolverSettings,
    curvature: Curvature,
) -> Result<Option<BackwardPass>, SolverError> {
    let model = problem.model().as_ref();
    let n = trajectory.intervals();
    let dt = trajectory.dt;
    let terminal = problem.terminal_expansion_with(&trajectory.states[n], curvature)?;
    let last_parts = problem.stage_parts_with(
        &trajectory.states[n],
        &trajectory.inputs[n - 1],
        problem.horizon(),
        curvature,
    )?;
    let wn = knot_weight(n, n, dt);
    let mut v_x = &terminal.q_x + &last_parts.state.q_x * wn;
    let mut v_xx = &terminal.q_xx + &last_parts.state.q_xx * wn;
    v_xx = (&v_xx + v_xx.transpose()) * 0.5;

    let mut feedforward = vec![DVector::zeros(0); n];
    let mut gains = vec![DMatrix::zeros(0, 0); n];
    let mut value_hessians = vec![DMatrix::zeros(0, 0); n + 1];
    value_hessians[n] = v_xx.clone();
    let (mut d1, mut d2) = (0.0, 0.0);

    for k in (0..n).rev() {
        let x = &trajectory.states[k];
        let u = &trajectory.inputs[k];
        let t = k as f64 * dt;
        let (_, a, b) = discrete_jacobians(model, x, u, t, dt, settings.substeps)?;
        let parts = problem.stage_parts_with(x, u, t, curvature)?;
        let mut stage = QuadraticExpansion::zeros(x.len(), u.len());
        stage.add_scaled(&parts.state, knot_weight(k, n, dt));
        stage.add_scaled(&parts.input, dt);

        let bt_vxx = b.transpose() * &v_xx;
        let q_x = &stage.q_x + a.transpose() * &v_x;
        let q_u = &stage.q_u + b.transpose() * &v_x;
        let q_xx = &stage.q_xx + a.transpose() * &v_xx * &a;
        let q_uu = &stage.q_uu + &bt_vxx * &b;
        let q_ux = &stage.q_ux + &bt_vxx * &a;

        let q_uu = (&q_uu + q_uu.transpose()) * 0.5;
        if curvature == Curvature::Exact && min_eigenvalue(&q_uu) < 0.5 * min_eigenvalue(&stage.q_uu) {
            return Ok(None);
        }
        let q_uu = floor_eigenvalues(&q_uu, INPUT_HESSIAN_FLOOR);
        let chol = q_uu
            .clone()
            .cholesky()
            .ok_or(SolverError::NotPositiveDefinite { knot: k })?;
        let kff = -chol.solve(&q_u);
        let kfb = -chol.solve(&q_ux);

        let kt = kfb.transpose();
        v_x = &q_x + &kt * &q_uu * &kff + &kt * &q_u + q_ux.transpose() * &kff;
        v_xx = &q_xx + &kt * &q_uu * &kfb + &kt * &q_ux + q_ux.transpose() * &kfb;
        v_xx = (&v_xx + v_xx.transpose()) * 0.5;

        d1 += kff.dot(&q_u);
        d2 += kff.dot(&(&q_uu * &kff));
        value_hessians[k] = v_xx.clone();
        feedforward[k] = kff;
        gains[k] = kfb;
    }
    Ok(Some(BackwardPass {
        feedforward,
        gains,
        value_hessians,
        expected: (d1, d2),
        curvature,
    }))
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigenvalues().min()
}

/// Result of a line search.
#[derive(Debug, Clone, PartialEq)]
pub enum LineSearchOutcome {
    Accepted { trajectory: Trajectory, alpha: f64 },
    /// No step size down to the floor decreased the cost.
    Failed,
}

fn forward_with_correction(
    problem: &OcpProblem,
    x0: &DVector<f64>,
    current: &Trajectory,
    step: &BackwardPass,
    alpha: f64,
    settings: &SolverSettings,
) -> Result<Trajectory, SolverError> {
    let model = problem.model().as_ref();
    let n = current.intervals();
    let dt = current.dt;
    let mut states = Vec::with_capacity(n + 1);
    let mut inputs = Vec::with_capacity(n);
    states.push(x0.clone());
    for k in 0..n {
        let x = &states[k];
        let u = &current.inputs[k]
            + &step.feedforward[k] * alpha
            + &step.gains[k] * (x - &current.states[k]);
        let next = discrete_step(model, x, &u, k as f64 * dt, dt, settings.substeps);
        if !is_finite(&next) || !is_finite(&u) {
            return Err(SolverError::RolloutDivergence { knot: k + 1 });
        }
        inputs.push(u);
        states.push(next);
    }
    let cost = trajectory_cost(problem, &states, &inputs, dt)?;
    Ok(Trajectory {
        dt,
        states,
        inputs,
        cost,
    })
}

/// Backtracking on the feedforward correction: `α ∈ {1, γ, γ², …}` down to
/// `settings.min_step`, accepting the first step that does not increase the
/// cost.
pub fn line_search(
    problem: &OcpProblem,
    x0: &DVector<f64>,
    current: &Trajectory,
    candidate: &BackwardPass,
    settings: &SolverSettings,
) -> LineSearchOutcome {
    let tol = 1e-12 * current.cost.abs().max(1.0);
    let mut alpha = 1.0;
    while alpha >= settings.min_step {
        if let Ok(trajectory) = forward_with_correction(problem, x0, current, candidate, alpha, settings) {
            if trajectory.cost <= current.cost + tol {
                return LineSearchOutcome::Accepted { trajectory, alpha };
            }
        }
        alpha *= settings.backtrack_factor;
    }
    LineSearchOutcome::Failed
}

fn build_policy(
    problem: &OcpProblem,
    t0: f64,
    trajectory: &Trajectory,
    pass: &BackwardPass,
) -> Result<AffinePolicy, SolverError> {
    let n = trajectory.intervals();
    let times = (0..=n).map(|k| t0 + k as f64 * trajectory.dt).collect();
    let mut inputs = trajectory.inputs.clone();
    inputs.push(trajectory.inputs[n - 1].clone());
    let mut gains = pass.gains.clone();
    gains.push(pass.gains[n - 1].clone());
    AffinePolicy::new(
        times,
        trajectory.states.clone(),
        inputs,
        gains,
        problem.model().aug_start(),
    )
}

/// Runs iLQR iterations from `x0` at absolute time `t0`.
///
/// A warm start is shifted to the new start time (its last knot held) and
/// rolled out open loop; if that rollout diverges the solver restarts from
/// zero inputs.
pub fn solve(
    problem: &OcpProblem,
    x0: &DVector<f64>,
    t0: f64,
    warm_start: Option<&AffinePolicy>,
    settings: &SolverSettings,
) -> Result<(AffinePolicy, SolveReport), SolverError> {
    settings.validate()?;
    let started = Instant::now();
    let model = problem.model().as_ref();
    let (n, dt) = grid(problem, settings);
    let zero_inputs = vec![DVector::zeros(model.input_dim()); n];

    let warm_inputs: Option<Vec<DVector<f64>>> = warm_start
        .filter(|p| p.input_dim() == model.input_dim())
        .map(|p| (0..n).map(|k| p.interpolate(t0 + k as f64 * dt).input).collect());
    let mut trajectory = match warm_inputs {
        Some(us) => match rollout(problem, x0, Controls::OpenLoop(&us), settings) {
            Ok(tr) => tr,
            Err(SolverError::RolloutDivergence { .. }) => {
                rollout(problem, x0, Controls::OpenLoop(&zero_inputs), settings)?
            }
            Err(e) => return Err(e),
        },
        None => rollout(problem, x0, Controls::OpenLoop(&zero_inputs), settings)?,
    };

    let mut cost_trace = vec![trajectory.cost];
    let mut iterations = 0;
    let mut converged = false;
    let mut pass = backward_pass(problem, &trajectory, settings)?;
    while iterations < settings.max_iterations {
        let scale = trajectory.cost.abs().max(1e-12);
        if -pass.expected_change(1.0) < settings.convergence_tol * scale {
            converged = true;
            break;
        }
        match line_search(problem, x0, &trajectory, &pass, settings) {
            LineSearchOutcome::Accepted { trajectory: next, .. } => {
                let decrease = trajectory.cost - next.cost;
                trajectory = next;
                cost_trace.push(trajectory.cost);
                iterations += 1;
                pass = backward_pass(problem, &trajectory, settings)?;
                if decrease < settings.convergence_tol * scale {
                    converged = true;
                    break;
                }
            }
            LineSearchOutcome::Failed => break,
        }
    }

    let policy = build_policy(problem, t0, &trajectory, &pass)?;
    let report = SolveReport {
        iterations,
        final_cost: trajectory.cost,
        cost_trace,
        converged,
        solve_time_s: started.elapsed().as_secs_f64(),
    };
    Ok((policy, report))
}
