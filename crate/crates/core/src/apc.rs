//! Abstracted predictive controller: receding-horizon tracking on the
//! virtual-quadrotor model.
//!
//! Each solve linearises the RK4 prediction model about the current input
//! guess, condenses the horizon into a box QP over the stacked inputs, and
//! accepts the step only if the nonlinear rollout cost decreases
//! (backtracking otherwise). The input penalty acts on the deviation from
//! hover thrust so that a hovering reference is an exact optimum.

use nalgebra::{DMatrix, DVector, Matrix4, SMatrix, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    hover_command, rk4, rk4_with_jacobians, BodyParams, InputMatrix, InputVector, RigidState, StateMatrix, StateVector,
    WrenchCommand, INPUT_DIM,
};
use crate::qp::solve_box_qp;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ApcError {
    #[error("non-finite state or reference")]
    NonFiniteState,
    #[error("invalid controller setting: {0}")]
    InvalidSettings(String),
    #[error("QP failure: {0}")]
    Qp(#[from] crate::qp::QpError),
}

/// Diagonal tracking weights. Quaternion weights are ordered (w, x, y, z).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ApcWeights {
    pub q_p: [f64; 3],
    pub q_q: [f64; 4],
    pub q_v: [f64; 3],
    pub q_w: [f64; 3],
    pub q_p_n: [f64; 3],
    pub q_q_n: [f64; 4],
    pub q_v_n: [f64; 3],
    pub q_w_n: [f64; 3],
    pub r_f: f64,
    pub r_mx: f64,
    pub r_my: f64,
    pub r_mz: f64,
}

impl Default for ApcWeights {
    fn default() -> Self {
        ApcWeights {
            q_p: [200.0, 200.0, 300.0],
            q_q: [0.0, 20.0, 20.0, 20.0],
            q_v: [20.0, 20.0, 20.0],
            q_w: [1.0, 1.0, 1.0],
            q_p_n: [1000.0, 1000.0, 1500.0],
            q_q_n: [0.0, 100.0, 100.0, 100.0],
            q_v_n: [100.0, 100.0, 100.0],
            q_w_n: [5.0, 5.0, 5.0],
            r_f: 0.02,
            r_mx: 1e-3,
            r_my: 1e-3,
            r_mz: 1e-3,
        }
    }
}

impl ApcWeights {
    pub fn validate(&self) -> Result<(), ApcError> {
        let stage = self.q_p.iter().chain(&self.q_q).chain(&self.q_v).chain(&self.q_w);
        let terminal = self
            .q_p_n
            .iter()
            .chain(&self.q_q_n)
            .chain(&self.q_v_n)
            .chain(&self.q_w_n);
        let r = [self.r_f, self.r_mx, self.r_my, self.r_mz];
        if stage
            .clone()
            .chain(terminal)
            .chain(&r)
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return Err(ApcError::InvalidSettings(
                "weights must be finite and nonnegative".into(),
            ));
        }
        if !stage.clone().any(|&v| v > 0.0) {
            return Err(ApcError::InvalidSettings(
                "at least one stage weight must be positive".into(),
            ));
        }
        if r.iter().any(|&v| v <= 0.0) {
            return Err(ApcError::InvalidSettings("input weights must be positive".into()));
        }
        Ok(())
    }

    fn state_weights(p: &[f64; 3], q: &[f64; 4], v: &[f64; 3], w: &[f64; 3]) -> StateVector {
        let mut d = StateVector::zeros();
        for i in 0..3 {
            d[i] = p[i];
            d[7 + i] = v[i];
            d[10 + i] = w[i];
        }
        for i in 0..4 {
            d[3 + i] = q[i];
        }
        d
    }

    fn stage(&self) -> StateVector {
        Self::state_weights(&self.q_p, &self.q_q, &self.q_v, &self.q_w)
    }

    fn terminal(&self) -> StateVector {
        Self::state_weights(&self.q_p_n, &self.q_q_n, &self.q_v_n, &self.q_w_n)
    }

    /// Input weights act on the accelerations the inputs produce, F/m and
    /// M_i/I_ii, so one weight set suits assemblies of any size.
    fn input(&self, body: &BodyParams) -> Vector4<f64> {
        let i = &body.inertia;
        Vector4::new(
            self.r_f / (body.mass * body.mass),
            self.r_mx / (i[(0, 0)] * i[(0, 0)]),
            self.r_my / (i[(1, 1)] * i[(1, 1)]),
            self.r_mz / (i[(2, 2)] * i[(2, 2)]),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ApcSettings {
    pub horizon: usize,
    pub dt: f64,
    /// Outer relinearisation passes.
    pub max_iterations: usize,
    /// Relative cost decrease below which the outer loop stops.
    pub convergence_tol: f64,
    pub qp_max_iterations: usize,
}

impl Default for ApcSettings {
    fn default() -> Self {
        ApcSettings {
            horizon: 20,
            dt: 0.02,
            max_iterations: 2,
            convergence_tol: 1e-9,
            qp_max_iterations: 200,
        }
    }
}

impl ApcSettings {
    pub fn validate(&self) -> Result<(), ApcError> {
        if self.horizon < 2 {
            return Err(ApcError::InvalidSettings("horizon must be at least 2".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(ApcError::InvalidSettings("dt must be positive".into()));
        }
        if self.max_iterations == 0 || self.qp_max_iterations == 0 {
            return Err(ApcError::InvalidSettings("iteration limits must be positive".into()));
        }
        Ok(())
    }
}

/// Controller section of a configuration document.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerConfig {
    pub weights: ApcWeights,
    pub settings: ApcSettings,
}

impl ControllerConfig {
    pub fn from_value(v: Option<&serde_json::Value>) -> Result<Self, ApcError> {
        let c: ControllerConfig = match v {
            None => ControllerConfig::default(),
            Some(v) => serde_json::from_value(v.clone()).map_err(|e| ApcError::InvalidSettings(e.to_string()))?,
        };
        c.weights.validate()?;
        c.settings.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WrenchBounds {
    pub lo: Vector4<f64>,
    pub hi: Vector4<f64>,
}

impl WrenchBounds {
    pub fn clamp(&self, u: &InputVector) -> InputVector {
        InputVector::from_fn(|i, _| u[i].clamp(self.lo[i], self.hi[i]))
    }
}

/// Thrust within [f̲_sum, f̄_sum]; each torque axis spans the extremes over the
/// 16 virtual min/max rotor patterns ¼·G_V·V_V.
pub fn actuator_bounds(effectiveness: &Matrix4<f64>, f_sum_min: f64, f_sum_max: f64) -> WrenchBounds {
    let mut lo = Vector4::repeat(f64::INFINITY);
    let mut hi = Vector4::repeat(f64::NEG_INFINITY);
    for pattern in 0..16u32 {
        let f = Vector4::from_fn(|j, _| {
            if pattern >> j & 1 == 1 {
                f_sum_max / 4.0
            } else {
                f_sum_min / 4.0
            }
        });
        let w = effectiveness * f;
        lo = lo.inf(&w);
        hi = hi.sup(&w);
    }
    lo[0] = f_sum_min;
    hi[0] = f_sum_max;
    WrenchBounds { lo, hi }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReferenceKind {
    Hover {
        position: Vector3<f64>,
    },
    Circle {
        radius: f64,
        speed: f64,
        height: f64,
    },
    Line {
        start: Vector3<f64>,
        velocity: Vector3<f64>,
    },
    Figure8 {
        amplitude: f64,
        speed: f64,
        height: f64,
    },
}

impl ReferenceKind {
    pub fn validate(&self) -> Result<(), ApcError> {
        let ok = match *self {
            ReferenceKind::Hover { position } => position.iter().all(|v| v.is_finite()),
            ReferenceKind::Circle { radius, speed, height } => {
                radius > 0.0 && speed >= 0.0 && speed.is_finite() && height.is_finite()
            }
            ReferenceKind::Line { start, velocity } => start.iter().chain(velocity.iter()).all(|v| v.is_finite()),
            ReferenceKind::Figure8 {
                amplitude,
                speed,
                height,
            } => amplitude > 0.0 && speed >= 0.0 && speed.is_finite() && height.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(ApcError::InvalidSettings(format!(
                "invalid reference parameters {self:?}"
            )))
        }
    }

    /// Level, non-rotating reference state at time `t`.
    pub fn sample(&self, t: f64) -> RigidState {
        let (p, v) = match *self {
            ReferenceKind::Hover { position } => (position, Vector3::zeros()),
            ReferenceKind::Circle { radius, speed, height } => {
                let w = speed / radius;
                let (s, c) = (w * t).sin_cos();
                (
                    Vector3::new(radius * c, radius * s, height),
                    Vector3::new(-radius * w * s, radius * w * c, 0.0),
                )
            }
            ReferenceKind::Line { start, velocity } => (start + velocity * t, velocity),
            ReferenceKind::Figure8 {
                amplitude,
                speed,
                height,
            } => {
                // speed is the along-track speed at the crossing point
                let w = speed / (amplitude * 2f64.sqrt());
                let a = amplitude;
                (
                    Vector3::new(a * (w * t).sin(), 0.5 * a * (2.0 * w * t).sin(), height),
                    Vector3::new(a * w * (w * t).cos(), a * w * (2.0 * w * t).cos(), 0.0),
                )
            }
        };
        RigidState {
            p,
            q: nalgebra::Quaternion::identity(),
            v,
            w: Vector3::zeros(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceWindow {
    pub states: Vec<RigidState>,
    pub timestamps: Vec<f64>,
}

pub fn generate_reference(kind: &ReferenceKind, t0: f64, settings: &ApcSettings) -> ReferenceWindow {
    let timestamps: Vec<f64> = (0..=settings.horizon).map(|k| t0 + k as f64 * settings.dt).collect();
    ReferenceWindow {
        states: timestamps.iter().map(|&t| kind.sample(t)).collect(),
        timestamps,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApcSolution {
    pub u0: WrenchCommand,
    pub inputs: Vec<InputVector>,
    /// Nonlinear rollout cost of `inputs`.
    pub cost: f64,
    /// Cost after each accepted outer pass, starting with the initial guess.
    pub cost_history: Vec<f64>,
    pub iterations: usize,
    pub qp_iterations: usize,
    /// False when the pass limit stopped a still-improving iteration.
    pub converged: bool,
}

/// Quaternion error: component difference after sign-aligning q with the reference.
pub fn quaternion_error_sign(q: &Vector4<f64>, q_ref: &Vector4<f64>) -> f64 {
    if q.dot(q_ref) < 0.0 {
        -1.0
    } else {
        1.0
    }
}

fn state_error(x: &StateVector, r: &StateVector) -> (StateVector, f64) {
    let q: Vector4<f64> = x.fixed_rows::<4>(3).into();
    let qr: Vector4<f64> = r.fixed_rows::<4>(3).into();
    let s = quaternion_error_sign(&q, &qr);
    let mut e = x - r;
    e.fixed_rows_mut::<4>(3).copy_from(&(q * s - qr));
    (e, s)
}

struct Problem<'a> {
    x0: StateVector,
    refs: Vec<StateVector>,
    body: &'a BodyParams,
    q: StateVector,
    q_n: StateVector,
    r: Vector4<f64>,
    u_hover: InputVector,
    dt: f64,
    n: usize,
}

impl Problem<'_> {
    fn weight(&self, k: usize) -> &StateVector {
        if k == self.n {
            &self.q_n
        } else {
            &self.q
        }
    }

    fn cost(&self, u: &[InputVector]) -> f64 {
        let mut x = self.x0;
        let mut j = 0.0;
        for (k, uk) in u.iter().enumerate() {
            let du = uk - self.u_hover;
            j += du.component_mul(&du).dot(&self.r);
            x = rk4(&x, uk, self.body, self.dt);
            let (e, _) = state_error(&x, &self.refs[k + 1]);
            j += e.component_mul(&e).dot(self.weight(k + 1));
        }
        j
    }

    /// Gauss–Newton Hessian and exact gradient of the cost in the stacked inputs.
    fn condense(&self, u: &[InputVector]) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.n;
        let mut a = Vec::with_capacity(n);
        let mut b = Vec::with_capacity(n);
        let mut xs = Vec::with_capacity(n + 1);
        xs.push(self.x0);
        for uk in u {
            let (next, ak, bk) = rk4_with_jacobians(xs.last().unwrap(), uk, self.body, self.dt);
            a.push(ak);
            b.push(bk);
            xs.push(next);
        }
        let dim = n * INPUT_DIM;
        let mut h = DMatrix::zeros(dim, dim);
        let mut g = DVector::zeros(dim);

        // Adjoint for the gradient.
        let mut lambda = StateVector::zeros();
        for k in (0..n).rev() {
            let (e, s) = state_error(&xs[k + 1], &self.refs[k + 1]);
            let mut de = e.component_mul(self.weight(k + 1)) * 2.0;
            de.fixed_rows_mut::<4>(3).scale_mut(s);
            lambda += de;
            let gk = b[k].transpose() * lambda + (u[k] - self.u_hover).component_mul(&self.r) * 2.0;
            g.fixed_rows_mut::<INPUT_DIM>(k * INPUT_DIM).copy_from(&gk);
            lambda = a[k].transpose() * lambda;
        }

        // P_k = Q_k + A_kᵀ P_{k+1} A_k, then H_ij = 2 B_iᵀ Φ(j+1, i+1)ᵀ P_{j+1} B_j.
        let mut p = vec![StateMatrix::zeros(); n + 1];
        p[n] = StateMatrix::from_diagonal(&self.q_n);
        for k in (1..n).rev() {
            p[k] = StateMatrix::from_diagonal(&self.q) + a[k].transpose() * p[k + 1] * a[k];
        }
        let r2 = Matrix4::from_diagonal(&self.r) * 2.0;
        for j in 0..n {
            let mut v: InputMatrix = p[j + 1] * b[j];
            let hjj = b[j].transpose() * v * 2.0 + r2;
            h.fixed_view_mut::<INPUT_DIM, INPUT_DIM>(j * INPUT_DIM, j * INPUT_DIM)
                .copy_from(&hjj);
            for i in (0..j).rev() {
                v = a[i + 1].transpose() * v;
                let hij: SMatrix<f64, INPUT_DIM, INPUT_DIM> = b[i].transpose() * v * 2.0;
                h.fixed_view_mut::<INPUT_DIM, INPUT_DIM>(i * INPUT_DIM, j * INPUT_DIM)
                    .copy_from(&hij);
                h.fixed_view_mut::<INPUT_DIM, INPUT_DIM>(j * INPUT_DIM, i * INPUT_DIM)
                    .copy_from(&hij.transpose());
            }
        }
        (h, g)
    }
}

/// Builds the per-step solve inputs once so callers can inspect the condensed QP.
fn problem<'a>(
    x: &RigidState,
    reference: &ReferenceWindow,
    body: &'a BodyParams,
    weights: &ApcWeights,
    settings: &ApcSettings,
) -> Result<Problem<'a>, ApcError> {
    weights.validate()?;
    settings.validate()?;
    if reference.states.len() != settings.horizon + 1 {
        return Err(ApcError::InvalidSettings(format!(
            "reference window has {} samples, expected {}",
            reference.states.len(),
            settings.horizon + 1
        )));
    }
    if !x.is_finite() || reference.states.iter().any(|s| !s.is_finite()) {
        return Err(ApcError::NonFiniteState);
    }
    Ok(Problem {
        x0: x.to_vector(),
        refs: reference.states.iter().map(|s| s.to_vector()).collect(),
        body,
        q: weights.stage(),
        q_n: weights.terminal(),
        r: weights.input(body),
        u_hover: hover_command(body).to_vector(),
        dt: settings.dt,
        n: settings.horizon,
    })
}

/// Condensed Hessian and gradient at `inputs` (exposed for verification).
pub fn condensed_qp(
    x: &RigidState,
    reference: &ReferenceWindow,
    body: &BodyParams,
    weights: &ApcWeights,
    settings: &ApcSettings,
    inputs: &[InputVector],
) -> Result<(DMatrix<f64>, DVector<f64>, f64), ApcError> {
    let pr = problem(x, reference, body, weights, settings)?;
    let (h, g) = pr.condense(inputs);
    Ok((h, g, pr.cost(inputs)))
}

/// Nonlinear rollout cost of an input sequence.
pub fn rollout_cost(
    x: &RigidState,
    reference: &ReferenceWindow,
    body: &BodyParams,
    weights: &ApcWeights,
    settings: &ApcSettings,
    inputs: &[InputVector],
) -> Result<f64, ApcError> {
    Ok(problem(x, reference, body, weights, settings)?.cost(inputs))
}

pub fn solve_apc(
    x: &RigidState,
    reference: &ReferenceWindow,
    body: &BodyParams,
    weights: &ApcWeights,
    bounds: &WrenchBounds,
    settings: &ApcSettings,
    warm_start: Option<&[InputVector]>,
) -> Result<ApcSolution, ApcError> {
    let pr = problem(x, reference, body, weights, settings)?;
    let n = settings.horizon;
    let hover = bounds.clamp(&pr.u_hover);
    let mut u: Vec<InputVector> = (0..n)
        .map(|k| {
            warm_start
                .and_then(|w| w.get(k).or(w.last()))
                .map_or(hover, |uk| bounds.clamp(uk))
        })
        .collect();
    let mut cost = pr.cost(&u);
    if !cost.is_finite() {
        return Err(ApcError::NonFiniteState);
    }
    let mut cost_history = vec![cost];
    let mut qp_iterations = 0;
    let mut converged = false;
    let mut iterations = 0;

    let lo = DVector::from_fn(n * INPUT_DIM, |i, _| bounds.lo[i % INPUT_DIM]);
    let hi = DVector::from_fn(n * INPUT_DIM, |i, _| bounds.hi[i % INPUT_DIM]);
    while iterations < settings.max_iterations {
        iterations += 1;
        let (h, g) = pr.condense(&u);
        let flat = DVector::from_fn(n * INPUT_DIM, |i, _| u[i / INPUT_DIM][i % INPUT_DIM]);
        let qp = solve_box_qp(&h, &g, &(&lo - &flat), &(&hi - &flat), None, settings.qp_max_iterations)?;
        qp_iterations += qp.iterations;
        let step = qp.x;
        let predicted = g.dot(&step) + 0.5 * step.dot(&(&h * &step));

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..12 {
            let trial: Vec<InputVector> = (0..n)
                .map(|k| {
                    let d = step.fixed_rows::<INPUT_DIM>(k * INPUT_DIM) * alpha;
                    bounds.clamp(&(u[k] + d))
                })
                .collect();
            let c = pr.cost(&trial);
            if c < cost {
                accepted = Some((trial, c));
                break;
            }
            alpha *= 0.5;
        }
        let Some((trial, c)) = accepted else {
            converged = true;
            break;
        };
        let decrease = cost - c;
        u = trial;
        cost = c;
        cost_history.push(cost);
        if decrease <= settings.convergence_tol * (1.0 + cost) || -predicted <= settings.convergence_tol * (1.0 + cost)
        {
            converged = true;
            break;
        }
    }
    Ok(ApcSolution {
        u0: WrenchCommand::from_vector(&u[0]),
        inputs: u,
        cost,
        cost_history,
        iterations,
        qp_iterations,
        converged,
    })
}

/// Shifts a solution by one prediction step for warm starting.
pub fn shift_inputs(inputs: &[InputVector]) -> Vec<InputVector> {
    let mut out: Vec<InputVector> = inputs.iter().skip(1).copied().collect();
    if let Some(&last) = inputs.last() {
        out.push(last);
    }
    out
}
