//! Rigid-body quadrotor dynamics in quaternion form, RK4 integration and the
//! analytic Jacobians used by the predictive controller.
//!
//! Quaternions are Hamilton, scalar-first, rotating body vectors into the
//! inertial frame. The flat state layout is `[p(3), q(w,x,y,z), v(3), ω(3)]`.

use nalgebra::{Matrix3, Matrix4x3, Quaternion, SMatrix, SVector, Vector3, Vector4};

pub const STATE_DIM: usize = 13;
pub const INPUT_DIM: usize = 4;

pub type StateVector = SVector<f64, STATE_DIM>;
pub type InputVector = SVector<f64, INPUT_DIM>;
pub type StateMatrix = SMatrix<f64, STATE_DIM, STATE_DIM>;
pub type InputMatrix = SMatrix<f64, STATE_DIM, INPUT_DIM>;

/// Default plant step, 500 Hz.
pub const DEFAULT_DT: f64 = 0.002;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DynamicsError {
    #[error("invalid body parameters: {0}")]
    InvalidBody(&'static str),
    #[error("integration step {0} outside (0, 0.05] s")]
    InvalidStep(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidState {
    pub p: Vector3<f64>,
    /// Body-to-inertial, (w, x, y, z) = (q.w, q.i, q.j, q.k).
    pub q: Quaternion<f64>,
    pub v: Vector3<f64>,
    /// Body rates.
    pub w: Vector3<f64>,
}

impl RigidState {
    /// At rest at `p`, level.
    pub fn at_rest(p: Vector3<f64>) -> Self {
        RigidState {
            p,
            q: Quaternion::identity(),
            v: Vector3::zeros(),
            w: Vector3::zeros(),
        }
    }

    pub fn to_vector(&self) -> StateVector {
        let mut x = StateVector::zeros();
        x.fixed_rows_mut::<3>(0).copy_from(&self.p);
        x[3] = self.q.w;
        x[4] = self.q.i;
        x[5] = self.q.j;
        x[6] = self.q.k;
        x.fixed_rows_mut::<3>(7).copy_from(&self.v);
        x.fixed_rows_mut::<3>(10).copy_from(&self.w);
        x
    }

    pub fn from_vector(x: &StateVector) -> Self {
        RigidState {
            p: x.fixed_rows::<3>(0).into(),
            q: Quaternion::new(x[3], x[4], x[5], x[6]),
            v: x.fixed_rows::<3>(7).into(),
            w: x.fixed_rows::<3>(10).into(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|v| v.is_finite())
    }

    /// Rotates a body vector into the inertial frame.
    pub fn rotate(&self, body: &Vector3<f64>) -> Vector3<f64> {
        let r = rotation_matrix(&self.q);
        r * body
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WrenchCommand {
    /// Collective thrust along body z, N.
    pub f: f64,
    /// Body torques, N·m.
    pub m: Vector3<f64>,
}

impl WrenchCommand {
    pub fn new(f: f64, m: Vector3<f64>) -> Self {
        WrenchCommand { f, m }
    }

    pub fn to_vector(&self) -> InputVector {
        InputVector::new(self.f, self.m.x, self.m.y, self.m.z)
    }

    pub fn from_vector(u: &InputVector) -> Self {
        WrenchCommand {
            f: u[0],
            m: Vector3::new(u[1], u[2], u[3]),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.f.is_finite() && self.m.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyParams {
    pub mass: f64,
    pub inertia: Matrix3<f64>,
    pub gravity: f64,
    inertia_inv: Matrix3<f64>,
}

impl BodyParams {
    pub fn new(mass: f64, inertia: Matrix3<f64>, gravity: f64) -> Result<Self, DynamicsError> {
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(DynamicsError::InvalidBody("mass must be positive"));
        }
        let sym = (inertia + inertia.transpose()) * 0.5;
        if (inertia - sym).amax() > 1e-12 * inertia.amax().max(1.0) || sym.cholesky().is_none() {
            return Err(DynamicsError::InvalidBody(
                "inertia must be symmetric positive definite",
            ));
        }
        if !gravity.is_finite() {
            return Err(DynamicsError::InvalidBody("gravity must be finite"));
        }
        let inertia_inv = sym
            .try_inverse()
            .ok_or(DynamicsError::InvalidBody("singular inertia"))?;
        Ok(BodyParams {
            mass,
            inertia: sym,
            gravity,
            inertia_inv,
        })
    }

    pub fn inertia_inv(&self) -> &Matrix3<f64> {
        &self.inertia_inv
    }
}

pub fn hover_command(b: &BodyParams) -> WrenchCommand {
    WrenchCommand::new(b.mass * b.gravity, Vector3::zeros())
}

/// Body-to-inertial rotation matrix of a unit quaternion.
pub fn rotation_matrix(q: &Quaternion<f64>) -> Matrix3<f64> {
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    Matrix3::new(
        w * w + x * x - y * y - z * z,
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        w * w - x * x + y * y - z * z,
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        w * w - x * x - y * y + z * z,
    )
}

/// R(q)·e3 in quadratic form.
fn body_z(q: &Vector4<f64>) -> Vector3<f64> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    Vector3::new(
        2.0 * (x * z + w * y),
        2.0 * (y * z - w * x),
        w * w - x * x - y * y + z * z,
    )
}

fn skew(a: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0)
}

/// ∂(q ∘ [0, ω]) / ∂ω.
fn xi(q: &Vector4<f64>) -> Matrix4x3<f64> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    Matrix4x3::new(-x, -y, -z, w, -z, y, z, w, -x, -y, x, w)
}

/// ∂(q ∘ [0, ω]) / ∂q.
fn omega(w: &Vector3<f64>) -> nalgebra::Matrix4<f64> {
    let (a, b, c) = (w.x, w.y, w.z);
    nalgebra::Matrix4::new(
        0.0, -a, -b, -c, //
        a, 0.0, c, -b, //
        b, -c, 0.0, a, //
        c, b, -a, 0.0,
    )
}

/// Flat-state derivative.
pub fn derivative(x: &StateVector, u: &InputVector, b: &BodyParams) -> StateVector {
    let q: Vector4<f64> = x.fixed_rows::<4>(3).into();
    let v: Vector3<f64> = x.fixed_rows::<3>(7).into();
    let w: Vector3<f64> = x.fixed_rows::<3>(10).into();
    let m = Vector3::new(u[1], u[2], u[3]);

    let q_dot = xi(&q) * w * 0.5;
    let v_dot = body_z(&q) * (u[0] / b.mass) - Vector3::new(0.0, 0.0, b.gravity);
    let w_dot = b.inertia_inv * (m - w.cross(&(b.inertia * w)));

    let mut d = StateVector::zeros();
    d.fixed_rows_mut::<3>(0).copy_from(&v);
    d.fixed_rows_mut::<4>(3).copy_from(&q_dot);
    d.fixed_rows_mut::<3>(7).copy_from(&v_dot);
    d.fixed_rows_mut::<3>(10).copy_from(&w_dot);
    d
}

pub fn state_derivative(s: &RigidState, u: &WrenchCommand, b: &BodyParams) -> StateVector {
    derivative(&s.to_vector(), &u.to_vector(), b)
}

/// Continuous-time Jacobians (∂f/∂x, ∂f/∂u).
pub fn derivative_jacobians(x: &StateVector, u: &InputVector, b: &BodyParams) -> (StateMatrix, InputMatrix) {
    let q: Vector4<f64> = x.fixed_rows::<4>(3).into();
    let w: Vector3<f64> = x.fixed_rows::<3>(10).into();
    let (qw, qx, qy, qz) = (q[0], q[1], q[2], q[3]);
    let mut a = StateMatrix::zeros();
    let mut bu = InputMatrix::zeros();

    a.fixed_view_mut::<3, 3>(0, 7).copy_from(&Matrix3::identity());
    a.fixed_view_mut::<4, 4>(3, 3).copy_from(&(omega(&w) * 0.5));
    a.fixed_view_mut::<4, 3>(3, 10).copy_from(&(xi(&q) * 0.5));

    let s = u[0] / b.mass;
    let dz = SMatrix::<f64, 3, 4>::new(
        2.0 * qy,
        2.0 * qz,
        2.0 * qw,
        2.0 * qx, //
        -2.0 * qx,
        -2.0 * qw,
        2.0 * qz,
        2.0 * qy, //
        2.0 * qw,
        -2.0 * qx,
        -2.0 * qy,
        2.0 * qz,
    );
    a.fixed_view_mut::<3, 4>(7, 3).copy_from(&(dz * s));
    let iw = b.inertia * w;
    a.fixed_view_mut::<3, 3>(10, 10)
        .copy_from(&(-(b.inertia_inv * (skew(&w) * b.inertia - skew(&iw)))));

    bu.fixed_view_mut::<3, 1>(7, 0).copy_from(&(body_z(&q) / b.mass));
    bu.fixed_view_mut::<3, 3>(10, 1).copy_from(&b.inertia_inv);
    (a, bu)
}

fn normalise_quaternion(x: &mut StateVector) {
    let n = x.fixed_rows::<4>(3).norm();
    x.fixed_rows_mut::<4>(3).unscale_mut(n);
}

/// One RK4 step of the flat state with quaternion renormalisation.
pub fn rk4(x: &StateVector, u: &InputVector, b: &BodyParams, dt: f64) -> StateVector {
    let k1 = derivative(x, u, b);
    let k2 = derivative(&(x + k1 * (dt / 2.0)), u, b);
    let k3 = derivative(&(x + k2 * (dt / 2.0)), u, b);
    let k4 = derivative(&(x + k3 * dt), u, b);
    let mut next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    normalise_quaternion(&mut next);
    next
}

/// [`rk4`] together with its exact Jacobians with respect to state and input.
pub fn rk4_with_jacobians(
    x: &StateVector,
    u: &InputVector,
    b: &BodyParams,
    dt: f64,
) -> (StateVector, StateMatrix, InputMatrix) {
    let h = dt / 2.0;
    let eye = StateMatrix::identity();

    let k1 = derivative(x, u, b);
    let (a1, b1) = derivative_jacobians(x, u, b);
    let x2 = x + k1 * h;
    let k2 = derivative(&x2, u, b);
    let (a2, b2) = derivative_jacobians(&x2, u, b);
    let dk2x = a2 * (eye + a1 * h);
    let dk2u = a2 * (b1 * h) + b2;
    let x3 = x + k2 * h;
    let k3 = derivative(&x3, u, b);
    let (a3, b3) = derivative_jacobians(&x3, u, b);
    let dk3x = a3 * (eye + dk2x * h);
    let dk3u = a3 * (dk2u * h) + b3;
    let x4 = x + k3 * dt;
    let k4 = derivative(&x4, u, b);
    let (a4, b4) = derivative_jacobians(&x4, u, b);
    let dk4x = a4 * (eye + dk3x * dt);
    let dk4u = a4 * (dk3u * dt) + b4;

    let raw = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    let mut ax = eye + (a1 + dk2x * 2.0 + dk3x * 2.0 + dk4x) * (dt / 6.0);
    let mut bx = (b1 + dk2u * 2.0 + dk3u * 2.0 + dk4u) * (dt / 6.0);

    // Chain through q ↦ q/‖q‖.
    let q: Vector4<f64> = raw.fixed_rows::<4>(3).into();
    let n = q.norm();
    let qh = q / n;
    let dn = (nalgebra::Matrix4::identity() - qh * qh.transpose()) / n;
    let qa = dn * ax.fixed_rows::<4>(3);
    ax.fixed_rows_mut::<4>(3).copy_from(&qa);
    let qb = dn * bx.fixed_rows::<4>(3);
    bx.fixed_rows_mut::<4>(3).copy_from(&qb);

    let mut next = raw;
    next.fixed_rows_mut::<4>(3).copy_from(&qh);
    (next, ax, bx)
}

pub fn step(s: &RigidState, u: &WrenchCommand, b: &BodyParams, dt: f64) -> Result<RigidState, DynamicsError> {
    if !(dt > 0.0 && dt <= 0.05) {
        return Err(DynamicsError::InvalidStep(dt));
    }
    Ok(RigidState::from_vector(&rk4(&s.to_vector(), &u.to_vector(), b, dt)))
}

/// Inertial-frame angular momentum R(q)·Iω.
pub fn angular_momentum(s: &RigidState, b: &BodyParams) -> Vector3<f64> {
    s.rotate(&(b.inertia * s.w))
}

pub fn rotational_energy(s: &RigidState, b: &BodyParams) -> f64 {
    0.5 * s.w.dot(&(b.inertia * s.w))
}
