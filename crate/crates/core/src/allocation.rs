//! Balanced control allocation: the most even rotor-force vector that
//! reproduces a virtual wrench within per-rotor bounds.
//!
//! With the thrust row fixing Σf, minimising the force variance is the same
//! as minimising ½‖f‖² subject to `G f = u` and the box. That problem is
//! solved through its four-dimensional concave dual,
//! `max_λ  λᵀu − Σ ψ_i((Gᵀλ)_i)`, whose maximiser gives `f = clamp(Gᵀλ)`.
//! A semismooth Newton iteration with an exact piecewise-linear line search
//! converges in a handful of steps and warm-starts naturally from the
//! previous multiplier.

use nalgebra::{DMatrix, DVector, Matrix4, Vector2, Vector3, Vector4};

use crate::dynamics::WrenchCommand;
use crate::geometry::MarsConfig;
use crate::virtual_quad::{mars_effectiveness_in_frame, planar_rotation};

/// Relative stopping tolerance on the wrench residual.
pub const ALLOC_TOL: f64 = 1e-12;
/// Bisection steps of the torque-scaling fallback.
pub const FALLBACK_BISECTIONS: usize = 40;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AllocationError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("effectiveness matrix must have rank 4")]
    RankDeficient,
    #[error("wrench is outside the feasible set; torque scaled by {:.4}", .0.diagnostics.torque_scale)]
    InfeasibleWrench(Box<Allocation>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationDiagnostics {
    /// G f − u.
    pub residual: Vector4<f64>,
    /// (1/m) Σ (f − mean)², N².
    pub variance: f64,
    pub iterations: usize,
    pub feasible: bool,
    /// 1 when the command was met; the fallback's β otherwise.
    pub torque_scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub f: DVector<f64>,
    pub diagnostics: AllocationDiagnostics,
}

enum DualOutcome {
    Solved { iterations: usize },
    Infeasible { iterations: usize },
}

/// Reusable allocator holding the effectiveness matrix, rotor bounds and the
/// warm-start multiplier.
#[derive(Debug, Clone)]
pub struct Allocator {
    g: DMatrix<f64>,
    lo: DVector<f64>,
    hi: DVector<f64>,
    lambda: Vector4<f64>,
    max_iterations: usize,
}

impl Allocator {
    pub fn new(g: DMatrix<f64>, lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, AllocationError> {
        let m = g.ncols();
        if g.nrows() != 4 || m < 4 {
            return Err(AllocationError::Dimension(format!("G is {}×{m}", g.nrows())));
        }
        if lo.len() != m || hi.len() != m {
            return Err(AllocationError::Dimension("bounds length".into()));
        }
        if lo
            .iter()
            .zip(&hi)
            .any(|(l, h)| l > h || !l.is_finite() || !h.is_finite())
        {
            return Err(AllocationError::Dimension("bounds must be finite with lo ≤ hi".into()));
        }
        let s = g.clone().svd(false, false).singular_values;
        let smax = s.max();
        if s.min() <= 1e-10 * smax.max(1.0) {
            return Err(AllocationError::RankDeficient);
        }
        Ok(Allocator {
            g,
            lo: DVector::from_vec(lo),
            hi: DVector::from_vec(hi),
            lambda: Vector4::zeros(),
            max_iterations: (50 * m / 4).max(50),
        })
    }

    /// Allocator for an assembly whose body frame is yawed by `theta`.
    pub fn for_config(config: &MarsConfig, theta: f64) -> Result<Self, AllocationError> {
        let (lo, hi) = config.rotor_bounds();
        Allocator::new(mars_effectiveness_in_frame(config, theta), lo, hi)
    }

    pub fn effectiveness(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn n_rotors(&self) -> usize {
        self.g.ncols()
    }

    pub fn reset_warm_start(&mut self) {
        self.lambda = Vector4::zeros();
    }

    fn forces(&self, lambda: &Vector4<f64>) -> DVector<f64> {
        let a = self.g.tr_mul(lambda);
        a.zip_zip_map(&self.lo, &self.hi, |v, l, h| v.clamp(l, h))
    }

    fn scale(&self, u: &Vector4<f64>) -> f64 {
        1.0 + u.amax() + self.hi.amax() * self.g.amax()
    }

    /// Maximises the dual from `lambda` in place.
    fn solve_dual(&self, u: &Vector4<f64>, lambda: &mut Vector4<f64>) -> DualOutcome {
        let tol = ALLOC_TOL * self.scale(u);
        let m = self.g.ncols();
        for it in 0..self.max_iterations {
            let a = self.g.tr_mul(lambda);
            let f = a.zip_zip_map(&self.lo, &self.hi, |v, l, h| v.clamp(l, h));
            let grad: Vector4<f64> = u - &self.g * &f;
            if grad.amax() <= tol {
                return DualOutcome::Solved { iterations: it };
            }
            // Generalised Hessian on the free rotors.
            let mut hess = Matrix4::zeros();
            for k in 0..m {
                if a[k] > self.lo[k] && a[k] < self.hi[k] {
                    let c = self.g.fixed_view::<4, 1>(0, k);
                    hess += c * c.transpose();
                }
            }
            let reg = 1e-12 * (1.0 + hess.amax());
            let p = match hess.cholesky() {
                Some(ch) => ch.solve(&grad),
                None => (hess + Matrix4::identity() * reg.max(1e-10))
                    .cholesky()
                    .map_or(grad, |ch| ch.solve(&grad)),
            };
            let b = self.g.tr_mul(&p);
            match self.line_search(u, &p, &a, &b) {
                Some(t) => *lambda += p * t,
                None => return DualOutcome::Infeasible { iterations: it + 1 },
            }
        }
        let f = self.forces(lambda);
        if (u - &self.g * &f).amax() <= 1e-8 * self.scale(u) {
            DualOutcome::Solved {
                iterations: self.max_iterations,
            }
        } else {
            DualOutcome::Infeasible {
                iterations: self.max_iterations,
            }
        }
    }

    /// Exact maximiser of the dual along `p`; `None` if the dual is unbounded
    /// along `p` (a certificate that `u` is infeasible).
    fn line_search(&self, u: &Vector4<f64>, p: &Vector4<f64>, a: &DVector<f64>, b: &DVector<f64>) -> Option<f64> {
        // φ'(t) = pᵀu − Σ b_i clamp(a_i + t b_i), non-increasing in t.
        let pu = p.dot(u);
        let m = a.len();
        let mut slope_at_inf = pu;
        // (t, ±b²): a rotor enters (+) or leaves (−) the free set at t.
        let mut events: Vec<(f64, f64)> = Vec::with_capacity(2 * m);
        let mut curvature = 0.0;
        for i in 0..m {
            let (l, h, bi) = (self.lo[i], self.hi[i], b[i]);
            let b2 = bi * bi;
            if bi > 0.0 {
                slope_at_inf -= bi * h;
                if a[i] < l {
                    events.push(((l - a[i]) / bi, b2));
                } else if a[i] < h {
                    curvature += b2;
                }
                if a[i] < h {
                    events.push(((h - a[i]) / bi, -b2));
                }
            } else if bi < 0.0 {
                slope_at_inf -= bi * l;
                if a[i] > h {
                    events.push(((h - a[i]) / bi, b2));
                } else if a[i] > l {
                    curvature += b2;
                }
                if a[i] > l {
                    events.push(((l - a[i]) / bi, -b2));
                }
            }
        }
        let tol = ALLOC_TOL * self.scale(u) * (1.0 + p.amax());
        if slope_at_inf > tol {
            return None;
        }
        events.sort_by(|x, y| x.0.total_cmp(&y.0));
        let mut phi = pu - (0..m).map(|i| b[i] * a[i].clamp(self.lo[i], self.hi[i])).sum::<f64>();
        let mut t = 0.0;
        for (te, change) in events {
            let dt = te - t;
            if curvature > 0.0 && phi - curvature * dt <= 0.0 {
                return Some(t + phi / curvature);
            }
            phi -= curvature * dt;
            t = te;
            curvature = (curvature + change).max(0.0);
        }
        if curvature > 0.0 {
            Some(t + phi.max(0.0) / curvature)
        } else {
            Some(t)
        }
    }

    fn finish(
        &self,
        u: &Vector4<f64>,
        lambda: &Vector4<f64>,
        iterations: usize,
        feasible: bool,
        beta: f64,
    ) -> Allocation {
        let f = self.forces(lambda);
        let residual = &self.g * &f - u;
        let m = f.len() as f64;
        let mean = f.sum() / m;
        let variance = f.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m;
        Allocation {
            f,
            diagnostics: AllocationDiagnostics {
                residual,
                variance,
                iterations,
                feasible,
                torque_scale: beta,
            },
        }
    }

    /// Allocates `u = (F, Mx, My, Mz)`.
    pub fn allocate(&mut self, u: &Vector4<f64>) -> Result<Allocation, AllocationError> {
        if u.iter().any(|v| !v.is_finite()) {
            return Err(AllocationError::Dimension("non-finite wrench".into()));
        }
        let mut lambda = self.lambda;
        match self.solve_dual(u, &mut lambda) {
            DualOutcome::Solved { iterations } => {
                self.lambda = lambda;
                Ok(self.finish(u, &lambda, iterations, true, 1.0))
            }
            DualOutcome::Infeasible { iterations } => {
                let fallback = self.fallback(u, iterations);
                Err(AllocationError::InfeasibleWrench(Box::new(fallback)))
            }
        }
    }

    /// Keeps thrust (clamped into range) and scales the torque by the largest
    /// feasible β found by bisection.
    fn fallback(&mut self, u: &Vector4<f64>, mut iterations: usize) -> Allocation {
        let f_lo = self.lo.sum();
        let f_hi = self.hi.sum();
        let thrust = u[0].clamp(f_lo, f_hi);
        let target = |beta: f64| Vector4::new(thrust, beta * u[1], beta * u[2], beta * u[3]);
        let mut best: Option<(f64, Vector4<f64>)> = None;
        let mut lambda = self.lambda;
        if let DualOutcome::Solved { iterations: k } = self.solve_dual(&target(0.0), &mut lambda) {
            iterations += k;
            best = Some((0.0, lambda));
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..FALLBACK_BISECTIONS {
                let mid = 0.5 * (lo + hi);
                let mut trial = lambda;
                match self.solve_dual(&target(mid), &mut trial) {
                    DualOutcome::Solved { iterations: k } => {
                        iterations += k;
                        lo = mid;
                        lambda = trial;
                        best = Some((mid, trial));
                    }
                    DualOutcome::Infeasible { iterations: k } => {
                        iterations += k;
                        hi = mid;
                    }
                }
            }
        }
        match best {
            Some((beta, lambda)) => {
                self.lambda = lambda;
                let mut a = self.finish(&target(beta), &lambda, iterations, false, beta);
                a.diagnostics.residual = &self.g * &a.f - u;
                a
            }
            None => {
                // Not even a torque-free wrench fits; report the last dual iterate.
                let mut a = self.finish(&target(0.0), &lambda, iterations, false, 0.0);
                a.diagnostics.residual = &self.g * &a.f - u;
                a
            }
        }
    }
}

/// One-shot allocation without warm start.
pub fn allocate(u: &WrenchCommand, g: &DMatrix<f64>, lo: &[f64], hi: &[f64]) -> Result<Allocation, AllocationError> {
    Allocator::new(g.clone(), lo.to_vec(), hi.to_vec())?.allocate(&u.to_vector())
}

/// Thrust and torques of each unit about its own centre, in the structure frame.
pub fn per_unit_commands(f: &DVector<f64>, config: &MarsConfig) -> Vec<WrenchCommand> {
    config
        .units()
        .iter()
        .enumerate()
        .map(|(i, u)| {
            let mut t = 0.0;
            let mut m = Vector3::zeros();
            for (j, r) in u.rotors.iter().enumerate() {
                let fk = f[4 * i + j];
                t += fk;
                m += Vector3::new(-r.offset.y, r.offset.x, f64::from(r.spin_sign) * r.c_z) * fk;
            }
            WrenchCommand::new(t, m)
        })
        .collect()
}

/// Recombines per-unit commands into the assembly wrench about the centroid,
/// expressed in the body frame yawed by `theta`.
pub fn recompose(units: &[WrenchCommand], config: &MarsConfig, theta: f64) -> WrenchCommand {
    let rot = planar_rotation(theta);
    let c = config.centroid();
    let mut total = WrenchCommand::new(0.0, Vector3::zeros());
    for (cmd, u) in units.iter().zip(config.units()) {
        let d = rot * Vector2::new(u.position.x - c.x, u.position.y - c.y);
        let local = rot * Vector2::new(cmd.m.x, cmd.m.y);
        total.f += cmd.f;
        total.m += Vector3::new(local.x - d.y * cmd.f, local.y + d.x * cmd.f, cmd.m.z);
    }
    total
}
