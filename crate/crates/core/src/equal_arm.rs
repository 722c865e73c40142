//! Equal-arm (×-shaped) virtual quadrotor: optimal yaw offset, virtual rotor
//! positions reproducing the assembly's grouped torques, yaw coefficient and
//! the 4×4 effectiveness matrix.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Matrix4, Vector2, Vector3};

use crate::geometry::MarsConfig;
use crate::virtual_quad::{
    inertia_in_frame, planar_rotation, virtual_effectiveness, AbstractionKind, VirtualQuadrotor,
};

/// Number of uniform samples over [0, π) before refinement.
pub const YAW_GRID_POINTS: usize = 3600;
/// Golden-section refinement stops once the bracket is this narrow, radians.
pub const YAW_REFINE_TOL: f64 = 1e-10;
/// Objective values within this (relative) margin of the maximum are ties.
pub const YAW_TIE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EqualArmError {
    #[error("torque balance weights must be non-negative with a positive sum")]
    InvalidWeights,
    #[error("degenerate configuration: grouped torque `{group}` is zero")]
    DegenerateConfig { group: &'static str },
}

/// c_x, c_y trade roll against pitch authority in the yaw search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TorqueBalanceWeights {
    pub c_x: f64,
    pub c_y: f64,
}

impl TorqueBalanceWeights {
    pub fn new(c_x: f64, c_y: f64) -> Result<Self, EqualArmError> {
        if c_x >= 0.0 && c_y >= 0.0 && c_x + c_y > 0.0 && (c_x + c_y).is_finite() {
            Ok(Self { c_x, c_y })
        } else {
            Err(EqualArmError::InvalidWeights)
        }
    }
}

impl Default for TorqueBalanceWeights {
    fn default() -> Self {
        Self { c_x: 1.0, c_y: 1.0 }
    }
}

/// Sums of the positive and negative per-rotor roll (x) and pitch (y) torques.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GroupedTorques {
    pub x_pos: f64,
    pub x_neg: f64,
    pub y_pos: f64,
    pub y_neg: f64,
}

impl GroupedTorques {
    /// Groups per-rotor `(τx, τy)` torques by sign. Zero torques join no group.
    pub fn from_torques(torques: impl IntoIterator<Item = Vector2<f64>>) -> Self {
        let mut g = GroupedTorques::default();
        for t in torques {
            if t.x > 0.0 {
                g.x_pos += t.x;
            } else if t.x < 0.0 {
                g.x_neg += t.x;
            }
            if t.y > 0.0 {
                g.y_pos += t.y;
            } else if t.y < 0.0 {
                g.y_neg += t.y;
            }
        }
        g
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x_pos, self.x_neg, self.y_pos, self.y_neg]
    }
}

/// Per-rotor (τx, τy) = (−d_y, d_x)·f for centroid-relative arms d.
pub fn rotor_torque(arm: &Vector2<f64>, force: f64) -> Vector2<f64> {
    Vector2::new(-arm.y, arm.x) * force
}

/// Grouped torques of the assembly yawed by `theta`, every rotor producing `f = 1`.
pub fn assembly_grouped_torques(config: &MarsConfig, theta: f64) -> GroupedTorques {
    let rot = planar_rotation(theta);
    GroupedTorques::from_torques(config.rotor_lever_arms().iter().map(|d| rotor_torque(&(rot * d), 1.0)))
}

fn objective_from_arms(arms: &[Vector2<f64>], theta: f64, w: &TorqueBalanceWeights) -> f64 {
    let rot = planar_rotation(theta);
    let g = GroupedTorques::from_torques(arms.iter().map(|d| rotor_torque(&(rot * d), 1.0)));
    w.c_x * (g.x_pos - g.x_neg) + w.c_y * (g.y_pos - g.y_neg)
}

/// c_x(τx+ − τx−) + c_y(τy+ − τy−) with all rotor forces set to one.
pub fn yaw_objective(config: &MarsConfig, theta: f64, weights: &TorqueBalanceWeights) -> f64 {
    objective_from_arms(&config.rotor_lever_arms(), theta, weights)
}

/// Yaw offset in [0, π) maximising [`yaw_objective`]; the smallest one on ties.
pub fn optimal_yaw(config: &MarsConfig, weights: &TorqueBalanceWeights) -> f64 {
    let arms = config.rotor_lever_arms();
    let f = |theta: f64| objective_from_arms(&arms, theta, weights);
    let step = PI / YAW_GRID_POINTS as f64;
    let values: Vec<f64> = (0..YAW_GRID_POINTS).map(|k| f(k as f64 * step)).collect();
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tie = YAW_TIE_TOL * best.abs().max(1.0);
    let k = values.iter().position(|&v| v >= best - tie).expect("grid is non-empty");
    let theta_grid = k as f64 * step;

    let theta_ref = golden_section_max(&f, theta_grid - step, theta_grid + step, YAW_REFINE_TOL);
    let v_ref = f(theta_ref);
    if v_ref > values[k] + tie {
        theta_ref.rem_euclid(PI)
    } else {
        theta_grid
    }
}

fn golden_section_max(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Centroid-relative virtual rotor positions (virtual body frame) that
/// reproduce the assembly's grouped torques at yaw `theta` with unit forces.
///
/// The four grouped-torque equations are closed with a symmetric ×
/// parametrisation: rotors 1, 4 share the +y arm, rotors 2, 3 the −y arm,
/// rotors 1, 3 the +x arm and rotors 2, 4 the −x arm.
pub fn virtual_rotor_positions(config: &MarsConfig, theta: f64) -> Result<[Vector2<f64>; 4], EqualArmError> {
    let g = assembly_grouped_torques(config, theta);
    let quarter = config.n_rotors() as f64 / 4.0;
    let scale = g.as_array().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-12 * scale.max(1e-300);
    for (value, group) in g.as_array().iter().zip(["x+", "x-", "y+", "y-"]) {
        if value.abs() <= tol {
            return Err(EqualArmError::DegenerateConfig { group });
        }
    }
    // x+ = (−y2 − y3)·f_sum/4 with y2 = y3 = −a_neg, etc.
    let a_neg = g.x_pos / (2.0 * quarter);
    let a_pos = -g.x_neg / (2.0 * quarter);
    let b_pos = g.y_pos / (2.0 * quarter);
    let b_neg = -g.y_neg / (2.0 * quarter);
    Ok([
        Vector2::new(b_pos, a_pos),
        Vector2::new(-b_neg, -a_neg),
        Vector2::new(b_pos, -a_neg),
        Vector2::new(-b_neg, a_pos),
    ])
}

/// τ_z / f_sum for the given per-rotor forces (unit-major).
pub fn yaw_torque_coefficient_with_forces(config: &MarsConfig, forces: &[f64]) -> f64 {
    let (tau, sum) = config.rotors().zip(forces).fold((0.0, 0.0), |(t, s), (r, &f)| {
        (t + (f64::from(r.spec.spin_sign) * r.spec.c_z).abs() * f, s + f)
    });
    tau / sum
}

/// c_Vz with every rotor force set to one.
pub fn yaw_torque_coefficient(config: &MarsConfig) -> f64 {
    yaw_torque_coefficient_with_forces(config, &vec![1.0; config.n_rotors()])
}

#[derive(Debug, Clone, PartialEq)]
pub struct EqualArmAbstraction {
    pub centroid: Vector3<f64>,
    pub yaw_opt: f64,
    pub virtual_rotors: [Vector2<f64>; 4],
    pub c_vz: f64,
    pub effectiveness: Matrix4<f64>,
    pub mass: f64,
    /// About the centroid, in the virtual body frame.
    pub inertia: Matrix3<f64>,
    pub f_sum_min: f64,
    pub f_sum_max: f64,
}

pub fn equal_arm_abstraction(
    config: &MarsConfig,
    weights: &TorqueBalanceWeights,
) -> Result<EqualArmAbstraction, EqualArmError> {
    let yaw_opt = optimal_yaw(config, weights);
    let virtual_rotors = virtual_rotor_positions(config, yaw_opt)?;
    let c_vz = yaw_torque_coefficient(config);
    let (f_sum_min, f_sum_max) = config.thrust_sum_range();
    Ok(EqualArmAbstraction {
        centroid: config.centroid(),
        yaw_opt,
        virtual_rotors,
        c_vz,
        effectiveness: virtual_effectiveness(&virtual_rotors, c_vz),
        mass: config.total_mass(),
        inertia: inertia_in_frame(config, yaw_opt),
        f_sum_min,
        f_sum_max,
    })
}

impl EqualArmAbstraction {
    pub fn to_virtual(&self) -> VirtualQuadrotor {
        VirtualQuadrotor {
            kind: AbstractionKind::EqualArm,
            centroid: self.centroid,
            yaw: self.yaw_opt,
            rotors: self.virtual_rotors,
            c_vz: self.c_vz,
            effectiveness: self.effectiveness,
            mass: self.mass,
            inertia: self.inertia,
            f_sum_min: self.f_sum_min,
            f_sum_max: self.f_sum_max,
        }
    }

    /// Grouped torques of the virtual rotors when each carries f_sum/4 with
    /// `f_sum` = number of physical rotors (unit forces).
    pub fn virtual_grouped_torques(&self, f_sum: f64) -> GroupedTorques {
        GroupedTorques::from_torques(self.virtual_rotors.iter().map(|p| rotor_torque(p, f_sum / 4.0)))
    }
}
