//! The virtual quadrotor shared by both abstractions, and the effectiveness
//! matrices that map rotor forces to (thrust, roll, pitch, yaw).

use nalgebra::{DMatrix, Matrix2, Matrix3, Matrix4, Rotation3, Vector2, Vector3};

use crate::geometry::MarsConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AbstractionKind {
    EqualArm,
    UnequalArm,
}

/// Single four-rotor stand-in for a whole assembly.
///
/// Rotor positions are relative to the centroid and expressed in the virtual
/// body frame, which is the structure frame yawed so that the assembly appears
/// rotated by `yaw` about the centroid. Rotor `j` sits in the quadrant
/// (+,+), (−,−), (+,−), (−,+) for j = 1..4.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualQuadrotor {
    pub kind: AbstractionKind,
    pub centroid: Vector3<f64>,
    pub yaw: f64,
    pub rotors: [Vector2<f64>; 4],
    pub c_vz: f64,
    pub effectiveness: Matrix4<f64>,
    pub mass: f64,
    /// Inertia about the centroid in the virtual body frame.
    pub inertia: Matrix3<f64>,
    /// Σ f_min and Σ f_max of the physical rotors.
    pub f_sum_min: f64,
    pub f_sum_max: f64,
}

/// Virtual yaw-torque signs of rotors 1..4.
pub const VIRTUAL_SPIN: [f64; 4] = [-1.0, -1.0, 1.0, 1.0];

/// Quadrant signs (x, y) of virtual rotors 1..4.
pub const QUADRANTS: [(f64, f64); 4] = [(1.0, 1.0), (-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0)];

/// G_V from centroid-relative rotor positions and the yaw coefficient.
pub fn virtual_effectiveness(rotors: &[Vector2<f64>; 4], c_vz: f64) -> Matrix4<f64> {
    Matrix4::from_fn(|r, j| match r {
        0 => 1.0,
        1 => -rotors[j].y,
        2 => rotors[j].x,
        _ => VIRTUAL_SPIN[j] * c_vz,
    })
}

/// Planar rotation applied to structure-frame lever arms when the assembly is
/// yawed by `theta` about its centroid.
pub fn planar_rotation(theta: f64) -> Matrix2<f64> {
    let (s, c) = theta.sin_cos();
    Matrix2::new(c, -s, s, c)
}

/// Rotor lever arms about the centroid after yawing the assembly by `theta`.
pub fn rotated_lever_arms(config: &MarsConfig, theta: f64) -> Vec<Vector2<f64>> {
    let rot = planar_rotation(theta);
    config.rotor_lever_arms().into_iter().map(|d| rot * d).collect()
}

/// 4 × 4n assembly effectiveness matrix G_M with lever arms about the
/// centroid, expressed in a frame yawed by `theta`.
pub fn mars_effectiveness_in_frame(config: &MarsConfig, theta: f64) -> DMatrix<f64> {
    let arms = rotated_lever_arms(config, theta);
    let specs: Vec<_> = config.rotors().map(|r| r.spec).collect();
    DMatrix::from_fn(4, arms.len(), |r, k| match r {
        0 => 1.0,
        1 => -arms[k].y,
        2 => arms[k].x,
        _ => f64::from(specs[k].spin_sign) * specs[k].c_z,
    })
}

/// 4 × 4n assembly effectiveness matrix G_M in the structure frame.
pub fn mars_effectiveness(config: &MarsConfig) -> DMatrix<f64> {
    mars_effectiveness_in_frame(config, 0.0)
}

/// Composite inertia about the centroid, rotated into a frame yawed by `theta`.
pub fn inertia_in_frame(config: &MarsConfig, theta: f64) -> Matrix3<f64> {
    let rot = Rotation3::from_axis_angle(&Vector3::z_axis(), theta);
    let i = config.composite_inertia(&config.centroid());
    rot.matrix() * i * rot.matrix().transpose()
}

impl VirtualQuadrotor {
    /// G_M expressed in this quadrotor's body frame.
    pub fn mars_effectiveness(&self, config: &MarsConfig) -> DMatrix<f64> {
        mars_effectiveness_in_frame(config, self.yaw)
    }

    /// Rotor positions in the structure frame (absolute, xy).
    pub fn rotors_in_structure_frame(&self) -> [Vector2<f64>; 4] {
        let back = planar_rotation(-self.yaw);
        let c = Vector2::new(self.centroid.x, self.centroid.y);
        self.rotors.map(|r| c + back * r)
    }

    /// Singular values of G_V, descending.
    pub fn effectiveness_singular_values(&self) -> Vec<f64> {
        let mut s: Vec<f64> = self.effectiveness.singular_values().iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_grid_config, UnitSpec};

    #[test]
    fn single_unit_at_origin_matches_own_effectiveness() {
        let t = UnitSpec::reference_unit();
        let cfg = build_grid_config(1, 1, 0.65, &t).unwrap();
        let g = mars_effectiveness(&cfg);
        let rotors = t.rotors.map(|r| Vector2::new(r.offset.x, r.offset.y));
        let own = virtual_effectiveness(&rotors, 0.06);
        assert!((g - DMatrix::from_iterator(4, 4, own.iter().copied())).amax() < 1e-15);
    }

    #[test]
    fn translation_leaves_mars_effectiveness_unchanged() {
        let t = UnitSpec::reference_unit();
        let cfg = MarsConfig::from_cells(&[(0, 0), (1, 0), (0, 1)], 0.65, &t).unwrap();
        let moved = cfg.translated(Vector3::new(3.0, -7.5, 0.25));
        assert!((mars_effectiveness(&cfg) - mars_effectiveness(&moved)).amax() < 1e-12);
    }

    #[test]
    fn two_unit_row_entries_by_rotor() {
        let t = UnitSpec::reference_unit();
        let cfg = build_grid_config(1, 2, 0.65, &t).unwrap();
        let g = mars_effectiveness(&cfg);
        // independent recomputation from unit position + rotor offset
        for (i, u) in cfg.units().iter().enumerate() {
            for (j, r) in u.rotors.iter().enumerate() {
                let k = 4 * i + j;
                let x = u.position.x + r.offset.x;
                let y = u.position.y + r.offset.y;
                assert_eq!(g[(0, k)], 1.0);
                assert!((g[(1, k)] + y).abs() < 1e-15);
                assert!((g[(2, k)] - x).abs() < 1e-15);
                assert_eq!(g[(3, k)], f64::from(r.spin_sign) * 0.06);
            }
        }
        // hand-checked: unit 2, rotor 1 at (0.325 + 0.1625, 0.1625)
        assert!((g[(2, 4)] - 0.4875).abs() < 1e-15);
        assert!((g[(1, 4)] + 0.1625).abs() < 1e-15);
    }
}
