//! Unequal-arm abstraction: a virtual quadrotor whose thrust/torque vertices
//! are realisable by the physical assembly.
//!
//! The virtual rotors keep the × quadrant layout but each arm coordinate is
//! free. The arm magnitudes and the containment certificate are solved
//! jointly as one LP that maximises total arm length (equivalently the
//! virtual torque authority at full thrust).
//!
//! Two containment models are available:
//! * [`Containment::RotorLevel`] — each virtual vertex must equal `G_M f` for
//!   some rotor force vector inside the per-rotor box. This is the exact
//!   feasible wrench set without enumerating its `2^{4n}` vertices.
//! * [`Containment::UnitLevel`] — each virtual vertex must be a convex
//!   combination of the `2^n` per-unit min/max totals acting at the unit
//!   centres. Cheaper, but it discards intra-unit lever arms, so e.g. a single
//!   unit collapses to a zero-arm quadrotor.
//!
//! Only thrust, roll and pitch are matched: the reduced yaw row is identically
//! zero and the yaw coefficient is fixed separately from `f̄`.

use nalgebra::{DMatrix, Matrix4, Vector2, Vector3};

use crate::equal_arm::{rotor_torque, yaw_torque_coefficient_with_forces, GroupedTorques};
use crate::geometry::MarsConfig;
use crate::lp::{LinearProgram, LpError};
use crate::virtual_quad::{inertia_in_frame, virtual_effectiveness, AbstractionKind, VirtualQuadrotor, QUADRANTS};

pub use crate::virtual_quad::mars_effectiveness;

/// Largest assembly accepted by [`reduced_vertex_set`] and the abstraction.
pub const MAX_UNITS: usize = 12;

/// Number of virtual min/max vertex patterns.
pub const VIRTUAL_VERTICES: usize = 16;

const WRENCH_AXES: [&str; 3] = ["thrust", "roll torque", "pitch torque"];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum UnequalArmError {
    #[error("{n} units exceed the supported maximum of {max}")]
    TooManyUnits { n: usize, max: usize },
    #[error("no containing virtual quadrotor exists: {component} cannot be matched")]
    Infeasible { component: &'static str },
    #[error("containment LP failed: {0}")]
    Solver(#[from] LpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Containment {
    #[default]
    RotorLevel,
    UnitLevel,
}

/// Per-unit min/max totals and the reduced unit-level effectiveness.
#[derive(Debug, Clone, PartialEq)]
pub struct WrenchVertexSet {
    /// 4 × n, lever arms of unit centres about the centroid, zero yaw row.
    pub g_mars: DMatrix<f64>,
    /// n × 2ⁿ; bit i of the column index selects the maximum for unit i.
    pub vertices: DMatrix<f64>,
    pub f_sum_min: f64,
    pub f_sum_max: f64,
}

impl WrenchVertexSet {
    /// Wrench vertices G'_M V'_M (4 × 2ⁿ).
    pub fn wrench_vertices(&self) -> DMatrix<f64> {
        &self.g_mars * &self.vertices
    }
}

pub fn reduced_vertex_set(config: &MarsConfig) -> Result<WrenchVertexSet, UnequalArmError> {
    let n = config.n_units();
    if n > MAX_UNITS {
        return Err(UnequalArmError::TooManyUnits { n, max: MAX_UNITS });
    }
    let c = config.centroid();
    let totals: Vec<(f64, f64)> = config.units().iter().map(|u| u.thrust_range()).collect();
    let g_mars = DMatrix::from_fn(4, n, |r, i| {
        let p = config.units()[i].position;
        match r {
            0 => 1.0,
            1 => -(p.y - c.y),
            2 => p.x - c.x,
            _ => 0.0,
        }
    });
    let vertices = DMatrix::from_fn(
        n,
        1 << n,
        |i, col| {
            if col >> i & 1 == 1 {
                totals[i].1
            } else {
                totals[i].0
            }
        },
    );
    let (f_sum_min, f_sum_max) = config.thrust_sum_range();
    Ok(WrenchVertexSet {
        g_mars,
        vertices,
        f_sum_min,
        f_sum_max,
    })
}

/// Virtual rotor forces V_V (4 × 16); bit j of the column selects f̄_sum/4 for rotor j.
pub fn virtual_vertices(f_sum_min: f64, f_sum_max: f64) -> DMatrix<f64> {
    DMatrix::from_fn(4, VIRTUAL_VERTICES, |j, col| {
        if col >> j & 1 == 1 {
            f_sum_max / 4.0
        } else {
            f_sum_min / 4.0
        }
    })
}

/// Certificate that every virtual vertex is realisable.
#[derive(Debug, Clone, PartialEq)]
pub enum ContainmentCertificate {
    /// Per-rotor forces (4n × 16), one column per virtual vertex, inside the rotor box.
    RotorForces(DMatrix<f64>),
    /// Column-stochastic weights α' (2ⁿ × 16) over the reduced vertex set.
    UnitWeights(DMatrix<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnequalArmAbstraction {
    pub centroid: Vector3<f64>,
    /// Centroid-relative, structure frame (yaw is not optimised).
    pub virtual_rotors: [Vector2<f64>; 4],
    pub c_vz: f64,
    pub effectiveness: Matrix4<f64>,
    pub containment: Containment,
    pub certificate: ContainmentCertificate,
    /// Maximised f̄_sum/4 · Σ|arm coordinates|.
    pub objective: f64,
    pub mass: f64,
    pub inertia: nalgebra::Matrix3<f64>,
    pub f_sum_min: f64,
    pub f_sum_max: f64,
}

pub fn unequal_arm_abstraction(
    config: &MarsConfig,
    containment: Containment,
) -> Result<UnequalArmAbstraction, UnequalArmError> {
    let n = config.n_units();
    if n > MAX_UNITS {
        return Err(UnequalArmError::TooManyUnits { n, max: MAX_UNITS });
    }
    let (f_sum_min, f_sum_max) = config.thrust_sum_range();
    let vv = virtual_vertices(f_sum_min, f_sum_max);

    // The physical side: columns the LP combines per virtual vertex.
    let (phys, lo, hi, convex) = match containment {
        Containment::RotorLevel => {
            let g = mars_effectiveness(config);
            let (lo, hi) = config.rotor_bounds();
            (g, lo, hi, false)
        }
        Containment::UnitLevel => {
            let set = reduced_vertex_set(config)?;
            let w = set.wrench_vertices();
            let m = w.ncols();
            (w, vec![0.0; m], vec![f64::INFINITY; m], true)
        }
    };
    let block = phys.ncols();

    let build = |rows: usize| {
        let mut lp = LinearProgram::new(8 + VIRTUAL_VERTICES * block);
        for v in 0..8 {
            lp.set_cost(v, f_sum_max / 4.0);
        }
        for s in 0..VIRTUAL_VERTICES {
            let base = 8 + s * block;
            for k in 0..block {
                lp.set_bounds(base + k, lo[k], hi[k]);
            }
            if convex {
                let terms: Vec<_> = (0..block).map(|k| (base + k, 1.0)).collect();
                lp.add_equality(&terms, 1.0);
            }
            // thrust
            let terms: Vec<_> = (0..block).map(|k| (base + k, phys[(0, k)])).collect();
            lp.add_equality(&terms, vv.column(s).sum());
            if rows > 1 {
                // roll: Σ G1 f − Σ_j (−y_j) V_j = 0, y_j = sy_j·|y_j|
                let mut terms: Vec<_> = (0..block).map(|k| (base + k, phys[(1, k)])).collect();
                terms.extend((0..4).map(|j| (2 * j + 1, QUADRANTS[j].1 * vv[(j, s)])));
                lp.add_equality(&terms, 0.0);
            }
            if rows > 2 {
                let mut terms: Vec<_> = (0..block).map(|k| (base + k, phys[(2, k)])).collect();
                terms.extend((0..4).map(|j| (2 * j, -QUADRANTS[j].0 * vv[(j, s)])));
                lp.add_equality(&terms, 0.0);
            }
        }
        lp
    };

    let sol = match build(3).maximize() {
        Ok(sol) => sol,
        Err(LpError::Infeasible { .. }) => {
            let component = (1..=3)
                .find(|&rows| matches!(build(rows).maximize(), Err(LpError::Infeasible { .. })))
                .map_or(WRENCH_AXES[2], |rows| WRENCH_AXES[rows - 1]);
            return Err(UnequalArmError::Infeasible { component });
        }
        Err(e) => return Err(e.into()),
    };

    let virtual_rotors: [Vector2<f64>; 4] =
        std::array::from_fn(|j| Vector2::new(QUADRANTS[j].0 * sol.x[2 * j], QUADRANTS[j].1 * sol.x[2 * j + 1]));
    let cert = DMatrix::from_fn(block, VIRTUAL_VERTICES, |k, s| sol.x[8 + s * block + k]);
    let certificate = match containment {
        Containment::RotorLevel => ContainmentCertificate::RotorForces(cert),
        Containment::UnitLevel => ContainmentCertificate::UnitWeights(cert),
    };
    let (_, f_max) = config.rotor_bounds();
    let c_vz = yaw_torque_coefficient_with_forces(config, &f_max);
    Ok(UnequalArmAbstraction {
        centroid: config.centroid(),
        virtual_rotors,
        c_vz,
        effectiveness: virtual_effectiveness(&virtual_rotors, c_vz),
        containment,
        certificate,
        objective: sol.objective,
        mass: config.total_mass(),
        inertia: inertia_in_frame(config, 0.0),
        f_sum_min,
        f_sum_max,
    })
}

impl UnequalArmAbstraction {
    pub fn to_virtual(&self) -> VirtualQuadrotor {
        VirtualQuadrotor {
            kind: AbstractionKind::UnequalArm,
            centroid: self.centroid,
            yaw: 0.0,
            rotors: self.virtual_rotors,
            c_vz: self.c_vz,
            effectiveness: self.effectiveness,
            mass: self.mass,
            inertia: self.inertia,
            f_sum_min: self.f_sum_min,
            f_sum_max: self.f_sum_max,
        }
    }

    /// Virtual wrench vertices G_V V_V (4 × 16).
    pub fn virtual_wrench_vertices(&self) -> DMatrix<f64> {
        let g = DMatrix::from_iterator(4, 4, self.effectiveness.iter().copied());
        g * virtual_vertices(self.f_sum_min, self.f_sum_max)
    }

    /// Largest |mismatch| in thrust/roll/pitch between the virtual vertices
    /// and what the certificate reproduces on the physical side.
    pub fn containment_residual(&self, config: &MarsConfig) -> f64 {
        let realised = match &self.certificate {
            ContainmentCertificate::RotorForces(f) => mars_effectiveness(config) * f,
            ContainmentCertificate::UnitWeights(a) => match reduced_vertex_set(config) {
                Ok(set) => set.wrench_vertices() * a,
                Err(_) => return f64::INFINITY,
            },
        };
        let target = self.virtual_wrench_vertices();
        (realised.rows(0, 3) - target.rows(0, 3)).amax()
    }

    /// Σ|arm coordinates|·f̄_sum/4 recomputed from the rotor positions.
    pub fn arm_objective(&self) -> f64 {
        self.f_sum_max / 4.0 * self.virtual_rotors.iter().map(|p| p.x.abs() + p.y.abs()).sum::<f64>()
    }
}

/// Relative grouped-torque mismatch per axis (x+, x−, y+, y−).
#[derive(Debug, Clone, PartialEq)]
pub struct ApproximationReport {
    /// `None` when the physical grouped torque is zero.
    pub per_axis: [Option<f64>; 4],
    /// Mean |error| over the defined axes.
    pub mean_abs: f64,
    /// True when at least one axis was excluded.
    pub has_undefined: bool,
}

/// Grouped physical torques at zero yaw with every rotor at f̄.
pub fn physical_grouped_torques_at_max(config: &MarsConfig) -> GroupedTorques {
    GroupedTorques::from_torques(
        config
            .rotor_lever_arms()
            .iter()
            .zip(config.rotors())
            .map(|(d, r)| rotor_torque(d, r.spec.f_max)),
    )
}

pub fn approximation_error(abs: &UnequalArmAbstraction, config: &MarsConfig) -> ApproximationReport {
    let phys = physical_grouped_torques_at_max(config).as_array();
    let (_, f_sum_max) = config.thrust_sum_range();
    let r = &abs.virtual_rotors;
    let q = f_sum_max / 4.0;
    let virt = [
        (-r[1].y - r[2].y) * q,
        (-r[0].y - r[3].y) * q,
        (r[0].x + r[2].x) * q,
        (r[1].x + r[3].x) * q,
    ];
    let scale = phys.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let per_axis: [Option<f64>; 4] =
        std::array::from_fn(|a| (phys[a].abs() > 1e-12 * scale).then(|| (virt[a] - phys[a]) / phys[a]));
    let defined: Vec<f64> = per_axis.iter().flatten().map(|e| e.abs()).collect();
    let mean_abs = if defined.is_empty() {
        0.0
    } else {
        defined.iter().sum::<f64>() / defined.len() as f64
    };
    ApproximationReport {
        per_axis,
        mean_abs,
        has_undefined: defined.len() < 4,
    }
}
