//! Point-dipole field model of the docking magnets and the layer-wise search
//! for their orientations.
//!
//! Magnets sit on stacked rings of a cylindrical docking surface. Within a
//! layer, alternating magnets form two equal groups with exactly opposite
//! moments; each layer picks one of six signed lattice axes for its first
//! group.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};

/// μ₀ / 4π in T·m/A.
pub const MU0_OVER_4PI: f64 = 1e-7;
/// Search is exhaustive up to 6^7 assignments.
pub const EXHAUSTIVE_MAX_LAYERS: usize = 7;
pub const HILL_CLIMB_RESTARTS: usize = 16;
/// Radial offset of the observation ring outside the magnet ring, m.
pub const OBSERVATION_OFFSET: f64 = 1e-3;
pub const OBSERVATION_POINTS_PER_LAYER: usize = 32;
/// Moment magnitude, A·m². Objectives scale linearly with it.
pub const DEFAULT_MOMENT: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MagnetError {
    #[error("observation point coincides with a magnet")]
    CoincidentPoint,
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),
    #[error("observation set is empty")]
    EmptyObservations,
    #[error("target field {target:e} T not reached; best {best:e} T with {layers} layers")]
    TargetUnreachable {
        target: f64,
        best: f64,
        layers: usize,
        result: Box<OptimizationResult>,
    },
}

/// Signed lattice axis for a moment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Axis {
    PosX,
    NegX,
    PosY,
    NegY,
    PosZ,
    NegZ,
}

impl Axis {
    pub const ALL: [Axis; 6] = [Axis::PosX, Axis::NegX, Axis::PosY, Axis::NegY, Axis::PosZ, Axis::NegZ];

    pub fn unit(&self) -> Vector3<f64> {
        match self {
            Axis::PosX => Vector3::x(),
            Axis::NegX => -Vector3::x(),
            Axis::PosY => Vector3::y(),
            Axis::NegY => -Vector3::y(),
            Axis::PosZ => Vector3::z(),
            Axis::NegZ => -Vector3::z(),
        }
    }

    pub fn opposite(&self) -> Axis {
        match self {
            Axis::PosX => Axis::NegX,
            Axis::NegX => Axis::PosX,
            Axis::PosY => Axis::NegY,
            Axis::NegY => Axis::PosY,
            Axis::PosZ => Axis::NegZ,
            Axis::NegZ => Axis::PosZ,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Axis::PosX => "+x",
            Axis::NegX => "-x",
            Axis::PosY => "+y",
            Axis::NegY => "-y",
            Axis::PosZ => "+z",
            Axis::NegZ => "-z",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Magnet {
    pub position: Vector3<f64>,
    pub moment: Vector3<f64>,
}

/// Stacked rings of candidate magnet positions.
#[derive(Debug, Clone, PartialEq)]
pub struct DockingLattice {
    pub layers: usize,
    pub magnets_per_layer: usize,
    pub radius: f64,
    pub pitch: f64,
    /// Ring-major positions.
    pub positions: Vec<Vector3<f64>>,
}

impl DockingLattice {
    pub fn ring(&self, layer: usize) -> &[Vector3<f64>] {
        let k = self.magnets_per_layer;
        &self.positions[layer * k..(layer + 1) * k]
    }
}

/// Rings of equally spaced positions at z = layer·pitch.
pub fn docking_lattice(
    layers: usize,
    magnets_per_layer: usize,
    radius: f64,
    pitch: f64,
) -> Result<DockingLattice, MagnetError> {
    if layers == 0 {
        return Err(MagnetError::InvalidLattice("need at least one layer".into()));
    }
    if magnets_per_layer == 0 || !magnets_per_layer.is_multiple_of(2) {
        return Err(MagnetError::InvalidLattice(
            "magnets per layer must be even and positive".into(),
        ));
    }
    if !(radius > 0.0 && pitch > 0.0) {
        return Err(MagnetError::InvalidLattice("radius and pitch must be positive".into()));
    }
    let positions = (0..layers)
        .flat_map(|l| {
            (0..magnets_per_layer).map(move |k| {
                let a = 2.0 * std::f64::consts::PI * k as f64 / magnets_per_layer as f64;
                Vector3::new(radius * a.cos(), radius * a.sin(), l as f64 * pitch)
            })
        })
        .collect();
    Ok(DockingLattice {
        layers,
        magnets_per_layer,
        radius,
        pitch,
        positions,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    pub points: Vec<Vector3<f64>>,
}

impl ObservationSet {
    pub fn new(points: Vec<Vector3<f64>>) -> Result<Self, MagnetError> {
        if points.is_empty() {
            return Err(MagnetError::EmptyObservations);
        }
        Ok(ObservationSet { points })
    }

    /// Ring just outside the contact surface, `per_layer` samples at each layer height.
    pub fn near_surface(lattice: &DockingLattice, per_layer: usize) -> Result<Self, MagnetError> {
        let r = lattice.radius + OBSERVATION_OFFSET;
        let points = (0..lattice.layers)
            .flat_map(|l| {
                (0..per_layer).map(move |k| {
                    let a = 2.0 * std::f64::consts::PI * (k as f64 + 0.5) / per_layer as f64;
                    Vector3::new(r * a.cos(), r * a.sin(), l as f64 * lattice.pitch)
                })
            })
            .collect();
        ObservationSet::new(points)
    }
}

/// Point-dipole field of moment `d` at `c`, observed at `r`.
pub fn dipole_field(c: &Vector3<f64>, d: &Vector3<f64>, r: &Vector3<f64>) -> Result<Vector3<f64>, MagnetError> {
    let rij = r - c;
    let n2 = rij.norm_squared();
    if n2 == 0.0 {
        return Err(MagnetError::CoincidentPoint);
    }
    let n = n2.sqrt();
    let n3 = n2 * n;
    let n5 = n3 * n2;
    Ok((rij * (3.0 * d.dot(&rij) / n5) - d / n3) * MU0_OVER_4PI)
}

/// Layered arrangement: per layer, group A (even ring index) along `axes[l]`,
/// group B (odd index) opposite.
#[derive(Debug, Clone, PartialEq)]
pub struct MagnetArrangement {
    pub magnets: Vec<Magnet>,
    pub layers: usize,
    pub axes: Vec<Axis>,
    /// Per layer: (group A indices, group B indices) into `magnets`.
    pub groups: Vec<(Vec<usize>, Vec<usize>)>,
}

impl MagnetArrangement {
    pub fn from_axes(lattice: &DockingLattice, axes: &[Axis], magnitude: f64) -> Result<Self, MagnetError> {
        if axes.len() > lattice.layers {
            return Err(MagnetError::InvalidLattice(
                "more layer axes than lattice layers".into(),
            ));
        }
        let k = lattice.magnets_per_layer;
        let mut magnets = Vec::with_capacity(axes.len() * k);
        let mut groups = Vec::with_capacity(axes.len());
        for (l, axis) in axes.iter().enumerate() {
            let (mut a, mut b) = (Vec::new(), Vec::new());
            for (j, p) in lattice.ring(l).iter().enumerate() {
                let idx = magnets.len();
                let dir = if j % 2 == 0 {
                    a.push(idx);
                    axis.unit()
                } else {
                    b.push(idx);
                    axis.opposite().unit()
                };
                magnets.push(Magnet {
                    position: *p,
                    moment: dir * magnitude,
                });
            }
            groups.push((a, b));
        }
        Ok(MagnetArrangement {
            magnets,
            layers: axes.len(),
            axes: axes.to_vec(),
            groups,
        })
    }

    /// Every magnet along +z — the reference the search is compared against.
    pub fn uniform(lattice: &DockingLattice, layers: usize, magnitude: f64) -> Self {
        let magnets: Vec<Magnet> = lattice.positions[..layers * lattice.magnets_per_layer]
            .iter()
            .map(|p| Magnet {
                position: *p,
                moment: Vector3::z() * magnitude,
            })
            .collect();
        MagnetArrangement {
            magnets,
            layers,
            axes: vec![Axis::PosZ; layers],
            groups: Vec::new(),
        }
    }
}

/// (1/|R|) Σ_j Σ_i ‖B(c_i, d_i, r_j)‖.
pub fn field_objective(magnets: &[Magnet], obs: &ObservationSet) -> Result<f64, MagnetError> {
    let mut total = 0.0;
    for r in &obs.points {
        for m in magnets {
            total += dipole_field(&m.position, &m.moment, r)?.norm();
        }
    }
    Ok(total / obs.points.len() as f64)
}

/// (1/|R|) Σ_j ‖Σ_i B(c_i, d_i, r_j)‖ — strength of the superposed field.
pub fn superposed_field_strength(magnets: &[Magnet], obs: &ObservationSet) -> Result<f64, MagnetError> {
    let mut total = 0.0;
    for r in &obs.points {
        let mut b = Vector3::zeros();
        for m in magnets {
            b += dipole_field(&m.position, &m.moment, r)?;
        }
        total += b.norm();
    }
    Ok(total / obs.points.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationResult {
    pub arrangement: MagnetArrangement,
    /// Best objective for L = 1, 2, … layers.
    pub history: Vec<f64>,
    pub objective: f64,
    pub superposed: f64,
}

/// Objective contribution of one layer under each of the six axis choices.
fn layer_table(
    lattice: &DockingLattice,
    layer: usize,
    obs: &ObservationSet,
    magnitude: f64,
) -> Result<[f64; 6], MagnetError> {
    let mut table = [0.0; 6];
    for (slot, axis) in Axis::ALL.iter().enumerate() {
        let arr = MagnetArrangement::from_axes(lattice, &vec![*axis; layer + 1], magnitude)?;
        let start = layer * lattice.magnets_per_layer;
        table[slot] = field_objective(&arr.magnets[start..], obs)?;
    }
    Ok(table)
}

fn exhaustive(table: &[[f64; 6]]) -> Vec<usize> {
    let l = table.len();
    let mut choice = vec![0usize; l];
    let mut best = choice.clone();
    let mut best_val = f64::NEG_INFINITY;
    loop {
        let v: f64 = choice.iter().enumerate().map(|(i, &c)| table[i][c]).sum();
        if v > best_val {
            best_val = v;
            best.clone_from(&choice);
        }
        // odometer increment, last layer fastest
        let mut i = l;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            choice[i] += 1;
            if choice[i] < 6 {
                break;
            }
            choice[i] = 0;
        }
    }
}

fn hill_climb(table: &[[f64; 6]], seed: u64) -> Vec<usize> {
    let l = table.len();
    let value = |c: &[usize]| -> f64 { c.iter().enumerate().map(|(i, &k)| table[i][k]).sum() };
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut best: Vec<usize> = vec![0; l];
    let mut best_val = value(&best);
    for _ in 0..HILL_CLIMB_RESTARTS {
        let mut c: Vec<usize> = (0..l).map(|_| rng.random_range(0..6)).collect();
        let mut v = value(&c);
        loop {
            let mut improved = false;
            for i in 0..l {
                for k in 0..6 {
                    let old = c[i];
                    c[i] = k;
                    let nv = value(&c);
                    if nv > v {
                        v = nv;
                        improved = true;
                    } else {
                        c[i] = old;
                    }
                }
            }
            if !improved {
                break;
            }
        }
        if v > best_val {
            best_val = v;
            best = c;
        }
    }
    best
}

/// Layer-by-layer search with the default moment magnitude.
pub fn optimize_arrangement(
    lattice: &DockingLattice,
    obs: &ObservationSet,
    b_desired: f64,
    seed: u64,
) -> Result<OptimizationResult, MagnetError> {
    optimize_arrangement_with_moment(lattice, obs, b_desired, DEFAULT_MOMENT, seed)
}

/// Layer-by-layer search: grow L until the best objective reaches `b_desired`.
pub fn optimize_arrangement_with_moment(
    lattice: &DockingLattice,
    obs: &ObservationSet,
    b_desired: f64,
    magnitude: f64,
    seed: u64,
) -> Result<OptimizationResult, MagnetError> {
    let mut tables: Vec<[f64; 6]> = Vec::with_capacity(lattice.layers);
    let mut history = Vec::new();
    let mut result = None;
    for l in 1..=lattice.layers {
        tables.push(layer_table(lattice, l - 1, obs, magnitude)?);
        let choice = if l <= EXHAUSTIVE_MAX_LAYERS {
            exhaustive(&tables)
        } else {
            hill_climb(&tables, seed.wrapping_add(l as u64))
        };
        let axes: Vec<Axis> = choice.iter().map(|&k| Axis::ALL[k]).collect();
        let arrangement = MagnetArrangement::from_axes(lattice, &axes, magnitude)?;
        let objective = field_objective(&arrangement.magnets, obs)?;
        history.push(objective);
        let superposed = superposed_field_strength(&arrangement.magnets, obs)?;
        let done = objective >= b_desired;
        result = Some(OptimizationResult {
            arrangement,
            history: history.clone(),
            objective,
            superposed,
        });
        if done {
            return Ok(result.expect("set above"));
        }
    }
    let result = result.expect("lattice has at least one layer");
    Err(MagnetError::TargetUnreachable {
        target: b_desired,
        best: result.objective,
        layers: result.arrangement.layers,
        result: Box::new(result),
    })
}

/// Best arrangement using every layer of the lattice regardless of target.
pub fn optimize_full(
    lattice: &DockingLattice,
    obs: &ObservationSet,
    magnitude: f64,
    seed: u64,
) -> Result<OptimizationResult, MagnetError> {
    match optimize_arrangement_with_moment(lattice, obs, f64::INFINITY, magnitude, seed) {
        Err(MagnetError::TargetUnreachable { result, .. }) => Ok(*result),
        other => other,
    }
}
