//! Assembly data model: units, rotors, optional rigid payload, and the mass
//! properties derived from them.

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

/// Rotor planes of all units must agree in z to within this many meters.
pub const COPLANAR_TOL: f64 = 1e-9;

/// Yaw-torque sign of rotors 1..4 of every unit.
pub const SPIN_PATTERN: [i8; 4] = [-1, -1, 1, 1];

/// Default standard gravity, m/s².
pub const STANDARD_GRAVITY: f64 = 9.81;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("failed to parse configuration: {0}")]
    Parse(String),
    #[error("invalid `{field}`: {reason}")]
    Validation { field: String, reason: String },
}

impl ConfigError {
    fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ConfigError::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Name of the offending field for validation errors.
    pub fn field(&self) -> Option<&str> {
        match self {
            ConfigError::Validation { field, .. } => Some(field),
            ConfigError::Parse(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotorSpec {
    /// Position in the unit frame, meters.
    pub offset: Vector3<f64>,
    /// Yaw-torque direction, −1 or +1.
    pub spin_sign: i8,
    /// Thrust bounds, newtons.
    pub f_min: f64,
    pub f_max: f64,
    /// Thrust-to-yaw-torque coefficient, meters.
    pub c_z: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitSpec {
    pub mass: f64,
    /// Centre of mass in the structure frame.
    pub position: Vector3<f64>,
    pub rotors: [RotorSpec; 4],
    /// Inertia about the unit's own centre of mass.
    pub inertia_local: Matrix3<f64>,
}

impl UnitSpec {
    /// A 1.5 kg ×-layout unit with 7 N rotors, used throughout the examples
    /// and as the default grid template.
    pub fn reference_unit() -> Self {
        let arm = 0.1625;
        let corners = [(arm, arm), (-arm, -arm), (arm, -arm), (-arm, arm)];
        let rotors = std::array::from_fn(|j| RotorSpec {
            offset: Vector3::new(corners[j].0, corners[j].1, 0.0),
            spin_sign: SPIN_PATTERN[j],
            f_min: 0.0,
            f_max: 7.0,
            c_z: 0.06,
        });
        UnitSpec {
            mass: 1.5,
            position: Vector3::zeros(),
            rotors,
            inertia_local: Matrix3::from_diagonal(&Vector3::new(0.029125, 0.029125, 0.055225)),
        }
    }

    pub fn at(&self, position: Vector3<f64>) -> Self {
        UnitSpec {
            position,
            ..self.clone()
        }
    }

    /// Per-unit thrust range (sum over its four rotors).
    pub fn thrust_range(&self) -> (f64, f64) {
        self.rotors
            .iter()
            .fold((0.0, 0.0), |(lo, hi), r| (lo + r.f_min, hi + r.f_max))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PayloadSpec {
    pub mass: f64,
    pub position: Vector3<f64>,
    pub inertia_local: Matrix3<f64>,
}

/// A rotor resolved into the structure frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlacedRotor {
    pub unit: usize,
    pub index: usize,
    pub position: Vector3<f64>,
    pub spec: RotorSpec,
}

/// A validated assembly. Immutable once constructed.
#[derive(Debug, Clone, PartialEq)]
pub struct MarsConfig {
    units: Vec<UnitSpec>,
    payload: Option<PayloadSpec>,
    gravity: f64,
}

impl MarsConfig {
    pub fn new(units: Vec<UnitSpec>, payload: Option<PayloadSpec>, gravity: f64) -> Result<Self, ConfigError> {
        let config = MarsConfig {
            units,
            payload,
            gravity,
        };
        config.validate()?;
        Ok(config)
    }

    /// Units placed at integer lattice cells `(i, j) * spacing`, not recentred.
    pub fn from_cells(cells: &[(i32, i32)], spacing: f64, template: &UnitSpec) -> Result<Self, ConfigError> {
        let units = cells
            .iter()
            .map(|&(i, j)| template.at(Vector3::new(i as f64 * spacing, j as f64 * spacing, 0.0)))
            .collect();
        MarsConfig::new(units, None, STANDARD_GRAVITY)
    }

    pub fn with_payload(&self, payload: PayloadSpec) -> Result<Self, ConfigError> {
        MarsConfig::new(self.units.clone(), Some(payload), self.gravity)
    }

    /// Rigidly shifted copy.
    pub fn translated(&self, t: Vector3<f64>) -> Self {
        let units = self.units.iter().map(|u| u.at(u.position + t)).collect();
        let payload = self.payload.clone().map(|p| PayloadSpec {
            position: p.position + t,
            ..p
        });
        MarsConfig {
            units,
            payload,
            gravity: self.gravity,
        }
    }

    pub fn units(&self) -> &[UnitSpec] {
        &self.units
    }

    pub fn n_units(&self) -> usize {
        self.units.len()
    }

    pub fn n_rotors(&self) -> usize {
        4 * self.units.len()
    }

    pub fn payload(&self) -> Option<&PayloadSpec> {
        self.payload.as_ref()
    }

    pub fn gravity(&self) -> f64 {
        self.gravity
    }

    /// All rotors in unit-major order (f_11..f_14, f_21, ...).
    pub fn rotors(&self) -> impl Iterator<Item = PlacedRotor> + '_ {
        self.units.iter().enumerate().flat_map(|(i, u)| {
            u.rotors.iter().enumerate().map(move |(j, r)| PlacedRotor {
                unit: i,
                index: j,
                position: u.position + r.offset,
                spec: *r,
            })
        })
    }

    /// Rotor xy positions relative to the centroid, unit-major.
    pub fn rotor_lever_arms(&self) -> Vec<Vector2<f64>> {
        let c = self.centroid();
        self.rotors()
            .map(|r| Vector2::new(r.position.x - c.x, r.position.y - c.y))
            .collect()
    }

    pub fn rotor_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        self.rotors().map(|r| (r.spec.f_min, r.spec.f_max)).unzip()
    }

    /// Σ f_min and Σ f_max over every rotor.
    pub fn thrust_sum_range(&self) -> (f64, f64) {
        self.rotors()
            .fold((0.0, 0.0), |(lo, hi), r| (lo + r.spec.f_min, hi + r.spec.f_max))
    }

    fn masses(&self) -> impl Iterator<Item = (f64, Vector3<f64>, Matrix3<f64>)> + '_ {
        self.units
            .iter()
            .map(|u| (u.mass, u.position, u.inertia_local))
            .chain(self.payload.iter().map(|p| (p.mass, p.position, p.inertia_local)))
    }

    /// m_V: unit masses plus payload.
    pub fn total_mass(&self) -> f64 {
        self.masses().map(|(m, _, _)| m).sum()
    }

    /// Mass-weighted mean of unit and payload positions.
    pub fn centroid(&self) -> Vector3<f64> {
        let moment: Vector3<f64> = self.masses().map(|(m, p, _)| p * m).sum();
        moment / self.total_mass()
    }

    /// Inertia of the whole assembly about `about`, by the parallel axis theorem.
    pub fn composite_inertia(&self, about: &Vector3<f64>) -> Matrix3<f64> {
        self.masses()
            .map(|(m, p, local)| {
                let d = p - about;
                local + (Matrix3::identity() * d.norm_squared() - d * d.transpose()) * m
            })
            .sum()
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if self.units.is_empty() {
            return Err(ConfigError::invalid("units", "at least one unit is required"));
        }
        if !(self.gravity.is_finite() && self.gravity > 0.0) {
            return Err(ConfigError::invalid("gravity", "must be positive and finite"));
        }
        for (i, u) in self.units.iter().enumerate() {
            validate_unit(i, u)?;
        }
        for i in 0..self.units.len() {
            for k in (i + 1)..self.units.len() {
                if (self.units[i].position - self.units[k].position).norm() == 0.0 {
                    return Err(ConfigError::invalid(
                        format!("units[{k}].position"),
                        format!("coincides with unit {i}"),
                    ));
                }
            }
        }
        let z0 = self.units[0].position.z + self.units[0].rotors[0].offset.z;
        for r in self.rotors() {
            if (r.position.z - z0).abs() > COPLANAR_TOL {
                return Err(ConfigError::invalid(
                    format!("units[{}].rotors[{}].offset", r.unit, r.index),
                    "rotor planes are not coplanar",
                ));
            }
        }
        if let Some(p) = &self.payload {
            if !(p.mass.is_finite() && p.mass >= 0.0) {
                return Err(ConfigError::invalid("payload.mass", "must be non-negative"));
            }
            if !all_finite(&p.position) {
                return Err(ConfigError::invalid("payload.position", "must be finite"));
            }
            if !is_symmetric(&p.inertia_local) || !is_psd(&p.inertia_local, false) {
                return Err(ConfigError::invalid(
                    "payload.inertia_local",
                    "must be symmetric positive semidefinite",
                ));
            }
        }
        Ok(())
    }
}

fn validate_unit(i: usize, u: &UnitSpec) -> Result<(), ConfigError> {
    if !(u.mass.is_finite() && u.mass > 0.0) {
        return Err(ConfigError::invalid(format!("units[{i}].mass"), "must be positive"));
    }
    if !all_finite(&u.position) {
        return Err(ConfigError::invalid(format!("units[{i}].position"), "must be finite"));
    }
    if !is_symmetric(&u.inertia_local) || !is_psd(&u.inertia_local, true) {
        return Err(ConfigError::invalid(
            format!("units[{i}].inertia_local"),
            "must be symmetric positive definite",
        ));
    }
    for (j, r) in u.rotors.iter().enumerate() {
        let field = |name: &str| format!("units[{i}].rotors[{j}].{name}");
        if !all_finite(&r.offset) {
            return Err(ConfigError::invalid(field("offset"), "must be finite"));
        }
        if r.spin_sign != SPIN_PATTERN[j] {
            return Err(ConfigError::invalid(
                field("spin_sign"),
                format!("rotor {} must spin with sign {}", j + 1, SPIN_PATTERN[j]),
            ));
        }
        if !(r.f_min.is_finite() && r.f_min >= 0.0) {
            return Err(ConfigError::invalid(field("f_min"), "must be non-negative"));
        }
        if !(r.f_max.is_finite() && r.f_min < r.f_max) {
            return Err(ConfigError::invalid(field("f_min"), "f_min must be below f_max"));
        }
        if !(r.c_z.is_finite() && r.c_z > 0.0) {
            return Err(ConfigError::invalid(field("c_z"), "must be positive"));
        }
    }
    Ok(())
}

fn all_finite(v: &Vector3<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

fn is_symmetric(m: &Matrix3<f64>) -> bool {
    let scale = m.amax().max(1e-300);
    m.iter().all(|x| x.is_finite()) && (m - m.transpose()).amax() <= 1e-12 * scale
}

fn is_psd(m: &Matrix3<f64>, strict: bool) -> bool {
    let eig = m.symmetric_eigenvalues();
    let tol = 1e-14 * m.amax();
    eig.iter().all(|&e| if strict { e > tol } else { e >= -tol })
}

/// Rectangular grid of `rows` (along y) by `cols` (along x) units, centred on
/// the origin.
pub fn build_grid_config(
    rows: usize,
    cols: usize,
    spacing: f64,
    template: &UnitSpec,
) -> Result<MarsConfig, ConfigError> {
    if rows == 0 || cols == 0 {
        return Err(ConfigError::invalid("rows", "grid must contain at least one unit"));
    }
    if !(spacing.is_finite() && spacing > 0.0) {
        return Err(ConfigError::invalid("spacing", "must be positive"));
    }
    let x0 = (cols as f64 - 1.0) / 2.0;
    let y0 = (rows as f64 - 1.0) / 2.0;
    let units = (0..rows)
        .flat_map(|r| (0..cols).map(move |c| (r, c)))
        .map(|(r, c)| {
            template.at(Vector3::new(
                (c as f64 - x0) * spacing,
                (r as f64 - y0) * spacing,
                template.position.z,
            ))
        })
        .collect();
    MarsConfig::new(units, None, STANDARD_GRAVITY)
}

// ---------------------------------------------------------------------------
// JSON document

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RotorDoc {
    offset: [f64; 3],
    spin_sign: i8,
    f_min: f64,
    f_max: f64,
    c_z: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct UnitDoc {
    mass: f64,
    position: [f64; 3],
    rotors: Vec<RotorDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    inertia_local: Option<[[f64; 3]; 3]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PayloadDoc {
    mass: f64,
    position: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    inertia_local: Option<[[f64; 3]; 3]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ConfigDoc {
    units: Vec<UnitDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    payload: Option<PayloadDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gravity: Option<f64>,
    /// Controller settings are parsed by the `apc` module.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    controller: Option<serde_json::Value>,
}

fn mat3(rows: &[[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::from_fn(|r, c| rows[r][c])
}

fn rows3(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)]))
}

/// Parses and validates a JSON configuration document.
pub fn load_config(text: &str) -> Result<MarsConfig, ConfigError> {
    load_config_document(text).map(|(c, _)| c)
}

/// Like [`load_config`], also returning the raw `controller` section, if any.
pub fn load_config_document(text: &str) -> Result<(MarsConfig, Option<serde_json::Value>), ConfigError> {
    let doc: ConfigDoc = serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    let default_inertia = UnitSpec::reference_unit().inertia_local;
    let mut units = Vec::with_capacity(doc.units.len());
    for (i, u) in doc.units.iter().enumerate() {
        if u.rotors.len() != 4 {
            return Err(ConfigError::invalid(
                format!("units[{i}].rotors"),
                format!("expected 4 rotors, found {}", u.rotors.len()),
            ));
        }
        let rotors = std::array::from_fn(|j| {
            let r = &u.rotors[j];
            RotorSpec {
                offset: Vector3::from(r.offset),
                spin_sign: r.spin_sign,
                f_min: r.f_min,
                f_max: r.f_max,
                c_z: r.c_z,
            }
        });
        units.push(UnitSpec {
            mass: u.mass,
            position: Vector3::from(u.position),
            rotors,
            inertia_local: u.inertia_local.as_ref().map(mat3).unwrap_or(default_inertia),
        });
    }
    let payload = doc.payload.map(|p| PayloadSpec {
        mass: p.mass,
        position: Vector3::from(p.position),
        inertia_local: p.inertia_local.as_ref().map(mat3).unwrap_or_else(Matrix3::zeros),
    });
    let config = MarsConfig::new(units, payload, doc.gravity.unwrap_or(STANDARD_GRAVITY))?;
    Ok((config, doc.controller))
}

/// Serialises a configuration back to the JSON document format.
pub fn config_to_json(config: &MarsConfig) -> String {
    let doc = ConfigDoc {
        units: config
            .units
            .iter()
            .map(|u| UnitDoc {
                mass: u.mass,
                position: u.position.into(),
                rotors: u
                    .rotors
                    .iter()
                    .map(|r| RotorDoc {
                        offset: r.offset.into(),
                        spin_sign: r.spin_sign,
                        f_min: r.f_min,
                        f_max: r.f_max,
                        c_z: r.c_z,
                    })
                    .collect(),
                inertia_local: Some(rows3(&u.inertia_local)),
            })
            .collect(),
        payload: config.payload.as_ref().map(|p| PayloadDoc {
            mass: p.mass,
            position: p.position.into(),
            inertia_local: Some(rows3(&p.inertia_local)),
        }),
        gravity: Some(config.gravity),
        controller: None,
    };
    serde_json::to_string_pretty(&doc).expect("configuration serialises")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_doc(x: f64) -> String {
        let rotors: Vec<String> = [(1.0, 1.0, -1), (-1.0, -1.0, -1), (1.0, -1.0, 1), (-1.0, 1.0, 1)]
            .iter()
            .map(|(sx, sy, s)| {
                format!(
                    r#"{{"offset":[{},{},0],"spin_sign":{},"f_min":0,"f_max":7,"c_z":0.06}}"#,
                    sx * 0.1625,
                    sy * 0.1625,
                    s
                )
            })
            .collect();
        format!(r#"{{"mass":1.5,"position":[{x},0,0],"rotors":[{}]}}"#, rotors.join(","))
    }

    #[test]
    fn loads_single_unit() {
        let cfg = load_config(&format!(r#"{{"units":[{}]}}"#, unit_doc(0.0))).unwrap();
        assert_eq!(cfg.n_units(), 1);
        assert_eq!(cfg.gravity(), STANDARD_GRAVITY);
    }

    #[test]
    fn loads_two_unit_row() {
        let cfg = load_config(&format!(r#"{{"units":[{},{}]}}"#, unit_doc(0.0), unit_doc(0.65))).unwrap();
        assert_eq!(cfg.n_units(), 2);
        let spacing = (cfg.units()[1].position - cfg.units()[0].position).norm();
        assert!((spacing - 0.65).abs() < 1e-15);
    }

    #[test]
    fn rejects_inverted_thrust_bounds() {
        let text = format!(r#"{{"units":[{}]}}"#, unit_doc(0.0)).replacen(r#""f_min":0"#, r#""f_min":9"#, 1);
        let err = load_config(&text).unwrap_err();
        assert!(err.field().unwrap().ends_with("f_min"), "{err}");
    }

    #[test]
    fn rejects_malformed_document() {
        assert!(matches!(load_config("{units: ["), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn rejects_non_coplanar_rotors() {
        let mut u = UnitSpec::reference_unit();
        u.rotors[2].offset.z = 1e-6;
        let err = MarsConfig::new(vec![u], None, 9.81).unwrap_err();
        assert!(err.field().unwrap().contains("rotors[2]"));
    }

    #[test]
    fn rejects_wrong_spin_pattern_and_duplicates() {
        let mut u = UnitSpec::reference_unit();
        u.rotors[0].spin_sign = 1;
        assert!(MarsConfig::new(vec![u], None, 9.81).is_err());
        let u = UnitSpec::reference_unit();
        assert!(MarsConfig::new(vec![u.clone(), u], None, 9.81).is_err());
    }

    #[test]
    fn json_round_trip() {
        let t = UnitSpec::reference_unit();
        let cfg = build_grid_config(2, 2, 0.65, &t).unwrap();
        assert_eq!(load_config(&config_to_json(&cfg)).unwrap(), cfg);
    }

    #[test]
    fn grid_layouts() {
        let t = UnitSpec::reference_unit();
        let one = build_grid_config(1, 1, 0.65, &t).unwrap();
        assert_eq!(one.units()[0].position, Vector3::zeros());
        assert_eq!(one.total_mass(), t.mass);
        let row = build_grid_config(1, 2, 0.65, &t).unwrap();
        assert_eq!(row.units()[0].position.x, -0.325);
        assert_eq!(row.units()[1].position.x, 0.325);
        let sq = build_grid_config(2, 2, 0.65, &t).unwrap();
        for u in sq.units() {
            assert_eq!(u.position.x.abs(), 0.325);
            assert_eq!(u.position.y.abs(), 0.325);
        }
        assert!(build_grid_config(0, 2, 0.65, &t).is_err());
        assert!(build_grid_config(1, 2, 0.0, &t).is_err());
    }

    #[test]
    fn mass_and_centroid() {
        let t = UnitSpec::reference_unit();
        let row = build_grid_config(1, 2, 0.65, &t).unwrap();
        assert_eq!(row.total_mass(), 3.0);
        assert!(row.centroid().norm() < 1e-15);
        let payload = PayloadSpec {
            mass: 0.6,
            position: Vector3::new(0.0, 0.0, -0.1),
            inertia_local: Matrix3::zeros(),
        };
        assert!((row.with_payload(payload).unwrap().total_mass() - 3.6).abs() < 1e-15);

        let mut light = t.clone();
        light.mass = 1.0;
        let mut heavy = t.at(Vector3::new(1.0, 0.0, 0.0));
        heavy.mass = 3.0;
        let cfg = MarsConfig::new(vec![light, heavy], None, 9.81).unwrap();
        assert!((cfg.centroid().x - 0.75).abs() < 1e-15);
    }

    #[test]
    fn two_point_masses_parallel_axis() {
        let mut t = UnitSpec::reference_unit();
        t.inertia_local = Matrix3::identity() * 1e-30;
        let d = 0.4;
        let cfg = MarsConfig::new(
            vec![t.at(Vector3::new(-d, 0.0, 0.0)), t.at(Vector3::new(d, 0.0, 0.0))],
            None,
            9.81,
        )
        .unwrap();
        let i = cfg.composite_inertia(&Vector3::zeros());
        assert!((i[(2, 2)] - 2.0 * t.mass * d * d).abs() < 1e-12);
        assert!((i[(1, 1)] - 2.0 * t.mass * d * d).abs() < 1e-12);
        assert!(i[(0, 0)].abs() < 1e-12);
    }

    #[test]
    fn single_unit_inertia_about_own_centroid() {
        let t = UnitSpec::reference_unit().at(Vector3::new(0.3, -0.2, 0.0));
        let cfg = MarsConfig::new(vec![t.clone()], None, 9.81).unwrap();
        let i = cfg.composite_inertia(&cfg.centroid());
        assert!((i - t.inertia_local).amax() < 1e-15);
    }
}
