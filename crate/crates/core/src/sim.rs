//! Closed-loop simulation: predictive control on the virtual quadrotor,
//! balanced allocation to every rotor, and the recomposed wrench driving the
//! rigid-body plant.

use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::{DVector, Quaternion, Vector3};
use rand::{Rng, SeedableRng};
use sha2::{Digest, Sha256};

use crate::allocation::{per_unit_commands, recompose, AllocationError, Allocator};
use crate::apc::{
    actuator_bounds, generate_reference, solve_apc, ApcError, ControllerConfig, ReferenceKind, WrenchBounds,
};
use crate::dynamics::{step, BodyParams, InputVector, RigidState, WrenchCommand, DEFAULT_DT};
use crate::equal_arm::{equal_arm_abstraction, TorqueBalanceWeights};
use crate::geometry::{config_to_json, MarsConfig};
use crate::unequal_arm::{unequal_arm_abstraction, Containment};
use crate::virtual_quad::VirtualQuadrotor;

/// Version tag written into the CSV header comment.
pub const CSV_VERSION: &str = "v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AbstractionMode {
    Equal,
    Unequal,
}

impl AbstractionMode {
    pub fn name(&self) -> &'static str {
        match self {
            AbstractionMode::Equal => "equal",
            AbstractionMode::Unequal => "unequal",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub id: String,
    pub reference: ReferenceKind,
    pub duration: f64,
}

impl Scenario {
    /// Circle of radius 1.5 m at 1 m/s and 1 m height, `laps` laps.
    pub fn circle_laps(laps: f64) -> Self {
        let radius = 1.5;
        let speed = 1.0;
        Scenario {
            id: format!("circle-r{radius}-v{speed}-laps{laps}"),
            reference: ReferenceKind::Circle {
                radius,
                speed,
                height: 1.0,
            },
            duration: laps * 2.0 * std::f64::consts::PI * radius / speed,
        }
    }

    pub fn hover(duration: f64) -> Self {
        Scenario {
            id: format!("hover-{duration}s"),
            reference: ReferenceKind::Hover {
                position: Vector3::new(0.0, 0.0, 1.0),
            },
            duration,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOptions {
    pub dt: f64,
    pub controller: ControllerConfig,
    pub seed: u64,
    /// Half-width of the uniform initial position perturbation, m.
    pub initial_jitter: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            dt: DEFAULT_DT,
            controller: ControllerConfig::default(),
            seed: 0,
            initial_jitter: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("abstraction failed: {0}")]
    Abstraction(String),
    #[error("allocator setup failed: {0}")]
    Allocator(#[from] AllocationError),
    #[error("controller setup failed: {0}")]
    Controller(#[from] ApcError),
    #[error("malformed log: {0}")]
    Log(String),
}

/// One logged step: state at `t` and the wrench applied over [t, t + dt).
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub t: f64,
    pub state: RigidState,
    /// Wrench recomposed from the allocated rotor forces.
    pub u: WrenchCommand,
    pub f: Vec<f64>,
    pub alloc_feasible: bool,
    pub alloc_iters: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub mean_abs_position_error: f64,
    pub max_position_error: f64,
    pub mean_abs_attitude_error_deg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SolveTiming {
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimFailure {
    pub step: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub scenario: Scenario,
    pub mode: AbstractionMode,
    pub config_digest: String,
    pub seed: u64,
    pub controller: ControllerConfig,
    pub virtual_quad: VirtualQuadrotor,
    pub bounds: WrenchBounds,
    pub rows: Vec<LogRow>,
    pub metrics: Metrics,
    pub timing: SolveTiming,
    pub infeasible_steps: usize,
    pub failure: Option<SimFailure>,
}

/// SHA-256 of the canonical configuration JSON, hex encoded.
pub fn config_digest(config: &MarsConfig) -> String {
    let hash = Sha256::digest(config_to_json(config).as_bytes());
    hash.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

pub fn build_virtual(config: &MarsConfig, mode: AbstractionMode) -> Result<VirtualQuadrotor, SimError> {
    match mode {
        AbstractionMode::Equal => equal_arm_abstraction(config, &TorqueBalanceWeights::default())
            .map(|a| a.to_virtual())
            .map_err(|e| SimError::Abstraction(e.to_string())),
        AbstractionMode::Unequal => unequal_arm_abstraction(config, Containment::RotorLevel)
            .map(|a| a.to_virtual())
            .map_err(|e| SimError::Abstraction(e.to_string())),
    }
}

pub fn body_params(config: &MarsConfig, vq: &VirtualQuadrotor) -> Result<BodyParams, SimError> {
    BodyParams::new(vq.mass, vq.inertia, config.gravity()).map_err(|e| SimError::Abstraction(e.to_string()))
}

fn position_error(row: &LogRow, reference: &ReferenceKind) -> f64 {
    (row.state.p - reference.sample(row.t).p).norm()
}

fn attitude_error_deg(row: &LogRow, reference: &ReferenceKind) -> f64 {
    let q_ref = reference.sample(row.t).q;
    let rel: Quaternion<f64> = q_ref.conjugate() * row.state.q;
    let w = (rel.w.abs() / rel.norm()).min(1.0);
    2.0 * w.acos().to_degrees()
}

/// Accumulates metrics row by row in a fixed order.
#[derive(Debug, Clone, Default)]
struct MetricAccumulator {
    n: usize,
    pos_sum: f64,
    pos_max: f64,
    att_sum: f64,
}

impl MetricAccumulator {
    fn push(&mut self, row: &LogRow, reference: &ReferenceKind) {
        let e = position_error(row, reference);
        self.n += 1;
        self.pos_sum += e;
        self.pos_max = self.pos_max.max(e);
        self.att_sum += attitude_error_deg(row, reference);
    }

    fn finish(&self) -> Metrics {
        let n = self.n.max(1) as f64;
        Metrics {
            mean_abs_position_error: self.pos_sum / n,
            max_position_error: self.pos_max,
            mean_abs_attitude_error_deg: self.att_sum / n,
        }
    }
}

pub fn compute_metrics(rows: &[LogRow], reference: &ReferenceKind) -> Metrics {
    let mut acc = MetricAccumulator::default();
    for r in rows {
        acc.push(r, reference);
    }
    acc.finish()
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}

pub fn run_simulation(
    config: &MarsConfig,
    mode: AbstractionMode,
    scenario: &Scenario,
    options: &SimOptions,
) -> Result<RunReport, SimError> {
    scenario
        .reference
        .validate()
        .map_err(|e| SimError::InvalidScenario(e.to_string()))?;
    if !(scenario.duration >= 0.0 && scenario.duration.is_finite()) {
        return Err(SimError::InvalidScenario("duration must be nonnegative".into()));
    }
    if !(options.dt > 0.0 && options.dt <= 0.05) {
        return Err(SimError::InvalidScenario("dt must lie in (0, 0.05]".into()));
    }
    options.controller.weights.validate()?;
    options.controller.settings.validate()?;

    let vq = build_virtual(config, mode)?;
    let body = body_params(config, &vq)?;
    let bounds = actuator_bounds(&vq.effectiveness, vq.f_sum_min, vq.f_sum_max);
    let mut allocator = Allocator::for_config(config, vq.yaw)?;
    let ctrl = &options.controller;

    let steps = (scenario.duration / options.dt).round() as usize;
    let mut x = scenario.reference.sample(0.0);
    if options.initial_jitter > 0.0 {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(options.seed);
        let j = options.initial_jitter;
        x.p += Vector3::new(
            rng.random_range(-j..=j),
            rng.random_range(-j..=j),
            rng.random_range(-j..=j),
        );
    }

    let mut rows = Vec::with_capacity(steps + 1);
    let mut acc = MetricAccumulator::default();
    let mut times = Vec::with_capacity(steps + 1);
    let mut warm: Option<Vec<InputVector>> = None;
    let mut infeasible_steps = 0;
    let mut failure = None;

    for k in 0..=steps {
        let t = k as f64 * options.dt;
        let window = generate_reference(&scenario.reference, t, &ctrl.settings);
        let start = Instant::now();
        let sol = match solve_apc(
            &x,
            &window,
            &body,
            &ctrl.weights,
            &bounds,
            &ctrl.settings,
            warm.as_deref(),
        ) {
            Ok(s) => s,
            Err(e) => {
                failure = Some(SimFailure {
                    step: k,
                    message: format!("controller: {e}"),
                });
                break;
            }
        };
        let (alloc, feasible) = match allocator.allocate(&sol.u0.to_vector()) {
            Ok(a) => (a, true),
            Err(AllocationError::InfeasibleWrench(fb)) => {
                infeasible_steps += 1;
                (*fb, false)
            }
            Err(e) => {
                failure = Some(SimFailure {
                    step: k,
                    message: format!("allocator: {e}"),
                });
                break;
            }
        };
        times.push(start.elapsed().as_secs_f64() * 1e3);
        let applied = recompose(&per_unit_commands(&alloc.f, config), config, vq.yaw);
        let row = LogRow {
            t,
            state: x,
            u: applied,
            f: alloc.f.iter().copied().collect(),
            alloc_feasible: feasible,
            alloc_iters: alloc.diagnostics.iterations,
        };
        acc.push(&row, &scenario.reference);
        rows.push(row);
        warm = Some(sol.inputs);
        if k == steps {
            break;
        }
        x = match step(&x, &applied, &body, options.dt) {
            Ok(next) if next.is_finite() => next,
            _ => {
                failure = Some(SimFailure {
                    step: k,
                    message: "non-finite state".into(),
                });
                break;
            }
        };
    }

    times.sort_by(f64::total_cmp);
    Ok(RunReport {
        scenario: scenario.clone(),
        mode,
        config_digest: config_digest(config),
        seed: options.seed,
        controller: *ctrl,
        virtual_quad: vq,
        bounds,
        metrics: acc.finish(),
        timing: SolveTiming {
            p50_ms: percentile(&times, 0.5),
            p95_ms: percentile(&times, 0.95),
            max_ms: times.last().copied().unwrap_or(0.0),
        },
        rows,
        infeasible_steps,
        failure,
    })
}

/// Column names for `n_rotors` rotor forces.
pub fn csv_columns(n_rotors: usize) -> Vec<String> {
    let mut cols: Vec<String> = [
        "t", "px", "py", "pz", "qw", "qx", "qy", "qz", "vx", "vy", "vz", "wx", "wy", "wz", "F", "Mx", "My", "Mz",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    cols.extend((1..=n_rotors).map(|i| format!("f_{i}")));
    cols.push("alloc_feasible".into());
    cols.push("alloc_iters".into());
    cols
}

pub fn write_csv(report: &RunReport) -> String {
    let n_rotors = report.rows.first().map_or(0, |r| r.f.len());
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# mars-sim csv {CSV_VERSION} scenario={} mode={} digest={} seed={}",
        report.scenario.id,
        report.mode.name(),
        report.config_digest,
        report.seed
    );
    out.push_str(&csv_columns(n_rotors).join(","));
    out.push('\n');
    for r in &report.rows {
        let s = &r.state;
        let vals = [
            r.t, s.p.x, s.p.y, s.p.z, s.q.w, s.q.i, s.q.j, s.q.k, s.v.x, s.v.y, s.v.z, s.w.x, s.w.y, s.w.z, r.u.f,
            r.u.m.x, r.u.m.y, r.u.m.z,
        ];
        let mut line = vals.iter().map(|v| v.to_string()).collect::<Vec<_>>();
        line.extend(r.f.iter().map(|v| v.to_string()));
        line.push(u8::from(r.alloc_feasible).to_string());
        line.push(r.alloc_iters.to_string());
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn read_csv(text: &str) -> Result<Vec<LogRow>, SimError> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| SimError::Log("missing header".into()))?
        .split(',')
        .collect();
    let n_rotors = header
        .len()
        .checked_sub(20)
        .ok_or_else(|| SimError::Log("too few columns".into()))?;
    if header != csv_columns(n_rotors) {
        return Err(SimError::Log("unexpected column layout".into()));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != header.len() {
            return Err(SimError::Log(format!("row {i}: {} cells", cells.len())));
        }
        let num = |j: usize| -> Result<f64, SimError> {
            cells[j]
                .parse::<f64>()
                .map_err(|e| SimError::Log(format!("row {i} col {}: {e}", header[j])))
        };
        let v = (0..18 + n_rotors).map(num).collect::<Result<Vec<f64>, _>>()?;
        rows.push(LogRow {
            t: v[0],
            state: RigidState {
                p: Vector3::new(v[1], v[2], v[3]),
                q: Quaternion::new(v[4], v[5], v[6], v[7]),
                v: Vector3::new(v[8], v[9], v[10]),
                w: Vector3::new(v[11], v[12], v[13]),
            },
            u: WrenchCommand::new(v[14], Vector3::new(v[15], v[16], v[17])),
            f: v[18..].to_vec(),
            alloc_feasible: cells[18 + n_rotors] == "1",
            alloc_iters: cells[19 + n_rotors]
                .parse()
                .map_err(|e| SimError::Log(format!("row {i}: {e}")))?,
        });
    }
    Ok(rows)
}

/// Re-integrates the logged wrench sequence open-loop from the first state.
pub fn replay(rows: &[LogRow], body: &BodyParams, dt: f64) -> Vec<RigidState> {
    let mut out = Vec::with_capacity(rows.len());
    let Some(first) = rows.first() else {
        return out;
    };
    let mut x = first.state;
    out.push(x);
    for r in &rows[..rows.len() - 1] {
        x = step(&x, &r.u, body, dt).unwrap_or(x);
        out.push(x);
    }
    out
}

/// Rotor forces of a row as a vector (for re-checking allocation).
pub fn row_forces(row: &LogRow) -> DVector<f64> {
    DVector::from_vec(row.f.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_grid_config, UnitSpec};

    fn unit() -> MarsConfig {
        build_grid_config(1, 1, 0.65, &UnitSpec::reference_unit()).unwrap()
    }

    #[test]
    fn short_hover_run_logs_expected_rows() {
        let rep = run_simulation(
            &unit(),
            AbstractionMode::Equal,
            &Scenario::hover(0.1),
            &SimOptions::default(),
        )
        .unwrap();
        assert!(rep.failure.is_none());
        assert_eq!(rep.rows.len(), 51);
        assert!(rep.metrics.mean_abs_position_error < 1e-9);
        assert_eq!(rep.config_digest.len(), 64);
    }

    #[test]
    fn metrics_of_constant_offset() {
        let reference = ReferenceKind::Hover {
            position: Vector3::zeros(),
        };
        let rows: Vec<LogRow> = (0..5)
            .map(|k| LogRow {
                t: k as f64 * 0.002,
                state: RigidState::at_rest(Vector3::new(0.1, 0.0, 0.0)),
                u: WrenchCommand::new(0.0, Vector3::zeros()),
                f: vec![0.0; 4],
                alloc_feasible: true,
                alloc_iters: 0,
            })
            .collect();
        let m = compute_metrics(&rows, &reference);
        assert!((m.mean_abs_position_error - 0.1).abs() < 1e-15);
        assert_eq!(m.max_position_error, 0.1);
        assert_eq!(m.mean_abs_attitude_error_deg, 0.0);
        let on_ref: Vec<LogRow> = rows
            .iter()
            .map(|r| LogRow {
                state: RigidState::at_rest(Vector3::zeros()),
                ..r.clone()
            })
            .collect();
        assert_eq!(compute_metrics(&on_ref, &reference).max_position_error, 0.0);
    }

    #[test]
    fn csv_round_trip_and_replay() {
        let sc = Scenario {
            id: "circle-short".into(),
            reference: ReferenceKind::Circle {
                radius: 1.5,
                speed: 1.0,
                height: 1.0,
            },
            duration: 0.2,
        };
        let opts = SimOptions {
            initial_jitter: 0.05,
            seed: 9,
            ..Default::default()
        };
        let rep = run_simulation(&unit(), AbstractionMode::Equal, &sc, &opts).unwrap();
        let csv = write_csv(&rep);
        assert!(csv.starts_with("# mars-sim csv v1"));
        let rows = read_csv(&csv).unwrap();
        assert_eq!(rows, rep.rows);
        assert_eq!(compute_metrics(&rows, &sc.reference), rep.metrics);
        let body = body_params(&unit(), &rep.virtual_quad).unwrap();
        for (a, b) in replay(&rows, &body, 0.002).iter().zip(&rows) {
            assert!((a.to_vector() - b.state.to_vector()).amax() < 1e-9);
        }
        // determinism
        let again = run_simulation(&unit(), AbstractionMode::Equal, &sc, &opts).unwrap();
        assert_eq!(write_csv(&again), csv);
    }

    #[test]
    fn invalid_scenario_rejected() {
        let sc = Scenario {
            id: "bad".into(),
            reference: ReferenceKind::Circle {
                radius: -1.0,
                speed: 1.0,
                height: 1.0,
            },
            duration: 1.0,
        };
        assert!(matches!(
            run_simulation(&unit(), AbstractionMode::Equal, &sc, &SimOptions::default()),
            Err(SimError::InvalidScenario(_))
        ));
    }
}
