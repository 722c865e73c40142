//! `mars` — abstraction, simulation, allocation, magnet search and
//! allocator benchmarks from the command line.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::{Vector3, Vector4};

use mars_core::allocation::{per_unit_commands, AllocationError, Allocator};
use mars_core::apc::{ControllerConfig, ReferenceKind};
use mars_core::bench::{allocator_latency, DEFAULT_SIZES, DEFAULT_SOLVES};
use mars_core::equal_arm::{equal_arm_abstraction, TorqueBalanceWeights};
use mars_core::geometry::{build_grid_config, load_config_document, MarsConfig, UnitSpec};
use mars_core::magnetics::{
    docking_lattice, field_objective, optimize_arrangement_with_moment, optimize_full, MagnetArrangement, MagnetError,
    ObservationSet, OptimizationResult, OBSERVATION_POINTS_PER_LAYER,
};
use mars_core::sim::{config_digest, run_simulation, write_csv, AbstractionMode, RunReport, Scenario, SimOptions};
use mars_core::unequal_arm::{approximation_error, unequal_arm_abstraction, Containment, UnequalArmError};
use mars_core::VirtualQuadrotor;

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Solver(String),
    #[error("{0}")]
    Infeasible(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Infeasible(_) => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Report,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Equal,
    Unequal,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScenarioKind {
    Circle,
    Hover,
    Line,
    Figure8,
}

#[derive(Debug, Parser)]
#[command(
    name = "mars",
    version,
    about = "Virtual-quadrotor tools for docked multi-quadrotor assemblies"
)]
struct Cli {
    /// JSON assembly configuration. Defaults to a grid of reference units.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Grid of reference units, COLSxROWS (x by y), used when no --config is given.
    #[arg(long, global = true, default_value = "1x1")]
    grid: String,
    /// Write output files here instead of printing to stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, value_enum, default_value_t = Format::Report)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the virtual quadrotor of an assembly.
    Abstract {
        #[arg(long, value_enum, default_value_t = Mode::Both)]
        mode: Mode,
    },
    /// Closed-loop run on the abstracted model.
    Simulate {
        #[arg(long, value_enum, default_value_t = Mode::Equal)]
        mode: Mode,
        #[arg(long, value_enum, default_value_t = ScenarioKind::Circle)]
        scenario: ScenarioKind,
        /// Circle laps; ignored when --duration is given.
        #[arg(long, default_value_t = 10.0)]
        laps: f64,
        /// Run length in seconds.
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long, default_value_t = 1.5)]
        radius: f64,
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        #[arg(long, default_value_t = 1.0)]
        height: f64,
        /// Uniform initial position perturbation half-width, m.
        #[arg(long, default_value_t = 0.0)]
        jitter: f64,
        #[arg(long, default_value_t = 0.002)]
        dt: f64,
    },
    /// Allocate one wrench to rotor forces.
    Allocate {
        /// F,Mx,My,Mz in N and N·m.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        wrench: Vec<f64>,
        /// Yaw of the body frame the wrench is expressed in, rad.
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        yaw: f64,
    },
    /// Layer-wise docking magnet arrangement search.
    Magnets {
        #[arg(long, default_value_t = 7)]
        layers: usize,
        #[arg(long, default_value_t = 14)]
        per_layer: usize,
        #[arg(long, default_value_t = 0.02)]
        radius: f64,
        #[arg(long, default_value_t = 0.008)]
        pitch: f64,
        /// Moment magnitude, A·m².
        #[arg(long, default_value_t = 1.0)]
        moment: f64,
        /// Stop adding layers once the objective reaches this value, T.
        #[arg(long)]
        target: Option<f64>,
    },
    /// Allocator latency versus assembly size.
    Bench {
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SIZES.to_vec())]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = DEFAULT_SOLVES)]
        solves: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Abstract { mode } => cmd_abstract(cli, *mode),
        Command::Simulate {
            mode,
            scenario,
            laps,
            duration,
            radius,
            speed,
            height,
            jitter,
            dt,
        } => {
            let reference = match scenario {
                ScenarioKind::Circle => ReferenceKind::Circle {
                    radius: *radius,
                    speed: *speed,
                    height: *height,
                },
                ScenarioKind::Hover => ReferenceKind::Hover {
                    position: Vector3::new(0.0, 0.0, *height),
                },
                ScenarioKind::Line => ReferenceKind::Line {
                    start: Vector3::new(0.0, 0.0, *height),
                    velocity: Vector3::new(*speed, 0.0, 0.0),
                },
                ScenarioKind::Figure8 => ReferenceKind::Figure8 {
                    amplitude: *radius,
                    speed: *speed,
                    height: *height,
                },
            };
            let duration = match (duration, scenario) {
                (Some(d), _) => *d,
                (None, ScenarioKind::Circle) => laps * std::f64::consts::TAU * radius / speed.max(f64::MIN_POSITIVE),
                (None, _) => 10.0,
            };
            let id = format!("{scenario:?}-{duration}s").to_lowercase();
            let scenario = Scenario {
                id,
                reference,
                duration,
            };
            cmd_simulate(cli, *mode, &scenario, *jitter, *dt)
        }
        Command::Allocate { wrench, yaw } => cmd_allocate(cli, wrench, *yaw),
        Command::Magnets {
            layers,
            per_layer,
            radius,
            pitch,
            moment,
            target,
        } => cmd_magnets(cli, *layers, *per_layer, *radius, *pitch, *moment, *target),
        Command::Bench { sizes, solves } => cmd_bench(cli, sizes, *solves),
    }
}

fn load(cli: &Cli) -> Result<(MarsConfig, ControllerConfig), CliError> {
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
        let (config, ctrl) = load_config_document(&text).map_err(|e| CliError::Validation(e.to_string()))?;
        let ctrl = ControllerConfig::from_value(ctrl.as_ref()).map_err(|e| CliError::Validation(e.to_string()))?;
        return Ok((config, ctrl));
    }
    let (cols, rows) = cli
        .grid
        .split_once(['x', 'X'])
        .and_then(|(r, c)| Some((r.trim().parse().ok()?, c.trim().parse().ok()?)))
        .ok_or_else(|| CliError::Validation(format!("--grid expects COLSxROWS, got `{}`", cli.grid)))?;
    let config = build_grid_config(rows, cols, 0.65, &UnitSpec::reference_unit())
        .map_err(|e| CliError::Validation(e.to_string()))?;
    Ok((config, ControllerConfig::default()))
}

fn emit(cli: &Cli, stem: &str, content: &str) -> Result<(), CliError> {
    match &cli.out {
        None => {
            print!("{content}");
            Ok(())
        }
        Some(dir) => {
            let ext = match cli.format {
                Format::Csv => "csv",
                Format::Report => "txt",
            };
            std::fs::create_dir_all(dir)
                .and_then(|_| std::fs::write(dir.join(format!("{stem}.{ext}")), content))
                .map_err(|e| CliError::Validation(format!("cannot write to {}: {e}", dir.display())))
        }
    }
}

fn modes(mode: Mode) -> Vec<AbstractionMode> {
    match mode {
        Mode::Equal => vec![AbstractionMode::Equal],
        Mode::Unequal => vec![AbstractionMode::Unequal],
        Mode::Both => vec![AbstractionMode::Equal, AbstractionMode::Unequal],
    }
}

fn cmd_abstract(cli: &Cli, mode: Mode) -> Result<(), CliError> {
    let (config, _) = load(cli)?;
    let mut quads: Vec<(AbstractionMode, VirtualQuadrotor, Option<String>)> = Vec::new();
    for m in modes(mode) {
        match m {
            AbstractionMode::Equal => {
                let a = equal_arm_abstraction(&config, &TorqueBalanceWeights::default())
                    .map_err(|e| CliError::Validation(e.to_string()))?;
                quads.push((m, a.to_virtual(), None));
            }
            AbstractionMode::Unequal => {
                let a = unequal_arm_abstraction(&config, Containment::RotorLevel).map_err(|e| match e {
                    UnequalArmError::Infeasible { .. } => CliError::Infeasible(e.to_string()),
                    UnequalArmError::TooManyUnits { .. } => CliError::Validation(e.to_string()),
                    UnequalArmError::Solver(_) => CliError::Solver(e.to_string()),
                })?;
                let err = approximation_error(&a, &config);
                let axes: Vec<String> = err
                    .per_axis
                    .iter()
                    .map(|v| v.map_or("undefined".into(), |x| format!("{x:.6}")))
                    .collect();
                let note = format!(
                    "approximation error mean {:.6} (x+, x-, y+, y-: {})",
                    err.mean_abs,
                    axes.join(", ")
                );
                quads.push((m, a.to_virtual(), Some(note)));
            }
        }
    }

    let mut out = String::new();
    match cli.format {
        Format::Csv => {
            let _ = writeln!(out, "# mars-abstract v1 digest={}", config_digest(&config));
            out.push_str("mode,yaw,c_vz,mass,f_sum_min,f_sum_max,cx,cy,cz,r1x,r1y,r2x,r2y,r3x,r3y,r4x,r4y\n");
            for (m, q, _) in &quads {
                let mut vals = vec![
                    q.yaw,
                    q.c_vz,
                    q.mass,
                    q.f_sum_min,
                    q.f_sum_max,
                    q.centroid.x,
                    q.centroid.y,
                    q.centroid.z,
                ];
                vals.extend(q.rotors.iter().flat_map(|r| [r.x, r.y]));
                let vals: Vec<String> = vals.iter().map(|v| v.to_string()).collect();
                let _ = writeln!(out, "{},{}", m.name(), vals.join(","));
            }
        }
        Format::Report => {
            let _ = writeln!(
                out,
                "assembly: {} units, {} rotors, mass {:.4} kg",
                config.n_units(),
                config.n_rotors(),
                config.total_mass()
            );
            let c = config.centroid();
            let _ = writeln!(out, "centroid: ({:.6}, {:.6}, {:.6}) m", c.x, c.y, c.z);
            for (m, q, note) in &quads {
                let _ = writeln!(out, "\n[{}]", m.name());
                let _ = writeln!(out, "yaw offset: {:.6} rad ({:.3} deg)", q.yaw, q.yaw.to_degrees());
                for (j, r) in q.rotors.iter().enumerate() {
                    let _ = writeln!(out, "rotor {}: ({:+.6}, {:+.6}) m", j + 1, r.x, r.y);
                }
                let _ = writeln!(out, "c_vz: {:.6} m", q.c_vz);
                let _ = writeln!(out, "thrust range: [{:.3}, {:.3}] N", q.f_sum_min, q.f_sum_max);
                let _ = write!(out, "effectiveness:{}", q.effectiveness);
                if let Some(n) = note {
                    let _ = writeln!(out, "{n}");
                }
            }
        }
    }
    emit(cli, "abstract", &out)
}

fn cmd_simulate(cli: &Cli, mode: Mode, scenario: &Scenario, jitter: f64, dt: f64) -> Result<(), CliError> {
    let (config, controller) = load(cli)?;
    let mode = match mode {
        Mode::Equal => AbstractionMode::Equal,
        Mode::Unequal => AbstractionMode::Unequal,
        Mode::Both => return Err(CliError::Validation("simulate takes --mode equal or unequal".into())),
    };
    let options = SimOptions {
        dt,
        controller,
        seed: cli.seed,
        initial_jitter: jitter,
    };
    let report = run_simulation(&config, mode, scenario, &options).map_err(|e| match e {
        mars_core::sim::SimError::InvalidScenario(_) | mars_core::sim::SimError::Controller(_) => {
            CliError::Validation(e.to_string())
        }
        mars_core::sim::SimError::Abstraction(msg) if msg.contains("infeasible") => CliError::Infeasible(msg),
        other => CliError::Solver(other.to_string()),
    })?;
    let text = match cli.format {
        Format::Csv => write_csv(&report),
        Format::Report => summary(&report),
    };
    emit(cli, "simulate", &text)?;
    if let Some(f) = &report.failure {
        return Err(CliError::Solver(format!(
            "run stopped at step {}: {}",
            f.step, f.message
        )));
    }
    if report.infeasible_steps > 0 {
        return Err(CliError::Infeasible(format!(
            "{} infeasible-wrench steps",
            report.infeasible_steps
        )));
    }
    Ok(())
}

fn summary(r: &RunReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "scenario: {}", r.scenario.id);
    let _ = writeln!(s, "mode: {}", r.mode.name());
    let _ = writeln!(s, "config digest: {}", r.config_digest);
    let _ = writeln!(s, "seed: {}", r.seed);
    let _ = writeln!(s, "rows: {}", r.rows.len());
    let _ = writeln!(s, "mean abs position error: {:.6} m", r.metrics.mean_abs_position_error);
    let _ = writeln!(s, "max position error: {:.6} m", r.metrics.max_position_error);
    let _ = writeln!(
        s,
        "mean abs attitude error: {:.4} deg",
        r.metrics.mean_abs_attitude_error_deg
    );
    let _ = writeln!(
        s,
        "solve time p50/p95/max: {:.3}/{:.3}/{:.3} ms",
        r.timing.p50_ms, r.timing.p95_ms, r.timing.max_ms
    );
    let _ = writeln!(s, "infeasible-wrench steps: {}", r.infeasible_steps);
    if let Some(f) = &r.failure {
        let _ = writeln!(s, "failure at step {}: {}", f.step, f.message);
    }
    s
}

fn cmd_allocate(cli: &Cli, wrench: &[f64], yaw: f64) -> Result<(), CliError> {
    let (config, _) = load(cli)?;
    if wrench.len() != 4 {
        return Err(CliError::Validation("--wrench expects F,Mx,My,Mz".into()));
    }
    let u = Vector4::from_column_slice(wrench);
    let mut alloc = Allocator::for_config(&config, yaw).map_err(|e| CliError::Validation(e.to_string()))?;
    let (result, feasible) = match alloc.allocate(&u) {
        Ok(a) => (a, true),
        Err(AllocationError::InfeasibleWrench(fb)) => (*fb, false),
        Err(e @ AllocationError::Dimension(_)) => return Err(CliError::Validation(e.to_string())),
        Err(e) => return Err(CliError::Solver(e.to_string())),
    };
    let d = &result.diagnostics;
    let mut out = String::new();
    match cli.format {
        Format::Csv => {
            let _ = writeln!(
                out,
                "# mars-allocate v1 feasible={} residual={:e} variance={} iterations={} torque_scale={}",
                u8::from(feasible),
                d.residual.amax(),
                d.variance,
                d.iterations,
                d.torque_scale
            );
            out.push_str("rotor,unit,f\n");
            for (k, f) in result.f.iter().enumerate() {
                let _ = writeln!(out, "{},{},{}", k + 1, k / 4 + 1, f);
            }
        }
        Format::Report => {
            let _ = writeln!(out, "feasible: {feasible}");
            let _ = writeln!(out, "residual: {:.3e}", d.residual.amax());
            let _ = writeln!(out, "variance: {:.6}", d.variance);
            let _ = writeln!(out, "iterations: {}", d.iterations);
            if !feasible {
                let _ = writeln!(out, "torque scale: {:.6}", d.torque_scale);
            }
            for (i, cmd) in per_unit_commands(&result.f, &config).iter().enumerate() {
                let fs: Vec<String> = (0..4).map(|j| format!("{:.4}", result.f[4 * i + j])).collect();
                let _ = writeln!(
                    out,
                    "unit {}: f = [{}], thrust {:.4} N, torque ({:+.4}, {:+.4}, {:+.4}) N·m",
                    i + 1,
                    fs.join(", "),
                    cmd.f,
                    cmd.m.x,
                    cmd.m.y,
                    cmd.m.z
                );
            }
        }
    }
    emit(cli, "allocate", &out)?;
    if feasible {
        Ok(())
    } else {
        Err(CliError::Infeasible(
            "wrench outside the attainable set; torque-scaled fallback reported".into(),
        ))
    }
}

fn cmd_magnets(
    cli: &Cli,
    layers: usize,
    per_layer: usize,
    radius: f64,
    pitch: f64,
    moment: f64,
    target: Option<f64>,
) -> Result<(), CliError> {
    if !(moment.is_finite() && moment > 0.0) {
        return Err(CliError::Validation("--moment must be positive".into()));
    }
    let lattice = docking_lattice(layers, per_layer, radius, pitch).map_err(|e| CliError::Validation(e.to_string()))?;
    let obs = ObservationSet::near_surface(&lattice, OBSERVATION_POINTS_PER_LAYER)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let (result, unreachable) = match target {
        None => (optimize_full(&lattice, &obs, moment, cli.seed), None),
        Some(t) => match optimize_arrangement_with_moment(&lattice, &obs, t, moment, cli.seed) {
            Err(MagnetError::TargetUnreachable { result, .. }) => (Ok(*result), Some(t)),
            other => (other, None),
        },
    };
    let result: OptimizationResult = result.map_err(|e| CliError::Solver(e.to_string()))?;
    let baseline = MagnetArrangement::uniform(&lattice, result.arrangement.layers, moment);
    let base = field_objective(&baseline.magnets, &obs).map_err(|e| CliError::Solver(e.to_string()))?;

    let mut out = String::new();
    match cli.format {
        Format::Csv => {
            let _ = writeln!(out, "# mars-magnets v1 arrangement seed={}", cli.seed);
            out.push_str("layer,index,group,x,y,z,mx,my,mz\n");
            let k = lattice.magnets_per_layer;
            for (i, m) in result.arrangement.magnets.iter().enumerate() {
                let group = if (i % k) % 2 == 0 { "A" } else { "B" };
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{}",
                    i / k + 1,
                    i % k,
                    group,
                    m.position.x,
                    m.position.y,
                    m.position.z,
                    m.moment.x,
                    m.moment.y,
                    m.moment.z
                );
            }
            let _ = writeln!(out, "# mars-magnets v1 history");
            out.push_str("layers,objective\n");
            for (l, v) in result.history.iter().enumerate() {
                let _ = writeln!(out, "{},{}", l + 1, v);
            }
        }
        Format::Report => {
            let _ = writeln!(out, "layers used: {}", result.arrangement.layers);
            let axes: Vec<&str> = result.arrangement.axes.iter().map(|a| a.label()).collect();
            let _ = writeln!(out, "group A axis per layer: {}", axes.join(" "));
            let _ = writeln!(out, "objective: {:.6e} T", result.objective);
            let _ = writeln!(out, "uniform +z baseline: {:.6e} T", base);
            let _ = writeln!(
                out,
                "gain over baseline: {:.2}%",
                100.0 * (result.objective / base - 1.0)
            );
            let _ = writeln!(out, "superposed field strength: {:.6e} T", result.superposed);
            for (l, v) in result.history.iter().enumerate() {
                let _ = writeln!(out, "L={}: {:.6e} T", l + 1, v);
            }
        }
    }
    emit(cli, "magnets", &out)?;
    match unreachable {
        Some(t) => Err(CliError::Infeasible(format!(
            "target {t:e} T not reached with {} layers (best {:e} T)",
            result.arrangement.layers, result.objective
        ))),
        None => Ok(()),
    }
}

fn cmd_bench(cli: &Cli, sizes: &[usize], solves: usize) -> Result<(), CliError> {
    if sizes.is_empty() || sizes.contains(&0) || solves == 0 {
        return Err(CliError::Validation("sizes and solves must be positive".into()));
    }
    let mut out = String::new();
    match cli.format {
        Format::Csv => out.push_str("n_units,n_rotors,solves,median_ms,p95_ms,max_ms,infeasible\n"),
        Format::Report => out.push_str("units  rotors  median ms   p95 ms   max ms  infeasible\n"),
    }
    for &n in sizes {
        let r = allocator_latency(n, solves, cli.seed).map_err(|e| CliError::Solver(e.to_string()))?;
        match cli.format {
            Format::Csv => {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    r.n_units, r.n_rotors, r.solves, r.median_ms, r.p95_ms, r.max_ms, r.infeasible
                );
            }
            Format::Report => {
                let _ = writeln!(
                    out,
                    "{:5}  {:6}  {:9.4}  {:7.4}  {:7.4}  {:10}",
                    r.n_units, r.n_rotors, r.median_ms, r.p95_ms, r.max_ms, r.infeasible
                );
            }
        }
    }
    emit(cli, "bench", &out)
}
