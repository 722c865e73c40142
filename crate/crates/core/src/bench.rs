//! Allocator latency measurement over grids of increasing size.

use std::time::Instant;

use nalgebra::Vector4;
use rand::{Rng, SeedableRng};

use crate::allocation::{AllocationError, Allocator};
use crate::geometry::{build_grid_config, ConfigError, MarsConfig, UnitSpec};

/// Unit counts reported by default.
pub const DEFAULT_SIZES: [usize; 7] = [1, 2, 4, 8, 16, 32, 50];
pub const DEFAULT_SOLVES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyRow {
    pub n_units: usize,
    pub n_rotors: usize,
    pub solves: usize,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
    /// Solves that fell back to the torque-scaled allocation.
    pub infeasible: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Allocation(#[from] AllocationError),
}

/// Grid with `n` units, as close to square as its divisors allow.
pub fn near_square_grid(n: usize, template: &UnitSpec) -> Result<MarsConfig, ConfigError> {
    let rows = (1..=n)
        .take_while(|r| r * r <= n)
        .filter(|r| n.is_multiple_of(*r))
        .last()
        .unwrap_or(1);
    build_grid_config(rows, n / rows.max(1), 0.65, template)
}

/// Median warm-started solve time over a slowly varying hover-and-manoeuvre
/// wrench sequence.
pub fn allocator_latency(n_units: usize, solves: usize, seed: u64) -> Result<LatencyRow, BenchError> {
    let config = near_square_grid(n_units, &UnitSpec::reference_unit())?;
    let mut alloc = Allocator::for_config(&config, 0.0)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let phase: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..std::f64::consts::TAU));
    let hover = config.total_mass() * config.gravity();
    let torque = 0.3 * n_units as f64;

    let mut times = Vec::with_capacity(solves);
    let mut infeasible = 0;
    for k in 0..solves {
        let s = k as f64 * 0.02;
        let u = Vector4::new(
            hover * (1.0 + 0.1 * (s + phase[0]).sin()),
            torque * (1.3 * s + phase[1]).sin(),
            torque * (0.7 * s + phase[2]).cos(),
            0.05 * torque * (0.5 * s).sin(),
        );
        let start = Instant::now();
        match alloc.allocate(&u) {
            Ok(_) => {}
            Err(AllocationError::InfeasibleWrench(_)) => infeasible += 1,
            Err(e) => return Err(e.into()),
        }
        times.push(start.elapsed().as_secs_f64() * 1e3);
    }
    times.sort_by(f64::total_cmp);
    let at = |q: f64| {
        times
            .get(((times.len().max(1) - 1) as f64 * q).round() as usize)
            .copied()
            .unwrap_or(0.0)
    };
    Ok(LatencyRow {
        n_units,
        n_rotors: config.n_rotors(),
        solves,
        median_ms: at(0.5),
        p95_ms: at(0.95),
        max_ms: times.last().copied().unwrap_or(0.0),
        infeasible,
    })
}
