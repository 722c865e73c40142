//! Model abstraction, control and allocation for modular aerial robot systems
//! (MARS): several quadrotor units rigidly docked into one flying assembly.
//!
//! The crate is organised bottom-up:
//!
//! - [`geometry`]: assembly data model, configuration loading, mass properties.
//! - [`equal_arm`]: ×-shaped virtual quadrotor with exact grouped-torque
//!   equivalence and an optimised yaw offset.
//! - [`unequal_arm`]: virtual quadrotor whose wrench vertices are contained in
//!   the assembly's feasible wrench polytope, plus the approximation error.
//! - [`dynamics`]: quaternion rigid-body model and RK4 integrator.
//! - [`apc`]: receding-horizon tracking controller on the virtual model.
//! - [`allocation`]: minimum-variance rotor force allocation.
//! - [`magnetics`]: dipole field model and layer-wise magnet arrangement search.
//! - [`sim`]: closed-loop runs, metrics and CSV logging.
//! - [`bench`]: allocator latency measurements.
//!
//! [`lp`] and [`qp`] hold the dense solvers shared by the modules above.

pub mod allocation;
pub mod apc;
pub mod bench;
pub mod dynamics;
pub mod equal_arm;
pub mod geometry;
pub mod lp;
pub mod magnetics;
pub mod qp;
pub mod sim;
pub mod unequal_arm;
pub mod virtual_quad;

pub use geometry::{MarsConfig, PayloadSpec, RotorSpec, UnitSpec};
pub use virtual_quad::VirtualQuadrotor;
