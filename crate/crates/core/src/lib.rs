//! Simulation and verification of simple hybrid mechanical systems with
//! symmetry.
//!
//! The library integrates mechanical Hamiltonian dynamics between impacts,
//! resolves elastic impacts by the variational corner conditions, computes
//! momentum maps and the mechanical connection of an abelian principal
//! bundle, classifies switching surfaces as vertical, horizontal or neither,
//! and numerically checks the associated preservation and reversal laws.

pub mod bundle;
pub mod error;
pub mod hybridflow;
pub mod impact;
pub mod mechsys;
pub mod systems;
pub mod verify;

pub use bundle::{
    check_lagrangian_invariance, horizontal_vertical_split, locked_inertia,
    max_generator_commutator, mechanical_connection, momentum_map, LieAlgebraVector, MomentumValue,
    SymmetryAction,
};
pub use error::{Error, Result};
pub use hybridflow::{
    flow_segment, simulate_hybrid, HybridTrajectory, ImpactEvent, IntegratorConfig, Segment,
    SegmentFlow, Termination, TrajectorySample,
};
pub use impact::{
    classify_guard, resolve_impact_momentum, resolve_impact_velocity, CrossingDirection, Guard,
    GuardClass, GuardClassification, ImpactOutcome, DEFAULT_CLASS_TOL, DEFAULT_EVENT_TOL,
    GRAZING_TOL,
};
pub use mechsys::{ChartPoint, MechanicalSystem, MomentumState, VelocityState};
pub use systems::{SystemEntry, SystemRegistry};
pub use verify::{
    impact_invariants, noether_report, shape_velocity_check, symplectic_pullback_check,
    ConnectionVerdict, ImpactInvariantReport, NoetherReport, PullbackReport,
};
