//! Report JSON schema and trajectory CSV serialization.
//!
//! Reports are schema-versioned and deterministic: struct field order is
//! fixed, maps are sorted, and no timestamps or paths are embedded, so two
//! runs of the same config on the same build produce byte-identical bytes.
//! CSV floats use 17 significant digits.

use std::collections::BTreeMap;

use hbs_core::{
    locked_inertia, momentum_map, ConnectionVerdict, GuardClass, HybridTrajectory,
    MechanicalSystem, SymmetryAction, Termination,
};
use serde::Serialize;

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub mode: String,
    pub system: SystemInfo,
    pub symmetry: Option<SymmetryInfo>,
    pub integrator: IntegratorInfo,
    pub termination: Option<String>,
    pub counts: Counts,
    pub events: Vec<EventInfo>,
    pub classifications: Vec<ClassificationInfo>,
    pub suite: Option<SuiteInfo>,
}

#[derive(Debug, Serialize)]
pub struct SystemInfo {
    pub name: String,
    pub dim: usize,
    pub coordinates: Vec<String>,
    pub params: BTreeMap<String, f64>,
}

#[derive(Debug, Serialize)]
pub struct SymmetryInfo {
    pub generators: Vec<String>,
    pub algebra_dim: usize,
}

#[derive(Debug, Serialize)]
pub struct IntegratorInfo {
    pub dt: f64,
    pub t_end: f64,
    pub event_tol: f64,
    pub max_impacts: usize,
    pub min_impact_separation: f64,
    pub sample_stride: usize,
}

#[derive(Debug, Default, Serialize)]
pub struct Counts {
    pub segments: usize,
    pub events: usize,
    pub samples: usize,
}

#[derive(Debug, Serialize)]
pub struct EventInfo {
    pub index: usize,
    pub t_star: f64,
    pub guard: String,
    pub alpha: f64,
    pub energy_pre: f64,
    pub energy_post: f64,
    pub delta_energy: f64,
    pub momentum_map_pre: Vec<f64>,
    pub momentum_map_post: Vec<f64>,
    pub delta_momentum_map: Vec<f64>,
    pub connection_pre: Vec<f64>,
    pub connection_post: Vec<f64>,
    pub verdict: Option<String>,
    pub shape_velocity_delta: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct ClassificationInfo {
    pub guard: String,
    pub class: String,
    /// Declarative metadata for built-in guard families: does the surface
    /// project onto the whole shape space?
    pub exterior: Option<bool>,
    pub max_generator_pairing: f64,
    pub max_offspan_residual: f64,
    pub samples: usize,
    pub class_tol: f64,
}

#[derive(Debug, Serialize)]
pub struct SuiteInfo {
    pub passed: bool,
    pub checks: Vec<CheckInfo>,
}

#[derive(Debug, Serialize)]
pub struct CheckInfo {
    pub name: String,
    pub passed: bool,
    pub applicable: bool,
    pub observed: f64,
    pub threshold: f64,
    pub detail: String,
}

pub fn verdict_str(v: ConnectionVerdict) -> &'static str {
    match v {
        ConnectionVerdict::Preserved => "preserved",
        ConnectionVerdict::Reversed => "reversed",
        ConnectionVerdict::Other => "other",
    }
}

pub fn class_str(c: GuardClass) -> &'static str {
    match c {
        GuardClass::Vertical => "vertical",
        GuardClass::Horizontal => "horizontal",
        GuardClass::Neither => "neither",
    }
}

pub fn termination_str(t: &Termination) -> String {
    match t {
        Termination::TimeEnd => "time_end".to_string(),
        Termination::ZenoSuspected => "zeno_suspected".to_string(),
        Termination::Error(msg) => format!("error: {msg}"),
    }
}

/// Render a report as pretty JSON with a trailing newline.
pub fn to_json(report: &RunReport) -> Result<String, CliError> {
    let mut text = serde_json::to_string_pretty(report).map_err(|e| CliError::Internal {
        message: format!("report serialization failed: {e}"),
    })?;
    text.push('\n');
    Ok(text)
}

fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Trajectory CSV: `t, q_1..q_n, p_1..p_n, H, mu_1..mu_k, A_1..A_k,
/// segment_id`, one row per recorded sample; each impact contributes two
/// consecutive rows sharing t (pre- and post-state).
pub fn trajectory_csv(
    traj: &HybridTrajectory,
    sys: &MechanicalSystem,
    action: Option<&SymmetryAction>,
) -> Result<String, CliError> {
    let n = sys.dim();
    let k = action.map(|a| a.algebra_dim()).unwrap_or(0);
    let mut out = String::new();
    out.push('t');
    for i in 1..=n {
        out.push_str(&format!(",q_{i}"));
    }
    for i in 1..=n {
        out.push_str(&format!(",p_{i}"));
    }
    out.push_str(",H");
    for a in 1..=k {
        out.push_str(&format!(",mu_{a}"));
    }
    for a in 1..=k {
        out.push_str(&format!(",A_{a}"));
    }
    out.push_str(",segment_id\n");

    for (segment_id, segment) in traj.segments.iter().enumerate() {
        for sample in &segment.samples {
            let state = &sample.state;
            let energy = sys.hamiltonian(state).map_err(CliError::Core)?;
            out.push_str(&fmt17(sample.t));
            for i in 0..n {
                out.push(',');
                out.push_str(&fmt17(state.q().coords()[i]));
            }
            for i in 0..n {
                out.push(',');
                out.push_str(&fmt17(state.p()[i]));
            }
            out.push(',');
            out.push_str(&fmt17(energy));
            if let Some(action) = action {
                let mu = momentum_map(action, state).map_err(CliError::Core)?.0;
                let inertia = locked_inertia(sys, action, state.q()).map_err(CliError::Core)?;
                let conn = inertia
                    .cholesky()
                    .ok_or(CliError::Internal {
                        message: "locked inertia lost definiteness".to_string(),
                    })?
                    .solve(&mu);
                for a in 0..k {
                    out.push(',');
                    out.push_str(&fmt17(mu[a]));
                }
                for a in 0..k {
                    out.push(',');
                    out.push_str(&fmt17(conn[a]));
                }
            }
            out.push(',');
            out.push_str(&segment_id.to_string());
            out.push('\n');
        }
    }
    Ok(out)
}
