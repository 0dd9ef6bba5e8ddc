//! Declarative run configuration: a TOML tree parsed into validated core
//! objects.
//!
//! The documented grammar (all sections except `[system]` are optional for
//! some mode; see the README for full details):
//!
//! ```toml
//! mode = "run"                  # run | classify | verify (subcommand overrides)
//!
//! [system]
//! name = "pendulum-cart"        # see `hbs list-systems`
//! [system.params]               # optional overrides of the system defaults
//! gravity = 9.8
//!
//! [symmetry]                    # omit the whole section for no symmetry
//! generators = ["x"]            # coordinate names or indices
//!
//! [[guard]]
//! kind = "coordinate"           # coordinate | pendulum-cart-horizontal
//! coordinate = "theta"          # name or index (coordinate kind only)
//! value = 0.0                   # level-set constant, default 0
//! crossing = "increasing"       # decreasing | increasing | both
//! label = "interior"            # optional
//!
//! [initial]                     # required for run/verify
//! q = [-0.6, 0.0]
//! v = [2.0, 0.0]                # exactly one of v or p
//!
//! [integrator]                  # all fields optional
//! dt = 1e-3
//! t_end = 6.0
//! event_tol = 1e-10
//! max_impacts = 10000
//! min_impact_separation = 1e-9
//! sample_stride = 1
//!
//! [classify]                    # classify/verify sampling controls
//! samples = 16
//! class_tol = 1e-8
//!
//! [output]                      # file names, relative to --out
//! trajectory = "traj.csv"
//! report = "report.json"
//! ```

use std::collections::BTreeMap;

use hbs_core::{
    CrossingDirection, Guard, IntegratorConfig, MechanicalSystem, MomentumState, SymmetryAction,
    SystemRegistry, VelocityState,
};
use serde::Deserialize;

use crate::CliError;

/// Execution mode of a configured run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Run,
    Classify,
    Verify,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Run => "run",
            Mode::Classify => "classify",
            Mode::Verify => "verify",
        }
    }
}

/// How a guard was specified; kept alongside the built guard (in the
/// parallel `guard_specs` vector) so the classifier can generate on-surface
/// samples.
#[derive(Clone, Debug)]
pub enum GuardSpec {
    Coordinate { index: usize, value: f64 },
    PendulumCartHorizontal { level: f64 },
}

impl GuardSpec {
    /// Declarative exterior flag for the built-in guard families: whether the
    /// surface projects onto the whole shape space. Surjectivity is a global
    /// property that finite samples cannot decide, so it is carried as
    /// metadata rather than inferred. `None` without coordinate fibers.
    pub fn is_exterior(&self, action: Option<&SymmetryAction>) -> Option<bool> {
        let fibers = action?.coordinate_indices()?;
        match self {
            // A level set of a fiber coordinate leaves every shape value
            // free; a level set of a shape coordinate pins the projection
            // to a single slice.
            GuardSpec::Coordinate { index, .. } => Some(fibers.contains(index)),
            GuardSpec::PendulumCartHorizontal { .. } => Some(true),
        }
    }
}

/// A fully validated run description. `guards` and `guard_specs` run in
/// parallel.
#[derive(Debug)]
pub struct RunConfig {
    pub mode: Mode,
    pub system: MechanicalSystem,
    pub generator_names: Vec<String>,
    pub action: Option<SymmetryAction>,
    pub guards: Vec<Guard>,
    pub guard_specs: Vec<GuardSpec>,
    pub initial: Option<MomentumState>,
    pub integrator: IntegratorConfig,
    pub classify_samples: usize,
    pub class_tol: f64,
    pub trajectory_name: Option<String>,
    pub report_name: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    mode: Option<String>,
    system: RawSystem,
    symmetry: Option<RawSymmetry>,
    #[serde(default, rename = "guard")]
    guards: Vec<RawGuard>,
    initial: Option<RawInitial>,
    #[serde(default)]
    integrator: RawIntegrator,
    #[serde(default)]
    classify: RawClassify,
    #[serde(default)]
    output: RawOutput,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    name: String,
    #[serde(default)]
    params: BTreeMap<String, f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSymmetry {
    generators: Vec<CoordRef>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum CoordRef {
    Index(usize),
    Name(String),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGuard {
    kind: String,
    coordinate: Option<CoordRef>,
    value: Option<f64>,
    crossing: Option<String>,
    label: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInitial {
    q: Vec<f64>,
    v: Option<Vec<f64>>,
    p: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawIntegrator {
    dt: Option<f64>,
    t_end: Option<f64>,
    event_tol: Option<f64>,
    max_impacts: Option<usize>,
    min_impact_separation: Option<f64>,
    sample_stride: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawClassify {
    samples: Option<usize>,
    class_tol: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    trajectory: Option<String>,
    report: Option<String>,
}

fn validation(key: &str, message: impl Into<String>) -> CliError {
    CliError::Validation {
        key: key.to_string(),
        message: message.into(),
    }
}

fn resolve_coord(coord: &CoordRef, coord_names: &[String], key: &str) -> Result<usize, CliError> {
    match coord {
        CoordRef::Index(i) => {
            if *i >= coord_names.len() {
                Err(validation(
                    key,
                    format!(
                        "coordinate index {i} out of range (dimension {})",
                        coord_names.len()
                    ),
                ))
            } else {
                Ok(*i)
            }
        }
        CoordRef::Name(name) => coord_names.iter().position(|c| c == name).ok_or_else(|| {
            validation(
                key,
                format!(
                    "unknown coordinate '{name}' (have: {})",
                    coord_names.join(", ")
                ),
            )
        }),
    }
}

fn parse_crossing(raw: Option<&str>, key: &str) -> Result<CrossingDirection, CliError> {
    match raw.unwrap_or("both") {
        "decreasing" => Ok(CrossingDirection::Decreasing),
        "increasing" => Ok(CrossingDirection::Increasing),
        "both" => Ok(CrossingDirection::Both),
        other => Err(validation(
            key,
            format!("unknown crossing direction '{other}' (decreasing | increasing | both)"),
        )),
    }
}

/// Parse and validate a configuration document.
pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| CliError::Parse {
        message: e.to_string(),
    })?;

    let mode = match raw.mode.as_deref() {
        None | Some("run") => Mode::Run,
        Some("classify") => Mode::Classify,
        Some("verify") => Mode::Verify,
        Some(other) => {
            return Err(validation(
                "mode",
                format!("unknown mode '{other}' (run | classify | verify)"),
            ))
        }
    };

    let system = SystemRegistry::build(&raw.system.name, &raw.system.params)
        .map_err(|e| validation("system", e.to_string()))?;
    let n = system.dim();
    let coord_names: Vec<String> = system.coord_names().to_vec();

    let mut generator_names = Vec::new();
    let action = match &raw.symmetry {
        None => None,
        Some(sym) if sym.generators.is_empty() => None,
        Some(sym) => {
            let mut indices = Vec::with_capacity(sym.generators.len());
            for (i, coord) in sym.generators.iter().enumerate() {
                let idx = resolve_coord(coord, &coord_names, &format!("symmetry.generators[{i}]"))?;
                indices.push(idx);
                generator_names.push(coord_names[idx].clone());
            }
            Some(
                SymmetryAction::from_coordinates(n, &indices)
                    .map_err(|e| validation("symmetry.generators", e.to_string()))?,
            )
        }
    };

    let mut guards = Vec::with_capacity(raw.guards.len());
    let mut guard_specs = Vec::with_capacity(raw.guards.len());
    for (i, raw_guard) in raw.guards.iter().enumerate() {
        let key = format!("guard[{i}]");
        let crossing = parse_crossing(raw_guard.crossing.as_deref(), &format!("{key}.crossing"))?;
        let value = raw_guard.value.unwrap_or(0.0);
        if !value.is_finite() {
            return Err(validation(&format!("{key}.value"), "must be finite"));
        }
        match raw_guard.kind.as_str() {
            "coordinate" => {
                let coord = raw_guard.coordinate.as_ref().ok_or_else(|| {
                    validation(
                        &format!("{key}.coordinate"),
                        "required for kind = \"coordinate\"",
                    )
                })?;
                let index = resolve_coord(coord, &coord_names, &format!("{key}.coordinate"))?;
                let label = raw_guard
                    .label
                    .clone()
                    .unwrap_or_else(|| format!("{}={}", coord_names[index], value));
                guard_specs.push(GuardSpec::Coordinate { index, value });
                guards.push(Guard::coordinate(n, index, value, crossing, label));
            }
            "pendulum-cart-horizontal" => {
                if system.name() != "pendulum-cart" {
                    return Err(validation(
                        &format!("{key}.kind"),
                        "pendulum-cart-horizontal requires system \"pendulum-cart\"",
                    ));
                }
                let m = system.param("m").expect("pendulum-cart has m");
                let cart = system.param("M").expect("pendulum-cart has M");
                let l = system.param("l").expect("pendulum-cart has l");
                let label = raw_guard
                    .label
                    .clone()
                    .unwrap_or_else(|| format!("horizontal={value}"));
                guard_specs.push(GuardSpec::PendulumCartHorizontal { level: value });
                guards.push(Guard::pendulum_cart_horizontal(
                    m, cart, l, value, crossing, label,
                ));
            }
            other => {
                return Err(validation(
                    &format!("{key}.kind"),
                    format!("unknown guard kind '{other}' (coordinate | pendulum-cart-horizontal)"),
                ))
            }
        }
    }

    let initial = match &raw.initial {
        None => None,
        Some(init) => {
            if init.q.len() != n {
                return Err(validation(
                    "initial.q",
                    format!("expected {n} coordinates, got {}", init.q.len()),
                ));
            }
            let state = match (&init.v, &init.p) {
                (Some(_), Some(_)) => {
                    return Err(validation(
                        "initial",
                        "give exactly one of v or p, not both",
                    ))
                }
                (None, None) => return Err(validation("initial", "give exactly one of v or p")),
                (Some(v), None) => {
                    if v.len() != n {
                        return Err(validation(
                            "initial.v",
                            format!("expected {n} components, got {}", v.len()),
                        ));
                    }
                    let vel = VelocityState::from_slices(&init.q, v)
                        .map_err(|e| validation("initial", e.to_string()))?;
                    system
                        .legendre_to_momentum(&vel)
                        .map_err(|e| validation("initial", e.to_string()))?
                }
                (None, Some(p)) => {
                    if p.len() != n {
                        return Err(validation(
                            "initial.p",
                            format!("expected {n} components, got {}", p.len()),
                        ));
                    }
                    MomentumState::from_slices(&init.q, p)
                        .map_err(|e| validation("initial", e.to_string()))?
                }
            };
            Some(state)
        }
    };

    let defaults = IntegratorConfig::default();
    let integrator = IntegratorConfig {
        dt: raw.integrator.dt.unwrap_or(defaults.dt),
        t_end: raw.integrator.t_end.unwrap_or(defaults.t_end),
        event_tol: raw.integrator.event_tol.unwrap_or(defaults.event_tol),
        max_impacts: raw.integrator.max_impacts.unwrap_or(defaults.max_impacts),
        min_impact_separation: raw
            .integrator
            .min_impact_separation
            .unwrap_or(defaults.min_impact_separation),
        sample_stride: raw
            .integrator
            .sample_stride
            .unwrap_or(defaults.sample_stride),
    };
    integrator
        .validate()
        .map_err(|e| validation("integrator", e.to_string()))?;

    if matches!(mode, Mode::Run | Mode::Verify) {
        if initial.is_none() {
            return Err(validation("initial", "required for run and verify modes"));
        }
        if mode == Mode::Verify && guards.is_empty() {
            return Err(validation("guard", "verify mode needs at least one guard"));
        }
    }
    if mode == Mode::Classify && guards.is_empty() {
        return Err(validation(
            "guard",
            "classify mode needs at least one guard",
        ));
    }

    let classify_samples = raw.classify.samples.unwrap_or(16);
    if classify_samples == 0 {
        return Err(validation("classify.samples", "must be at least 1"));
    }
    let class_tol = raw
        .classify
        .class_tol
        .unwrap_or(hbs_core::DEFAULT_CLASS_TOL);
    if !class_tol.is_finite() || class_tol <= 0.0 {
        return Err(validation("classify.class_tol", "must be positive"));
    }

    Ok(RunConfig {
        mode,
        system,
        generator_names,
        action,
        guards,
        guard_specs,
        initial,
        integrator,
        classify_samples,
        class_tol,
        trajectory_name: raw.output.trajectory,
        report_name: raw.output.report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
mode = "run"

[system]
name = "pendulum-cart"

[symmetry]
generators = ["x"]

[[guard]]
kind = "coordinate"
coordinate = "theta"
value = 0.0
crossing = "increasing"
label = "interior"

[initial]
q = [-0.6, 0.0]
v = [2.0, 0.0]

[integrator]
t_end = 6.0
"#;

    #[test]
    fn minimal_config_parses() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.mode, Mode::Run);
        assert_eq!(cfg.system.dim(), 2);
        assert_eq!(cfg.action.as_ref().unwrap().algebra_dim(), 1);
        assert_eq!(cfg.guards.len(), 1);
        assert_eq!(cfg.guards[0].label(), "interior");
        assert!((cfg.integrator.t_end - 6.0).abs() < 1e-15);
        // v = (2, 0) at theta = -0.6 maps through the metric.
        let p = cfg.initial.as_ref().unwrap().p();
        assert!((p[0] - 2.0).abs() < 1e-12);
        assert!((p[1] - 2.0 * (-0.6_f64).cos()).abs() < 1e-12);
    }

    #[test]
    fn both_v_and_p_rejected() {
        let text = MINIMAL.replace("v = [2.0, 0.0]", "v = [2.0, 0.0]\np = [1.0, 1.0]");
        match parse_config(&text) {
            Err(CliError::Validation { key, .. }) => assert_eq!(key, "initial"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn guard_index_out_of_range_rejected() {
        let text = MINIMAL.replace("coordinate = \"theta\"", "coordinate = 5");
        match parse_config(&text) {
            Err(CliError::Validation { key, .. }) => assert_eq!(key, "guard[0].coordinate"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_system_rejected() {
        let text = MINIMAL.replace("pendulum-cart", "gyroscope");
        assert!(matches!(
            parse_config(&text),
            Err(CliError::Validation { .. })
        ));
    }

    #[test]
    fn nonpositive_dt_rejected() {
        let text = MINIMAL.replace("t_end = 6.0", "t_end = 6.0\ndt = -1e-3");
        match parse_config(&text) {
            Err(CliError::Validation { key, .. }) => assert_eq!(key, "integrator"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn syntax_error_reports_line_context() {
        let err = parse_config("[system\nname = 1").unwrap_err();
        match err {
            CliError::Parse { message } => {
                assert!(message.contains("line"), "message: {message}")
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn no_symmetry_section_means_no_action() {
        let text = MINIMAL.replace("[symmetry]\ngenerators = [\"x\"]\n", "");
        let cfg = parse_config(&text).unwrap();
        assert!(cfg.action.is_none());
    }

    #[test]
    fn horizontal_guard_kind_builds() {
        let text = MINIMAL.replace(
            "kind = \"coordinate\"\ncoordinate = \"theta\"\nvalue = 0.0",
            "kind = \"pendulum-cart-horizontal\"\nvalue = 0.5",
        );
        let cfg = parse_config(&text).unwrap();
        match cfg.guard_specs[0] {
            GuardSpec::PendulumCartHorizontal { level } => assert_eq!(level, 0.5),
            _ => panic!("expected horizontal guard spec"),
        }
    }

    #[test]
    fn unknown_key_rejected() {
        let text = MINIMAL.replace("[integrator]", "[integrator]\nwarp = 9\n");
        assert!(matches!(parse_config(&text), Err(CliError::Parse { .. })));
    }
}
