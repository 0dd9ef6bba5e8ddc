//! Run execution: simulate / classify / verify, report assembly, the
//! verification suite, and the parallel batch driver.

use std::fs;
use std::path::{Path, PathBuf};

use hbs_core::{
    classify_guard, impact_invariants, noether_report, resolve_impact_momentum,
    symplectic_pullback_check, ChartPoint, ConnectionVerdict, GuardClass, HybridTrajectory,
    ImpactInvariantReport, MechanicalSystem, Termination,
};
use log::{debug, info};
use rayon::prelude::*;

use crate::config::{parse_config, GuardSpec, Mode, RunConfig};
use crate::report::{
    class_str, termination_str, to_json, trajectory_csv, verdict_str, CheckInfo,
    ClassificationInfo, Counts, EventInfo, IntegratorInfo, RunReport, SuiteInfo, SymmetryInfo,
    SystemInfo, SCHEMA_VERSION,
};
use crate::CliError;

// Suite tolerances, pinned.
const SUITE_ENERGY_TOL: f64 = 1e-10;
const SUITE_PERP_TOL: f64 = 1e-10;
const SUITE_INVOLUTION_TOL: f64 = 1e-10;
const SUITE_NOETHER_DRIFT_TOL: f64 = 1e-9;
const SUITE_SHAPE_TOL: f64 = 1e-9;
const SUITE_PULLBACK_TOL: f64 = 1e-6;
const SUITE_PULLBACK_STEP: f64 = 1e-5;

/// Result of executing one config.
pub struct ExecOutcome {
    pub exit_code: i32,
    pub files: Vec<PathBuf>,
}

/// On-surface classification samples for a configured guard.
///
/// Coordinate guards fix the guarded coordinate and vary the first free one;
/// the horizontal guard is sampled uniformly in theta. Both use an offset
/// uniform grid, which never lands on the isolated points where a
/// classification test degenerates (e.g. cos(theta) = 0 for the cart guards).
pub fn classification_samples(
    sys: &MechanicalSystem,
    spec: &GuardSpec,
    count: usize,
) -> Result<Vec<ChartPoint>, CliError> {
    let n = sys.dim();
    let grid = |j: usize| -> f64 {
        -std::f64::consts::PI + 2.0 * std::f64::consts::PI * (j as f64 + 0.5) / count as f64
    };
    let mut samples = Vec::with_capacity(count);
    match spec {
        GuardSpec::Coordinate { index, value } => {
            let free = (0..n).find(|i| i != index).ok_or(CliError::Internal {
                message: "guard consumes every coordinate".to_string(),
            })?;
            for j in 0..count {
                let mut q = vec![0.0; n];
                q[*index] = *value;
                q[free] = grid(j);
                samples.push(ChartPoint::from_slice(&q)?);
            }
        }
        GuardSpec::PendulumCartHorizontal { level } => {
            let m = sys.param("m").unwrap_or(1.0);
            let cart = sys.param("M").unwrap_or(1.0);
            let l = sys.param("l").unwrap_or(1.0);
            let ratio = m * l / (cart + m);
            for j in 0..count {
                let theta = grid(j);
                samples.push(ChartPoint::from_slice(&[
                    theta,
                    level - ratio * theta.sin(),
                ])?);
            }
        }
    }
    Ok(samples)
}

fn vec_of(v: &nalgebra::DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

fn classification_block(
    cfg: &RunConfig,
) -> Result<(Vec<ClassificationInfo>, Vec<Option<GuardClass>>), CliError> {
    let mut infos = Vec::new();
    let mut classes = Vec::new();
    let Some(action) = &cfg.action else {
        return Ok((infos, vec![None; cfg.guards.len()]));
    };
    for (guard, spec) in cfg.guards.iter().zip(&cfg.guard_specs) {
        let samples = classification_samples(&cfg.system, spec, cfg.classify_samples)?;
        let result = classify_guard(&cfg.system, action, guard, &samples, cfg.class_tol)?;
        infos.push(ClassificationInfo {
            guard: guard.label().to_string(),
            class: class_str(result.class).to_string(),
            exterior: spec.is_exterior(cfg.action.as_ref()),
            max_generator_pairing: result.max_generator_pairing,
            max_offspan_residual: result.max_offspan_residual,
            samples: samples.len(),
            class_tol: cfg.class_tol,
        });
        classes.push(Some(result.class));
    }
    Ok((infos, classes))
}

fn event_block(
    traj: &HybridTrajectory,
    invariants: Option<&ImpactInvariantReport>,
) -> Vec<EventInfo> {
    let mut events = Vec::with_capacity(traj.events.len());
    for (i, event) in traj.events.iter().enumerate() {
        let inv = invariants.map(|r| &r.events[i]);
        events.push(EventInfo {
            index: i,
            t_star: event.t_star,
            guard: event.guard_label.clone(),
            alpha: event.outcome.alpha,
            energy_pre: event.outcome.energy_pre,
            energy_post: event.outcome.energy_post,
            delta_energy: event.outcome.energy_post - event.outcome.energy_pre,
            momentum_map_pre: vec_of(&event.momentum_pre),
            momentum_map_post: vec_of(&event.momentum_post),
            delta_momentum_map: vec_of(&(&event.momentum_post - &event.momentum_pre)),
            connection_pre: vec_of(&event.connection_pre),
            connection_post: vec_of(&event.connection_post),
            verdict: inv.map(|e| verdict_str(e.verdict).to_string()),
            shape_velocity_delta: inv.and_then(|e| e.shape_velocity_delta),
        });
    }
    events
}

struct Check {
    name: &'static str,
    applicable: bool,
    observed: f64,
    threshold: f64,
    /// Pass when observed <= threshold (true) or >= threshold (false).
    below: bool,
    detail: String,
}

impl Check {
    fn passed(&self) -> bool {
        if !self.applicable {
            return true;
        }
        if self.below {
            self.observed <= self.threshold
        } else {
            self.observed >= self.threshold
        }
    }

    fn info(&self) -> CheckInfo {
        CheckInfo {
            name: self.name.to_string(),
            passed: self.passed(),
            applicable: self.applicable,
            observed: self.observed,
            threshold: self.threshold,
            detail: self.detail.clone(),
        }
    }
}

fn suite_block(
    cfg: &RunConfig,
    traj: &HybridTrajectory,
    classes: &[Option<GuardClass>],
    invariants: Option<&ImpactInvariantReport>,
) -> Result<SuiteInfo, CliError> {
    let sys = &cfg.system;
    let mut checks: Vec<Check> = Vec::new();

    checks.push(Check {
        name: "impacts_present",
        applicable: true,
        observed: traj.events.len() as f64,
        threshold: 1.0,
        below: false,
        detail: "at least one impact event".to_string(),
    });

    checks.push(Check {
        name: "termination_clean",
        applicable: true,
        observed: f64::from(matches!(traj.termination, Termination::Error(_))),
        threshold: 0.0,
        below: true,
        detail: termination_str(&traj.termination),
    });

    let mut max_h: f64 = 0.0;
    let mut max_denergy: f64 = 0.0;
    let mut max_perp: f64 = 0.0;
    let mut max_involution: f64 = 0.0;
    let mut max_form_dev: f64 = 0.0;
    for event in &traj.events {
        let out = &event.outcome;
        let guard = &cfg.guards[event.guard_index];
        max_h = max_h.max(guard.value(out.pre.q().coords()).abs());

        let scale = out.energy_pre.abs().max(1.0);
        max_denergy = max_denergy.max((out.energy_post - out.energy_pre).abs() / scale);

        let grad = guard.gradient(out.pre.q().coords())?;
        let unit = &grad / grad.norm();
        let jump = out.post.p() - out.pre.p();
        if jump.norm() > 0.0 {
            max_perp = max_perp.max((&jump - unit.dot(&jump) * &unit).norm() / jump.norm());
        }

        let again = resolve_impact_momentum(sys, guard, &out.post, cfg.integrator.event_tol)?;
        let pscale = out.pre.p().amax().max(1.0);
        max_involution = max_involution.max((again.post.p() - out.pre.p()).amax() / pscale);

        let pullback = symplectic_pullback_check(
            sys,
            guard,
            out.pre.q(),
            out.pre.p(),
            SUITE_PULLBACK_STEP,
            cfg.integrator.event_tol,
        )?;
        max_form_dev = max_form_dev.max(pullback.form_deviation);
    }
    let have_events = !traj.events.is_empty();
    checks.push(Check {
        name: "event_localization",
        applicable: have_events,
        observed: max_h,
        threshold: cfg.integrator.event_tol,
        below: true,
        detail: "max |h(q(t*))| over events".to_string(),
    });
    checks.push(Check {
        name: "energy_conservation",
        applicable: have_events,
        observed: max_denergy,
        threshold: SUITE_ENERGY_TOL,
        below: true,
        detail: "max |dH| / max(1, |H|) over events".to_string(),
    });
    checks.push(Check {
        name: "momentum_jump_normal",
        applicable: have_events,
        observed: max_perp,
        threshold: SUITE_PERP_TOL,
        below: true,
        detail: "max off-normal momentum-jump fraction".to_string(),
    });
    checks.push(Check {
        name: "impact_involution",
        applicable: have_events,
        observed: max_involution,
        threshold: SUITE_INVOLUTION_TOL,
        below: true,
        detail: "max relative defect of double reflection".to_string(),
    });
    checks.push(Check {
        name: "symplectic_pullback",
        applicable: have_events,
        observed: max_form_dev,
        threshold: SUITE_PULLBACK_TOL,
        below: true,
        detail: format!("max form deviation at fd_step {SUITE_PULLBACK_STEP:.0e}"),
    });

    if let Some(action) = &cfg.action {
        let mut verdict_violations = 0usize;
        let mut shape_delta_max: f64 = 0.0;
        let mut horizontal_events = 0usize;
        if let Some(report) = invariants {
            for (event, inv) in traj.events.iter().zip(&report.events) {
                match classes[event.guard_index] {
                    Some(GuardClass::Vertical) => {
                        if inv.verdict != ConnectionVerdict::Preserved
                            || inv.momentum_jump.amax() > SUITE_ENERGY_TOL
                        {
                            verdict_violations += 1;
                        }
                    }
                    Some(GuardClass::Horizontal) if action.algebra_dim() == 1 => {
                        horizontal_events += 1;
                        if inv.verdict != ConnectionVerdict::Reversed {
                            verdict_violations += 1;
                        }
                        if let Some(delta) = inv.shape_velocity_delta {
                            shape_delta_max = shape_delta_max.max(delta);
                        }
                    }
                    _ => {}
                }
            }
        }
        checks.push(Check {
            name: "connection_verdicts",
            applicable: invariants.is_some(),
            observed: verdict_violations as f64,
            threshold: 0.0,
            below: true,
            detail: "vertical guards must preserve, 1d horizontal guards must reverse".to_string(),
        });
        checks.push(Check {
            name: "shape_velocity_invariance",
            applicable: horizontal_events > 0,
            observed: shape_delta_max,
            threshold: SUITE_SHAPE_TOL,
            below: true,
            detail: "max shape-velocity change across horizontal impacts".to_string(),
        });

        let noether = noether_report(traj, sys, action)?;
        let all_vertical = !classes.is_empty()
            && classes
                .iter()
                .all(|c| matches!(c, Some(GuardClass::Vertical)));
        checks.push(Check {
            name: "noether_segment_drift",
            applicable: all_vertical,
            observed: noether.max_segment_drift,
            threshold: SUITE_NOETHER_DRIFT_TOL,
            below: true,
            detail: "max momentum-map drift along continuous segments".to_string(),
        });
    }

    let passed = checks.iter().all(Check::passed);
    Ok(SuiteInfo {
        passed,
        checks: checks.iter().map(Check::info).collect(),
    })
}

fn base_report(cfg: &RunConfig, mode: Mode) -> RunReport {
    RunReport {
        schema_version: SCHEMA_VERSION,
        mode: mode.as_str().to_string(),
        system: SystemInfo {
            name: cfg.system.name().to_string(),
            dim: cfg.system.dim(),
            coordinates: cfg.system.coord_names().to_vec(),
            params: cfg.system.params().clone(),
        },
        symmetry: cfg.action.as_ref().map(|a| SymmetryInfo {
            generators: cfg.generator_names.clone(),
            algebra_dim: a.algebra_dim(),
        }),
        integrator: IntegratorInfo {
            dt: cfg.integrator.dt,
            t_end: cfg.integrator.t_end,
            event_tol: cfg.integrator.event_tol,
            max_impacts: cfg.integrator.max_impacts,
            min_impact_separation: cfg.integrator.min_impact_separation,
            sample_stride: cfg.integrator.sample_stride,
        },
        termination: None,
        counts: Counts::default(),
        events: Vec::new(),
        classifications: Vec::new(),
        suite: None,
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| CliError::Io {
                path: parent.to_path_buf(),
                message: e.to_string(),
            })?;
        }
    }
    fs::write(path, contents).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Execute a parsed config. `stem` names the output files when the config
/// does not; `mode_override` is the subcommand's mode, if any.
pub fn execute(
    cfg: &RunConfig,
    out_dir: &Path,
    stem: &str,
    mode_override: Option<Mode>,
) -> Result<ExecOutcome, CliError> {
    let mode = mode_override.unwrap_or(cfg.mode);
    let mut report = base_report(cfg, mode);
    let mut files = Vec::new();
    let mut exit_code = 0;

    match mode {
        Mode::Classify => {
            if cfg.action.is_none() {
                return Err(CliError::Validation {
                    key: "symmetry".to_string(),
                    message: "classification needs a symmetry action".to_string(),
                });
            }
            let (infos, _) = classification_block(cfg)?;
            report.classifications = infos;
        }
        Mode::Run | Mode::Verify => {
            let initial = cfg.initial.as_ref().ok_or_else(|| CliError::Validation {
                key: "initial".to_string(),
                message: "required for run and verify".to_string(),
            })?;
            let traj = hbs_core::simulate_hybrid(
                &cfg.system,
                cfg.action.as_ref(),
                &cfg.guards,
                initial,
                &cfg.integrator,
            )?;
            info!(
                "run finished: {} segments, {} events, termination {}",
                traj.segments.len(),
                traj.events.len(),
                termination_str(&traj.termination)
            );
            let invariants = match (&cfg.action, traj.events.is_empty()) {
                (Some(action), false) => Some(impact_invariants(&traj, &cfg.system, action)?),
                _ => None,
            };
            report.termination = Some(termination_str(&traj.termination));
            report.counts = Counts {
                segments: traj.segments.len(),
                events: traj.events.len(),
                samples: traj.sample_count(),
            };
            report.events = event_block(&traj, invariants.as_ref());
            let (infos, classes) = classification_block(cfg)?;
            report.classifications = infos;

            if mode == Mode::Verify {
                let suite = suite_block(cfg, &traj, &classes, invariants.as_ref())?;
                if !suite.passed {
                    exit_code = 2;
                }
                report.suite = Some(suite);
            } else {
                let csv = trajectory_csv(&traj, &cfg.system, cfg.action.as_ref())?;
                let name = cfg
                    .trajectory_name
                    .clone()
                    .unwrap_or_else(|| format!("{stem}.trajectory.csv"));
                let path = out_dir.join(name);
                write_file(&path, &csv)?;
                files.push(path);
            }
        }
    }

    let json = to_json(&report)?;
    let name = cfg
        .report_name
        .clone()
        .unwrap_or_else(|| format!("{stem}.report.json"));
    let path = out_dir.join(name);
    write_file(&path, &json)?;
    files.push(path);

    Ok(ExecOutcome { exit_code, files })
}

/// Run every `*.toml` config in a directory, in parallel. Each run uses the
/// mode from its own config. Returns the maximum exit code over the runs.
pub fn run_batch(dir: &Path, out_dir: &Path) -> Result<i32, CliError> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::Io {
            path: dir.to_path_buf(),
            message: e.to_string(),
        })?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|ext| ext == "toml").unwrap_or(false))
        .collect();
    entries.sort();
    if entries.is_empty() {
        return Err(CliError::Io {
            path: dir.to_path_buf(),
            message: "no .toml configs found".to_string(),
        });
    }

    let codes: Vec<i32> = entries
        .par_iter()
        .map(|path| {
            let stem = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "run".to_string());
            let outcome = fs::read_to_string(path)
                .map_err(|e| CliError::Io {
                    path: path.clone(),
                    message: e.to_string(),
                })
                .and_then(|text| parse_config(&text))
                .and_then(|cfg| execute(&cfg, out_dir, &stem, None));
            match outcome {
                Ok(outcome) => {
                    debug!("{}: exit {}", path.display(), outcome.exit_code);
                    println!("{}: exit {}", path.display(), outcome.exit_code);
                    outcome.exit_code
                }
                Err(e) => {
                    eprintln!("{}: {e}", path.display());
                    1
                }
            }
        })
        .collect();

    Ok(codes.into_iter().max().unwrap_or(0))
}
