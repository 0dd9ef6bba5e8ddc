//! Event-driven integration of hybrid Hamiltonian flows.
//!
//! Continuous segments run classical fixed-step RK4 on the Hamiltonian vector
//! field. Guard crossings are detected by sign changes of `h` between
//! accepted steps (respecting each guard's crossing direction) and localized
//! by bisection, re-integrating a single step from the bracketing state until
//! `|h|` falls under the event tolerance. Impacts are resolved elastically and
//! the flow restarts from the post-impact state, with the first step
//! shortened so sampling realigns with the global step grid. Zeno behavior is
//! detected and halts the run rather than being regularized.

use nalgebra::DVector;

use crate::bundle::{mechanical_connection, momentum_map, SymmetryAction};
use crate::error::{Error, Result};
use crate::impact::{resolve_impact_momentum, CrossingDirection, Guard, ImpactOutcome};
use crate::mechsys::{ChartPoint, MechanicalSystem, MomentumState};

/// Maximum bisection iterations for event localization.
const MAX_BISECTIONS: usize = 40;

/// Fixed-step integrator and event-handling configuration.
#[derive(Clone, Copy, Debug)]
pub struct IntegratorConfig {
    /// Base step size.
    pub dt: f64,
    /// Final time of the run (start is t = 0 for `simulate_hybrid`).
    pub t_end: f64,
    /// `|h|` tolerance for event localization and impact resolution.
    pub event_tol: f64,
    /// Impact-count bound before the run halts as Zeno-suspected.
    pub max_impacts: usize,
    /// Minimum time between consecutive impacts before Zeno is suspected.
    pub min_impact_separation: f64,
    /// Record every `sample_stride`-th grid step (segment endpoints are
    /// always recorded).
    pub sample_stride: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_end: 1.0,
            event_tol: crate::impact::DEFAULT_EVENT_TOL,
            max_impacts: 10_000,
            min_impact_separation: 1e-9,
            sample_stride: 1,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.dt > 0.0
            && self.t_end > 0.0
            && self.event_tol > 0.0
            && self.min_impact_separation > 0.0
            && self.max_impacts >= 1
            && self.sample_stride >= 1
            && self.dt.is_finite()
            && self.t_end.is_finite();
        if !ok {
            return Err(Error::InvalidConfig {
                detail: format!("{self:?}"),
            });
        }
        Ok(())
    }
}

/// One recorded point of a trajectory.
#[derive(Clone, Debug)]
pub struct TrajectorySample {
    pub t: f64,
    pub state: MomentumState,
}

/// A maximal continuous arc between impacts (or run boundaries). Samples
/// include both endpoints; the last sample of a segment ending in an impact
/// is the pre-impact state at `t_star`.
#[derive(Clone, Debug)]
pub struct Segment {
    pub samples: Vec<TrajectorySample>,
}

impl Segment {
    pub fn start(&self) -> &TrajectorySample {
        self.samples.first().expect("segments are never empty")
    }

    pub fn end(&self) -> &TrajectorySample {
        self.samples.last().expect("segments are never empty")
    }
}

/// An impact record: resolved outcome plus the symmetry invariants on both
/// sides (empty vectors when the run has no symmetry action).
#[derive(Clone, Debug)]
pub struct ImpactEvent {
    pub t_star: f64,
    pub guard_index: usize,
    pub guard_label: String,
    pub outcome: ImpactOutcome,
    pub momentum_pre: DVector<f64>,
    pub momentum_post: DVector<f64>,
    pub connection_pre: DVector<f64>,
    pub connection_post: DVector<f64>,
}

/// How a hybrid run ended.
#[derive(Clone, Debug, PartialEq)]
pub enum Termination {
    TimeEnd,
    ZenoSuspected,
    Error(String),
}

/// A hybrid trajectory: continuous segments interleaved with impact events.
#[derive(Clone, Debug)]
pub struct HybridTrajectory {
    pub segments: Vec<Segment>,
    pub events: Vec<ImpactEvent>,
    pub termination: Termination,
}

impl HybridTrajectory {
    /// Total number of recorded samples across all segments.
    pub fn sample_count(&self) -> usize {
        self.segments.iter().map(|s| s.samples.len()).sum()
    }
}

/// A localized guard crossing at the end of a continuous segment.
#[derive(Clone, Debug)]
pub struct GuardCrossing {
    pub guard_index: usize,
    pub t_star: f64,
    pub state_minus: MomentumState,
}

/// Output of one continuous segment.
#[derive(Clone, Debug)]
pub struct SegmentFlow {
    pub samples: Vec<TrajectorySample>,
    pub crossing: Option<GuardCrossing>,
}

/// One classical RK4 step of the Hamiltonian flow on the packed state
/// `y = (q, p)`.
pub fn rk4_step(sys: &MechanicalSystem, y: &DVector<f64>, dt: f64) -> Result<DVector<f64>> {
    let k1 = eval_field(sys, y)?;
    let k2 = eval_field(sys, &(y + 0.5 * dt * &k1))?;
    let k3 = eval_field(sys, &(y + 0.5 * dt * &k2))?;
    let k4 = eval_field(sys, &(y + dt * &k3))?;
    Ok(y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
}

fn eval_field(sys: &MechanicalSystem, y: &DVector<f64>) -> Result<DVector<f64>> {
    let n = sys.dim();
    let q = y.rows(0, n).into_owned();
    let p = y.rows(n, n).into_owned();
    let (q_dot, p_dot) = sys.vector_field_raw(&q, &p)?;
    let mut out = DVector::zeros(2 * n);
    out.rows_mut(0, n).copy_from(&q_dot);
    out.rows_mut(n, n).copy_from(&p_dot);
    Ok(out)
}

fn pack(s: &MomentumState) -> DVector<f64> {
    let n = s.q().dim();
    let mut y = DVector::zeros(2 * n);
    y.rows_mut(0, n).copy_from(s.q().coords());
    y.rows_mut(n, n).copy_from(s.p());
    y
}

fn unpack(y: &DVector<f64>, n: usize) -> Result<MomentumState> {
    let q = ChartPoint::new(y.rows(0, n).into_owned())?;
    MomentumState::new(q, y.rows(n, n).into_owned())
}

fn guard_value(guard: &Guard, y: &DVector<f64>, n: usize) -> f64 {
    guard.value(&y.rows(0, n).into_owned())
}

/// Time derivative of `h` along the flow, `grad_h . M^{-1} p`.
fn guard_rate(sys: &MechanicalSystem, guard: &Guard, y: &DVector<f64>) -> Result<f64> {
    let n = sys.dim();
    let q = y.rows(0, n).into_owned();
    let p = y.rows(n, n).into_owned();
    let grad = guard.gradient(&q)?;
    let chol = sys.mass_cholesky_raw(&q)?;
    Ok(grad.dot(&chol.solve(&p)))
}

fn matches_direction(h_prev: f64, h_new: f64, crossing: CrossingDirection) -> bool {
    match crossing {
        CrossingDirection::Decreasing => h_prev > 0.0 && h_new <= 0.0,
        CrossingDirection::Increasing => h_prev < 0.0 && h_new >= 0.0,
        CrossingDirection::Both => (h_prev > 0.0 && h_new <= 0.0) || (h_prev < 0.0 && h_new >= 0.0),
    }
}

/// Is an on-surface state moving through the guard in its triggering
/// direction? For `Both` guards this is undecidable from the rate alone (an
/// escaping post-impact state looks the same), so it never reports true.
fn entering(rate: f64, crossing: CrossingDirection) -> bool {
    match crossing {
        CrossingDirection::Decreasing => rate < 0.0,
        CrossingDirection::Increasing => rate > 0.0,
        CrossingDirection::Both => false,
    }
}

/// Flow one continuous segment from `(t0, s0)` until `t_end` or the first
/// guard crossing, whichever comes first.
///
/// Guards whose value at the segment start is already within the event
/// tolerance are disarmed (the usual post-impact situation) and re-arm once
/// the flow leaves the surface. A disarmed guard that the state is actively
/// moving into triggers an immediate crossing at `t0`.
pub fn flow_segment(
    sys: &MechanicalSystem,
    guards: &[Guard],
    s0: &MomentumState,
    t0: f64,
    config: &IntegratorConfig,
) -> Result<SegmentFlow> {
    config.validate()?;
    if s0.q().dim() != sys.dim() {
        return Err(Error::DimensionMismatch {
            context: "flow_segment",
            expected: sys.dim(),
            got: s0.q().dim(),
        });
    }
    let n = sys.dim();
    let dt = config.dt;
    let t_end = config.t_end;
    let end_eps = 1e-12 * t_end.abs().max(1.0);

    let mut y = pack(s0);
    let mut t = t0;
    let mut samples = vec![TrajectorySample {
        t,
        state: s0.clone(),
    }];

    let mut h_prev: Vec<f64> = Vec::with_capacity(guards.len());
    let mut armed: Vec<bool> = Vec::with_capacity(guards.len());
    let mut immediate: Vec<usize> = Vec::new();
    for (i, guard) in guards.iter().enumerate() {
        let h = guard_value(guard, &y, n);
        if !h.is_finite() {
            return Err(Error::StepFailure {
                t,
                detail: format!("guard '{}' non-finite at segment start", guard.label()),
            });
        }
        let on_surface = h.abs() <= config.event_tol;
        if on_surface {
            let rate = guard_rate(sys, guard, &y)?;
            if entering(rate, guard.crossing()) {
                immediate.push(i);
            }
        }
        h_prev.push(h);
        armed.push(!on_surface);
    }
    if immediate.len() > 1 {
        return Err(Error::AmbiguousCrossing {
            t,
            first: guards[immediate[0]].label().to_string(),
            second: guards[immediate[1]].label().to_string(),
            tol: config.event_tol,
        });
    }
    if let Some(&idx) = immediate.first() {
        return Ok(SegmentFlow {
            samples,
            crossing: Some(GuardCrossing {
                guard_index: idx,
                t_star: t,
                state_minus: s0.clone(),
            }),
        });
    }

    let mut steps_done: usize = 0;
    while t < t_end - end_eps {
        // Step to the next multiple of dt (or t_end), so the sampling grid
        // realigns after impacts.
        let k = (t / dt + 1e-9).floor() + 1.0;
        let t_grid = k * dt;
        let t_next = t_grid.min(t_end);
        let step = t_next - t;
        if step <= 0.0 {
            return Err(Error::StepFailure {
                t,
                detail: "non-positive step while realigning to the grid".to_string(),
            });
        }

        let y_new = rk4_step(sys, &y, step)?;
        if y_new.iter().any(|x| !x.is_finite()) {
            return Err(Error::StepFailure {
                t,
                detail: "non-finite state after RK4 step".to_string(),
            });
        }

        let h_new: Vec<f64> = guards.iter().map(|g| guard_value(g, &y_new, n)).collect();
        if h_new.iter().any(|h| !h.is_finite()) {
            return Err(Error::StepFailure {
                t,
                detail: "non-finite guard value after step".to_string(),
            });
        }

        let mut crossings: Vec<(usize, f64, DVector<f64>)> = Vec::new();
        for (i, guard) in guards.iter().enumerate() {
            if armed[i] && matches_direction(h_prev[i], h_new[i], guard.crossing()) {
                let (tau, y_star) =
                    localize_crossing(sys, guard, &y, h_prev[i], step, config.event_tol, t)?;
                crossings.push((i, tau, y_star));
            }
        }
        if !crossings.is_empty() {
            crossings.sort_by(|a, b| a.1.total_cmp(&b.1));
            if crossings.len() > 1 && (crossings[1].1 - crossings[0].1).abs() <= config.event_tol {
                return Err(Error::AmbiguousCrossing {
                    t: t + crossings[0].1,
                    first: guards[crossings[0].0].label().to_string(),
                    second: guards[crossings[1].0].label().to_string(),
                    tol: config.event_tol,
                });
            }
            let (idx, tau, y_star) = crossings.into_iter().next().expect("nonempty");
            let t_star = t + tau;
            let state_minus = unpack(&y_star, n)?;
            samples.push(TrajectorySample {
                t: t_star,
                state: state_minus.clone(),
            });
            return Ok(SegmentFlow {
                samples,
                crossing: Some(GuardCrossing {
                    guard_index: idx,
                    t_star,
                    state_minus,
                }),
            });
        }

        for i in 0..guards.len() {
            if !armed[i] && h_new[i].abs() > config.event_tol {
                armed[i] = true;
            }
        }
        h_prev = h_new;
        y = y_new;
        t = t_next;
        steps_done += 1;

        let at_end = t >= t_end - end_eps;
        if at_end || steps_done.is_multiple_of(config.sample_stride) {
            samples.push(TrajectorySample {
                t,
                state: unpack(&y, n)?,
            });
        }
        if at_end {
            break;
        }
    }

    Ok(SegmentFlow {
        samples,
        crossing: None,
    })
}

/// Bisect on `h` along re-integrated partial steps from the bracketing state.
fn localize_crossing(
    sys: &MechanicalSystem,
    guard: &Guard,
    y_start: &DVector<f64>,
    h_start: f64,
    step: f64,
    event_tol: f64,
    t: f64,
) -> Result<(f64, DVector<f64>)> {
    let n = sys.dim();
    let mut lo = 0.0_f64;
    let mut hi = step;
    let sign_start = h_start > 0.0;
    let mut best: Option<(f64, DVector<f64>, f64)> = None;
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        let y_mid = rk4_step(sys, y_start, mid)?;
        let h_mid = guard_value(guard, &y_mid, n);
        if !h_mid.is_finite() {
            return Err(Error::StepFailure {
                t: t + mid,
                detail: "non-finite guard value during bisection".to_string(),
            });
        }
        if best
            .as_ref()
            .map(|(_, _, h)| h_mid.abs() < h.abs())
            .unwrap_or(true)
        {
            best = Some((mid, y_mid.clone(), h_mid));
        }
        if h_mid.abs() <= event_tol {
            return Ok((mid, y_mid));
        }
        if (h_mid > 0.0) == sign_start {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    match best {
        Some((tau, y, h)) if h.abs() <= event_tol => Ok((tau, y)),
        _ => Err(Error::StepFailure {
            t,
            detail: format!(
                "event localization on guard '{}' failed to reach |h| <= {event_tol:.1e} \
                 in {MAX_BISECTIONS} bisections",
                guard.label()
            ),
        }),
    }
}

/// Run the full hybrid executor: alternate continuous segments and elastic
/// impacts, recording momentum-map and connection values on both sides of
/// every event.
///
/// A grazing impact ends the run with `Termination::Error` and diagnostics;
/// Zeno suspicion (impact-count bound or impacts closer than the minimum
/// separation) ends it with `Termination::ZenoSuspected`.
pub fn simulate_hybrid(
    sys: &MechanicalSystem,
    action: Option<&SymmetryAction>,
    guards: &[Guard],
    s0: &MomentumState,
    config: &IntegratorConfig,
) -> Result<HybridTrajectory> {
    config.validate()?;
    let mut segments: Vec<Segment> = Vec::new();
    let mut events: Vec<ImpactEvent> = Vec::new();
    let mut current = s0.clone();
    let mut t = 0.0_f64;

    loop {
        let flow = flow_segment(sys, guards, &current, t, config)?;
        segments.push(Segment {
            samples: flow.samples,
        });
        let Some(crossing) = flow.crossing else {
            return Ok(HybridTrajectory {
                segments,
                events,
                termination: Termination::TimeEnd,
            });
        };

        let guard = &guards[crossing.guard_index];
        let outcome =
            match resolve_impact_momentum(sys, guard, &crossing.state_minus, config.event_tol) {
                Ok(outcome) => outcome,
                Err(e @ Error::GrazingImpact { .. }) => {
                    return Ok(HybridTrajectory {
                        segments,
                        events,
                        termination: Termination::Error(format!(
                            "at t = {:.12e}: {e}",
                            crossing.t_star
                        )),
                    });
                }
                Err(e) => return Err(e),
            };

        // The reflected state must leave the surface on the side it came
        // from: its normal rate has to oppose the incoming one.
        let rate_pre = guard_rate(sys, guard, &pack(&outcome.pre))?;
        let rate_post = guard_rate(sys, guard, &pack(&outcome.post))?;
        if rate_pre * rate_post >= 0.0 {
            return Ok(HybridTrajectory {
                segments,
                events,
                termination: Termination::Error(format!(
                    "at t = {:.12e}: post-impact state does not escape guard '{}' \
                     (normal rate {rate_pre:.3e} -> {rate_post:.3e})",
                    crossing.t_star,
                    guard.label()
                )),
            });
        }

        let event = record_event(
            sys,
            action,
            crossing.guard_index,
            guard,
            crossing.t_star,
            &outcome,
        )?;
        let gap_too_small = events
            .last()
            .map(|prev| crossing.t_star - prev.t_star < config.min_impact_separation)
            .unwrap_or(false);
        events.push(event);

        current = outcome.post.clone();
        t = crossing.t_star;

        let zeno = gap_too_small || events.len() >= config.max_impacts;
        let at_end = t >= config.t_end - 1e-12 * config.t_end.abs().max(1.0);
        if zeno || at_end {
            // The post-impact state still belongs to the trajectory; emit it
            // as a trailing one-sample segment so every event has both of
            // its states on record.
            segments.push(Segment {
                samples: vec![TrajectorySample { t, state: current }],
            });
            return Ok(HybridTrajectory {
                segments,
                events,
                termination: if zeno {
                    Termination::ZenoSuspected
                } else {
                    Termination::TimeEnd
                },
            });
        }
    }
}

/// Assemble an event record with momentum-map and connection values on both
/// sides of the impact.
pub fn record_event(
    sys: &MechanicalSystem,
    action: Option<&SymmetryAction>,
    guard_index: usize,
    guard: &Guard,
    t_star: f64,
    outcome: &ImpactOutcome,
) -> Result<ImpactEvent> {
    let (mu_pre, mu_post, conn_pre, conn_post) = match action {
        Some(action) => {
            let mu_pre = momentum_map(action, &outcome.pre)?.0;
            let mu_post = momentum_map(action, &outcome.post)?.0;
            let v_pre = sys.legendre_to_velocity(&outcome.pre)?;
            let v_post = sys.legendre_to_velocity(&outcome.post)?;
            let conn_pre = mechanical_connection(sys, action, &v_pre)?.0;
            let conn_post = mechanical_connection(sys, action, &v_post)?.0;
            (mu_pre, mu_post, conn_pre, conn_post)
        }
        None => (
            DVector::zeros(0),
            DVector::zeros(0),
            DVector::zeros(0),
            DVector::zeros(0),
        ),
    };
    Ok(ImpactEvent {
        t_star,
        guard_index,
        guard_label: guard.label().to_string(),
        outcome: outcome.clone(),
        momentum_pre: mu_pre,
        momentum_post: mu_post,
        connection_pre: conn_pre,
        connection_post: conn_post,
    })
}
