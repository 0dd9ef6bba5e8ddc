//! Numerical verification of the structural invariants of hybrid mechanical
//! systems with symmetry: energy and tangential momentum across impacts,
//! hybrid momentum-map conservation, connection preservation/reversal, shape
//! velocity invariance and the symplectic/metric pullback identities of the
//! impact map.

use nalgebra::{DMatrix, DVector};

use crate::bundle::{mechanical_connection, momentum_map, SymmetryAction};
use crate::error::{Error, Result};
use crate::hybridflow::{HybridTrajectory, ImpactEvent};
use crate::impact::{resolve_impact_momentum, Guard, GRADIENT_FLOOR};
use crate::mechsys::{ChartPoint, MechanicalSystem, MomentumState};

/// Relative tolerance factor for connection verdicts, an order above the
/// impact-solver tolerance to avoid false `Other` verdicts.
pub const VERDICT_TOL: f64 = 1e-9;

/// How the mechanical connection transforms across an impact.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConnectionVerdict {
    Preserved,
    Reversed,
    Other,
}

/// Per-event invariant record.
#[derive(Clone, Debug)]
pub struct EventInvariants {
    pub t_star: f64,
    pub guard_label: String,
    /// `H_post - H_pre`.
    pub energy_jump: f64,
    /// `mu_post - mu_pre`, one entry per generator.
    pub momentum_jump: DVector<f64>,
    pub connection_pre: DVector<f64>,
    pub connection_post: DVector<f64>,
    pub verdict: ConnectionVerdict,
    /// Max shape-velocity change, when a shape projection is available.
    pub shape_velocity_delta: Option<f64>,
}

/// Invariant report over all events of a trajectory.
#[derive(Clone, Debug)]
pub struct ImpactInvariantReport {
    pub events: Vec<EventInvariants>,
    pub max_energy_jump: f64,
    pub max_momentum_jump: f64,
}

fn verdict_for(pre: &DVector<f64>, post: &DVector<f64>) -> ConnectionVerdict {
    let tol = VERDICT_TOL * pre.norm().max(1.0);
    if (post - pre).norm() <= tol {
        ConnectionVerdict::Preserved
    } else if (post + pre).norm() <= tol {
        ConnectionVerdict::Reversed
    } else {
        ConnectionVerdict::Other
    }
}

/// Recompute the hybrid invariants from the recorded pre/post impact states.
pub fn impact_invariants(
    traj: &HybridTrajectory,
    sys: &MechanicalSystem,
    action: &SymmetryAction,
) -> Result<ImpactInvariantReport> {
    if traj.events.is_empty() {
        return Err(Error::EmptySamples {
            context: "impact_invariants",
        });
    }
    let mut events = Vec::with_capacity(traj.events.len());
    let mut max_energy: f64 = 0.0;
    let mut max_momentum: f64 = 0.0;
    for event in &traj.events {
        let out = &event.outcome;
        let energy_jump = sys.hamiltonian(&out.post)? - sys.hamiltonian(&out.pre)?;
        let mu_pre = momentum_map(action, &out.pre)?.0;
        let mu_post = momentum_map(action, &out.post)?.0;
        let momentum_jump = mu_post - mu_pre;
        let conn_pre = mechanical_connection(sys, action, &sys.legendre_to_velocity(&out.pre)?)?.0;
        let conn_post =
            mechanical_connection(sys, action, &sys.legendre_to_velocity(&out.post)?)?.0;
        let verdict = verdict_for(&conn_pre, &conn_post);
        let shape_velocity_delta = match action.coordinate_indices() {
            Some(_) => Some(shape_velocity_check(event, sys, action)?),
            None => None,
        };
        max_energy = max_energy.max(energy_jump.abs());
        max_momentum = max_momentum.max(momentum_jump.amax());
        events.push(EventInvariants {
            t_star: event.t_star,
            guard_label: event.guard_label.clone(),
            energy_jump,
            momentum_jump,
            connection_pre: conn_pre,
            connection_post: conn_post,
            verdict,
            shape_velocity_delta,
        });
    }
    Ok(ImpactInvariantReport {
        events,
        max_energy_jump: max_energy,
        max_momentum_jump: max_momentum,
    })
}

/// Maximum change of the shape-coordinate velocity components across an
/// impact. Requires coordinate generators (a shape projection).
pub fn shape_velocity_check(
    event: &ImpactEvent,
    sys: &MechanicalSystem,
    action: &SymmetryAction,
) -> Result<f64> {
    let shape = action
        .shape_indices()
        .ok_or(Error::ShapeProjectionUnavailable)?;
    let v_pre = sys.legendre_to_velocity(&event.outcome.pre)?;
    let v_post = sys.legendre_to_velocity(&event.outcome.post)?;
    Ok(shape
        .iter()
        .map(|&i| (v_post.v()[i] - v_pre.v()[i]).abs())
        .fold(0.0, f64::max))
}

/// Report of the finite-difference pullback checks at one on-surface state.
#[derive(Clone, Debug)]
pub struct PullbackReport {
    /// Labels of the adapted chart: surface parameters then momenta.
    pub coordinate_labels: Vec<String>,
    pub fd_step: f64,
    /// Max entry deviation between the pulled-back canonical two-form and
    /// its restriction to the guard.
    pub form_deviation: f64,
    /// Max kinetic-energy deviation across the probed points (metric
    /// pullback).
    pub metric_deviation: f64,
}

/// Orthonormal completion of `grad` to a basis, by Gram-Schmidt over the
/// standard basis in index order. Returns the `n - 1` tangent directions.
pub fn adapted_tangent_frame(grad: &DVector<f64>) -> Result<Vec<DVector<f64>>> {
    let n = grad.len();
    let norm = grad.norm();
    if norm < GRADIENT_FLOOR {
        return Err(Error::DegenerateGradient {
            guard: "adapted frame".to_string(),
            grad_norm: norm,
        });
    }
    let mut frame: Vec<DVector<f64>> = vec![grad / norm];
    for i in 0..n {
        if frame.len() == n {
            break;
        }
        let mut w = DVector::zeros(n);
        w[i] = 1.0;
        for u in &frame {
            let c = u.dot(&w);
            w -= c * u;
        }
        let wn = w.norm();
        if wn > 1e-8 {
            frame.push(w / wn);
        }
    }
    debug_assert_eq!(frame.len(), n);
    Ok(frame.split_off(1))
}

/// Newton retraction onto the guard surface along its gradient.
fn retract_to_surface(guard: &Guard, mut q: DVector<f64>) -> Result<DVector<f64>> {
    for _ in 0..12 {
        let h = guard.value(&q);
        if !h.is_finite() {
            return Err(Error::NonFiniteInput {
                context: "guard value during retraction",
            });
        }
        if h.abs() <= 1e-14 {
            return Ok(q);
        }
        let grad = guard.gradient(&q)?;
        let gg = grad.norm_squared();
        if gg < GRADIENT_FLOOR * GRADIENT_FLOOR {
            return Err(Error::DegenerateGradient {
                guard: guard.label().to_string(),
                grad_norm: gg.sqrt(),
            });
        }
        q -= (h / gg) * grad;
    }
    let h = guard.value(&q);
    if h.abs() <= 1e-10 {
        return Ok(q);
    }
    Err(Error::OffSurface {
        guard: guard.label().to_string(),
        h_abs: h.abs(),
        event_tol: 1e-10,
    })
}

/// Reflected momentum of the impact map at an on-surface point.
fn reflected_momentum(
    sys: &MechanicalSystem,
    guard: &Guard,
    q: &DVector<f64>,
    p: &DVector<f64>,
) -> Result<DVector<f64>> {
    let grad = guard.gradient(q)?;
    let chol = sys.mass_cholesky_raw(q)?;
    let minv_grad = chol.solve(&grad);
    let alpha = -2.0 * minv_grad.dot(p) / grad.dot(&minv_grad);
    Ok(p + alpha * grad)
}

fn kinetic_energy_raw(sys: &MechanicalSystem, q: &DVector<f64>, p: &DVector<f64>) -> Result<f64> {
    let chol = sys.mass_cholesky_raw(q)?;
    Ok(0.5 * p.dot(&chol.solve(p)))
}

/// Canonical two-form `omega(u, w) = u_q . w_p - u_p . w_q` on packed
/// tangent vectors.
fn canonical_form(u: &DVector<f64>, w: &DVector<f64>, n: usize) -> f64 {
    let uq = u.rows(0, n);
    let up = u.rows(n, n);
    let wq = w.rows(0, n);
    let wp = w.rows(n, n);
    uq.dot(&wp) - up.dot(&wq)
}

fn pack_phase(q: &DVector<f64>, p: &DVector<f64>) -> DVector<f64> {
    let n = q.len();
    let mut y = DVector::zeros(2 * n);
    y.rows_mut(0, n).copy_from(q);
    y.rows_mut(n, n).copy_from(p);
    y
}

/// Check `Delta^* omega = omega|_S` and kinetic-energy (metric) preservation
/// at one transversal on-surface state.
///
/// The guard is charted by `n - 1` surface parameters (an orthonormal
/// completion of `grad h`, Newton-retracted onto the surface) together with
/// all `n` momenta. Central differences of the impact map and of the
/// inclusion along this chart give two Jacobians; the check compares the
/// canonical two-form assembled from each. The deviation carries the O(fd^2)
/// truncation of the differences; for affine guards the restricted map is
/// linear and the deviation is exactly zero.
pub fn symplectic_pullback_check(
    sys: &MechanicalSystem,
    guard: &Guard,
    q: &ChartPoint,
    p: &DVector<f64>,
    fd_step: f64,
    event_tol: f64,
) -> Result<PullbackReport> {
    let n = sys.dim();
    let center = MomentumState::new(q.clone(), p.clone())?;
    // Validates on-surface, gradient and transversality preconditions.
    resolve_impact_momentum(sys, guard, &center, event_tol)?;

    let q0 = q.coords();
    let grad = guard.gradient(q0)?;
    let tangent = adapted_tangent_frame(&grad)?;

    let mut labels: Vec<String> = (1..n).map(|j| format!("s{j}")).collect();
    labels.extend((1..=n).map(|i| format!("p{i}")));

    let mut metric_deviation =
        (kinetic_energy_raw(sys, q0, &reflected_momentum(sys, guard, q0, p)?)?
            - kinetic_energy_raw(sys, q0, p)?)
        .abs();

    // Probe points for each chart direction: surface parameters move the
    // base point along the retracted surface, momentum parameters move p.
    let mut probes: Vec<[(DVector<f64>, DVector<f64>); 2]> = Vec::with_capacity(2 * n - 1);
    for w in &tangent {
        let q_plus = retract_to_surface(guard, q0 + fd_step * w)?;
        let q_minus = retract_to_surface(guard, q0 - fd_step * w)?;
        probes.push([(q_plus, p.clone()), (q_minus, p.clone())]);
    }
    for i in 0..n {
        let mut dp = DVector::zeros(n);
        dp[i] = fd_step;
        probes.push([(q0.clone(), p + &dp), (q0.clone(), p - &dp)]);
    }

    let dim = probes.len();
    let mut cols_map: Vec<DVector<f64>> = Vec::with_capacity(dim);
    let mut cols_incl: Vec<DVector<f64>> = Vec::with_capacity(dim);
    for [(q_plus, p_plus), (q_minus, p_minus)] in &probes {
        let mapped_plus = reflected_momentum(sys, guard, q_plus, p_plus)?;
        let mapped_minus = reflected_momentum(sys, guard, q_minus, p_minus)?;
        metric_deviation = metric_deviation
            .max(
                (kinetic_energy_raw(sys, q_plus, &mapped_plus)?
                    - kinetic_energy_raw(sys, q_plus, p_plus)?)
                .abs(),
            )
            .max(
                (kinetic_energy_raw(sys, q_minus, &mapped_minus)?
                    - kinetic_energy_raw(sys, q_minus, p_minus)?)
                .abs(),
            );
        cols_map.push(
            (pack_phase(q_plus, &mapped_plus) - pack_phase(q_minus, &mapped_minus))
                / (2.0 * fd_step),
        );
        cols_incl
            .push((pack_phase(q_plus, p_plus) - pack_phase(q_minus, p_minus)) / (2.0 * fd_step));
    }

    let mut pulled = DMatrix::zeros(dim, dim);
    let mut restricted = DMatrix::zeros(dim, dim);
    for j in 0..dim {
        for k in 0..dim {
            pulled[(j, k)] = canonical_form(&cols_map[j], &cols_map[k], n);
            restricted[(j, k)] = canonical_form(&cols_incl[j], &cols_incl[k], n);
        }
    }
    let form_deviation = (pulled - restricted).amax();

    Ok(PullbackReport {
        coordinate_labels: labels,
        fd_step,
        form_deviation,
        metric_deviation,
    })
}

/// Segment-wise momentum-map drift and per-event momentum jumps.
#[derive(Clone, Debug)]
pub struct NoetherReport {
    pub max_segment_drift: f64,
    pub segment_drifts: Vec<f64>,
    /// `mu_post - mu_pre` per event, in order.
    pub event_jumps: Vec<DVector<f64>>,
}

/// Hybrid Noether diagnostics: the momentum map should be constant along
/// continuous segments, and across impacts exactly when the guard is
/// vertical.
pub fn noether_report(
    traj: &HybridTrajectory,
    _sys: &MechanicalSystem,
    action: &SymmetryAction,
) -> Result<NoetherReport> {
    let mut segment_drifts = Vec::with_capacity(traj.segments.len());
    let mut max_drift: f64 = 0.0;
    for segment in &traj.segments {
        let first = momentum_map(action, &segment.samples[0].state)?.0;
        let mut drift: f64 = 0.0;
        for sample in &segment.samples[1..] {
            let mu = momentum_map(action, &sample.state)?.0;
            drift = drift.max((mu - &first).amax());
        }
        segment_drifts.push(drift);
        max_drift = max_drift.max(drift);
    }
    let mut event_jumps = Vec::with_capacity(traj.events.len());
    for event in &traj.events {
        let mu_pre = momentum_map(action, &event.outcome.pre)?.0;
        let mu_post = momentum_map(action, &event.outcome.post)?.0;
        event_jumps.push(mu_post - mu_pre);
    }
    Ok(NoetherReport {
        max_segment_drift: max_drift,
        segment_drifts,
        event_jumps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hybridflow::{record_event, simulate_hybrid, IntegratorConfig};
    use crate::impact::CrossingDirection;
    use crate::mechsys::VelocityState;
    use crate::systems;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_pendulum(gravity: f64) -> MechanicalSystem {
        systems::pendulum_cart(1.0, 1.0, 1.0, gravity)
    }

    fn cart_action() -> SymmetryAction {
        SymmetryAction::from_coordinates(2, &[1]).unwrap()
    }

    fn interior_run() -> (MechanicalSystem, SymmetryAction, HybridTrajectory) {
        let sys = unit_pendulum(9.8);
        let action = cart_action();
        let guards = vec![Guard::coordinate(
            2,
            0,
            0.0,
            CrossingDirection::Increasing,
            "interior",
        )];
        let v0 = VelocityState::from_slices(&[-0.6, 0.0], &[2.0, 0.0]).unwrap();
        let s0 = sys.legendre_to_momentum(&v0).unwrap();
        let config = IntegratorConfig {
            t_end: 6.0,
            ..Default::default()
        };
        let traj = simulate_hybrid(&sys, Some(&action), &guards, &s0, &config).unwrap();
        (sys, action, traj)
    }

    #[test]
    fn interior_guard_preserves_connection_and_momentum() {
        let (sys, action, traj) = interior_run();
        assert!(traj.events.len() >= 3);
        let report = impact_invariants(&traj, &sys, &action).unwrap();
        for e in &report.events {
            assert_eq!(e.verdict, ConnectionVerdict::Preserved);
            assert_eq!(e.momentum_jump.amax(), 0.0);
        }
    }

    #[test]
    fn horizontal_guards_reverse_connection() {
        let sys = unit_pendulum(9.8);
        let action = cart_action();
        // Two parallel horizontal guards so the state ping-pongs between
        // them (a single one is left behind after the reversal).
        let guards = vec![
            Guard::pendulum_cart_horizontal(
                1.0,
                1.0,
                1.0,
                0.8,
                CrossingDirection::Increasing,
                "upper",
            ),
            Guard::pendulum_cart_horizontal(
                1.0,
                1.0,
                1.0,
                -0.8,
                CrossingDirection::Decreasing,
                "lower",
            ),
        ];
        let v0 = VelocityState::from_slices(&[0.3, 0.0], &[0.0, 1.0]).unwrap();
        let s0 = sys.legendre_to_momentum(&v0).unwrap();
        let config = IntegratorConfig {
            t_end: 5.0,
            ..Default::default()
        };
        let traj = simulate_hybrid(&sys, Some(&action), &guards, &s0, &config).unwrap();
        assert!(traj.events.len() >= 2, "got {} events", traj.events.len());
        let report = impact_invariants(&traj, &sys, &action).unwrap();
        for e in &report.events {
            assert_eq!(
                e.verdict,
                ConnectionVerdict::Reversed,
                "at t = {}",
                e.t_star
            );
            assert!(e.shape_velocity_delta.unwrap() <= 1e-9);
        }
    }

    #[test]
    fn exterior_event_yields_other_verdict() {
        let sys = unit_pendulum(9.8);
        let action = cart_action();
        let guard = Guard::coordinate(2, 1, 0.0, CrossingDirection::Both, "exterior");
        let v = VelocityState::from_slices(&[0.0, 0.0], &[0.0, 1.0]).unwrap();
        let s = sys.legendre_to_momentum(&v).unwrap();
        let outcome = resolve_impact_momentum(&sys, &guard, &s, 1e-10).unwrap();
        let event = record_event(&sys, Some(&action), 0, &guard, 0.0, &outcome).unwrap();
        assert!((event.connection_pre[0] - 1.0).abs() < 1e-13);
        assert!(event.connection_post[0].abs() < 1e-13);
        assert_eq!(
            verdict_for(&event.connection_pre, &event.connection_post),
            ConnectionVerdict::Other
        );
    }

    #[test]
    fn shape_velocity_examples() {
        let sys = unit_pendulum(9.8);
        let action = cart_action();

        // Horizontal guard: theta-dot is unchanged.
        let guard = Guard::pendulum_cart_horizontal(
            1.0,
            1.0,
            1.0,
            0.0,
            CrossingDirection::Both,
            "horizontal",
        );
        let v = VelocityState::from_slices(&[0.0, 0.0], &[1.0, 0.0]).unwrap();
        let s = sys.legendre_to_momentum(&v).unwrap();
        let outcome = resolve_impact_momentum(&sys, &guard, &s, 1e-10).unwrap();
        let event = record_event(&sys, Some(&action), 0, &guard, 0.0, &outcome).unwrap();
        assert!(shape_velocity_check(&event, &sys, &action).unwrap() <= 1e-10);

        // Exterior guard with v = (0, 1): theta-dot jumps by 2.
        let guard = Guard::coordinate(2, 1, 0.0, CrossingDirection::Both, "exterior");
        let v = VelocityState::from_slices(&[0.0, 0.0], &[0.0, 1.0]).unwrap();
        let s = sys.legendre_to_momentum(&v).unwrap();
        let outcome = resolve_impact_momentum(&sys, &guard, &s, 1e-10).unwrap();
        let event = record_event(&sys, Some(&action), 0, &guard, 0.0, &outcome).unwrap();
        assert!((shape_velocity_check(&event, &sys, &action).unwrap() - 2.0).abs() < 1e-12);

        // Interior guard with v = (1, 0): theta-dot flips, delta = 2.
        let guard = Guard::coordinate(2, 0, 0.0, CrossingDirection::Both, "interior");
        let v = VelocityState::from_slices(&[0.0, 0.0], &[1.0, 0.0]).unwrap();
        let s = sys.legendre_to_momentum(&v).unwrap();
        let outcome = resolve_impact_momentum(&sys, &guard, &s, 1e-10).unwrap();
        let event = record_event(&sys, Some(&action), 0, &guard, 0.0, &outcome).unwrap();
        assert!((shape_velocity_check(&event, &sys, &action).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn shape_projection_requires_coordinate_generators() {
        let sys = unit_pendulum(9.8);
        let gens: Vec<crate::mechsys::VectorField> = vec![Box::new(|_q: &DVector<f64>| {
            DVector::from_column_slice(&[0.0, 1.0])
        })];
        let action = SymmetryAction::new(2, gens).unwrap();
        let guard = Guard::coordinate(2, 0, 0.0, CrossingDirection::Both, "interior");
        let v = VelocityState::from_slices(&[0.0, 0.0], &[1.0, 0.0]).unwrap();
        let s = sys.legendre_to_momentum(&v).unwrap();
        let outcome = resolve_impact_momentum(&sys, &guard, &s, 1e-10).unwrap();
        let event = record_event(&sys, Some(&action), 0, &guard, 0.0, &outcome).unwrap();
        assert!(matches!(
            shape_velocity_check(&event, &sys, &action),
            Err(Error::ShapeProjectionUnavailable)
        ));
    }

    #[test]
    fn pullback_flat_wall() {
        let sys = systems::free_particle_2d();
        let wall = Guard::coordinate(2, 0, 0.0, CrossingDirection::Both, "wall");
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..20 {
            let q = ChartPoint::from_slice(&[0.0, rng.random_range(-2.0..2.0)]).unwrap();
            let p = DVector::from_column_slice(&[
                rng.random_range(0.5..3.0),
                rng.random_range(-3.0..3.0),
            ]);
            let report = symplectic_pullback_check(&sys, &wall, &q, &p, 1e-5, 1e-10).unwrap();
            assert!(report.form_deviation <= 1e-9, "{}", report.form_deviation);
            assert!(report.metric_deviation <= 1e-12);
        }
    }

    #[test]
    fn pullback_pendulum_interior() {
        let sys = unit_pendulum(9.8);
        let guard = Guard::coordinate(2, 0, 0.0, CrossingDirection::Both, "interior");
        let q = ChartPoint::from_slice(&[0.0, 0.0]).unwrap();
        let p = DVector::from_column_slice(&[1.0, 1.0]);
        let report = symplectic_pullback_check(&sys, &guard, &q, &p, 1e-5, 1e-10).unwrap();
        assert!(report.form_deviation <= 1e-6, "{}", report.form_deviation);
    }

    #[test]
    fn pullback_horizontal_guard_preserves_kinetic_energy() {
        let sys = unit_pendulum(9.8);
        let guard = Guard::pendulum_cart_horizontal(
            1.0,
            1.0,
            1.0,
            0.0,
            CrossingDirection::Both,
            "horizontal",
        );
        let q = ChartPoint::from_slice(&[0.0, 0.0]).unwrap();
        let p = DVector::from_column_slice(&[1.0, 1.0]);
        let report = symplectic_pullback_check(&sys, &guard, &q, &p, 1e-5, 1e-10).unwrap();
        assert!(
            report.metric_deviation <= 1e-10,
            "{}",
            report.metric_deviation
        );
    }

    #[test]
    fn pullback_deviation_contracts_quadratically() {
        // Quartering the step must contract the deviation roughly 16x in the
        // truncation-dominated regime. The horizontal guard is used because
        // its surface tangent mixes both coordinates, so the probed impact
        // map is genuinely nonlinear; coordinate guards restrict to linear
        // maps along the probed directions and sit at the rounding floor.
        let sys = unit_pendulum(9.8);
        let guard = Guard::pendulum_cart_horizontal(
            1.0,
            1.0,
            1.0,
            0.0,
            CrossingDirection::Both,
            "horizontal",
        );
        let mut sum_coarse = 0.0;
        let mut sum_fine = 0.0;
        for theta in [0.6_f64, 0.8, 1.0, 1.2] {
            for p in [[2.0, 1.0], [1.0, 2.0]] {
                let q = ChartPoint::from_slice(&[theta, -0.5 * theta.sin()]).unwrap();
                let p = DVector::from_column_slice(&p);
                sum_coarse += symplectic_pullback_check(&sys, &guard, &q, &p, 4e-5, 1e-10)
                    .unwrap()
                    .form_deviation;
                sum_fine += symplectic_pullback_check(&sys, &guard, &q, &p, 1e-5, 1e-10)
                    .unwrap()
                    .form_deviation;
            }
        }
        let ratio = sum_coarse / sum_fine;
        assert!(
            (10.0..=24.0).contains(&ratio),
            "contraction ratio {ratio}, coarse sum {sum_coarse:.3e}, fine sum {sum_fine:.3e}"
        );
    }

    #[test]
    fn pullback_respects_preconditions() {
        let sys = unit_pendulum(9.8);
        let guard = Guard::coordinate(2, 0, 0.0, CrossingDirection::Both, "interior");
        let off = ChartPoint::from_slice(&[0.4, 0.0]).unwrap();
        let p = DVector::from_column_slice(&[1.0, 1.0]);
        assert!(matches!(
            symplectic_pullback_check(&sys, &guard, &off, &p, 1e-5, 1e-10),
            Err(Error::OffSurface { .. })
        ));
        let on = ChartPoint::from_slice(&[0.0, 0.0]).unwrap();
        let tangential = sys
            .legendre_to_momentum(&VelocityState::from_slices(&[0.0, 0.0], &[0.0, 1.0]).unwrap())
            .unwrap();
        assert!(matches!(
            symplectic_pullback_check(&sys, &guard, &on, tangential.p(), 1e-5, 1e-10),
            Err(Error::GrazingImpact { .. })
        ));
    }

    #[test]
    fn adapted_frame_is_orthonormal_and_reproducible() {
        let grad = DVector::from_column_slice(&[0.3, -1.2, 0.5]);
        let frame = adapted_tangent_frame(&grad).unwrap();
        assert_eq!(frame.len(), 2);
        for (i, u) in frame.iter().enumerate() {
            assert!((u.norm() - 1.0).abs() < 1e-12);
            assert!(u.dot(&grad).abs() < 1e-12);
            for w in &frame[i + 1..] {
                assert!(u.dot(w).abs() < 1e-12);
            }
        }
        let again = adapted_tangent_frame(&grad).unwrap();
        for (u, w) in frame.iter().zip(&again) {
            assert_eq!(u, w);
        }
    }

    #[test]
    fn noether_free_particle_wall() {
        let sys = systems::free_particle_2d();
        let action = SymmetryAction::from_coordinates(2, &[1]).unwrap();
        let guards = vec![
            Guard::coordinate(2, 0, 1.0, CrossingDirection::Increasing, "right"),
            Guard::coordinate(2, 0, -1.0, CrossingDirection::Decreasing, "left"),
        ];
        let s0 = MomentumState::from_slices(&[0.0, 0.0], &[1.0, 0.7]).unwrap();
        let config = IntegratorConfig {
            t_end: 6.0,
            ..Default::default()
        };
        let traj = simulate_hybrid(&sys, Some(&action), &guards, &s0, &config).unwrap();
        let report = noether_report(&traj, &sys, &action).unwrap();
        assert!(report.max_segment_drift <= 1e-12);
        for jump in &report.event_jumps {
            assert_eq!(jump.amax(), 0.0);
        }
    }

    #[test]
    fn noether_pendulum_interior_guard() {
        let (sys, action, traj) = interior_run();
        let report = noether_report(&traj, &sys, &action).unwrap();
        assert!(
            report.max_segment_drift <= 1e-9,
            "{}",
            report.max_segment_drift
        );
        for jump in &report.event_jumps {
            assert_eq!(jump.amax(), 0.0);
        }
    }

    #[test]
    fn noether_exterior_event_jump() {
        let sys = unit_pendulum(9.8);
        let action = cart_action();
        let guard = Guard::coordinate(2, 1, 0.0, CrossingDirection::Both, "exterior");
        let s = MomentumState::from_slices(&[0.0, 0.0], &[1.0, 2.0]).unwrap();
        let outcome = resolve_impact_momentum(&sys, &guard, &s, 1e-10).unwrap();
        let mu_pre = momentum_map(&action, &outcome.pre).unwrap().0;
        let mu_post = momentum_map(&action, &outcome.post).unwrap().0;
        assert!(((mu_post[0] - mu_pre[0]) - (-2.0)).abs() < 1e-13);
    }

    #[test]
    fn verdicts_deterministic_on_random_interior_impacts() {
        let sys = unit_pendulum(9.8);
        let action = cart_action();
        let guard = Guard::coordinate(2, 0, 0.3, CrossingDirection::Both, "interior");
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        for _ in 0..100 {
            let x = rng.random_range(-2.0..2.0);
            let p = DVector::from_column_slice(&[
                rng.random_range(0.5..3.0)
                    * if rng.random_range(0.0..1.0) < 0.5 {
                        -1.0
                    } else {
                        1.0
                    },
                rng.random_range(-3.0..3.0),
            ]);
            let s = MomentumState::from_slices(&[0.3, x], p.as_slice()).unwrap();
            let outcome = resolve_impact_momentum(&sys, &guard, &s, 1e-10).unwrap();
            let event = record_event(&sys, Some(&action), 0, &guard, 0.0, &outcome).unwrap();
            assert_eq!(
                verdict_for(&event.connection_pre, &event.connection_post),
                ConnectionVerdict::Preserved
            );
        }
    }
}
