//! Guard surfaces, elastic impact resolution and guard classification.
//!
//! Impacts are resolved by the variational corner conditions: the momentum
//! jump is parallel to `grad h` and energy is conserved. With the
//! configuration fixed at the impact point the conservation condition is a
//! quadratic in the multiplier; its unique nonzero root is
//! `alpha = -2 (grad_h^T M^{-1} p) / (grad_h^T M^{-1} grad_h)`,
//! which reduces to specular reflection on a flat wall.

use nalgebra::{DMatrix, DVector};

use crate::bundle::SymmetryAction;
use crate::error::{Error, Result};
use crate::mechsys::{
    all_finite, fd_step, ChartPoint, MechanicalSystem, MomentumState, ScalarField, VectorField,
    VelocityState,
};

/// Normalized transversality threshold below which an impact is grazing.
pub const GRAZING_TOL: f64 = 1e-8;
/// Default tolerance for guard classification tests.
pub const DEFAULT_CLASS_TOL: f64 = 1e-8;
/// Default on-surface tolerance for impact resolution and event localization.
pub const DEFAULT_EVENT_TOL: f64 = 1e-10;
/// Guard gradients with norm below this are degenerate.
pub const GRADIENT_FLOOR: f64 = 1e-10;
/// Maximum |h| allowed for classification samples.
pub const SAMPLE_SURFACE_TOL: f64 = 1e-8;

/// Which sign change of `h` along the flow triggers an impact.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CrossingDirection {
    /// `h` passes from positive to negative.
    Decreasing,
    /// `h` passes from negative to positive.
    Increasing,
    /// Either sign change.
    Both,
}

/// A switching surface `S = {q : h(q) = 0}` on configuration space.
pub struct Guard {
    label: String,
    crossing: CrossingDirection,
    h: ScalarField,
    grad: Option<VectorField>,
}

impl std::fmt::Debug for Guard {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Guard")
            .field("label", &self.label)
            .field("crossing", &self.crossing)
            .field("analytic_gradient", &self.grad.is_some())
            .finish()
    }
}

impl Guard {
    pub fn new(label: impl Into<String>, crossing: CrossingDirection, h: ScalarField) -> Self {
        Self {
            label: label.into(),
            crossing,
            h,
            grad: None,
        }
    }

    /// Attach an analytic gradient; otherwise central differences are used.
    pub fn with_gradient(mut self, grad: VectorField) -> Self {
        self.grad = Some(grad);
        self
    }

    /// Coordinate guard `h(q) = q_index - value` with constant gradient.
    pub fn coordinate(
        dim: usize,
        index: usize,
        value: f64,
        crossing: CrossingDirection,
        label: impl Into<String>,
    ) -> Self {
        assert!(index < dim, "guard coordinate index out of range");
        Self::new(
            label,
            crossing,
            Box::new(move |q: &DVector<f64>| q[index] - value),
        )
        .with_gradient(Box::new(move |_q: &DVector<f64>| {
            let mut e = DVector::zeros(dim);
            e[index] = 1.0;
            e
        }))
    }

    /// Horizontal guard of the pendulum-cart system:
    /// `f(theta, x) = m l / (M + m) sin(theta) + x - level`.
    pub fn pendulum_cart_horizontal(
        m: f64,
        cart_mass: f64,
        l: f64,
        level: f64,
        crossing: CrossingDirection,
        label: impl Into<String>,
    ) -> Self {
        let ratio = m * l / (cart_mass + m);
        Self::new(
            label,
            crossing,
            Box::new(move |q: &DVector<f64>| ratio * q[0].sin() + q[1] - level),
        )
        .with_gradient(Box::new(move |q: &DVector<f64>| {
            DVector::from_column_slice(&[ratio * q[0].cos(), 1.0])
        }))
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn crossing(&self) -> CrossingDirection {
        self.crossing
    }

    pub fn value(&self, q: &DVector<f64>) -> f64 {
        (self.h)(q)
    }

    /// `grad h(q)`, analytic or by central differences.
    pub fn gradient(&self, q: &DVector<f64>) -> Result<DVector<f64>> {
        let g = match &self.grad {
            Some(grad) => grad(q),
            None => {
                let n = q.len();
                let mut g = DVector::zeros(n);
                for i in 0..n {
                    let delta = fd_step(q[i]);
                    let mut qp = q.clone();
                    let mut qm = q.clone();
                    qp[i] += delta;
                    qm[i] -= delta;
                    g[i] = ((self.h)(&qp) - (self.h)(&qm)) / (2.0 * delta);
                }
                g
            }
        };
        if !all_finite(&g) {
            return Err(Error::NonFiniteInput {
                context: "guard gradient",
            });
        }
        Ok(g)
    }
}

/// Result of resolving one elastic impact.
#[derive(Clone, Debug)]
pub struct ImpactOutcome {
    /// Corner-condition multiplier: `p_post = p_pre + alpha * grad h`.
    pub alpha: f64,
    pub pre: MomentumState,
    pub post: MomentumState,
    pub energy_pre: f64,
    pub energy_post: f64,
}

/// Resolve an elastic impact on the momentum side.
pub fn resolve_impact_momentum(
    sys: &MechanicalSystem,
    guard: &Guard,
    s: &MomentumState,
    event_tol: f64,
) -> Result<ImpactOutcome> {
    let q = s.q().coords();
    let h = guard.value(q);
    if !h.is_finite() {
        return Err(Error::NonFiniteInput {
            context: "guard value",
        });
    }
    if h.abs() > event_tol {
        return Err(Error::OffSurface {
            guard: guard.label().to_string(),
            h_abs: h.abs(),
            event_tol,
        });
    }
    let grad = guard.gradient(q)?;
    let grad_norm = grad.norm();
    if grad_norm < GRADIENT_FLOOR {
        return Err(Error::DegenerateGradient {
            guard: guard.label().to_string(),
            grad_norm,
        });
    }
    let chol = sys.mass_cholesky_raw(q)?;
    let minv_grad = chol.solve(&grad);
    // Normal velocity of the incoming state and metric Gram of the conormal.
    let normal_velocity = minv_grad.dot(s.p());
    let gram = grad.dot(&minv_grad);
    let threshold = GRAZING_TOL * grad_norm * s.p().norm();
    if normal_velocity.abs() < threshold || normal_velocity == 0.0 {
        return Err(Error::GrazingImpact {
            guard: guard.label().to_string(),
            normal_velocity,
            threshold,
        });
    }
    let alpha = -2.0 * normal_velocity / gram;
    let post = MomentumState::new(s.q().clone(), s.p() + alpha * &grad)?;
    let energy_pre = sys.hamiltonian(s)?;
    let energy_post = sys.hamiltonian(&post)?;
    debug_assert!((energy_post - energy_pre).abs() <= 1e-10 * energy_pre.abs().max(1.0));
    Ok(ImpactOutcome {
        alpha,
        pre: s.clone(),
        post,
        energy_pre,
        energy_post,
    })
}

/// Resolve an elastic impact on the velocity side; equals the momentum
/// resolution conjugated by the Legendre transforms.
pub fn resolve_impact_velocity(
    sys: &MechanicalSystem,
    guard: &Guard,
    s: &VelocityState,
    event_tol: f64,
) -> Result<(VelocityState, f64)> {
    let momentum = sys.legendre_to_momentum(s)?;
    let outcome = resolve_impact_momentum(sys, guard, &momentum, event_tol)?;
    let post = sys.legendre_to_velocity(&outcome.post)?;
    Ok((post, outcome.alpha))
}

/// Guard class with respect to the bundle structure.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GuardClass {
    /// Union of fibers: `dh` annihilates every generator.
    Vertical,
    /// Metric normal lies in the vertical space.
    Horizontal,
    Neither,
}

/// Per-sample classification diagnostics.
#[derive(Clone, Debug)]
pub struct SampleDiagnostics {
    /// Normalized `max_a |dh(xi_a)|` at the sample.
    pub generator_pairing: f64,
    /// Relative residual of projecting `M^{-1} grad h` onto the generator span.
    pub offspan_residual: f64,
    pub vertical_ok: bool,
    pub horizontal_ok: bool,
}

/// Classification outcome with reproducible diagnostics.
#[derive(Clone, Debug)]
pub struct GuardClassification {
    pub class: GuardClass,
    pub max_generator_pairing: f64,
    pub max_offspan_residual: f64,
    pub samples: Vec<SampleDiagnostics>,
}

/// Classify a guard as vertical, horizontal or neither from on-surface samples.
///
/// Vertical is tested infinitesimally (`dh(xi_a) = 0` at every sample), which
/// by the invariance lemma characterizes fiber unions on connected fibers.
/// Horizontal requires the metric gradient `M^{-1} grad h` to lie in the
/// generator span at every sample. Mixed signals across the sample set are an
/// error, not a silent `Neither`.
pub fn classify_guard(
    sys: &MechanicalSystem,
    action: &SymmetryAction,
    guard: &Guard,
    samples: &[ChartPoint],
    class_tol: f64,
) -> Result<GuardClassification> {
    if samples.is_empty() {
        return Err(Error::EmptySamples {
            context: "classify_guard",
        });
    }
    let mut diags = Vec::with_capacity(samples.len());
    let mut max_pairing: f64 = 0.0;
    let mut max_residual: f64 = 0.0;
    for point in samples {
        let q = point.coords();
        let h = guard.value(q);
        if h.abs() > SAMPLE_SURFACE_TOL {
            return Err(Error::OffSurface {
                guard: guard.label().to_string(),
                h_abs: h.abs(),
                event_tol: SAMPLE_SURFACE_TOL,
            });
        }
        let grad = guard.gradient(q)?;
        let grad_norm = grad.norm();
        if grad_norm < GRADIENT_FLOOR {
            return Err(Error::DegenerateGradient {
                guard: guard.label().to_string(),
                grad_norm,
            });
        }
        let xi = action.generator_matrix(q)?;

        let mut pairing: f64 = 0.0;
        for a in 0..xi.ncols() {
            let col = xi.column(a);
            let scale = grad_norm * col.norm();
            pairing = pairing.max((grad.dot(&col) / scale).abs());
        }

        let chol = sys.mass_cholesky_raw(q)?;
        let w = chol.solve(&grad);
        let residual = offspan_residual(&w, &xi)?;

        max_pairing = max_pairing.max(pairing);
        max_residual = max_residual.max(residual);
        diags.push(SampleDiagnostics {
            generator_pairing: pairing,
            offspan_residual: residual,
            vertical_ok: pairing <= class_tol,
            horizontal_ok: residual <= class_tol,
        });
    }

    let n = diags.len();
    let vertical_hits = diags.iter().filter(|d| d.vertical_ok).count();
    let horizontal_hits = diags.iter().filter(|d| d.horizontal_ok).count();

    let class = if vertical_hits == n && horizontal_hits == n {
        return Err(Error::InconsistentSamples {
            guard: guard.label().to_string(),
            samples: n,
            vertical_hits,
            horizontal_hits,
            detail: "guard tests vertical and horizontal simultaneously; this would force k = n"
                .to_string(),
        });
    } else if vertical_hits == n {
        GuardClass::Vertical
    } else if horizontal_hits == n {
        GuardClass::Horizontal
    } else if vertical_hits == 0 && horizontal_hits == 0 {
        GuardClass::Neither
    } else {
        return Err(Error::InconsistentSamples {
            guard: guard.label().to_string(),
            samples: n,
            vertical_hits,
            horizontal_hits,
            detail: format!(
                "max pairing {max_pairing:.3e}, max off-span residual {max_residual:.3e}"
            ),
        });
    };

    Ok(GuardClassification {
        class,
        max_generator_pairing: max_pairing,
        max_offspan_residual: max_residual,
        samples: diags,
    })
}

/// Relative residual of the least-squares projection of `w` onto the columns
/// of `xi`.
fn offspan_residual(w: &DVector<f64>, xi: &DMatrix<f64>) -> Result<f64> {
    let gram = xi.transpose() * xi;
    let chol = nalgebra::Cholesky::new(gram).ok_or_else(|| Error::NotPositiveDefinite {
        context: "generator Gram matrix",
        detail: "generators linearly dependent at a classification sample".to_string(),
    })?;
    let coeffs = chol.solve(&(xi.transpose() * w));
    let residual = (w - xi * coeffs).norm();
    Ok(residual / w.norm().max(f64::MIN_POSITIVE))
}
