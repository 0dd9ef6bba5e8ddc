//! Abelian symmetry actions and the mechanical connection.
//!
//! A [`SymmetryAction`] stores `k` commuting generator vector fields spanning
//! the vertical space of a principal bundle over shape space. From those and a
//! system's metric we compute the momentum map, the locked inertia tensor,
//! the mechanical connection and the horizontal/vertical splitting.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::mechsys::{
    all_finite, fd_step, ChartPoint, MechanicalSystem, MomentumState, VectorField, VelocityState,
};

/// A Lie-algebra element in the generator basis.
#[derive(Clone, Debug, PartialEq)]
pub struct LieAlgebraVector(pub DVector<f64>);

/// A momentum-map value, one pairing per generator.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentumValue(pub DVector<f64>);

/// An abelian symmetry action given by generator vector fields.
pub struct SymmetryAction {
    dim: usize,
    generators: Vec<VectorField>,
    coordinate_indices: Option<Vec<usize>>,
}

impl std::fmt::Debug for SymmetryAction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SymmetryAction")
            .field("dim", &self.dim)
            .field("algebra_dim", &self.generators.len())
            .field("coordinate_indices", &self.coordinate_indices)
            .finish()
    }
}

impl SymmetryAction {
    /// General constructor from arbitrary generator fields on a
    /// configuration space of dimension `dim`. Requires `1 <= k < dim`.
    pub fn new(dim: usize, generators: Vec<VectorField>) -> Result<Self> {
        let k = generators.len();
        if k == 0 || k >= dim {
            return Err(Error::InvalidConfig {
                detail: format!("symmetry action needs 1 <= k < n, got k = {k}, n = {dim}"),
            });
        }
        Ok(Self {
            dim,
            generators,
            coordinate_indices: None,
        })
    }

    /// Action generated by coordinate fields `d/dq_i` for the given indices.
    /// Enables shape-space projection onto the complementary coordinates.
    pub fn from_coordinates(dim: usize, indices: &[usize]) -> Result<Self> {
        for &i in indices {
            if i >= dim {
                return Err(Error::InvalidConfig {
                    detail: format!("coordinate index {i} out of range for dimension {dim}"),
                });
            }
        }
        let mut sorted = indices.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != indices.len() {
            return Err(Error::InvalidConfig {
                detail: "duplicate coordinate indices in symmetry action".to_string(),
            });
        }
        let generators: Vec<VectorField> = indices
            .iter()
            .map(|&i| {
                Box::new(move |_q: &DVector<f64>| {
                    let mut e = DVector::zeros(dim);
                    e[i] = 1.0;
                    e
                }) as VectorField
            })
            .collect();
        let mut action = Self::new(dim, generators)?;
        action.coordinate_indices = Some(indices.to_vec());
        Ok(action)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Dimension `k` of the abelian algebra.
    pub fn algebra_dim(&self) -> usize {
        self.generators.len()
    }

    pub fn coordinate_indices(&self) -> Option<&[usize]> {
        self.coordinate_indices.as_deref()
    }

    /// Shape-coordinate indices (complement of the fiber coordinates), when
    /// the generators are coordinate fields.
    pub fn shape_indices(&self) -> Option<Vec<usize>> {
        let fiber = self.coordinate_indices.as_ref()?;
        Some((0..self.dim).filter(|i| !fiber.contains(i)).collect())
    }

    /// Evaluate all generators at `q`, as the columns of an `n x k` matrix.
    pub fn generator_matrix(&self, q: &DVector<f64>) -> Result<DMatrix<f64>> {
        let n = self.dim;
        if q.len() != n {
            return Err(Error::DimensionMismatch {
                context: "generator_matrix",
                expected: n,
                got: q.len(),
            });
        }
        let k = self.algebra_dim();
        let mut xi = DMatrix::zeros(n, k);
        for (a, gen) in self.generators.iter().enumerate() {
            let col = gen(q);
            if col.len() != n {
                return Err(Error::DimensionMismatch {
                    context: "generator field",
                    expected: n,
                    got: col.len(),
                });
            }
            if !all_finite(&col) {
                return Err(Error::NonFiniteInput {
                    context: "generator field",
                });
            }
            xi.set_column(a, &col);
        }
        Ok(xi)
    }
}

/// Momentum map `J_a(q, p) = <p, xi_a(q)>`: the unique equivariant momentum
/// map of the cotangent-lifted action, conserved along the continuous flow
/// of any invariant Hamiltonian.
pub fn momentum_map(action: &SymmetryAction, s: &MomentumState) -> Result<MomentumValue> {
    let xi = action.generator_matrix(s.q().coords())?;
    Ok(MomentumValue(xi.transpose() * s.p()))
}

/// Locked inertia tensor `I_ab(q) = xi_a^T M(q) xi_b`, the Gram matrix of the
/// generators in the kinetic-energy metric.
pub fn locked_inertia(
    sys: &MechanicalSystem,
    action: &SymmetryAction,
    q: &ChartPoint,
) -> Result<DMatrix<f64>> {
    let xi = action.generator_matrix(q.coords())?;
    let m = sys.mass_matrix(q)?;
    let inertia = xi.transpose() * m * xi;
    // Symmetrize away rounding before the definiteness check.
    let inertia = 0.5 * (&inertia + inertia.transpose());
    locked_inertia_cholesky(inertia.clone()).map(|_| inertia)
}

fn locked_inertia_cholesky(inertia: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(inertia).ok_or_else(|| Error::NotPositiveDefinite {
        context: "locked inertia tensor",
        detail: "generators degenerate with respect to the metric".to_string(),
    })
}

/// Mechanical connection `A(q, v) = I(q)^{-1} J(q, M(q) v)`.
///
/// Satisfies the reproducing property `A(q, sum_a c_a xi_a(q)) = c`.
pub fn mechanical_connection(
    sys: &MechanicalSystem,
    action: &SymmetryAction,
    s: &VelocityState,
) -> Result<LieAlgebraVector> {
    let xi = action.generator_matrix(s.q().coords())?;
    let m = sys.mass_matrix(s.q())?;
    let j = xi.transpose() * (&m * s.v());
    let inertia = xi.transpose() * m * &xi;
    let chol = locked_inertia_cholesky(0.5 * (&inertia + inertia.transpose()))?;
    Ok(LieAlgebraVector(chol.solve(&j)))
}

/// Split a velocity into horizontal and vertical parts, `(v_hor, v_ver)`.
///
/// `v_ver = sum_a A_a(q, v) xi_a(q)` and `v_hor = v - v_ver`; the horizontal
/// part has vanishing momentum map after the Legendre transform.
pub fn horizontal_vertical_split(
    sys: &MechanicalSystem,
    action: &SymmetryAction,
    s: &VelocityState,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let conn = mechanical_connection(sys, action, s)?;
    let xi = action.generator_matrix(s.q().coords())?;
    let v_ver = xi * conn.0;
    let v_hor = s.v() - &v_ver;
    Ok((v_hor, v_ver))
}

/// Maximum directional derivative of the Lagrangian along the tangent-lifted
/// generator flows, over all samples and generators. Near zero for a genuine
/// symmetry; order of the broken term otherwise.
pub fn check_lagrangian_invariance(
    sys: &MechanicalSystem,
    action: &SymmetryAction,
    samples: &[VelocityState],
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySamples {
            context: "check_lagrangian_invariance",
        });
    }
    let n = action.dim();
    let mut worst: f64 = 0.0;
    for s in samples {
        let q = s.q().coords();
        let xi = action.generator_matrix(q)?;
        for a in 0..action.algebra_dim() {
            let gen = xi.column(a).into_owned();
            let eps = 1e-5 * q.amax().max(s.v().amax()).max(1.0);
            // Tangent lift of the flow, to first order: the configuration
            // moves along xi_a and the velocity along (D xi_a) v.
            let dxi_v = generator_jacobian_times(self_gen(action, a), q, s.v(), n)?;
            let q_plus = ChartPoint::new(q + eps * &gen)?;
            let q_minus = ChartPoint::new(q - eps * &gen)?;
            let l_plus = sys.lagrangian(&VelocityState::new(q_plus, s.v() + eps * &dxi_v)?)?;
            let l_minus = sys.lagrangian(&VelocityState::new(q_minus, s.v() - eps * &dxi_v)?)?;
            worst = worst.max(((l_plus - l_minus) / (2.0 * eps)).abs());
        }
    }
    Ok(worst)
}

fn self_gen(action: &SymmetryAction, a: usize) -> &VectorField {
    &action.generators[a]
}

/// `(D xi)(q) v` by central differences of the generator field.
fn generator_jacobian_times(
    gen: &VectorField,
    q: &DVector<f64>,
    v: &DVector<f64>,
    n: usize,
) -> Result<DVector<f64>> {
    let mut out = DVector::zeros(n);
    for i in 0..n {
        let delta = fd_step(q[i]);
        let mut qp = q.clone();
        let mut qm = q.clone();
        qp[i] += delta;
        qm[i] -= delta;
        let col = (gen(&qp) - gen(&qm)) / (2.0 * delta);
        out += col * v[i];
    }
    Ok(out)
}

/// Opt-in diagnostic: maximum norm of the pairwise finite-difference Lie
/// brackets `[xi_a, xi_b]` over the samples. Near zero for a genuinely
/// abelian action.
pub fn max_generator_commutator(action: &SymmetryAction, samples: &[ChartPoint]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySamples {
            context: "max_generator_commutator",
        });
    }
    let n = action.dim();
    let k = action.algebra_dim();
    let mut worst: f64 = 0.0;
    for q in samples {
        let q = q.coords();
        let xi = action.generator_matrix(q)?;
        for a in 0..k {
            for b in (a + 1)..k {
                let xa = xi.column(a).into_owned();
                let xb = xi.column(b).into_owned();
                let dxb_xa = generator_jacobian_times(self_gen(action, b), q, &xa, n)?;
                let dxa_xb = generator_jacobian_times(self_gen(action, a), q, &xb, n)?;
                worst = worst.max((dxb_xa - dxa_xb).amax());
            }
        }
    }
    Ok(worst)
}
