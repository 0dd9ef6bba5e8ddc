//! Mechanical systems defined by a Riemannian mass-matrix field and a potential.
//!
//! A system is specified by its configuration dimension, a field of symmetric
//! positive-definite matrices `M(q)` and a potential `V(q)`. The Lagrangian,
//! Hamiltonian, Legendre transforms and Hamilton's equations all derive from
//! those two ingredients. Derivatives of `M` and `V` may be supplied
//! analytically; otherwise central differences with a per-coordinate step of
//! `1e-6 * max(1, |q_i|)` are used.
//!
//! Only positive-definite metrics are supported: every evaluation point is
//! checked by Cholesky factorization and indefinite kinetic forms are
//! rejected, even though parts of the theory extend to the pseudo-Riemannian
//! case.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Scalar field over configuration space.
pub type ScalarField = Box<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
/// Vector field over configuration space.
pub type VectorField = Box<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
/// Matrix field over configuration space.
pub type MatrixField = Box<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;
/// Coordinate partials of a matrix field: `(q, i) -> dM/dq_i`.
pub type MatrixPartials = Box<dyn Fn(&DVector<f64>, usize) -> DMatrix<f64> + Send + Sync>;

/// Relative tolerance for the mass-matrix symmetry check.
pub const MASS_SYMMETRY_TOL: f64 = 1e-12;

/// Central-difference step, scaled to the magnitude of the coordinate.
pub(crate) fn fd_step(x: f64) -> f64 {
    1e-6 * x.abs().max(1.0)
}

pub(crate) fn all_finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// A point on the configuration manifold, in chart coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct ChartPoint {
    coords: DVector<f64>,
}

impl ChartPoint {
    pub fn new(coords: DVector<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::DimensionMismatch {
                context: "ChartPoint::new",
                expected: 1,
                got: 0,
            });
        }
        if !all_finite(&coords) {
            return Err(Error::NonFiniteInput {
                context: "ChartPoint::new",
            });
        }
        Ok(Self { coords })
    }

    pub fn from_slice(coords: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(coords))
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &DVector<f64> {
        &self.coords
    }
}

/// A tangent-bundle point `(q, v)`.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocityState {
    q: ChartPoint,
    v: DVector<f64>,
}

impl VelocityState {
    pub fn new(q: ChartPoint, v: DVector<f64>) -> Result<Self> {
        if v.len() != q.dim() {
            return Err(Error::DimensionMismatch {
                context: "VelocityState::new",
                expected: q.dim(),
                got: v.len(),
            });
        }
        if !all_finite(&v) {
            return Err(Error::NonFiniteInput {
                context: "VelocityState::new",
            });
        }
        Ok(Self { q, v })
    }

    pub fn from_slices(q: &[f64], v: &[f64]) -> Result<Self> {
        Self::new(ChartPoint::from_slice(q)?, DVector::from_column_slice(v))
    }

    pub fn q(&self) -> &ChartPoint {
        &self.q
    }

    pub fn v(&self) -> &DVector<f64> {
        &self.v
    }
}

/// A cotangent-bundle point `(q, p)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentumState {
    q: ChartPoint,
    p: DVector<f64>,
}

impl MomentumState {
    pub fn new(q: ChartPoint, p: DVector<f64>) -> Result<Self> {
        if p.len() != q.dim() {
            return Err(Error::DimensionMismatch {
                context: "MomentumState::new",
                expected: q.dim(),
                got: p.len(),
            });
        }
        if !all_finite(&p) {
            return Err(Error::NonFiniteInput {
                context: "MomentumState::new",
            });
        }
        Ok(Self { q, p })
    }

    pub fn from_slices(q: &[f64], p: &[f64]) -> Result<Self> {
        Self::new(ChartPoint::from_slice(q)?, DVector::from_column_slice(p))
    }

    pub fn q(&self) -> &ChartPoint {
        &self.q
    }

    pub fn p(&self) -> &DVector<f64> {
        &self.p
    }
}

/// A mechanical system: kinetic-energy metric plus potential on a chart.
pub struct MechanicalSystem {
    name: String,
    params: BTreeMap<String, f64>,
    coord_names: Vec<String>,
    dim: usize,
    mass: MatrixField,
    mass_partials: Option<MatrixPartials>,
    potential: ScalarField,
    potential_grad: Option<VectorField>,
}

impl fmt::Debug for MechanicalSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MechanicalSystem")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("params", &self.params)
            .finish()
    }
}

impl MechanicalSystem {
    pub fn new(
        name: impl Into<String>,
        coord_names: Vec<String>,
        mass: MatrixField,
        potential: ScalarField,
    ) -> Self {
        let dim = coord_names.len();
        assert!(
            dim >= 1,
            "a mechanical system needs at least one coordinate"
        );
        Self {
            name: name.into(),
            params: BTreeMap::new(),
            coord_names,
            dim,
            mass,
            mass_partials: None,
            potential,
            potential_grad: None,
        }
    }

    /// Attach analytic partial derivatives `dM/dq_i` of the mass matrix.
    pub fn with_mass_partials(mut self, partials: MatrixPartials) -> Self {
        self.mass_partials = Some(partials);
        self
    }

    /// Attach an analytic potential gradient.
    pub fn with_potential_gradient(mut self, grad: VectorField) -> Self {
        self.potential_grad = Some(grad);
        self
    }

    pub fn with_param(mut self, name: impl Into<String>, value: f64) -> Self {
        self.params.insert(name.into(), value);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn coord_names(&self) -> &[String] {
        &self.coord_names
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    pub fn param(&self, name: &str) -> Option<f64> {
        self.params.get(name).copied()
    }

    fn check_dim(&self, len: usize, context: &'static str) -> Result<()> {
        if len != self.dim {
            return Err(Error::DimensionMismatch {
                context,
                expected: self.dim,
                got: len,
            });
        }
        Ok(())
    }

    /// Evaluate `M(q)`, checking symmetry and positive-definiteness.
    pub fn mass_matrix(&self, q: &ChartPoint) -> Result<DMatrix<f64>> {
        self.check_dim(q.dim(), "mass_matrix")?;
        let m = self.mass_matrix_raw(q.coords())?;
        // Cholesky validates positive-definiteness at this point.
        self.cholesky_of(m.clone())?;
        Ok(m)
    }

    pub(crate) fn mass_matrix_raw(&self, q: &DVector<f64>) -> Result<DMatrix<f64>> {
        let m = (self.mass)(q);
        if m.nrows() != self.dim || m.ncols() != self.dim {
            return Err(Error::DimensionMismatch {
                context: "mass matrix field",
                expected: self.dim,
                got: m.nrows().max(m.ncols()),
            });
        }
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteInput {
                context: "mass matrix field",
            });
        }
        let scale = m.amax().max(1.0);
        let defect = (&m - m.transpose()).amax();
        if defect > MASS_SYMMETRY_TOL * scale {
            return Err(Error::NotPositiveDefinite {
                context: "mass matrix",
                detail: format!(
                    "asymmetry |M - M^T| = {defect:.3e} exceeds {MASS_SYMMETRY_TOL:.0e} relative"
                ),
            });
        }
        Ok(m)
    }

    fn cholesky_of(&self, m: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
        Cholesky::new(m).ok_or_else(|| Error::NotPositiveDefinite {
            context: "mass matrix",
            detail: "Cholesky factorization failed".to_string(),
        })
    }

    pub(crate) fn mass_cholesky_raw(&self, q: &DVector<f64>) -> Result<Cholesky<f64, Dyn>> {
        let m = self.mass_matrix_raw(q)?;
        self.cholesky_of(m)
    }

    /// `dM/dq_i`: analytic if supplied, central differences otherwise.
    pub fn mass_partial(&self, q: &ChartPoint, i: usize) -> Result<DMatrix<f64>> {
        self.check_dim(q.dim(), "mass_partial")?;
        self.mass_partial_raw(q.coords(), i)
    }

    pub(crate) fn mass_partial_raw(&self, q: &DVector<f64>, i: usize) -> Result<DMatrix<f64>> {
        if let Some(partials) = &self.mass_partials {
            return Ok(partials(q, i));
        }
        let delta = fd_step(q[i]);
        let mut qp = q.clone();
        let mut qm = q.clone();
        qp[i] += delta;
        qm[i] -= delta;
        let mp = self.mass_matrix_raw(&qp)?;
        let mm = self.mass_matrix_raw(&qm)?;
        Ok((mp - mm) / (2.0 * delta))
    }

    pub fn potential(&self, q: &ChartPoint) -> Result<f64> {
        self.check_dim(q.dim(), "potential")?;
        self.potential_raw(q.coords())
    }

    pub(crate) fn potential_raw(&self, q: &DVector<f64>) -> Result<f64> {
        let v = (self.potential)(q);
        if !v.is_finite() {
            return Err(Error::NonFiniteInput {
                context: "potential field",
            });
        }
        Ok(v)
    }

    /// Potential gradient: analytic if supplied, central differences otherwise.
    pub fn potential_gradient(&self, q: &ChartPoint) -> Result<DVector<f64>> {
        self.check_dim(q.dim(), "potential_gradient")?;
        self.potential_gradient_raw(q.coords())
    }

    pub(crate) fn potential_gradient_raw(&self, q: &DVector<f64>) -> Result<DVector<f64>> {
        if let Some(grad) = &self.potential_grad {
            let g = grad(q);
            if !all_finite(&g) {
                return Err(Error::NonFiniteInput {
                    context: "potential gradient field",
                });
            }
            return Ok(g);
        }
        let mut g = DVector::zeros(self.dim);
        for i in 0..self.dim {
            let delta = fd_step(q[i]);
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[i] += delta;
            qm[i] -= delta;
            g[i] = (self.potential_raw(&qp)? - self.potential_raw(&qm)?) / (2.0 * delta);
        }
        Ok(g)
    }

    /// Mechanical Lagrangian `L = (1/2) v^T M(q) v - V(q)`.
    pub fn lagrangian(&self, s: &VelocityState) -> Result<f64> {
        self.check_dim(s.q().dim(), "lagrangian")?;
        let m = self.mass_matrix_raw(s.q().coords())?;
        let k = 0.5 * s.v().dot(&(&m * s.v()));
        Ok(k - self.potential_raw(s.q().coords())?)
    }

    /// Mechanical Hamiltonian `H = (1/2) p^T M(q)^{-1} p + V(q)`.
    pub fn hamiltonian(&self, s: &MomentumState) -> Result<f64> {
        Ok(self.kinetic_energy(s)? + self.potential_raw(s.q().coords())?)
    }

    /// Kinetic part of the Hamiltonian, `(1/2) p^T M(q)^{-1} p`.
    pub fn kinetic_energy(&self, s: &MomentumState) -> Result<f64> {
        self.check_dim(s.q().dim(), "kinetic_energy")?;
        let chol = self.mass_cholesky_raw(s.q().coords())?;
        Ok(0.5 * s.p().dot(&chol.solve(s.p())))
    }

    /// Legendre transform `p = M(q) v`.
    pub fn legendre_to_momentum(&self, s: &VelocityState) -> Result<MomentumState> {
        self.check_dim(s.q().dim(), "legendre_to_momentum")?;
        let m = self.mass_matrix_raw(s.q().coords())?;
        MomentumState::new(s.q().clone(), &m * s.v())
    }

    /// Inverse Legendre transform `v = M(q)^{-1} p`.
    pub fn legendre_to_velocity(&self, s: &MomentumState) -> Result<VelocityState> {
        self.check_dim(s.q().dim(), "legendre_to_velocity")?;
        let chol = self.mass_cholesky_raw(s.q().coords())?;
        VelocityState::new(s.q().clone(), chol.solve(s.p()))
    }

    /// Hamiltonian vector field, returned as `(dq/dt, dp/dt)`.
    ///
    /// `dq/dt = M^{-1} p` and `dp/dt_i = (1/2) v^T (dM/dq_i) v - dV/dq_i`
    /// with `v = M^{-1} p`, using `d(M^{-1})/dq_i = -M^{-1} (dM/dq_i) M^{-1}`.
    pub fn hamiltonian_vector_field(
        &self,
        s: &MomentumState,
    ) -> Result<(DVector<f64>, DVector<f64>)> {
        self.check_dim(s.q().dim(), "hamiltonian_vector_field")?;
        self.vector_field_raw(s.q().coords(), s.p())
    }

    pub(crate) fn vector_field_raw(
        &self,
        q: &DVector<f64>,
        p: &DVector<f64>,
    ) -> Result<(DVector<f64>, DVector<f64>)> {
        let chol = self.mass_cholesky_raw(q)?;
        let v = chol.solve(p);
        let grad_v = self.potential_gradient_raw(q)?;
        let mut p_dot = DVector::zeros(self.dim);
        for i in 0..self.dim {
            let dm = self.mass_partial_raw(q, i)?;
            p_dot[i] = 0.5 * v.dot(&(&dm * &v)) - grad_v[i];
        }
        Ok((v, p_dot))
    }
}
