//! Built-in mechanical systems and the programmatic registry.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mechsys::MechanicalSystem;

/// Pendulum on a cart with coordinates `(theta, x)`.
///
/// Metric `[[m l^2, m l cos(theta)], [m l cos(theta), M + m]]` and potential
/// `V(theta) = -m g l cos(theta)`, with analytic derivatives.
pub fn pendulum_cart(m: f64, cart_mass: f64, l: f64, gravity: f64) -> MechanicalSystem {
    let total = cart_mass + m;
    MechanicalSystem::new(
        "pendulum-cart",
        vec!["theta".into(), "x".into()],
        Box::new(move |q: &DVector<f64>| {
            let c = q[0].cos();
            DMatrix::from_row_slice(2, 2, &[m * l * l, m * l * c, m * l * c, total])
        }),
        Box::new(move |q: &DVector<f64>| -m * gravity * l * q[0].cos()),
    )
    .with_mass_partials(Box::new(move |q: &DVector<f64>, i: usize| {
        if i == 0 {
            let s = q[0].sin();
            DMatrix::from_row_slice(2, 2, &[0.0, -m * l * s, -m * l * s, 0.0])
        } else {
            DMatrix::zeros(2, 2)
        }
    }))
    .with_potential_gradient(Box::new(move |q: &DVector<f64>| {
        DVector::from_column_slice(&[m * gravity * l * q[0].sin(), 0.0])
    }))
    .with_param("m", m)
    .with_param("M", cart_mass)
    .with_param("l", l)
    .with_param("gravity", gravity)
}

/// Pendulum-cart variant without analytic derivatives; exercises the
/// finite-difference fallbacks.
pub fn pendulum_cart_fd(m: f64, cart_mass: f64, l: f64, gravity: f64) -> MechanicalSystem {
    let total = cart_mass + m;
    MechanicalSystem::new(
        "pendulum-cart-fd",
        vec!["theta".into(), "x".into()],
        Box::new(move |q: &DVector<f64>| {
            let c = q[0].cos();
            DMatrix::from_row_slice(2, 2, &[m * l * l, m * l * c, m * l * c, total])
        }),
        Box::new(move |q: &DVector<f64>| -m * gravity * l * q[0].cos()),
    )
    .with_param("m", m)
    .with_param("M", cart_mass)
    .with_param("l", l)
    .with_param("gravity", gravity)
}

/// Free particle in the plane: identity metric, zero potential.
pub fn free_particle_2d() -> MechanicalSystem {
    MechanicalSystem::new(
        "free-particle-2d",
        vec!["x1".into(), "x2".into()],
        Box::new(|_q: &DVector<f64>| DMatrix::identity(2, 2)),
        Box::new(|_q: &DVector<f64>| 0.0),
    )
    .with_mass_partials(Box::new(|_q: &DVector<f64>, _i: usize| {
        DMatrix::zeros(2, 2)
    }))
    .with_potential_gradient(Box::new(|_q: &DVector<f64>| DVector::zeros(2)))
}

/// Descriptor for a registered system.
pub struct SystemEntry {
    pub name: &'static str,
    pub dim: usize,
    pub coords: &'static [&'static str],
    /// Parameter names with their default values, in declaration order.
    pub params: &'static [(&'static str, f64)],
    build: fn(&BTreeMap<String, f64>) -> MechanicalSystem,
}

impl SystemEntry {
    pub fn build(&self, overrides: &BTreeMap<String, f64>) -> Result<MechanicalSystem> {
        for key in overrides.keys() {
            if !self.params.iter().any(|(name, _)| name == key) {
                return Err(Error::UnknownParameter {
                    system: self.name.to_string(),
                    param: key.clone(),
                });
            }
        }
        Ok((self.build)(overrides))
    }
}

fn resolved(overrides: &BTreeMap<String, f64>, name: &str, default: f64) -> f64 {
    overrides.get(name).copied().unwrap_or(default)
}

fn build_pendulum_cart(overrides: &BTreeMap<String, f64>) -> MechanicalSystem {
    pendulum_cart(
        resolved(overrides, "m", 1.0),
        resolved(overrides, "M", 1.0),
        resolved(overrides, "l", 1.0),
        resolved(overrides, "gravity", 9.8),
    )
}

fn build_free_particle_2d(_overrides: &BTreeMap<String, f64>) -> MechanicalSystem {
    free_particle_2d()
}

const ENTRIES: &[SystemEntry] = &[
    SystemEntry {
        name: "pendulum-cart",
        dim: 2,
        coords: &["theta", "x"],
        params: &[("m", 1.0), ("M", 1.0), ("l", 1.0), ("gravity", 9.8)],
        build: build_pendulum_cart,
    },
    SystemEntry {
        name: "free-particle-2d",
        dim: 2,
        coords: &["x1", "x2"],
        params: &[],
        build: build_free_particle_2d,
    },
];

/// Named registry of built-in systems.
pub struct SystemRegistry;

impl SystemRegistry {
    pub fn entries() -> &'static [SystemEntry] {
        ENTRIES
    }

    pub fn lookup(name: &str) -> Result<&'static SystemEntry> {
        ENTRIES
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::UnknownSystem {
                name: name.to_string(),
            })
    }

    pub fn build(name: &str, overrides: &BTreeMap<String, f64>) -> Result<MechanicalSystem> {
        Self::lookup(name)?.build(overrides)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_lists_builtins() {
        let names: Vec<_> = SystemRegistry::entries().iter().map(|e| e.name).collect();
        assert_eq!(names, vec!["pendulum-cart", "free-particle-2d"]);
    }

    #[test]
    fn registry_builds_with_overrides() {
        let mut params = BTreeMap::new();
        params.insert("gravity".to_string(), 0.0);
        params.insert("m".to_string(), 2.0);
        let sys = SystemRegistry::build("pendulum-cart", &params).unwrap();
        assert_eq!(sys.param("gravity"), Some(0.0));
        assert_eq!(sys.param("m"), Some(2.0));
        assert_eq!(sys.param("M"), Some(1.0));
    }

    #[test]
    fn registry_rejects_unknown_system_and_param() {
        assert!(matches!(
            SystemRegistry::build("nonexistent", &BTreeMap::new()),
            Err(Error::UnknownSystem { .. })
        ));
        let mut params = BTreeMap::new();
        params.insert("bogus".to_string(), 1.0);
        assert!(matches!(
            SystemRegistry::build("pendulum-cart", &params),
            Err(Error::UnknownParameter { .. })
        ));
    }
}
