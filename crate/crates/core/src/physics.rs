//! Constitutive functions of the Cahn–Hilliard model and the scalar auxiliary variable.

use crate::{Error, Result};

/// Smallest admissible E1 + C before an SAV denominator is formed.
pub const ENERGY_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Mobility {
    /// M(c) = max(0, c(1 - c))
    Degenerate,
    Constant(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhysicsParams {
    /// Interface thickness ε.
    pub epsilon: f64,
    /// Density ρ.
    pub rho: f64,
    /// SAV shift C in r = √(E1 + C).
    pub c_shift: f64,
    pub mobility: Mobility,
}

impl PhysicsParams {
    pub fn new(epsilon: f64, rho: f64, c_shift: f64, mobility: Mobility) -> Result<Self> {
        let p = Self { epsilon, rho, c_shift, mobility };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidParameter(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::InvalidParameter(format!("rho must be positive, got {}", self.rho)));
        }
        if !(self.c_shift >= 0.0 && self.c_shift.is_finite()) {
            return Err(Error::InvalidParameter(format!("C shift must be non-negative, got {}", self.c_shift)));
        }
        if let Mobility::Constant(m) = self.mobility {
            if !(m >= 0.0 && m.is_finite()) {
                return Err(Error::InvalidParameter(format!("constant mobility must be non-negative, got {m}")));
            }
        }
        Ok(())
    }

    pub fn mobility(&self, c: f64) -> f64 {
        mobility(self.mobility, c)
    }

    /// √(E1 + C), failing below [`ENERGY_FLOOR`].
    pub fn sav_scale(&self, e1: f64) -> Result<f64> {
        let value = e1 + self.c_shift;
        if value.is_nan() || value < ENERGY_FLOOR {
            return Err(Error::EnergyFloor { value, floor: ENERGY_FLOOR });
        }
        Ok(value.sqrt())
    }
}

/// Double-well potential f0(c) = ¼ c² (1 - c)².
#[inline]
pub fn f0(c: f64) -> f64 {
    let d = c * (1.0 - c);
    0.25 * d * d
}

/// f0'(c) = ½ c (1 - c)(1 - 2c).
#[inline]
pub fn f0_prime(c: f64) -> f64 {
    0.5 * c * (1.0 - c) * (1.0 - 2.0 * c)
}

/// Mobility, clamped at zero outside [0, 1] in the degenerate case.
#[inline]
pub fn mobility(kind: Mobility, c: f64) -> f64 {
    match kind {
        Mobility::Degenerate => (c * (1.0 - c)).max(0.0),
        Mobility::Constant(m) => m,
    }
}

/// Initial auxiliary variable r = √(E1 + C).
pub fn r_init(e1: f64, c_shift: f64) -> Result<f64> {
    let value = e1 + c_shift;
    if !(value > 0.0) {
        return Err(Error::EnergyFloor { value, floor: 0.0 });
    }
    Ok(value.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    #[test]
    fn double_well_values() {
        assert_eq!(f0(0.0), 0.0);
        assert_eq!(f0(1.0), 0.0);
        assert_relative_eq!(f0(0.5), 0.015625, epsilon = 1e-17);
        assert_relative_eq!(f0(-0.1), 0.003025, epsilon = 1e-17);
    }

    #[test]
    fn derivative_values() {
        for c in [0.0, 0.5, 1.0] {
            assert_eq!(f0_prime(c), 0.0);
        }
        assert_relative_eq!(f0_prime(0.25), 0.046875, epsilon = 1e-17);
        let d = 1e-5;
        let fd = (f0(0.3 + d) - f0(0.3 - d)) / (2.0 * d);
        assert_relative_eq!(fd, f0_prime(0.3), epsilon = 1e-10);
    }

    #[test]
    fn derivative_matches_finite_differences_at_random_points() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let d = 1e-5;
        for _ in 0..100 {
            let c: f64 = rng.random_range(-0.5..1.5);
            assert!(f0(c) >= 0.0);
            let fd = (f0(c + d) - f0(c - d)) / (2.0 * d);
            assert!((fd - f0_prime(c)).abs() < 1e-8, "c = {c}");
        }
    }

    #[test]
    fn mobility_values() {
        assert_relative_eq!(mobility(Mobility::Degenerate, 0.5), 0.25);
        assert_eq!(mobility(Mobility::Degenerate, 0.0), 0.0);
        assert_eq!(mobility(Mobility::Degenerate, 1.0), 0.0);
        assert_eq!(mobility(Mobility::Degenerate, 1.2), 0.0);
        assert_eq!(mobility(Mobility::Degenerate, -0.3), 0.0);
        assert_eq!(mobility(Mobility::Constant(2.0), 1.2), 2.0);
    }

    #[test]
    fn auxiliary_variable() {
        assert_eq!(r_init(0.0, 1.0).unwrap(), 1.0);
        assert_eq!(r_init(3.0, 1.0).unwrap(), 2.0);
        assert!(r_init(0.0, 0.0).is_err());
        assert!(r_init(-2.0, 1.0).is_err());
        // c ≡ ½ on the unit sphere: E1 = 4π/64
        let r = r_init(4.0 * std::f64::consts::PI / 64.0, 0.0).unwrap();
        assert_relative_eq!(r, (std::f64::consts::PI / 16.0).sqrt(), epsilon = 1e-15);
        assert_relative_eq!(r, 0.443113, epsilon = 1e-6);
        for e1 in [1e-6, 0.3, 17.0] {
            let r = r_init(e1, 0.5).unwrap();
            assert_relative_eq!(r * r - 0.5, e1, max_relative = 1e-14);
        }
    }

    #[test]
    fn energy_floor_guard() {
        let p = PhysicsParams::new(0.05, 1.0, 0.0, Mobility::Degenerate).unwrap();
        assert!(p.sav_scale(1e-14).is_err());
        assert_relative_eq!(p.sav_scale(4.0).unwrap(), 2.0);
        assert!(PhysicsParams::new(0.0, 1.0, 0.0, Mobility::Degenerate).is_err());
        assert!(PhysicsParams::new(0.1, -1.0, 0.0, Mobility::Degenerate).is_err());
    }
}
