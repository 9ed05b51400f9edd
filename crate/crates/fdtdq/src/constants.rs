//! Physical constants (SI) and unit conversions.

use crate::error::{Error, Result};

/// Planck constant, exact by the 2019 SI definition.
pub const PLANCK: f64 = 6.626_070_15e-34;
/// Reduced Planck constant `h / 2π`.
pub const HBAR: f64 = PLANCK / (2.0 * std::f64::consts::PI);
pub const ELECTRON_MASS: f64 = 9.109_383_701_5e-31;
pub const DALTON: f64 = 1.660_539_066_60e-27;
pub const ELECTRON_VOLT: f64 = 1.602_176_634e-19;
pub const BOLTZMANN: f64 = 1.380_649e-23;

pub const NANOMETER: f64 = 1e-9;
pub const ANGSTROM: f64 = 1e-10;
pub const FEMTOSECOND: f64 = 1e-15;
pub const ATTOSECOND: f64 = 1e-18;
pub const PICOSECOND: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalConstants {
    pub hbar: f64,
    pub mass: f64,
}

impl PhysicalConstants {
    pub fn new(hbar: f64, mass: f64) -> Result<Self> {
        if !(hbar > 0.0 && hbar.is_finite() && mass > 0.0 && mass.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "constants must be positive and finite (hbar = {hbar}, mass = {mass})"
            )));
        }
        Ok(Self { hbar, mass })
    }

    pub fn electron() -> Self {
        Self { hbar: HBAR, mass: ELECTRON_MASS }
    }

    pub fn proton_dalton() -> Self {
        Self { hbar: HBAR, mass: DALTON }
    }

    /// `ħ²/2m`, the prefactor of the kinetic operator.
    pub fn kinetic_prefactor(&self) -> f64 {
        self.hbar * self.hbar / (2.0 * self.mass)
    }
}

/// Scale factor to SI for a unit name accepted in configuration files.
pub fn unit_scale(unit: &str) -> Result<f64> {
    let s = match unit {
        "m" => 1.0,
        "nm" => NANOMETER,
        "A" | "Å" | "angstrom" => ANGSTROM,
        "s" => 1.0,
        "ps" => PICOSECOND,
        "fs" => FEMTOSECOND,
        "as" => ATTOSECOND,
        "J" => 1.0,
        "eV" => ELECTRON_VOLT,
        "meV" => 1e-3 * ELECTRON_VOLT,
        "keV" => 1e3 * ELECTRON_VOLT,
        "kg" => 1.0,
        "Da" | "dalton" => DALTON,
        "me" | "electron_mass" => ELECTRON_MASS,
        "K" => 1.0,
        "1" | "" => 1.0,
        _ => return Err(Error::Config(format!("unknown unit '{unit}'"))),
    };
    Ok(s)
}
