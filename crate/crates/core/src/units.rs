//! Physical constants, unit conversions and bath-parameter algebra.
//!
//! Everything inside the crate is expressed in Hartree atomic units
//! (ħ = mₑ = a₀ = E_h = 1). Lengths are bohr, times ħ/E_h, energies hartree,
//! masses electron masses. The helpers here translate the laboratory units
//! used in configuration files (Å, fs, cm⁻¹, K, g) at the boundary.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// CODATA 2018 values.
pub mod consts {
    /// Hartree energy in wavenumbers (cm⁻¹).
    pub const HARTREE_IN_INV_CM: f64 = 219_474.631_363_20;
    /// Bohr radius in ångström.
    pub const BOHR_IN_ANGSTROM: f64 = 0.529_177_210_903;
    /// Atomic unit of time in femtoseconds.
    pub const AU_TIME_IN_FS: f64 = 2.418_884_326_585_7e-2;
    /// Electron mass in grams.
    pub const ELECTRON_MASS_IN_G: f64 = 9.109_383_701_5e-28;
    /// Boltzmann constant in hartree per kelvin.
    pub const BOLTZMANN_IN_HARTREE_PER_K: f64 = 3.166_811_563_455_6e-6;
}

use consts::*;

pub fn angstrom_to_bohr(x: f64) -> f64 {
    x / BOHR_IN_ANGSTROM
}

pub fn bohr_to_angstrom(x: f64) -> f64 {
    x * BOHR_IN_ANGSTROM
}

pub fn fs_to_au(t: f64) -> f64 {
    t / AU_TIME_IN_FS
}

pub fn au_to_fs(t: f64) -> f64 {
    t * AU_TIME_IN_FS
}

pub fn inv_cm_to_hartree(e: f64) -> f64 {
    e / HARTREE_IN_INV_CM
}

pub fn hartree_to_inv_cm(e: f64) -> f64 {
    e * HARTREE_IN_INV_CM
}

pub fn gram_to_au_mass(m: f64) -> f64 {
    m / ELECTRON_MASS_IN_G
}

pub fn au_mass_to_gram(m: f64) -> f64 {
    m * ELECTRON_MASS_IN_G
}

/// Thermal energy k_B·T in hartree.
pub fn thermal_energy(temperature_k: f64) -> f64 {
    BOLTZMANN_IN_HARTREE_PER_K * temperature_k
}

/// Angular frequency (rad per atomic time unit) to ps⁻¹.
pub fn angular_au_to_per_ps(omega: f64) -> f64 {
    omega / (AU_TIME_IN_FS * 1e-3)
}

/// Angular frequency in wavenumbers, i.e. ħω expressed in cm⁻¹.
pub fn angular_au_to_inv_cm(omega: f64) -> f64 {
    hartree_to_inv_cm(omega)
}

/// Reduced mass of a homonuclear diatomic of total mass `molecule_g`, in
/// electron masses.
pub fn homonuclear_reduced_mass(molecule_g: f64) -> f64 {
    gram_to_au_mass(molecule_g / 4.0)
}

/// Units accepted for the decoherence rate Λ (length⁻²·time⁻¹).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RateUnit {
    /// bohr⁻²·(ħ/E_h)⁻¹
    AtomicUnits,
    /// Å⁻²·fs⁻¹
    PerAngstromSqFs,
    /// cm⁻²·s⁻¹
    PerCmSqS,
}

impl RateUnit {
    pub const ALL: [RateUnit; 3] = [
        RateUnit::AtomicUnits,
        RateUnit::PerAngstromSqFs,
        RateUnit::PerCmSqS,
    ];

    /// Value of one atomic unit of Λ in this unit.
    fn per_atomic_unit(self) -> f64 {
        match self {
            RateUnit::AtomicUnits => 1.0,
            RateUnit::PerAngstromSqFs => {
                1.0 / (BOHR_IN_ANGSTROM * BOHR_IN_ANGSTROM * AU_TIME_IN_FS)
            }
            RateUnit::PerCmSqS => {
                let bohr_cm = BOHR_IN_ANGSTROM * 1e-8;
                let au_time_s = AU_TIME_IN_FS * 1e-15;
                1.0 / (bohr_cm * bohr_cm * au_time_s)
            }
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            RateUnit::AtomicUnits => "au",
            RateUnit::PerAngstromSqFs => "A^-2fs^-1",
            RateUnit::PerCmSqS => "cm^-2s^-1",
        }
    }
}

impl fmt::Display for RateUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for RateUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let compact: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        match compact.as_str() {
            "au" | "a.u." | "a.u" => Ok(RateUnit::AtomicUnits),
            "A^-2fs^-1" | "Å^-2fs^-1" | "A-2fs-1" | "Å⁻²fs⁻¹" | "1/(A^2fs)" => {
                Ok(RateUnit::PerAngstromSqFs)
            }
            "cm^-2s^-1" | "cm-2s-1" | "cm⁻²s⁻¹" | "1/(cm^2s)" => Ok(RateUnit::PerCmSqS),
            _ => Err(Error::UnsupportedUnit(s.to_string())),
        }
    }
}

/// Rescale a decoherence rate between units.
pub fn convert_rate(value: f64, from: RateUnit, to: RateUnit) -> f64 {
    if from == to {
        return value;
    }
    value / from.per_atomic_unit() * to.per_atomic_unit()
}

/// Parse a rate with a mandatory unit suffix, e.g. `"9e-3 A^-2fs^-1"`.
/// Returns the value in atomic units.
pub fn parse_rate(text: &str) -> Result<f64> {
    let text = text.trim();
    let split = text
        .find(|c: char| c.is_whitespace())
        .ok_or_else(|| Error::UnsupportedUnit(format!("{text} (missing unit suffix)")))?;
    let (number, unit) = text.split_at(split);
    let value: f64 = number
        .parse()
        .map_err(|_| Error::Domain(format!("cannot parse rate value `{number}`")))?;
    let unit: RateUnit = unit.trim().parse()?;
    if !(value.is_finite() && value >= 0.0) {
        return Err(Error::Domain(format!(
            "decoherence rate must be ≥ 0, got {value}"
        )));
    }
    Ok(convert_rate(value, unit, RateUnit::AtomicUnits))
}

fn check_nonnegative(name: &str, value: f64) -> Result<()> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "{name} must be finite and ≥ 0, got {value}"
        )))
    }
}

/// Λ = 2mηk_BT/ħ² for friction rate `friction` (a.u. time⁻¹), temperature in
/// kelvin and mass in electron masses.
pub fn decoherence_rate(friction: f64, temperature_k: f64, mass: f64) -> Result<f64> {
    check_nonnegative("friction", friction)?;
    check_nonnegative("temperature", temperature_k)?;
    check_nonnegative("mass", mass)?;
    Ok(2.0 * mass * friction * thermal_energy(temperature_k))
}

/// ξ = η_e·T, in kelvin.
pub fn xi(reduced_friction: f64, temperature_k: f64) -> Result<f64> {
    check_nonnegative("reduced friction", reduced_friction)?;
    check_nonnegative("temperature", temperature_k)?;
    Ok(reduced_friction * temperature_k)
}

pub const DEFAULT_VALIDITY_THRESHOLD: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Validity {
    /// 4k_BT/ħω
    pub ratio: f64,
    pub valid: bool,
}

/// High-temperature validity ratio 4k_BT/ħω of the reduced model, flagged
/// valid above `DEFAULT_VALIDITY_THRESHOLD`.
pub fn markov_validity(temperature_k: f64, omega: f64) -> Result<Validity> {
    markov_validity_with_threshold(temperature_k, omega, DEFAULT_VALIDITY_THRESHOLD)
}

pub fn markov_validity_with_threshold(
    temperature_k: f64,
    omega: f64,
    threshold: f64,
) -> Result<Validity> {
    check_nonnegative("temperature", temperature_k)?;
    if !(omega.is_finite() && omega > 0.0) {
        return Err(Error::Domain(format!(
            "characteristic frequency must be > 0, got {omega}"
        )));
    }
    let ratio = 4.0 * thermal_energy(temperature_k) / omega;
    Ok(Validity {
        ratio,
        valid: ratio > threshold,
    })
}

/// Friction and temperature from which Λ was derived.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThermalBath {
    /// η_e = η/ω₀, dimensionless.
    pub reduced_friction: f64,
    pub temperature_k: f64,
    /// Damping rate η in a.u. time⁻¹.
    pub friction: f64,
}

/// Bath description: the rate Λ, optionally with the thermal parameters it
/// came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BathSpec {
    rate: f64,
    thermal: Option<ThermalBath>,
}

impl BathSpec {
    pub fn from_rate(rate: f64) -> Result<Self> {
        check_nonnegative("decoherence rate", rate)?;
        Ok(BathSpec {
            rate,
            thermal: None,
        })
    }

    /// Λ from the reduced friction η_e = η/ω₀ of an oscillator of mass
    /// `mass` and harmonic frequency `omega0`.
    pub fn from_friction(
        reduced_friction: f64,
        temperature_k: f64,
        mass: f64,
        omega0: f64,
    ) -> Result<Self> {
        check_nonnegative("reduced friction", reduced_friction)?;
        check_nonnegative("harmonic frequency", omega0)?;
        let friction = reduced_friction * omega0;
        let rate = decoherence_rate(friction, temperature_k, mass)?;
        Ok(BathSpec {
            rate,
            thermal: Some(ThermalBath {
                reduced_friction,
                temperature_k,
                friction,
            }),
        })
    }

    /// Λ in atomic units.
    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn thermal(&self) -> Option<&ThermalBath> {
        self.thermal.as_ref()
    }

    pub fn xi(&self) -> Option<f64> {
        self.thermal.map(|t| t.reduced_friction * t.temperature_k)
    }
}
