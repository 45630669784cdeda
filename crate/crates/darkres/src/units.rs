//! Unit conventions and physical constants.
//!
//! The public API speaks ordinary frequency ν in MHz; all internal matrices
//! are in angular frequency ω = 2π·ν. Because 1 MHz = 1/µs, angular
//! frequencies carry the unit rad/µs and pair naturally with times in µs.

use std::f64::consts::TAU;

/// Bohr magneton over Planck constant, MHz per tesla.
pub const BOHR_MAGNETON_MHZ_PER_T: f64 = 13_996.245;

/// Boltzmann constant, J/K.
pub const BOLTZMANN_J_PER_K: f64 = 1.380_649e-23;

/// Atomic mass unit, kg.
pub const AMU_KG: f64 = 1.660_539_066_60e-27;

/// Mass of ⁴⁰Ca in atomic mass units (default ion mass).
pub const CA40_MASS_AMU: f64 = 39.962_590_9;

/// Ordinary frequency in MHz to angular frequency in rad/µs.
#[inline]
pub fn mhz_to_angular(nu_mhz: f64) -> f64 {
    TAU * nu_mhz
}

/// Angular frequency in rad/µs back to ordinary frequency in MHz.
#[inline]
pub fn angular_to_mhz(omega: f64) -> f64 {
    omega / TAU
}

/// RMS thermal velocity along one axis, m/s, for temperature in mK and mass
/// in amu: √(k_B T / m).
pub fn thermal_sigma_v(temperature_mk: f64, mass_amu: f64) -> f64 {
    (BOLTZMANN_J_PER_K * temperature_mk * 1e-3 / (mass_amu * AMU_KG)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn angular_conversion_round_trip_spot() {
        let nu = 12.345;
        assert!((angular_to_mhz(mhz_to_angular(nu)) - nu).abs() / nu < 1e-12);
    }

    #[test]
    fn thermal_velocity_one_mk() {
        // √(k_B · 1 mK / (40 u)) ≈ 0.456 m/s; the pair-reduced value
        // √(k_B T / 2m) ≈ 0.322 m/s enters the Doppler width.
        let sigma = thermal_sigma_v(1.0, CA40_MASS_AMU);
        assert!((sigma / 2f64.sqrt() - 0.3224).abs() < 5e-4);
    }

    proptest! {
        #[test]
        fn angular_round_trip(nu in 1e-6f64..1e6) {
            let back = angular_to_mhz(mhz_to_angular(nu));
            prop_assert!(((back - nu) / nu).abs() < 1e-12);
        }
    }
}
