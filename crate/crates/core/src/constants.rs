//! Physical constants (CODATA 2018, SI).

/// Elementary charge (C).
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;
/// Electron rest mass (kg).
pub const ELECTRON_MASS: f64 = 9.109_383_701_5e-31;
/// Planck constant (J s).
pub const PLANCK: f64 = 6.626_070_15e-34;
/// Speed of light (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Charge-to-mass ratio e/m_e (C/kg).
pub const E_OVER_M: f64 = ELEMENTARY_CHARGE / ELECTRON_MASS;

/// Speed of a non-relativistic electron with kinetic energy `ke_ev` (eV).
pub fn electron_speed(ke_ev: f64) -> f64 {
    (2.0 * ke_ev.max(0.0) * E_OVER_M).sqrt()
}

/// Kinetic energy (eV) of a non-relativistic electron moving at `speed` (m/s).
pub fn kinetic_energy_ev(speed: f64) -> f64 {
    0.5 * speed * speed / E_OVER_M
}
