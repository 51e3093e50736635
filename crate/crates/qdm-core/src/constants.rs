//! Physical constants for the NV ground-state spin system and magnetostatics.
//!
//! Unit conventions across the crate: frequencies in GHz (linewidths and
//! hyperfine splittings in MHz where noted), magnetic fields in tesla,
//! lengths in meters, temperatures in kelvin. Conversions to lab-friendly
//! units (uT, um, kHz) happen only at I/O boundaries.

/// Zero-field splitting of the NV ground state triplet, GHz.
pub const F_ZFS_GHZ: f64 = 2.87;

/// Electron g-factor of the NV center.
pub const G_FACTOR: f64 = 2.003;

/// Bohr magneton in frequency units, GHz per tesla.
pub const MU_B_GHZ_PER_T: f64 = 13.996;

/// Zeeman coupling g * mu_B, GHz per tesla (28.034 kHz/uT).
pub const GAMMA_GHZ_PER_T: f64 = G_FACTOR * MU_B_GHZ_PER_T;

/// 14N hyperfine splitting between adjacent triplet lines, MHz.
pub const D_HF_N14_MHZ: f64 = 2.16;

/// 15N hyperfine doublet splitting, MHz.
pub const D_HF_N15_MHZ: f64 = 3.03;

/// Thermal shift of the zero-field splitting, GHz per kelvin (-74.2 kHz/K).
pub const TEMP_COEFF_GHZ_PER_K: f64 = -74.2e-6;

/// Vacuum permeability, T m / A.
pub const MU_0: f64 = 4.0e-7 * std::f64::consts::PI;

/// Nominal transverse strain energy scale of the sensor diamonds, MHz.
/// Used only to flag low-bias orientations where the linear Zeeman model
/// degrades; not part of the spin Hamiltonian.
pub const STRAIN_SCALE_MHZ: f64 = 0.5;
