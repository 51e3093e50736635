//! Simulation and inversion for widefield diamond magnetometry.
//!
//! The crate covers the full round trip of a quantum-diamond-microscope
//! measurement: spin physics of the four defect orientations, resonance
//! line-shape models, per-pixel least-squares fitting, field-map assembly
//! and spatial filtering, forward synthesis of photon-limited image stacks,
//! and coil/thermometry calibration.
//!
//! Unit conventions: frequencies in GHz, linewidths and hyperfine constants
//! in MHz, magnetic fields in tesla, lengths in meters, temperatures in
//! kelvin. Conversions to display units happen only at I/O boundaries.

pub mod calibration;
pub mod constants;
pub mod error;
pub mod fit;
pub mod geom;
pub mod io;
pub mod lm;
pub mod map;
pub mod nv;
pub mod sim;
pub mod spectra;

pub use error::{Error, Result};
pub use geom::Vec3;
pub use spectra::{Mode, SpectrumParams};
