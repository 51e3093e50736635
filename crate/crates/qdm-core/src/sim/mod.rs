//! Forward models: dipole sources over the sensor plane, depth-integrated
//! layer response, and photon-limited stack synthesis.

pub mod dipole;
pub mod layer;
pub mod synth;

pub use dipole::{dipole_field, sample_field_map, DipoleSource, SensorGeometry};
pub use layer::{
    half_maximum_radius, integrated_fluorescence, peak_shift_profile, ReducedProfileParams,
};
pub use synth::{synthesize_stack, SynthesisOptions};
