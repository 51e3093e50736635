//! Image-plane layer: resonance stacks, fitted field maps, spatial
//! filtering, and the statistics used to qualify a measurement.

pub mod field;
pub mod filter;
pub mod fit;
pub mod stack;
pub mod stats;

pub use field::FieldMap;
pub use filter::{apply_filters, butterworth_highpass, gaussian_lowpass, FilterSpec};
pub use fit::{fit_cpmm_pair, fit_stack, StackFitOptions};
pub use stack::{bin_stack, OdmrStack};
pub use stats::{
    bias_reversal_decompose, noise_floor, sensitivity_scaling, BiasDecomposition,
    SensitivityScaling,
};
