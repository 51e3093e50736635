//! Per-pixel spectral fitting and field extraction.

mod pixel;
mod vector;

pub use pixel::{
    fit_cpmm_tied, fit_pixel_spectrum, fit_pixel_with_start, initial_guess, normalize_contrast,
    CpmmTiedFit, CpmmTiedOptions, PixelFit, PixelFitOptions,
};
pub use vector::{
    assign_resonances, check_bias_adequacy, cpmm_field_from_shift, estimate_temperature_shift,
    fit_vector_field, projected_field_from_pair, strain_equivalent_field_t, VectorFieldFit,
};
