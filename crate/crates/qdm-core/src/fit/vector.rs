//! Field extraction from fitted resonance positions.

use crate::constants::{GAMMA_GHZ_PER_T, STRAIN_SCALE_MHZ, TEMP_COEFF_GHZ_PER_K};
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::lm::{levenberg_marquardt, LmOptions, LmProblem};
use crate::nv::resonance_frequencies;

/// Axial field and zero-field splitting from one branch pair.
///
/// Returns `(b_parallel, d)` in tesla and GHz. The pair difference only
/// determines |projection|; `bias_sign` restores the sign known from the
/// applied bias. The returned splitting absorbs the quadratic transverse
/// shift, which is common mode between the branches.
pub fn projected_field_from_pair(f_minus_ghz: f64, f_plus_ghz: f64, bias_sign: f64) -> (f64, f64) {
    let magnitude = (f_plus_ghz - f_minus_ghz) / (2.0 * GAMMA_GHZ_PER_T);
    let d = 0.5 * (f_plus_ghz + f_minus_ghz);
    (bias_sign.signum() * magnitude, d)
}

/// Common-mode temperature change from the mean zero-field splitting of
/// the four orientations, kelvin. Positive means warmer than the
/// reference.
pub fn estimate_temperature_shift(d_fit_ghz: &[f64; 4], d_reference_ghz: f64) -> f64 {
    let mean = d_fit_ghz.iter().sum::<f64>() / 4.0;
    (mean - d_reference_ghz) / TEMP_COEFF_GHZ_PER_K
}

/// Signed out-of-plane field from the dominant doublet centers of the two
/// drive senses. Swapping the arguments negates the result exactly.
pub fn cpmm_field_from_shift(
    dominant_sigma_plus_ghz: f64,
    dominant_sigma_minus_ghz: f64,
) -> f64 {
    3.0_f64.sqrt() * (dominant_sigma_plus_ghz - dominant_sigma_minus_ghz)
        / (2.0 * GAMMA_GHZ_PER_T)
}

/// Field magnitude whose axial splitting equals the typical strain-induced
/// splitting. Projections below a few times this floor give splittings
/// that strain can mimic, so their sign and size are unreliable.
pub fn strain_equivalent_field_t() -> f64 {
    STRAIN_SCALE_MHZ * 1e-3 / GAMMA_GHZ_PER_T
}

/// True where the axis projection is safely above the strain floor
/// (five times the strain-equivalent field).
pub fn check_bias_adequacy(projections_t: &[f64; 4]) -> [bool; 4] {
    let floor = 5.0 * strain_equivalent_field_t();
    [
        projections_t[0].abs() >= floor,
        projections_t[1].abs() >= floor,
        projections_t[2].abs() >= floor,
        projections_t[3].abs() >= floor,
    ]
}

/// Maps sorted measured line positions onto orientation slots.
///
/// Slot `2k + branch` (the resonance-frequency convention) takes the
/// measured line nearest to the position predicted for the bias alone.
/// Fails when two slots claim the same line, which happens when the bias
/// does not separate the orientations.
pub fn assign_resonances(
    measured_sorted_ghz: &[f64; 8],
    bias_t: Vec3,
    d_nominal_ghz: f64,
) -> Result<[usize; 8]> {
    let predicted = resonance_frequencies(bias_t, &[d_nominal_ghz; 4]);
    let mut out = [0usize; 8];
    let mut used = [false; 8];
    for slot in 0..8 {
        let mut best = 0;
        let mut best_dist = f64::INFINITY;
        for (j, &m) in measured_sorted_ghz.iter().enumerate() {
            let dist = (m - predicted[slot]).abs();
            if dist < best_dist {
                best_dist = dist;
                best = j;
            }
        }
        if used[best] {
            return Err(Error::ResonanceAssignment(format!(
                "bias does not separate the orientations: line at {:.6} GHz claimed twice",
                measured_sorted_ghz[best]
            )));
        }
        used[best] = true;
        out[slot] = best;
    }
    Ok(out)
}

/// Joint fit of the field vector and per-orientation splittings to the
/// eight line positions (eight equations, seven unknowns).
#[derive(Clone, Debug)]
pub struct VectorFieldFit {
    pub b_tesla: Vec3,
    pub d_ghz: [f64; 4],
    pub residual_rms_ghz: f64,
    pub converged: bool,
    pub iterations: usize,
}

struct VectorProblem<'a> {
    centers: &'a [f64; 8],
}

impl LmProblem for VectorProblem<'_> {
    fn residual_len(&self) -> usize {
        8
    }

    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        let b = Vec3::new(p[0], p[1], p[2]);
        let d = [p[3], p[4], p[5], p[6]];
        let f = resonance_frequencies(b, &d);
        for i in 0..8 {
            out[i] = f[i] - self.centers[i];
        }
    }

    fn param_scales(&self, p: &[f64]) -> Vec<f64> {
        // microtesla-scale difference steps keep the numerical Jacobian in
        // the linear Zeeman regime even from a zero start
        let mut s: Vec<f64> = p[..3].iter().map(|b| b.abs().max(1e-5)).collect();
        s.extend(p[3..].iter().map(|d| d.abs().max(1.0)));
        s
    }
}

/// Fits `(b, d_0..d_3)` to line positions given in orientation-slot order
/// (use [`assign_resonances`] to order them first).
pub fn fit_vector_field(
    centers_ghz: &[f64; 8],
    start_b_t: Vec3,
    start_d_ghz: &[f64; 4],
    lm: &LmOptions,
) -> Result<VectorFieldFit> {
    if !centers_ghz.iter().all(|c| c.is_finite())
        || !start_b_t.is_finite()
        || !start_d_ghz.iter().all(|d| d.is_finite())
    {
        return Err(Error::Invalid("non-finite vector-fit input".into()));
    }
    let start = [
        start_b_t.x,
        start_b_t.y,
        start_b_t.z,
        start_d_ghz[0],
        start_d_ghz[1],
        start_d_ghz[2],
        start_d_ghz[3],
    ];
    let problem = VectorProblem { centers: centers_ghz };
    let report = levenberg_marquardt(&problem, &start, lm);
    Ok(VectorFieldFit {
        b_tesla: Vec3::new(report.params[0], report.params[1], report.params[2]),
        d_ghz: [
            report.params[3],
            report.params[4],
            report.params[5],
            report.params[6],
        ],
        residual_rms_ghz: (report.cost / 8.0).sqrt(),
        converged: report.converged,
        iterations: report.iterations,
    })
}
