//! Stack-level fitting: per-pixel spectral fits with row-wise warm starts,
//! followed by the mode's field extraction. Per-pixel failures land in the
//! mask; they never abort the map.

use rayon::prelude::*;

use crate::constants::GAMMA_GHZ_PER_T;
use crate::error::{Error, Result};
use crate::fit::{
    assign_resonances, cpmm_field_from_shift, fit_cpmm_tied, fit_pixel_with_start,
    fit_vector_field, initial_guess, normalize_contrast, projected_field_from_pair,
    CpmmTiedOptions, PixelFit, PixelFitOptions,
};
use crate::lm::LmOptions;
use crate::map::field::FieldMap;
use crate::map::stack::OdmrStack;
use crate::nv::nv_orientations;
use crate::spectra::{polarization_weights, CircularWeights, Handedness, Mode, PolarizationDrive};

#[derive(Clone, Debug)]
pub struct StackFitOptions {
    pub pixel: PixelFitOptions,
    pub vector_lm: LmOptions,
    /// Orientation whose axis a projection stack measures; fixes the sign
    /// of the scalar map via the bias projection.
    pub pmm_orientation: usize,
    /// Zero-field doublet center that polarization-resolved shifts are
    /// measured against.
    pub cpmm_template_center_ghz: f64,
    /// Splitting used to predict line positions for slot assignment and to
    /// start the vector fit.
    pub zfs_reference_ghz: f64,
}

impl Default for StackFitOptions {
    fn default() -> Self {
        StackFitOptions {
            pixel: PixelFitOptions::default(),
            vector_lm: LmOptions::default(),
            pmm_orientation: 0,
            cpmm_template_center_ghz: crate::constants::F_ZFS_GHZ,
            zfs_reference_ghz: crate::constants::F_ZFS_GHZ,
        }
    }
}

enum PixelValue {
    Vector { b: [f64; 3], d: [f64; 4] },
    Scalar(f64),
}

struct PixelOutcome {
    value: Option<PixelValue>,
    residual: f64,
}

/// Warm start from the last good neighbor with a cold retry when the warm
/// path fails to converge. The pixel must show detectable dip structure on
/// its own before any start is trusted: a dead or saturated pixel is flat
/// after normalization and must not inherit a neighbor's solution.
fn fit_pixel(
    freqs: &[f64],
    signal: &[f64],
    mode: Mode,
    warm: Option<&crate::spectra::SpectrumParams>,
    opts: &PixelFitOptions,
) -> Option<PixelFit> {
    let (y, _) = normalize_contrast(signal).ok()?;
    let seed = initial_guess(freqs, &y, mode, opts).ok()?;
    if let Some(start) = warm {
        if let Ok(fit) = fit_pixel_with_start(freqs, signal, start, opts) {
            if fit.converged {
                return Some(fit);
            }
        }
    }
    fit_pixel_with_start(freqs, signal, &seed, opts)
        .ok()
        .filter(|f| f.converged)
}

fn extract_vector(stack: &OdmrStack, opts: &StackFitOptions, fit: &PixelFit) -> Option<PixelValue> {
    let mut sorted = [0.0; 8];
    sorted.copy_from_slice(&fit.params.res_freqs_ghz);
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let slots = assign_resonances(&sorted, stack.bias_field_t, opts.zfs_reference_ghz).ok()?;
    let mut ordered = [0.0; 8];
    for (slot, &line) in slots.iter().enumerate() {
        ordered[slot] = sorted[line];
    }
    let vf = fit_vector_field(
        &ordered,
        stack.bias_field_t,
        &[opts.zfs_reference_ghz; 4],
        &opts.vector_lm,
    )
    .ok()?;
    if !vf.converged || !vf.b_tesla.is_finite() || !vf.d_ghz.iter().all(|d| d.is_finite()) {
        return None;
    }
    Some(PixelValue::Vector {
        b: [vf.b_tesla.x, vf.b_tesla.y, vf.b_tesla.z],
        d: vf.d_ghz,
    })
}

fn extract_projection(stack: &OdmrStack, opts: &StackFitOptions, fit: &PixelFit) -> Option<PixelValue> {
    let axis = nv_orientations().axis(opts.pmm_orientation);
    let sign = if axis.dot(stack.bias_field_t) < 0.0 { -1.0 } else { 1.0 };
    let lo = fit.params.res_freqs_ghz[0].min(fit.params.res_freqs_ghz[1]);
    let hi = fit.params.res_freqs_ghz[0].max(fit.params.res_freqs_ghz[1]);
    let (b_par, _) = projected_field_from_pair(lo, hi, sign);
    b_par.is_finite().then_some(PixelValue::Scalar(b_par))
}

fn collect_rows<F>(m: usize, fit_row: F) -> Vec<Vec<PixelOutcome>>
where
    F: Fn(usize) -> Vec<PixelOutcome> + Sync + Send,
{
    (0..m).into_par_iter().map(fit_row).collect()
}

fn assemble(stack: &OdmrStack, components: usize, zfs: bool, rows: Vec<Vec<PixelOutcome>>) -> FieldMap {
    let mut map = if components == 3 {
        FieldMap::new_vector(stack.m, stack.n, stack.pixel_pitch_m)
    } else {
        FieldMap::new_scalar(stack.m, stack.n, stack.pixel_pitch_m)
    };
    if zfs {
        map.zfs_ghz = Some(vec![vec![0.0; stack.m * stack.n]; 4]);
    }
    for (i, row) in rows.into_iter().enumerate() {
        for (j, px) in row.into_iter().enumerate() {
            let idx = i * stack.n + j;
            match px.value {
                Some(PixelValue::Vector { b, d }) => {
                    for (c, plane) in map.components.iter_mut().enumerate() {
                        plane[idx] = b[c];
                    }
                    if let Some(zfs) = map.zfs_ghz.as_mut() {
                        for (k, plane) in zfs.iter_mut().enumerate() {
                            plane[idx] = d[k];
                        }
                    }
                    map.residual_rms[idx] = px.residual;
                }
                Some(PixelValue::Scalar(v)) => {
                    map.components[0][idx] = v;
                    map.residual_rms[idx] = px.residual;
                }
                None => map.mask_pixel(i, j),
            }
        }
    }
    map
}

/// Fits every pixel of a stack and extracts the mode's field quantity.
///
/// Vector stacks produce three component planes plus the four splitting
/// planes; projection and polarization-resolved stacks produce one scalar
/// plane. Rows are processed in parallel; within a row each fit warm-starts
/// from the previous good pixel.
pub fn fit_stack(stack: &OdmrStack, opts: &StackFitOptions) -> Result<FieldMap> {
    stack.validate()?;
    match stack.mode {
        Mode::Vmm => {
            let rows = collect_rows(stack.m, |i| {
                generic_row(stack, opts, i, |fit| extract_vector(stack, opts, fit))
            });
            Ok(assemble(stack, 3, true, rows))
        }
        Mode::Pmm => {
            if opts.pmm_orientation >= 4 {
                return Err(Error::Invalid(format!(
                    "orientation index {} out of range",
                    opts.pmm_orientation
                )));
            }
            let rows = collect_rows(stack.m, |i| {
                generic_row(stack, opts, i, |fit| extract_projection(stack, opts, fit))
            });
            Ok(assemble(stack, 1, false, rows))
        }
        Mode::Cpmm => fit_stack_cpmm(stack, opts),
    }
}

fn generic_row<F>(stack: &OdmrStack, opts: &StackFitOptions, i: usize, extract: F) -> Vec<PixelOutcome>
where
    F: Fn(&PixelFit) -> Option<PixelValue>,
{
    let mut warm = None;
    let mut out = Vec::with_capacity(stack.n);
    for j in 0..stack.n {
        let signal = stack.pixel_spectrum(i, j);
        match fit_pixel(&stack.freqs_ghz, &signal, stack.mode, warm.as_ref(), &opts.pixel) {
            Some(fit) => {
                warm = Some(fit.params.clone());
                out.push(PixelOutcome {
                    value: extract(&fit),
                    residual: fit.residual_rms,
                });
            }
            None => out.push(PixelOutcome {
                value: None,
                residual: f64::NAN,
            }),
        }
    }
    out
}

/// Power-weighted circular content of the drive, averaged over the four
/// orientations. For a drive along the sample normal the four are equal.
fn mean_weights(drive: &PolarizationDrive) -> CircularWeights {
    let per_axis = polarization_weights(drive);
    let w_plus = per_axis.iter().map(|w| w.w_plus).sum::<f64>() / 4.0;
    CircularWeights {
        w_plus,
        w_minus: 1.0 - w_plus,
    }
}

fn tied_options(opts: &StackFitOptions) -> CpmmTiedOptions {
    CpmmTiedOptions {
        lm: opts.pixel.lm.clone(),
        template_center_ghz: opts.cpmm_template_center_ghz,
    }
}

fn cpmm_drive(stack: &OdmrStack) -> Result<(PolarizationDrive, CircularWeights)> {
    let drive = stack
        .polarization
        .ok_or_else(|| Error::Invalid("polarization-resolved stack carries no drive".into()))?;
    let w = mean_weights(&drive);
    if (w.w_plus - w.w_minus).abs() < 0.05 {
        return Err(Error::Invalid(
            "drive does not separate the circular senses".into(),
        ));
    }
    Ok((drive, w))
}

fn fit_stack_cpmm(stack: &OdmrStack, opts: &StackFitOptions) -> Result<FieldMap> {
    let (_, w) = cpmm_drive(stack)?;
    let sign = if w.w_plus > w.w_minus { 1.0 } else { -1.0 };
    let tied = tied_options(opts);
    let c0 = opts.cpmm_template_center_ghz;
    let rows = collect_rows(stack.m, |i| {
        (0..stack.n)
            .map(|j| {
                let signal = stack.pixel_spectrum(i, j);
                match fit_cpmm_tied(&stack.freqs_ghz, &signal, w, &tied) {
                    Ok(fit) if fit.converged => {
                        let bz = 3.0_f64.sqrt() * sign * (fit.dominant_center_ghz - c0)
                            / GAMMA_GHZ_PER_T;
                        PixelOutcome {
                            value: bz.is_finite().then_some(PixelValue::Scalar(bz)),
                            residual: fit.residual_rms,
                        }
                    }
                    _ => PixelOutcome {
                        value: None,
                        residual: f64::NAN,
                    },
                }
            })
            .collect()
    });
    Ok(assemble(stack, 1, false, rows))
}

/// Out-of-plane field from a pair of opposite-sense polarization-resolved
/// stacks. The first argument is taken as the reference sense: swapping
/// the arguments negates the map exactly.
pub fn fit_cpmm_pair(
    first: &OdmrStack,
    second: &OdmrStack,
    opts: &StackFitOptions,
) -> Result<FieldMap> {
    first.validate()?;
    second.validate()?;
    if first.mode != Mode::Cpmm || second.mode != Mode::Cpmm {
        return Err(Error::Invalid("pair fitting needs polarization-resolved stacks".into()));
    }
    if first.m != second.m || first.n != second.n || first.freqs_ghz != second.freqs_ghz {
        return Err(Error::DimensionMismatch("stacks of a pair must be congruent".into()));
    }
    let (drive_a, w_a) = cpmm_drive(first)?;
    let (drive_b, w_b) = cpmm_drive(second)?;
    let opposite = matches!(
        (drive_a.handedness, drive_b.handedness),
        (Handedness::SigmaPlus, Handedness::SigmaMinus)
            | (Handedness::SigmaMinus, Handedness::SigmaPlus)
    );
    if !opposite {
        return Err(Error::Invalid("pair stacks must have opposite drive senses".into()));
    }
    let tied = tied_options(opts);
    let rows: Vec<Vec<PixelOutcome>> = (0..first.m)
        .into_par_iter()
        .map(|i| {
            (0..first.n)
                .map(|j| {
                    let sig_a = first.pixel_spectrum(i, j);
                    let sig_b = second.pixel_spectrum(i, j);
                    let fit_a = fit_cpmm_tied(&first.freqs_ghz, &sig_a, w_a, &tied);
                    let fit_b = fit_cpmm_tied(&second.freqs_ghz, &sig_b, w_b, &tied);
                    match (fit_a, fit_b) {
                        (Ok(a), Ok(b)) if a.converged && b.converged => {
                            let bz = cpmm_field_from_shift(
                                a.dominant_center_ghz,
                                b.dominant_center_ghz,
                            );
                            PixelOutcome {
                                value: bz.is_finite().then_some(PixelValue::Scalar(bz)),
                                residual: ((a.residual_rms * a.residual_rms
                                    + b.residual_rms * b.residual_rms)
                                    / 2.0)
                                    .sqrt(),
                            }
                        }
                        _ => PixelOutcome {
                            value: None,
                            residual: f64::NAN,
                        },
                    }
                })
                .collect()
        })
        .collect();
    Ok(assemble(first, 1, false, rows))
}
