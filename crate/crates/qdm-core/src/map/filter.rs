//! Spatial filtering of field maps: a real-space Gaussian low-pass with
//! mirrored edges and mask-aware renormalization, and a Fourier Butterworth
//! high-pass whose cutoff is the -3 dB wavelength.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::map::field::FieldMap;

/// Filter chain configuration; either stage may be absent.
#[derive(Clone, Debug)]
pub struct FilterSpec {
    pub lowpass_fwhm_m: Option<f64>,
    pub highpass_cutoff_m: Option<f64>,
    pub highpass_order: usize,
}

impl Default for FilterSpec {
    fn default() -> Self {
        FilterSpec {
            lowpass_fwhm_m: None,
            highpass_cutoff_m: None,
            highpass_order: 3,
        }
    }
}

/// Runs the configured stages, low-pass first.
pub fn apply_filters(map: &FieldMap, spec: &FilterSpec) -> Result<FieldMap> {
    let mut out = map.clone();
    if let Some(fwhm) = spec.lowpass_fwhm_m {
        out = gaussian_lowpass(&out, fwhm)?;
    }
    if let Some(cutoff) = spec.highpass_cutoff_m {
        out = butterworth_highpass(&out, cutoff, spec.highpass_order)?;
    }
    Ok(out)
}

/// Half-sample mirror: ... 2 1 0 | 0 1 2 ... n-1 | n-1 n-2 ...
fn mirror(idx: isize, len: usize) -> usize {
    let n = len as isize;
    let mut i = idx;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - 1 - i;
        } else {
            return i as usize;
        }
    }
}

fn gaussian_kernel(sigma_px: f64) -> Vec<f64> {
    let radius = (4.0 * sigma_px).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|t| (-0.5 * (t as f64 / sigma_px).powi(2)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

fn convolve_rows(src: &[f64], m: usize, n: usize, kernel: &[f64]) -> Vec<f64> {
    let radius = (kernel.len() / 2) as isize;
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &src[i * n..(i + 1) * n];
        for j in 0..n {
            let mut acc = 0.0;
            for (t, &kv) in kernel.iter().enumerate() {
                let jj = mirror(j as isize + t as isize - radius, n);
                acc += kv * row[jj];
            }
            out[i * n + j] = acc;
        }
    }
    out
}

fn convolve_cols(src: &[f64], m: usize, n: usize, kernel: &[f64]) -> Vec<f64> {
    let radius = (kernel.len() / 2) as isize;
    let mut out = vec![0.0; m * n];
    for j in 0..n {
        for i in 0..m {
            let mut acc = 0.0;
            for (t, &kv) in kernel.iter().enumerate() {
                let ii = mirror(i as isize + t as isize - radius, m);
                acc += kv * src[ii * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    out
}

/// Direct 2D pass used when some pixels are invalid: masked taps are
/// dropped and the kernel weight renormalized over the taps that remain.
fn masked_gaussian(src: &[f64], mask: &[bool], m: usize, n: usize, kernel: &[f64]) -> Vec<f64> {
    let radius = (kernel.len() / 2) as isize;
    let mut out = vec![f64::NAN; m * n];
    for i in 0..m {
        for j in 0..n {
            if !mask[i * n + j] {
                continue;
            }
            let mut acc = 0.0;
            let mut wsum = 0.0;
            for (ti, &ki) in kernel.iter().enumerate() {
                let ii = mirror(i as isize + ti as isize - radius, m);
                for (tj, &kj) in kernel.iter().enumerate() {
                    let jj = mirror(j as isize + tj as isize - radius, n);
                    if mask[ii * n + jj] {
                        let w = ki * kj;
                        acc += w * src[ii * n + jj];
                        wsum += w;
                    }
                }
            }
            out[i * n + j] = acc / wsum;
        }
    }
    out
}

/// Gaussian blur with the requested full width at half maximum, in meters.
/// A width below one pixel cannot be represented on the grid; the map is
/// returned unchanged with a warning.
pub fn gaussian_lowpass(map: &FieldMap, fwhm_m: f64) -> Result<FieldMap> {
    map.validate()?;
    if !(fwhm_m.is_finite() && fwhm_m > 0.0) {
        return Err(Error::Invalid(format!("smoothing width {fwhm_m} must be positive")));
    }
    if fwhm_m < map.pixel_pitch_m {
        log::warn!(
            "smoothing width {:.3e} m is below the pixel pitch {:.3e} m; skipping",
            fwhm_m,
            map.pixel_pitch_m
        );
        return Ok(map.clone());
    }
    let sigma_px = fwhm_m / map.pixel_pitch_m / (2.0 * (2.0 * 2.0_f64.ln()).sqrt());
    let kernel = gaussian_kernel(sigma_px);
    let all_valid = map.mask.iter().all(|&v| v);
    let mut out = map.clone();
    for plane in &mut out.components {
        *plane = if all_valid {
            convolve_cols(&convolve_rows(plane, map.m, map.n, &kernel), map.m, map.n, &kernel)
        } else {
            masked_gaussian(plane, &map.mask, map.m, map.n, &kernel)
        };
    }
    Ok(out)
}

/// Replaces invalid pixels by the mean of their valid 8-neighbors,
/// sweeping until the hole is filled. Isolated all-masked maps fall
/// back to zero.
fn infill(src: &[f64], mask: &[bool], m: usize, n: usize) -> Vec<f64> {
    let mut data = src.to_vec();
    let mut filled: Vec<bool> = mask.to_vec();
    let mut pending: Vec<usize> = (0..m * n).filter(|&p| !filled[p]).collect();
    while !pending.is_empty() {
        let mut next = Vec::new();
        let mut progressed = false;
        let snapshot = data.clone();
        let known = filled.clone();
        for &p in &pending {
            let (i, j) = (p / n, p % n);
            let mut acc = 0.0;
            let mut cnt = 0;
            for di in -1isize..=1 {
                for dj in -1isize..=1 {
                    if di == 0 && dj == 0 {
                        continue;
                    }
                    let ii = i as isize + di;
                    let jj = j as isize + dj;
                    if ii < 0 || jj < 0 || ii >= m as isize || jj >= n as isize {
                        continue;
                    }
                    let q = ii as usize * n + jj as usize;
                    if known[q] {
                        acc += snapshot[q];
                        cnt += 1;
                    }
                }
            }
            if cnt > 0 {
                data[p] = acc / cnt as f64;
                filled[p] = true;
                progressed = true;
            } else {
                next.push(p);
            }
        }
        if !progressed {
            for &p in &next {
                data[p] = 0.0;
            }
            break;
        }
        pending = next;
    }
    data
}

fn fft_2d(data: &mut [Complex64], m: usize, n: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let row_fft = if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    };
    for i in 0..m {
        row_fft.process(&mut data[i * n..(i + 1) * n]);
    }
    let col_fft = if inverse {
        planner.plan_fft_inverse(m)
    } else {
        planner.plan_fft_forward(m)
    };
    let mut col = vec![Complex64::new(0.0, 0.0); m];
    for j in 0..n {
        for i in 0..m {
            col[i] = data[i * n + j];
        }
        col_fft.process(&mut col);
        for i in 0..m {
            data[i * n + j] = col[i];
        }
    }
}

/// Signed-minimal frequency index in cycles per sample.
fn freq_cycles(idx: usize, len: usize, pitch: f64) -> f64 {
    let k = if idx <= len / 2 { idx as isize } else { idx as isize - len as isize };
    k as f64 / (len as f64 * pitch)
}

/// Fourier-domain Butterworth high-pass. `cutoff_m` is the wavelength at
/// which the passed amplitude is 1/sqrt(2); the uniform (DC) component is
/// removed exactly. Invalid pixels are in-filled before the transform and
/// restored to NaN afterwards.
pub fn butterworth_highpass(map: &FieldMap, cutoff_m: f64, order: usize) -> Result<FieldMap> {
    map.validate()?;
    if order == 0 {
        return Err(Error::Invalid("filter order must be at least 1".into()));
    }
    if !(cutoff_m.is_finite() && cutoff_m > 0.0) {
        return Err(Error::Invalid(format!("cutoff {cutoff_m} must be positive")));
    }
    let limit = 2.0 * map.pixel_pitch_m;
    if cutoff_m <= limit {
        return Err(Error::CutoffOutOfBand {
            cutoff_m,
            limit_m: limit,
        });
    }
    let (m, n) = (map.m, map.n);
    let k_c = 2.0 * std::f64::consts::PI / cutoff_m;
    let mut out = map.clone();
    for plane in &mut out.components {
        let filled = infill(plane, &map.mask, m, n);
        let mut spec: Vec<Complex64> = filled.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft_2d(&mut spec, m, n, false);
        for i in 0..m {
            let sy = freq_cycles(i, m, map.pixel_pitch_m);
            for j in 0..n {
                let sx = freq_cycles(j, n, map.pixel_pitch_m);
                let k = 2.0 * std::f64::consts::PI * sx.hypot(sy);
                let gain = if k > 0.0 {
                    (1.0 / (1.0 + (k_c / k).powi(2 * order as i32))).sqrt()
                } else {
                    0.0
                };
                spec[i * n + j] *= gain;
            }
        }
        fft_2d(&mut spec, m, n, true);
        let scale = 1.0 / (m * n) as f64;
        for (p, v) in plane.iter_mut().enumerate() {
            *v = if map.mask[p] { spec[p].re * scale } else { f64::NAN };
        }
    }
    Ok(out)
}
