//! Map statistics: bias-reversal decomposition, noise floors, and the
//! integration-time scaling that yields a sensitivity figure.

use crate::error::{Error, Result};
use crate::map::field::FieldMap;

#[derive(Clone, Debug)]
pub struct BiasDecomposition {
    /// Half-sum of the two maps: survives bias reversal.
    pub remanent: FieldMap,
    /// Half-difference: flips with the bias.
    pub induced: FieldMap,
    /// Mean of the remanent map over the caller's source-free region,
    /// one entry per component. Absent when no region was supplied.
    pub residual_bias: Option<Vec<f64>>,
}

fn congruent(a: &FieldMap, b: &FieldMap) -> bool {
    a.m == b.m
        && a.n == b.n
        && a.components.len() == b.components.len()
        && a.pixel_pitch_m == b.pixel_pitch_m
}

/// Splits maps taken under opposite bias polarity into the part that
/// followed the reversal and the part that did not. Pixels invalid in
/// either input are invalid in both outputs.
pub fn bias_reversal_decompose(
    plus: &FieldMap,
    minus: &FieldMap,
    source_free: Option<&[bool]>,
) -> Result<BiasDecomposition> {
    plus.validate()?;
    minus.validate()?;
    if !congruent(plus, minus) {
        return Err(Error::DimensionMismatch(
            "bias pair maps must share shape and components".into(),
        ));
    }
    let (m, n) = (plus.m, plus.n);
    let mask: Vec<bool> = plus
        .mask
        .iter()
        .zip(&minus.mask)
        .map(|(&a, &b)| a && b)
        .collect();
    let comps = plus.components.len();
    let mut remanent = if comps == 3 {
        FieldMap::new_vector(m, n, plus.pixel_pitch_m)
    } else {
        FieldMap::new_scalar(m, n, plus.pixel_pitch_m)
    };
    let mut induced = remanent.clone();
    for c in 0..comps {
        for p in 0..m * n {
            if mask[p] {
                remanent.components[c][p] = (plus.components[c][p] + minus.components[c][p]) / 2.0;
                induced.components[c][p] = (plus.components[c][p] - minus.components[c][p]) / 2.0;
            } else {
                remanent.components[c][p] = f64::NAN;
                induced.components[c][p] = f64::NAN;
            }
        }
    }
    for p in 0..m * n {
        let r = ((plus.residual_rms[p].powi(2) + minus.residual_rms[p].powi(2)) / 2.0).sqrt();
        remanent.residual_rms[p] = if mask[p] { r } else { f64::NAN };
        induced.residual_rms[p] = remanent.residual_rms[p];
    }
    remanent.mask = mask.clone();
    induced.mask = mask.clone();

    let residual_bias = match source_free {
        None => None,
        Some(region) => {
            if region.len() != m * n {
                return Err(Error::DimensionMismatch(
                    "source-free region must cover the map".into(),
                ));
            }
            let mut means = Vec::with_capacity(comps);
            for plane in &remanent.components {
                let mut acc = 0.0;
                let mut cnt = 0usize;
                for p in 0..m * n {
                    if region[p] && mask[p] {
                        acc += plane[p];
                        cnt += 1;
                    }
                }
                if cnt == 0 {
                    return Err(Error::SelectionTooSmall { needed: 1, found: 0 });
                }
                means.push(acc / cnt as f64);
            }
            Some(means)
        }
    };
    Ok(BiasDecomposition {
        remanent,
        induced,
        residual_bias,
    })
}

fn sample_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    var.sqrt()
}

/// Standard deviation of the field over the selected valid pixels,
/// combined across components as a root-mean-square. Needs at least 100
/// pixels for the estimate to mean anything.
pub fn noise_floor(map: &FieldMap, selection: &[bool]) -> Result<f64> {
    map.validate()?;
    if selection.len() != map.m * map.n {
        return Err(Error::DimensionMismatch(
            "selection must cover the map".into(),
        ));
    }
    let picked: Vec<usize> = (0..map.m * map.n)
        .filter(|&p| selection[p] && map.mask[p])
        .collect();
    if picked.len() < 100 {
        return Err(Error::SelectionTooSmall {
            needed: 100,
            found: picked.len(),
        });
    }
    let mean_var = map
        .components
        .iter()
        .map(|plane| {
            let vals: Vec<f64> = picked.iter().map(|&p| plane[p]).collect();
            let s = sample_std(&vals);
            s * s
        })
        .sum::<f64>()
        / map.components.len() as f64;
    Ok(mean_var.sqrt())
}

#[derive(Clone, Copy, Debug)]
pub struct SensitivityScaling {
    /// Log-log slope of noise against integration time; shot-limited
    /// operation gives -1/2.
    pub slope: f64,
    /// Noise at the longest integration time, scaled to one second and
    /// one unit of field-of-view area: T * m / sqrt(Hz).
    pub sensitivity_t_m_sqrt_hz: f64,
}

/// Fits the noise-versus-time series on logarithmic axes and converts the
/// endpoint into a per-root-hertz, per-length sensitivity.
pub fn sensitivity_scaling(series: &[(f64, f64)], fov_area_m2: f64) -> Result<SensitivityScaling> {
    if series.len() < 4 {
        return Err(Error::Invalid(format!(
            "scaling fit needs at least 4 points, got {}",
            series.len()
        )));
    }
    if !(fov_area_m2.is_finite() && fov_area_m2 > 0.0) {
        return Err(Error::Invalid(format!(
            "field-of-view area {fov_area_m2} must be positive"
        )));
    }
    for &(t, s) in series {
        if !(t.is_finite() && t > 0.0 && s.is_finite() && s > 0.0) {
            return Err(Error::Invalid(format!(
                "series point ({t}, {s}) is not positive and finite"
            )));
        }
    }
    let t_min = series.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let t_max = series.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    if t_max / t_min < 10.0 {
        return Err(Error::Invalid(format!(
            "integration times span {:.2}x; need at least a decade",
            t_max / t_min
        )));
    }
    let n = series.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(t, s) in series {
        let x = t.ln();
        let y = s.ln();
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let &(t_long, noise_long) = series
        .iter()
        .max_by(|a, b| a.0.partial_cmp(&b.0).unwrap())
        .unwrap();
    let sensitivity = noise_long * t_long.sqrt() * fov_area_m2.sqrt();
    Ok(SensitivityScaling {
        slope,
        sensitivity_t_m_sqrt_hz: sensitivity,
    })
}
