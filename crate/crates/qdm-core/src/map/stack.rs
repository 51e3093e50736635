//! Image-stack container and photon binning.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::spectra::{Mode, PolarizationDrive};

/// A sweep of fluorescence images: `q` frames of `m x n` pixels, one frame
/// per drive frequency, frame-major (`data[f * m * n + i * n + j]`).
#[derive(Clone, Debug)]
pub struct OdmrStack {
    pub m: usize,
    pub n: usize,
    /// Sweep axis, strictly increasing.
    pub freqs_ghz: Vec<f64>,
    /// Mean photon counts per pixel per frequency point.
    pub data: Vec<f64>,
    pub pixel_pitch_m: f64,
    pub mode: Mode,
    pub bias_field_t: Vec3,
    /// Drive polarization; required for polarization-resolved stacks.
    pub polarization: Option<PolarizationDrive>,
    /// Number of sweep repetitions averaged into `data`.
    pub averages: u32,
    /// Generator seed when the stack is synthetic.
    pub seed: Option<u64>,
    pub metadata: BTreeMap<String, String>,
}

impl OdmrStack {
    pub fn new(
        mode: Mode,
        freqs_ghz: Vec<f64>,
        data: Vec<f64>,
        m: usize,
        n: usize,
        pixel_pitch_m: f64,
    ) -> Result<Self> {
        let stack = OdmrStack {
            m,
            n,
            freqs_ghz,
            data,
            pixel_pitch_m,
            mode,
            bias_field_t: Vec3::ZERO,
            polarization: None,
            averages: 1,
            seed: None,
            metadata: BTreeMap::new(),
        };
        stack.validate()?;
        Ok(stack)
    }

    pub fn q(&self) -> usize {
        self.freqs_ghz.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 || self.freqs_ghz.is_empty() {
            return Err(Error::Invalid("empty stack".into()));
        }
        if self.data.len() != self.q() * self.m * self.n {
            return Err(Error::DimensionMismatch(format!(
                "{} samples for {}x{}x{}",
                self.data.len(),
                self.q(),
                self.m,
                self.n
            )));
        }
        if !self.freqs_ghz.iter().all(|f| f.is_finite())
            || self.freqs_ghz.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(Error::Invalid(
                "frequency axis must be finite and strictly increasing".into(),
            ));
        }
        if !(self.pixel_pitch_m > 0.0) || !self.pixel_pitch_m.is_finite() {
            return Err(Error::Invalid("pixel pitch must be positive".into()));
        }
        if !self.data.iter().all(|v| v.is_finite() && *v >= 0.0) {
            return Err(Error::Invalid("fluorescence must be finite and nonnegative".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn pixel_index(&self, i: usize, j: usize) -> usize {
        i * self.n + j
    }

    /// The sweep at one pixel, in frequency order.
    pub fn pixel_spectrum(&self, i: usize, j: usize) -> Vec<f64> {
        let stride = self.m * self.n;
        let base = self.pixel_index(i, j);
        (0..self.q()).map(|f| self.data[f * stride + base]).collect()
    }
}

/// Sums `factor x factor` pixel blocks of every frame, as if the camera had
/// larger pixels. Binning acts on photons, before any fitting.
pub fn bin_stack(stack: &OdmrStack, factor: usize) -> Result<OdmrStack> {
    stack.validate()?;
    if factor == 0 {
        return Err(Error::Invalid("binning factor must be at least 1".into()));
    }
    if stack.m % factor != 0 || stack.n % factor != 0 {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} image does not tile with factor {factor}",
            stack.m, stack.n
        )));
    }
    let (bm, bn) = (stack.m / factor, stack.n / factor);
    let mut data = vec![0.0; stack.q() * bm * bn];
    let stride = stack.m * stack.n;
    for f in 0..stack.q() {
        for bi in 0..bm {
            for bj in 0..bn {
                let mut acc = 0.0;
                for di in 0..factor {
                    for dj in 0..factor {
                        acc += stack.data
                            [f * stride + (bi * factor + di) * stack.n + bj * factor + dj];
                    }
                }
                data[f * bm * bn + bi * bn + bj] = acc;
            }
        }
    }
    Ok(OdmrStack {
        m: bm,
        n: bn,
        freqs_ghz: stack.freqs_ghz.clone(),
        data,
        pixel_pitch_m: stack.pixel_pitch_m * factor as f64,
        mode: stack.mode,
        bias_field_t: stack.bias_field_t,
        polarization: stack.polarization,
        averages: stack.averages,
        seed: stack.seed,
        metadata: stack.metadata.clone(),
    })
}
