//! Fitted field-map container.

use crate::error::{Error, Result};

/// Per-pixel fitted fields: one plane per component (three for vector
/// maps, one for projection and polarization-resolved maps), optional
/// per-orientation splitting planes, a validity mask, and per-pixel fit
/// residual RMS in contrast units. Invalid pixels hold NaN sentinels and
/// are excluded from all statistics.
#[derive(Clone, Debug)]
pub struct FieldMap {
    pub m: usize,
    pub n: usize,
    pub pixel_pitch_m: f64,
    /// Component planes, row-major, tesla.
    pub components: Vec<Vec<f64>>,
    /// Per-orientation splitting planes, GHz; vector maps only.
    pub zfs_ghz: Option<Vec<Vec<f64>>>,
    /// True where the pixel carries a valid fit.
    pub mask: Vec<bool>,
    pub residual_rms: Vec<f64>,
}

impl FieldMap {
    fn blank(m: usize, n: usize, pixel_pitch_m: f64, components: usize) -> Self {
        FieldMap {
            m,
            n,
            pixel_pitch_m,
            components: vec![vec![0.0; m * n]; components],
            zfs_ghz: None,
            mask: vec![true; m * n],
            residual_rms: vec![0.0; m * n],
        }
    }

    /// Single-component map, all pixels valid and zero.
    pub fn new_scalar(m: usize, n: usize, pixel_pitch_m: f64) -> Self {
        Self::blank(m, n, pixel_pitch_m, 1)
    }

    /// Three-component map, all pixels valid and zero.
    pub fn new_vector(m: usize, n: usize, pixel_pitch_m: f64) -> Self {
        Self::blank(m, n, pixel_pitch_m, 3)
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        i * self.n + j
    }

    /// Marks one pixel invalid and writes the NaN sentinel everywhere.
    pub fn mask_pixel(&mut self, i: usize, j: usize) {
        let idx = self.idx(i, j);
        self.mask[idx] = false;
        for plane in self.components.iter_mut() {
            plane[idx] = f64::NAN;
        }
        if let Some(zfs) = self.zfs_ghz.as_mut() {
            for plane in zfs.iter_mut() {
                plane[idx] = f64::NAN;
            }
        }
        self.residual_rms[idx] = f64::NAN;
    }

    pub fn validate(&self) -> Result<()> {
        let len = self.m * self.n;
        if self.m == 0 || self.n == 0 {
            return Err(Error::Invalid("empty map".into()));
        }
        if !(self.pixel_pitch_m > 0.0) || !self.pixel_pitch_m.is_finite() {
            return Err(Error::Invalid("pixel pitch must be positive".into()));
        }
        if !matches!(self.components.len(), 1 | 3) {
            return Err(Error::Invalid(format!(
                "{} components; maps carry one or three",
                self.components.len()
            )));
        }
        if self.components.iter().any(|p| p.len() != len)
            || self.mask.len() != len
            || self.residual_rms.len() != len
            || self
                .zfs_ghz
                .as_ref()
                .is_some_and(|z| z.len() != 4 || z.iter().any(|p| p.len() != len))
        {
            return Err(Error::DimensionMismatch(format!(
                "plane sizes inconsistent with {}x{}",
                self.m, self.n
            )));
        }
        Ok(())
    }
}
