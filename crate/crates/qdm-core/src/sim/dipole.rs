//! Point-dipole magnetostatics and sampling onto the sensor pixel grid.

use crate::constants::MU_0;
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::map::field::FieldMap;

/// A magnetic point source below the sensor plane.
#[derive(Clone, Debug)]
pub struct DipoleSource {
    /// Meters; z <= 0, the sample side of the standoff gap.
    pub position: Vec3,
    /// Ampere square meters.
    pub moment: Vec3,
}

impl DipoleSource {
    pub fn new(position: Vec3, moment: Vec3) -> Result<Self> {
        if !position.is_finite() || !moment.is_finite() {
            return Err(Error::Invalid("dipole parameters must be finite".into()));
        }
        if !(moment.norm() > 0.0) {
            return Err(Error::Invalid("dipole moment must be nonzero".into()));
        }
        if position.z > 0.0 {
            return Err(Error::Invalid(format!(
                "source sits above the sensor plane (z = {} m)",
                position.z
            )));
        }
        Ok(DipoleSource { position, moment })
    }
}

/// Field of a point dipole at `at`, tesla:
/// B = (mu0/4pi) (3(m.R)R/|R|^2 - m)/|R|^3.
pub fn dipole_field(src: &DipoleSource, at: Vec3) -> Result<Vec3> {
    if !at.is_finite() {
        return Err(Error::Invalid("observation point must be finite".into()));
    }
    let r = at - src.position;
    let r2 = r.dot(r);
    if r2 == 0.0 {
        return Err(Error::Invalid("dipole field is singular at the source".into()));
    }
    let inv_r = 1.0 / r2.sqrt();
    let rhat = r.scale(inv_r);
    let radial = rhat.scale(3.0 * src.moment.dot(rhat));
    Ok((radial - src.moment).scale(MU_0 / (4.0 * std::f64::consts::PI) * inv_r * inv_r * inv_r))
}

/// Imaging geometry: the sensing layer sits `standoff_m` above the sample
/// surface datum (z = 0), pixels are centered on a regular grid in that
/// plane.
#[derive(Clone, Debug)]
pub struct SensorGeometry {
    /// Source-to-sensor separation, meters.
    pub standoff_m: f64,
    /// Depth extent of the sensing layer, meters.
    pub nv_layer_thickness_m: f64,
    /// Layer depth below the diamond surface, meters; bookkeeping only.
    pub nv_layer_depth_m: f64,
    pub pixel_pitch_m: f64,
    pub m: usize,
    pub n: usize,
}

impl SensorGeometry {
    pub fn new(
        standoff_m: f64,
        nv_layer_thickness_m: f64,
        nv_layer_depth_m: f64,
        pixel_pitch_m: f64,
        m: usize,
        n: usize,
    ) -> Result<Self> {
        if !(standoff_m.is_finite() && standoff_m > 0.0) {
            return Err(Error::Invalid(format!("standoff {standoff_m} must be positive")));
        }
        if !(nv_layer_thickness_m.is_finite() && nv_layer_thickness_m >= 0.0) {
            return Err(Error::Invalid(format!(
                "layer thickness {nv_layer_thickness_m} must be nonnegative"
            )));
        }
        if !(nv_layer_depth_m.is_finite() && nv_layer_depth_m >= 0.0) {
            return Err(Error::Invalid(format!(
                "layer depth {nv_layer_depth_m} must be nonnegative"
            )));
        }
        if !(pixel_pitch_m.is_finite() && pixel_pitch_m > 0.0) {
            return Err(Error::Invalid(format!("pixel pitch {pixel_pitch_m} must be positive")));
        }
        if m == 0 || n == 0 {
            return Err(Error::Invalid("grid must have at least one pixel".into()));
        }
        Ok(SensorGeometry {
            standoff_m,
            nv_layer_thickness_m,
            nv_layer_depth_m,
            pixel_pitch_m,
            m,
            n,
        })
    }

    /// Center of pixel (i, j) with the grid centered on the origin.
    pub fn pixel_center(&self, i: usize, j: usize) -> Vec3 {
        Vec3::new(
            (j as f64 - (self.n as f64 - 1.0) / 2.0) * self.pixel_pitch_m,
            (i as f64 - (self.m as f64 - 1.0) / 2.0) * self.pixel_pitch_m,
            self.standoff_m,
        )
    }

    /// Layer thickness in units of the standoff.
    pub fn reduced_thickness(&self) -> f64 {
        self.nv_layer_thickness_m / self.standoff_m
    }
}

/// Superposed dipole field plus a uniform bias, sampled at every pixel
/// center of the sensing plane.
pub fn sample_field_map(
    sources: &[DipoleSource],
    geom: &SensorGeometry,
    bias_t: Vec3,
) -> Result<FieldMap> {
    if !bias_t.is_finite() {
        return Err(Error::Invalid("bias field must be finite".into()));
    }
    let mut map = FieldMap::new_vector(geom.m, geom.n, geom.pixel_pitch_m);
    for i in 0..geom.m {
        for j in 0..geom.n {
            let at = geom.pixel_center(i, j);
            let mut b = bias_t;
            for src in sources {
                // pixel centers are strictly above z = 0, sources at or
                // below it, so the evaluation point is never singular
                b = b + dipole_field(src, at)?;
            }
            let idx = i * geom.n + j;
            map.components[0][idx] = b.x;
            map.components[1][idx] = b.y;
            map.components[2][idx] = b.z;
        }
    }
    Ok(map)
}
