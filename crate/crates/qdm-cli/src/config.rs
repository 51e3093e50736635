//! Declarative job description shared by the simulate, fit, and filter
//! subcommands. Strictly validated: unknown keys are an error.

use std::fs;
use std::path::Path;

use qdm_core::geom::Vec3;
use qdm_core::lm::LmOptions;
use qdm_core::sim::{DipoleSource, SensorGeometry};
use qdm_core::spectra::{Mode, PolarizationDrive, SpectrumParams};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub geometry: GeometryConfig,
    pub mode: Mode,
    /// Tesla, lab frame. Recorded on the stack and used by the fitters
    /// for line assignment.
    #[serde(default)]
    pub bias_field_t: [f64; 3],
    #[serde(default)]
    pub sources: Vec<SourceConfig>,
    /// Lineshape dressing: amplitudes, linewidths, baseline offset.
    pub template: SpectrumParams,
    pub freq_window: FreqWindow,
    /// Expected photons per pixel over the sweep; omit for a noiseless
    /// stack.
    #[serde(default)]
    pub photons_per_pixel: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    /// Microwave drive; required for polarization-resolved stacks.
    #[serde(default)]
    pub polarization: Option<PolarizationDrive>,
    /// Orientation a projection stack measures along (0..3).
    #[serde(default)]
    pub pmm_orientation: usize,
    /// Solver overrides for the fit stage.
    #[serde(default)]
    pub lm: Option<LmConfig>,
    /// Filter defaults for the filter stage.
    #[serde(default)]
    pub filter: Option<FilterConfig>,
    /// Worker thread count; the QDM_THREADS environment variable takes
    /// precedence, and the default is all logical cores.
    #[serde(default)]
    pub threads: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub standoff_m: f64,
    pub nv_layer_thickness_m: f64,
    pub nv_layer_depth_m: f64,
    pub pixel_pitch_m: f64,
    pub m: usize,
    pub n: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    /// Meters; z <= 0, below the sensing plane.
    pub position: [f64; 3],
    /// Ampere square meters.
    pub moment: [f64; 3],
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FreqWindow {
    pub lo_ghz: f64,
    pub hi_ghz: f64,
    pub q: usize,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LmConfig {
    pub max_iterations: Option<usize>,
    pub initial_damping: Option<f64>,
    pub max_damping: Option<f64>,
    pub cost_tolerance: Option<f64>,
    pub step_tolerance: Option<f64>,
    pub fd_relative_step: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    pub lowpass_fwhm_um: Option<f64>,
    pub highpass_cutoff_um: Option<f64>,
    pub order: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        cfg.template.validate().map_err(CliError::config)?;
        Ok(cfg)
    }

    pub fn sources(&self) -> Result<Vec<DipoleSource>, CliError> {
        self.sources
            .iter()
            .map(|s| {
                DipoleSource::new(Vec3::from_array(s.position), Vec3::from_array(s.moment))
                    .map_err(CliError::config)
            })
            .collect()
    }

    pub fn bias(&self) -> Vec3 {
        Vec3::from_array(self.bias_field_t)
    }
}

impl GeometryConfig {
    pub fn to_sensor(&self) -> Result<SensorGeometry, CliError> {
        SensorGeometry::new(
            self.standoff_m,
            self.nv_layer_thickness_m,
            self.nv_layer_depth_m,
            self.pixel_pitch_m,
            self.m,
            self.n,
        )
        .map_err(CliError::config)
    }
}

impl FreqWindow {
    pub fn axis(&self) -> Result<Vec<f64>, CliError> {
        if !(self.lo_ghz.is_finite() && self.hi_ghz.is_finite() && self.lo_ghz < self.hi_ghz) {
            return Err(CliError::config(format!(
                "frequency window [{}, {}] GHz must be finite and increasing",
                self.lo_ghz, self.hi_ghz
            )));
        }
        if self.q < 2 {
            return Err(CliError::config(format!("sweep needs at least 2 channels, got {}", self.q)));
        }
        Ok((0..self.q)
            .map(|i| self.lo_ghz + (self.hi_ghz - self.lo_ghz) * i as f64 / (self.q - 1) as f64)
            .collect())
    }
}

impl LmConfig {
    pub fn apply(&self, mut base: LmOptions) -> LmOptions {
        if let Some(v) = self.max_iterations {
            base.max_iterations = v;
        }
        if let Some(v) = self.initial_damping {
            base.initial_damping = v;
        }
        if let Some(v) = self.max_damping {
            base.max_damping = v;
        }
        if let Some(v) = self.cost_tolerance {
            base.cost_tolerance = v;
        }
        if let Some(v) = self.step_tolerance {
            base.step_tolerance = v;
        }
        if let Some(v) = self.fd_relative_step {
            base.fd_relative_step = v;
        }
        base
    }
}
