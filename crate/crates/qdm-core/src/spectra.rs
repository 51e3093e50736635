//! Resonance line-shape models shared by the synthesizer and the fitters.
//!
//! Conventions, chosen once here and relied on everywhere else:
//! frequencies and group centers in GHz, linewidths and hyperfine constants
//! in MHz, detunings evaluated in MHz. A line with amplitude `A` and
//! half-width `gamma` contributes `A / (df^2 + gamma^2)`, so its depth at
//! center is `A / gamma^2` and its full width at half depth is `2 gamma`.
//! Amplitudes therefore carry units of fluorescence times MHz^2.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::constants::{D_HF_N14_MHZ, D_HF_N15_MHZ, GAMMA_GHZ_PER_T};
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::nv::nv_orientations;

/// Measurement protocol, which fixes the resonance-group layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Eight hyperfine triplets, one branch pair per orientation.
    Vmm,
    /// Two triplets: all orientations share one branch pair.
    Pmm,
    /// Two hyperfine doublets addressed by circular drive polarization.
    Cpmm,
}

impl Mode {
    pub fn group_count(self) -> usize {
        match self {
            Mode::Vmm => 8,
            Mode::Pmm | Mode::Cpmm => 2,
        }
    }

    pub fn lines_per_group(self) -> usize {
        match self {
            Mode::Vmm | Mode::Pmm => 3,
            Mode::Cpmm => 2,
        }
    }

    pub fn amplitude_count(self) -> usize {
        self.group_count() * self.lines_per_group()
    }

    /// Hyperfine constant of the native nitrogen species for the protocol,
    /// MHz. The doublet protocol requires the spin-1/2 isotope.
    pub fn default_hyperfine_mhz(self) -> f64 {
        match self {
            Mode::Vmm | Mode::Pmm => D_HF_N14_MHZ,
            Mode::Cpmm => D_HF_N15_MHZ,
        }
    }

    /// Detuning offsets of the hyperfine lines around a group center, MHz.
    /// An offset `o` means the line peaks at `center - o/1000` GHz.
    pub fn line_offsets_mhz(self, hyperfine_mhz: f64) -> ([f64; 3], usize) {
        match self {
            Mode::Vmm | Mode::Pmm => ([hyperfine_mhz, 0.0, -hyperfine_mhz], 3),
            Mode::Cpmm => ([0.5 * hyperfine_mhz, -0.5 * hyperfine_mhz, 0.0], 2),
        }
    }
}

/// Full parameter set of one spectrum.
///
/// Amplitudes are stored group major (`lines_per_group` entries per group);
/// group ordering follows the resonance-frequency convention of the mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumParams {
    pub mode: Mode,
    pub amplitudes: Vec<f64>,
    pub res_freqs_ghz: Vec<f64>,
    pub linewidths_mhz: Vec<f64>,
    pub offset: f64,
    pub hyperfine_mhz: f64,
}

impl SpectrumParams {
    pub fn new(
        mode: Mode,
        amplitudes: Vec<f64>,
        res_freqs_ghz: Vec<f64>,
        linewidths_mhz: Vec<f64>,
        offset: f64,
    ) -> Result<Self> {
        let p = SpectrumParams {
            mode,
            amplitudes,
            res_freqs_ghz,
            linewidths_mhz,
            offset,
            hyperfine_mhz: mode.default_hyperfine_mhz(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let groups = self.mode.group_count();
        if self.amplitudes.len() != self.mode.amplitude_count() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} amplitudes for {:?}, got {}",
                self.mode.amplitude_count(),
                self.mode,
                self.amplitudes.len()
            )));
        }
        if self.res_freqs_ghz.len() != groups || self.linewidths_mhz.len() != groups {
            return Err(Error::DimensionMismatch(format!(
                "expected {} resonance groups for {:?}, got {} centers and {} widths",
                groups,
                self.mode,
                self.res_freqs_ghz.len(),
                self.linewidths_mhz.len()
            )));
        }
        if !self.amplitudes.iter().all(|a| a.is_finite() && *a >= 0.0) {
            return Err(Error::Invalid("amplitudes must be finite and nonnegative".into()));
        }
        if !self.res_freqs_ghz.iter().all(|f| f.is_finite()) {
            return Err(Error::Invalid("resonance centers must be finite".into()));
        }
        if !self.linewidths_mhz.iter().all(|g| g.is_finite() && *g > 0.0) {
            return Err(Error::Invalid("linewidths must be finite and positive".into()));
        }
        if !self.offset.is_finite() || !self.hyperfine_mhz.is_finite() {
            return Err(Error::Invalid("offset and hyperfine must be finite".into()));
        }
        Ok(())
    }
}

/// Sum of all resonance dips without the offset.
pub fn lorentzian_sum(p: &SpectrumParams, f_ghz: f64) -> f64 {
    let (offsets, lines) = p.mode.line_offsets_mhz(p.hyperfine_mhz);
    let mut s = 0.0;
    for j in 0..p.res_freqs_ghz.len() {
        let df = (f_ghz - p.res_freqs_ghz[j]) * 1e3;
        let g2 = p.linewidths_mhz[j] * p.linewidths_mhz[j];
        for (l, off) in offsets[..lines].iter().enumerate() {
            let d = df + off;
            s += p.amplitudes[lines * j + l] / (d * d + g2);
        }
    }
    s
}

/// Model spectrum `offset + sum of peaks` at one frequency.
pub fn eval_spectrum(p: &SpectrumParams, f_ghz: f64) -> f64 {
    p.offset + lorentzian_sum(p, f_ghz)
}

/// Sense of the microwave drive field.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Handedness {
    SigmaPlus,
    SigmaMinus,
    Linear,
}

/// Microwave drive: propagation axis plus polarization sense. The axis only
/// matters up to the plane it defines; circular handedness is taken about
/// the axis direction with the right-hand rule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolarizationDrive {
    pub axis: Vec3,
    pub handedness: Handedness,
}

/// Fraction of drive power in each circular component of one orientation's
/// transverse plane. Normalized so `w_plus + w_minus == 1`.
#[derive(Clone, Copy, Debug, Default)]
pub struct CircularWeights {
    pub w_plus: f64,
    pub w_minus: f64,
}

/// Circular decomposition of the drive on every orientation.
///
/// The drive unit field is `(s1 + i h s2)/sqrt(2)` for handedness `h = +/-1`
/// (or `s1` for linear); its overlap with the orientation's circular basis
/// `(e1 +/- i e2)/sqrt(2)` gives the transition amplitudes, and the weights
/// are the normalized squared magnitudes. A circular drive looking straight
/// down an axis puts all its weight in the matching component.
pub fn polarization_weights(drive: &PolarizationDrive) -> [CircularWeights; 4] {
    let a = drive.axis.normalized();
    let s1 = {
        let seed = if a.x.abs() < 0.9 {
            Vec3::new(1.0, 0.0, 0.0)
        } else {
            Vec3::new(0.0, 1.0, 0.0)
        };
        (seed - a.scale(seed.dot(a))).normalized()
    };
    let s2 = a.cross(s1);
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let (p_re, p_im) = match drive.handedness {
        Handedness::SigmaPlus => (s1.scale(r), s2.scale(r)),
        Handedness::SigmaMinus => (s1.scale(r), s2.scale(-r)),
        Handedness::Linear => (s1, Vec3::ZERO),
    };
    let set = nv_orientations();
    let mut out = [CircularWeights::default(); 4];
    for (k, w) in out.iter_mut().enumerate() {
        let f = set.frame(k);
        let e1p = Complex64::new(f.e1.dot(p_re), f.e1.dot(p_im));
        let e2p = Complex64::new(f.e2.dot(p_re), f.e2.dot(p_im));
        let eps_p = (e1p - Complex64::i() * e2p) * r;
        let eps_m = (e1p + Complex64::i() * e2p) * r;
        let (wp, wm) = (eps_p.norm_sqr(), eps_m.norm_sqr());
        let tot = wp + wm;
        *w = if tot < 1e-30 {
            // drive parallel to the axis couples only through terms outside
            // this model; split evenly rather than divide by zero
            CircularWeights {
                w_plus: 0.5,
                w_minus: 0.5,
            }
        } else {
            CircularWeights {
                w_plus: wp / tot,
                w_minus: wm / tot,
            }
        };
    }
    out
}

/// One orientation's contribution to a polarization-resolved doublet
/// spectrum, without offset: the lower branch template shifted down by the
/// axial Zeeman term and weighted by `w_minus`, plus the upper branch
/// shifted up and weighted by `w_plus`.
///
/// `base` must use the doublet mode; group 0 is the lower branch template
/// and group 1 the upper branch.
pub fn cpmm_single_orientation(
    b_parallel_t: f64,
    w: CircularWeights,
    base: &SpectrumParams,
    f_ghz: f64,
) -> f64 {
    debug_assert_eq!(base.mode, Mode::Cpmm);
    let shift = GAMMA_GHZ_PER_T * b_parallel_t;
    let half = 0.5 * base.hyperfine_mhz;
    let mut s = 0.0;
    for (j, (sign, weight)) in [(-1.0, w.w_minus), (1.0, w.w_plus)].into_iter().enumerate() {
        let center = base.res_freqs_ghz[j] + sign * shift;
        let df = (f_ghz - center) * 1e3;
        let g2 = base.linewidths_mhz[j] * base.linewidths_mhz[j];
        let lo = df + half;
        let hi = df - half;
        s += weight
            * (base.amplitudes[2 * j] / (lo * lo + g2)
                + base.amplitudes[2 * j + 1] / (hi * hi + g2));
    }
    s
}

/// Polarization-resolved doublet spectrum for a uniform field, averaged
/// over the four orientations with equal number density.
///
/// `b_parallel_per_k` are the axis projections of the field in tesla, in
/// the standard orientation order. Panics if `base` is not a doublet
/// parameter set; build it with [`SpectrumParams::new`].
pub fn cpmm_polarized_spectrum(
    b_parallel_per_k: [f64; 4],
    drive: &PolarizationDrive,
    base: &SpectrumParams,
) -> impl Fn(f64) -> f64 {
    assert_eq!(base.mode, Mode::Cpmm, "polarized spectrum needs doublet params");
    let weights = polarization_weights(drive);
    let base = base.clone();
    move |f_ghz: f64| {
        let mut s = base.offset;
        for k in 0..4 {
            s += 0.25 * cpmm_single_orientation(b_parallel_per_k[k], weights[k], &base, f_ghz);
        }
        s
    }
}
