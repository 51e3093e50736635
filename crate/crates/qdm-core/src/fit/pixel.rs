//! Per-pixel spectral fits.
//!
//! Raw photon-count sweeps are normalized to contrast (`1 - s/baseline`,
//! baseline from the upper-quartile mean, so resonances point up), seeded
//! by smoothed peak picking, and refined with the damped least-squares
//! engine using analytic derivatives. Fitted group ordering follows the
//! seed, i.e. ascending in frequency for cold starts.

use crate::error::{Error, Result};
use crate::lm::{levenberg_marquardt, LmOptions, LmProblem};
use crate::spectra::{CircularWeights, Mode, SpectrumParams};

#[derive(Clone, Debug)]
pub struct PixelFitOptions {
    pub lm: LmOptions,
    /// Box-smoothing window in channels for peak seeding; 0 means q/100.
    pub smooth_window: usize,
    /// Seeded peaks must reach this fraction of the tallest peak.
    pub relative_peak_floor: f64,
    /// Minimum separation between seeded group centers, MHz. Also the
    /// scale used to split an unresolved dip into two seeds.
    pub min_group_separation_mhz: f64,
}

impl Default for PixelFitOptions {
    fn default() -> Self {
        PixelFitOptions {
            lm: LmOptions::default(),
            smooth_window: 0,
            relative_peak_floor: 0.2,
            min_group_separation_mhz: 5.0,
        }
    }
}

/// Result of one pixel fit, in contrast units relative to `baseline`.
#[derive(Clone, Debug)]
pub struct PixelFit {
    pub params: SpectrumParams,
    pub baseline: f64,
    pub residual_rms: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Converts a raw sweep to contrast. The baseline is the mean of the top
/// quartile of samples, which sits on the off-resonance level as long as
/// resonances cover less than three quarters of the sweep.
pub fn normalize_contrast(signal: &[f64]) -> Result<(Vec<f64>, f64)> {
    if signal.len() < 8 {
        return Err(Error::Invalid("sweep too short to normalize".into()));
    }
    if !signal.iter().all(|s| s.is_finite()) {
        return Err(Error::Invalid("non-finite sample in sweep".into()));
    }
    let mut sorted = signal.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let take = (signal.len() / 4).max(1);
    let baseline = sorted[signal.len() - take..].iter().sum::<f64>() / take as f64;
    if baseline <= 0.0 {
        return Err(Error::Invalid("nonpositive baseline".into()));
    }
    let y = signal.iter().map(|s| 1.0 - s / baseline).collect();
    Ok((y, baseline))
}

fn validate_axis(freqs: &[f64], signal: &[f64], min_len: usize) -> Result<()> {
    if freqs.len() != signal.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} frequencies vs {} samples",
            freqs.len(),
            signal.len()
        )));
    }
    if freqs.len() < min_len {
        return Err(Error::Invalid(format!(
            "need at least {min_len} samples, got {}",
            freqs.len()
        )));
    }
    if !freqs.iter().all(|f| f.is_finite()) {
        return Err(Error::Invalid("non-finite frequency sample".into()));
    }
    if freqs.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Invalid("frequency axis must be strictly increasing".into()));
    }
    Ok(())
}

fn param_count(mode: Mode) -> usize {
    mode.amplitude_count() + 2 * mode.group_count() + 1
}

fn box_smooth(y: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    let q = y.len();
    (0..q)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(q);
            y[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

fn lower_quartile_mean(y: &[f64]) -> f64 {
    let mut sorted = y.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let take = (y.len() / 4).max(1);
    sorted[..take].iter().sum::<f64>() / take as f64
}

/// Iterated centroid of `ys - floor` over a window of `hw` channels around
/// the running estimate. Converges to the center of a near-symmetric comb
/// even when `start` sits on an outer tooth.
fn centroid_refine(ys: &[f64], floor: f64, start: usize, hw: usize) -> f64 {
    let q = ys.len();
    let mut c = start as f64;
    for _ in 0..3 {
        let mid = c.round() as isize;
        let lo = (mid - hw as isize).max(0) as usize;
        let hi = ((mid + hw as isize + 1).max(1) as usize).min(q);
        let mut wsum = 0.0;
        let mut msum = 0.0;
        for (i, &y) in ys.iter().enumerate().take(hi).skip(lo) {
            let w = (y - floor).max(0.0);
            wsum += w;
            msum += w * i as f64;
        }
        if wsum <= 0.0 {
            break;
        }
        c = msum / wsum;
    }
    c
}

fn interp_freq(freqs: &[f64], pos: f64) -> f64 {
    let i0 = (pos.floor().max(0.0) as usize).min(freqs.len() - 2);
    let t = pos - i0 as f64;
    freqs[i0] * (1.0 - t) + freqs[i0 + 1] * t
}

fn half_height_width(ys: &[f64], peak: usize, floor: f64) -> usize {
    let half = floor + 0.5 * (ys[peak] - floor);
    let mut l = peak;
    while l > 0 && ys[l] > half {
        l -= 1;
    }
    let mut r = peak;
    while r + 1 < ys.len() && ys[r] > half {
        r += 1;
    }
    (r - l).max(1)
}

/// Seeds a parameter set from smoothed local maxima of the contrast.
///
/// Picks up to `group_count` peaks tallest-first with an exclusion radius;
/// when a dip is unresolved the deficit is padded with twins offset by half
/// the exclusion radius, leaving the separation to the fit. Fails with a
/// dip-detection error only when no peak rises above the noise floor.
pub fn initial_guess(
    freqs_ghz: &[f64],
    contrast: &[f64],
    mode: Mode,
    opts: &PixelFitOptions,
) -> Result<SpectrumParams> {
    let q = freqs_ghz.len();
    let groups = mode.group_count();
    let window = if opts.smooth_window > 0 {
        opts.smooth_window | 1
    } else {
        (q / 100).max(3) | 1
    };
    let ys = box_smooth(contrast, window);
    let floor = lower_quartile_mean(&ys);
    let df_mhz = (freqs_ghz[q - 1] - freqs_ghz[0]) / (q - 1) as f64 * 1e3;
    let excl = ((opts.min_group_separation_mhz / df_mhz).round() as usize).max(2);

    let mut cands: Vec<(usize, f64)> = (1..q - 1)
        .filter(|&i| ys[i] > ys[i - 1] && ys[i] >= ys[i + 1])
        .map(|i| (i, ys[i] - floor))
        .collect();
    cands.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    let max_h = cands.first().map(|c| c.1).unwrap_or(0.0);
    if max_h <= 0.0 {
        return Err(Error::DipDetection {
            expected: groups,
            found: 0,
        });
    }

    let mut selected: Vec<usize> = Vec::with_capacity(groups);
    for &(i, h) in &cands {
        if h < opts.relative_peak_floor * max_h {
            break;
        }
        if selected.iter().all(|&j| j.abs_diff(i) >= excl) {
            selected.push(i);
            if selected.len() == groups {
                break;
            }
        }
    }

    let lines = mode.lines_per_group();
    let hf_span = match mode {
        Mode::Vmm | Mode::Pmm => 2.0 * mode.default_hyperfine_mhz(),
        Mode::Cpmm => mode.default_hyperfine_mhz(),
    };

    // noise can make a hyperfine satellite out-peak the central line, and a
    // seed on a satellite drops the fit into a misregistered comb; re-center
    // each peak on the centroid of its envelope, capping the move at roughly
    // the satellite offset so neighboring groups cannot capture it
    let hw_ch = ((hf_span / df_mhz).ceil() as usize).max(2);
    let max_shift = 0.5 * hf_span / df_mhz + 2.0;
    let mut pos: Vec<f64> = selected
        .iter()
        .map(|&i| {
            let c = centroid_refine(&ys, floor, i, hw_ch);
            (i as f64 + (c - i as f64).clamp(-max_shift, max_shift))
                .clamp(1.0, (q - 2) as f64)
        })
        .collect();

    // pad unresolved groups with twins next to the found peaks
    let found = pos.len();
    let mut pad = 0;
    while pos.len() < groups {
        let base = pos[pad % found];
        let step = (excl / 2 + 1) as f64;
        let twin = if (pad / found) % 2 == 0 {
            (base + step).min((q - 2) as f64)
        } else {
            (base - step).max(1.0)
        };
        pos.push(twin);
        pad += 1;
    }
    pos.sort_by(|a, b| a.partial_cmp(b).unwrap());

    // measured envelope width is the line width plus the hyperfine span
    // plus the smoothing window; strip the two known contributions
    let smear = window as f64 * df_mhz;
    let mut amps = Vec::with_capacity(groups * lines);
    let mut centers = Vec::with_capacity(groups);
    let mut widths = Vec::with_capacity(groups);
    for &c in &pos {
        let i = c.round() as usize;
        let fwhm = half_height_width(&ys, i, floor) as f64 * df_mhz;
        // a narrow result means the walk stayed on one resolved line;
        // a wide one means it crossed the whole unresolved envelope
        let w_meas = fwhm - smear;
        let gamma = if w_meas > hf_span {
            0.5 * (w_meas - hf_span)
        } else {
            0.5 * w_meas
        }
        .clamp(0.25, 2.5);
        let h = (contrast[i] - floor).max(0.25 * max_h);
        centers.push(interp_freq(freqs_ghz, c));
        widths.push(gamma);
        let a = h * gamma * gamma;
        match mode {
            Mode::Vmm | Mode::Pmm => amps.extend_from_slice(&[0.6 * a, 0.8 * a, 0.6 * a]),
            Mode::Cpmm => amps.extend_from_slice(&[0.7 * a, 0.7 * a]),
        }
    }
    SpectrumParams::new(mode, amps, centers, widths, floor.max(0.0))
}

/// The multi-group resonance model as a least-squares problem over
/// `[amplitudes.., centers.., widths.., offset]`.
struct SpectrumProblem<'a> {
    freqs: &'a [f64],
    y: &'a [f64],
    mode: Mode,
    hyperfine_mhz: f64,
}

impl SpectrumProblem<'_> {
    fn groups(&self) -> usize {
        self.mode.group_count()
    }

    fn na(&self) -> usize {
        self.mode.amplitude_count()
    }
}

impl LmProblem for SpectrumProblem<'_> {
    fn residual_len(&self) -> usize {
        self.freqs.len()
    }

    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        let (offsets, lines) = self.mode.line_offsets_mhz(self.hyperfine_mhz);
        let (na, ng) = (self.na(), self.groups());
        let offset = p[na + 2 * ng];
        for (i, (&f, &yi)) in self.freqs.iter().zip(self.y.iter()).enumerate() {
            let mut s = offset;
            for j in 0..ng {
                let df = (f - p[na + j]) * 1e3;
                let g = p[na + ng + j];
                let g2 = g * g;
                for (l, off) in offsets[..lines].iter().enumerate() {
                    let u = df + off;
                    s += p[lines * j + l] / (u * u + g2);
                }
            }
            out[i] = s - yi;
        }
    }

    fn jacobian(&self, p: &[f64], out: &mut [f64]) -> bool {
        let (offsets, lines) = self.mode.line_offsets_mhz(self.hyperfine_mhz);
        let (na, ng) = (self.na(), self.groups());
        let n = na + 2 * ng + 1;
        for (i, &f) in self.freqs.iter().enumerate() {
            let row = &mut out[i * n..(i + 1) * n];
            for j in 0..ng {
                let df = (f - p[na + j]) * 1e3;
                let g = p[na + ng + j];
                let g2 = g * g;
                let mut dc = 0.0;
                let mut dg = 0.0;
                for (l, off) in offsets[..lines].iter().enumerate() {
                    let u = df + off;
                    let inv = 1.0 / (u * u + g2);
                    row[lines * j + l] = inv;
                    let a_inv2 = p[lines * j + l] * inv * inv;
                    dc += 2e3 * u * a_inv2;
                    dg -= 2.0 * g * a_inv2;
                }
                row[na + j] = dc;
                row[na + ng + j] = dg;
            }
            row[na + 2 * ng] = 1.0;
        }
        true
    }
}

fn pack(params: &SpectrumParams) -> Vec<f64> {
    let mut p = Vec::with_capacity(param_count(params.mode));
    // warm starts may carry slightly negative noise-fit amplitudes
    p.extend(params.amplitudes.iter().map(|a| a.max(0.0)));
    p.extend_from_slice(&params.res_freqs_ghz);
    p.extend_from_slice(&params.linewidths_mhz);
    p.push(params.offset);
    p
}

fn unpack(mode: Mode, hyperfine_mhz: f64, p: &[f64]) -> SpectrumParams {
    let (na, ng) = (mode.amplitude_count(), mode.group_count());
    SpectrumParams {
        mode,
        amplitudes: p[..na].to_vec(),
        res_freqs_ghz: p[na..na + ng].to_vec(),
        // the model is even in the linewidth, pick the physical branch
        linewidths_mhz: p[na + ng..na + 2 * ng].iter().map(|g| g.abs()).collect(),
        offset: p[na + 2 * ng],
        hyperfine_mhz,
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    0.5 * (v[(v.len() - 1) / 2] + v[v.len() / 2])
}

/// Groups whose fitted parameters signal a spurious local minimum: a line
/// amplitude driven well below zero, or a width far outside the family of
/// the other groups. Both happen when a noisy width seed lands the solver
/// in a misregistered comb.
fn pathological_groups(params: &SpectrumParams) -> Vec<usize> {
    let lines = params.mode.lines_per_group();
    let med_w = median(&params.linewidths_mhz);
    (0..params.mode.group_count())
        .filter(|&g| {
            let a = &params.amplitudes[lines * g..lines * (g + 1)];
            let amax = a.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
            let negative = a.iter().any(|&x| x < -0.1 * amax);
            negative || params.linewidths_mhz[g] > 2.5 * med_w.max(0.3)
        })
        .collect()
}

/// True when a fitted solution is not interpretable against the sampled
/// window: a center more than half a span outside the sweep, a width wider
/// than the sweep, or a non-finite parameter. The solver reaches such points
/// by deleting a weakly seeded group (amplitude and distance grow together
/// while the in-window residual no longer changes).
fn outside_window(freqs: &[f64], params: &SpectrumParams) -> bool {
    let span = freqs[freqs.len() - 1] - freqs[0];
    let lo = freqs[0] - 0.5 * span;
    let hi = freqs[freqs.len() - 1] + 0.5 * span;
    let span_mhz = span * 1e3;
    params.res_freqs_ghz.iter().any(|&c| !(lo..=hi).contains(&c))
        || params
            .linewidths_mhz
            .iter()
            .any(|&w| !(w > 0.0 && w <= span_mhz))
        || !params.offset.is_finite()
        || params.amplitudes.iter().any(|a| !a.is_finite())
}

fn nearest_channel(freqs: &[f64], f: f64) -> usize {
    let i = freqs.partition_point(|&x| x < f);
    if i == 0 {
        0
    } else if i == freqs.len() {
        freqs.len() - 1
    } else if (freqs[i] - f).abs() < (f - freqs[i - 1]).abs() {
        i
    } else {
        i - 1
    }
}

fn run_fit(
    freqs: &[f64],
    y: &[f64],
    baseline: f64,
    start: &SpectrumParams,
    opts: &PixelFitOptions,
) -> PixelFit {
    let problem = SpectrumProblem {
        freqs,
        y,
        mode: start.mode,
        hyperfine_mhz: start.hyperfine_mhz,
    };
    let mut report = levenberg_marquardt(&problem, &pack(start), &opts.lm);
    let mut params = unpack(start.mode, start.hyperfine_mhz, &report.params);

    // one repair pass: re-seed any group that converged into a spurious
    // minimum, using the healthy groups' width and the local dip height,
    // then keep whichever solution costs less
    let bad = pathological_groups(&params);
    if !bad.is_empty() {
        let lines = params.mode.lines_per_group();
        let med_w = median(&params.linewidths_mhz).clamp(0.25, 2.5);
        let mut retry = params.clone();
        for &g in &bad {
            let h = (y[nearest_channel(freqs, retry.res_freqs_ghz[g])] - retry.offset).max(1e-6);
            retry.linewidths_mhz[g] = med_w;
            let a = h * med_w * med_w;
            match retry.mode {
                Mode::Vmm | Mode::Pmm => {
                    retry.amplitudes[lines * g..lines * (g + 1)]
                        .copy_from_slice(&[0.6 * a, 0.8 * a, 0.6 * a]);
                }
                Mode::Cpmm => {
                    retry.amplitudes[lines * g..lines * (g + 1)]
                        .copy_from_slice(&[0.7 * a, 0.7 * a]);
                }
            }
        }
        let second = levenberg_marquardt(&problem, &pack(&retry), &opts.lm);
        if second.cost < report.cost {
            params = unpack(start.mode, start.hyperfine_mhz, &second.params);
            report = second;
        }
    }

    // runaway recovery: when the seed carries a near-zero amplitude group,
    // the first lightly damped steps can throw that group out of the window
    // entirely. A heavily damped solve from the same start walks in without
    // the jump. A solution that still ends outside the window is not a fit
    // of the sampled data at all and must not be reported as converged.
    if outside_window(freqs, &params) {
        let mut damped = opts.lm.clone();
        damped.initial_damping = damped.initial_damping.max(1.0);
        let retry = levenberg_marquardt(&problem, &pack(start), &damped);
        let retry_params = unpack(start.mode, start.hyperfine_mhz, &retry.params);
        if !outside_window(freqs, &retry_params) {
            params = retry_params;
            report = retry;
        } else {
            report.converged = false;
        }
    }

    PixelFit {
        params,
        baseline,
        residual_rms: (report.cost / freqs.len() as f64).sqrt(),
        converged: report.converged,
        iterations: report.iterations,
    }
}

/// Fits one pixel's sweep from a cold start.
pub fn fit_pixel_spectrum(
    freqs_ghz: &[f64],
    signal: &[f64],
    mode: Mode,
    opts: &PixelFitOptions,
) -> Result<PixelFit> {
    validate_axis(freqs_ghz, signal, param_count(mode) + 8)?;
    let (y, baseline) = normalize_contrast(signal)?;
    let seed = initial_guess(freqs_ghz, &y, mode, opts)?;
    Ok(run_fit(freqs_ghz, &y, baseline, &seed, opts))
}

/// Fits one pixel's sweep starting from a known-good parameter set, e.g.
/// the converged fit of a neighboring pixel.
pub fn fit_pixel_with_start(
    freqs_ghz: &[f64],
    signal: &[f64],
    start: &SpectrumParams,
    opts: &PixelFitOptions,
) -> Result<PixelFit> {
    validate_axis(freqs_ghz, signal, param_count(start.mode) + 8)?;
    if start.amplitudes.len() != start.mode.amplitude_count()
        || start.res_freqs_ghz.len() != start.mode.group_count()
        || start.linewidths_mhz.len() != start.mode.group_count()
    {
        return Err(Error::DimensionMismatch("start params do not match mode".into()));
    }
    let (y, baseline) = normalize_contrast(signal)?;
    Ok(run_fit(freqs_ghz, &y, baseline, start, opts))
}

#[derive(Clone, Debug)]
pub struct CpmmTiedOptions {
    pub lm: LmOptions,
    /// Calibrated zero-field doublet center; the suppressed family is
    /// mirrored about it.
    pub template_center_ghz: f64,
}

impl Default for CpmmTiedOptions {
    fn default() -> Self {
        CpmmTiedOptions {
            lm: LmOptions::default(),
            template_center_ghz: crate::constants::F_ZFS_GHZ,
        }
    }
}

/// Result of a weight-tied doublet fit. Amplitudes are those of the
/// dominant family as driven (polarization weight included).
#[derive(Clone, Debug)]
pub struct CpmmTiedFit {
    pub dominant_center_ghz: f64,
    pub amplitudes: [f64; 2],
    pub linewidth_mhz: f64,
    pub offset: f64,
    pub baseline: f64,
    pub residual_rms: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Tied doublet model over `[a_low, a_high, center, width, offset]`: the
/// dominant doublet floats, the suppressed family is pinned to the mirror
/// position about the template center with amplitudes scaled by the weight
/// ratio. The tie is what keeps a sub-linewidth shift identifiable.
struct TiedProblem<'a> {
    freqs: &'a [f64],
    y: &'a [f64],
    ratio: f64,
    c0: f64,
    half_mhz: f64,
}

impl TiedProblem<'_> {
    /// doublet value and derivatives w.r.t. (a_low, a_high, center, width)
    fn doublet(&self, f: f64, c: f64, p: &[f64]) -> (f64, [f64; 4]) {
        let df = (f - c) * 1e3;
        let g = p[3];
        let g2 = g * g;
        let (ul, uh) = (df + self.half_mhz, df - self.half_mhz);
        let (il, ih) = (1.0 / (ul * ul + g2), 1.0 / (uh * uh + g2));
        let v = p[0] * il + p[1] * ih;
        let dl = p[0] * il * il;
        let dh = p[1] * ih * ih;
        let dc = 2e3 * (ul * dl + uh * dh);
        let dg = -2.0 * g * (dl + dh);
        (v, [il, ih, dc, dg])
    }
}

impl LmProblem for TiedProblem<'_> {
    fn residual_len(&self) -> usize {
        self.freqs.len()
    }

    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        for (i, (&f, &yi)) in self.freqs.iter().zip(self.y.iter()).enumerate() {
            let (dom, _) = self.doublet(f, p[2], p);
            let (sup, _) = self.doublet(f, 2.0 * self.c0 - p[2], p);
            out[i] = p[4] + dom + self.ratio * sup - yi;
        }
    }

    fn jacobian(&self, p: &[f64], out: &mut [f64]) -> bool {
        for (i, &f) in self.freqs.iter().enumerate() {
            let row = &mut out[i * 5..(i + 1) * 5];
            let (_, d_dom) = self.doublet(f, p[2], p);
            let (_, d_sup) = self.doublet(f, 2.0 * self.c0 - p[2], p);
            row[0] = d_dom[0] + self.ratio * d_sup[0];
            row[1] = d_dom[1] + self.ratio * d_sup[1];
            // the mirrored center moves opposite to the dominant one
            row[2] = d_dom[2] - self.ratio * d_sup[2];
            row[3] = d_dom[3] + self.ratio * d_sup[3];
            row[4] = 1.0;
        }
        true
    }
}

/// Fits one pixel of a polarization-resolved doublet sweep.
pub fn fit_cpmm_tied(
    freqs_ghz: &[f64],
    signal: &[f64],
    weights: CircularWeights,
    opts: &CpmmTiedOptions,
) -> Result<CpmmTiedFit> {
    validate_axis(freqs_ghz, signal, 5 + 8)?;
    let w_dom = weights.w_plus.max(weights.w_minus);
    let w_sup = weights.w_plus.min(weights.w_minus);
    if !(w_dom > 0.0) || w_sup < 0.0 {
        return Err(Error::Invalid("polarization weights must be nonnegative".into()));
    }
    let ratio = w_sup / w_dom;
    let (y, baseline) = normalize_contrast(signal)?;

    let q = freqs_ghz.len();
    let window = (q / 100).max(3) | 1;
    let ys = box_smooth(&y, window);
    let floor = lower_quartile_mean(&ys);
    let peak = (1..q - 1)
        .filter(|&i| ys[i] > ys[i - 1] && ys[i] >= ys[i + 1])
        .max_by(|&a, &b| ys[a].partial_cmp(&ys[b]).unwrap());
    let Some(peak) = peak.filter(|&i| ys[i] > floor) else {
        return Err(Error::DipDetection {
            expected: 2,
            found: 0,
        });
    };
    let df_mhz = (freqs_ghz[q - 1] - freqs_ghz[0]) / (q - 1) as f64 * 1e3;
    let hf_span = Mode::Cpmm.default_hyperfine_mhz();
    let w_meas = half_height_width(&ys, peak, floor) as f64 * df_mhz - window as f64 * df_mhz;
    let gamma0 = if w_meas > hf_span {
        0.5 * (w_meas - hf_span)
    } else {
        0.5 * w_meas
    }
    .clamp(0.25, 2.5);
    let h = (y[peak] - floor).max(1e-6);
    let a0 = 0.7 * h * gamma0 * gamma0 / (1.0 + ratio);
    // the doublet teeth have equal amplitude, so the envelope centroid is
    // the doublet center even when the argmax lands on one tooth
    let hw_ch = ((hf_span / df_mhz).ceil() as usize).max(2);
    let max_shift = 0.5 * hf_span / df_mhz + 2.0;
    let c0_pos = peak as f64
        + (centroid_refine(&ys, floor, peak, hw_ch) - peak as f64).clamp(-max_shift, max_shift);
    let start = [a0, a0, interp_freq(freqs_ghz, c0_pos), gamma0, floor.max(0.0)];

    let problem = TiedProblem {
        freqs: freqs_ghz,
        y: &y,
        ratio,
        c0: opts.template_center_ghz,
        half_mhz: 0.5 * Mode::Cpmm.default_hyperfine_mhz(),
    };
    let report = levenberg_marquardt(&problem, &start, &opts.lm);
    Ok(CpmmTiedFit {
        dominant_center_ghz: report.params[2],
        amplitudes: [report.params[0], report.params[1]],
        linewidth_mhz: report.params[3].abs(),
        offset: report.params[4],
        baseline,
        residual_rms: (report.cost / q as f64).sqrt(),
        converged: report.converged,
        iterations: report.iterations,
    })
}
