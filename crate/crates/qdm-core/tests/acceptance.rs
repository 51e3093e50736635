//! End-to-end checks of the full pipeline, one per release criterion.
//! Each test prints a single verdict line; run with `--nocapture` to see
//! the lines for passing tests as well.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use qdm_core::calibration::{solenoid_slope, SolenoidGeometry, Uncertain};
use qdm_core::constants::F_ZFS_GHZ;
use qdm_core::fit::estimate_temperature_shift;
use qdm_core::geom::Vec3;
use qdm_core::map::{
    bias_reversal_decompose, butterworth_highpass, fit_cpmm_pair, fit_stack, gaussian_lowpass,
    noise_floor, sensitivity_scaling, FieldMap, StackFitOptions,
};
use qdm_core::nv::{eigenvalues_hermitian3, nv_orientations, spin1_hamiltonian, Hermitian3};
use qdm_core::sim::{
    half_maximum_radius, peak_shift_profile, sample_field_map, synthesize_stack, DipoleSource,
    ReducedProfileParams, SensorGeometry, SynthesisOptions,
};
use qdm_core::spectra::{Handedness, Mode, PolarizationDrive, SpectrumParams};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn verdict(id: usize, pass: bool, detail: &str) {
    println!(
        "[acceptance {id:02}] {} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {id:02}: {detail}");
}

fn freq_axis(lo: f64, hi: f64, q: usize) -> Vec<f64> {
    (0..q)
        .map(|i| lo + (hi - lo) * i as f64 / (q - 1) as f64)
        .collect()
}

fn vmm_template() -> SpectrumParams {
    let widths = [0.62, 0.7, 0.66, 0.74, 0.6, 0.68, 0.72, 0.64];
    let depths = [0.022, 0.026, 0.02, 0.024, 0.028, 0.019, 0.023, 0.025];
    let mut amps = Vec::with_capacity(24);
    for g in 0..8 {
        let a = depths[g] * widths[g] * widths[g];
        amps.extend_from_slice(&[0.8 * a, a, 0.85 * a]);
    }
    SpectrumParams::new(Mode::Vmm, amps, vec![F_ZFS_GHZ; 8], widths.to_vec(), 0.0015).unwrap()
}

fn pmm_template() -> SpectrumParams {
    SpectrumParams::new(
        Mode::Pmm,
        vec![0.004, 0.005, 0.0042, 0.0045, 0.0052, 0.0043],
        vec![F_ZFS_GHZ, F_ZFS_GHZ],
        vec![0.6, 0.65],
        0.001,
    )
    .unwrap()
}

/// Symmetric doublet: both lines share amplitudes and width, so a field
/// negation mirrors the spectrum exactly.
fn cpmm_template() -> SpectrumParams {
    SpectrumParams::new(
        Mode::Cpmm,
        vec![0.0035, 0.0035, 0.0035, 0.0035],
        vec![F_ZFS_GHZ, F_ZFS_GHZ],
        vec![0.5, 0.5],
        0.0012,
    )
    .unwrap()
}

fn random_dir(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1.0e-3 && n <= 1.0 {
            return v.scale(1.0 / n);
        }
    }
}

#[test]
fn acceptance_01_solenoid_calibration() {
    let t0 = Instant::now();
    let geom = SolenoidGeometry::new(
        Uncertain { value: 15.5e-3, sigma: 0.05e-3 },
        Uncertain { value: 20.9e-3, sigma: 0.1e-3 },
        Uncertain { value: 0.48e-3, sigma: 0.02e-3 },
        10,
    )
    .unwrap();
    let slope = solenoid_slope(&geom);
    // T/A to nT/mA
    let nt_per_ma = slope.value * 1.0e6;
    let sigma_nt = slope.sigma * 1.0e6;
    let projected = nt_per_ma / 3.0_f64.sqrt();
    let elapsed = t0.elapsed();
    let ok = (nt_per_ma / 71.0 - 1.0).abs() < 2.0e-3
        && (sigma_nt / 0.8 - 1.0).abs() < 0.2
        && (projected / 41.0 - 1.0).abs() < 2.0e-3
        && elapsed < Duration::from_secs(1);
    verdict(
        1,
        ok,
        &format!(
            "slope {nt_per_ma:.4} nT/mA, sigma {sigma_nt:.4} nT/mA, \
             projected {projected:.4} nT/mA, {elapsed:.2?}"
        ),
    );
}

#[test]
fn acceptance_02_vector_round_trip() {
    let t0 = Instant::now();
    let template = vmm_template();
    let freqs = freq_axis(2.787, 2.953, 600);
    let bias = Vec3::new(0.25, 0.45, 0.857).normalized().scale(2.5e-3);
    let geom = SensorGeometry::new(4.0e-6, 1.0e-6, 0.5e-6, 1.5e-6, 64, 64).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(20260814);
    let mut worst_rel = 0.0f64;
    for cfg in 0..50 {
        let n_src = rng.gen_range(1..=4);
        let mut sources = Vec::with_capacity(n_src);
        for _ in 0..n_src {
            let pos = Vec3::new(
                rng.gen_range(-35.0e-6..35.0e-6),
                rng.gen_range(-35.0e-6..35.0e-6),
                rng.gen_range(-6.0e-6..-2.0e-6),
            );
            // moments sized so local Zeeman shifts stay inside the sweep
            let moment = random_dir(&mut rng).scale(rng.gen_range(1.0e-14..4.0e-14));
            sources.push(DipoleSource::new(pos, moment).unwrap());
        }
        let map = sample_field_map(&sources, &geom, bias).unwrap();
        let opts = SynthesisOptions { bias_field_t: bias, ..SynthesisOptions::default() };
        let stack = synthesize_stack(&map, Mode::Vmm, &template, None, &freqs, &opts).unwrap();
        let fitted = fit_stack(&stack, &StackFitOptions::default()).unwrap();
        for px in 0..64 * 64 {
            assert!(fitted.mask[px], "config {cfg} pixel {px} failed to fit");
            let rel = (fitted.components[2][px] - map.components[2][px]).abs()
                / map.components[2][px].abs();
            worst_rel = worst_rel.max(rel);
        }
    }
    let elapsed = t0.elapsed();
    let ok = worst_rel < 1.0e-6 && elapsed < Duration::from_secs(600);
    verdict(
        2,
        ok,
        &format!("worst relative Bz error {worst_rel:.3e} over 50 configurations, {elapsed:.2?}"),
    );
}

#[test]
fn acceptance_03_projection_linearity() {
    let axes = nv_orientations();
    let n = 21;
    let mut map = FieldMap::new_scalar(1, n, 1.5e-6);
    // axial signal 0..100 uT on top of the 1 mT bias projection
    let signals: Vec<f64> = (0..n).map(|j| 5.0e-6 * j as f64).collect();
    for (j, v) in map.components[0].iter_mut().enumerate() {
        *v = 1.0e-3 + signals[j];
    }
    let opts = SynthesisOptions {
        bias_field_t: axes.axis(0).scale(1.0e-3),
        ..SynthesisOptions::default()
    };
    let freqs = freq_axis(2.82, 2.92, 300);
    let stack = synthesize_stack(&map, Mode::Pmm, &pmm_template(), None, &freqs, &opts).unwrap();
    let fitted = fit_stack(&stack, &StackFitOptions::default()).unwrap();
    let xbar = signals.iter().sum::<f64>() / n as f64;
    let ybar = fitted.components[0].iter().sum::<f64>() / n as f64;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for j in 0..n {
        assert!(fitted.mask[j]);
        sxy += (signals[j] - xbar) * (fitted.components[0][j] - ybar);
        sxx += (signals[j] - xbar) * (signals[j] - xbar);
    }
    let slope = sxy / sxx;
    let ok = (slope - 1.0).abs() < 1.0e-4;
    verdict(3, ok, &format!("Zeeman response slope {slope:.9}"));
}

#[test]
fn acceptance_04_polarized_pair_consistency() {
    let template = cpmm_template();
    let freqs = freq_axis(2.855, 2.885, 240);
    let make = |bz: f64, h: Handedness| {
        let mut map = FieldMap::new_scalar(2, 3, 1.0e-6);
        for v in &mut map.components[0] {
            *v = bz;
        }
        let opts = SynthesisOptions {
            polarization: Some(PolarizationDrive {
                axis: Vec3::new(0.0, 0.0, 1.0),
                handedness: h,
            }),
            ..SynthesisOptions::default()
        };
        synthesize_stack(&map, Mode::Cpmm, &template, None, &freqs, &opts).unwrap()
    };
    let fit_opts = StackFitOptions::default();
    let mut worst = 0.0f64;
    for micro in [-20.0, -12.0, -4.0, 4.0, 12.0, 20.0] {
        let bz = micro * 1.0e-6;
        let pair = fit_cpmm_pair(
            &make(bz, Handedness::SigmaPlus),
            &make(bz, Handedness::SigmaMinus),
            &fit_opts,
        )
        .unwrap();
        for px in 0..6 {
            assert!(pair.mask[px], "pixel {px} at {micro} uT failed");
            worst = worst.max((pair.components[0][px] - bz).abs() / bz.abs());
        }
    }

    // negating the field produces, channel for channel, the opposite drive's
    // data; swapping the drive roles in the pair fit negates the map bitwise
    let bz = 1.3e-5;
    let plus = make(bz, Handedness::SigmaPlus);
    let minus = make(bz, Handedness::SigmaMinus);
    let mirror = make(-bz, Handedness::SigmaPlus).data == minus.data
        && make(-bz, Handedness::SigmaMinus).data == plus.data;
    let fwd = fit_cpmm_pair(&plus, &minus, &fit_opts).unwrap();
    let rev = fit_cpmm_pair(&minus, &plus, &fit_opts).unwrap();
    let negated = fwd.components[0]
        .iter()
        .zip(&rev.components[0])
        .all(|(a, b)| b.to_bits() == (-a).to_bits());

    let ok = worst < 0.01 && mirror && negated;
    verdict(
        4,
        ok,
        &format!("worst pair-fit error {worst:.3e}, mirror data {mirror}, swap negation {negated}"),
    );
}

#[test]
fn acceptance_05_noise_floor_scaling() {
    let axes = nv_orientations();
    let (m, n) = (10, 12);
    let mut map = FieldMap::new_scalar(m, n, 2.4e-6);
    for v in &mut map.components[0] {
        *v = 1.0e-3;
    }
    let freqs = freq_axis(2.82, 2.92, 160);
    // photons per pixel per second, sized for a ~20 nT floor at 1 s
    let rate = 2.57e9;
    let times = [0.01, 0.0215, 0.0464, 0.1, 0.215, 0.464, 1.0];
    let selection = vec![true; m * n];
    let fit_opts = StackFitOptions::default();
    let mut series = Vec::new();
    for (k, &t) in times.iter().enumerate() {
        let opts = SynthesisOptions {
            bias_field_t: axes.axis(0).scale(1.0e-3),
            seed: 7000 + k as u64,
            ..SynthesisOptions::default()
        };
        let stack =
            synthesize_stack(&map, Mode::Pmm, &pmm_template(), Some(rate * t), &freqs, &opts)
                .unwrap();
        let fitted = fit_stack(&stack, &fit_opts).unwrap();
        series.push((t, noise_floor(&fitted, &selection).unwrap()));
    }
    // 1 mm^2 field of view at 2.4 um pitch
    let scaling = sensitivity_scaling(&series, 1.0e-6).unwrap();
    let floor_nt = series.last().unwrap().1 * 1.0e9;
    let ratio = scaling.sensitivity_t_m_sqrt_hz / 2.0e-11;
    let ok = (scaling.slope + 0.5).abs() <= 0.05 && ratio > 1.0 / 3.0 && ratio < 3.0;
    verdict(
        5,
        ok,
        &format!(
            "noise exponent {:.3}, 1 s floor {floor_nt:.1} nT, \
             area-normalized sensitivity {:.3e} T*m/sqrt(Hz)",
            scaling.slope, scaling.sensitivity_t_m_sqrt_hz
        ),
    );
}

#[test]
fn acceptance_06_resolution_profiles() {
    let t0 = Instant::now();
    let pk0 = peak_shift_profile(&[0.0], &ReducedProfileParams::new(0.01, 1.0).unwrap())[0];
    let peak_ok = (pk0 - 1.0).abs() <= 0.01;

    let mut rh_lo = f64::INFINITY;
    let mut rh_hi = f64::NEG_INFINITY;
    for tau in [0.01, 0.1, 1.0, 10.0] {
        for beta in [0.01, 1.0, 10.0] {
            let r =
                half_maximum_radius(&ReducedProfileParams::new(tau, beta).unwrap()).unwrap();
            rh_lo = rh_lo.min(r);
            rh_hi = rh_hi.max(r);
        }
    }
    let radius_ok = rh_lo >= 1.0 && rh_hi <= 1.5;

    let mut last = f64::INFINITY;
    let mut monotonic = true;
    for tau in [0.01, 0.1, 1.0, 10.0] {
        let pk = peak_shift_profile(&[0.0], &ReducedProfileParams::new(tau, 1.0).unwrap())[0];
        monotonic &= pk < last;
        last = pk;
    }
    let elapsed = t0.elapsed();
    let ok = peak_ok && radius_ok && monotonic && elapsed < Duration::from_secs(120);
    verdict(
        6,
        ok,
        &format!(
            "on-axis peak ratio {pk0:.5} (need within 1% of 1), half radius spans \
             [{rh_lo:.4}, {rh_hi:.4}] (need within [1.0, 1.5]), \
             monotonic in thickness {monotonic}, {elapsed:.2?}"
        ),
    );
}

/// Half-max crossing position, walking from the peak in direction `step`,
/// with linear interpolation between samples.
fn crossing(row: &[f64], peak: usize, step: isize, half: f64) -> f64 {
    let mut k = peak as isize;
    loop {
        let next = k + step;
        let v = row[next as usize];
        if v < half {
            let prev = row[k as usize];
            return k as f64 + step as f64 * (prev - half) / (prev - v);
        }
        k = next;
    }
}

#[test]
fn acceptance_07_filter_transfer() {
    // smoothing: impulse response width
    let (m, n) = (33, 33);
    let mut impulse = FieldMap::new_scalar(m, n, 1.0e-6);
    impulse.components[0][16 * n + 16] = 1.0;
    let smoothed = gaussian_lowpass(&impulse, 6.0e-6).unwrap();
    let row: Vec<f64> = (0..n).map(|j| smoothed.components[0][16 * n + j]).collect();
    let half = 0.5 * row[16];
    let fwhm_px = crossing(&row, 16, 1, half) - crossing(&row, 16, -1, half);
    let fwhm_ok = (fwhm_px / 6.0 - 1.0).abs() < 0.02;

    // background removal: sinusoid gain at and below the cutoff
    let rms = |vals: &[f64]| {
        (vals.iter().map(|v| v * v).sum::<f64>() / vals.len() as f64).sqrt()
    };
    let gain = |len: usize, wavelength_px: f64, cutoff_px: f64| {
        let mut map = FieldMap::new_scalar(8, len, 1.0e-6);
        for i in 0..8 {
            for j in 0..len {
                map.components[0][i * len + j] = (2.0 * PI * j as f64 / wavelength_px).sin();
            }
        }
        let out = butterworth_highpass(&map, cutoff_px * 1.0e-6, 3).unwrap();
        rms(&out.components[0]) / rms(&map.components[0])
    };
    let g_cut = gain(128, 16.0, 16.0);
    let cutoff_ok = (g_cut * 2.0_f64.sqrt() - 1.0).abs() < 0.02;

    let g_near = gain(1024, 64.0, 8.0);
    let g_far = gain(1024, 512.0, 8.0);
    // stopband slope in dB per decade of spatial frequency
    let slope_db = 20.0 * (g_near / g_far).log10() / (512.0f64 / 64.0).log10();
    let slope_ok = (slope_db - 60.0).abs() < 6.0;

    let ok = fwhm_ok && cutoff_ok && slope_ok;
    verdict(
        7,
        ok,
        &format!(
            "impulse FWHM {fwhm_px:.4} px (want 6), cutoff gain {g_cut:.5} \
             (want {:.5}), stopband slope {slope_db:.2} dB/decade (want 60)",
            1.0 / 2.0_f64.sqrt()
        ),
    );
}

#[test]
fn acceptance_08_bias_reversal() {
    let (m, n) = (16, 16);
    // dyadic planes: sums and differences carry no rounding at all
    let mut remanent = FieldMap::new_vector(m, n, 1.0e-6);
    let mut induced = FieldMap::new_vector(m, n, 1.0e-6);
    let q = 2.0f64.powi(-40);
    for px in 0..m * n {
        for c in 0..3 {
            remanent.components[c][px] = ((px * 3 + c) as f64 - 200.0) * q;
            induced.components[c][px] = (((7 * px + 2 * c) % 151) as f64 - 60.0) * q;
        }
    }
    let mut plus = remanent.clone();
    let mut minus = remanent.clone();
    for c in 0..3 {
        for px in 0..m * n {
            plus.components[c][px] = remanent.components[c][px] + induced.components[c][px];
            minus.components[c][px] = remanent.components[c][px] - induced.components[c][px];
        }
    }
    let dec = bias_reversal_decompose(&plus, &minus, None).unwrap();
    let exact = (0..3).all(|c| {
        (0..m * n).all(|px| {
            dec.remanent.components[c][px].to_bits() == remanent.components[c][px].to_bits()
                && dec.induced.components[c][px].to_bits() == induced.components[c][px].to_bits()
        })
    });

    // arbitrary floats: recovery within machine-epsilon scale
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut ulp_ok = true;
    for _ in 0..10_000 {
        let r: f64 = rng.gen_range(-1.0e-3..1.0e-3);
        let i: f64 = rng.gen_range(-1.0e-3..1.0e-3);
        let rec = ((r + i) + (r - i)) / 2.0;
        ulp_ok &= (rec - r).abs() <= 2.0 * f64::EPSILON * (r.abs() + i.abs());
    }

    // reversal error of 1e-4 on a 1 mT bias, read off a source-free border
    let b0 = 1.0e-3;
    let eps = 1.0e-4;
    let mut plus2 = FieldMap::new_vector(m, n, 1.0e-6);
    let mut minus2 = FieldMap::new_vector(m, n, 1.0e-6);
    let mut region = vec![false; m * n];
    for i in 0..m {
        for j in 0..n {
            let px = i * n + j;
            let border = i < 2 || j < 2 || i >= m - 2 || j >= n - 2;
            region[px] = border;
            let blob = if border {
                0.0
            } else {
                let dx = j as f64 - 8.0;
                let dy = i as f64 - 8.0;
                2.0e-5 * (-(dx * dx + dy * dy) / 8.0).exp()
            };
            plus2.components[2][px] = blob + b0;
            minus2.components[2][px] = blob - b0 * (1.0 - eps);
        }
    }
    let dec2 = bias_reversal_decompose(&plus2, &minus2, Some(&region)).unwrap();
    let residual = dec2.residual_bias.unwrap();
    let residual_ok = residual[0] == 0.0
        && residual[1] == 0.0
        && residual[2].abs() < 1.0e-7
        && (residual[2] / (0.5 * eps * b0) - 1.0).abs() < 1.0e-6;

    let ok = exact && ulp_ok && residual_ok;
    verdict(
        8,
        ok,
        &format!(
            "dyadic recovery exact {exact}, float recovery within 2 eps {ulp_ok}, \
             residual bias {:.3e} T (want 5e-8, limit 1e-7)",
            residual[2]
        ),
    );
}

/// Eigenvalues through the real symmetric embedding [[Re, -Im], [Im, Re]],
/// which doubles each eigenvalue of the complex matrix.
fn reference_eigenvalues(h: &Hermitian3) -> [f64; 3] {
    let mut m = nalgebra::SMatrix::<f64, 6, 6>::zeros();
    for r in 0..3 {
        for c in 0..3 {
            m[(r, c)] = h[r][c].re;
            m[(r + 3, c + 3)] = h[r][c].re;
            m[(r, c + 3)] = -h[r][c].im;
            m[(r + 3, c)] = h[r][c].im;
        }
    }
    let mut e: Vec<f64> = nalgebra::SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
    e.sort_by(|a, b| a.partial_cmp(b).unwrap());
    [e[0], e[2], e[4]]
}

#[test]
fn acceptance_09_eigensolver_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst = 0.0f64;
    for trial in 0..100_000usize {
        let (b, d) = match trial % 10 {
            // degenerate and near-degenerate slices among generic draws
            0 => (Vec3::ZERO, F_ZFS_GHZ),
            1 => (random_dir(&mut rng).scale(1.0e-12), F_ZFS_GHZ),
            2 => (
                random_dir(&mut rng).scale(rng.gen_range(1.0e-9..1.0e-6)),
                F_ZFS_GHZ + rng.gen_range(-5.0e-3..5.0e-3),
            ),
            3 => (
                Vec3::new(rng.gen_range(-1.0e-3..1.0e-3), rng.gen_range(-1.0e-3..1.0e-3), 0.0),
                F_ZFS_GHZ,
            ),
            _ => (
                random_dir(&mut rng).scale(rng.gen_range(1.0e-7..5.0e-3)),
                F_ZFS_GHZ + rng.gen_range(-5.0e-3..5.0e-3),
            ),
        };
        let h = spin1_hamiltonian(b, d, trial % 4);
        let got = eigenvalues_hermitian3(&h);
        let want = reference_eigenvalues(&h);
        for i in 0..3 {
            worst = worst.max((got[i] - want[i]).abs());
        }
    }
    let ok = worst < 1.0e-9;
    verdict(9, ok, &format!("worst eigenvalue deviation {worst:.3e} GHz over 1e5 draws"));
}

#[test]
fn acceptance_10_temperature_shift() {
    let shifted = F_ZFS_GHZ - 742.0e-6;
    let dt = estimate_temperature_shift(&[shifted; 4], F_ZFS_GHZ);
    let ok = (dt - 10.0).abs() < 1.0e-9;
    verdict(10, ok, &format!("recovered temperature shift {dt:.12} K"));
}
