//! Depth-integrated response of a sensing layer of finite thickness,
//! in reduced coordinates: lengths in units of the standoff, detunings in
//! units of the half linewidth.
//!
//! The signal at reduced lateral position `rho` and reduced detuning `phi`
//! is the unit Lorentzian integrated through the layer,
//! `S = integral over xi in [1, 1+tau] of 1/((phi - beta_s/(rho^2+xi^2)^(3/2))^2 + 1)`,
//! where `beta_s` is the reduced source strength and `tau` the reduced
//! layer thickness. The apparent line position is the detuning that
//! maximizes `S`.

use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct ReducedProfileParams {
    /// Layer thickness over standoff; zero is the thin-layer limit.
    pub tau: f64,
    /// Source strength in half-linewidth units at unit depth.
    pub beta_s: f64,
}

impl ReducedProfileParams {
    pub fn new(tau: f64, beta_s: f64) -> Result<Self> {
        if !(tau.is_finite() && tau >= 0.0) {
            return Err(Error::Invalid(format!("reduced thickness {tau} must be nonnegative")));
        }
        if !beta_s.is_finite() {
            return Err(Error::Invalid("reduced source strength must be finite".into()));
        }
        Ok(ReducedProfileParams { tau, beta_s })
    }
}

fn simpson(fa: f64, fm: f64, fb: f64, len: f64) -> f64 {
    len / 6.0 * (fa + 4.0 * fm + fb)
}

/// One panel of adaptive Simpson with Richardson acceptance. `tol` is an
/// absolute error budget for this panel.
#[allow(clippy::too_many_arguments)]
fn adapt<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(fa, flm, fm, m - a);
    let right = simpson(fm, frm, fb, b - m);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    adapt(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + adapt(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

fn integrate<F: Fn(f64) -> f64>(f: &F, cuts: &[f64], rel_tol: f64) -> f64 {
    // first pass: plain Simpson per panel to set the error scale
    let mut coarse = 0.0;
    for w in cuts.windows(2) {
        coarse += simpson(f(w[0]), f(0.5 * (w[0] + w[1])), f(w[1]), w[1] - w[0]);
    }
    let span = cuts[cuts.len() - 1] - cuts[0];
    let tol = rel_tol * coarse.abs().max(f64::MIN_POSITIVE);
    let mut total = 0.0;
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
        let whole = simpson(fa, fm, fb, b - a);
        total += adapt(f, a, b, fa, fm, fb, whole, tol * (b - a) / span, 48);
    }
    total
}

/// Layer-integrated unit-Lorentzian signal, evaluated adaptively to 1e-8
/// relative. `tau = 0` degenerates to the integrand at the layer top.
pub fn integrated_fluorescence(rho: f64, phi: f64, p: &ReducedProfileParams) -> f64 {
    let r2 = rho * rho;
    let f = move |xi: f64| {
        let u = phi - p.beta_s / (r2 + xi * xi).powf(1.5);
        1.0 / (u * u + 1.0)
    };
    if p.tau == 0.0 {
        return f(1.0);
    }
    let (a, b) = (1.0, 1.0 + p.tau);
    // uniform panels, plus one boundary at the depth where the source term
    // crosses the requested detuning; that is where the integrand peaks
    let mut cuts: Vec<f64> = (0..=8).map(|i| a + p.tau * i as f64 / 8.0).collect();
    if phi != 0.0 && p.beta_s / phi > 0.0 {
        let w = (p.beta_s / phi).powf(2.0 / 3.0) - r2;
        if w > 0.0 {
            let xs = w.sqrt();
            if xs > a && xs < b {
                cuts.push(xs);
                cuts.sort_by(|x, y| x.partial_cmp(y).unwrap());
            }
        }
    }
    integrate(&f, &cuts, 1e-8)
}

const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Golden-section maximization on a bracket known to contain the maximum.
fn golden_max<F: Fn(f64) -> f64>(f: &F, mut a: f64, mut b: f64, iters: usize) -> f64 {
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..iters {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

fn peak_shift(rho: f64, p: &ReducedProfileParams) -> f64 {
    if p.beta_s == 0.0 {
        // the response is symmetric in detuning and peaks at zero
        return 0.0;
    }
    let span = 2.0 * p.beta_s.abs();
    let steps = 600;
    let score = |phi: f64| integrated_fluorescence(rho, phi, p);
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for i in 0..=steps {
        let phi = -span + 2.0 * span * i as f64 / steps as f64;
        let v = score(phi);
        if v > best_val {
            best_val = v;
            best = i;
        }
    }
    let step = 2.0 * span / steps as f64;
    let lo = (-span + step * (best as f64 - 1.0)).max(-span);
    let hi = (-span + step * (best as f64 + 1.0)).min(span);
    golden_max(&score, lo, hi, 40)
}

/// Apparent line position against reduced lateral distance: for each entry
/// of `rho_grid`, the detuning maximizing the layer-integrated signal. The
/// maximum is located by a coarse scan over [-2|beta_s|, 2|beta_s|]
/// followed by golden-section refinement.
pub fn peak_shift_profile(rho_grid: &[f64], p: &ReducedProfileParams) -> Vec<f64> {
    rho_grid
        .par_iter()
        .map(|&rho| peak_shift(rho, p))
        .collect()
}

/// Lateral distance at which the apparent shift falls to half its value
/// above the source. Fails when the profile is flat (`beta_s = 0`).
pub fn half_maximum_radius(p: &ReducedProfileParams) -> Result<f64> {
    let sign = if p.beta_s < 0.0 { -1.0 } else { 1.0 };
    let peak0 = sign * peak_shift(0.0, p);
    if !(peak0 > 0.0) {
        return Err(Error::Invalid(
            "shift profile has no half-maximum point".into(),
        ));
    }
    let target = 0.5 * peak0;
    let above = |rho: f64| sign * peak_shift(rho, p) > target;
    let mut lo = 0.0;
    let mut hi = 1.0;
    while above(hi) {
        lo = hi;
        hi *= 2.0;
        if hi > 64.0 {
            return Err(Error::Invalid(
                "shift profile does not halve within 64 standoffs".into(),
            ));
        }
    }
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        if above(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
