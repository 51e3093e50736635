//! Solenoid-based absolute field calibration: on-axis coil field
//! prediction with first-order uncertainty propagation, and linear
//! regression of measured calibration curves against the prediction.

use crate::constants::MU_0;
use crate::error::{Error, Result};

/// Fractional accuracy of the calibration current source. Enters the
/// expected-slope uncertainty in quadrature with the geometric terms.
pub const CURRENT_ACCURACY_FRACTION: f64 = 0.006;

/// A scalar with a one-sigma uncertainty attached.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Uncertain {
    pub value: f64,
    pub sigma: f64,
}

impl Uncertain {
    fn valid_length(&self) -> bool {
        self.value.is_finite() && self.value > 0.0 && self.sigma.is_finite() && self.sigma >= 0.0
    }
}

/// Stack of identical circular loops on a common axis. `h0_m` is the
/// distance from the sensing plane to the nearest loop; loop `k` sits at
/// `h0 + k*delta_h`.
#[derive(Clone, Debug)]
pub struct SolenoidGeometry {
    pub radius_a_m: Uncertain,
    pub h0_m: Uncertain,
    pub delta_h_m: Uncertain,
    pub n_loops: usize,
}

impl SolenoidGeometry {
    pub fn new(
        radius_a_m: Uncertain,
        h0_m: Uncertain,
        delta_h_m: Uncertain,
        n_loops: usize,
    ) -> Result<Self> {
        if !radius_a_m.valid_length() || !h0_m.valid_length() || !delta_h_m.valid_length() {
            return Err(Error::Invalid(
                "solenoid lengths must be positive and finite with nonnegative sigma".into(),
            ));
        }
        if n_loops == 0 {
            return Err(Error::Invalid("solenoid needs at least one loop".into()));
        }
        Ok(SolenoidGeometry {
            radius_a_m,
            h0_m,
            delta_h_m,
            n_loops,
        })
    }
}

/// Per-loop slope dB/dI at axial distance `h`:
/// mu0 a^2 / (2 (a^2 + h^2)^{3/2}).
fn loop_slope(radius_a_m: f64, h_m: f64) -> f64 {
    let a2 = radius_a_m * radius_a_m;
    let r2 = a2 + h_m * h_m;
    MU_0 * a2 / (2.0 * r2 * r2.sqrt())
}

/// On-axis field of a single current loop.
pub fn loop_field_on_axis(radius_a_m: f64, h_m: f64, current_a: f64) -> f64 {
    assert!(
        radius_a_m.is_finite() && radius_a_m > 0.0,
        "loop radius must be positive"
    );
    loop_slope(radius_a_m, h_m) * current_a
}

/// Field-per-current slope of the whole coil with its first-order
/// geometric uncertainty: partial derivatives with respect to the radius,
/// the nearest-loop distance, and the loop spacing, each scaled by its
/// sigma and combined in quadrature.
pub fn solenoid_slope(geom: &SolenoidGeometry) -> Uncertain {
    let a = geom.radius_a_m.value;
    let a2 = a * a;
    let mut slope = 0.0;
    let mut da = 0.0;
    let mut dh0 = 0.0;
    let mut ddh = 0.0;
    for k in 0..geom.n_loops {
        let h = geom.h0_m.value + k as f64 * geom.delta_h_m.value;
        let r2 = a2 + h * h;
        let inv32 = 1.0 / (r2 * r2.sqrt());
        let inv52 = inv32 / r2;
        slope += loop_slope(a, h);
        da += MU_0 / 2.0 * (2.0 * a * inv32 - 3.0 * a2 * a * inv52);
        let dh = -1.5 * MU_0 * a2 * h * inv52;
        dh0 += dh;
        ddh += dh * k as f64;
    }
    let terms = [
        da * geom.radius_a_m.sigma,
        dh0 * geom.h0_m.sigma,
        ddh * geom.delta_h_m.sigma,
    ];
    Uncertain {
        value: slope,
        sigma: terms.iter().map(|t| t * t).sum::<f64>().sqrt(),
    }
}

/// Predicted on-axis field at `current_a`, with the propagated geometric
/// uncertainty. Strictly linear in the current.
pub fn solenoid_field(geom: &SolenoidGeometry, current_a: f64) -> Uncertain {
    assert!(current_a.is_finite(), "current must be finite");
    let slope = solenoid_slope(geom);
    Uncertain {
        value: slope.value * current_a,
        sigma: slope.sigma * current_a.abs(),
    }
}

/// Measured calibration points with their ordinary-least-squares line and
/// the coil prediction they are judged against. `expected_slope.sigma`
/// already includes the current-source accuracy term.
#[derive(Clone, Debug)]
pub struct CalibrationCurve {
    /// (current in amperes, measured field in tesla)
    pub points: Vec<(f64, f64)>,
    pub fit_slope: Uncertain,
    pub fit_intercept: Uncertain,
    pub expected_slope: Uncertain,
    pub residual_rms_t: f64,
}

impl CalibrationCurve {
    /// Measured slope over expected slope, with both uncertainties
    /// combined first-order.
    pub fn normalized_slope(&self) -> Uncertain {
        let e = self.expected_slope.value;
        let ratio = self.fit_slope.value / e;
        let from_fit = self.fit_slope.sigma / e;
        let from_expected = self.fit_slope.value * self.expected_slope.sigma / (e * e);
        Uncertain {
            value: ratio,
            sigma: (from_fit * from_fit + from_expected * from_expected).sqrt(),
        }
    }

    /// True when the normalized slope sits within `k_sigma` combined
    /// standard deviations of unity.
    pub fn consistent_with_expected(&self, k_sigma: f64) -> bool {
        let norm = self.normalized_slope();
        (norm.value - 1.0).abs() <= k_sigma * norm.sigma
    }
}

/// Ordinary least-squares line through measured (current, field) points,
/// with standard errors from the residual scatter. `expected_slope` is the
/// coil prediction with its geometric sigma; the current-source accuracy
/// joins it in quadrature.
pub fn fit_calibration(
    points: &[(f64, f64)],
    expected_slope: Uncertain,
) -> Result<CalibrationCurve> {
    if points.len() < 3 {
        return Err(Error::Invalid(
            "calibration fit needs at least three points".into(),
        ));
    }
    if points.iter().any(|(i, b)| !i.is_finite() || !b.is_finite()) {
        return Err(Error::Invalid("calibration points must be finite".into()));
    }
    if !expected_slope.value.is_finite()
        || expected_slope.value == 0.0
        || !expected_slope.sigma.is_finite()
        || expected_slope.sigma < 0.0
    {
        return Err(Error::Invalid(
            "expected slope must be finite and nonzero with nonnegative sigma".into(),
        ));
    }
    let n = points.len() as f64;
    let x_mean = points.iter().map(|(x, _)| x).sum::<f64>() / n;
    let y_mean = points.iter().map(|(_, y)| y).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for &(x, y) in points {
        sxx += (x - x_mean) * (x - x_mean);
        sxy += (x - x_mean) * (y - y_mean);
    }
    if !(sxx > 0.0) {
        return Err(Error::Invalid(
            "calibration currents are degenerate: no spread along the current axis".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = y_mean - slope * x_mean;
    let ssr: f64 = points
        .iter()
        .map(|&(x, y)| {
            let r = y - slope * x - intercept;
            r * r
        })
        .sum();
    let s2 = ssr / (n - 2.0);
    let combined = (expected_slope.sigma * expected_slope.sigma
        + (CURRENT_ACCURACY_FRACTION * expected_slope.value)
            * (CURRENT_ACCURACY_FRACTION * expected_slope.value))
        .sqrt();
    Ok(CalibrationCurve {
        points: points.to_vec(),
        fit_slope: Uncertain {
            value: slope,
            sigma: (s2 / sxx).sqrt(),
        },
        fit_intercept: Uncertain {
            value: intercept,
            sigma: (s2 * (1.0 / n + x_mean * x_mean / sxx)).sqrt(),
        },
        expected_slope: Uncertain {
            value: expected_slope.value,
            sigma: combined,
        },
        residual_rms_t: (ssr / n).sqrt(),
    })
}
