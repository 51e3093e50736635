//! Independent numerical oracles used by the integration tests.
//!
//! Everything here is deliberately implemented through a different route
//! than the library code it checks: the eigenvalue oracle goes through
//! nalgebra's iterative symmetric-QR solver on a real embedding, the
//! quadrature oracle is fixed-order Gauss-Legendre, and derivatives come
//! from central differences. Keep these routes independent; they are the
//! ground truth the fast closed-form paths are validated against.

#![allow(dead_code)]

use nalgebra::DMatrix;
use num_complex::Complex64;

/// Eigenvalues (ascending) of a 3x3 complex Hermitian matrix via the
/// iterative symmetric eigensolver on the standard 6x6 real embedding
/// [[Re, -Im], [Im, Re]]. Each eigenvalue of the Hermitian matrix shows up
/// twice in the embedding; take every second one after sorting.
pub fn eigvals3_iterative(h: &[[Complex64; 3]; 3]) -> [f64; 3] {
    let mut m = DMatrix::<f64>::zeros(6, 6);
    for i in 0..3 {
        for j in 0..3 {
            m[(i, j)] = h[i][j].re;
            m[(i + 3, j + 3)] = h[i][j].re;
            m[(i, j + 3)] = -h[i][j].im;
            m[(i + 3, j)] = h[i][j].im;
        }
    }
    let eig = m.symmetric_eigen();
    let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    [ev[0], ev[2], ev[4]]
}

/// Nodes and weights for n-point Gauss-Legendre quadrature on [-1, 1],
/// by Newton iteration on the Legendre polynomial from the standard
/// Chebyshev-based initial guess.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 2);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = (n + 1) / 2;
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Evaluate P_n(x) and P_n'(x) by upward recurrence.
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Integrate f over [a, b] with n-point Gauss-Legendre.
pub fn gl_integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let (nodes, weights) = gauss_legendre(n);
    let c = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut acc = 0.0;
    for (x, w) in nodes.iter().zip(weights.iter()) {
        acc += w * f(mid + c * x);
    }
    acc * c
}

/// Central-difference gradient of a scalar field at p.
pub fn central_gradient(f: impl Fn([f64; 3]) -> f64, p: [f64; 3], h: f64) -> [f64; 3] {
    let mut g = [0.0; 3];
    for i in 0..3 {
        let mut hi = p;
        let mut lo = p;
        hi[i] += h;
        lo[i] -= h;
        g[i] = (f(hi) - f(lo)) / (2.0 * h);
    }
    g
}

#[test]
fn gauss_legendre_exactness() {
    // n-point rule is exact for polynomials up to degree 2n-1.
    let (nodes, weights) = gauss_legendre(8);
    let int_x14: f64 = nodes
        .iter()
        .zip(weights.iter())
        .map(|(x, w)| w * x.powi(14))
        .sum();
    assert!((int_x14 - 2.0 / 15.0).abs() < 1e-14);
    let smooth = gl_integrate(|x| (1.5 * x).sin().exp(), -1.0, 2.0, 64);
    let fine = gl_integrate(|x| (1.5 * x).sin().exp(), -1.0, 2.0, 4096);
    assert!((smooth - fine).abs() < 1e-12);
}
