//! Ground-state spin model for the four defect orientations.
//!
//! Everything here works in GHz and tesla. The orientation set is fixed to a
//! (100)-cut sample, so all four axes make the same angle with the optical
//! axis and a uniform z field splits all orientations identically.

use num_complex::Complex64;

use crate::constants::GAMMA_GHZ_PER_T;
use crate::geom::Vec3;

/// Right-handed orthonormal frame attached to one defect axis.
///
/// `e1 x e2 == axis`. The transverse pair is an arbitrary gauge: observables
/// derived from the Hamiltonian must not depend on the choice.
#[derive(Clone, Copy, Debug)]
pub struct NvFrame {
    pub axis: Vec3,
    pub e1: Vec3,
    pub e2: Vec3,
}

impl NvFrame {
    /// Frame for `axis` with a deterministic transverse basis.
    pub fn from_axis(axis: Vec3) -> Self {
        let u = axis.normalized();
        let mut e1 = {
            let seed = Vec3::new(1.0, 0.0, 0.0);
            seed - u.scale(seed.dot(u))
        };
        if e1.norm() < 1e-8 {
            let seed = Vec3::new(0.0, 1.0, 0.0);
            e1 = seed - u.scale(seed.dot(u));
        }
        let e1 = e1.normalized();
        let e2 = u.cross(e1);
        NvFrame { axis: u, e1, e2 }
    }
}

/// The four tetrahedral axes with their transverse frames.
#[derive(Clone, Copy, Debug)]
pub struct NvOrientations {
    frames: [NvFrame; 4],
}

impl NvOrientations {
    pub fn axis(&self, k: usize) -> Vec3 {
        self.frames[k].axis
    }

    pub fn frame(&self, k: usize) -> &NvFrame {
        &self.frames[k]
    }
}

/// Orientation set for a (100)-cut sample.
///
/// Axes 0 and 1 span the xz plane, axes 2 and 3 the yz plane; within each
/// pair the axes are separated by the tetrahedral angle (dot product -1/3)
/// and every axis has z component 1/sqrt(3).
pub fn nv_orientations() -> NvOrientations {
    let s23 = (2.0f64 / 3.0).sqrt();
    let s13 = (1.0f64 / 3.0).sqrt();
    let axes = [
        Vec3::new(-s23, 0.0, s13),
        Vec3::new(s23, 0.0, s13),
        Vec3::new(0.0, s23, s13),
        Vec3::new(0.0, -s23, s13),
    ];
    NvOrientations {
        frames: axes.map(NvFrame::from_axis),
    }
}

/// Field projections onto the four axes, tesla.
pub fn projected_field(b: Vec3) -> [f64; 4] {
    let set = nv_orientations();
    [
        b.dot(set.axis(0)),
        b.dot(set.axis(1)),
        b.dot(set.axis(2)),
        b.dot(set.axis(3)),
    ]
}

/// Dense Hermitian 3x3, row major.
pub type Hermitian3 = [[Complex64; 3]; 3];

/// Spin-1 Hamiltonian `d S3^2 + gamma (b1 S1 + b2 S2 + b3 S3)` in GHz,
/// written in the `|+1>, |0>, |-1>` basis of the given frame.
pub fn spin1_hamiltonian_in_frame(b: Vec3, d_ghz: f64, frame: &NvFrame) -> Hermitian3 {
    let g1 = GAMMA_GHZ_PER_T * b.dot(frame.e1);
    let g2 = GAMMA_GHZ_PER_T * b.dot(frame.e2);
    let g3 = GAMMA_GHZ_PER_T * b.dot(frame.axis);
    let r = std::f64::consts::FRAC_1_SQRT_2;
    // raising/lowering coupling (g1 S1 + g2 S2) has equal $|+1><0|$ and
    // $|0><-1|$ matrix elements
    let t = Complex64::new(g1 * r, -g2 * r);
    let zero = Complex64::new(0.0, 0.0);
    [
        [Complex64::new(d_ghz + g3, 0.0), t, zero],
        [t.conj(), zero, t],
        [zero, t.conj(), Complex64::new(d_ghz - g3, 0.0)],
    ]
}

/// Hamiltonian for orientation `k` of the standard set.
pub fn spin1_hamiltonian(b: Vec3, d_ghz: f64, k: usize) -> Hermitian3 {
    spin1_hamiltonian_in_frame(b, d_ghz, nv_orientations().frame(k))
}

/// The eight resonance lines for a uniform field, axis major with the lower
/// branch of each orientation first: `[f0-, f0+, f1-, f1+, ...]` in GHz.
pub fn resonance_frequencies(b: Vec3, d_ghz: &[f64; 4]) -> [f64; 8] {
    let set = nv_orientations();
    let mut out = [0.0; 8];
    for k in 0..4 {
        let h = spin1_hamiltonian_in_frame(b, d_ghz[k], set.frame(k));
        let e = eigenvalues_hermitian3(&h);
        out[2 * k] = e[1] - e[0];
        out[2 * k + 1] = e[2] - e[0];
    }
    out
}

type C3 = [Complex64; 3];

/// Eigenvalues of a Hermitian 3x3 matrix, ascending.
///
/// The trigonometric closed form alone loses half the significant digits
/// near a degenerate pair (the acos branch point), which is exactly the
/// regime of a weak transverse field. So the closed form is only used to
/// locate the best-isolated extreme eigenvalue; its eigenvector then
/// deflates the matrix and the remaining pair comes from the stable 2x2
/// quadratic. The isolated root of a traceless matrix with fixed invariant
/// `tr(B^2) = 6` has gap at least sqrt(3), so every step stays
/// well conditioned and the result holds near machine epsilon even at exact
/// degeneracies.
pub fn eigenvalues_hermitian3(h: &Hermitian3) -> [f64; 3] {
    let q = (h[0][0].re + h[1][1].re + h[2][2].re) / 3.0;
    let off = h[0][1].norm_sqr() + h[0][2].norm_sqr() + h[1][2].norm_sqr();
    let p2 = (h[0][0].re - q).powi(2)
        + (h[1][1].re - q).powi(2)
        + (h[2][2].re - q).powi(2)
        + 2.0 * off;
    if p2 < 1e-30 * (q * q).max(1.0) {
        return [q, q, q];
    }
    let p = (p2 / 6.0).sqrt();
    let inv_p = 1.0 / p;

    // B = (H - q I) / p: traceless, tr(B^2) = 6
    let mut b = [[Complex64::new(0.0, 0.0); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            b[i][j] = h[i][j] * inv_p;
        }
        b[i][i] -= q * inv_p;
    }

    let r = (0.5 * det3_re(&b)).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let hi = 2.0 * phi.cos();
    let lo = 2.0 * (phi + 2.0 * std::f64::consts::FRAC_PI_3).cos();
    let mid = -hi - lo;
    let beta = if mid - lo >= hi - mid { lo } else { hi };

    // eigenvector of the isolated root: largest cross product of rows of
    // (B - beta I); complex cross products are bilinear, not conjugated
    let mut c = b;
    for i in 0..3 {
        c[i][i] -= beta;
    }
    let cands = [
        cross(&c[0], &c[1]),
        cross(&c[1], &c[2]),
        cross(&c[2], &c[0]),
    ];
    let mut v = cands[0];
    let mut best = norm_sqr3(&cands[0]);
    for cand in &cands[1..] {
        let n = norm_sqr3(cand);
        if n > best {
            best = n;
            v = *cand;
        }
    }
    if best < 1e-28 {
        // unreachable for a valid Hermitian input; keep the raw closed form
        return [q + p * lo, q + p * mid, q + p * hi];
    }
    let v = scaled(&v, 1.0 / best.sqrt());
    let beta = dotc(&v, &matvec(&b, &v)).re;

    // orthonormal complement seeded by the coordinate axes least aligned
    // with v (residual norm stays >= 1/sqrt(2))
    let mags = [v[0].norm_sqr(), v[1].norm_sqr(), v[2].norm_sqr()];
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| mags[a].partial_cmp(&mags[b]).unwrap());
    let w1 = orthonormalize(unit(idx[0]), &[v]);
    let w2 = orthonormalize(unit(idx[1]), &[v, w1]);

    let m11 = dotc(&w1, &matvec(&b, &w1)).re;
    let m22 = dotc(&w2, &matvec(&b, &w2)).re;
    let m12 = dotc(&w1, &matvec(&b, &w2));
    let avg = 0.5 * (m11 + m22);
    let delta = (0.5 * (m11 - m22)).hypot(m12.norm());

    let mut out = [beta, avg - delta, avg + delta];
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    [q + p * out[0], q + p * out[1], q + p * out[2]]
}

fn det3_re(m: &[[Complex64; 3]; 3]) -> f64 {
    let d = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    d.re
}

fn cross(a: &C3, b: &C3) -> C3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm_sqr3(v: &C3) -> f64 {
    v[0].norm_sqr() + v[1].norm_sqr() + v[2].norm_sqr()
}

fn scaled(v: &C3, s: f64) -> C3 {
    [v[0] * s, v[1] * s, v[2] * s]
}

fn matvec(m: &[[Complex64; 3]; 3], v: &C3) -> C3 {
    let mut out = [Complex64::new(0.0, 0.0); 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i] += m[i][j] * v[j];
        }
    }
    out
}

/// Sesquilinear inner product, conjugating the first argument.
fn dotc(a: &C3, b: &C3) -> Complex64 {
    a[0].conj() * b[0] + a[1].conj() * b[1] + a[2].conj() * b[2]
}

fn unit(i: usize) -> C3 {
    let mut v = [Complex64::new(0.0, 0.0); 3];
    v[i] = Complex64::new(1.0, 0.0);
    v
}

/// Gram-Schmidt step against already-normalized vectors.
fn orthonormalize(mut x: C3, against: &[C3]) -> C3 {
    for a in against {
        let c = dotc(a, &x);
        for i in 0..3 {
            x[i] -= a[i] * c;
        }
    }
    scaled(&x, 1.0 / norm_sqr3(&x).sqrt())
}
