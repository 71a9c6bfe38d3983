//! 2x2 complex matrices, spectral parameters and the elementary SL(2) factors
//! (shear, dilation, rotation) that all transfer matrices are built from.

use std::f64::consts::PI;
use std::ops::Mul;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default tolerance separating elliptic, parabolic and hyperbolic traces.
pub const PARABOLIC_TOL: f64 = 1e-9;

const SINC_SERIES_CUTOFF: f64 = 1e-4;

pub type C64 = Complex64;
pub type Vec2 = [C64; 2];

#[inline]
pub fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// A 2x2 complex matrix `[[a, b], [c, d]]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mat2 {
    pub a: C64,
    pub b: C64,
    pub c: C64,
    pub d: C64,
}

impl Mat2 {
    pub const fn new(a: C64, b: C64, c: C64, d: C64) -> Self {
        Self { a, b, c, d }
    }

    pub fn real(a: f64, b: f64, c: f64, d: f64) -> Self {
        Self::new(c64(a), c64(b), c64(c), c64(d))
    }

    pub fn identity() -> Self {
        Self::real(1.0, 0.0, 0.0, 1.0)
    }

    pub fn det(&self) -> C64 {
        self.a * self.d - self.b * self.c
    }

    pub fn trace(&self) -> C64 {
        self.a + self.d
    }

    /// Inverse assuming unit determinant.
    pub fn unimodular_inverse(&self) -> Self {
        Self::new(self.d, -self.b, -self.c, self.a)
    }

    pub fn inverse(&self) -> Self {
        let det = self.det();
        Self::new(self.d / det, -self.b / det, -self.c / det, self.a / det)
    }

    pub fn apply(&self, v: &Vec2) -> Vec2 {
        [self.a * v[0] + self.b * v[1], self.c * v[0] + self.d * v[1]]
    }

    pub fn scale(&self, s: C64) -> Self {
        Self::new(self.a * s, self.b * s, self.c * s, self.d * s)
    }

    pub fn max_abs(&self) -> f64 {
        [self.a, self.b, self.c, self.d]
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    pub fn max_imag(&self) -> f64 {
        [self.a, self.b, self.c, self.d]
            .iter()
            .map(|z| z.im.abs())
            .fold(0.0, f64::max)
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self::new(
            self.a - other.a,
            self.b - other.b,
            self.c - other.c,
            self.d - other.d,
        )
    }

    /// Operator 2-norm.
    pub fn norm(&self) -> f64 {
        let fro2 = self.a.norm_sqr() + self.b.norm_sqr() + self.c.norm_sqr() + self.d.norm_sqr();
        let det = self.det().norm();
        // sigma_max^2 solves s^2 - fro2 s + |det|^2 = 0.
        let disc = (fro2 * fro2 - 4.0 * det * det).max(0.0).sqrt();
        (0.5 * (fro2 + disc)).sqrt()
    }

    /// Operator norm with respect to |(x, y)|^2 = |x|^2 + |y|^2 / |lambda|.
    pub fn weighted_norm(&self, lambda: f64) -> f64 {
        let s = lambda.abs().sqrt();
        // W M W^{-1} with W = diag(1, 1/s).
        Self::new(self.a, self.b * s, self.c / s, self.d).norm()
    }
}

impl Mul for Mat2 {
    type Output = Mat2;

    fn mul(self, r: Mat2) -> Mat2 {
        Mat2::new(
            self.a * r.a + self.b * r.c,
            self.a * r.b + self.b * r.d,
            self.c * r.a + self.d * r.c,
            self.c * r.b + self.d * r.d,
        )
    }
}

#[inline]
fn c64(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// Spectral parameter `z` together with the branch `w = sqrt(z)`, `Im w >= 0`.
///
/// For real `lambda > 0` this is `w = sqrt(lambda)`; for `lambda < 0` it is
/// `w = i sqrt(|lambda|)`, which turns rotations into their hyperbolic form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralParam {
    pub z: C64,
    pub w: C64,
}

impl SpectralParam {
    pub fn real(lambda: f64) -> Self {
        let w = if lambda >= 0.0 {
            c64(lambda.sqrt())
        } else {
            C64::new(0.0, (-lambda).sqrt())
        };
        Self { z: c64(lambda), w }
    }

    pub fn complex(z: C64) -> Self {
        if z.im == 0.0 {
            return Self::real(z.re);
        }
        let mut w = z.sqrt();
        if w.im < 0.0 {
            w = -w;
        }
        Self { z, w }
    }

    pub fn is_real(&self) -> bool {
        self.z.im == 0.0
    }

    pub fn lambda(&self) -> f64 {
        self.z.re
    }
}

/// `sin(x) / x`, continued analytically through zero.
pub fn sinc(x: C64) -> C64 {
    if x.norm() < SINC_SERIES_CUTOFF {
        let x2 = x * x;
        c64(1.0) - x2 / 6.0 + x2 * x2 / 120.0
    } else {
        x.sin() / x
    }
}

/// Shear `[[1, 0], [kappa, 1]]`: the vertex condition with potential `kappa`.
pub fn shear(kappa: C64) -> Mat2 {
    Mat2::new(c64(1.0), c64(0.0), kappa, c64(1.0))
}

/// Dilation `diag(sqrt(b), 1/sqrt(b))`.
pub fn dilation(b: f64) -> Result<Mat2> {
    if !(b > 0.0) || !b.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "dilation factor must be positive, got {b}"
        )));
    }
    let s = b.sqrt();
    Ok(Mat2::real(s, 0.0, 0.0, 1.0 / s))
}

/// Rotation `R_{p w}(w t)`: propagates `(f, f'/p)`-type data across an edge of
/// length `t` and weight `p`.
///
/// Entries are `[[cos wt, sin(wt)/(p w)], [-p w sin wt, cos wt]]`, written via
/// `sinc` so that `lambda = 0` gives `[[1, t/p], [0, 1]]` and `lambda < 0` the
/// hyperbolic form.
pub fn rotation(sp: &SpectralParam, t: f64, p: f64) -> Mat2 {
    let x = sp.w * t;
    let (cs, sn_over_w) = if x.im == 0.0 && x.re.abs() >= SINC_SERIES_CUTOFF {
        let (s, co) = sin_cos_pi(x.re / PI);
        (c64(co), c64(s) / sp.w)
    } else {
        (x.cos(), sinc(x) * t)
    };
    Mat2::new(cs, sn_over_w / p, -sp.z * sn_over_w * p, cs)
}

/// `(sin(pi r), cos(pi r))` with exact zeros at integer and half-integer `r`.
pub fn sin_cos_pi(r: f64) -> (f64, f64) {
    let n = (2.0 * r).round();
    let f = r - 0.5 * n;
    let (s, co) = (PI * f).sin_cos();
    match (n as i64).rem_euclid(4) {
        0 => (s, co),
        1 => (co, -s),
        2 => (-s, -co),
        _ => (-co, s),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixClass {
    Elliptic,
    Parabolic,
    Hyperbolic,
}

/// Classify a real unimodular matrix by its trace.
pub fn classify(m: &Mat2, tol: f64) -> Result<MatrixClass> {
    let scale = m.max_abs().max(1.0);
    let det_defect = (m.det() - c64(1.0)).norm();
    let imag = m.max_imag();
    if det_defect > tol * scale * scale || imag > tol * scale {
        return Err(Error::NotRealUnimodular { det_defect, imag });
    }
    let t = m.trace().re.abs();
    Ok(if (t - 2.0).abs() <= tol {
        MatrixClass::Parabolic
    } else if t < 2.0 {
        MatrixClass::Elliptic
    } else {
        MatrixClass::Hyperbolic
    })
}

/// Projective action `m -> (c + d m) / (a + b m)` on the ratio `m = f'/f`.
pub fn mobius(m: &Mat2, x: C64) -> Result<C64> {
    let den = m.a + m.b * x;
    let scale = m.a.norm() + m.b.norm() * x.norm();
    if den.norm() <= f64::EPSILON * scale || den.norm() == 0.0 {
        return Err(Error::MobiusPole { m: x });
    }
    Ok((m.c + m.d * x) / den)
}

/// Eigenvectors of a 2x2 matrix. A scalar matrix returns `None` (every vector
/// is an eigenvector); a Jordan block returns a single vector.
pub fn eigenvectors(m: &Mat2) -> Option<Vec<Vec2>> {
    let scale = m.max_abs().max(f64::MIN_POSITIVE);
    if m.b.norm() <= 1e-14 * scale && m.c.norm() <= 1e-14 * scale && (m.a - m.d).norm() <= 1e-14 * scale
    {
        return None;
    }
    let tr = m.trace();
    let disc = (tr * tr - m.det() * 4.0).sqrt();
    let taus = [(tr + disc) * 0.5, (tr - disc) * 0.5];
    let mut out: Vec<Vec2> = Vec::with_capacity(2);
    for tau in taus {
        let v1 = [m.b, tau - m.a];
        let v2 = [tau - m.d, m.c];
        let n1 = v1[0].norm_sqr() + v1[1].norm_sqr();
        let n2 = v2[0].norm_sqr() + v2[1].norm_sqr();
        let v = if n1 >= n2 { v1 } else { v2 };
        let n = n1.max(n2).sqrt();
        let v = [v[0] / n, v[1] / n];
        if !out.iter().any(|u| collinear(u, &v, 1e-10)) {
            out.push(v);
        }
    }
    Some(out)
}

fn collinear(u: &Vec2, v: &Vec2, tol: f64) -> bool {
    let cross = u[0] * v[1] - u[1] * v[0];
    let nu = (u[0].norm_sqr() + u[1].norm_sqr()).sqrt();
    let nv = (v[0].norm_sqr() + v[1].norm_sqr()).sqrt();
    cross.norm() <= tol * nu * nv
}

/// Whether `a` and `b` share an eigenvector (up to `tol` in the normalised
/// cross product).
pub fn common_eigenvector_test(a: &Mat2, b: &Mat2, tol: f64) -> bool {
    let (Some(ea), Some(eb)) = (eigenvectors(a), eigenvectors(b)) else {
        return true;
    };
    ea.iter().any(|u| eb.iter().any(|v| collinear(u, v, tol)))
}

#[cfg(test)]
mod tests {

    #[test]
    fn sin_cos_pi_is_exact_on_the_lattice() {
        for k in -6..=6 {
            let (s, c) = sin_cos_pi(k as f64);
            assert_eq!(s, 0.0);
            assert_eq!(c.abs(), 1.0);
            let (s, c) = sin_cos_pi(k as f64 + 0.5);
            assert_eq!(c, 0.0);
            assert_eq!(s.abs(), 1.0);
        }
        for r in [0.1, 0.37, 1.23, -2.71, 10.9] {
            let (s, c) = sin_cos_pi(r);
            assert!((s - (PI * r).sin()).abs() < 1e-14 && (c - (PI * r).cos()).abs() < 1e-14);
        }
    }
    use super::*;

    fn close(a: C64, b: f64, tol: f64) -> bool {
        (a - c64(b)).norm() <= tol
    }

    #[test]
    fn rotation_lambda_zero_is_unipotent() {
        let r = rotation(&SpectralParam::real(0.0), 0.5, 2.0);
        assert!(close(r.a, 1.0, 1e-15) && close(r.b, 0.25, 1e-15));
        assert!(close(r.c, 0.0, 1e-15) && close(r.d, 1.0, 1e-15));
    }

    #[test]
    fn rotation_negative_lambda_is_hyperbolic_and_real() {
        let mu: f64 = 1.5;
        let r = rotation(&SpectralParam::real(-mu * mu), 0.7, 1.0);
        let phi = mu * 0.7;
        assert_eq!(r.max_imag(), 0.0);
        assert!(close(r.a, phi.cosh(), 1e-13));
        assert!(close(r.b, phi.sinh() / mu, 1e-13));
        assert!(close(r.c, mu * phi.sinh(), 1e-13));
    }

    #[test]
    fn rotation_unit_energy_quarter_turn() {
        let r = rotation(&SpectralParam::real(1.0), PI / 2.0, 1.0);
        assert!(close(r.a, 0.0, 1e-15) && close(r.b, 1.0, 1e-15));
        assert!(close(r.c, -1.0, 1e-15) && close(r.d, 0.0, 1e-15));
    }

    #[test]
    fn sinc_is_smooth_across_cutoff() {
        let x = c64(SINC_SERIES_CUTOFF);
        let series = c64(1.0) - x * x / 6.0;
        assert!((sinc(x * 1.0000001) - series).norm() < 1e-12);
    }

    #[test]
    fn spectral_param_branch() {
        let sp = SpectralParam::complex(C64::new(-1.0, -1e-300));
        assert!(sp.w.im > 0.0);
        let sp = SpectralParam::complex(C64::new(4.0, 1e-3));
        assert!(sp.w.re > 0.0 && sp.w.im > 0.0);
    }

    #[test]
    fn classify_examples() {
        let r = rotation(&SpectralParam::real(1.0), 1.0, 1.0);
        assert_eq!(classify(&r, PARABOLIC_TOL).unwrap(), MatrixClass::Elliptic);
        assert_eq!(classify(&shear(c64(3.0)), PARABOLIC_TOL).unwrap(), MatrixClass::Parabolic);
        assert_eq!(
            classify(&dilation(4.0).unwrap(), PARABOLIC_TOL).unwrap(),
            MatrixClass::Hyperbolic
        );
        assert!(classify(&Mat2::real(2.0, 0.0, 0.0, 2.0), PARABOLIC_TOL).is_err());
    }

    #[test]
    fn mobius_pole() {
        let m = Mat2::real(0.0, 1.0, -1.0, 0.0);
        assert!(mobius(&m, c64(0.0)).is_err());
        let d = dilation(4.0).unwrap();
        assert!(close(mobius(&d, c64(1.0)).unwrap(), 0.25, 1e-15));
    }

    #[test]
    fn dilation_rejects_nonpositive() {
        assert!(dilation(0.0).is_err());
        assert!(dilation(-1.0).is_err());
    }

    #[test]
    fn common_eigenvector_examples() {
        let r1 = rotation(&SpectralParam::real(1.0), 1.0, 1.0);
        let r2 = rotation(&SpectralParam::real(4.0), 1.0, 1.0);
        assert!(!common_eigenvector_test(&r1, &r2, 1e-9));
        // Both fix (0, 1).
        assert!(common_eigenvector_test(&shear(c64(1.0)), &dilation(2.0).unwrap(), 1e-9));
        assert!(common_eigenvector_test(&Mat2::identity(), &r1, 1e-9));
    }

    #[test]
    fn weighted_norm_of_rotation_is_one() {
        let lam = 7.3;
        let r = rotation(&SpectralParam::real(lam), 0.83, 1.0);
        assert!((r.weighted_norm(lam) - 1.0).abs() < 1e-13);
    }
}
