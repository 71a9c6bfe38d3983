//! Log-renormalised transfer-matrix cocycles: Lyapunov exponents, the
//! positivity certificate and the contracting (Oseledets) direction.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{split_seed, Model, OmegaStream, TransferFamily};
use crate::sl2::{c, classify, common_eigenvector_test, Mat2, MatrixClass, SpectralParam, Vec2, C64, PARABOLIC_TOL};

pub const MIN_STEPS: usize = 1000;
const EIGEN_TOL: f64 = 1e-8;

/// Identifies the realisation a trajectory was computed from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryKey {
    pub z: C64,
    pub seed: u64,
    pub fingerprint: u64,
}

impl TrajectoryKey {
    pub fn new(z: C64, omega: &OmegaStream) -> Self {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in &omega.values {
            h ^= v.to_bits();
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        Self {
            z,
            seed: omega.seed,
            fingerprint: h,
        }
    }
}

/// Boundary vectors `F(k) = exp(log_scale[k]) * unit[k]`, `k = 0..=n`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientTrajectory {
    pub unit: Vec<Vec2>,
    pub log_scale: Vec<f64>,
    pub key: Option<TrajectoryKey>,
}

/// `(sin theta, cos theta)`.
pub fn direction(theta: f64) -> Vec2 {
    [c(theta.sin()), c(theta.cos())]
}

fn vnorm(v: &Vec2) -> f64 {
    (v[0].norm_sqr() + v[1].norm_sqr()).sqrt()
}

impl CoefficientTrajectory {
    pub fn from_direction(theta0: f64) -> Self {
        Self::from_vector(direction(theta0))
    }

    pub fn from_vector(v: Vec2) -> Self {
        let n = vnorm(&v);
        Self {
            unit: vec![[v[0] / n, v[1] / n]],
            log_scale: vec![n.ln()],
            key: None,
        }
    }

    /// Number of steps taken.
    pub fn steps(&self) -> usize {
        self.unit.len() - 1
    }

    pub fn last(&self) -> (Vec2, f64) {
        (*self.unit.last().expect("nonempty"), *self.log_scale.last().expect("nonempty"))
    }

    pub fn value(&self, k: usize) -> Vec2 {
        let s = self.log_scale[k].exp();
        [self.unit[k][0] * s, self.unit[k][1] * s]
    }

    pub fn log_norms(&self) -> &[f64] {
        &self.log_scale
    }
}

/// Apply one transfer matrix and renormalise.
pub fn cocycle_step(m: &Mat2, traj: &mut CoefficientTrajectory) {
    let (u, s) = traj.last();
    let v = m.apply(&u);
    let n = vnorm(&v);
    traj.unit.push([v[0] / n, v[1] / n]);
    traj.log_scale.push(s + n.ln());
}

/// Growth of `|U(n) v|` without storing the path; returns `ln |U(n) v|`.
fn run_growth<I: Iterator<Item = Mat2>>(mats: I, mut v: Vec2) -> f64 {
    let mut log = 0.0;
    let n0 = vnorm(&v);
    v = [v[0] / n0, v[1] / n0];
    log += n0.ln();
    for m in mats {
        let w = m.apply(&v);
        let n = vnorm(&w);
        log += n.ln();
        v = [w[0] / n, w[1] / n];
    }
    log
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovEstimate {
    pub lambda: f64,
    pub gamma: f64,
    pub stderr: f64,
    pub n: usize,
    pub replicas: usize,
    pub per_replica: Vec<f64>,
    /// Replicas whose start vector decayed (the contracting direction); their
    /// decay rate is reported with the sign flipped.
    pub contracting_starts: usize,
}

fn summarize(lambda: f64, n: usize, rates: Vec<f64>) -> LyapunovEstimate {
    let contracting_starts = rates.iter().filter(|r| **r < 0.0).count();
    let per_replica: Vec<f64> = rates.into_iter().map(f64::abs).collect();
    let r = per_replica.len();
    let mean = per_replica.iter().sum::<f64>() / r as f64;
    let stderr = if r > 1 {
        let var = per_replica.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (r - 1) as f64;
        (var / r as f64).sqrt()
    } else {
        0.0
    };
    LyapunovEstimate {
        lambda,
        gamma: mean,
        stderr,
        n,
        replicas: r,
        per_replica,
        contracting_starts,
    }
}

fn check_counts(n: usize, replicas: usize) -> Result<()> {
    if n < MIN_STEPS {
        return Err(Error::InvalidParameter(format!("need n >= {MIN_STEPS} steps, got {n}")));
    }
    if replicas < 1 {
        return Err(Error::InvalidParameter("need at least one replica".into()));
    }
    Ok(())
}

/// Seeded options shared by the exponent estimators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaOptions {
    pub n: usize,
    pub replicas: usize,
    pub seed: u64,
    pub theta0: f64,
}

impl GammaOptions {
    pub fn new(n: usize, replicas: usize, seed: u64) -> Self {
        Self {
            n,
            replicas,
            seed,
            theta0: 0.0,
        }
    }
}

fn forward_rates(model: &Model, family: &TransferFamily, opts: &GammaOptions, seed_of: impl Fn(u64) -> u64 + Sync) -> Vec<f64> {
    (0..opts.replicas as u64)
        .into_par_iter()
        .map(|r| {
            let mats = model.stream(seed_of(r)).take(opts.n).map(|w| family.matrix(w));
            run_growth(mats, direction(opts.theta0)) / opts.n as f64
        })
        .collect()
}

/// `gamma(lambda) ~ (1/n) ln |U(n) (sin theta0, cos theta0)|`, averaged over
/// independent replicas.
pub fn estimate_gamma(model: &Model, lambda: f64, opts: GammaOptions) -> Result<LyapunovEstimate> {
    check_counts(opts.n, opts.replicas)?;
    let family = model.at(SpectralParam::real(lambda))?;
    let rates = forward_rates(model, &family, &opts, |r| split_seed(opts.seed, r));
    Ok(summarize(lambda, opts.n, rates))
}

/// One row of a Lyapunov sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaPoint {
    pub lambda: f64,
    pub estimate: Option<LyapunovEstimate>,
    pub certified: bool,
    pub exceptional: bool,
}

/// Exponent estimates over a grid of energies; exceptional energies are
/// flagged rather than aborting the sweep.
pub fn gamma_curve(model: &Model, lambdas: &[f64], opts: GammaOptions, nprobe: usize) -> Result<Vec<GammaPoint>> {
    check_counts(opts.n, opts.replicas)?;
    lambdas
        .iter()
        .enumerate()
        .map(|(i, &lambda)| {
            let local = GammaOptions {
                seed: split_seed(opts.seed, i as u64),
                ..opts
            };
            match estimate_gamma(model, lambda, local) {
                Ok(est) => {
                    let certified = positivity_criterion(model, lambda, nprobe)?.certified;
                    Ok(GammaPoint {
                        lambda,
                        estimate: Some(est),
                        certified,
                        exceptional: false,
                    })
                }
                Err(Error::ExceptionalEnergy { .. }) => Ok(GammaPoint {
                    lambda,
                    estimate: None,
                    certified: false,
                    exceptional: true,
                }),
                Err(e) => Err(e),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositivityReason {
    /// Two elliptic matrices without a common eigenvector.
    EllipticPair,
    /// An elliptic and a hyperbolic matrix.
    EllipticHyperbolic,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PositivityCertificate {
    pub certified: bool,
    pub reason: PositivityReason,
    pub witnesses: Option<(f64, f64)>,
    pub classes: Vec<(f64, MatrixClass)>,
}

/// Sufficient condition for `gamma(lambda) > 0`: among `nprobe` parameters
/// spanning the support (endpoints included), find two transfer matrices
/// without a common eigenvector, one of them elliptic.
pub fn positivity_criterion(model: &Model, lambda: f64, nprobe: usize) -> Result<PositivityCertificate> {
    let (t0, t1) = model.interval();
    let probes: Vec<f64> = if nprobe <= 1 || t0 == t1 {
        vec![t0]
    } else {
        (0..nprobe)
            .map(|k| t0 + (t1 - t0) * k as f64 / (nprobe - 1) as f64)
            .collect()
    };
    let family = model.at(SpectralParam::real(lambda))?;
    let mats: Vec<Mat2> = probes.iter().map(|&w| family.matrix(w)).collect();
    let classes: Vec<(f64, MatrixClass)> = probes
        .iter()
        .zip(&mats)
        .map(|(&w, m)| classify(m, PARABOLIC_TOL).map(|k| (w, k)))
        .collect::<Result<_>>()?;
    for i in 0..mats.len() {
        for j in i + 1..mats.len() {
            let (ci, cj) = (classes[i].1, classes[j].1);
            let reason = match (ci, cj) {
                (MatrixClass::Elliptic, MatrixClass::Elliptic) => {
                    if common_eigenvector_test(&mats[i], &mats[j], EIGEN_TOL) {
                        continue;
                    }
                    PositivityReason::EllipticPair
                }
                (MatrixClass::Elliptic, MatrixClass::Hyperbolic) | (MatrixClass::Hyperbolic, MatrixClass::Elliptic) => {
                    PositivityReason::EllipticHyperbolic
                }
                _ => continue,
            };
            return Ok(PositivityCertificate {
                certified: true,
                reason,
                witnesses: Some((probes[i], probes[j])),
                classes,
            });
        }
    }
    Ok(PositivityCertificate {
        certified: false,
        reason: PositivityReason::Inconclusive,
        witnesses: None,
        classes,
    })
}

fn transfer_sequence(model: &Model, lambda: f64, omega: &OmegaStream, n: usize) -> Result<Vec<Mat2>> {
    if omega.len() < n {
        return Err(Error::InvalidParameter(format!(
            "stream has {} values, need {n}",
            omega.len()
        )));
    }
    let family = model.at(SpectralParam::real(lambda))?;
    Ok(omega.values[..n].iter().map(|&w| family.matrix(w)).collect())
}

/// Angle `theta0` in `[0, pi)` of the initial direction that contracts under
/// `U(n)`: orthogonal to the top right-singular vector of the renormalised
/// product.
pub fn contracting_direction(model: &Model, lambda: f64, omega: &OmegaStream, n: usize) -> Result<f64> {
    let mats = transfer_sequence(model, lambda, omega, n)?;
    let mut u = Mat2::identity();
    let mut log = 0.0;
    for m in &mats {
        u = *m * u;
        let s = u.max_abs();
        u = u.scale(c(1.0 / s));
        log += s.ln();
    }
    let n_gamma = log + u.norm().ln();
    if !(n_gamma >= 10.0) {
        return Err(Error::NoContraction { n_gamma });
    }
    // Rows of a nearly rank-one U are parallel to the top right-singular vector.
    let (r0, r1) = ([u.a.re, u.b.re], [u.c.re, u.d.re]);
    let top = if r0[0].hypot(r0[1]) >= r1[0].hypot(r1[1]) { r0 } else { r1 };
    let small = [-top[1], top[0]];
    let theta = small[0].atan2(small[1]).rem_euclid(std::f64::consts::PI);
    Ok(if theta >= std::f64::consts::PI { 0.0 } else { theta })
}

/// The decaying solution over `n` steps, computed stably by backward
/// recursion with the inverse transfer matrices from a generic end vector.
/// `log_scale[0] = 0`.
pub fn contracting_solution(model: &Model, lambda: f64, omega: &OmegaStream, n: usize) -> Result<CoefficientTrajectory> {
    let mats = transfer_sequence(model, lambda, omega, n)?;
    let mut unit = vec![[c(0.0); 2]; n + 1];
    let mut back_log = vec![0.0; n + 1];
    let end = direction(0.7);
    unit[n] = end;
    for k in (0..n).rev() {
        let v = mats[k].unimodular_inverse().apply(&unit[k + 1]);
        let s = vnorm(&v);
        unit[k] = [v[0] / s, v[1] / s];
        back_log[k] = back_log[k + 1] + s.ln();
    }
    let log_scale = back_log.iter().map(|b| b - back_log[0]).collect();
    Ok(CoefficientTrajectory {
        unit,
        log_scale,
        key: Some(TrajectoryKey::new(c(lambda), omega)),
    })
}

/// Forward and backward exponents of the full-line model, from independent
/// streams for the two half-lines.
pub fn estimate_gamma_bilateral(model: &Model, lambda: f64, opts: GammaOptions) -> Result<(LyapunovEstimate, LyapunovEstimate)> {
    check_counts(opts.n, opts.replicas)?;
    let family = model.at(SpectralParam::real(lambda))?;
    let fwd = forward_rates(model, &family, &opts, |r| split_seed(opts.seed, 2 * r));
    let bwd: Vec<f64> = (0..opts.replicas as u64)
        .into_par_iter()
        .map(|r| {
            let mats = model
                .stream(split_seed(opts.seed, 2 * r + 1))
                .take(opts.n)
                .map(|w| family.matrix(w).unimodular_inverse());
            run_growth(mats, direction(opts.theta0)) / opts.n as f64
        })
        .collect();
    Ok((summarize(lambda, opts.n, fwd), summarize(lambda, opts.n, bwd)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ModelConfig, ModelKind};
    use crate::sl2::dilation;
    use std::f64::consts::PI;

    #[test]
    fn rkm_at_pi_squared_is_exact() {
        let m = Model::new(ModelConfig::rkm(2, 0.0, 1.0)).unwrap();
        for seed in [1, 2, 99] {
            let est = estimate_gamma(&m, PI * PI, GammaOptions::new(10_000, 4, seed)).unwrap();
            assert!((est.gamma - 0.5 * 2f64.ln()).abs() < 1e-6, "{}", est.gamma);
            assert_eq!(est.contracting_starts, 4);
        }
    }

    #[test]
    fn rlm_b1_has_zero_exponent() {
        let m = Model::new(ModelConfig::rlm(1, 1.0, 2.0)).unwrap();
        let est = estimate_gamma(&m, 4.0, GammaOptions::new(20_000, 8, 3)).unwrap();
        assert!(est.gamma.abs() < 5.0 / 20_000.0, "{}", est.gamma);
    }

    #[test]
    fn rejects_short_runs() {
        let m = Model::new(ModelConfig::rlm(2, 1.0, 2.0)).unwrap();
        assert!(estimate_gamma(&m, 1.0, GammaOptions::new(10, 1, 0)).is_err());
    }

    #[test]
    fn loop_model_exceptional_is_flagged_in_curve() {
        let m = Model::new(ModelConfig::new(ModelKind::LoopDeco, 2, [1.0, 2.0])).unwrap();
        let pts = gamma_curve(&m, &[2.0, PI * PI], GammaOptions::new(1000, 2, 5), 4).unwrap();
        assert!(!pts[0].exceptional && pts[0].estimate.is_some());
        assert!(pts[1].exceptional && pts[1].estimate.is_none());
    }

    #[test]
    fn positivity_examples() {
        let b1 = Model::new(ModelConfig::rlm(1, 1.0, 2.0)).unwrap();
        assert!(!positivity_criterion(&b1, 3.0, 8).unwrap().certified);
        let rkm = Model::new(ModelConfig::rkm(2, 0.0, 1.0)).unwrap();
        assert!(!positivity_criterion(&rkm, PI * PI, 8).unwrap().certified);
        let rlm = Model::new(ModelConfig::rlm(2, 1.0, 1.5)).unwrap();
        let cert = positivity_criterion(&rlm, 1.0, 2).unwrap();
        assert!(cert.certified);
        assert_eq!(cert.reason, PositivityReason::EllipticPair);
    }

    #[test]
    fn contracting_direction_of_pure_dilation_axis() {
        // At lambda = pi^2 every factor is -D(2) S(q): (0, 1) contracts.
        let m = Model::new(ModelConfig::rkm(2, 0.0, 1.0)).unwrap();
        let w = m.sample(4, 200);
        let th = contracting_direction(&m, PI * PI, &w, 200).unwrap();
        assert!(th.min(PI - th) < 1e-12, "{th}");
        let d = dilation(4.0).unwrap();
        let v = d.apply(&direction(th));
        assert!(v[0].norm() < 1e-10);
    }

    #[test]
    fn contracting_solution_matches_direction() {
        let m = Model::new(ModelConfig::rlm(2, 1.0, 2.0)).unwrap();
        let w = m.sample(11, 400);
        let th = contracting_direction(&m, 3.0, &w, 400).unwrap();
        let sol = contracting_solution(&m, 3.0, &w, 400).unwrap();
        let u = sol.unit[0];
        let cross = (u[0] * c(th.cos()) - u[1] * c(th.sin())).norm();
        assert!(cross < 1e-9, "{cross}");
        let est = estimate_gamma(&m, 3.0, GammaOptions::new(4000, 8, 1)).unwrap();
        let rate = -sol.log_scale[400] / 400.0;
        assert!((rate - est.gamma).abs() < 0.3 * est.gamma, "{rate} vs {}", est.gamma);
    }

    #[test]
    fn no_contraction_without_growth() {
        let m = Model::new(ModelConfig::rlm(1, 1.0, 1.0)).unwrap();
        let w = m.sample(0, 2000);
        assert!(matches!(
            contracting_direction(&m, 1.0, &w, 2000),
            Err(Error::NoContraction { .. })
        ));
    }

    #[test]
    fn bilateral_periodic_in_band_is_zero() {
        let mut cfg = ModelConfig::new(ModelKind::NecklaceFullLine, 1, [0.5, 0.5]);
        cfg.p = 2;
        let m = Model::new(cfg).unwrap();
        // Find an in-band energy: |cos(mu l) cos mu - 1.25 sin(mu l) sin mu| <= 1.
        let lam: f64 = 0.5;
        let mu = lam.sqrt();
        assert!(crate::spectrum::necklace_sin_cos(mu, 0.5, 1.25).1.abs() < 1.0);
        let (f, b) = estimate_gamma_bilateral(&m, lam, GammaOptions::new(5000, 2, 1)).unwrap();
        assert!(f.gamma < 1e-3 && b.gamma < 1e-3);
    }
}
