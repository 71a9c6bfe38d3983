//! The reduced half-line operator: solution propagation, edge-wise
//! eigenfunctions, truncated Dirichlet eigenvalues, decay fits, the lift to
//! the tree, Wronskians and the Weyl m-function.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::decoration::{bisect, golden_min};
use crate::error::{Error, Result};
use crate::lyapunov::{direction, CoefficientTrajectory, TrajectoryKey};
use crate::models::{split_seed, Model, ModelKind, OmegaStream, TransferFamily};
use crate::quad::{gauss_legendre, panels_for};
use crate::sl2::{c, mobius, rotation, Mat2, SpectralParam, Vec2, C64};

/// Default tail seed for the backward m-function recursion.
pub const M_TAIL: C64 = C64::new(0.0, 1.0);
/// Relative tolerance of the runtime check `Im m = Im z ||psi||^2`.
pub const NORM_IDENTITY_TOL: f64 = 0.05;
/// Minimum number of fitted points in `decay_fit`.
pub const MIN_FIT_POINTS: usize = 100;

fn family_at(model: &Model, sp: SpectralParam) -> Result<TransferFamily> {
    model.at(sp).map_err(|e| match e {
        Error::ExceptionalEnergy { lambda, .. } => Error::ExceptionalAtStep { lambda, step: 1 },
        other => other,
    })
}

fn need(omega: &OmegaStream, n: usize) -> Result<()> {
    if omega.len() < n {
        return Err(Error::InvalidParameter(format!(
            "stream has {} values, need {n}",
            omega.len()
        )));
    }
    Ok(())
}

/// `F(k) = U(k) (sin theta0, cos theta0)`, `k = 0..=n`.
pub fn propagate(model: &Model, omega: &OmegaStream, sp: SpectralParam, theta0: f64, n: usize) -> Result<CoefficientTrajectory> {
    need(omega, n)?;
    let family = family_at(model, sp)?;
    let mut traj = CoefficientTrajectory::from_direction(theta0);
    traj.unit.reserve(n);
    traj.log_scale.reserve(n);
    for &w in &omega.values[..n] {
        crate::lyapunov::cocycle_step(&family.matrix(w), &mut traj);
    }
    traj.key = Some(TrajectoryKey::new(sp.z, omega));
    Ok(traj)
}

/// A sample of the reconstructed solution; the true values are
/// `exp(log_scale) * (f, fp)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeSample {
    pub edge: usize,
    pub x: f64,
    pub f: C64,
    pub fp: C64,
    pub log_scale: f64,
}

impl EdgeSample {
    pub fn value(&self) -> C64 {
        self.f * self.log_scale.exp()
    }
}

/// Solution values on each edge, rebuilt from the boundary vector at the
/// edge's left end. `lengths[k]` is the length of edge `k + 1`.
pub fn eigenfunction_on_edges(traj: &CoefficientTrajectory, sp: SpectralParam, lengths: &[f64], samples_per_edge: usize) -> Result<Vec<EdgeSample>> {
    let n = traj.steps();
    if lengths.len() < n {
        return Err(Error::InvalidParameter(format!("{} lengths for {n} edges", lengths.len())));
    }
    if samples_per_edge < 2 {
        return Err(Error::InvalidParameter("need at least two samples per edge".into()));
    }
    let mut out = Vec::with_capacity(n * samples_per_edge);
    let mut t = 0.0;
    for k in 0..n {
        let l = lengths[k];
        for j in 0..samples_per_edge {
            let s = l * j as f64 / (samples_per_edge - 1) as f64;
            let v = rotation(&sp, s, 1.0).apply(&traj.unit[k]);
            out.push(EdgeSample {
                edge: k + 1,
                x: t + s,
                f: v[0],
                fp: v[1],
                log_scale: traj.log_scale[k],
            });
        }
        t += l;
    }
    Ok(out)
}

/// `(int |f|^2, int |f'|^2)` over an edge of length `l` for the solution with
/// left-end data `v`.
pub fn edge_integrals(v: &Vec2, sp: &SpectralParam, l: f64) -> (f64, f64) {
    let panels = panels_for(sp.w.norm(), l);
    let f2 = gauss_legendre(|s| rotation(sp, s, 1.0).apply(v)[0].norm_sqr(), 0.0, l, panels);
    let fp2 = gauss_legendre(|s| rotation(sp, s, 1.0).apply(v)[1].norm_sqr(), 0.0, l, panels);
    (f2, fp2)
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Sign of `f(t_n)` for the Dirichlet start, as a continuous function of lambda.
fn end_value(family: &TransferFamily, omega: &[f64]) -> f64 {
    let mut v = direction(0.0);
    for &w in omega {
        let u = family.matrix(w).apply(&v);
        let n = (u[0].norm_sqr() + u[1].norm_sqr()).sqrt();
        v = [u[0] / n, u[1] / n];
    }
    v[0].re
}

fn effective_length(model: &Model, omega: &[f64]) -> f64 {
    let cfg = model.config();
    match cfg.kind {
        ModelKind::Rlm => omega.iter().sum(),
        ModelKind::Rkm => cfg.fixed_length * omega.len() as f64,
        ModelKind::LoopDeco => omega.iter().map(|w| w + 1.0).sum(),
        ModelKind::Necklace | ModelKind::NecklaceFullLine => {
            omega.iter().map(|w| 1.0 + cfg.p as f64 * w).sum()
        }
        ModelKind::KirchhoffDeco => {
            let g = model.decoration().expect("validated decoration");
            g.total_length() * omega.len() as f64
        }
    }
}

/// Eigenvalues of the truncation to `n` edges with Dirichlet conditions at
/// both ends, by shooting: zeros of `f(t_n)` for the solution with `f(0) = 0`.
pub fn truncated_eigenvalues(model: &Model, omega: &OmegaStream, n: usize, range: (f64, f64), tol: f64) -> Result<Vec<f64>> {
    need(omega, n)?;
    let (lo, hi) = range;
    if !(lo < hi) {
        return Err(Error::InvalidParameter(format!("empty range [{lo}, {hi}]")));
    }
    let w = &omega.values[..n];
    let f = |lam: f64| -> f64 {
        match model.at(SpectralParam::real(lam)) {
            Ok(fam) => end_value(&fam, w),
            Err(_) => f64::NAN,
        }
    };
    let mut cuts = model.exceptional_energies(lo, hi)?;
    cuts.sort_by(f64::total_cmp);
    let len = effective_length(model, w).max(1.0);
    let mut grid: Vec<f64> = Vec::new();
    if lo < 0.0 {
        let top = hi.min(0.0);
        let m = 400;
        grid.extend((0..m).map(|k| lo + (top - lo) * k as f64 / m as f64));
    }
    if hi > 0.0 {
        let mu0 = lo.max(0.0).sqrt();
        let mu1 = hi.sqrt();
        let step = PI / (20.0 * len);
        let m = ((mu1 - mu0) / step).ceil().max(1.0) as usize;
        grid.extend((0..=m).map(|k| {
            let mu = mu0 + (mu1 - mu0) * k as f64 / m as f64;
            mu * mu
        }));
    }
    let mut xs: Vec<f64> = Vec::with_capacity(grid.len() + 2 * cuts.len());
    let mut ci = 0;
    for x in grid {
        while ci < cuts.len() && cuts[ci] <= x {
            let margin = 1e-9 * (1.0 + cuts[ci].abs());
            xs.push(cuts[ci] - margin);
            xs.push(f64::NAN);
            xs.push(cuts[ci] + margin);
            ci += 1;
        }
        xs.push(x);
    }
    let vals: Vec<f64> = xs.iter().map(|&x| if x.is_nan() { f64::NAN } else { f(x) }).collect();
    let mut roots = Vec::new();
    for k in 0..xs.len().saturating_sub(1) {
        let (a, b) = (vals[k], vals[k + 1]);
        if a.is_nan() || b.is_nan() {
            continue;
        }
        if a == 0.0 {
            roots.push(xs[k]);
        } else if a * b < 0.0 {
            roots.push(bisect(f, xs[k], xs[k + 1], tol));
        }
    }
    roots.dedup_by(|a, b| (*a - *b).abs() <= tol);
    Ok(roots)
}

/// Least-squares decay rate `-d/dk log |F(k)|` over `k > burnin`.
pub fn decay_fit(traj: &CoefficientTrajectory, burnin: usize) -> Result<f64> {
    let ys = &traj.log_scale;
    let len = ys.len().saturating_sub(burnin + 1);
    if len < MIN_FIT_POINTS {
        return Err(Error::TooShort {
            len,
            need: MIN_FIT_POINTS,
        });
    }
    let pts: Vec<(f64, f64)> = (burnin + 1..ys.len()).map(|k| (k as f64, ys[k])).collect();
    let nf = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Ok(-sxy / sxx)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeLift {
    pub halfline_rate: f64,
    pub tree_rate: f64,
    /// `ln ||f||^2` on the half-line.
    pub halfline_log_norm_sq: f64,
    /// `ln ||f~||^2` on the tree, summed over all `b^{n-1}` copies per generation.
    pub tree_log_norm_sq: f64,
}

/// `(ln ||f||^2, ln ||f~||^2)`: half-line norm and the norm of the radial
/// lift, summed over all `b^{n-1}` copies of each generation `n`. On every
/// copy of generation `n` the lift is `b^{-(n-1)/2} f`.
pub fn lift_norms(traj: &CoefficientTrajectory, sp: SpectralParam, lengths: &[f64], b: u32) -> Result<(f64, f64)> {
    let n = traj.steps();
    if lengths.len() < n {
        return Err(Error::InvalidParameter(format!("{} lengths for {n} edges", lengths.len())));
    }
    if b < 1 {
        return Err(Error::InvalidParameter("b must be >= 1".into()));
    }
    let lnb = (b as f64).ln();
    let mut half = Vec::with_capacity(n);
    let mut tree = Vec::with_capacity(n);
    for k in 0..n {
        let scale = 2.0 * traj.log_scale[k];
        let (i, _) = edge_integrals(&traj.unit[k], &sp, lengths[k]);
        half.push(scale + i.ln());
        let lift = (-(k as f64) * 0.5 * lnb).exp();
        let v = [traj.unit[k][0] * lift, traj.unit[k][1] * lift];
        let (j, _) = edge_integrals(&v, &sp, lengths[k]);
        tree.push(k as f64 * lnb + scale + j.ln());
    }
    Ok((log_sum_exp(&half), log_sum_exp(&tree)))
}

/// Norms and decay rates of a solution and of its radial lift to the tree.
/// The lift adds `ln(b)/2` to the per-generation decay rate.
pub fn lift_to_tree(traj: &CoefficientTrajectory, sp: SpectralParam, lengths: &[f64], b: u32, burnin: usize) -> Result<TreeLift> {
    let (halfline_log_norm_sq, tree_log_norm_sq) = lift_norms(traj, sp, lengths, b)?;
    let half_lnb = 0.5 * (b as f64).ln();
    let lifted = CoefficientTrajectory {
        unit: traj.unit.clone(),
        log_scale: traj
            .log_scale
            .iter()
            .enumerate()
            .map(|(k, s)| s - k as f64 * half_lnb)
            .collect(),
        key: traj.key,
    };
    Ok(TreeLift {
        halfline_rate: decay_fit(traj, burnin)?,
        tree_rate: decay_fit(&lifted, burnin)?,
        halfline_log_norm_sq,
        tree_log_norm_sq,
    })
}

/// Pointwise Wronskian `W(k) = f'(k) g(k) - f(k) g'(k)` of two trajectories
/// of the same realisation.
///
/// Accurate only while the two vectors are numerically independent; for long
/// runs with positive exponent use [`propagate_frame`].
pub fn wronskian(f: &CoefficientTrajectory, g: &CoefficientTrajectory) -> Result<Vec<C64>> {
    if f.unit.len() != g.unit.len() {
        return Err(Error::InvalidPair(format!(
            "lengths differ ({} vs {})",
            f.unit.len(),
            g.unit.len()
        )));
    }
    if f.key != g.key {
        return Err(Error::InvalidPair("different realisations or energies".into()));
    }
    Ok((0..f.unit.len())
        .map(|k| {
            let (u, v) = (f.unit[k], g.unit[k]);
            (u[1] * v[0] - u[0] * v[1]) * (f.log_scale[k] + g.log_scale[k]).exp()
        })
        .collect())
}

/// Two solutions propagated together with QR re-orthonormalisation, which
/// keeps their Wronskian exact to rounding for any run length.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTrajectory {
    pub first: CoefficientTrajectory,
    pub wronskian: Vec<C64>,
}

fn qr2(a1: Vec2, a2: Vec2) -> ([Vec2; 2], f64, f64) {
    let n1 = (a1[0].norm_sqr() + a1[1].norm_sqr()).sqrt();
    let q1 = [a1[0] / n1, a1[1] / n1];
    let r12 = q1[0].conj() * a2[0] + q1[1].conj() * a2[1];
    let b = [a2[0] - q1[0] * r12, a2[1] - q1[1] * r12];
    let n2 = (b[0].norm_sqr() + b[1].norm_sqr()).sqrt();
    ([q1, [b[0] / n2, b[1] / n2]], n1, n2)
}

pub fn propagate_frame(model: &Model, omega: &OmegaStream, sp: SpectralParam, theta_f: f64, theta_g: f64, n: usize) -> Result<FrameTrajectory> {
    need(omega, n)?;
    let family = family_at(model, sp)?;
    let (mut q, r11, r22) = qr2(direction(theta_f), direction(theta_g));
    let (mut l11, mut l22) = (r11.ln(), r22.ln());
    let w = |q: &[Vec2; 2], l: f64| -> C64 {
        // W = -det[F G] = -det(Q) r11 r22.
        -(q[0][0] * q[1][1] - q[0][1] * q[1][0]) * l.exp()
    };
    let mut wr = vec![w(&q, l11 + l22)];
    let mut first = CoefficientTrajectory {
        unit: vec![q[0]],
        log_scale: vec![l11],
        key: Some(TrajectoryKey::new(sp.z, omega)),
    };
    for &om in &omega.values[..n] {
        let m = family.matrix(om);
        let (nq, r11, r22) = qr2(m.apply(&q[0]), m.apply(&q[1]));
        q = nq;
        l11 += r11.ln();
        l22 += r22.ln();
        wr.push(w(&q, l11 + l22));
        first.unit.push(q[0]);
        first.log_scale.push(l11);
    }
    Ok(FrameTrajectory {
        first,
        wronskian: wr,
    })
}

fn require_upper(z: C64) -> Result<()> {
    if !(z.im > 0.0) {
        return Err(Error::InvalidParameter(format!("need Im z > 0, got {z}")));
    }
    Ok(())
}

/// `m_0, ..., m_n` from the backward recursion
/// `m_{k-1} = proj T_z(omega_k)^{-1} m_k`, started at `m_n = m_tail`.
pub fn m_sequence(model: &Model, omega: &OmegaStream, z: C64, n: usize, m_tail: C64) -> Result<Vec<C64>> {
    require_upper(z)?;
    need(omega, n)?;
    let family = family_at(model, SpectralParam::complex(z))?;
    let mut ms = vec![c(0.0); n + 1];
    ms[n] = m_tail;
    for k in (1..=n).rev() {
        let inv = family.matrix(omega.values[k - 1]).unimodular_inverse();
        let m = mobius(&inv, ms[k])?;
        if !(m.im > 0.0) {
            return Err(Error::HerglotzViolation { step: k - 1, im: m.im });
        }
        ms[k - 1] = m;
    }
    Ok(ms)
}

/// Weyl m-function `m(z) = psi'(0)/psi(0)` of the decaying solution.
pub fn m_function(model: &Model, omega: &OmegaStream, z: C64, n: usize, m_tail: C64) -> Result<C64> {
    Ok(m_sequence(model, omega, z, n, m_tail)?[0])
}

/// Check `Im m = Im z ||psi||^2` for `psi(0) = 1`, building `psi` from the
/// stable ratios `m_k` (edge models only). Returns `(Im m, Im z ||psi||^2)`.
pub fn check_norm_identity(model: &Model, omega: &OmegaStream, z: C64, n: usize) -> Result<(f64, f64)> {
    let lengths = model
        .edge_lengths(&omega.values[..n.min(omega.len())])
        .ok_or_else(|| Error::InvalidParameter("norm identity needs an edge model".into()))?;
    let ms = m_sequence(model, omega, z, n, M_TAIL)?;
    let sp = SpectralParam::complex(z);
    let family = family_at(model, sp)?;
    let mut log_psi = 0.0;
    let mut terms = Vec::with_capacity(n);
    for k in 0..n {
        let (i, _) = edge_integrals(&[c(1.0), ms[k]], &sp, lengths[k]);
        terms.push(2.0 * log_psi + i.ln());
        let t: Mat2 = family.matrix(omega.values[k]);
        log_psi += (t.a + t.b * ms[k]).norm().ln();
    }
    let expected = z.im * log_sum_exp(&terms).exp();
    let im_m = ms[0].im;
    if (im_m - expected).abs() > NORM_IDENTITY_TOL * im_m.abs() {
        return Err(Error::NormIdentity { im_m, expected });
    }
    Ok((im_m, expected))
}

/// `(1/pi) Im m(lambda + i eps)`.
pub fn spectral_density(model: &Model, omega: &OmegaStream, lambda: f64, eps: f64, n: usize) -> Result<f64> {
    Ok(m_function(model, omega, C64::new(lambda, eps), n, M_TAIL)?.im / PI)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpavgOptions {
    /// Length of the fixed tail realisation `omega_2, omega_3, ...`.
    pub tail_steps: usize,
    /// Minimum distance of `lambda` from `pi^2 k^2` for the potential model.
    pub security_distance: Option<f64>,
    /// Grid used to locate the worst single `omega_1`.
    pub worst_grid: usize,
}

impl Default for SpavgOptions {
    fn default() -> Self {
        Self {
            tail_steps: 400,
            security_distance: Some(0.5),
            worst_grid: 4096,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpavgRow {
    pub eps: f64,
    pub average: f64,
    pub worst_param: f64,
    pub worst_integrand: f64,
}

/// Averages over `omega_1` of `Im proj T_z(omega_1)^{-1} m_1(z)`,
/// `z = lambda + i eps`, for a fixed tail, together with the largest value of
/// the integrand over the support.
pub fn spectral_average_check(model: &Model, lambda: f64, eps_list: &[f64], samples: usize, seed: u64, opts: SpavgOptions) -> Result<Vec<SpavgRow>> {
    if samples == 0 {
        return Err(Error::InvalidParameter("need at least one sample".into()));
    }
    if model.kind() == ModelKind::Rkm {
        if let Some(d) = opts.security_distance {
            let k = (lambda.max(0.0).sqrt() / PI).round().max(1.0);
            let dist = (lambda - (PI * k).powi(2)).abs();
            if dist < d {
                return Err(Error::InvalidParameter(format!(
                    "lambda = {lambda} is within {dist:.3e} of pi^2 k^2 (security distance {d})"
                )));
            }
        }
    }
    let tail = model.sample(split_seed(seed, 0), opts.tail_steps);
    let draws = model.sample(split_seed(seed, 1), samples);
    let (t0, t1) = model.interval();
    eps_list
        .iter()
        .map(|&eps| {
            let z = C64::new(lambda, eps);
            let m1 = if opts.tail_steps == 0 {
                M_TAIL
            } else {
                m_function(model, &tail, z, opts.tail_steps, M_TAIL)?
            };
            let family = family_at(model, SpectralParam::complex(z))?;
            let integrand = |w: f64| -> f64 {
                mobius(&family.matrix(w).unimodular_inverse(), m1)
                    .map(|m| m.im)
                    .unwrap_or(f64::INFINITY)
            };
            let average = draws.values.iter().map(|&w| integrand(w)).sum::<f64>() / samples as f64;
            let (worst_param, worst_integrand) = if t0 == t1 {
                (t0, integrand(t0))
            } else {
                let g = opts.worst_grid.max(8);
                let xs: Vec<f64> = (0..=g).map(|k| t0 + (t1 - t0) * k as f64 / g as f64).collect();
                let vals: Vec<f64> = xs.iter().map(|&x| integrand(x)).collect();
                let mut order: Vec<usize> = (0..xs.len()).collect();
                order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
                let mut best = (xs[order[0]], vals[order[0]]);
                for &k in order.iter().take(4) {
                    let lo = xs[k.saturating_sub(1)];
                    let hi = xs[(k + 1).min(g)];
                    let x = golden_min(|x| -integrand(x), lo, hi, 1e-13 * (1.0 + hi.abs()));
                    let v = integrand(x);
                    if v > best.1 {
                        best = (x, v);
                    }
                }
                best
            };
            Ok(SpavgRow {
                eps,
                average,
                worst_param,
                worst_integrand,
            })
        })
        .collect()
}
