//! Spectra of periodic models (bands from the trace, isolated points from the
//! Dirichlet eigenvector test) and of random models (union over the support).

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decoration::bisect;
use crate::error::{Error, Result};
use crate::models::{Model, ModelKind};
use crate::sl2::SpectralParam;

pub const DEFAULT_TOL: f64 = 1e-12;
pub const POINTS_PER_DECADE: usize = 2048;
const TRACE_PROBES: usize = 8;

/// Union of closed bands plus isolated points.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BandList {
    pub bands: Vec<(f64, f64)>,
    pub points: Vec<f64>,
    /// Exceptional energies removed from the scan.
    pub excluded: Vec<f64>,
}

impl BandList {
    pub fn in_band(&self, lambda: f64) -> bool {
        self.bands.iter().any(|&(a, b)| a <= lambda && lambda <= b)
    }

    pub fn contains(&self, lambda: f64, tol: f64) -> bool {
        self.bands
            .iter()
            .any(|&(a, b)| a - tol <= lambda && lambda <= b + tol)
            || self.points.iter().any(|&p| (p - lambda).abs() <= tol)
    }

    /// Rows `(kind, lambda_lo, lambda_hi)`.
    pub fn rows(&self) -> Vec<(&'static str, f64, f64)> {
        let mut rows: Vec<(&'static str, f64, f64)> = self
            .bands
            .iter()
            .map(|&(a, b)| ("band", a, b))
            .chain(self.points.iter().map(|&p| ("point", p, p)))
            .chain(self.excluded.iter().map(|&p| ("excluded", p, p)))
            .collect();
        rows.sort_by(|x, y| x.1.total_cmp(&y.1).then(x.0.cmp(y.0)));
        rows
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanOptions {
    pub tol: f64,
    /// Grid size over the whole range; `None` uses the per-decade default.
    pub grid_points: Option<usize>,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            grid_points: None,
        }
    }
}

fn default_grid(lo: f64, hi: f64) -> usize {
    let top = lo.abs().max(hi.abs()).max(10.0);
    POINTS_PER_DECADE * (top.log10().ceil() as usize).max(1)
}

/// Split `[lo, hi]` into pieces avoiding the points `cuts`.
fn segments(lo: f64, hi: f64, cuts: &[f64]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut start = lo;
    for &x in cuts {
        let margin = 1e-9 * (1.0 + x.abs());
        if x - margin > start {
            out.push((start, x - margin));
        }
        start = start.max(x + margin);
    }
    if hi > start {
        out.push((start, hi));
    }
    out
}

/// Spectrum of the periodic model with every parameter equal to `omega1`.
///
/// Bands are `{|tr T| <= 2}`; points are the energies where `(0, 1)` is an
/// eigenvector of `T` with eigenvalue of modulus `< 1`, outside the bands.
pub fn periodic_spectrum(model: &Model, omega1: f64, range: (f64, f64), opts: ScanOptions) -> Result<BandList> {
    let (lo, hi) = range;
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidParameter(format!("invalid range [{lo}, {hi}]")));
    }
    let (t0, t1) = model.interval();
    if omega1 < t0 || omega1 > t1 {
        return Err(Error::InvalidParameter(format!(
            "parameter {omega1} outside the support [{t0}, {t1}]"
        )));
    }
    let excluded = model.exceptional_energies(lo, hi)?;
    let pieces = segments(lo, hi, &excluded);
    let eval = |lam: f64| model.transfer(SpectralParam::real(lam), omega1);

    let mut traces = Vec::with_capacity(TRACE_PROBES);
    for k in 0..TRACE_PROBES {
        let (a, b) = pieces[k % pieces.len()];
        let x = a + (b - a) * (k as f64 + 0.5) / TRACE_PROBES as f64;
        if let Ok(t) = eval(x) {
            traces.push(t.trace().re);
        }
    }
    let spread = traces.iter().cloned().fold(f64::MIN, f64::max)
        - traces.iter().cloned().fold(f64::MAX, f64::min);
    if traces.len() >= 2 && spread < 1e-12 {
        return Err(Error::ConstantTrace);
    }

    let total = opts.grid_points.unwrap_or_else(|| default_grid(lo, hi));
    let with_points = model.kind() != ModelKind::NecklaceFullLine;
    let mut bands = Vec::new();
    let mut candidates = Vec::new();
    for (a, b) in pieces {
        let n = ((total as f64) * (b - a) / (hi - lo)).ceil().max(16.0) as usize;
        let xs: Vec<f64> = (0..=n).map(|k| a + (b - a) * k as f64 / n as f64).collect();
        let mats = xs
            .iter()
            .map(|&x| eval(x))
            .collect::<Result<Vec<_>>>()?;
        let g = |x: f64| eval(x).map(|t| t.trace().re.abs() - 2.0).unwrap_or(f64::NAN);
        let h = |x: f64| eval(x).map(|t| t.b.re).unwrap_or(f64::NAN);
        let gv: Vec<f64> = mats.iter().map(|t| t.trace().re.abs() - 2.0).collect();
        let mut start = (gv[0] <= 0.0).then_some(a);
        for k in 0..n {
            let (inside0, inside1) = (gv[k] <= 0.0, gv[k + 1] <= 0.0);
            if inside0 != inside1 {
                let edge = bisect(g, xs[k], xs[k + 1], opts.tol);
                if inside1 {
                    start = Some(edge);
                } else if let Some(s) = start.take() {
                    bands.push((s, edge));
                }
            }
        }
        if let Some(s) = start {
            bands.push((s, b));
        }
        if with_points {
            let hv: Vec<f64> = mats.iter().map(|t| t.b.re).collect();
            for k in 0..n {
                if hv[k] == 0.0 {
                    candidates.push(xs[k]);
                } else if hv[k] * hv[k + 1] < 0.0 {
                    candidates.push(bisect(h, xs[k], xs[k + 1], opts.tol));
                }
            }
        }
    }
    let mut out = BandList {
        bands,
        points: Vec::new(),
        excluded,
    };
    for x in candidates {
        let t = eval(x)?;
        let scale = t.max_abs().max(1.0);
        if t.b.norm() <= 1e-8 * scale && t.d.norm() < 1.0 && !out.in_band(x) {
            out.points.push(x);
        }
    }
    out.points.dedup_by(|a, b| (*a - *b).abs() <= 10.0 * opts.tol);
    Ok(out)
}

/// Closed-form bands of the periodic length model:
/// `[((k-1) pi + theta)^2, (k pi - theta)^2] / l^2` with
/// `theta = arccos(2 / (sqrt b + 1/sqrt b))`, and points `pi^2 k^2 / l^2`.
pub fn rlm_bands_closed(b: u32, l: f64, kmax: usize) -> Result<BandList> {
    if b < 2 || !(l > 0.0) {
        return Err(Error::InvalidParameter(format!("need b > 1 and l > 0, got b = {b}, l = {l}")));
    }
    let sb = (b as f64).sqrt();
    let theta = (2.0 / (sb + 1.0 / sb)).acos();
    let l2 = l * l;
    let bands = (1..=kmax)
        .map(|k| {
            let k = k as f64;
            (((k - 1.0) * PI + theta).powi(2) / l2, (k * PI - theta).powi(2) / l2)
        })
        .collect();
    let points = (1..=kmax).map(|k| (PI * k as f64).powi(2) / l2).collect();
    Ok(BandList {
        bands,
        points,
        excluded: Vec::new(),
    })
}

/// `xi_b(mu, q) = cos mu + q sin mu / (mu (b + 1))`, continued to `lambda <= 0`.
pub fn rkm_xi(lambda: f64, q: f64, b: u32) -> f64 {
    let bp1 = b as f64 + 1.0;
    if lambda > 0.0 {
        let mu = lambda.sqrt();
        mu.cos() + q * mu.sin() / (mu * bp1)
    } else if lambda < 0.0 {
        let mu = (-lambda).sqrt();
        mu.cosh() + q * mu.sinh() / (mu * bp1)
    } else {
        1.0 + q / bp1
    }
}

/// Whether `lambda` lies in a band of the periodic unit-length potential model.
pub fn rkm_band_test(lambda: f64, q: f64, b: u32) -> bool {
    let bf = b as f64;
    rkm_xi(lambda, q, b).abs() <= 2.0 * bf.sqrt() / (bf + 1.0)
}

/// `(sin_p, cos_p)(mu, l)` for the necklace.
pub fn necklace_sin_cos(mu: f64, l: f64, p: f64) -> (f64, f64) {
    let (s, c) = (mu * l).sin_cos();
    let (sm, cm) = mu.sin_cos();
    (s * cm + p * c * sm, c * cm - p * s * sm)
}

/// `kappa = (b + p^2) / (p (b + 1))`.
pub fn necklace_kappa(b: u32, p: u32) -> f64 {
    let (b, p) = (b as f64, p as f64);
    (b + p * p) / (p * (b + 1.0))
}

/// Trace of the periodic necklace transfer matrix,
/// `(sqrt b + 1/sqrt b) cos_kappa(mu, l)`.
pub fn necklace_trace(mu: f64, l: f64, b: u32, p: u32) -> f64 {
    let sb = (b as f64).sqrt();
    (sb + 1.0 / sb) * necklace_sin_cos(mu, l, necklace_kappa(b, p)).1
}

/// Bands and points of the periodic necklace for `0 <= mu <= mu_max`.
pub fn necklace_bands_closed(b: u32, p: u32, l: f64, mu_max: f64) -> Result<BandList> {
    if b < 1 || p < 1 || l < 0.0 || !(mu_max > 0.0) {
        return Err(Error::InvalidParameter("need b, p >= 1, l >= 0, mu_max > 0".into()));
    }
    let tol = 1e-14;
    let g = |mu: f64| necklace_trace(mu, l, b, p).abs() - 2.0;
    let h = |mu: f64| necklace_sin_cos(mu, l, p as f64).0;
    let step = (1e-3f64).min(PI / (20.0 * (l + 1.0)));
    let n = (mu_max / step).ceil() as usize;
    let xs: Vec<f64> = (0..=n).map(|k| (k as f64 * step).min(mu_max)).collect();
    let mut bands = Vec::new();
    let mut start = (g(0.0) <= 0.0).then_some(0.0);
    let mut zeros = Vec::new();
    for k in 0..n {
        let (x0, x1) = (xs[k], xs[k + 1]);
        let (i0, i1) = (g(x0) <= 0.0, g(x1) <= 0.0);
        if i0 != i1 {
            let e = bisect(g, x0, x1, tol);
            if i1 {
                start = Some(e);
            } else if let Some(s) = start.take() {
                bands.push((s * s, e * e));
            }
        }
        if k > 0 && h(x0) == 0.0 {
            zeros.push(x0);
        } else if h(x0) * h(x1) < 0.0 {
            zeros.push(bisect(h, x0, x1, tol));
        }
    }
    if let Some(s) = start {
        bands.push((s * s, mu_max * mu_max));
    }
    let mut out = BandList {
        bands,
        points: Vec::new(),
        excluded: Vec::new(),
    };
    out.points = zeros
        .into_iter()
        .map(|m| m * m)
        .filter(|&x| !out.in_band(x))
        .collect();
    Ok(out)
}

fn merge_intervals(mut iv: Vec<(f64, f64)>, tol: f64) -> Vec<(f64, f64)> {
    iv.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (a, b) in iv {
        match out.last_mut() {
            Some(last) if a <= last.1 + tol => last.1 = last.1.max(b),
            _ => out.push((a, b)),
        }
    }
    out
}

/// Almost-sure spectrum as the union of periodic spectra over a grid of
/// `grid_omega` parameter values spanning the support.
///
/// Points that move continuously with the parameter are joined into
/// intervals by pairing mutual nearest neighbours between consecutive grid
/// values.
pub fn almost_sure_spectrum(model: &Model, grid_omega: usize, range: (f64, f64), opts: ScanOptions) -> Result<BandList> {
    let (t0, t1) = model.interval();
    let grid: Vec<f64> = if grid_omega <= 1 || t0 == t1 {
        vec![t0]
    } else {
        (0..grid_omega)
            .map(|k| t0 + (t1 - t0) * k as f64 / (grid_omega - 1) as f64)
            .collect()
    };
    let spectra = grid
        .par_iter()
        .map(|&w| periodic_spectrum(model, w, range, opts))
        .collect::<Result<Vec<_>>>()?;

    let mut bands: Vec<(f64, f64)> = spectra.iter().flat_map(|s| s.bands.iter().cloned()).collect();
    let mut point_iv: Vec<(f64, f64)> = Vec::new();
    let nearest = |set: &[f64], x: f64| -> Option<f64> {
        set.iter().cloned().min_by(|a, b| (a - x).abs().total_cmp(&(b - x).abs()))
    };
    for (i, s) in spectra.iter().enumerate() {
        for &x in &s.points {
            let mut paired = false;
            for j in [i.wrapping_sub(1), i + 1] {
                let Some(other) = spectra.get(j) else { continue };
                if let Some(y) = nearest(&other.points, x) {
                    if nearest(&s.points, y).map_or(false, |back| back == x) {
                        point_iv.push((x.min(y), x.max(y)));
                        paired = true;
                    }
                }
            }
            if !paired {
                point_iv.push((x, x));
            }
        }
    }
    let tol = 10.0 * opts.tol;
    let point_iv = merge_intervals(point_iv, tol);
    let mut points = Vec::new();
    for (a, b) in point_iv {
        if b - a > tol {
            bands.push((a, b));
        } else {
            points.push(a);
        }
    }
    let bands = merge_intervals(bands, tol);
    let mut excluded: Vec<f64> = spectra.iter().flat_map(|s| s.excluded.iter().cloned()).collect();
    excluded.sort_by(f64::total_cmp);
    excluded.dedup();
    let mut out = BandList {
        bands,
        points: Vec::new(),
        excluded,
    };
    out.points = points.into_iter().filter(|&p| !out.in_band(p)).collect();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelConfig;

    #[test]
    fn rlm_closed_form_matches_scan() {
        let m = Model::new(ModelConfig::rlm(2, 1.0, 1.0)).unwrap();
        let scan = periodic_spectrum(&m, 1.0, (0.0, 160.0), ScanOptions::default()).unwrap();
        let closed = rlm_bands_closed(2, 1.0, 4).unwrap();
        assert_eq!(scan.bands.len(), 4, "{:?}", scan.bands);
        for (s, c) in scan.bands.iter().zip(&closed.bands) {
            assert!((s.0 - c.0).abs() < 1e-9 && (s.1 - c.1).abs() < 1e-9, "{s:?} vs {c:?}");
        }
        assert_eq!(scan.points.len(), 4);
        for (s, c) in scan.points.iter().zip(&closed.points) {
            assert!((s - c).abs() < 1e-9);
        }
    }

    #[test]
    fn rkm_b1_q0_has_no_gaps() {
        let m = Model::new(ModelConfig::rkm(1, 0.0, 0.0)).unwrap();
        let s = periodic_spectrum(&m, 0.0, (0.0, 45.0), ScanOptions::default()).unwrap();
        assert_eq!(s.bands, vec![(0.0, 45.0)]);
        assert!(s.points.is_empty());
    }

    #[test]
    fn constant_trace_is_rejected() {
        // The trace cannot vary measurably over a range of width 1e-14.
        let m = Model::new(ModelConfig::rlm(2, 1.0, 1.0)).unwrap();
        assert!(periodic_spectrum(&m, 1.0, (1.0, 1.0 + 1e-14), ScanOptions::default()).is_err());
    }

    #[test]
    fn necklace_trace_identity() {
        for (b, p) in [(1u32, 2u32), (2, 2), (3, 2), (2, 5)] {
            for k in 0..50 {
                let mu = 0.1 + 0.2 * k as f64;
                let l = 0.3 + 0.01 * k as f64;
                let t = crate::models::transfer_necklace(&SpectralParam::real(mu * mu), l, b, p).unwrap();
                assert!((t.trace().re - necklace_trace(mu, l, b, p)).abs() < 1e-12);
            }
        }
        assert!((necklace_kappa(1, 2) - 1.25).abs() < 1e-15);
        assert!((necklace_kappa(3, 3) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rkm_band_test_agrees_with_trace() {
        for k in 0..400 {
            let lam = -5.0 + 0.137 * k as f64;
            for q in [-2.0, -0.5, 0.0, 0.8, 3.0] {
                let t = crate::models::transfer_rkm(&SpectralParam::real(lam), q, 2, 1.0).unwrap();
                let by_trace = t.trace().re.abs() <= 2.0;
                let margin = (t.trace().re.abs() - 2.0).abs();
                if margin > 1e-9 {
                    assert_eq!(rkm_band_test(lam, q, 2), by_trace, "lambda {lam} q {q}");
                }
            }
        }
    }

    #[test]
    fn merge_joins_overlaps_only() {
        let m = merge_intervals(vec![(3.0, 4.0), (0.0, 1.0), (0.5, 2.0)], 0.0);
        assert_eq!(m, vec![(0.0, 2.0), (3.0, 4.0)]);
    }
}
