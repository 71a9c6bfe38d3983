//! Compact decoration graphs with two boundary vertices `o0`, `o1`: Dirichlet
//! spectrum, Dirichlet-to-Neumann map and the transfer matrix built from it.
//!
//! On every edge the solution is `f(s) = alpha cos(w s) + beta sin(w s) / w`.
//! Matching conditions at the vertices give a square system in the `2E`
//! coefficients; it is singular exactly on the Dirichlet spectrum.
//!
//! Boundary "derivatives" follow the transfer-matrix convention:
//! `f'(o0)` is minus the sum of derivatives pointing into `o0` (the ordinary
//! forward derivative along the attachment edge), and `f'(o1)` is the sum of
//! derivatives pointing into `o1` plus `q1 f(o1)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::{gauss_legendre, panels_for};
use crate::sl2::{c, sinc, Mat2, SpectralParam, C64};

/// Singular-value ratio below which the boundary value problem is treated as
/// singular.
pub const NEAR_DIRICHLET_RATIO: f64 = 1e-13;
/// Relative singular-value threshold used to count multiplicities.
pub const MULTIPLICITY_RATIO: f64 = 1e-8;

/// Serializable description of a decoration graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    pub vertices: usize,
    /// `(from, to, length)`; `from == to` is a loop.
    pub edges: Vec<(usize, usize, f64)>,
    pub o0: usize,
    pub o1: usize,
    #[serde(default)]
    pub q1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct EdgeEnd {
    edge: usize,
    at_start: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompactMetricGraph {
    spec: GraphSpec,
    incidence: Vec<Vec<EdgeEnd>>,
}

impl TryFrom<GraphSpec> for CompactMetricGraph {
    type Error = Error;

    fn try_from(spec: GraphSpec) -> Result<Self> {
        CompactMetricGraph::new(spec)
    }
}

impl CompactMetricGraph {
    pub fn new(spec: GraphSpec) -> Result<Self> {
        let n = spec.vertices;
        let bad = |msg: String| Err(Error::InvalidGraph(msg));
        if n < 2 {
            return bad(format!("need at least two vertices, got {n}"));
        }
        if spec.o0 >= n || spec.o1 >= n || spec.o0 == spec.o1 {
            return bad(format!("boundary vertices ({}, {}) invalid", spec.o0, spec.o1));
        }
        if spec.edges.is_empty() {
            return bad("no edges".into());
        }
        if !spec.q1.is_finite() {
            return bad("q1 must be finite".into());
        }
        let mut incidence = vec![Vec::new(); n];
        for (k, &(u, v, len)) in spec.edges.iter().enumerate() {
            if u >= n || v >= n {
                return bad(format!("edge {k} references a missing vertex"));
            }
            if !(len > 0.0) || !len.is_finite() {
                return bad(format!("edge {k} has non-positive length {len}"));
            }
            incidence[u].push(EdgeEnd { edge: k, at_start: true });
            incidence[v].push(EdgeEnd { edge: k, at_start: false });
        }
        if incidence[spec.o0].len() != 1 {
            return bad(format!(
                "o0 must have degree 1, has degree {}",
                incidence[spec.o0].len()
            ));
        }
        let mut seen = vec![false; n];
        let mut stack = vec![spec.o0];
        seen[spec.o0] = true;
        while let Some(v) = stack.pop() {
            for end in &incidence[v] {
                let (a, b, _) = spec.edges[end.edge];
                for w in [a, b] {
                    if !seen[w] {
                        seen[w] = true;
                        stack.push(w);
                    }
                }
            }
        }
        if let Some(v) = seen.iter().position(|s| !s) {
            return bad(format!("vertex {v} is not connected to o0"));
        }
        Ok(Self { spec, incidence })
    }

    /// A single edge of length `len` from `o0` to `o1`.
    pub fn single_edge(len: f64) -> Result<Self> {
        Self::new(GraphSpec {
            vertices: 2,
            edges: vec![(0, 1, len)],
            o0: 0,
            o1: 1,
            q1: 0.0,
        })
    }

    /// Unit edge from `o0` followed by `p` parallel edges of length `l` into `o1`.
    /// `l = 0` collapses to the unit edge alone.
    pub fn necklace(l: f64, p: u32) -> Result<Self> {
        if l == 0.0 {
            return Self::single_edge(1.0);
        }
        if p == 0 {
            return Err(Error::InvalidGraph("necklace needs p >= 1".into()));
        }
        let mut edges = vec![(0, 1, 1.0)];
        edges.extend((0..p).map(|_| (1, 2, l)));
        Self::new(GraphSpec {
            vertices: 3,
            edges,
            o0: 0,
            o1: 2,
            q1: 0.0,
        })
    }

    /// Edge of length `l` with a unit loop attached at its far end `o1`.
    pub fn loop_decoration(l: f64) -> Result<Self> {
        Self::new(GraphSpec {
            vertices: 2,
            edges: vec![(0, 1, l), (1, 1, 1.0)],
            o0: 0,
            o1: 1,
            q1: 0.0,
        })
    }

    pub fn spec(&self) -> &GraphSpec {
        &self.spec
    }

    pub fn edge_count(&self) -> usize {
        self.spec.edges.len()
    }

    pub fn total_length(&self) -> f64 {
        self.spec.edges.iter().map(|e| e.2).sum()
    }

    pub fn max_edge_length(&self) -> f64 {
        self.spec.edges.iter().map(|e| e.2).fold(0.0, f64::max)
    }

    fn len(&self, edge: usize) -> f64 {
        self.spec.edges[edge].2
    }

    /// Coefficients of `(alpha, beta)` giving the value at an edge end.
    fn value_coeffs(&self, end: EdgeEnd, sp: &SpectralParam) -> (C64, C64) {
        if end.at_start {
            (c(1.0), c(0.0))
        } else {
            let l = self.len(end.edge);
            let x = sp.w * l;
            (x.cos(), sinc(x) * l)
        }
    }

    /// Coefficients of `(alpha, beta)` giving the derivative pointing into the
    /// vertex at an edge end.
    fn inward_coeffs(&self, end: EdgeEnd, sp: &SpectralParam) -> (C64, C64) {
        if end.at_start {
            (c(0.0), c(-1.0))
        } else {
            let l = self.len(end.edge);
            let x = sp.w * l;
            (-sp.z * sinc(x) * l, x.cos())
        }
    }

    /// Matching system; returns the matrix and, for each boundary vertex, the
    /// rows whose right-hand side is the prescribed boundary value.
    fn system(&self, sp: &SpectralParam) -> (DMatrix<C64>, [Vec<usize>; 2]) {
        let dim = 2 * self.edge_count();
        let mut a = DMatrix::<C64>::zeros(dim, dim);
        let mut boundary_rows: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
        let flux_scale = 1.0 / (1.0 + sp.w.norm());
        let mut row = 0;
        let put = |a: &mut DMatrix<C64>, row: usize, end: EdgeEnd, (ca, cb): (C64, C64), s: f64| {
            a[(row, 2 * end.edge)] += ca * s;
            a[(row, 2 * end.edge + 1)] += cb * s;
        };
        for (v, ends) in self.incidence.iter().enumerate() {
            let boundary = if v == self.spec.o0 {
                Some(0)
            } else if v == self.spec.o1 {
                Some(1)
            } else {
                None
            };
            match boundary {
                Some(i) => {
                    for &end in ends {
                        put(&mut a, row, end, self.value_coeffs(end, sp), 1.0);
                        boundary_rows[i].push(row);
                        row += 1;
                    }
                }
                None => {
                    let first = ends[0];
                    for &end in &ends[1..] {
                        put(&mut a, row, end, self.value_coeffs(end, sp), 1.0);
                        let (ca, cb) = self.value_coeffs(first, sp);
                        put(&mut a, row, first, (-ca, -cb), 1.0);
                        row += 1;
                    }
                    for &end in ends {
                        put(&mut a, row, end, self.inward_coeffs(end, sp), flux_scale);
                    }
                    row += 1;
                }
            }
        }
        debug_assert_eq!(row, dim);
        (a, boundary_rows)
    }

    fn inward_sum(&self, v: usize, x: &DVector<C64>, sp: &SpectralParam) -> C64 {
        self.incidence[v]
            .iter()
            .map(|&end| {
                let (ca, cb) = self.inward_coeffs(end, sp);
                ca * x[2 * end.edge] + cb * x[2 * end.edge + 1]
            })
            .sum()
    }

    fn boundary_derivatives(&self, x: &DVector<C64>, sp: &SpectralParam, f_o1: C64) -> [C64; 2] {
        [
            -self.inward_sum(self.spec.o0, x, sp),
            self.inward_sum(self.spec.o1, x, sp) + f_o1 * self.spec.q1,
        ]
    }

    /// Real secular matrix at real `mu >= 0`.
    fn real_system(&self, mu: f64) -> DMatrix<f64> {
        let (a, _) = self.system(&SpectralParam::real(mu * mu));
        a.map(|z| z.re)
    }
}

/// Dirichlet-to-Neumann map `[[L00, L01], [L10, L11]]` at `z`.
pub fn dtn(g: &CompactMetricGraph, z: C64) -> Result<Mat2> {
    let sp = SpectralParam::complex(z);
    let (a, rows) = g.system(&sp);
    let sv = a.clone().singular_values();
    let smax = sv.max();
    let smin = sv.min();
    let ratio = if smax > 0.0 { smin / smax } else { 0.0 };
    if ratio < NEAR_DIRICHLET_RATIO {
        return Err(Error::NearDirichlet { z, sigma_ratio: ratio });
    }
    let lu = a.lu();
    let mut cols = [[c(0.0); 2]; 2];
    for j in 0..2 {
        let mut rhs = DVector::<C64>::zeros(2 * g.edge_count());
        for &r in &rows[j] {
            rhs[r] = c(1.0);
        }
        let x = lu
            .solve(&rhs)
            .ok_or(Error::NearDirichlet { z, sigma_ratio: ratio })?;
        let f_o1 = if j == 1 { c(1.0) } else { c(0.0) };
        cols[j] = g.boundary_derivatives(&x, &sp, f_o1);
    }
    Ok(Mat2::new(cols[0][0], cols[1][0], cols[0][1], cols[1][1]))
}

/// Transfer matrix `(f, f')(o0) -> (f, f')(o1)` from a DtN map.
pub fn transfer_from_dtn(l: &Mat2, tol: f64) -> Result<Mat2> {
    let scale = l.max_abs().max(1.0);
    if l.b.norm() <= tol * scale {
        return Err(Error::VanishingOffDiagonal { z: l.b });
    }
    let inv = c(1.0) / l.b;
    Ok(Mat2::new(-l.a * inv, inv, -l.det() * inv, l.d * inv))
}

/// A Dirichlet eigenvalue of a decoration together with the boundary
/// derivatives of an orthonormal basis of its eigenspace.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletEigenvalue {
    pub lambda: f64,
    pub mu: f64,
    pub multiplicity: usize,
    /// `(phi'(o0), phi'(o1))` for each orthonormal eigenfunction.
    pub boundary_derivatives: Vec<[f64; 2]>,
}

impl DirichletEigenvalue {
    /// `Psi_ij = sum_k phi_k'(o_i) phi_k'(o_j)`.
    pub fn psi(&self) -> [[f64; 2]; 2] {
        let mut p = [[0.0; 2]; 2];
        for d in &self.boundary_derivatives {
            for i in 0..2 {
                for j in 0..2 {
                    p[i][j] += d[i] * d[j];
                }
            }
        }
        p
    }

    /// Whether the eigenvalue is visible in the DtN map (a pole).
    pub fn is_reduced(&self) -> bool {
        let p = self.psi();
        let scale = self.lambda.max(1.0);
        p[0][0].abs() + p[1][1].abs() > 1e-12 * scale
    }
}

/// Eigenspace data at a (numerically exact) Dirichlet eigenvalue `mu^2`.
pub fn eigenspace_at(g: &CompactMetricGraph, mu: f64) -> DirichletEigenvalue {
    let a = g.real_system(mu);
    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let smax = svd.singular_values.max();
    let null: Vec<DVector<f64>> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s <= MULTIPLICITY_RATIO * smax)
        .map(|(k, _)| v_t.row(k).transpose())
        .collect();
    let m = null.len();
    let sp = SpectralParam::real(mu * mu);
    let mut gram = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        for j in 0..=i {
            let v = l2_inner(g, mu, &null[i], &null[j]);
            gram[(i, j)] = v;
            gram[(j, i)] = v;
        }
    }
    let mut derivs = Vec::with_capacity(m);
    if m > 0 {
        // Rows of L^{-1} give the orthonormal combinations.
        let chol = nalgebra::Cholesky::new(gram).expect("Gram matrix of independent eigenfunctions");
        let linv = chol
            .l()
            .try_inverse()
            .expect("triangular factor is invertible");
        let raw: Vec<[f64; 2]> = null
            .iter()
            .map(|x| {
                let xc = x.map(c);
                let d = g.boundary_derivatives(&xc, &sp, c(0.0));
                [d[0].re, d[1].re]
            })
            .collect();
        for k in 0..m {
            let mut d = [0.0; 2];
            for (j, r) in raw.iter().enumerate() {
                d[0] += linv[(k, j)] * r[0];
                d[1] += linv[(k, j)] * r[1];
            }
            derivs.push(d);
        }
    }
    DirichletEigenvalue {
        lambda: mu * mu,
        mu,
        multiplicity: m,
        boundary_derivatives: derivs,
    }
}

fn l2_inner(g: &CompactMetricGraph, mu: f64, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    (0..g.edge_count())
        .map(|e| {
            let l = g.len(e);
            let f = |s: f64, v: &DVector<f64>| {
                let t = mu * s;
                let sn = if t == 0.0 { s } else { t.sin() / mu };
                v[2 * e] * t.cos() + v[2 * e + 1] * sn
            };
            gauss_legendre(|s| f(s, x) * f(s, y), 0.0, l, panels_for(mu, l))
        })
        .sum()
}

fn sigma_ratio(a: DMatrix<f64>) -> f64 {
    let sv = a.singular_values();
    sv.min() / sv.max()
}

fn det_sign(a: DMatrix<f64>) -> f64 {
    a.lu().determinant()
}

/// Grid step in `mu` for the secular scan.
pub fn secular_step(g: &CompactMetricGraph) -> f64 {
    let lmax = g.max_edge_length();
    (0.01f64).min(std::f64::consts::PI / (10.0 * lmax * g.edge_count() as f64))
}

/// Dirichlet eigenvalues `lambda = mu^2` with `0 < mu <= mu_max`, counted with
/// multiplicity.
///
/// Odd-multiplicity roots are bracketed by sign changes of the secular
/// determinant; even-multiplicity roots show up only as local minima of the
/// relative smallest singular value, which are refined by golden section.
/// `tol` bounds the bracket width in `mu`.
pub fn dirichlet_spectrum(g: &CompactMetricGraph, mu_max: f64, tol: f64) -> Vec<DirichletEigenvalue> {
    let step = secular_step(g);
    let n = (mu_max / step).ceil() as usize + 1;
    let grid: Vec<f64> = (0..=n).map(|k| (k as f64 * step).min(mu_max + step)).collect();
    let dets: Vec<f64> = grid.iter().map(|&mu| det_sign(g.real_system(mu))).collect();
    let ratios: Vec<f64> = grid.iter().map(|&mu| sigma_ratio(g.real_system(mu))).collect();

    let mut roots: Vec<f64> = Vec::new();
    for k in 0..n {
        if dets[k] == 0.0 && k > 0 {
            roots.push(grid[k]);
        } else if dets[k] * dets[k + 1] < 0.0 {
            roots.push(bisect(|mu| det_sign(g.real_system(mu)), grid[k], grid[k + 1], tol));
        }
    }
    for k in 1..n {
        let local_min = ratios[k] <= ratios[k - 1] && ratios[k] <= ratios[k + 1];
        if !local_min || ratios[k] > 1e-2 {
            continue;
        }
        let (lo, hi) = (grid[k - 1], grid[k + 1]);
        if roots.iter().any(|&r| r >= lo && r <= hi) {
            continue;
        }
        let mu = golden_min(|mu| sigma_ratio(g.real_system(mu)), lo, hi, tol);
        if sigma_ratio(g.real_system(mu)) < 1e-7 {
            roots.push(mu);
        }
    }
    roots.sort_by(f64::total_cmp);
    roots.dedup_by(|a, b| (*a - *b).abs() <= 10.0 * tol);
    roots
        .into_iter()
        .filter(|&mu| mu > 0.0 && mu <= mu_max)
        .map(|mu| eigenspace_at(g, mu))
        .filter(|e| e.multiplicity > 0)
        .collect()
}

/// Smallest `mu_max` returning at least `count` distinct eigenvalues.
pub fn first_dirichlet_eigenvalues(g: &CompactMetricGraph, count: usize, tol: f64) -> Vec<DirichletEigenvalue> {
    let mut mu_max = std::f64::consts::PI * (count as f64 + 2.0) / g.total_length() * 1.1 + 1.0;
    loop {
        let mut eigs = dirichlet_spectrum(g, mu_max, tol);
        if eigs.len() >= count {
            eigs.truncate(count);
            return eigs;
        }
        mu_max *= 1.5;
    }
}

pub(crate) fn bisect<F: FnMut(f64) -> f64>(mut f: F, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let mut flo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= tol || mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm < 0.0) == (flo < 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub(crate) fn golden_min<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = b - r * (b - a);
    let mut x2 = a + r * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..300 {
        if b - a <= tol {
            break;
        }
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - r * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + r * (b - a);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        x1
    } else {
        x2
    }
}

/// Partial sum of the pole expansion
/// `L_ij(z) = L_ij(0) + (-1)^j sum_k z Psi_ij(lambda_k) / (lambda_k (lambda_k - z))`.
pub fn dtn_series(l0: &Mat2, eigs: &[DirichletEigenvalue], z: C64) -> Mat2 {
    let mut s = [[c(0.0); 2]; 2];
    for e in eigs {
        let psi = e.psi();
        let w = z / (e.lambda * (c(e.lambda) - z));
        for i in 0..2 {
            for j in 0..2 {
                let sign = if j == 0 { 1.0 } else { -1.0 };
                s[i][j] += w * psi[i][j] * sign;
            }
        }
    }
    Mat2::new(l0.a + s[0][0], l0.b + s[0][1], l0.c + s[1][0], l0.d + s[1][1])
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesCheck {
    pub direct: Mat2,
    pub series: Mat2,
    pub residual: f64,
}

/// Compare the direct DtN map with its pole expansion over the first `kmax`
/// distinct Dirichlet eigenvalues.
pub fn dtn_series_check(g: &CompactMetricGraph, z: C64, kmax: usize) -> Result<SeriesCheck> {
    let eigs = first_dirichlet_eigenvalues(g, kmax, 1e-12);
    dtn_series_check_with(g, z, &eigs)
}

pub fn dtn_series_check_with(g: &CompactMetricGraph, z: C64, eigs: &[DirichletEigenvalue]) -> Result<SeriesCheck> {
    let direct = dtn(g, z)?;
    let l0 = dtn(g, c(0.0))?;
    let series = dtn_series(&l0, eigs, z);
    let residual = direct.sub(&series).max_abs();
    Ok(SeriesCheck {
        direct,
        series,
        residual,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExceptionalKind {
    Dirichlet,
    OffDiagonalZero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExceptionalSet {
    pub points: Vec<(f64, ExceptionalKind)>,
    pub diagnostics: Vec<String>,
}

impl ExceptionalSet {
    pub fn energies(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.0).collect()
    }
}

/// Energies in `[lo, hi]` where the decoration has no transfer matrix: the
/// Dirichlet spectrum together with the zeros of `L01`.
pub fn exceptional_energies(g: &CompactMetricGraph, range: (f64, f64), tol: f64) -> Result<ExceptionalSet> {
    let (lo, hi) = range;
    if !(lo < hi) {
        return Err(Error::InvalidParameter(format!("empty range [{lo}, {hi}]")));
    }
    let mut points: Vec<(f64, ExceptionalKind)> = Vec::new();
    if hi > 0.0 {
        for e in dirichlet_spectrum(g, hi.sqrt(), 1e-13) {
            if e.lambda >= lo && e.lambda <= hi {
                points.push((e.lambda, ExceptionalKind::Dirichlet));
            }
        }
    }
    let mut cuts: Vec<f64> = vec![lo];
    cuts.extend(points.iter().map(|p| p.0));
    cuts.push(hi);
    let l01 = |lam: f64| dtn(g, c(lam)).map(|l| l.b.re);
    let mut diagnostics = Vec::new();
    let mut zeros = Vec::new();
    for w in cuts.windows(2) {
        let margin = 1e-7 * (1.0 + w[0].abs().max(w[1].abs()));
        let (a, b) = (w[0] + margin, w[1] - margin);
        if !(a < b) {
            continue;
        }
        let m = 64;
        let xs: Vec<f64> = (0..=m).map(|k| a + (b - a) * k as f64 / m as f64).collect();
        let mut vals = Vec::with_capacity(xs.len());
        for &x in &xs {
            vals.push(l01(x).ok());
        }
        for k in 0..m {
            if let (Some(f0), Some(f1)) = (vals[k], vals[k + 1]) {
                if f0 == 0.0 {
                    zeros.push(xs[k]);
                } else if f0 * f1 < 0.0 {
                    let r = bisect(|x| l01(x).map(|v| v).unwrap_or(f64::NAN), xs[k], xs[k + 1], tol);
                    zeros.push(r);
                }
            }
        }
    }
    zeros.sort_by(f64::total_cmp);
    for w in zeros.windows(2) {
        if (w[1] - w[0]).abs() <= 2.0 * tol {
            diagnostics.push(format!("overlapping brackets near {}", w[0]));
        }
    }
    points.extend(zeros.into_iter().map(|z| (z, ExceptionalKind::OffDiagonalZero)));
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(ExceptionalSet { points, diagnostics })
}

/// Limit of the decoration transfer matrix at a simple reduced Dirichlet
/// eigenvalue, with the diagonal predicted from the eigenfunction.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferLimit {
    pub matrix: Mat2,
    /// `(phi'(o0)/phi'(o1), phi'(o1)/phi'(o0))`.
    pub predicted_diagonal: (f64, f64),
    pub eigen: DirichletEigenvalue,
}

/// Richardson-extrapolated limit of `T(lambda_k +- delta)`.
pub fn tm_limit_simple_eigenvalue(g: &CompactMetricGraph, lambda_k: f64, delta: f64) -> Result<TransferLimit> {
    let eigen = eigenspace_at(g, lambda_k.sqrt());
    if eigen.multiplicity != 1 {
        return Err(Error::NotSimple {
            lambda: lambda_k,
            multiplicity: eigen.multiplicity,
        });
    }
    let [d0, d1] = eigen.boundary_derivatives[0];
    let scale = lambda_k.sqrt().max(1.0);
    if d0.abs() < 1e-10 * scale || d1.abs() < 1e-10 * scale {
        return Err(Error::NotReduced { lambda: lambda_k });
    }
    let t = |lam: f64| -> Result<Mat2> { transfer_from_dtn(&dtn(g, c(lam))?, 1e-14) };
    let avg = |h: f64| -> Result<Mat2> {
        let p = t(lambda_k + h)?;
        let m = t(lambda_k - h)?;
        Ok(Mat2::new(
            (p.a + m.a) * 0.5,
            (p.b + m.b) * 0.5,
            (p.c + m.c) * 0.5,
            (p.d + m.d) * 0.5,
        ))
    };
    let big = avg(delta)?;
    let small = avg(0.5 * delta)?;
    let matrix = Mat2::new(
        (small.a * 4.0 - big.a) / 3.0,
        (small.b * 4.0 - big.b) / 3.0,
        (small.c * 4.0 - big.c) / 3.0,
        (small.d * 4.0 - big.d) / 3.0,
    );
    Ok(TransferLimit {
        matrix,
        predicted_diagonal: (d0 / d1, d1 / d0),
        eigen,
    })
}

/// Lower-left entry of the limit transfer matrix at the simple eigenvalue
/// `eigs[k]`, from the pole expansion truncated to `eigs`:
///
/// `T21 = [ -lambda_k sum_{n != k} (a c_n - c a_n)^2 / (lambda_n (lambda_n - lambda_k))
///          + a^2 L11(0) - c^2 L00(0) - 2 a c L01(0) ] / (a c)`
///
/// with `(a, c)` and `(a_n, c_n)` the boundary derivatives at `o0`, `o1`.
pub fn tm_limit_lower_left_series(l0: &Mat2, eigs: &[DirichletEigenvalue], k: usize) -> f64 {
    let ek = &eigs[k];
    let [a, cc] = ek.boundary_derivatives[0];
    let mut sum = 0.0;
    for (n, e) in eigs.iter().enumerate() {
        if n == k {
            continue;
        }
        for d in &e.boundary_derivatives {
            let x = a * d[1] - cc * d[0];
            sum += x * x / (e.lambda * (e.lambda - ek.lambda));
        }
    }
    (-ek.lambda * sum + a * a * l0.d.re - cc * cc * l0.a.re - 2.0 * a * cc * l0.b.re) / (a * cc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn validation_rejects_bad_graphs() {
        let base = GraphSpec {
            vertices: 3,
            edges: vec![(0, 1, 1.0), (1, 2, 1.0)],
            o0: 0,
            o1: 2,
            q1: 0.0,
        };
        assert!(CompactMetricGraph::new(base.clone()).is_ok());
        let mut s = base.clone();
        s.edges[0].2 = 0.0;
        assert!(CompactMetricGraph::new(s).is_err());
        let mut s = base.clone();
        s.edges.push((0, 2, 1.0));
        assert!(CompactMetricGraph::new(s).is_err(), "o0 degree 2");
        let mut s = base.clone();
        s.vertices = 4;
        assert!(CompactMetricGraph::new(s).is_err(), "disconnected");
        let mut s = base;
        s.o1 = 0;
        assert!(CompactMetricGraph::new(s).is_err());
    }

    #[test]
    fn single_edge_dtn_closed_form() {
        let g = CompactMetricGraph::single_edge(1.0).unwrap();
        let z = C64::new(2.3, 0.4);
        let w = z.sqrt();
        let l = dtn(&g, z).unwrap();
        let cot = (w).cos() / (w).sin();
        assert!((l.a + w * cot).norm() < 1e-12);
        assert!((l.b - w / w.sin()).norm() < 1e-12);
        assert!((l.c + w / w.sin()).norm() < 1e-12);
        assert!((l.d - w * cot).norm() < 1e-12);
    }

    #[test]
    fn dtn_at_zero_for_unit_edge() {
        let g = CompactMetricGraph::single_edge(1.0).unwrap();
        let l = dtn(&g, c(0.0)).unwrap();
        assert!((l.a - c(-1.0)).norm() < 1e-14 && (l.b - c(1.0)).norm() < 1e-14);
        assert!((l.c - c(-1.0)).norm() < 1e-14 && (l.d - c(1.0)).norm() < 1e-14);
    }

    #[test]
    fn dtn_rejects_dirichlet_point() {
        let g = CompactMetricGraph::single_edge(1.0).unwrap();
        assert!(matches!(dtn(&g, c(PI * PI)), Err(Error::NearDirichlet { .. })));
    }

    #[test]
    fn transfer_from_dtn_of_edge_is_rotation() {
        let g = CompactMetricGraph::single_edge(0.8).unwrap();
        let sp = SpectralParam::real(5.0);
        let t = transfer_from_dtn(&dtn(&g, sp.z).unwrap(), 1e-14).unwrap();
        let r = crate::sl2::rotation(&sp, 0.8, 1.0);
        assert!(t.sub(&r).max_abs() < 1e-12);
    }

    #[test]
    fn loop_decoration_dtn_closed_form() {
        let l = 0.6;
        let g = CompactMetricGraph::loop_decoration(l).unwrap();
        let mu: f64 = 2.1;
        let d = dtn(&g, c(mu * mu)).unwrap();
        let r = -2.0 * mu * (mu / 2.0).tan();
        let cot = 1.0 / (mu * l).tan();
        let csc = 1.0 / (mu * l).sin();
        assert!((d.a.re + mu * cot).abs() < 1e-11);
        assert!((d.b.re - mu * csc).abs() < 1e-11);
        assert!((d.c.re + mu * csc).abs() < 1e-11);
        assert!((d.d.re - (mu * cot + r)).abs() < 1e-11);
    }

    #[test]
    fn unit_edge_dirichlet_spectrum() {
        let g = CompactMetricGraph::single_edge(1.0).unwrap();
        let eigs = dirichlet_spectrum(&g, 10.0, 1e-13);
        assert_eq!(eigs.len(), 3);
        for (k, e) in eigs.iter().enumerate() {
            let kk = (k + 1) as f64;
            assert!((e.mu - kk * PI).abs() < 1e-10);
            assert_eq!(e.multiplicity, 1);
            let [d0, d1] = e.boundary_derivatives[0];
            // Normalised sqrt(2) sin(k pi s).
            assert!((d0.abs() - 2f64.sqrt() * kk * PI).abs() < 1e-8);
            assert!((d1 / d0 - (-1f64).powi(k as i32 + 1)).abs() < 1e-10);
        }
    }

    #[test]
    fn necklace_unit_length_spectrum_with_multiplicity() {
        let g = CompactMetricGraph::necklace(1.0, 2).unwrap();
        let eigs = dirichlet_spectrum(&g, (50f64).sqrt(), 1e-13);
        let lams: Vec<f64> = eigs.iter().map(|e| e.lambda).collect();
        let expected = [PI * PI / 4.0, PI * PI, 9.0 * PI * PI / 4.0, 4.0 * PI * PI];
        assert_eq!(lams.len(), expected.len(), "{lams:?}");
        for (a, b) in lams.iter().zip(expected) {
            assert!((a - b).abs() < 1e-9 * b);
        }
        assert_eq!(eigs[1].multiplicity, 2);
        assert_eq!(eigs[0].multiplicity, 1);
    }

    #[test]
    fn unit_edge_lower_left_limit_series_sums_to_zero() {
        // At lambda = pi^2 the unit edge transfer matrix is -I; the series
        // terms are 16/(n^2 - 1) for even n, summing to 8 exactly.
        let g = CompactMetricGraph::single_edge(1.0).unwrap();
        let eigs = first_dirichlet_eigenvalues(&g, 40, 1e-13);
        let l0 = dtn(&g, c(0.0)).unwrap();
        let t21 = tm_limit_lower_left_series(&l0, &eigs, 0);
        // Telescoping: sum over m > 20 of 16 / (4 m^2 - 1) = 8 / 41.
        let tail = 8.0 / 41.0;
        // The truncated sum misses `tail`, scaled by -lambda_1 / (a c) = 1/2,
        // and pi^2 tail / (a c) = -tail / 2.
        assert!((t21 + 0.5 * tail).abs() < 1e-10, "{t21} vs {}", -0.5 * tail);
    }
}
