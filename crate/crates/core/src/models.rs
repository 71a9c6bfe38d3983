//! Random model configurations, seeded parameter streams and the one-step
//! transfer matrices `T_lambda(omega_1)` of each model family.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decoration::{dtn, transfer_from_dtn, CompactMetricGraph, GraphSpec};
use crate::error::{Error, Result};
use crate::sl2::{c, dilation, rotation, shear, Mat2, SpectralParam, C64};

/// Nodes of the tabulated inverse CDF.
pub const CDF_NODES: usize = 4096;
/// Relative distance to `pi^2 k^2` treated as exceptional for the loop model.
pub const LOOP_EXCEPTIONAL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Random edge lengths.
    Rlm,
    /// Random vertex potentials on edges of fixed length.
    Rkm,
    /// Random base length, unit loop at each vertex.
    LoopDeco,
    /// Unit edge followed by `p` parallel edges of random length.
    Necklace,
    /// Fixed decoration graph, random vertex potential.
    KirchhoffDeco,
    /// Necklace on the full line (`b = 1`).
    NecklaceFullLine,
}

/// Density of the random parameter on its interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Density {
    #[default]
    Uniform,
    /// Values on a uniform grid spanning the interval, linearly interpolated.
    Tabulated { values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Branching number.
    pub b: u32,
    /// Number of parallel edges for the necklace models.
    #[serde(default = "default_p")]
    pub p: u32,
    /// Support `[t_minus, t_plus]` of the random parameter.
    pub interval: [f64; 2],
    #[serde(default)]
    pub density: Density,
    /// Edge length of the potential model.
    #[serde(default = "default_length")]
    pub fixed_length: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decoration: Option<GraphSpec>,
}

fn default_p() -> u32 {
    2
}

fn default_length() -> f64 {
    1.0
}

impl ModelConfig {
    pub fn new(kind: ModelKind, b: u32, interval: [f64; 2]) -> Self {
        Self {
            kind,
            b,
            p: default_p(),
            interval,
            density: Density::Uniform,
            fixed_length: default_length(),
            decoration: None,
        }
    }

    pub fn rlm(b: u32, lo: f64, hi: f64) -> Self {
        Self::new(ModelKind::Rlm, b, [lo, hi])
    }

    pub fn rkm(b: u32, lo: f64, hi: f64) -> Self {
        Self::new(ModelKind::Rkm, b, [lo, hi])
    }

    pub fn necklace(b: u32, p: u32, lo: f64, hi: f64) -> Self {
        Self {
            p,
            ..Self::new(ModelKind::Necklace, b, [lo, hi])
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        let [lo, hi] = self.interval;
        if self.b < 1 {
            return bad("branching number b must be >= 1".into());
        }
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return bad(format!("interval [{lo}, {hi}] is not a finite ordered pair"));
        }
        match self.kind {
            ModelKind::Rlm | ModelKind::LoopDeco if lo <= 0.0 => {
                return bad(format!("edge lengths must be positive, interval starts at {lo}"));
            }
            ModelKind::Necklace | ModelKind::NecklaceFullLine if lo < 0.0 => {
                return bad(format!("necklace lengths must be >= 0, interval starts at {lo}"));
            }
            _ => {}
        }
        if matches!(self.kind, ModelKind::Necklace | ModelKind::NecklaceFullLine) && self.p < 1 {
            return bad("necklace needs p >= 1".into());
        }
        if self.kind == ModelKind::NecklaceFullLine && self.b != 1 {
            return bad("the full-line necklace has b = 1".into());
        }
        if self.kind == ModelKind::Rkm && !(self.fixed_length > 0.0 && self.fixed_length.is_finite()) {
            return bad(format!("fixed_length must be positive, got {}", self.fixed_length));
        }
        if self.kind == ModelKind::KirchhoffDeco {
            match &self.decoration {
                Some(g) => {
                    CompactMetricGraph::new(g.clone())?;
                }
                None => return bad("kirchhoff_deco needs a decoration graph".into()),
            }
        }
        if let Density::Tabulated { values } = &self.density {
            if values.len() < 2 {
                return bad("tabulated density needs at least two values".into());
            }
            if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return bad("tabulated density must be finite and nonnegative".into());
            }
            if values.iter().sum::<f64>() <= 0.0 {
                return bad("tabulated density has zero mass".into());
            }
        }
        Ok(())
    }
}

/// Inverse-CDF sampler for the model parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSampler {
    lo: f64,
    hi: f64,
    cdf: Option<Vec<f64>>,
}

impl ParamSampler {
    pub fn new(interval: [f64; 2], density: &Density) -> Self {
        let [lo, hi] = interval;
        let cdf = match density {
            Density::Uniform => None,
            Density::Tabulated { values } => Some(tabulate_cdf(values)),
        };
        Self { lo, hi, cdf }
    }

    /// Map `u` in `[0, 1)` to a parameter value.
    pub fn quantile(&self, u: f64) -> f64 {
        let x = match &self.cdf {
            None => u,
            Some(cdf) => {
                let k = cdf.partition_point(|&v| v <= u).clamp(1, cdf.len() - 1);
                let (c0, c1) = (cdf[k - 1], cdf[k]);
                let frac = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.0 };
                ((k - 1) as f64 + frac) / (cdf.len() - 1) as f64
            }
        };
        self.lo + (self.hi - self.lo) * x
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }
}

fn tabulate_cdf(values: &[f64]) -> Vec<f64> {
    let m = values.len() - 1;
    let dens = |x: f64| {
        let pos = x * m as f64;
        let k = (pos.floor() as usize).min(m - 1);
        let f = pos - k as f64;
        values[k] * (1.0 - f) + values[k + 1] * f
    };
    let n = CDF_NODES;
    let mut cdf = vec![0.0; n];
    for k in 1..n {
        let (x0, x1) = ((k - 1) as f64 / (n - 1) as f64, k as f64 / (n - 1) as f64);
        let xm = 0.5 * (x0 + x1);
        // Simpson is exact on each linear piece up to the breakpoints.
        cdf[k] = cdf[k - 1] + (x1 - x0) * (dens(x0) + 4.0 * dens(xm) + dens(x1)) / 6.0;
    }
    let total = cdf[n - 1];
    cdf.iter_mut().for_each(|v| *v /= total);
    cdf
}

/// Derive an independent child seed (SplitMix64 mixing).
pub fn split_seed(seed: u64, index: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(seed ^ mix(index.wrapping_add(0x632B_E59B_D9B4_E019)))
}

/// Lazy i.i.d. parameter draws.
#[derive(Debug, Clone)]
pub struct ParamStream {
    rng: ChaCha8Rng,
    sampler: ParamSampler,
}

impl ParamStream {
    pub fn new(sampler: ParamSampler, seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            sampler,
        }
    }
}

impl Iterator for ParamStream {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        let u: f64 = self.rng.gen();
        Some(self.sampler.quantile(u))
    }
}

/// A materialised realisation `omega_1, ..., omega_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct OmegaStream {
    pub seed: u64,
    pub values: Vec<f64>,
}

impl OmegaStream {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn constant(value: f64, n: usize) -> Self {
        Self {
            seed: 0,
            values: vec![value; n],
        }
    }
}

/// Draw `n` parameters from the model's density.
pub fn sample_omega(config: &ModelConfig, seed: u64, n: usize) -> Result<OmegaStream> {
    config.validate()?;
    let stream = ParamStream::new(ParamSampler::new(config.interval, &config.density), seed);
    Ok(OmegaStream {
        seed,
        values: stream.take(n).collect(),
    })
}

/// `D(b) R_mu(mu l)`.
pub fn transfer_rlm(sp: &SpectralParam, l: f64, b: u32) -> Result<Mat2> {
    Ok(dilation(b as f64)? * rotation(sp, l, 1.0))
}

/// `D(b) S(q) R_mu(mu l)`.
pub fn transfer_rkm(sp: &SpectralParam, q: f64, b: u32, l: f64) -> Result<Mat2> {
    Ok(dilation(b as f64)? * shear(c(q)) * rotation(sp, l, 1.0))
}

/// `D(b) R_{p mu}(l mu) R_mu(mu)`.
pub fn transfer_necklace(sp: &SpectralParam, l: f64, b: u32, p: u32) -> Result<Mat2> {
    Ok(dilation(b as f64)? * rotation(sp, l, p as f64) * rotation(sp, 1.0, 1.0))
}

/// Vertex potential `-2 w tan(w/2)` contributed by a unit loop.
pub fn loop_potential(sp: &SpectralParam) -> C64 {
    -sp.w * 2.0 * (sp.w * 0.5).tan()
}

fn loop_exceptional(sp: &SpectralParam) -> Option<f64> {
    if !sp.is_real() || sp.lambda() <= 0.0 {
        return None;
    }
    let lam = sp.lambda();
    let k = (lam.sqrt() / std::f64::consts::PI).round().max(1.0);
    let nearest = (std::f64::consts::PI * k).powi(2);
    ((lam - nearest).abs() <= LOOP_EXCEPTIONAL_TOL * nearest).then_some(nearest)
}

/// `D(b) S(r_lambda) R_mu(mu l)`; undefined on `{pi^2 k^2}`.
pub fn transfer_loop_deco(sp: &SpectralParam, l: f64, b: u32) -> Result<Mat2> {
    if let Some(nearest) = loop_exceptional(sp) {
        return Err(Error::ExceptionalEnergy {
            lambda: sp.lambda(),
            nearest,
        });
    }
    Ok(dilation(b as f64)? * shear(loop_potential(sp)) * rotation(sp, l, 1.0))
}

/// `D(b) S(q) T_hat`, with `T_hat` the decoration transfer matrix.
pub fn transfer_kirchhoff_deco(q: f64, b: u32, t_hat: &Mat2) -> Result<Mat2> {
    Ok(dilation(b as f64)? * shear(c(q)) * *t_hat)
}

/// Decoration transfer matrix at `sp`.
pub fn decoration_transfer(g: &CompactMetricGraph, sp: &SpectralParam) -> Result<Mat2> {
    let l = dtn(g, sp.z).map_err(|e| match e {
        Error::NearDirichlet { z, .. } if z.im == 0.0 => Error::ExceptionalEnergy {
            lambda: z.re,
            nearest: z.re,
        },
        other => other,
    })?;
    transfer_from_dtn(&l, 1e-12).map_err(|_| Error::ExceptionalEnergy {
        lambda: sp.lambda(),
        nearest: sp.lambda(),
    })
}

/// A validated model, ready to produce transfer matrices.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    sampler: ParamSampler,
    decoration: Option<CompactMetricGraph>,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let decoration = config
            .decoration
            .clone()
            .map(CompactMetricGraph::new)
            .transpose()?;
        let sampler = ParamSampler::new(config.interval, &config.density);
        Ok(Self {
            config,
            sampler,
            decoration,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    pub fn b(&self) -> u32 {
        self.config.b
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.config.interval[0], self.config.interval[1])
    }

    pub fn decoration(&self) -> Option<&CompactMetricGraph> {
        self.decoration.as_ref()
    }

    /// Whether the random parameter is an edge length (so that an edge-wise
    /// eigenfunction reconstruction makes sense).
    pub fn edge_lengths(&self, omega: &[f64]) -> Option<Vec<f64>> {
        match self.config.kind {
            ModelKind::Rlm => Some(omega.to_vec()),
            ModelKind::Rkm => Some(vec![self.config.fixed_length; omega.len()]),
            _ => None,
        }
    }

    pub fn stream(&self, seed: u64) -> ParamStream {
        ParamStream::new(self.sampler.clone(), seed)
    }

    pub fn sample(&self, seed: u64, n: usize) -> OmegaStream {
        OmegaStream {
            seed,
            values: self.stream(seed).take(n).collect(),
        }
    }

    pub fn sampler(&self) -> &ParamSampler {
        &self.sampler
    }

    /// Transfer family at a fixed spectral parameter.
    pub fn at(&self, sp: SpectralParam) -> Result<TransferFamily> {
        let d = dilation(self.config.b as f64)?;
        let inner = match self.config.kind {
            ModelKind::Rlm => Family::Rlm,
            ModelKind::Rkm => Family::Rkm {
                rot: rotation(&sp, self.config.fixed_length, 1.0),
            },
            ModelKind::Necklace | ModelKind::NecklaceFullLine => Family::Necklace {
                p: self.config.p as f64,
                unit: rotation(&sp, 1.0, 1.0),
            },
            ModelKind::LoopDeco => {
                if let Some(nearest) = loop_exceptional(&sp) {
                    return Err(Error::ExceptionalEnergy {
                        lambda: sp.lambda(),
                        nearest,
                    });
                }
                Family::Loop {
                    ds: d * shear(loop_potential(&sp)),
                }
            }
            ModelKind::KirchhoffDeco => {
                let g = self.decoration.as_ref().expect("validated decoration");
                Family::Kirchhoff {
                    t_hat: decoration_transfer(g, &sp)?,
                }
            }
        };
        Ok(TransferFamily { sp, d, inner })
    }

    /// `T_lambda(omega_1)`.
    pub fn transfer(&self, sp: SpectralParam, omega: f64) -> Result<Mat2> {
        Ok(self.at(sp)?.matrix(omega))
    }

    /// Closed-form exceptional energies in `[lo, hi]` for models whose transfer
    /// matrix has poles; empty for the others.
    pub fn exceptional_energies(&self, lo: f64, hi: f64) -> Result<Vec<f64>> {
        Ok(match self.config.kind {
            ModelKind::LoopDeco => {
                let pi = std::f64::consts::PI;
                (1..)
                    .map(|k| (pi * k as f64).powi(2))
                    .take_while(|&l| l <= hi)
                    .filter(|&l| l >= lo)
                    .collect()
            }
            ModelKind::KirchhoffDeco => {
                let g = self.decoration.as_ref().expect("validated decoration");
                crate::decoration::exceptional_energies(g, (lo, hi), 1e-12)?.energies()
            }
            _ => Vec::new(),
        })
    }
}

#[derive(Debug, Clone)]
enum Family {
    Rlm,
    Rkm { rot: Mat2 },
    Necklace { p: f64, unit: Mat2 },
    Loop { ds: Mat2 },
    Kirchhoff { t_hat: Mat2 },
}

/// `omega_1 -> T_lambda(omega_1)` at a fixed spectral parameter.
#[derive(Debug, Clone)]
pub struct TransferFamily {
    sp: SpectralParam,
    d: Mat2,
    inner: Family,
}

impl TransferFamily {
    pub fn spectral_param(&self) -> &SpectralParam {
        &self.sp
    }

    pub fn matrix(&self, omega: f64) -> Mat2 {
        match &self.inner {
            Family::Rlm => self.d * rotation(&self.sp, omega, 1.0),
            Family::Rkm { rot } => self.d * shear(c(omega)) * *rot,
            Family::Necklace { p, unit } => self.d * rotation(&self.sp, omega, *p) * *unit,
            Family::Loop { ds } => *ds * rotation(&self.sp, omega, 1.0),
            Family::Kirchhoff { t_hat } => self.d * shear(c(omega)) * *t_hat,
        }
    }
}
