use num_complex::Complex64;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("matrix is not real unimodular (|det - 1| = {det_defect:.3e}, max |Im| = {imag:.3e})")]
    NotRealUnimodular { det_defect: f64, imag: f64 },

    #[error("Mobius map has a pole at m = {m}")]
    MobiusPole { m: Complex64 },

    #[error("exceptional energy {lambda} (nearest exceptional point {nearest})")]
    ExceptionalEnergy { lambda: f64, nearest: f64 },

    #[error("exceptional energy {lambda} hit at step {step}")]
    ExceptionalAtStep { lambda: f64, step: usize },

    #[error("z = {z} is too close to the Dirichlet spectrum (relative singular value {sigma_ratio:.3e})")]
    NearDirichlet { z: Complex64, sigma_ratio: f64 },

    #[error("DtN off-diagonal entry vanishes at z = {z}")]
    VanishingOffDiagonal { z: Complex64 },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("eigenvalue {lambda} is not simple (multiplicity {multiplicity})")]
    NotSimple { lambda: f64, multiplicity: usize },

    #[error("eigenvalue {lambda} is not reduced: a boundary derivative vanishes")]
    NotReduced { lambda: f64 },

    #[error("trace of the transfer matrix is constant in lambda")]
    ConstantTrace,

    #[error("no contraction detected (n * gamma = {n_gamma:.3e})")]
    NoContraction { n_gamma: f64 },

    #[error("Herglotz property lost at step {step}: Im m = {im:.3e}")]
    HerglotzViolation { step: usize, im: f64 },

    #[error("trajectories are not comparable: {0}")]
    InvalidPair(String),

    #[error("trajectory too short: {len} points after burn-in, need {need}")]
    TooShort { len: usize, need: usize },

    #[error("eigenfunction norm check failed: Im m = {im_m:.6e}, Im z * ||psi||^2 = {expected:.6e}")]
    NormIdentity { im_m: f64, expected: f64 },
}
