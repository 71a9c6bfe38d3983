//! Run configuration: one JSON document naming the model, the command and its
//! parameters. Unknown keys are rejected at every level.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use treeloc::decoration::GraphSpec;
use treeloc::ModelConfig;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub command: Command,
    /// CSV destination; standard output when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", content = "params", rename_all = "lowercase", deny_unknown_fields)]
pub enum Command {
    Bands(BandsParams),
    Asspectrum(AsSpectrumParams),
    Lyapunov(LyapunovParams),
    Scan(ScanParams),
    Eigfn(EigfnParams),
    Mfunc(MfuncParams),
    Spavg(SpavgParams),
    Dtn(DtnParams),
    Dirichlet(DirichletParams),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Bands(_) => "bands",
            Command::Asspectrum(_) => "asspectrum",
            Command::Lyapunov(_) => "lyapunov",
            Command::Scan(_) => "scan",
            Command::Eigfn(_) => "eigfn",
            Command::Mfunc(_) => "mfunc",
            Command::Spavg(_) => "spavg",
            Command::Dtn(_) => "dtn",
            Command::Dirichlet(_) => "dirichlet",
        }
    }

    /// The seed of a stochastic command; `None` for deterministic ones.
    pub fn seed(&self) -> Option<u64> {
        match self {
            Command::Lyapunov(p) => Some(p.seed),
            Command::Scan(p) => Some(p.seed),
            Command::Eigfn(p) => Some(p.seed),
            Command::Mfunc(p) => Some(p.seed),
            Command::Spavg(p) => Some(p.seed),
            _ => None,
        }
    }
}

fn default_tol() -> f64 {
    1e-12
}

fn default_nprobe() -> usize {
    8
}

fn default_samples_per_edge() -> usize {
    16
}

fn default_tail_steps() -> usize {
    400
}

fn default_security() -> Option<f64> {
    Some(0.5)
}

fn default_worst_grid() -> usize {
    4096
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandsParams {
    /// Single-site parameter of the periodic operator; defaults to the lower
    /// end of the model interval.
    #[serde(default)]
    pub omega1: Option<f64>,
    pub range: [f64; 2],
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub grid: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AsSpectrumParams {
    pub range: [f64; 2],
    pub grid_omega: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub grid: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LyapunovParams {
    pub lambdas: Vec<f64>,
    pub n: usize,
    pub replicas: usize,
    pub seed: u64,
    #[serde(default)]
    pub theta0: f64,
    #[serde(default = "default_nprobe")]
    pub nprobe: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanParams {
    /// Number of generations in the truncation.
    pub n: usize,
    pub range: [f64; 2],
    pub seed: u64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Explicit parameters replacing the seeded draws.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EigfnParams {
    pub lambda: f64,
    pub n: usize,
    pub seed: u64,
    #[serde(default)]
    pub theta0: f64,
    #[serde(default = "default_samples_per_edge")]
    pub samples_per_edge: usize,
    /// Follow the decaying solution instead of the one with angle `theta0`.
    #[serde(default)]
    pub contracting: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MfuncParams {
    /// Spectral parameters as `[re, im]` with `im > 0`.
    pub points: Vec<[f64; 2]>,
    pub n: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpavgParams {
    pub lambda: f64,
    pub eps: Vec<f64>,
    pub samples: usize,
    pub seed: u64,
    #[serde(default = "default_tail_steps")]
    pub tail_steps: usize,
    #[serde(default = "default_security")]
    pub security_distance: Option<f64>,
    #[serde(default = "default_worst_grid")]
    pub worst_grid: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DtnParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<GraphSpec>,
    /// Parameter of the model's own decoration when no graph is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub param: Option<f64>,
    pub points: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirichletParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<GraphSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub param: Option<f64>,
    pub mu_max: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

/// Command-line overrides applied to the parsed document before validation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<String>,
    pub range: Option<[f64; 2]>,
}

impl Overrides {
    fn is_empty(&self) -> bool {
        self.seed.is_none() && self.out.is_none() && self.range.is_none()
    }
}

fn describe<E: std::fmt::Display>(err: serde_path_to_error::Error<E>) -> String {
    let path = err.path().to_string();
    if path == "." {
        err.into_inner().to_string()
    } else {
        format!("at `{path}`: {}", err.into_inner())
    }
}

/// Parse and validate a configuration document, applying `overrides`.
pub fn parse_config(text: &str, overrides: &Overrides) -> Result<RunConfig, CliError> {
    let cfg = if overrides.is_empty() {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| CliError::Config(describe(e)))?
    } else {
        let mut doc: Value = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        apply_overrides(&mut doc, overrides)?;
        serde_path_to_error::deserialize(doc).map_err(|e| CliError::Config(describe(e)))?
    };
    validate(&cfg)?;
    Ok(cfg)
}

fn apply_overrides(doc: &mut Value, o: &Overrides) -> Result<(), CliError> {
    let root = doc
        .as_object_mut()
        .ok_or_else(|| CliError::Config("configuration must be a JSON object".into()))?;
    if let Some(out) = &o.out {
        root.insert("output".into(), Value::from(out.clone()));
    }
    if o.seed.is_none() && o.range.is_none() {
        return Ok(());
    }
    let params = root
        .get_mut("command")
        .and_then(|c| c.as_object_mut())
        .ok_or_else(|| CliError::Config("at `command`: missing or not an object".into()))?
        .entry("params")
        .or_insert_with(|| Value::Object(Default::default()))
        .as_object_mut()
        .ok_or_else(|| CliError::Config("at `command.params`: not an object".into()))?;
    if let Some(seed) = o.seed {
        params.insert("seed".into(), Value::from(seed));
    }
    if let Some([lo, hi]) = o.range {
        params.insert("range".into(), serde_json::json!([lo, hi]));
    }
    Ok(())
}

fn check_range(r: [f64; 2], field: &str) -> Result<(), CliError> {
    if !(r[0].is_finite() && r[1].is_finite() && r[0] < r[1]) {
        return Err(CliError::Config(format!(
            "at `command.params.{field}`: need lo < hi, got [{}, {}]",
            r[0], r[1]
        )));
    }
    Ok(())
}

fn check_positive(x: usize, field: &str) -> Result<(), CliError> {
    if x == 0 {
        return Err(CliError::Config(format!("at `command.params.{field}`: must be positive")));
    }
    Ok(())
}

fn validate(cfg: &RunConfig) -> Result<(), CliError> {
    cfg.model
        .validate()
        .map_err(|e| CliError::Config(format!("at `model`: {e}")))?;
    match &cfg.command {
        Command::Bands(p) => check_range(p.range, "range"),
        Command::Asspectrum(p) => {
            check_range(p.range, "range")?;
            check_positive(p.grid_omega, "grid_omega")
        }
        Command::Lyapunov(p) => {
            check_positive(p.lambdas.len(), "lambdas")?;
            check_positive(p.replicas, "replicas")
        }
        Command::Scan(p) => {
            check_range(p.range, "range")?;
            check_positive(p.n, "n")
        }
        Command::Eigfn(p) => check_positive(p.n, "n"),
        Command::Mfunc(p) => {
            check_positive(p.points.len(), "points")?;
            if let Some(bad) = p.points.iter().position(|z| !(z[1] > 0.0)) {
                return Err(CliError::Config(format!(
                    "at `command.params.points[{bad}]`: imaginary part must be positive"
                )));
            }
            Ok(())
        }
        Command::Spavg(p) => {
            check_positive(p.eps.len(), "eps")?;
            check_positive(p.samples, "samples")?;
            if let Some(bad) = p.eps.iter().position(|&e| !(e > 0.0)) {
                return Err(CliError::Config(format!(
                    "at `command.params.eps[{bad}]`: must be positive"
                )));
            }
            Ok(())
        }
        Command::Dtn(p) => check_positive(p.points.len(), "points"),
        Command::Dirichlet(p) => {
            if !(p.mu_max > 0.0) {
                return Err(CliError::Config("at `command.params.mu_max`: must be positive".into()));
            }
            Ok(())
        }
    }
}

/// SHA-256 of the canonical serialisation, ignoring the output path.
pub fn config_hash(cfg: &RunConfig) -> String {
    let canonical = RunConfig {
        output: None,
        ..cfg.clone()
    };
    let json = serde_json::to_string(&canonical).expect("config serialises");
    Sha256::digest(json.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const BANDS: &str = r#"{
        "model": {"kind": "rlm", "b": 2, "interval": [1.0, 1.0]},
        "command": {"name": "bands", "params": {"range": [0.0, 45.0]}}
    }"#;

    #[test]
    fn parses_minimal_config() {
        let cfg = parse_config(BANDS, &Overrides::default()).unwrap();
        assert_eq!(cfg.command.name(), "bands");
        assert_eq!(cfg.command.seed(), None);
    }

    #[test]
    fn unknown_keys_are_reported_with_path() {
        let text = BANDS.replace("\"range\"", "\"rnage\"");
        let err = parse_config(&text, &Overrides::default()).unwrap_err().to_string();
        assert!(err.contains("rnage"), "{err}");
        let text = BANDS.replace("\"b\": 2", "\"b\": 2, \"extra\": 1");
        let err = parse_config(&text, &Overrides::default()).unwrap_err().to_string();
        assert!(err.contains("model") && err.contains("extra"), "{err}");
    }

    #[test]
    fn syntax_errors_carry_line_numbers() {
        let err = parse_config("{\n\"model\": ,\n}", &Overrides::default()).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn stochastic_commands_need_a_seed() {
        let text = r#"{"model": {"kind": "rlm", "b": 2, "interval": [1.0, 2.0]},
            "command": {"name": "lyapunov", "params": {"lambdas": [1.0], "n": 1000, "replicas": 2}}}"#;
        let err = parse_config(text, &Overrides::default()).unwrap_err().to_string();
        assert!(err.contains("seed"), "{err}");
        let cfg = parse_config(text, &Overrides { seed: Some(5), ..Default::default() }).unwrap();
        assert_eq!(cfg.command.seed(), Some(5));
    }

    #[test]
    fn seed_override_rejected_for_deterministic_command() {
        let err = parse_config(BANDS, &Overrides { seed: Some(1), ..Default::default() });
        assert!(matches!(err, Err(CliError::Config(_))));
    }

    #[test]
    fn range_and_output_overrides() {
        let o = Overrides {
            range: Some([1.0, 2.0]),
            out: Some("x.csv".into()),
            ..Default::default()
        };
        let cfg = parse_config(BANDS, &o).unwrap();
        assert_eq!(cfg.output.as_deref(), Some("x.csv"));
        match cfg.command {
            Command::Bands(p) => assert_eq!(p.range, [1.0, 2.0]),
            _ => unreachable!(),
        }
    }

    #[test]
    fn invalid_model_is_a_config_error() {
        let text = BANDS.replace("[1.0, 1.0]", "[0.0, 1.0]");
        assert!(matches!(parse_config(&text, &Overrides::default()), Err(CliError::Config(_))));
    }

    #[test]
    fn hash_ignores_output() {
        let a = parse_config(BANDS, &Overrides::default()).unwrap();
        let b = RunConfig {
            output: Some("elsewhere.csv".into()),
            ..a.clone()
        };
        assert_eq!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&a).len(), 64);
    }
}
