//! Command-line front end for `treeloc`: reads a JSON run configuration,
//! dispatches to the library and renders CSV.

pub mod config;
mod csv;

use std::f64::consts::PI;

use num_complex::Complex64;
use thiserror::Error;
use treeloc::decoration::{dirichlet_spectrum, dtn, CompactMetricGraph, GraphSpec};
use treeloc::halfline::{
    eigenfunction_on_edges, m_function, propagate, spectral_average_check, truncated_eigenvalues,
    SpavgOptions, M_TAIL,
};
use treeloc::lyapunov::{contracting_solution, gamma_curve, GammaOptions};
use treeloc::spectrum::{almost_sure_spectrum, periodic_spectrum, BandList, ScanOptions};
use treeloc::{Model, ModelKind, OmegaStream, SpectralParam};

pub use config::{config_hash, parse_config, Command, Overrides, RunConfig};
use csv::{Cell, Csv};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical error: {0}")]
    Numerical(treeloc::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<treeloc::Error> for CliError {
    fn from(e: treeloc::Error) -> Self {
        match e {
            treeloc::Error::InvalidParameter(m) | treeloc::Error::InvalidGraph(m) => CliError::Config(m),
            other => CliError::Numerical(other),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

/// Execute a validated configuration and return the CSV text.
pub fn run(cfg: &RunConfig) -> Result<String, CliError> {
    let model = Model::new(cfg.model.clone()).map_err(|e| CliError::Config(format!("at `model`: {e}")))?;
    let seed = cfg
        .command
        .seed()
        .map_or_else(|| "none".to_string(), |s| s.to_string());
    let mut out = Csv::new(format!(
        "treeloc {VERSION} command={} seed={seed} config={}",
        cfg.command.name(),
        config_hash(cfg)
    ));
    match &cfg.command {
        Command::Bands(p) => {
            let omega1 = p.omega1.unwrap_or(model.interval().0);
            let opts = ScanOptions {
                tol: p.tol,
                grid_points: p.grid,
            };
            let bands = periodic_spectrum(&model, omega1, (p.range[0], p.range[1]), opts)?;
            band_rows(&mut out, &bands);
        }
        Command::Asspectrum(p) => {
            let opts = ScanOptions {
                tol: p.tol,
                grid_points: p.grid,
            };
            let bands = almost_sure_spectrum(&model, p.grid_omega, (p.range[0], p.range[1]), opts)?;
            band_rows(&mut out, &bands);
        }
        Command::Lyapunov(p) => {
            let opts = GammaOptions {
                theta0: p.theta0,
                ..GammaOptions::new(p.n, p.replicas, p.seed)
            };
            out.header(&["lambda", "gamma_hat", "stderr", "n", "replicas", "certified", "exceptional"]);
            for pt in gamma_curve(&model, &p.lambdas, opts, p.nprobe)? {
                let (g, s) = pt.estimate.as_ref().map_or((f64::NAN, f64::NAN), |e| (e.gamma, e.stderr));
                out.row(&[
                    Cell::F(pt.lambda),
                    Cell::F(g),
                    Cell::F(s),
                    Cell::U(p.n),
                    Cell::U(p.replicas),
                    Cell::B(pt.certified),
                    Cell::B(pt.exceptional),
                ]);
            }
        }
        Command::Scan(p) => {
            let omega = match &p.omega {
                Some(values) => OmegaStream {
                    seed: p.seed,
                    values: values.clone(),
                },
                None => model.sample(p.seed, p.n),
            };
            let ev = truncated_eigenvalues(&model, &omega, p.n, (p.range[0], p.range[1]), p.tol)?;
            out.header(&["index", "lambda"]);
            for (k, lam) in ev.iter().enumerate() {
                out.row(&[Cell::U(k + 1), Cell::F(*lam)]);
            }
        }
        Command::Eigfn(p) => {
            let omega = model.sample(p.seed, p.n);
            let lengths = model
                .edge_lengths(&omega.values)
                .ok_or_else(|| CliError::Config("eigfn needs an rlm or rkm model".into()))?;
            let sp = SpectralParam::real(p.lambda);
            let traj = if p.contracting {
                contracting_solution(&model, p.lambda, &omega, p.n)?
            } else {
                propagate(&model, &omega, sp, p.theta0, p.n)?
            };
            out.header(&["edge", "x", "f", "fp", "log_scale"]);
            for s in eigenfunction_on_edges(&traj, sp, &lengths, p.samples_per_edge)? {
                out.row(&[
                    Cell::U(s.edge),
                    Cell::F(s.x),
                    Cell::F(s.f.re),
                    Cell::F(s.fp.re),
                    Cell::F(s.log_scale),
                ]);
            }
        }
        Command::Mfunc(p) => {
            let omega = model.sample(p.seed, p.n);
            let tail = p.tail.map_or(M_TAIL, |t| Complex64::new(t[0], t[1]));
            out.header(&["z_re", "z_im", "m_re", "m_im", "density"]);
            for z in &p.points {
                let m = m_function(&model, &omega, Complex64::new(z[0], z[1]), p.n, tail)?;
                out.row(&[Cell::F(z[0]), Cell::F(z[1]), Cell::F(m.re), Cell::F(m.im), Cell::F(m.im / PI)]);
            }
        }
        Command::Spavg(p) => {
            let opts = SpavgOptions {
                tail_steps: p.tail_steps,
                security_distance: p.security_distance,
                worst_grid: p.worst_grid,
            };
            out.header(&["eps", "average", "worst_param", "worst_integrand"]);
            for r in spectral_average_check(&model, p.lambda, &p.eps, p.samples, p.seed, opts)? {
                out.row(&[Cell::F(r.eps), Cell::F(r.average), Cell::F(r.worst_param), Cell::F(r.worst_integrand)]);
            }
        }
        Command::Dtn(p) => {
            let g = resolve_graph(&model, p.graph.as_ref(), p.param)?;
            out.header(&[
                "z_re", "z_im", "l00_re", "l00_im", "l01_re", "l01_im", "l10_re", "l10_im", "l11_re", "l11_im",
                "status",
            ]);
            for z in &p.points {
                let mut row = vec![Cell::F(z[0]), Cell::F(z[1])];
                match dtn(&g, Complex64::new(z[0], z[1])) {
                    Ok(l) => {
                        for e in [l.a, l.b, l.c, l.d] {
                            row.extend([Cell::F(e.re), Cell::F(e.im)]);
                        }
                        row.push(Cell::S("ok"));
                    }
                    Err(treeloc::Error::NearDirichlet { .. }) => {
                        row.extend(std::iter::repeat(Cell::F(f64::NAN)).take(8));
                        row.push(Cell::S("near_dirichlet"));
                    }
                    Err(e) => return Err(e.into()),
                }
                out.row(&row);
            }
        }
        Command::Dirichlet(p) => {
            let g = resolve_graph(&model, p.graph.as_ref(), p.param)?;
            out.header(&["lambda", "mu", "multiplicity", "reduced"]);
            for e in dirichlet_spectrum(&g, p.mu_max, p.tol) {
                out.row(&[Cell::F(e.lambda), Cell::F(e.mu), Cell::U(e.multiplicity), Cell::B(e.is_reduced())]);
            }
        }
    }
    Ok(out.finish())
}

fn band_rows(out: &mut Csv, bands: &BandList) {
    out.header(&["kind", "lo", "hi"]);
    for (kind, lo, hi) in bands.rows() {
        out.row(&[Cell::S(kind), Cell::F(lo), Cell::F(hi)]);
    }
}

/// Explicit graph, else the model's configured decoration, else the
/// canonical decoration of the model kind at `param` (default: the lower end
/// of the model interval).
fn resolve_graph(model: &Model, graph: Option<&GraphSpec>, param: Option<f64>) -> Result<CompactMetricGraph, CliError> {
    if let Some(spec) = graph {
        return Ok(CompactMetricGraph::new(spec.clone())?);
    }
    if let Some(g) = model.decoration() {
        return Ok(g.clone());
    }
    let cfg = model.config();
    let t = param.unwrap_or(cfg.interval[0]);
    Ok(match cfg.kind {
        ModelKind::Rlm => CompactMetricGraph::single_edge(t)?,
        ModelKind::Rkm => CompactMetricGraph::single_edge(cfg.fixed_length)?,
        ModelKind::LoopDeco => CompactMetricGraph::loop_decoration(t)?,
        ModelKind::Necklace | ModelKind::NecklaceFullLine => CompactMetricGraph::necklace(t, cfg.p)?,
        ModelKind::KirchhoffDeco => {
            return Err(CliError::Config("kirchhoff_deco model has no decoration".into()))
        }
    })
}

/// Parse, run and write the output file when one is configured.
pub fn main_with(text: &str, overrides: &Overrides) -> Result<(RunConfig, String), CliError> {
    let cfg = parse_config(text, overrides)?;
    let csv = run(&cfg)?;
    if let Some(path) = &cfg.output {
        std::fs::write(path, &csv)?;
    }
    Ok((cfg, csv))
}
