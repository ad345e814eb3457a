//! Builds the posterior described by a config file.

use std::path::Path;

use epit::eit::{self, CemProblem, EitModel, Inclusion, Mesh, SynthData};
use epit::ep::{EPOptions, SweepMode};
use epit::linear::LinearLaplaceProblem;
use epit::mcmc::{self, LaplacePrior};
use epit::nonlinear::{NonlinearOptions, StepRule};
use nalgebra::{DMatrix, DVector};

use crate::config::Config;
use crate::error::{numerical, CliError};

pub struct Posterior {
    pub alpha: f64,
    pub prior: LaplacePrior,
    pub kind: Kind,
}

pub enum Kind {
    Linear(LinearLaplaceProblem),
    Eit { model: EitModel, data: DVector<f64>, synth: Option<SynthInfo> },
}

/// Provenance of in-process synthetic data.
pub struct SynthInfo {
    pub data_nodes: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl Posterior {
    pub fn dim(&self) -> usize {
        match &self.kind {
            Kind::Linear(p) => p.dim(),
            Kind::Eit { model, .. } => model.interior().len(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            Kind::Linear(_) => "linear",
            Kind::Eit { .. } => "eit",
        }
    }

    pub fn log_posterior(&self, x: &DVector<f64>) -> f64 {
        match &self.kind {
            Kind::Linear(p) => p.log_posterior(x),
            Kind::Eit { model, data, .. } => mcmc::log_posterior(x, model, data, self.alpha, &self.prior),
        }
    }
}

struct Defaults {
    alpha: f64,
    lambda: f64,
    background: f64,
    floor: f64,
}

fn prior_from(cfg: &Config, d: Defaults) -> Result<(f64, LaplacePrior), CliError> {
    let alpha = cfg.positive("alpha", d.alpha)?;
    let lambda = cfg.get_or("lambda", d.lambda)?;
    if !(lambda >= 0.0) {
        return Err(CliError::Config(format!("`lambda` must be non-negative, got {lambda}")));
    }
    let background = cfg.get_or("background", d.background)?;
    let floor = cfg.bound_or("floor", d.floor)?;
    if floor >= background {
        return Err(CliError::Config("`floor` must lie below `background`".into()));
    }
    Ok((alpha, LaplacePrior { lambda, background, floor }))
}

pub fn build(cfg: &Config, seed: u64) -> Result<Posterior, CliError> {
    match cfg.raw("problem").unwrap_or("eit") {
        "linear" => linear(cfg, seed),
        "eit" => eit_posterior(cfg, seed),
        other => Err(CliError::Config(format!("unknown problem `{other}` (expected linear or eit)"))),
    }
}

fn linear(cfg: &Config, seed: u64) -> Result<Posterior, CliError> {
    let (alpha, prior) = prior_from(cfg, Defaults { alpha: 100.0, lambda: 30.0, background: 1.0, floor: 0.7 })?;
    let n = cfg.get_or("linear.n", 12usize)?;
    let decoupled = cfg.flag("linear.decoupled", false)?;
    let m = if decoupled { n } else { cfg.get_or("linear.m", 20usize)? };
    if n == 0 || m == 0 {
        return Err(CliError::Config("`linear.m` and `linear.n` must be positive".into()));
    }
    let mut p = LinearLaplaceProblem::synthetic(m, n, alpha, prior, seed);
    if decoupled {
        // direct noisy observation of each component
        p.a = DMatrix::identity(n, n);
    }
    Ok(Posterior { alpha, prior, kind: Kind::Linear(p) })
}

pub fn eit_defaults(cfg: &Config) -> Result<(f64, LaplacePrior), CliError> {
    prior_from(cfg, Defaults { alpha: eit::ALPHA, lambda: eit::LAMBDA, background: eit::BACKGROUND, floor: eit::FLOOR })
}

fn electrodes(cfg: &Config) -> Result<usize, CliError> {
    let l = cfg.get_or("electrodes", eit::ELECTRODES)?;
    if l < 2 {
        return Err(CliError::Config(format!("`electrodes` must be at least 2, got {l}")));
    }
    Ok(l)
}

fn numbers(key: &str, text: &str) -> Result<Vec<f64>, CliError> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().map_err(|_| CliError::Config(format!("`{key}`: cannot parse `{t}`"))))
        .collect()
}

/// Electrode count, contact impedances (`impedances`: one value for all or
/// one per electrode) and current patterns (`adjacent`, or `s-t` pairs).
pub fn cem_config(cfg: &Config) -> Result<eit::CemConfig, CliError> {
    let l = electrodes(cfg)?;
    let current = cfg.positive("current", eit::CURRENT)?;
    let z = match cfg.raw("impedances") {
        Some(text) => match numbers("impedances", text)?.as_slice() {
            [one] => vec![*one; l],
            many if many.len() == l => many.to_vec(),
            many => return Err(CliError::Config(format!("`impedances` has {} values for {l} electrodes", many.len()))),
        },
        None if l == eit::ELECTRODES => eit::CONTACT_IMPEDANCES.to_vec(),
        None => vec![eit::CONTACT_IMPEDANCES.iter().sum::<f64>() / eit::ELECTRODES as f64; l],
    };
    let mut c = eit::CemConfig::adjacent(z, current);
    match cfg.raw("patterns").unwrap_or("adjacent") {
        "adjacent" => {}
        list => {
            let bad = |t: &str| CliError::Config(format!("`patterns`: expected `adjacent` or pairs like `0-1, 1-2`, got `{t}`"));
            c.patterns = list
                .split(',')
                .map(|pair| {
                    let (a, b) = pair.trim().split_once('-').ok_or_else(|| bad(pair))?;
                    let (source, sink) = (a.trim().parse().map_err(|_| bad(pair))?, b.trim().parse().map_err(|_| bad(pair))?);
                    Ok(eit::Pattern { source, sink, current })
                })
                .collect::<Result<_, CliError>>()?;
        }
    }
    c.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(c)
}

/// Mesh from the file named by `key`, or generated with `<key>.nodes` nodes.
pub fn mesh(cfg: &Config, key: &str, default_nodes: usize) -> Result<Mesh, CliError> {
    if let Some(path) = cfg.path(key) {
        return Ok(eit::read_mesh(&path)?);
    }
    let nodes = cfg.get_or(&format!("{key}.nodes"), default_nodes)?;
    let l = electrodes(cfg)?;
    // electrodes keep their physical width
    let coverage = l as f64 * eit::ELECTRODE_WIDTH / (2.0 * std::f64::consts::PI * eit::RADIUS);
    Ok(eit::gen_disk_mesh(eit::RADIUS, l, coverage, nodes)?)
}

pub fn inclusion(cfg: &Config, background: f64) -> Result<Vec<Inclusion>, CliError> {
    let d = eit::DESK_INCLUSION;
    let contrast = cfg.positive("inclusion.contrast", d.sigma / eit::BACKGROUND)?;
    let inc = Inclusion {
        center: [cfg.get_or("inclusion.x", d.center[0])?, cfg.get_or("inclusion.y", d.center[1])?],
        radius: cfg.positive("inclusion.radius", d.radius)?,
        sigma: contrast * background,
    };
    Ok(if contrast == 1.0 { Vec::new() } else { vec![inc] })
}

pub struct Synthetic {
    pub mesh: Mesh,
    pub truth: DVector<f64>,
    pub data: SynthData,
    pub cem: eit::CemConfig,
}

/// Data simulated on the `data_mesh` (finer than the inversion mesh by default).
pub fn synthesize(cfg: &Config, seed: u64) -> Result<Synthetic, CliError> {
    let (alpha, prior) = eit_defaults(cfg)?;
    let mesh = mesh(cfg, "data_mesh", eit::DESK_DATA_NODES)?;
    let cem = cem_config(cfg)?;
    let truth = eit::conductivity(&mesh, prior.background, &inclusion(cfg, prior.background)?);
    let noise_std = cfg.get_or("noise_std", 1.0 / alpha.sqrt())?;
    if !(noise_std >= 0.0) {
        return Err(CliError::Config(format!("`noise_std` must be non-negative, got {noise_std}")));
    }
    let problem = CemProblem::new(mesh.clone(), cem.clone()).map_err(|e| CliError::Mesh(e.to_string()))?;
    let data = eit::synth_data(&problem, &truth, noise_std, seed).map_err(numerical)?;
    Ok(Synthetic { mesh, truth, data, cem })
}

fn eit_posterior(cfg: &Config, seed: u64) -> Result<Posterior, CliError> {
    let (alpha, prior) = eit_defaults(cfg)?;
    let inv_mesh = mesh(cfg, "mesh", eit::DESK_INVERSION_NODES)?;
    let cem = cem_config(cfg)?;
    let problem = CemProblem::new(inv_mesh, cem.clone()).map_err(|e| CliError::Mesh(e.to_string()))?;
    let model = EitModel::new(problem, prior.background);
    let (data, synth) = match cfg.path("data") {
        Some(path) => (read_data(&path, &cem)?, None),
        None => {
            let s = synthesize(cfg, seed)?;
            let info = SynthInfo { data_nodes: s.mesh.num_nodes(), noise_std: s.data.noise_std, seed };
            (s.data.data, Some(info))
        }
    };
    Ok(Posterior { alpha, prior, kind: Kind::Eit { model, data, synth } })
}

fn read_data(path: &Path, cem: &eit::CemConfig) -> Result<DVector<f64>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::InputNotFound(format!("{}: {e}", path.display())))?;
    eit::parse_data_csv(cem, &text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn ep_options(cfg: &Config) -> Result<EPOptions, CliError> {
    let d = EPOptions::default();
    let sweep_mode = match cfg.raw("ep.mode").unwrap_or("serial") {
        "serial" => SweepMode::Serial,
        "parallel" => SweepMode::Parallel,
        other => return Err(CliError::Config(format!("`ep.mode`: expected serial or parallel, got `{other}`"))),
    };
    Ok(EPOptions {
        max_sweeps: cfg.get_or("ep.max_sweeps", d.max_sweeps)?,
        min_sweeps: cfg.get_or("ep.min_sweeps", d.min_sweeps)?,
        site_tol: cfg.positive("ep.site_tol", d.site_tol)?,
        sweep_mode,
        ..d
    })
}

pub fn nonlinear_options(cfg: &Config, alpha: f64, floor: f64) -> Result<NonlinearOptions, CliError> {
    let d = NonlinearOptions::new(alpha);
    let step_rule = match cfg.raw("outer.step").unwrap_or("bb-secant") {
        "bb-secant" => StepRule::BarzilaiBorweinSecant,
        "bb" => StepRule::BarzilaiBorwein,
        "unit" => StepRule::Unit,
        other => return Err(CliError::Config(format!("`outer.step`: expected bb-secant, bb or unit, got `{other}`"))),
    };
    Ok(NonlinearOptions {
        max_outer: cfg.get_or("outer.max", d.max_outer)?,
        outer_tol: cfg.positive("outer.tol", d.outer_tol)?,
        ep: ep_options(cfg)?,
        step_rule,
        floor: floor.is_finite().then_some(floor),
        ..d
    })
}
