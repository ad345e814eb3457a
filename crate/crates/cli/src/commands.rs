use std::path::Path;
use std::time::Instant;

use epit::eit;
use epit::ep::{EPResult, FULL_COV_LIMIT};
use epit::mcmc::{adapt_proposal, multi_chain_report, run_chains, ChainConfig, MultiChainReport};
use epit::nonlinear::{run_nonlinear, NonlinearResult, TraceRow};
use nalgebra::{DMatrix, DVector};
use serde_json::{json, Value};

use crate::config::Config;
use crate::error::{numerical, CliError};
use crate::output::{matrix_csv, num, read_indexed, sci, Indexed, Out, Summary, Table};
use crate::problem::{self, Kind, Posterior};

pub const TRACE_COLUMNS: [&str; 6] = ["outer", "inner", "e_p_mu", "e_f_mu", "e_p_C", "e_f_C"];

/// How per-unknown vectors map onto output rows. For EIT every mesh node is
/// written, with boundary nodes fixed at the background.
struct Layout {
    ids: Vec<usize>,
    coords: Option<Vec<[f64; 2]>>,
    interior: Option<Vec<usize>>,
    background: f64,
}

impl Layout {
    fn of(post: &Posterior) -> Self {
        match &post.kind {
            Kind::Linear(p) => Layout { ids: (0..p.dim()).collect(), coords: None, interior: None, background: 0.0 },
            Kind::Eit { model, .. } => {
                let mesh = model.problem().mesh();
                Layout {
                    ids: (0..mesh.num_nodes()).collect(),
                    coords: Some(mesh.nodes.clone()),
                    interior: Some(model.interior().to_vec()),
                    background: model.background(),
                }
            }
        }
    }

    fn expand(&self, v: &DVector<f64>, fill: f64) -> DVector<f64> {
        match &self.interior {
            None => v.clone(),
            Some(idx) => {
                let mut full = DVector::from_element(self.ids.len(), fill);
                for (k, &i) in idx.iter().enumerate() {
                    full[i] = v[k];
                }
                full
            }
        }
    }

    fn indexed(&self) -> Indexed<'_> {
        Indexed { ids: &self.ids, coords: self.coords.as_deref() }
    }

    /// `mean.csv` and `std.csv` for a vector over the unknowns.
    fn write_moments(&self, out: &Out, mean: &DVector<f64>, std: &DVector<f64>) -> Result<(), CliError> {
        out.csv("mean.csv", &self.indexed().table("mean", &self.expand(mean, self.background)))?;
        out.csv("std.csv", &self.indexed().table("std", &self.expand(std, 0.0)))
    }

    fn unknown_labels(&self, n: usize) -> Vec<String> {
        match &self.interior {
            Some(idx) => idx.iter().map(|i| i.to_string()).collect(),
            None => (0..n).map(|i| i.to_string()).collect(),
        }
    }
}

enum Fit {
    Linear(EPResult),
    Eit(NonlinearResult),
}

impl Fit {
    fn mean(&self) -> &DVector<f64> {
        match self {
            Fit::Linear(r) => &r.mean,
            Fit::Eit(r) => &r.mean,
        }
    }

    fn cov(&self) -> &DMatrix<f64> {
        match self {
            Fit::Linear(r) => &r.cov,
            Fit::Eit(r) => &r.cov,
        }
    }

    fn std(&self) -> DVector<f64> {
        match self {
            Fit::Linear(r) => r.std(),
            Fit::Eit(r) => r.std(),
        }
    }

    fn trace(&self) -> Vec<TraceRow> {
        match self {
            Fit::Linear(r) => r
                .metrics
                .iter()
                .map(|m| TraceRow { outer: 1, inner: m.sweep, e_p_mu: m.e_p_mu, e_f_mu: m.e_f_mu, e_p_c: m.e_p_c, e_f_c: m.e_f_c })
                .collect(),
            Fit::Eit(r) => r.trace.clone(),
        }
    }
}

fn fit(post: &Posterior, cfg: &Config) -> Result<Fit, CliError> {
    match &post.kind {
        Kind::Linear(p) => p.run_ep(&problem::ep_options(cfg)?).map(Fit::Linear).map_err(numerical),
        Kind::Eit { model, data, .. } => {
            let n = model.interior().len();
            let pr = post.prior;
            let sites = eit::prior_sites(n, pr.lambda, pr.background, pr.floor);
            let opts = problem::nonlinear_options(cfg, post.alpha, pr.floor)?;
            let mu0 = DVector::from_element(n, pr.background);
            run_nonlinear(model, data, sites, &mu0, &opts).map(Fit::Eit).map_err(numerical)
        }
    }
}

fn describe(post: &Posterior, summary: &mut Summary) {
    summary.set("problem", post.name());
    summary.set("unknowns", post.dim());
    summary.set("alpha", num(post.alpha));
    summary.set("lambda", num(post.prior.lambda));
    summary.set("background", num(post.prior.background));
    summary.set("floor", num(post.prior.floor));
    if let Kind::Eit { model, data, synth } = &post.kind {
        summary.set("mesh_nodes", model.problem().mesh().num_nodes());
        summary.set("measurements", data.len());
        if let Some(s) = synth {
            summary.set("data_nodes", s.data_nodes);
            summary.set("noise_std", num(s.noise_std));
            summary.set("data_seed", s.seed);
        }
    }
}

fn trace_table(rows: &[TraceRow]) -> Table {
    let mut t = Table::new(TRACE_COLUMNS);
    for r in rows {
        t.push(vec![r.outer.to_string(), r.inner.to_string(), sci(r.e_p_mu), sci(r.e_f_mu), sci(r.e_p_c), sci(r.e_f_c)]);
    }
    t
}

pub fn ep(cfg: &Config, seed: u64, out: &Out, summary: &mut Summary) -> Result<(), CliError> {
    let start = Instant::now();
    let post = problem::build(cfg, seed)?;
    describe(&post, summary);
    let result = fit(&post, cfg)?;
    let layout = Layout::of(&post);
    let n = post.dim();

    out.csv("trace.csv", &trace_table(&result.trace()))?;
    layout.write_moments(out, result.mean(), &result.std())?;
    if n <= FULL_COV_LIMIT {
        out.write("cov.csv", &matrix_csv(&layout.unknown_labels(n), result.cov()))?;
    }
    summary.set("cov_written", n <= FULL_COV_LIMIT);

    match &result {
        Fit::Linear(r) => {
            summary.set("converged", r.converged);
            summary.set("outer_iterations", 1);
            summary.set("inner_sweeps", r.sweeps_used);
            summary.set("skipped_sites", r.skipped_sites.len());
        }
        Fit::Eit(r) => {
            summary.set("converged", r.converged);
            summary.set("outer_iterations", r.outer.len());
            summary.set("inner_sweeps", r.total_inner_sweeps);
            summary.set("skipped_sites", r.outer.iter().map(|o| o.skipped_sites).sum::<usize>());
            let outer: Vec<Value> = r
                .outer
                .iter()
                .map(|o| {
                    json!({
                        "outer": o.outer,
                        "misfit": num(o.misfit),
                        "residual": num(o.residual),
                        "tau": num(o.tau),
                        "inner_sweeps": o.inner_sweeps,
                        "inner_converged": o.inner_converged,
                    })
                })
                .collect();
            summary.set("outer", outer);
        }
    }
    summary.set("elapsed_s", num(start.elapsed().as_secs_f64()));
    Ok(())
}

fn chain_configs(cfg: &Config, seed: u64, proposal_std: f64, chains: usize, same_seed: bool) -> Result<Vec<ChainConfig>, CliError> {
    let steps = cfg.get_or("mcmc.steps", 100_000usize)?;
    let burn_in = cfg.get_or("mcmc.burn_in", steps / 10)?;
    let thin = cfg.get_or("mcmc.thin", 10usize)?;
    Ok((0..chains)
        .map(|j| {
            let s = if same_seed { seed } else { seed.wrapping_mul(1000).wrapping_add(j as u64) };
            ChainConfig { burn_in, thin, proposal_std, ..ChainConfig::new(steps, s) }
        })
        .collect())
}

pub fn mcmc(cfg: &Config, seed: u64, out: &Out, summary: &mut Summary) -> Result<(), CliError> {
    let start = Instant::now();
    let post = problem::build(cfg, seed)?;
    describe(&post, summary);
    let n = post.dim();
    let pr = post.prior;
    let scale = if pr.background != 0.0 { pr.background.abs() } else { 1.0 };

    let chains = cfg.get_or("mcmc.chains", 8usize)?;
    if chains < 2 {
        return Err(CliError::Config("`mcmc.chains` must be at least 2".into()));
    }
    let same_seed = cfg.flag("mcmc.same_seed", false)?;
    let spread = if same_seed { 0.0 } else { cfg.get_or("mcmc.spread", 0.2)? };
    let centre = match cfg.raw("mcmc.init").unwrap_or("ep") {
        "ep" => fit(&post, cfg)?.mean().clone(),
        "background" => DVector::from_element(n, pr.background),
        other => return Err(CliError::Config(format!("`mcmc.init`: expected ep or background, got `{other}`"))),
    };
    // keep every start strictly admissible
    let lowest = pr.floor + 1e-3 * scale;
    let mid = (chains - 1) as f64 / 2.0;
    let inits: Vec<DVector<f64>> = (0..chains)
        .map(|j| {
            let shift = if mid > 0.0 { spread * scale * (j as f64 - mid) / mid } else { 0.0 };
            centre.map(|v| (v + shift).max(lowest))
        })
        .collect();

    let lp = |x: &DVector<f64>| post.log_posterior(x);
    let mut proposal_std = cfg.positive("mcmc.proposal_std", 0.1 * scale)?;
    if cfg.flag("mcmc.adapt", true)? {
        let pilot_steps = cfg.get_or("mcmc.pilot_steps", 20_000usize)?;
        let max_pilots = cfg.get_or("mcmc.max_pilots", 30usize)?;
        let pilot = ChainConfig { proposal_std, ..ChainConfig::new(1, seed) };
        let ad = adapt_proposal(&pilot, &inits[0], lp, pilot_steps, max_pilots).map_err(numerical)?;
        summary.set("pilot_runs", ad.pilots);
        summary.set("pilot_acceptance", num(ad.acceptance));
        proposal_std = ad.proposal_std;
    }
    let configs = chain_configs(cfg, seed, proposal_std, chains, same_seed)?;
    let runs = run_chains(&configs, &inits, lp).map_err(numerical)?;
    let report = multi_chain_report(&runs).map_err(numerical)?;

    let layout = Layout::of(&post);
    let mut table = Table::new(["chain", "seed", "proposal_std", "acceptance", "samples"]);
    for (j, (c, r)) in configs.iter().zip(&runs).enumerate() {
        let (mean, std) = (layout.expand(&r.mean, layout.background), layout.expand(&r.std, 0.0));
        out.csv(&format!("chain_{j}.csv"), &layout.indexed().columns(&[("mean", &mean), ("std", &std)]))?;
        table.push(vec![j.to_string(), c.seed.to_string(), sci(c.proposal_std), sci(r.acceptance_rate), r.samples_kept.to_string()]);
    }
    out.csv("chains.csv", &table)?;
    layout.write_moments(out, &report.mean, &report.std)?;
    let case = cfg.raw("case").unwrap_or(post.name()).to_string();
    out.csv("table3.csv", &table3(&case, &report))?;

    summary.set("case", case);
    summary.set("chains", chains);
    summary.set("steps", configs[0].steps);
    summary.set("burn_in", configs[0].burn_in);
    summary.set("thin", configs[0].thin);
    summary.set("proposal_std", num(proposal_std));
    summary.set("acceptance", report.acceptance.iter().map(|&a| num(a)).collect::<Vec<_>>());
    summary.set("mean_err", num(report.mean_err));
    summary.set("std_err", num(report.std_err));
    summary.set("r_hat_max", num(report.r_hat_max));
    summary.set("elapsed_s", num(start.elapsed().as_secs_f64()));
    Ok(())
}

fn table3(case: &str, r: &MultiChainReport) -> Table {
    let mut t = Table::new(MultiChainReport::COLUMNS);
    t.push(vec![case.to_string(), sci(r.mean_err), sci(r.std_err), sci(r.r_hat_max)]);
    t
}

fn rel_diff(a: f64, b: f64) -> f64 {
    let den = a.abs().max(b.abs());
    if a == b {
        0.0
    } else {
        (a - b).abs() / den
    }
}

fn norm_rel(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let d = (a - b).norm();
    if d == 0.0 {
        0.0
    } else {
        d / a.norm().max(b.norm())
    }
}

fn read_pair(dir: &Path, name: &str) -> Result<(Vec<String>, DVector<f64>), CliError> {
    read_indexed(&dir.join(name))
}

pub fn compare(cfg: &Config, out: &Out, summary: &mut Summary) -> Result<(), CliError> {
    let dir = |k: &str| cfg.path(k).ok_or_else(|| CliError::Config(format!("`{k}` is required")));
    let (a, b) = (dir("compare.a")?, dir("compare.b")?);
    summary.set("a", a.display().to_string());
    summary.set("b", b.display().to_string());
    let (ids, mean_a) = read_pair(&a, "mean.csv")?;
    let (ids_b, mean_b) = read_pair(&b, "mean.csv")?;
    let (ids_sa, std_a) = read_pair(&a, "std.csv")?;
    let (ids_sb, std_b) = read_pair(&b, "std.csv")?;
    if ids != ids_b || ids != ids_sa || ids != ids_sb {
        return Err(CliError::Shape(format!(
            "{} has {} rows, {} has {} rows (or row labels differ)",
            a.display(),
            ids.len(),
            b.display(),
            ids_b.len()
        )));
    }

    let mut t = Table::new(["index", "mean_a", "mean_b", "mean_rel_diff", "std_a", "std_b", "std_rel_diff"]);
    for (k, id) in ids.iter().enumerate() {
        t.push(vec![
            id.clone(),
            sci(mean_a[k]),
            sci(mean_b[k]),
            sci(rel_diff(mean_a[k], mean_b[k])),
            sci(std_a[k]),
            sci(std_b[k]),
            sci(rel_diff(std_a[k], std_b[k])),
        ]);
    }
    let (mean_err, std_err) = (norm_rel(&mean_a, &mean_b), norm_rel(&std_a, &std_b));
    t.push(vec!["norm".into(), sci(mean_a.norm()), sci(mean_b.norm()), sci(mean_err), sci(std_a.norm()), sci(std_b.norm()), sci(std_err)]);
    out.csv("compare.csv", &t)?;

    let max_abs = |x: &DVector<f64>, y: &DVector<f64>| (x - y).amax();
    summary.set("rows", ids.len());
    summary.set("mean_rel_err", num(mean_err));
    summary.set("std_rel_err", num(std_err));
    summary.set("mean_max_abs_diff", num(max_abs(&mean_a, &mean_b)));
    summary.set("std_max_abs_diff", num(max_abs(&std_a, &std_b)));
    Ok(())
}

pub fn synth(cfg: &Config, seed: u64, out: &Out, summary: &mut Summary) -> Result<(), CliError> {
    let s = problem::synthesize(cfg, seed)?;
    let ids: Vec<usize> = (0..s.mesh.num_nodes()).collect();
    out.write("data.csv", &eit::format_data_csv(&s.cem, &s.data.data))?;
    out.write("clean.csv", &eit::format_data_csv(&s.cem, &s.data.clean))?;
    out.csv("truth.csv", &Indexed { ids: &ids, coords: Some(&s.mesh.nodes) }.table("sigma", &s.truth))?;
    out.write("data_mesh.txt", &eit::format_mesh(&s.mesh))?;

    summary.set("data_nodes", s.mesh.num_nodes());
    summary.set("triangles", s.mesh.triangles.len());
    summary.set("measurements", s.data.data.len());
    summary.set("noise_std", num(s.data.noise_std));
    summary.set("seed", seed);
    summary.set("truth_min", num(s.truth.min()));
    summary.set("truth_max", num(s.truth.max()));
    Ok(())
}

pub fn mesh(cfg: &Config, out: &Out, summary: &mut Summary) -> Result<(), CliError> {
    let mut m = problem::mesh(cfg, "mesh", eit::DESK_INVERSION_NODES)?;
    for _ in 0..cfg.get_or("mesh.refine", 0usize)? {
        m = m.refine(eit::RADIUS);
    }
    m.validate()?;
    out.write("mesh.txt", &eit::format_mesh(&m))?;
    summary.set("nodes", m.num_nodes());
    summary.set("triangles", m.triangles.len());
    summary.set("interior", m.interior.len());
    summary.set("electrodes", m.num_electrodes());
    Ok(())
}
