//! WebAssembly entry points for the browser demo: a single tilted moment
//! computation, a two-dimensional EP fit against brute-force integration,
//! and a coarse EIT reconstruction.
//!
//! Every entry point has a plain Rust counterpart returning `Result<_, String>`
//! so the numerics can be tested natively.

use epit::eit::{self, CemProblem, EitModel, Inclusion};
use epit::ep::EPOptions;
use epit::linear::LinearLaplaceProblem;
use epit::mcmc::LaplacePrior;
use epit::nonlinear::{run_nonlinear, NonlinearOptions};
use epit::tilted::LaplacePositivityFactor;
use nalgebra::{DMatrix, DVector};
use wasm_bindgen::prelude::*;

fn js(e: String) -> JsError {
    JsError::new(&e)
}

fn ln_normal(s: f64, m: f64, v: f64) -> f64 {
    -0.5 * (s - m).powi(2) / v - 0.5 * (2.0 * std::f64::consts::PI * v).ln()
}

fn ln_site(s: f64, lambda: f64, background: f64, floor: f64) -> f64 {
    if s < floor {
        f64::NEG_INFINITY
    } else {
        -lambda * (s - background).abs()
    }
}

/// Cavity, tilted and projected densities of one Laplace-positivity site.
#[wasm_bindgen(getter_with_clone)]
pub struct TiltedCurve {
    pub xs: Vec<f64>,
    pub cavity: Vec<f64>,
    pub tilted: Vec<f64>,
    pub projected: Vec<f64>,
    pub mean: f64,
    pub var: f64,
    pub log_z: f64,
}

pub fn compute_tilted_curve(m: f64, v: f64, lambda: f64, background: f64, floor: f64, points: usize) -> Result<TiltedCurve, String> {
    if !(v > 0.0) || !(lambda >= 0.0) || points < 2 {
        return Err("need v > 0, lambda >= 0 and at least two points".into());
    }
    let f = LaplacePositivityFactor::new(lambda, background, floor);
    let t = f.moments(m, v).map_err(|e| e.to_string())?;
    let sd = v.sqrt();
    let tsd = t.var.sqrt();
    let lo = (m - 6.0 * sd).min(t.mean - 6.0 * tsd).min(background);
    let hi = (m + 6.0 * sd).max(t.mean + 6.0 * tsd).max(background);
    let mut xs: Vec<f64> = (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect();
    // the density jumps at the floor; keep the edge on the grid
    if lo < floor && floor < hi {
        let k = xs.partition_point(|&x| x < floor);
        if xs[k] != floor {
            xs.insert(k, floor);
        }
    }
    let density = |ln: f64| if ln == f64::NEG_INFINITY { 0.0 } else { ln.exp() };
    Ok(TiltedCurve {
        cavity: xs.iter().map(|&s| density(ln_normal(s, m, v))).collect(),
        tilted: xs.iter().map(|&s| density(ln_site(s, lambda, background, floor) + ln_normal(s, m, v) - t.log_z)).collect(),
        projected: xs.iter().map(|&s| density(ln_normal(s, t.mean, t.var))).collect(),
        xs,
        mean: t.mean,
        var: t.var,
        log_z: t.log_z,
    })
}

#[wasm_bindgen]
pub fn tilted_curve(m: f64, v: f64, lambda: f64, background: f64, floor: f64, points: usize) -> Result<TiltedCurve, JsError> {
    compute_tilted_curve(m, v, lambda, background, floor, points).map_err(js)
}

/// EP against brute-force integration for `b = Ax + e` in two dimensions,
/// `A = [[1, ρ], [ρ, 1]]`, with the Laplace-positivity prior around 1.
#[wasm_bindgen(getter_with_clone)]
pub struct ToyComparison {
    pub ep_mean: Vec<f64>,
    pub ep_std: Vec<f64>,
    pub exact_mean: Vec<f64>,
    pub exact_std: Vec<f64>,
    /// Row-major posterior density on the plotting grid, scaled to a peak of 1.
    pub density: Vec<f64>,
    /// `[x0, x1, y0, y1]` of the grid.
    pub extent: Vec<f64>,
    pub resolution: usize,
    pub sweeps: usize,
}

pub const TOY_TRUTH: [f64; 2] = [1.3, 0.85];

pub fn compute_toy(rho: f64, lambda: f64, floor: f64, alpha: f64, resolution: usize) -> Result<ToyComparison, String> {
    if !(rho.abs() < 1.0) || !(alpha > 0.0) || !(lambda >= 0.0) || resolution < 8 {
        return Err("need |rho| < 1, alpha > 0, lambda >= 0 and resolution >= 8".into());
    }
    let prior = LaplacePrior { lambda, background: 1.0, floor };
    let a = DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]);
    let data = &a * DVector::from_column_slice(&TOY_TRUTH);
    let p = LinearLaplaceProblem { a, data, alpha, prior };
    let ep = p.run_ep(&EPOptions::default()).map_err(|e| e.to_string())?;
    let ep_std = ep.std();

    let half = |i: usize| 7.0 * ep_std[i];
    let (x0, x1) = ((ep.mean[0] - half(0)).max(floor), ep.mean[0] + half(0));
    let (y0, y1) = ((ep.mean[1] - half(1)).max(floor), ep.mean[1] + half(1));
    let coord = |lo: f64, hi: f64, i: usize| lo + (hi - lo) * (i as f64 + 0.5) / resolution as f64;
    let mut ln = vec![0.0; resolution * resolution];
    for r in 0..resolution {
        for c in 0..resolution {
            ln[r * resolution + c] = p.log_posterior(&DVector::from_column_slice(&[coord(x0, x1, c), coord(y0, y1, r)]));
        }
    }
    let peak = ln.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let density: Vec<f64> = ln.iter().map(|&l| (l - peak).exp()).collect();
    let (mut z, mut s1, mut s2) = (0.0, [0.0; 2], [0.0; 2]);
    for r in 0..resolution {
        for c in 0..resolution {
            let w = density[r * resolution + c];
            let x = [coord(x0, x1, c), coord(y0, y1, r)];
            z += w;
            for k in 0..2 {
                s1[k] += w * x[k];
                s2[k] += w * x[k] * x[k];
            }
        }
    }
    let exact_mean: Vec<f64> = s1.iter().map(|s| s / z).collect();
    let exact_std: Vec<f64> = (0..2).map(|k| (s2[k] / z - exact_mean[k].powi(2)).max(0.0).sqrt()).collect();
    Ok(ToyComparison {
        ep_mean: ep.mean.iter().copied().collect(),
        ep_std: ep_std.iter().copied().collect(),
        exact_mean,
        exact_std,
        density,
        extent: vec![x0, x1, y0, y1],
        resolution,
        sweeps: ep.sweeps_used,
    })
}

#[wasm_bindgen]
pub fn toy_ep(rho: f64, lambda: f64, floor: f64, alpha: f64, resolution: usize) -> Result<ToyComparison, JsError> {
    compute_toy(rho, lambda, floor, alpha, resolution).map_err(js)
}

/// Nodal fields on the inversion mesh, ready for drawing.
#[wasm_bindgen(getter_with_clone)]
pub struct EitReconstruction {
    /// Interleaved `x, y` per node.
    pub nodes: Vec<f64>,
    /// Three node indices per triangle.
    pub triangles: Vec<u32>,
    pub truth: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub outer_iterations: usize,
    pub inner_sweeps: usize,
    pub converged: bool,
}

/// Simulates data for one circular inclusion on a mesh twice as fine as the
/// inversion mesh, then runs recursive-linearization EP.
pub fn compute_eit(x: f64, y: f64, radius: f64, contrast: f64, nodes: usize, seed: u64) -> Result<EitReconstruction, String> {
    if !(radius > 0.0) || !(contrast > 0.0) {
        return Err("radius and contrast must be positive".into());
    }
    let err = |e: &dyn std::fmt::Display| e.to_string();
    let mesh = |n: usize| eit::gen_disk_mesh(eit::RADIUS, eit::ELECTRODES, eit::electrode_coverage(), n).map_err(|e| err(&e));
    let inc = [Inclusion { center: [x, y], radius, sigma: contrast * eit::BACKGROUND }];

    let fine = CemProblem::new(mesh(2 * nodes)?, eit::default_config()).map_err(|e| err(&e))?;
    let truth_fine = eit::conductivity(fine.mesh(), eit::BACKGROUND, &inc);
    let data = eit::synth_data(&fine, &truth_fine, 1.0 / eit::ALPHA.sqrt(), seed).map_err(|e| err(&e))?;

    let coarse = mesh(nodes)?;
    let truth = eit::conductivity(&coarse, eit::BACKGROUND, &inc);
    let model = EitModel::new(CemProblem::new(coarse, eit::default_config()).map_err(|e| err(&e))?, eit::BACKGROUND);
    let n = model.interior().len();
    let sites = eit::prior_sites(n, eit::LAMBDA, eit::BACKGROUND, eit::FLOOR);
    let mut opts = NonlinearOptions::new(eit::ALPHA);
    opts.floor = Some(eit::FLOOR);
    let r = run_nonlinear(&model, &data.data, sites, &DVector::from_element(n, eit::BACKGROUND), &opts).map_err(|e| err(&e))?;

    let m = model.problem().mesh();
    let mut std = DVector::zeros(m.num_nodes());
    for (k, &i) in model.interior().iter().enumerate() {
        std[i] = r.cov[(k, k)].max(0.0).sqrt();
    }
    Ok(EitReconstruction {
        nodes: m.nodes.iter().flatten().copied().collect(),
        triangles: m.triangles.iter().flatten().map(|&i| i as u32).collect(),
        truth: truth.iter().copied().collect(),
        mean: model.full_sigma(&r.mean).iter().copied().collect(),
        std: std.iter().copied().collect(),
        outer_iterations: r.outer.len(),
        inner_sweeps: r.total_inner_sweeps,
        converged: r.converged,
    })
}

#[wasm_bindgen]
pub fn eit_reconstruct(x: f64, y: f64, radius: f64, contrast: f64, nodes: usize, seed: u64) -> Result<EitReconstruction, JsError> {
    compute_eit(x, y, radius, contrast, nodes, seed).map_err(js)
}
