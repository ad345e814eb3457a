use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use super::cem::{CemConfig, CemError, CemProblem};
use super::mesh::Mesh;
use crate::ep::Site;
use crate::nonlinear::{ForwardModel, ModelError};
use crate::tilted::LaplacePositivityFactor;

/// Forward map on the interior-node conductivities, boundary nodes held at
/// the background value.
#[derive(Debug, Clone)]
pub struct EitModel {
    problem: CemProblem,
    background: f64,
}

impl EitModel {
    pub fn new(problem: CemProblem, background: f64) -> Self {
        Self { problem, background }
    }

    pub fn problem(&self) -> &CemProblem {
        &self.problem
    }

    pub fn background(&self) -> f64 {
        self.background
    }

    pub fn interior(&self) -> &[usize] {
        &self.problem.mesh().interior
    }

    /// Nodal conductivity with `x` on the interior nodes.
    pub fn full_sigma(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut s = DVector::from_element(self.problem.mesh().num_nodes(), self.background);
        for (k, &v) in self.interior().iter().enumerate() {
            s[v] = x[k];
        }
        s
    }

    fn check(&self, x: &DVector<f64>) -> Result<(), ModelError> {
        let n = self.interior().len();
        if x.len() != n {
            return Err(ModelError::DimensionMismatch { expected: n, found: x.len() });
        }
        Ok(())
    }
}

fn model_error(e: CemError) -> ModelError {
    match e {
        CemError::InvalidConductivity { .. } => ModelError::NotAdmissible(e.to_string()),
        other => ModelError::Solve(other.to_string()),
    }
}

impl ForwardModel for EitModel {
    fn dims(&self) -> (usize, usize) {
        (self.problem.config().num_measurements(), self.interior().len())
    }

    fn evaluate(&self, x: &DVector<f64>) -> Result<DVector<f64>, ModelError> {
        self.check(x)?;
        self.problem.measurements(&self.full_sigma(x)).map_err(model_error)
    }

    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>, ModelError> {
        Ok(self.evaluate_with_jacobian(x)?.1)
    }

    fn evaluate_with_jacobian(&self, x: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>), ModelError> {
        self.check(x)?;
        let (f, jac) = self.problem.jacobian(&self.full_sigma(x)).map_err(model_error)?;
        Ok((f, jac.select_columns(self.interior())))
    }
}

/// One coordinate site per unknown, each carrying the Laplace prior with
/// positivity constraint.
pub fn prior_sites(n: usize, lambda: f64, background: f64, floor: f64) -> Vec<Site> {
    let factor = Arc::new(LaplacePositivityFactor::new(lambda, background, floor));
    (0..n).map(|j| Site::coordinate(n, j, factor.clone())).collect()
}

/// Disk of constant conductivity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Inclusion {
    pub center: [f64; 2],
    pub radius: f64,
    pub sigma: f64,
}

impl Inclusion {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        (p[0] - self.center[0]).hypot(p[1] - self.center[1]) <= self.radius
    }
}

/// Nodal conductivity: background with inclusions painted on top (later
/// inclusions win).
pub fn conductivity(mesh: &Mesh, background: f64, inclusions: &[Inclusion]) -> DVector<f64> {
    DVector::from_iterator(
        mesh.num_nodes(),
        mesh.nodes.iter().map(|&p| inclusions.iter().rev().find(|c| c.contains(p)).map_or(background, |c| c.sigma)),
    )
}

pub fn inclusion_nodes(mesh: &Mesh, inclusion: &Inclusion) -> BTreeSet<usize> {
    (0..mesh.num_nodes()).filter(|&v| inclusion.contains(mesh.nodes[v])).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub data: DVector<f64>,
    /// Noise-free forward output.
    pub clean: DVector<f64>,
    pub noise_std: f64,
    pub seed: u64,
}

/// Forward output on `problem` (meant to be finer than the inversion mesh)
/// plus i.i.d. Gaussian noise.
pub fn synth_data(problem: &CemProblem, sigma_true: &DVector<f64>, noise_std: f64, seed: u64) -> Result<SynthData, CemError> {
    if !(noise_std >= 0.0) || !noise_std.is_finite() {
        return Err(CemError::Config("noise standard deviation must be finite and non-negative".into()));
    }
    let clean = problem.measurements(sigma_true)?;
    let mut data = clean.clone();
    if noise_std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, noise_std).expect("valid normal");
        for d in data.iter_mut() {
            *d += normal.sample(&mut rng);
        }
    }
    Ok(SynthData { data, clean, noise_std, seed })
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DataError {
    #[error("data parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("missing measurement for pattern {pattern}, electrode {electrode}")]
    Missing { pattern: usize, electrode: usize },
}

pub fn format_data_csv(cfg: &CemConfig, data: &DVector<f64>) -> String {
    let mut s = String::from("pattern_id,electrode_id,voltage\n");
    for (&(p, l), v) in cfg.measurement_layout().iter().zip(data.iter()) {
        let _ = writeln!(s, "{p},{l},{v:.17e}");
    }
    s
}

/// Reads measurements in any row order; every `(pattern, electrode)` of the
/// configuration's layout must be present exactly once.
pub fn parse_data_csv(cfg: &CemConfig, text: &str) -> Result<DVector<f64>, DataError> {
    let layout = cfg.measurement_layout();
    let mut values: Vec<Option<f64>> = vec![None; layout.len()];
    let index: std::collections::HashMap<(usize, usize), usize> = layout.iter().enumerate().map(|(k, &pl)| (pl, k)).collect();
    let err = |line: usize, msg: String| DataError::Parse { line, msg };
    let mut saw_header = false;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let n = i + 1;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !saw_header {
            saw_header = true;
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols != ["pattern_id", "electrode_id", "voltage"] {
                return Err(err(n, "expected header pattern_id,electrode_id,voltage".into()));
            }
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 3 {
            return Err(err(n, "expected three columns".into()));
        }
        let p: usize = cols[0].parse().map_err(|_| err(n, format!("bad pattern id '{}'", cols[0])))?;
        let l: usize = cols[1].parse().map_err(|_| err(n, format!("bad electrode id '{}'", cols[1])))?;
        let v: f64 = cols[2].parse().map_err(|_| err(n, format!("bad voltage '{}'", cols[2])))?;
        let k = *index.get(&(p, l)).ok_or_else(|| err(n, format!("no measurement ({p},{l}) in this configuration")))?;
        if values[k].replace(v).is_some() {
            return Err(err(n, format!("duplicate measurement ({p},{l})")));
        }
    }
    values
        .into_iter()
        .zip(&layout)
        .map(|(v, &(pattern, electrode))| v.ok_or(DataError::Missing { pattern, electrode }))
        .collect::<Result<Vec<_>, _>>()
        .map(DVector::from_vec)
}
