//! Complete electrode model: P1 finite elements for the potential and the
//! conductivity, electrode voltages constrained to sum to zero.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use super::mesh::{Mesh, MeshError};
use super::skyline::{reverse_cuthill_mckee, Skyline};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CemError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("conductivity at node {node} is not positive: {value}")]
    InvalidConductivity { node: usize, value: f64 },
    #[error("conductivity has {got} entries, mesh has {want} nodes")]
    DimensionMismatch { got: usize, want: usize },
    #[error("system matrix is not positive definite (row {row})")]
    SingularSystem { row: usize },
}

/// Current `current` enters at `source` and leaves at `sink`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pattern {
    pub source: usize,
    pub sink: usize,
    pub current: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CemConfig {
    /// Contact impedance per electrode.
    pub z: Vec<f64>,
    pub patterns: Vec<Pattern>,
}

impl CemConfig {
    /// Injections between neighbours `(l, l+1)` for `l = 0..L-1`; the pair
    /// `(L-1, 0)` is omitted since it is the negative sum of the others.
    pub fn adjacent(z: Vec<f64>, current: f64) -> Self {
        let l = z.len();
        let patterns = (0..l.saturating_sub(1)).map(|k| Pattern { source: k, sink: k + 1, current }).collect();
        Self { z, patterns }
    }

    pub fn electrodes(&self) -> usize {
        self.z.len()
    }

    pub fn current_vector(&self, p: usize) -> DVector<f64> {
        let pat = self.patterns[p];
        let mut i = DVector::zeros(self.electrodes());
        i[pat.source] += pat.current;
        i[pat.sink] -= pat.current;
        i
    }

    /// `(pattern, electrode)` of every measurement, in stacking order. The two
    /// current-carrying electrodes of each pattern are left out.
    pub fn measurement_layout(&self) -> Vec<(usize, usize)> {
        self.patterns
            .iter()
            .enumerate()
            .flat_map(|(p, pat)| (0..self.electrodes()).filter(move |&l| l != pat.source && l != pat.sink).map(move |l| (p, l)))
            .collect()
    }

    pub fn num_measurements(&self) -> usize {
        self.measurement_layout().len()
    }

    /// Stacks a `P × L` voltage table into the measurement vector.
    pub fn measure(&self, voltages: &DMatrix<f64>) -> DVector<f64> {
        let layout = self.measurement_layout();
        DVector::from_iterator(layout.len(), layout.iter().map(|&(p, l)| voltages[(p, l)]))
    }

    pub fn validate(&self) -> Result<(), CemError> {
        let l = self.electrodes();
        if l < 2 {
            return Err(CemError::Config("need at least two electrodes".into()));
        }
        if let Some(k) = self.z.iter().position(|&z| !(z > 0.0 && z.is_finite())) {
            return Err(CemError::Config(format!("contact impedance {k} must be positive")));
        }
        if self.patterns.is_empty() {
            return Err(CemError::Config("no current patterns".into()));
        }
        for (p, pat) in self.patterns.iter().enumerate() {
            if pat.source >= l || pat.sink >= l || pat.source == pat.sink {
                return Err(CemError::Config(format!("pattern {p} has invalid electrodes")));
            }
            if !pat.current.is_finite() {
                return Err(CemError::Config(format!("pattern {p} has a non-finite current")));
            }
        }
        Ok(())
    }
}

/// Coordinates of electrode `l`'s voltage in the zero-sum basis
/// `b_j = e_0 - e_{j+1}`.
fn beta(l: usize, dim: usize) -> Vec<(usize, f64)> {
    if l == 0 {
        (0..dim).map(|j| (j, 1.0)).collect()
    } else {
        vec![(l - 1, -1.0)]
    }
}

#[derive(Debug, Clone)]
struct Element {
    nodes: [usize; 3],
    area: f64,
    grad: [[f64; 2]; 3],
}

/// Mesh, electrode configuration and the fill-reducing ordering, ready to
/// assemble and solve for any conductivity.
#[derive(Debug, Clone)]
pub struct CemProblem {
    mesh: Mesh,
    cfg: CemConfig,
    elements: Vec<Element>,
    /// Position of each node in the system ordering.
    pos: Vec<usize>,
    first: Vec<usize>,
}

/// Solution for one right-hand side.
#[derive(Debug, Clone)]
pub struct Field {
    /// Nodal potential.
    pub u: DVector<f64>,
    /// Electrode voltages (sum zero).
    pub v: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct ForwardSolution {
    /// `P × L` electrode voltages.
    pub voltages: DMatrix<f64>,
    pub fields: Vec<Field>,
}

impl CemProblem {
    pub fn new(mesh: Mesh, cfg: CemConfig) -> Result<Self, CemError> {
        mesh.validate()?;
        cfg.validate()?;
        if cfg.electrodes() != mesh.num_electrodes() {
            return Err(CemError::Config(format!("{} contact impedances for {} electrodes", cfg.electrodes(), mesh.num_electrodes())));
        }
        let elements = mesh
            .triangles
            .iter()
            .map(|&t| {
                let [a, b, c] = t.map(|v| mesh.nodes[v]);
                let area = super::mesh::signed_area(a, b, c);
                let g = |p: [f64; 2], q: [f64; 2]| [(p[1] - q[1]) / (2.0 * area), (q[0] - p[0]) / (2.0 * area)];
                Element { nodes: t, area, grad: [g(b, c), g(c, a), g(a, b)] }
            })
            .collect();

        let n = mesh.num_nodes();
        let adj = mesh.adjacency();
        let order = reverse_cuthill_mckee(&adj);
        let mut pos = vec![0; n];
        for (k, &v) in order.iter().enumerate() {
            pos[v] = k;
        }
        let ne = cfg.electrodes() - 1;
        let mut first: Vec<usize> = (0..n + ne).collect();
        for v in 0..n {
            for &w in &adj[v] {
                let (i, j) = (pos[v].max(pos[w]), pos[v].min(pos[w]));
                first[i] = first[i].min(j);
            }
        }
        for (l, edges) in mesh.electrodes.iter().enumerate() {
            for &[a, b] in edges {
                for (j, _) in beta(l, ne) {
                    first[n + j] = first[n + j].min(pos[a]).min(pos[b]);
                }
            }
        }
        for j in 0..ne {
            first[n + j] = first[n + j].min(n);
        }
        Ok(Self { mesh, cfg, elements, pos, first })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn config(&self) -> &CemConfig {
        &self.cfg
    }

    fn check_sigma(&self, sigma: &DVector<f64>) -> Result<(), CemError> {
        let want = self.mesh.num_nodes();
        if sigma.len() != want {
            return Err(CemError::DimensionMismatch { got: sigma.len(), want });
        }
        if let Some(node) = sigma.iter().position(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(CemError::InvalidConductivity { node, value: sigma[node] });
        }
        Ok(())
    }

    /// Assembles and factors the system matrix for nodal conductivity `sigma`.
    pub fn factor(&self, sigma: &DVector<f64>) -> Result<Skyline, CemError> {
        let mut a = self.assemble(sigma)?;
        a.factor().map_err(|e| CemError::SingularSystem { row: e.row })?;
        Ok(a)
    }

    /// System matrix in the internal ordering, unfactored.
    pub fn assemble(&self, sigma: &DVector<f64>) -> Result<Skyline, CemError> {
        self.check_sigma(sigma)?;
        let n = self.mesh.num_nodes();
        let ne = self.cfg.electrodes() - 1;
        let mut a = Skyline::with_profile(self.first.clone());
        for e in &self.elements {
            let s = e.nodes.iter().map(|&v| sigma[v]).sum::<f64>() / 3.0;
            for i in 0..3 {
                for j in 0..=i {
                    let g = e.grad[i][0] * e.grad[j][0] + e.grad[i][1] * e.grad[j][1];
                    a.add(self.pos[e.nodes[i]], self.pos[e.nodes[j]], s * e.area * g);
                }
            }
        }
        for (l, edges) in self.mesh.electrodes.iter().enumerate() {
            let c = 1.0 / self.cfg.z[l];
            let b = beta(l, ne);
            let mut length = 0.0;
            for &[p, q] in edges {
                let (x, y) = (self.mesh.nodes[p], self.mesh.nodes[q]);
                let len = (x[0] - y[0]).hypot(x[1] - y[1]);
                length += len;
                let (pp, pq) = (self.pos[p], self.pos[q]);
                a.add(pp, pp, c * len / 3.0);
                a.add(pq, pq, c * len / 3.0);
                a.add(pp, pq, c * len / 6.0);
                for &(j, bj) in &b {
                    a.add(n + j, pp, -c * len / 2.0 * bj);
                    a.add(n + j, pq, -c * len / 2.0 * bj);
                }
            }
            for &(i, bi) in &b {
                for &(j, bj) in &b {
                    if j <= i {
                        a.add(n + i, n + j, c * length * bi * bj);
                    }
                }
            }
        }
        Ok(a)
    }

    /// Solves for electrode current vector `current` (components summing to
    /// zero; other vectors are projected onto that subspace implicitly).
    pub fn solve(&self, factor: &Skyline, current: &DVector<f64>) -> Field {
        let n = self.mesh.num_nodes();
        let big_l = self.cfg.electrodes();
        let ne = big_l - 1;
        let mut x = vec![0.0; n + ne];
        for l in 0..big_l {
            if current[l] != 0.0 {
                for (j, bj) in beta(l, ne) {
                    x[n + j] += current[l] * bj;
                }
            }
        }
        factor.solve_in_place(&mut x);
        let u = DVector::from_fn(n, |v, _| x[self.pos[v]]);
        let mut v = DVector::zeros(big_l);
        for l in 0..big_l {
            v[l] = beta(l, ne).iter().map(|&(j, bj)| bj * x[n + j]).sum();
        }
        Field { u, v }
    }

    pub fn forward(&self, sigma: &DVector<f64>) -> Result<ForwardSolution, CemError> {
        let f = self.factor(sigma)?;
        let fields: Vec<Field> = (0..self.cfg.patterns.len()).map(|p| self.solve(&f, &self.cfg.current_vector(p))).collect();
        let voltages = DMatrix::from_fn(fields.len(), self.cfg.electrodes(), |p, l| fields[p].v[l]);
        Ok(ForwardSolution { voltages, fields })
    }

    /// Measurement vector `F(σ)`.
    pub fn measurements(&self, sigma: &DVector<f64>) -> Result<DVector<f64>, CemError> {
        Ok(self.cfg.measure(&self.forward(sigma)?.voltages))
    }

    /// `F(σ)` and its derivative with respect to every nodal conductivity
    /// (`m × N`), by the adjoint method.
    pub fn jacobian(&self, sigma: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>), CemError> {
        let f = self.factor(sigma)?;
        let big_l = self.cfg.electrodes();
        let pats: Vec<Field> = (0..self.cfg.patterns.len()).map(|p| self.solve(&f, &self.cfg.current_vector(p))).collect();
        let adj: Vec<Field> = (0..big_l)
            .map(|l| {
                let mut e = DVector::zeros(big_l);
                e[l] = 1.0;
                self.solve(&f, &e)
            })
            .collect();
        let layout = self.cfg.measurement_layout();
        let values = DVector::from_iterator(layout.len(), layout.iter().map(|&(p, l)| pats[p].v[l]));

        let grad = |field: &Field, e: &Element| {
            let mut g = [0.0; 2];
            for (k, &v) in e.nodes.iter().enumerate() {
                g[0] += field.u[v] * e.grad[k][0];
                g[1] += field.u[v] * e.grad[k][1];
            }
            g
        };
        let mut jac = DMatrix::zeros(layout.len(), self.mesh.num_nodes());
        for e in &self.elements {
            let gp: Vec<[f64; 2]> = pats.iter().map(|x| grad(x, e)).collect();
            let ga: Vec<[f64; 2]> = adj.iter().map(|y| grad(y, e)).collect();
            let w = e.area / 3.0;
            for (r, &(p, l)) in layout.iter().enumerate() {
                let d = -w * (gp[p][0] * ga[l][0] + gp[p][1] * ga[l][1]);
                for &v in &e.nodes {
                    jac[(r, v)] += d;
                }
            }
        }
        Ok((values, jac))
    }
}
