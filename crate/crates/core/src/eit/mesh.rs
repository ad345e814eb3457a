//! Triangular meshes of the disk with boundary electrodes.

use std::collections::{BTreeSet, HashMap};
use std::f64::consts::PI;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeshError {
    #[error("mesh file not found: {0}")]
    NotFound(String),
    #[error("mesh file I/O failed: {0}")]
    Io(String),
    #[error("mesh parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid mesh: {0}")]
    Invalid(String),
    #[error("mesh generation failed: {0}")]
    GenFailed(String),
}

/// Node coordinates in metres, counter-clockwise triangles, and per-electrode
/// lists of boundary edges.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub nodes: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    pub electrodes: Vec<Vec<[usize; 2]>>,
    /// Nodes carrying unknown conductivity (all non-boundary nodes).
    pub interior: Vec<usize>,
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

pub fn signed_area(p: [f64; 2], q: [f64; 2], r: [f64; 2]) -> f64 {
    0.5 * ((q[0] - p[0]) * (r[1] - p[1]) - (r[0] - p[0]) * (q[1] - p[1]))
}

impl Mesh {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_electrodes(&self) -> usize {
        self.electrodes.len()
    }

    pub fn area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        signed_area(self.nodes[a], self.nodes[b], self.nodes[c])
    }

    /// Edges that belong to exactly one triangle.
    pub fn boundary_edges(&self) -> Vec<[usize; 2]> {
        let mut count: HashMap<(usize, usize), usize> = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                *count.entry(edge_key(t[k], t[(k + 1) % 3])).or_default() += 1;
            }
        }
        let mut out: Vec<[usize; 2]> = count.into_iter().filter(|&(_, c)| c == 1).map(|((a, b), _)| [a, b]).collect();
        out.sort_unstable();
        out
    }

    pub fn boundary_nodes(&self) -> BTreeSet<usize> {
        self.boundary_edges().into_iter().flatten().collect()
    }

    /// Node adjacency through triangle edges.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); self.nodes.len()];
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                adj[a].insert(b);
                adj[b].insert(a);
            }
        }
        adj.into_iter().map(|s| s.into_iter().collect()).collect()
    }

    /// Checks orientation, electrode placement and the interior set.
    pub fn validate(&self) -> Result<(), MeshError> {
        let n = self.nodes.len();
        let bad = |m: String| Err(MeshError::Invalid(m));
        if self.triangles.is_empty() {
            return bad("no triangles".into());
        }
        for (i, t) in self.triangles.iter().enumerate() {
            if t.iter().any(|&v| v >= n) {
                return bad(format!("triangle {i} references a missing node"));
            }
            if !(self.area(i) > 0.0) {
                return bad(format!("triangle {i} is not positively oriented"));
            }
        }
        let boundary: BTreeSet<(usize, usize)> = self.boundary_edges().into_iter().map(|[a, b]| edge_key(a, b)).collect();
        let mut seen = BTreeSet::new();
        for (l, edges) in self.electrodes.iter().enumerate() {
            if edges.is_empty() {
                return bad(format!("electrode {l} has no edges"));
            }
            for &[a, b] in edges {
                let e = edge_key(a, b);
                if !boundary.contains(&e) {
                    return bad(format!("electrode {l} edge ({a},{b}) is not on the boundary"));
                }
                if !seen.insert(e) {
                    return bad(format!("edge ({a},{b}) belongs to more than one electrode"));
                }
            }
        }
        let bnodes: BTreeSet<usize> = boundary.iter().flat_map(|&(a, b)| [a, b]).collect();
        for &v in &self.interior {
            if v >= n {
                return bad(format!("interior node {v} does not exist"));
            }
            if bnodes.contains(&v) {
                return bad(format!("interior node {v} lies on the boundary"));
            }
        }
        Ok(())
    }

    /// Splits every triangle into four; new boundary nodes are pushed radially
    /// onto the circle of the given radius.
    pub fn refine(&self, radius: f64) -> Mesh {
        let boundary: BTreeSet<(usize, usize)> = self.boundary_edges().into_iter().map(|[a, b]| edge_key(a, b)).collect();
        let mut nodes = self.nodes.clone();
        let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, nodes: &mut Vec<[f64; 2]>| -> usize {
            let key = edge_key(a, b);
            *mid.entry(key).or_insert_with(|| {
                let (p, q) = (nodes[a], nodes[b]);
                let mut m = [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])];
                if boundary.contains(&key) {
                    let r = m[0].hypot(m[1]);
                    m = [m[0] * radius / r, m[1] * radius / r];
                }
                nodes.push(m);
                nodes.len() - 1
            })
        };
        let mut triangles = Vec::with_capacity(4 * self.triangles.len());
        for &[a, b, c] in &self.triangles {
            let ab = midpoint(a, b, &mut nodes);
            let bc = midpoint(b, c, &mut nodes);
            let ca = midpoint(c, a, &mut nodes);
            triangles.extend([[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]);
        }
        let electrodes = self
            .electrodes
            .iter()
            .map(|edges| {
                edges
                    .iter()
                    .flat_map(|&[a, b]| {
                        let m = midpoint(a, b, &mut nodes);
                        [[a, m], [m, b]]
                    })
                    .collect()
            })
            .collect();
        let mut mesh = Mesh { nodes, triangles, electrodes, interior: Vec::new() };
        mesh.interior = mesh.non_boundary_nodes();
        mesh
    }

    pub fn non_boundary_nodes(&self) -> Vec<usize> {
        let b = self.boundary_nodes();
        (0..self.nodes.len()).filter(|v| !b.contains(v)).collect()
    }

    /// Nodes of `set` together with every node sharing a triangle with one.
    pub fn dilate(&self, set: &BTreeSet<usize>) -> BTreeSet<usize> {
        let mut out = set.clone();
        for t in &self.triangles {
            if t.iter().any(|v| set.contains(v)) {
                out.extend(t.iter().copied());
            }
        }
        out
    }

    /// Total length of each electrode.
    pub fn electrode_lengths(&self) -> Vec<f64> {
        self.electrodes
            .iter()
            .map(|edges| {
                edges
                    .iter()
                    .map(|&[a, b]| {
                        let (p, q) = (self.nodes[a], self.nodes[b]);
                        (p[0] - q[0]).hypot(p[1] - q[1])
                    })
                    .sum()
            })
            .collect()
    }
}

/// Parameters for the ring-structured disk generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiskMeshSpec {
    pub radius: f64,
    pub electrodes: usize,
    /// Fraction of the circumference covered by electrodes.
    pub coverage: f64,
    /// Boundary segments per electrode and per gap.
    pub segments: usize,
    /// Growth of the element size from the boundary (`0`) to the centre.
    pub grading: f64,
}

impl DiskMeshSpec {
    fn check(&self) -> Result<(), MeshError> {
        let fail = |m: &str| Err(MeshError::GenFailed(m.into()));
        if !(self.radius > 0.0) {
            return fail("radius must be positive");
        }
        if self.electrodes < 2 {
            return fail("need at least two electrodes");
        }
        if !(self.coverage > 0.0 && self.coverage < 1.0) {
            return fail("electrode coverage must lie in (0, 1)");
        }
        if self.segments == 0 {
            return fail("segments must be at least 1");
        }
        if !(self.grading >= 0.0) || !self.grading.is_finite() {
            return fail("grading must be finite and non-negative");
        }
        Ok(())
    }

    fn boundary_angles(&self) -> Vec<f64> {
        let l = self.electrodes as f64;
        let s = self.segments;
        let half = self.coverage * PI / l;
        let gap = 2.0 * PI / l - 2.0 * half;
        let mut out = Vec::with_capacity(2 * s * self.electrodes);
        for e in 0..self.electrodes {
            let c = 2.0 * PI * e as f64 / l;
            for k in 0..s {
                out.push(c - half + 2.0 * half * k as f64 / s as f64);
            }
            for k in 0..s {
                out.push(c + half + gap * k as f64 / s as f64);
            }
        }
        out
    }

    /// Radii and node counts of the interior rings, outermost first.
    fn rings(&self, n_boundary: usize) -> Vec<(f64, usize)> {
        let r0 = self.radius;
        let hb = 2.0 * PI * r0 / n_boundary as f64;
        let h = |r: f64| hb * (1.0 + self.grading * (1.0 - r / r0));
        let mut out = Vec::new();
        let mut r = r0;
        loop {
            let next = r - 0.5 * 3f64.sqrt() * h(r);
            if next < 0.6 * h(next.max(0.0)) {
                break;
            }
            let count = ((2.0 * PI * next / h(next)).round() as usize).max(6);
            out.push((next, count));
            r = next;
        }
        out
    }

    pub fn node_count(&self) -> usize {
        let nb = 2 * self.segments * self.electrodes;
        nb + 1 + self.rings(nb).iter().map(|&(_, c)| c).sum::<usize>()
    }
}

/// Stitches two closed rings of node ids sorted by angle.
fn stitch(outer: &[(usize, f64)], inner: &[(usize, f64)], tris: &mut Vec<[usize; 3]>) {
    let a0 = outer[0].1;
    let unwrap = |t: f64| a0 + (t - a0).rem_euclid(2.0 * PI);
    let mut inner: Vec<(usize, f64)> = inner.iter().map(|&(v, t)| (v, unwrap(t))).collect();
    inner.sort_by(|x, y| x.1.total_cmp(&y.1));
    let na = outer.len();
    let nb = inner.len();
    let ang_a = |i: usize| if i < na { unwrap(outer[i].1) } else { a0 + 2.0 * PI };
    let ang_b = |j: usize| if j < nb { inner[j].1 } else { inner[0].1 + 2.0 * PI };
    let (mut i, mut j) = (0, 0);
    // the inner ring's last node precedes a0; start by joining it
    while i < na || j < nb {
        let advance_a = j == nb || (i < na && ang_a(i + 1) <= ang_b(j + 1));
        if advance_a {
            tris.push([outer[i].0, outer[(i + 1) % na].0, inner[j % nb].0]);
            i += 1;
        } else {
            tris.push([outer[i % na].0, inner[(j + 1) % nb].0, inner[j % nb].0]);
            j += 1;
        }
    }
}

/// Builds a disk mesh from concentric rings.
pub fn disk_mesh(spec: &DiskMeshSpec) -> Result<Mesh, MeshError> {
    spec.check()?;
    let r0 = spec.radius;
    let mut nodes = Vec::new();
    let mut rings: Vec<Vec<(usize, f64)>> = Vec::new();

    let angles = spec.boundary_angles();
    let nb = angles.len();
    rings.push(
        angles
            .iter()
            .map(|&t| {
                nodes.push([r0 * t.cos(), r0 * t.sin()]);
                (nodes.len() - 1, t)
            })
            .collect(),
    );
    for (k, (r, count)) in spec.rings(nb).into_iter().enumerate() {
        let step = 2.0 * PI / count as f64;
        let offset = angles[0] + if k % 2 == 0 { 0.5 * step } else { 0.0 };
        rings.push(
            (0..count)
                .map(|i| {
                    let t = offset + step * i as f64;
                    nodes.push([r * t.cos(), r * t.sin()]);
                    (nodes.len() - 1, t)
                })
                .collect(),
        );
    }
    nodes.push([0.0, 0.0]);
    let centre = nodes.len() - 1;

    let mut triangles = Vec::new();
    for w in rings.windows(2) {
        stitch(&w[0], &w[1], &mut triangles);
    }
    let last = rings.last().unwrap();
    for i in 0..last.len() {
        triangles.push([last[i].0, last[(i + 1) % last.len()].0, centre]);
    }
    for t in &mut triangles {
        if signed_area(nodes[t[0]], nodes[t[1]], nodes[t[2]]) < 0.0 {
            t.swap(1, 2);
        }
    }

    let s = spec.segments;
    let electrodes = (0..spec.electrodes).map(|e| (0..s).map(|k| [e * 2 * s + k, (e * 2 * s + k + 1) % nb]).collect()).collect();
    let interior = (nb..nodes.len()).collect();
    let mesh = Mesh { nodes, triangles, electrodes, interior };
    mesh.validate().map_err(|e| MeshError::GenFailed(e.to_string()))?;
    Ok(mesh)
}

/// Disk mesh with roughly `target_nodes` nodes: picks the boundary resolution,
/// then bisects the interior grading.
pub fn gen_disk_mesh(radius: f64, electrodes: usize, coverage: f64, target_nodes: usize) -> Result<Mesh, MeshError> {
    const MAX_GRADING: f64 = 12.0;
    let base = DiskMeshSpec { radius, electrodes, coverage, segments: 1, grading: 0.0 };
    base.check()?;
    let target = target_nodes as f64;
    let mut best: Option<DiskMeshSpec> = None;
    for segments in 1..=64 {
        let spec = DiskMeshSpec { segments, ..base };
        let (fine, coarse) = (spec.node_count(), DiskMeshSpec { grading: MAX_GRADING, ..spec }.node_count());
        if (coarse as f64) > 1.15 * target {
            break;
        }
        if (fine as f64) < target {
            best = Some(spec);
            continue;
        }
        let (mut lo, mut hi) = (0.0, MAX_GRADING);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if (DiskMeshSpec { grading: mid, ..spec }).node_count() as f64 >= target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let a = DiskMeshSpec { grading: lo, ..spec };
        let b = DiskMeshSpec { grading: hi, ..spec };
        let pick = if (a.node_count() as f64 - target).abs() <= (b.node_count() as f64 - target).abs() { a } else { b };
        best = Some(pick);
        break;
    }
    let spec = best.ok_or_else(|| MeshError::GenFailed(format!("no mesh near {target_nodes} nodes")))?;
    let count = spec.node_count() as f64;
    if (count - target).abs() > 0.15 * target {
        return Err(MeshError::GenFailed(format!("closest mesh has {count} nodes, target {target_nodes}")));
    }
    disk_mesh(&spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    const R: f64 = 0.14;

    fn coverage16() -> f64 {
        16.0 * 0.025 / (2.0 * PI * R)
    }

    #[test]
    fn segments_three_gives_96_boundary_nodes() {
        let m = disk_mesh(&DiskMeshSpec { radius: R, electrodes: 16, coverage: coverage16(), segments: 3, grading: 1.0 }).unwrap();
        assert_eq!(m.boundary_nodes().len(), 96);
        assert_eq!(m.interior.len(), m.num_nodes() - 96);
        assert_eq!(m.non_boundary_nodes(), m.interior);
        // Euler: closed disk triangulation
        assert_eq!(m.triangles.len(), 2 * m.num_nodes() - 96 - 2);
    }

    #[test]
    fn target_424_within_tolerance() {
        let m = gen_disk_mesh(R, 16, coverage16(), 424).unwrap();
        let n = m.num_nodes() as f64;
        assert!((n - 424.0).abs() <= 0.15 * 424.0, "{n}");
        assert_eq!(m.num_electrodes(), 16);
        m.validate().unwrap();
    }

    #[test]
    fn four_electrode_coarse_mesh_is_valid() {
        let m = gen_disk_mesh(1.0, 4, 0.3, 40).unwrap();
        m.validate().unwrap();
        assert_eq!(m.num_electrodes(), 4);
    }

    #[test]
    fn electrode_endpoints_sit_on_electrode_angles() {
        let cov = coverage16();
        let m = disk_mesh(&DiskMeshSpec { radius: R, electrodes: 16, coverage: cov, segments: 2, grading: 0.5 }).unwrap();
        let lens = m.electrode_lengths();
        let chord = |theta: f64| 2.0 * R * (theta / 2.0).sin();
        let seg = chord(2.0 * cov * PI / 16.0 / 2.0);
        for l in lens {
            assert!((l - 2.0 * seg).abs() < 1e-14);
        }
    }

    #[test]
    fn refinement_keeps_invariants() {
        let m = gen_disk_mesh(R, 16, coverage16(), 120).unwrap();
        let f = m.refine(R);
        f.validate().unwrap();
        assert_eq!(f.triangles.len(), 4 * m.triangles.len());
        assert_eq!(f.electrodes[3].len(), 2 * m.electrodes[3].len());
        let total: f64 = (0..f.triangles.len()).map(|t| f.area(t)).sum();
        assert!((total - PI * R * R).abs() / (PI * R * R) < 0.01);
    }

    #[test]
    fn validate_catches_flipped_triangle() {
        let mut m = gen_disk_mesh(1.0, 4, 0.3, 40).unwrap();
        m.triangles[0].swap(1, 2);
        assert!(matches!(m.validate(), Err(MeshError::Invalid(_))));
        let mut m = gen_disk_mesh(1.0, 4, 0.3, 40).unwrap();
        m.interior.push(0);
        assert!(m.validate().is_err());
    }

    #[test]
    fn rejects_bad_coverage() {
        assert!(matches!(gen_disk_mesh(1.0, 4, 1.2, 40), Err(MeshError::GenFailed(_))));
    }
}
