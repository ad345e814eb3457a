//! Envelope (skyline) Cholesky for sparse SPD systems, plus reverse
//! Cuthill–McKee ordering to keep the envelope narrow.

use std::collections::VecDeque;

use crate::linalg::PIVOT_TOL;

/// Lower triangle stored row by row from each row's first nonzero column.
#[derive(Debug, Clone)]
pub struct Skyline {
    first: Vec<usize>,
    start: Vec<usize>,
    data: Vec<f64>,
    factored: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NotPositiveDefinite {
    pub row: usize,
    pub pivot: f64,
}

impl Skyline {
    /// Zero matrix with the given first-column profile (`first[i] ≤ i`).
    pub fn with_profile(first: Vec<usize>) -> Self {
        let mut start = Vec::with_capacity(first.len() + 1);
        let mut acc = 0;
        for (i, &f) in first.iter().enumerate() {
            assert!(f <= i, "profile must lie in the lower triangle");
            start.push(acc);
            acc += i - f + 1;
        }
        start.push(acc);
        Self { first, start, data: vec![0.0; acc], factored: false }
    }

    pub fn dim(&self) -> usize {
        self.first.len()
    }

    pub fn stored_entries(&self) -> usize {
        self.data.len()
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[self.start[i]..self.start[i + 1]]
    }

    /// Adds `v` to the symmetric pair `(i, j)`, `(j, i)`.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        debug_assert!(j >= self.first[i], "entry ({i},{j}) outside the profile");
        let k = self.start[i] + j - self.first[i];
        self.data[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if j < self.first[i] {
            0.0
        } else {
            self.row(i)[j - self.first[i]]
        }
    }

    /// In-place factorization `A = LLᵗ`.
    pub fn factor(&mut self) -> Result<(), NotPositiveDefinite> {
        let n = self.dim();
        let max_diag = (0..n).map(|i| self.get(i, i)).fold(0.0_f64, f64::max);
        let tol = PIVOT_TOL * max_diag;
        for i in 0..n {
            let fi = self.first[i];
            let si = self.start[i];
            for j in fi..i {
                let fj = self.first[j];
                let k0 = fi.max(fj);
                let sj = self.start[j];
                let (head, tail) = self.data.split_at_mut(si);
                let lj = &head[sj + k0 - fj..sj + j - fj];
                let li = &tail[k0 - fi..j - fi];
                let dot: f64 = li.iter().zip(lj).map(|(a, b)| a * b).sum();
                let ljj = head[sj + j - fj];
                tail[j - fi] = (tail[j - fi] - dot) / ljj;
            }
            let row = &mut self.data[si..self.start[i + 1]];
            let (off, diag) = row.split_at_mut(i - fi);
            let d = diag[0] - off.iter().map(|v| v * v).sum::<f64>();
            if !(d > tol) || !d.is_finite() {
                return Err(NotPositiveDefinite { row: i, pivot: d });
            }
            diag[0] = d.sqrt();
        }
        self.factored = true;
        Ok(())
    }

    /// Solves `LLᵗx = b` in place. Requires [`Self::factor`].
    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert!(self.factored, "solve called before factor");
        let n = self.dim();
        for i in 0..n {
            let fi = self.first[i];
            let row = self.row(i);
            let dot: f64 = row[..i - fi].iter().zip(&b[fi..i]).map(|(a, c)| a * c).sum();
            b[i] = (b[i] - dot) / row[i - fi];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let row = self.row(i);
            b[i] /= row[i - fi];
            let xi = b[i];
            for (bk, l) in b[fi..i].iter_mut().zip(&row[..i - fi]) {
                *bk -= l * xi;
            }
        }
    }
}

/// Reverse Cuthill–McKee order of a graph given by adjacency lists.
/// Returns `order` with `order[k]` the vertex placed at position `k`.
pub fn reverse_cuthill_mckee(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while order.len() < n {
        let seed = (0..n).filter(|&v| !visited[v]).min_by_key(|&v| adj[v].len()).expect("unvisited vertex");
        let root = pseudo_peripheral(adj, seed, &visited);
        let mut queue = VecDeque::from([root]);
        visited[root] = true;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adj[v].iter().copied().filter(|&w| !visited[w]).collect();
            next.sort_by_key(|&w| (adj[w].len(), w));
            for w in next {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

fn bfs_levels(adj: &[Vec<usize>], root: usize, blocked: &[bool]) -> Vec<Option<usize>> {
    let mut level = vec![None; adj.len()];
    level[root] = Some(0);
    let mut queue = VecDeque::from([root]);
    while let Some(v) = queue.pop_front() {
        let lv = level[v].unwrap();
        for &w in &adj[v] {
            if level[w].is_none() && !blocked[w] {
                level[w] = Some(lv + 1);
                queue.push_back(w);
            }
        }
    }
    level
}

/// Repeated BFS towards the deepest, lowest-degree vertex.
fn pseudo_peripheral(adj: &[Vec<usize>], seed: usize, blocked: &[bool]) -> usize {
    let mut root = seed;
    let mut depth = 0;
    for _ in 0..8 {
        let level = bfs_levels(adj, root, blocked);
        let max = level.iter().flatten().copied().max().unwrap_or(0);
        if max <= depth && root != seed {
            break;
        }
        depth = max;
        let cand = (0..adj.len()).filter(|&v| level[v] == Some(max)).min_by_key(|&v| adj[v].len()).unwrap();
        if cand == root {
            break;
        }
        root = cand;
    }
    root
}
