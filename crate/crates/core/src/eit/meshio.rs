//! Plain-text mesh format.
//!
//! ```text
//! # comment lines start with '#'; blank lines are ignored
//! NODES <count>
//! <id> <x> <y>                  ids 0..count-1, in order
//! TRIANGLES <count>
//! <id> <n1> <n2> <n3>
//! ELECTRODES <count>
//! <electrode-id> <a1> <b1> <a2> <b2> ...   boundary edges (a_k, b_k)
//! INTERIOR <count>
//! <id> <id> ...                 any number of ids per line
//! ```
//!
//! Sections appear in this order. Node ids are zero-based.

use std::fmt::Write as _;
use std::path::Path;

use super::mesh::{Mesh, MeshError};

fn perr(line: usize, msg: impl Into<String>) -> MeshError {
    MeshError::Parse { line, msg: msg.into() }
}

struct Lines<'a> {
    it: std::iter::Peekable<Box<dyn Iterator<Item = (usize, &'a str)> + 'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        let it: Box<dyn Iterator<Item = (usize, &'a str)> + 'a> = Box::new(
            text.lines().enumerate().map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim())).filter(|(_, l)| !l.is_empty()),
        );
        Self { it: it.peekable(), last: 0 }
    }

    fn next(&mut self) -> Option<(usize, &'a str)> {
        let item = self.it.next();
        if let Some((n, _)) = item {
            self.last = n;
        }
        item
    }

    fn header(&mut self, name: &str) -> Result<usize, MeshError> {
        let (n, line) = self.next().ok_or_else(|| perr(self.last + 1, format!("expected {name} section")))?;
        let mut tok = line.split_whitespace();
        if tok.next() != Some(name) {
            return Err(perr(n, format!("expected {name} header")));
        }
        let count = tok.next().ok_or_else(|| perr(n, "missing count"))?;
        count.parse().map_err(|_| perr(n, format!("bad count '{count}'")))
    }
}

fn num<T: std::str::FromStr>(line: usize, s: &str) -> Result<T, MeshError> {
    s.parse().map_err(|_| perr(line, format!("bad number '{s}'")))
}

pub fn parse_mesh(text: &str) -> Result<Mesh, MeshError> {
    let mut lines = Lines::new(text);

    let n_nodes = lines.header("NODES")?;
    let mut nodes = Vec::with_capacity(n_nodes);
    for k in 0..n_nodes {
        let (n, line) = lines.next().ok_or_else(|| perr(lines.last + 1, "too few nodes"))?;
        let t: Vec<&str> = line.split_whitespace().collect();
        if t.len() != 3 {
            return Err(perr(n, "node line needs: id x y"));
        }
        if num::<usize>(n, t[0])? != k {
            return Err(perr(n, format!("node ids must be consecutive, expected {k}")));
        }
        nodes.push([num(n, t[1])?, num(n, t[2])?]);
    }

    let n_tri = lines.header("TRIANGLES")?;
    let mut triangles = Vec::with_capacity(n_tri);
    for _ in 0..n_tri {
        let (n, line) = lines.next().ok_or_else(|| perr(lines.last + 1, "too few triangles"))?;
        let t: Vec<&str> = line.split_whitespace().collect();
        if t.len() != 4 {
            return Err(perr(n, "triangle line needs: id n1 n2 n3"));
        }
        triangles.push([num(n, t[1])?, num(n, t[2])?, num(n, t[3])?]);
    }

    let n_el = lines.header("ELECTRODES")?;
    let mut electrodes = vec![Vec::new(); n_el];
    for _ in 0..n_el {
        let (n, line) = lines.next().ok_or_else(|| perr(lines.last + 1, "too few electrodes"))?;
        let t: Vec<&str> = line.split_whitespace().collect();
        if t.len() < 3 || t.len().is_multiple_of(2) {
            return Err(perr(n, "electrode line needs: id followed by node pairs"));
        }
        let id: usize = num(n, t[0])?;
        if id >= n_el {
            return Err(perr(n, format!("electrode id {id} out of range")));
        }
        electrodes[id] = t[1..].chunks(2).map(|p| Ok([num(n, p[0])?, num(n, p[1])?])).collect::<Result<_, _>>()?;
    }

    let n_int = lines.header("INTERIOR")?;
    let mut interior = Vec::with_capacity(n_int);
    while interior.len() < n_int {
        let (n, line) = lines.next().ok_or_else(|| perr(lines.last + 1, "too few interior ids"))?;
        for tok in line.split_whitespace() {
            interior.push(num(n, tok)?);
        }
    }
    if interior.len() != n_int {
        return Err(perr(lines.last, "more interior ids than declared"));
    }
    if let Some((n, _)) = lines.next() {
        return Err(perr(n, "unexpected content after INTERIOR section"));
    }

    let mesh = Mesh { nodes, triangles, electrodes, interior };
    mesh.validate()?;
    Ok(mesh)
}

pub fn format_mesh(mesh: &Mesh) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "NODES {}", mesh.nodes.len());
    for (i, p) in mesh.nodes.iter().enumerate() {
        let _ = writeln!(s, "{i} {:.17e} {:.17e}", p[0], p[1]);
    }
    let _ = writeln!(s, "TRIANGLES {}", mesh.triangles.len());
    for (i, t) in mesh.triangles.iter().enumerate() {
        let _ = writeln!(s, "{i} {} {} {}", t[0], t[1], t[2]);
    }
    let _ = writeln!(s, "ELECTRODES {}", mesh.electrodes.len());
    for (l, edges) in mesh.electrodes.iter().enumerate() {
        let _ = write!(s, "{l}");
        for [a, b] in edges {
            let _ = write!(s, " {a} {b}");
        }
        s.push('\n');
    }
    let _ = writeln!(s, "INTERIOR {}", mesh.interior.len());
    for chunk in mesh.interior.chunks(16) {
        let ids: Vec<String> = chunk.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "{}", ids.join(" "));
    }
    s
}

pub fn read_mesh(path: &Path) -> Result<Mesh, MeshError> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => MeshError::NotFound(path.display().to_string()),
        _ => MeshError::Io(e.to_string()),
    })?;
    parse_mesh(&text)
}

pub fn write_mesh(path: &Path, mesh: &Mesh) -> Result<(), MeshError> {
    std::fs::write(path, format_mesh(mesh)).map_err(|e| MeshError::Io(e.to_string()))
}
