use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt::Write as _;
use std::path::Path;

use super::GeometryError;
use crate::lie::Vec3;

/// Triangle mesh with optional per-vertex colors and body-part labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    /// RGB in `[0, 1]`; empty when the mesh is uncolored.
    #[serde(default)]
    pub colors: Vec<Vec3>,
    #[serde(default)]
    pub part_labels: Option<Vec<u32>>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self, GeometryError> {
        let m = TriMesh {
            vertices,
            faces,
            colors: vec![],
            part_labels: None,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let n = self.vertices.len();
        if let Some((k, f)) = self.faces.iter().enumerate().find(|(_, f)| f.iter().any(|&i| i >= n)) {
            return Err(GeometryError::InvalidMesh(format!("face {k} {f:?} indexes past {n} vertices")));
        }
        if !self.colors.is_empty() && self.colors.len() != n {
            return Err(GeometryError::InvalidMesh(format!("{} colors for {n} vertices", self.colors.len())));
        }
        if let Some(l) = &self.part_labels {
            if l.len() != n {
                return Err(GeometryError::InvalidMesh(format!("{} part labels for {n} vertices", l.len())));
            }
        }
        if self.vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(GeometryError::InvalidMesh("non-finite vertex".into()));
        }
        Ok(())
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    /// Sorted, deduplicated one-ring neighbors of every vertex.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.vertices.len()];
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                if a != b {
                    adj[a].push(b);
                    adj[b].push(a);
                }
            }
        }
        for n in &mut adj {
            n.sort_unstable();
            n.dedup();
        }
        adj
    }

    /// Undirected edges `(a, b)` with `a < b`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut e = Vec::new();
        for (a, n) in self.adjacency().iter().enumerate() {
            e.extend(n.iter().filter(|&&b| b > a).map(|&b| (a, b)));
        }
        e
    }

    pub fn edge_lengths(&self) -> Vec<f64> {
        self.edges()
            .iter()
            .map(|&(a, b)| (self.vertices[a] - self.vertices[b]).norm())
            .collect()
    }

    pub fn bbox_diagonal(&self) -> f64 {
        if self.vertices.is_empty() {
            return 0.0;
        }
        let mut lo = self.vertices[0];
        let mut hi = lo;
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (hi - lo).norm()
    }

    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> TriMesh {
        TriMesh {
            vertices,
            ..self.clone()
        }
    }

    /// OBJ text: `v x y z [r g b]` and 1-based `f a b c` records.
    pub fn to_obj(&self) -> String {
        let mut s = String::new();
        for (i, v) in self.vertices.iter().enumerate() {
            write!(s, "v {} {} {}", v.x, v.y, v.z).unwrap();
            if let Some(c) = self.colors.get(i) {
                write!(s, " {} {} {}", c.x, c.y, c.z).unwrap();
            }
            s.push('\n');
        }
        for f in &self.faces {
            writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1).unwrap();
        }
        s
    }

    /// Reads the OBJ subset written by [`to_obj`](Self::to_obj). Face
    /// entries may carry `/vt/vn` suffixes, which are ignored, and polygons
    /// are fanned into triangles.
    pub fn from_obj(text: &str) -> Result<TriMesh, GeometryError> {
        let bad = |line: usize, m: &str| GeometryError::Parse(format!("line {}: {m}", line + 1));
        let mut vertices = Vec::new();
        let mut colors = Vec::new();
        let mut faces = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let mut it = line.split_whitespace();
            match it.next() {
                Some("v") => {
                    let vals: Vec<f64> = it
                        .map(|t| t.parse::<f64>().map_err(|_| bad(ln, "bad number")))
                        .collect::<Result<_, _>>()?;
                    match vals.len() {
                        3 => vertices.push(Vec3::new(vals[0], vals[1], vals[2])),
                        6 => {
                            vertices.push(Vec3::new(vals[0], vals[1], vals[2]));
                            colors.push(Vec3::new(vals[3], vals[4], vals[5]));
                        }
                        _ => return Err(bad(ln, "vertex needs 3 or 6 values")),
                    }
                }
                Some("f") => {
                    let idx: Vec<usize> = it
                        .map(|t| {
                            let first = t.split('/').next().unwrap_or("");
                            match first.parse::<i64>() {
                                Ok(i) if i > 0 => Ok(i as usize - 1),
                                Ok(i) if i < 0 => Ok((vertices.len() as i64 + i) as usize),
                                _ => Err(bad(ln, "bad face index")),
                            }
                        })
                        .collect::<Result<_, _>>()?;
                    if idx.len() < 3 {
                        return Err(bad(ln, "face needs three vertices"));
                    }
                    for k in 1..idx.len() - 1 {
                        faces.push([idx[0], idx[k], idx[k + 1]]);
                    }
                }
                _ => {}
            }
        }
        if !colors.is_empty() && colors.len() != vertices.len() {
            return Err(GeometryError::Parse("some vertices carry colors and some do not".into()));
        }
        let m = TriMesh {
            vertices,
            faces,
            colors,
            part_labels: None,
        };
        m.validate()?;
        Ok(m)
    }

    /// Loads `.obj` or JSON by extension.
    pub fn load(path: &Path) -> Result<TriMesh, GeometryError> {
        let text = std::fs::read_to_string(path).map_err(|e| GeometryError::Io(e.to_string()))?;
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("obj")) {
            Self::from_obj(&text)
        } else {
            let m: TriMesh = serde_json::from_str(&text).map_err(|e| GeometryError::Parse(e.to_string()))?;
            m.validate()?;
            Ok(m)
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), GeometryError> {
        let text = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("obj")) {
            self.to_obj()
        } else {
            serde_json::to_string(self).map_err(|e| GeometryError::Parse(e.to_string()))?
        };
        std::fs::write(path, text).map_err(|e| GeometryError::Io(e.to_string()))
    }
}

/// Weighted undirected graph over mesh vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeGraph {
    /// `(neighbor, length)` lists.
    pub adj: Vec<Vec<(usize, f64)>>,
}

#[derive(PartialEq)]
struct Frontier(f64, usize);

impl Eq for Frontier {}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Frontier {
    // min-heap on distance, ties by index
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl EdgeGraph {
    pub fn from_mesh(mesh: &TriMesh) -> EdgeGraph {
        Self::from_edges(mesh.vertices.len(), &mesh.edges(), &mesh.vertices)
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)], positions: &[Vec3]) -> EdgeGraph {
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in edges {
            let l = (positions[a] - positions[b]).norm();
            adj[a].push((b, l));
            adj[b].push((a, l));
        }
        EdgeGraph { adj }
    }

    pub fn len(&self) -> usize {
        self.adj.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adj.is_empty()
    }

    /// The `k` vertices closest to `source` by path length along edges,
    /// excluding `source` itself.
    pub fn nearest(&self, source: usize, k: usize) -> Vec<usize> {
        let mut dist = vec![f64::INFINITY; self.adj.len()];
        let mut done = vec![false; self.adj.len()];
        let mut heap = BinaryHeap::new();
        let mut out = Vec::with_capacity(k);
        dist[source] = 0.0;
        heap.push(Frontier(0.0, source));
        while let Some(Frontier(d, u)) = heap.pop() {
            if done[u] {
                continue;
            }
            done[u] = true;
            if u != source {
                out.push(u);
                if out.len() == k {
                    break;
                }
            }
            for &(v, l) in &self.adj[u] {
                let nd = d + l;
                if nd < dist[v] {
                    dist[v] = nd;
                    heap.push(Frontier(nd, v));
                }
            }
        }
        out
    }

    /// Vertices within `rings` edge hops of `seeds`, seeds included.
    pub fn rings(&self, seeds: &[usize], rings: usize) -> Vec<bool> {
        let mut mark = vec![false; self.adj.len()];
        let mut frontier: Vec<usize> = seeds.to_vec();
        for &s in seeds {
            mark[s] = true;
        }
        for _ in 0..rings {
            let mut next = Vec::new();
            for &u in &frontier {
                for &(v, _) in &self.adj[u] {
                    if !mark[v] {
                        mark[v] = true;
                        next.push(v);
                    }
                }
            }
            frontier = next;
        }
        mark
    }

    /// Connected-component id per vertex.
    pub fn components(&self) -> Vec<usize> {
        let mut comp = vec![usize::MAX; self.adj.len()];
        let mut next = 0;
        for s in 0..self.adj.len() {
            if comp[s] != usize::MAX {
                continue;
            }
            let mut stack = vec![s];
            comp[s] = next;
            while let Some(u) = stack.pop() {
                for &(v, _) in &self.adj[u] {
                    if comp[v] == usize::MAX {
                        comp[v] = next;
                        stack.push(v);
                    }
                }
            }
            next += 1;
        }
        comp
    }
}
