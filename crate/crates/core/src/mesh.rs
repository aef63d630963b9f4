//! Fixed-topology triangle meshes, their edge graph, and the uniform Laplacian.
//!
//! Sign convention: `δ_i = v_i - (1/deg i) Σ_{j∈N(i)} v_j`, so the Laplacian
//! matrix has `+1` on the diagonal and `-1/deg(i)` on neighbor entries.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::{cast_points, Real};
use crate::sparse::Csr;

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh<T> {
    pub vertices: Vec<[T; 3]>,
    pub faces: Vec<[usize; 3]>,
    pub part_of_vertex: Vec<usize>,
    pub part_of_face: Vec<usize>,
}

impl<T: Real> Mesh<T> {
    /// Validates face indices, face degeneracy and label lengths.
    pub fn new(
        vertices: Vec<[T; 3]>,
        faces: Vec<[usize; 3]>,
        part_of_vertex: Vec<usize>,
        part_of_face: Vec<usize>,
    ) -> Result<Self> {
        let n = vertices.len();
        if part_of_vertex.len() != n {
            return Err(Error::dim("mesh part_of_vertex", n, part_of_vertex.len()));
        }
        if part_of_face.len() != faces.len() {
            return Err(Error::dim("mesh part_of_face", faces.len(), part_of_face.len()));
        }
        for (fi, f) in faces.iter().enumerate() {
            if f.iter().any(|&i| i >= n) {
                return Err(Error::Mesh(format!("face {fi} {f:?} indexes past {n} vertices")));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::Mesh(format!("face {fi} {f:?} is degenerate")));
            }
        }
        Ok(Self {
            vertices,
            faces,
            part_of_vertex,
            part_of_face,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_parts(&self) -> usize {
        self.part_of_vertex
            .iter()
            .chain(&self.part_of_face)
            .max()
            .map_or(0, |m| m + 1)
    }

    /// Same topology and labels with new positions.
    pub fn with_vertices(&self, vertices: Vec<[T; 3]>) -> Result<Self> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::dim("mesh vertices", self.vertices.len(), vertices.len()));
        }
        Ok(Self {
            vertices,
            ..self.clone()
        })
    }

    pub fn cast<U: Real>(&self) -> Mesh<U> {
        Mesh {
            vertices: cast_points(&self.vertices),
            faces: self.faces.clone(),
            part_of_vertex: self.part_of_vertex.clone(),
            part_of_face: self.part_of_face.clone(),
        }
    }

    /// Unique undirected edges `(i, j)` with `i < j`.
    pub fn edges(&self) -> BTreeSet<(usize, usize)> {
        let mut edges = BTreeSet::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                edges.insert((a.min(b), a.max(b)));
            }
        }
        edges
    }
}

/// Vertex adjacency plus the row-normalized `A + I` used by graph convolutions.
#[derive(Debug, Clone)]
pub struct MeshGraph<T> {
    pub adjacency: Csr<T>,
    pub normalized_adjacency: Csr<T>,
    pub degrees: Vec<usize>,
    neighbors: Vec<Vec<usize>>,
}

impl<T: Real> MeshGraph<T> {
    pub fn num_vertices(&self) -> usize {
        self.degrees.len()
    }

    /// Sorted 1-ring of vertex `i`.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn cast<U: Real>(&self) -> MeshGraph<U> {
        MeshGraph {
            adjacency: self.adjacency.cast(),
            normalized_adjacency: self.normalized_adjacency.cast(),
            degrees: self.degrees.clone(),
            neighbors: self.neighbors.clone(),
        }
    }
}

pub fn build_mesh_graph<T: Real>(mesh: &Mesh<T>) -> Result<MeshGraph<T>> {
    let n = mesh.num_vertices();
    let mut neighbors = vec![Vec::new(); n];
    for (a, b) in mesh.edges() {
        neighbors[a].push(b);
        neighbors[b].push(a);
    }
    for nb in &mut neighbors {
        nb.sort_unstable();
    }
    if let Some((vertex, nb)) = neighbors.iter().enumerate().find(|(_, nb)| nb.len() < 2) {
        return Err(Error::IsolatedVertex {
            vertex,
            degree: nb.len(),
        });
    }
    let components = count_components(&neighbors);
    if components != 1 {
        return Err(Error::Disconnected { components });
    }

    let adjacency = Csr::from_rows(
        n,
        neighbors
            .iter()
            .map(|nb| nb.iter().map(|&j| (j, T::one())).collect())
            .collect(),
    )?;
    let normalized_adjacency = Csr::from_rows(
        n,
        neighbors
            .iter()
            .enumerate()
            .map(|(i, nb)| {
                let w = T::one() / T::c((nb.len() + 1) as f64);
                std::iter::once((i, w)).chain(nb.iter().map(|&j| (j, w))).collect()
            })
            .collect(),
    )?;
    Ok(MeshGraph {
        adjacency,
        normalized_adjacency,
        degrees: neighbors.iter().map(Vec::len).collect(),
        neighbors,
    })
}

fn count_components(neighbors: &[Vec<usize>]) -> usize {
    let mut seen = vec![false; neighbors.len()];
    let mut components = 0;
    for start in 0..neighbors.len() {
        if seen[start] {
            continue;
        }
        components += 1;
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            for &u in &neighbors[v] {
                if !seen[u] {
                    seen[u] = true;
                    queue.push_back(u);
                }
            }
        }
    }
    components
}

/// Uniform Laplacian `L = I - D⁻¹A`.
#[derive(Debug, Clone)]
pub struct LaplacianOperator<T> {
    pub matrix: Csr<T>,
}

impl<T: Real> LaplacianOperator<T> {
    pub fn uniform(graph: &MeshGraph<T>) -> Result<Self> {
        let n = graph.num_vertices();
        let rows = (0..n)
            .map(|i| {
                let nb = graph.neighbors(i);
                let w = T::one() / T::c(nb.len() as f64);
                std::iter::once((i, T::one()))
                    .chain(nb.iter().map(|&j| (j, -w)))
                    .collect()
            })
            .collect();
        Ok(Self {
            matrix: Csr::from_rows(n, rows)?,
        })
    }

    pub fn size(&self) -> usize {
        self.matrix.nrows()
    }

    /// `Δ = L V` for a row-major `N × width` block.
    pub fn apply_flat(&self, v: &[T], width: usize) -> Result<Vec<T>> {
        if v.len() != self.size() * width {
            return Err(Error::dim("laplacian input", self.size() * width, v.len()));
        }
        Ok(self.matrix.mul_dense(v, width))
    }

    /// VJP: `Lᵀ G`.
    pub fn vjp_flat(&self, g: &[T], width: usize) -> Result<Vec<T>> {
        if g.len() != self.size() * width {
            return Err(Error::dim("laplacian upstream", self.size() * width, g.len()));
        }
        Ok(self.matrix.tmul_dense(g, width))
    }

    pub fn apply(&self, vertices: &[[T; 3]]) -> Result<Vec<[T; 3]>> {
        let flat: Vec<T> = vertices.iter().flatten().copied().collect();
        Ok(unflatten3(&self.apply_flat(&flat, 3)?))
    }

    pub fn vjp(&self, upstream: &[[T; 3]]) -> Result<Vec<[T; 3]>> {
        let flat: Vec<T> = upstream.iter().flatten().copied().collect();
        Ok(unflatten3(&self.vjp_flat(&flat, 3)?))
    }

    pub fn cast<U: Real>(&self) -> LaplacianOperator<U> {
        LaplacianOperator {
            matrix: self.matrix.cast(),
        }
    }
}

/// Builds the uniform Laplacian of `graph` and applies it to `vertices`.
pub fn uniform_laplacian<T: Real>(
    graph: &MeshGraph<T>,
    vertices: &[[T; 3]],
) -> Result<(LaplacianOperator<T>, Vec<[T; 3]>)> {
    if vertices.len() != graph.num_vertices() {
        return Err(Error::dim("uniform_laplacian vertices", graph.num_vertices(), vertices.len()));
    }
    let op = LaplacianOperator::uniform(graph)?;
    let delta = op.apply(vertices)?;
    Ok((op, delta))
}

pub fn flatten3<T: Copy>(points: &[[T; 3]]) -> Vec<T> {
    points.iter().flatten().copied().collect()
}

pub fn unflatten3<T: Copy>(flat: &[T]) -> Vec<[T; 3]> {
    flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
}

pub fn write_obj<T: Real>(path: &Path, vertices: &[[T; 3]], faces: &[[usize; 3]]) -> Result<()> {
    std::fs::write(path, obj_string(vertices, faces))?;
    Ok(())
}

pub fn obj_string<T: Real>(vertices: &[[T; 3]], faces: &[[usize; 3]]) -> String {
    let mut out = String::with_capacity(vertices.len() * 32 + faces.len() * 16);
    for v in vertices {
        let _ = writeln!(out, "v {:.6} {:.6} {:.6}", v[0].f64(), v[1].f64(), v[2].f64());
    }
    for f in faces {
        let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    out
}

/// Reads `v` and triangular `f` records; `f a/b/c` forms keep the position index.
pub fn read_obj<T: Real>(path: &Path) -> Result<(Vec<[T; 3]>, Vec<[usize; 3]>)> {
    let text = std::fs::read_to_string(path)?;
    let name = path.display().to_string();
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("v") => {
                let mut p = [T::zero(); 3];
                for slot in &mut p {
                    let s = tok
                        .next()
                        .ok_or_else(|| Error::format(&name, format!("line {}: short vertex", lineno + 1)))?;
                    let x: f64 = s
                        .parse()
                        .map_err(|_| Error::format(&name, format!("line {}: bad number {s}", lineno + 1)))?;
                    *slot = T::c(x);
                }
                vertices.push(p);
            }
            Some("f") => {
                let idx: Vec<usize> = tok
                    .map(|s| {
                        s.split('/')
                            .next()
                            .and_then(|i| i.parse::<usize>().ok())
                            .filter(|&i| i >= 1)
                            .map(|i| i - 1)
                            .ok_or_else(|| Error::format(&name, format!("line {}: bad index {s}", lineno + 1)))
                    })
                    .collect::<Result<_>>()?;
                if idx.len() != 3 {
                    return Err(Error::format(&name, format!("line {}: only triangles supported", lineno + 1)));
                }
                faces.push([idx[0], idx[1], idx[2]]);
            }
            _ => {}
        }
    }
    Ok((vertices, faces))
}

pub fn write_part_labels(path: &Path, part_of_vertex: &[usize]) -> Result<()> {
    let map: BTreeMap<usize, usize> = part_of_vertex.iter().copied().enumerate().collect();
    std::fs::write(path, serde_json::to_string(&map)?)?;
    Ok(())
}

pub fn read_part_labels(path: &Path, n: usize) -> Result<Vec<usize>> {
    let map: BTreeMap<usize, usize> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let mut parts = vec![usize::MAX; n];
    for (v, p) in map {
        if v >= n {
            return Err(Error::format(path.display().to_string(), format!("vertex {v} out of range")));
        }
        parts[v] = p;
    }
    if let Some(v) = parts.iter().position(|&p| p == usize::MAX) {
        return Err(Error::format(path.display().to_string(), format!("vertex {v} has no part label")));
    }
    Ok(parts)
}

/// Loads an OBJ plus its label sidecar; each face takes the label of its first vertex.
pub fn read_labeled_mesh<T: Real>(obj: &Path, labels: &Path) -> Result<Mesh<T>> {
    let (vertices, faces) = read_obj(obj)?;
    let part_of_vertex = read_part_labels(labels, vertices.len())?;
    let part_of_face = faces.iter().map(|f| part_of_vertex[f[0]]).collect();
    Mesh::new(vertices, faces, part_of_vertex, part_of_face)
}
