//! Triangle-mesh data model: adjacency for attention masking, midpoint
//! subdivision for coarse-to-fine upsampling, and OBJ file I/O.

pub mod mask;

use std::collections::BTreeSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    vertex_count: usize,
    faces: Vec<[usize; 3]>,
    positions: Option<Vec<[f64; 3]>>,
}

impl TriangleMesh {
    pub fn new(
        vertex_count: usize,
        faces: Vec<[usize; 3]>,
        positions: Option<Vec<[f64; 3]>>,
    ) -> Result<Self> {
        if vertex_count == 0 {
            return Err(Error::Data("mesh with zero vertices".into()));
        }
        for (i, f) in faces.iter().enumerate() {
            if f.iter().any(|&v| v >= vertex_count) {
                return Err(Error::Data(format!(
                    "face {i} {f:?} references a vertex >= {vertex_count}"
                )));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::Data(format!("degenerate face {i} {f:?}")));
            }
        }
        if let Some(pos) = &positions {
            if pos.len() != vertex_count {
                return Err(Error::Data(format!(
                    "{} positions for {vertex_count} vertices",
                    pos.len()
                )));
            }
            if pos.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::Numeric("non-finite vertex position".into()));
            }
        }
        Ok(TriangleMesh { vertex_count, faces, positions })
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn positions(&self) -> Option<&[[f64; 3]]> {
        self.positions.as_deref()
    }

    /// Rest positions as an [N, 3] tensor.
    pub fn positions_tensor(&self) -> Result<Tensor> {
        let pos = self
            .positions
            .as_ref()
            .ok_or_else(|| Error::Data("mesh has no vertex positions".into()))?;
        Tensor::new(vec![self.vertex_count, 3], pos.iter().flatten().copied().collect())
    }

    /// Undirected edges as sorted (min, max) pairs, deduplicated.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut set = BTreeSet::new();
        for f in &self.faces {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[0], f[2])] {
                set.insert((a.min(b), a.max(b)));
            }
        }
        set.into_iter().collect()
    }

    /// Diagonal of the axis-aligned bounding box of the rest positions.
    pub fn bounding_box_diagonal(&self) -> Result<f64> {
        let pos = self
            .positions
            .as_ref()
            .ok_or_else(|| Error::Data("mesh has no vertex positions".into()))?;
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in pos {
            for d in 0..3 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        Ok(((hi[0] - lo[0]).powi(2) + (hi[1] - lo[1]).powi(2) + (hi[2] - lo[2]).powi(2)).sqrt())
    }

    /// One face on three vertices.
    pub fn triangle(scale: f64) -> Self {
        TriangleMesh::new(
            3,
            vec![[0, 1, 2]],
            Some(vec![
                [0.0, 0.0, 0.0],
                [scale, 0.0, 0.0],
                [0.0, scale, 0.0],
            ]),
        )
        .expect("static mesh is valid")
    }

    /// Two faces sharing the edge (1, 2); vertices 0 and 3 are the unique
    /// non-adjacent pair.
    pub fn two_triangles(scale: f64) -> Self {
        TriangleMesh::new(
            4,
            vec![[0, 1, 2], [1, 3, 2]],
            Some(vec![
                [0.0, 0.0, 0.0],
                [scale, 0.0, 0.0],
                [0.0, scale, 0.0],
                [scale, scale, 0.0],
            ]),
        )
        .expect("static mesh is valid")
    }

    /// Regular tetrahedron centered at the origin; `scale` is the
    /// half-extent of its bounding box along each axis.
    pub fn tetrahedron(scale: f64) -> Self {
        TriangleMesh::new(
            4,
            vec![[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]],
            Some(vec![
                [scale, scale, scale],
                [scale, -scale, -scale],
                [-scale, scale, -scale],
                [-scale, -scale, scale],
            ]),
        )
        .expect("static mesh is valid")
    }

    /// Triangle strip with an arbitrary vertex count (n >= 3); used to build
    /// synthetic topologies of any size.
    pub fn strip(n: usize, scale: f64) -> Result<Self> {
        if n < 3 {
            return Err(Error::Data(format!("strip needs at least 3 vertices, got {n}")));
        }
        let faces = (0..n - 2).map(|i| [i, i + 1, i + 2]).collect();
        let positions = (0..n)
            .map(|i| {
                let x = i as f64 / (n - 1) as f64;
                [
                    scale * (2.0 * x - 1.0),
                    scale * if i % 2 == 0 { 0.35 } else { -0.35 },
                    scale * 0.25 * (std::f64::consts::PI * 3.0 * x).sin(),
                ]
            })
            .collect();
        TriangleMesh::new(n, faces, Some(positions))
    }

    /// Parse the OBJ subset: `v` and `f` records, 1-based indices,
    /// triangles only. Other record types are skipped.
    pub fn parse_obj(text: &str) -> Result<Self> {
        let mut positions: Vec<[f64; 3]> = Vec::new();
        let mut faces: Vec<[usize; 3]> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut toks = line.split_whitespace();
            match toks.next() {
                Some("v") => {
                    let coords: Vec<f64> = toks
                        .map(|t| {
                            t.parse::<f64>()
                                .map_err(|_| Error::Data(format!("line {}: bad coordinate '{t}'", lineno + 1)))
                        })
                        .collect::<Result<_>>()?;
                    if coords.len() < 3 {
                        return Err(Error::Data(format!("line {}: vertex needs 3 coordinates", lineno + 1)));
                    }
                    positions.push([coords[0], coords[1], coords[2]]);
                }
                Some("f") => {
                    let idx: Vec<usize> = toks
                        .map(|t| {
                            let first = t.split('/').next().unwrap_or(t);
                            first
                                .parse::<usize>()
                                .map_err(|_| Error::Data(format!("line {}: bad face index '{t}'", lineno + 1)))
                        })
                        .collect::<Result<_>>()?;
                    if idx.len() != 3 {
                        return Err(Error::Data(format!(
                            "line {}: only triangles are supported, face has {} vertices",
                            lineno + 1,
                            idx.len()
                        )));
                    }
                    if idx.iter().any(|&i| i == 0) {
                        return Err(Error::Data(format!("line {}: OBJ indices are 1-based", lineno + 1)));
                    }
                    faces.push([idx[0] - 1, idx[1] - 1, idx[2] - 1]);
                }
                _ => {}
            }
        }
        TriangleMesh::new(positions.len(), faces, Some(positions))
    }

    pub fn load_obj(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::parse_obj(&text)
    }

    pub fn to_obj_string(&self) -> Result<String> {
        use std::fmt::Write;
        let pos = self
            .positions
            .as_ref()
            .ok_or_else(|| Error::Data("cannot export a mesh without positions".into()))?;
        let mut out = String::new();
        for p in pos {
            let _ = writeln!(out, "v {} {} {}", p[0], p[1], p[2]);
        }
        for f in &self.faces {
            let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
        }
        Ok(out)
    }

    pub fn save_obj(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_obj_string()?)
            .map_err(|e| Error::io(path.display().to_string(), e))
    }
}

/// Boolean-valued vertex adjacency: entry (i, j) = 1 iff i != j and some
/// face contains both. Symmetric with a zero diagonal.
pub fn build_adjacency(mesh: &TriangleMesh) -> SparseMatrix {
    let n = mesh.vertex_count();
    let mut pairs = BTreeSet::new();
    for (a, b) in mesh.edges() {
        pairs.insert((a, b));
        pairs.insert((b, a));
    }
    let entries = pairs.into_iter().map(|(r, c)| (r, c, 1.0)).collect();
    SparseMatrix::new(n, n, entries).expect("edges are in range")
}

/// Midpoint subdivision: the fine mesh keeps the original vertices and adds
/// one vertex per edge; each face becomes four. The returned upsampling
/// matrix U has one-hot rows for kept vertices and half/half rows for edge
/// midpoints, so U applied to coarse rest positions reproduces the fine
/// rest positions exactly.
pub fn subdivide(mesh: &TriangleMesh) -> Result<(TriangleMesh, SparseMatrix)> {
    let n = mesh.vertex_count();
    let edges = mesh.edges();
    let edge_index: std::collections::BTreeMap<(usize, usize), usize> =
        edges.iter().enumerate().map(|(i, &e)| (e, n + i)).collect();
    let m = n + edges.len();

    let mut entries: Vec<(usize, usize, f64)> = (0..n).map(|i| (i, i, 1.0)).collect();
    for (&(a, b), &mid) in &edge_index {
        entries.push((mid, a, 0.5));
        entries.push((mid, b, 0.5));
    }
    let upsample = SparseMatrix::new(m, n, entries)?;

    let mid = |a: usize, b: usize| edge_index[&(a.min(b), a.max(b))];
    let mut faces = Vec::with_capacity(mesh.faces().len() * 4);
    for &[a, b, c] in mesh.faces() {
        let (mab, mbc, mca) = (mid(a, b), mid(b, c), mid(c, a));
        faces.push([a, mab, mca]);
        faces.push([b, mbc, mab]);
        faces.push([c, mca, mbc]);
        faces.push([mab, mbc, mca]);
    }

    let positions = match mesh.positions() {
        Some(_) => {
            let fine = upsample.apply(&mesh.positions_tensor()?)?;
            Some(
                (0..m)
                    .map(|i| [fine.at2(i, 0), fine.at2(i, 1), fine.at2(i, 2)])
                    .collect(),
            )
        }
        None => None,
    };
    Ok((TriangleMesh::new(m, faces, positions)?, upsample))
}

/// The three mesh-derived matrices the model consumes: the N x N vertex
/// adjacency (for attention masking), the M x N upsampling matrix U, and
/// the K x M joint regression matrix R.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub adjacency: SparseMatrix,
    pub upsample: SparseMatrix,
    pub regressor: SparseMatrix,
}

impl Topology {
    pub fn new(adjacency: SparseMatrix, upsample: SparseMatrix, regressor: SparseMatrix) -> Result<Self> {
        if adjacency.rows() != adjacency.cols() {
            return Err(Error::Data(format!(
                "adjacency must be square, got {}x{}",
                adjacency.rows(),
                adjacency.cols()
            )));
        }
        if upsample.cols() != adjacency.rows() {
            return Err(Error::Data(format!(
                "upsampling matrix has {} columns but the mesh has {} vertices",
                upsample.cols(),
                adjacency.rows()
            )));
        }
        if regressor.cols() != upsample.rows() {
            return Err(Error::Data(format!(
                "joint regressor has {} columns but the fine mesh has {} vertices",
                regressor.cols(),
                upsample.rows()
            )));
        }
        upsample.validate_upsampling()?;
        Ok(Topology { adjacency, upsample, regressor })
    }

    /// Derive everything from a coarse mesh: adjacency from its faces, the
    /// upsampling matrix from `levels` midpoint subdivisions (composed by
    /// sparse products), and a synthetic block joint regressor. Returns the
    /// topology together with the fine mesh.
    pub fn by_subdivision(coarse: &TriangleMesh, joints: usize, levels: usize) -> Result<(Self, TriangleMesh)> {
        if levels == 0 {
            return Err(Error::Config("subdivision levels must be at least 1".into()));
        }
        let adjacency = build_adjacency(coarse);
        let mut mesh = coarse.clone();
        let mut upsample: Option<SparseMatrix> = None;
        for _ in 0..levels {
            let (fine, u) = subdivide(&mesh)?;
            upsample = Some(match upsample {
                None => u,
                Some(prev) => u.multiply(&prev)?,
            });
            mesh = fine;
        }
        let upsample = upsample.expect("at least one level");
        let regressor = block_joint_regressor(joints, upsample.rows())?;
        let topology = Topology::new(adjacency, upsample, regressor)?;
        Ok((topology, mesh))
    }

    pub fn coarse_vertices(&self) -> usize {
        self.adjacency.rows()
    }

    pub fn fine_vertices(&self) -> usize {
        self.upsample.rows()
    }

    pub fn joints(&self) -> usize {
        self.regressor.rows()
    }
}

/// Synthetic K x M joint regressor: joint k is the mean of the k-th
/// contiguous block of fine vertices. Rows sum to 1, mirroring how real
/// regressors express joints as convex combinations of vertices.
pub fn block_joint_regressor(joints: usize, fine_vertices: usize) -> Result<SparseMatrix> {
    if joints == 0 || fine_vertices < joints {
        return Err(Error::Config(format!(
            "cannot place {joints} joints on {fine_vertices} vertices"
        )));
    }
    let mut entries = Vec::new();
    for k in 0..joints {
        let start = k * fine_vertices / joints;
        let end = (k + 1) * fine_vertices / joints;
        let w = 1.0 / (end - start) as f64;
        for v in start..end {
            entries.push((k, v, w));
        }
    }
    SparseMatrix::new(joints, fine_vertices, entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adjacency_of_single_triangle_is_complete() {
        let adj = build_adjacency(&TriangleMesh::triangle(1.0));
        assert_eq!(adj.nnz(), 6);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(adj.get(i, j), if i == j { 0.0 } else { 1.0 });
            }
        }
    }

    #[test]
    fn adjacency_of_tetrahedron_has_twelve_nonzeros() {
        let adj = build_adjacency(&TriangleMesh::tetrahedron(1.0));
        assert_eq!(adj.nnz(), 12);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(adj.get(i, j), if i == j { 0.0 } else { 1.0 });
            }
        }
    }

    #[test]
    fn adjacency_of_shared_edge_pair_skips_opposite_corners() {
        let adj = build_adjacency(&TriangleMesh::two_triangles(1.0));
        assert_eq!(adj.nnz(), 10);
        assert_eq!(adj.get(0, 3), 0.0);
        assert_eq!(adj.get(3, 0), 0.0);
        assert_eq!(adj.get(1, 2), 1.0);
    }

    #[test]
    fn subdivide_triangle_counts() {
        let (fine, u) = subdivide(&TriangleMesh::triangle(1.0)).unwrap();
        assert_eq!(fine.vertex_count(), 6);
        assert_eq!(fine.faces().len(), 4);
        assert_eq!(u.rows(), 6);
        assert_eq!(u.cols(), 3);
    }

    #[test]
    fn subdivide_tetrahedron_counts() {
        let (fine, u) = subdivide(&TriangleMesh::tetrahedron(1.0)).unwrap();
        assert_eq!(fine.vertex_count(), 10);
        assert_eq!(fine.faces().len(), 16);
        u.validate_upsampling().unwrap();
    }

    #[test]
    fn upsampling_rows_are_one_hot_then_midpoints() {
        let mesh = TriangleMesh::triangle(2.0);
        let (fine, u) = subdivide(&mesh).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(u.get(i, j), if i == j { 1.0 } else { 0.0 });
            }
        }
        // midpoints are exact
        let coarse = mesh.positions_tensor().unwrap();
        let up = u.apply(&coarse).unwrap();
        let fine_pos = fine.positions_tensor().unwrap();
        assert_eq!(up.values(), fine_pos.values());
    }

    #[test]
    fn invalid_faces_rejected() {
        assert!(TriangleMesh::new(3, vec![[0, 1, 3]], None).is_err());
        assert!(TriangleMesh::new(3, vec![[0, 1, 1]], None).is_err());
    }

    #[test]
    fn obj_round_trip() {
        let mesh = TriangleMesh::tetrahedron(1.5);
        let text = mesh.to_obj_string().unwrap();
        let back = TriangleMesh::parse_obj(&text).unwrap();
        assert_eq!(mesh, back);
    }

    #[test]
    fn obj_rejects_quads() {
        let err = TriangleMesh::parse_obj("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n");
        assert!(matches!(err, Err(Error::Data(_))));
    }

    #[test]
    fn block_regressor_rows_sum_to_one() {
        let r = block_joint_regressor(4, 34).unwrap();
        for s in r.row_sums() {
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert_eq!(r.rows(), 4);
        assert_eq!(r.cols(), 34);
    }
}
