//! Decoder self-attention masks derived from mesh topology.
//!
//! Joint tokens attend everywhere and are attended from everywhere; the
//! vertex-vertex block is restricted to mesh-adjacent pairs plus the
//! diagonal. An optional per-head override leaves some heads unmasked.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;
use crate::tensor::tape::MaskPlan;

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMask {
    size: usize,
    joints: usize,
    allowed: Vec<bool>,
    /// Head indices where masking is disabled (those heads see everything).
    disabled_heads: Vec<usize>,
}

impl AttentionMask {
    /// Boolean (K+N)^2 mask from an N x N vertex adjacency matrix.
    ///
    /// With `half_heads`, heads `0..num_heads/2` apply the mask and the
    /// remaining heads run unmasked.
    pub fn from_adjacency(
        adjacency: &SparseMatrix,
        joints: usize,
        half_heads: bool,
        num_heads: usize,
    ) -> Result<Self> {
        if adjacency.rows() != adjacency.cols() {
            return Err(Error::Data(format!(
                "adjacency must be square, got {}x{}",
                adjacency.rows(),
                adjacency.cols()
            )));
        }
        for &(r, c, v) in adjacency.entries() {
            if v != 0.0 && adjacency.get(c, r) == 0.0 {
                return Err(Error::Data(format!(
                    "adjacency is asymmetric at ({r}, {c})"
                )));
            }
        }
        let n = adjacency.rows();
        let size = joints + n;
        let mut allowed = vec![true; size * size];
        for i in 0..n {
            for j in 0..n {
                let ok = i == j || adjacency.get(i, j) != 0.0;
                allowed[(joints + i) * size + (joints + j)] = ok;
            }
        }
        let disabled_heads = if half_heads {
            if num_heads < 2 {
                return Err(Error::Config(format!(
                    "half-head masking needs at least 2 heads, got {num_heads}"
                )));
            }
            (num_heads / 2..num_heads).collect()
        } else {
            Vec::new()
        };
        Ok(AttentionMask { size, joints, allowed, disabled_heads })
    }

    /// Mask with every pair allowed (used to compare against mask-off mode).
    pub fn all_true(size: usize, joints: usize) -> Self {
        AttentionMask {
            size,
            joints,
            allowed: vec![true; size * size],
            disabled_heads: Vec::new(),
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn disabled_heads(&self) -> &[usize] {
        &self.disabled_heads
    }

    pub fn is_allowed(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.size + j]
    }

    /// Number of disallowed entries in the full (K+N)^2 pattern.
    pub fn masked_entry_count(&self) -> usize {
        self.allowed.iter().filter(|&&a| !a).count()
    }

    /// Indices of vertex pairs (mesh-local, 0-based) that are masked.
    pub fn masked_vertex_pairs(&self) -> Vec<(usize, usize)> {
        let n = self.size - self.joints;
        let mut pairs = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if !self.is_allowed(self.joints + i, self.joints + j) {
                    pairs.push((i, j));
                }
            }
        }
        pairs
    }

    /// Materialize the layout consumed by the softmax op for a given head
    /// count. Without head overrides the pattern is shared; with overrides
    /// each head gets its own block.
    pub fn to_plan(&self, num_heads: usize) -> Result<Arc<MaskPlan>> {
        if num_heads == 0 {
            return Err(Error::Config("mask plan needs at least one head".into()));
        }
        let plan = if self.disabled_heads.is_empty() {
            MaskPlan::shared(self.size, self.size, self.allowed.clone())?
        } else {
            if self.disabled_heads.iter().any(|&h| h >= num_heads) {
                return Err(Error::Config(format!(
                    "disabled head out of range for {num_heads} heads"
                )));
            }
            let block = self.size * self.size;
            let mut all = Vec::with_capacity(num_heads * block);
            for h in 0..num_heads {
                if self.disabled_heads.contains(&h) {
                    all.extend(std::iter::repeat(true).take(block));
                } else {
                    all.extend_from_slice(&self.allowed);
                }
            }
            MaskPlan::per_head(num_heads, self.size, self.size, all)?
        };
        Ok(Arc::new(plan))
    }

    /// Validate the structural invariants: full diagonal, all-true joint
    /// rows and columns, symmetric vertex block.
    pub fn validate(&self) -> Result<()> {
        for i in 0..self.size {
            if !self.is_allowed(i, i) {
                return Err(Error::Config(format!("mask diagonal entry {i} is false")));
            }
        }
        for i in 0..self.joints {
            for j in 0..self.size {
                if !self.is_allowed(i, j) || !self.is_allowed(j, i) {
                    return Err(Error::Config(format!(
                        "joint row/col ({i}, {j}) must be allowed"
                    )));
                }
            }
        }
        let n = self.size - self.joints;
        for i in 0..n {
            for j in 0..n {
                if self.is_allowed(self.joints + i, self.joints + j)
                    != self.is_allowed(self.joints + j, self.joints + i)
                {
                    return Err(Error::Config(format!(
                        "vertex block asymmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_adjacency, TriangleMesh};

    #[test]
    fn triangle_mesh_mask_allows_everything() {
        let adj = build_adjacency(&TriangleMesh::triangle(1.0));
        let mask = AttentionMask::from_adjacency(&adj, 2, false, 8).unwrap();
        assert_eq!(mask.size(), 5);
        assert_eq!(mask.masked_entry_count(), 0);
        mask.validate().unwrap();
    }

    #[test]
    fn two_triangles_mask_blocks_exactly_one_pair() {
        let adj = build_adjacency(&TriangleMesh::two_triangles(1.0));
        let mask = AttentionMask::from_adjacency(&adj, 1, false, 8).unwrap();
        assert_eq!(mask.size(), 5);
        assert_eq!(mask.masked_entry_count(), 2);
        assert_eq!(mask.masked_vertex_pairs(), vec![(0, 3), (3, 0)]);
        mask.validate().unwrap();
    }

    #[test]
    fn diagonal_always_allowed() {
        let adj = build_adjacency(&TriangleMesh::two_triangles(1.0));
        let mask = AttentionMask::from_adjacency(&adj, 0, false, 8).unwrap();
        for i in 0..mask.size() {
            assert!(mask.is_allowed(i, i));
        }
    }

    #[test]
    fn half_head_plan_unmasks_upper_heads() {
        let adj = build_adjacency(&TriangleMesh::two_triangles(1.0));
        let mask = AttentionMask::from_adjacency(&adj, 1, true, 4).unwrap();
        assert_eq!(mask.disabled_heads(), &[2, 3]);
        let plan = mask.to_plan(4).unwrap();
        assert_eq!(plan.heads, 4);
        let block = mask.size() * mask.size();
        // masked heads carry the pattern, disabled heads are all-true
        assert!(plan.allowed[..block].iter().any(|&a| !a));
        assert!(plan.allowed[2 * block..3 * block].iter().all(|&a| a));
    }

    #[test]
    fn asymmetric_adjacency_rejected() {
        let adj = SparseMatrix::new(2, 2, vec![(0, 1, 1.0)]).unwrap();
        let err = AttentionMask::from_adjacency(&adj, 1, false, 8);
        assert!(matches!(err, Err(Error::Data(_))));
    }
}
