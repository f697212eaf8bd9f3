//! Recorded-op tape for reverse-mode differentiation.
//!
//! A forward pass pushes one node per primitive op; node indices grow
//! monotonically, so a single reverse scan over the record visits every op
//! exactly once in reverse topological order. Values are immutable once
//! pushed. One tape belongs to one pass; independent passes may run
//! concurrently on separate tapes.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;
use crate::tensor::Tensor;

/// Handle to a value on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// Additive constant used to suppress disallowed attention logits before
/// the exact post-softmax zeroing. exp(x - 1e9) underflows to 0.0 for any
/// realistic score, so allowed rows still sum to 1 exactly.
pub const MASK_NEG: f64 = -1e9;

/// Boolean attention-mask layout consumed by [`Tape::masked_softmax`].
///
/// `heads == 0` means one (q, k) pattern shared by every head; otherwise
/// `allowed` holds `heads` consecutive (q, k) blocks.
#[derive(Debug, Clone)]
pub struct MaskPlan {
    pub heads: usize,
    pub q: usize,
    pub k: usize,
    pub allowed: Vec<bool>,
}

impl MaskPlan {
    pub fn shared(q: usize, k: usize, allowed: Vec<bool>) -> Result<Self> {
        if allowed.len() != q * k {
            return Err(Error::Shape(format!(
                "mask plan expects {}x{}={} flags, got {}",
                q,
                k,
                q * k,
                allowed.len()
            )));
        }
        Ok(MaskPlan { heads: 0, q, k, allowed })
    }

    pub fn per_head(heads: usize, q: usize, k: usize, allowed: Vec<bool>) -> Result<Self> {
        if allowed.len() != heads * q * k {
            return Err(Error::Shape(format!(
                "mask plan expects {heads}x{q}x{k} flags, got {}",
                allowed.len()
            )));
        }
        Ok(MaskPlan { heads, q, k, allowed })
    }

    /// Flags for head `h`, row `qi`.
    fn row(&self, h: usize, qi: usize) -> &[bool] {
        let base = if self.heads == 0 { qi * self.k } else { (h * self.q + qi) * self.k };
        &self.allowed[base..base + self.k]
    }
}

enum Op {
    Leaf,
    Linear { x: usize, w: usize, b: usize },
    Matmul { a: usize, b: usize },
    TransposeLast { x: usize },
    SplitHeads { x: usize, heads: usize },
    MergeHeads { x: usize },
    Add { a: usize, b: usize },
    AddRow { x: usize, row: usize },
    Scale { x: usize, c: f64 },
    MulScalar { x: usize, s: usize },
    Relu { x: usize },
    Softplus { x: usize },
    LayerNorm { x: usize, gain: usize, shift: usize, eps: f64 },
    // the output's exact zeros encode the mask, so backward needs no copy of it
    MaskedSoftmax { scores: usize },
    ConcatRows { parts: Vec<usize> },
    SliceRows { x: usize, start: usize },
    SliceCols { x: usize, start: usize },
    Reshape { x: usize },
    ExtractPatches { x: usize, patch: usize },
    SparseMatmul { matrix: Arc<SparseMatrix>, x: usize },
    Sum { x: usize },
    L1Mean { a: usize, b: usize },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// The computation record. See module docs.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the backward root with respect to `v`, if `v` required
    /// grad and participated in the computation.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        value.check_finite()?;
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn any_grad(&self, vars: &[usize]) -> bool {
        vars.iter().any(|&i| self.nodes[i].requires_grad)
    }

    /// Insert a constant or parameter value.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// y = x W + b over the trailing dimension of x.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if wv.rank() != 2 {
            return Err(Error::Shape(format!("linear weight must be 2-D, got {:?}", wv.shape())));
        }
        let (d_in, d_out) = (wv.shape()[0], wv.shape()[1]);
        if xv.rank() == 0 || *xv.shape().last().unwrap() != d_in {
            return Err(Error::Shape(format!(
                "linear input {:?} does not end in weight rows {:?}",
                xv.shape(),
                wv.shape()
            )));
        }
        if bv.numel() != d_out {
            return Err(Error::Shape(format!(
                "linear bias {:?} does not match weight cols {:?}",
                bv.shape(),
                wv.shape()
            )));
        }
        let n = xv.numel() / d_in;
        let mut out = vec![0.0; n * d_out];
        for i in 0..n {
            let xi = &xv.values()[i * d_in..(i + 1) * d_in];
            let oi = &mut out[i * d_out..(i + 1) * d_out];
            oi.copy_from_slice(bv.values());
            for (k, &xk) in xi.iter().enumerate() {
                let wrow = &wv.values()[k * d_out..(k + 1) * d_out];
                for j in 0..d_out {
                    oi[j] += xk * wrow[j];
                }
            }
        }
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = d_out;
        let rg = self.any_grad(&[x.0, w.0, b.0]);
        self.push(Tensor::new(shape, out)?, Op::Linear { x: x.0, w: w.0, b: b.0 }, rg)
    }

    /// 2-D or batched 3-D matrix product.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let value = match (av.rank(), bv.rank()) {
            (2, 2) => {
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let (k2, n) = (bv.shape()[0], bv.shape()[1]);
                if k != k2 {
                    return Err(Error::Shape(format!(
                        "matmul inner dims differ: {:?} x {:?}",
                        av.shape(),
                        bv.shape()
                    )));
                }
                Tensor::new(vec![m, n], matmul_raw(av.values(), bv.values(), m, k, n))?
            }
            (3, 3) => {
                let (hb, m, k) = (av.shape()[0], av.shape()[1], av.shape()[2]);
                let (hb2, k2, n) = (bv.shape()[0], bv.shape()[1], bv.shape()[2]);
                if hb != hb2 || k != k2 {
                    return Err(Error::Shape(format!(
                        "batched matmul dims differ: {:?} x {:?}",
                        av.shape(),
                        bv.shape()
                    )));
                }
                let mut out = vec![0.0; hb * m * n];
                for h in 0..hb {
                    let ab = &av.values()[h * m * k..(h + 1) * m * k];
                    let bb = &bv.values()[h * k * n..(h + 1) * k * n];
                    out[h * m * n..(h + 1) * m * n]
                        .copy_from_slice(&matmul_raw(ab, bb, m, k, n));
                }
                Tensor::new(vec![hb, m, n], out)?
            }
            _ => {
                return Err(Error::Shape(format!(
                    "matmul supports 2-D or 3-D pairs, got {:?} x {:?}",
                    av.shape(),
                    bv.shape()
                )))
            }
        };
        let rg = self.any_grad(&[a.0, b.0]);
        self.push(value, Op::Matmul { a: a.0, b: b.0 }, rg)
    }

    /// Swap the last two dimensions of a 2-D or 3-D tensor.
    pub fn transpose_last(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let value = match xv.rank() {
            2 => transpose2(xv.values(), xv.shape()[0], xv.shape()[1], vec![xv.shape()[1], xv.shape()[0]]),
            3 => {
                let (h, m, n) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
                let mut out = vec![0.0; h * m * n];
                for b in 0..h {
                    for i in 0..m {
                        for j in 0..n {
                            out[b * m * n + j * m + i] = xv.values()[b * m * n + i * n + j];
                        }
                    }
                }
                Tensor::new(vec![h, n, m], out)?
            }
            r => return Err(Error::Shape(format!("transpose_last needs rank 2 or 3, got {r}"))),
        };
        let rg = self.requires_grad(x);
        self.push(value, Op::TransposeLast { x: x.0 }, rg)
    }

    /// [t, heads*dh] -> [heads, t, dh].
    pub fn split_heads(&mut self, x: Var, heads: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 2 || xv.shape()[1] % heads != 0 {
            return Err(Error::Shape(format!(
                "split_heads: {:?} not divisible into {heads} heads",
                xv.shape()
            )));
        }
        let (t, d) = (xv.shape()[0], xv.shape()[1]);
        let dh = d / heads;
        let mut out = vec![0.0; t * d];
        for h in 0..heads {
            for i in 0..t {
                for j in 0..dh {
                    out[(h * t + i) * dh + j] = xv.values()[i * d + h * dh + j];
                }
            }
        }
        let rg = self.requires_grad(x);
        self.push(Tensor::new(vec![heads, t, dh], out)?, Op::SplitHeads { x: x.0, heads }, rg)
    }

    /// [heads, t, dh] -> [t, heads*dh]; inverse of [`Tape::split_heads`].
    pub fn merge_heads(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 3 {
            return Err(Error::Shape(format!("merge_heads needs rank 3, got {:?}", xv.shape())));
        }
        let (heads, t, dh) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        let d = heads * dh;
        let mut out = vec![0.0; t * d];
        for h in 0..heads {
            for i in 0..t {
                for j in 0..dh {
                    out[i * d + h * dh + j] = xv.values()[(h * t + i) * dh + j];
                }
            }
        }
        let rg = self.requires_grad(x);
        self.push(Tensor::new(vec![t, d], out)?, Op::MergeHeads { x: x.0 }, rg)
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::Shape(format!(
                "add shapes differ: {:?} vs {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let values = av.values().iter().zip(bv.values()).map(|(x, y)| x + y).collect();
        let shape = av.shape().to_vec();
        let rg = self.any_grad(&[a.0, b.0]);
        self.push(Tensor::new(shape, values)?, Op::Add { a: a.0, b: b.0 }, rg)
    }

    /// Broadcast a [1, d] (or [d]) row over every row of a 2-D tensor.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (xv, rv) = (self.value(x), self.value(row));
        if xv.rank() != 2 || rv.numel() != xv.shape()[1] {
            return Err(Error::Shape(format!(
                "add_row: {:?} broadcast over {:?}",
                rv.shape(),
                xv.shape()
            )));
        }
        let (n, d) = (xv.shape()[0], xv.shape()[1]);
        let mut values = xv.values().to_vec();
        for i in 0..n {
            for j in 0..d {
                values[i * d + j] += rv.values()[j];
            }
        }
        let rg = self.any_grad(&[x.0, row.0]);
        self.push(Tensor::new(vec![n, d], values)?, Op::AddRow { x: x.0, row: row.0 }, rg)
    }

    /// Multiply by a compile-time constant.
    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let value = self.value(x).map(|v| v * c);
        let rg = self.requires_grad(x);
        self.push(value, Op::Scale { x: x.0, c }, rg)
    }

    /// Multiply every element by a one-element tensor variable.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        let sv = self.value(s);
        if sv.numel() != 1 {
            return Err(Error::Shape(format!(
                "mul_scalar factor must have one element, got {:?}",
                sv.shape()
            )));
        }
        let c = sv.values()[0];
        let value = self.value(x).map(|v| v * c);
        let rg = self.any_grad(&[x.0, s.0]);
        self.push(value, Op::MulScalar { x: x.0, s: s.0 }, rg)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(|v| if v > 0.0 { v } else { 0.0 });
        let rg = self.requires_grad(x);
        self.push(value, Op::Relu { x: x.0 }, rg)
    }

    /// ln(1 + e^x), evaluated stably.
    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(|v| v.max(0.0) + (-v.abs()).exp().ln_1p());
        let rg = self.requires_grad(x);
        self.push(value, Op::Softplus { x: x.0 }, rg)
    }

    /// Normalize the trailing dimension to zero mean and unit variance, then
    /// apply the learnable gain and shift.
    pub fn layer_norm(&mut self, x: Var, gain: Var, shift: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(Error::Config(format!("layer_norm eps must be positive, got {eps}")));
        }
        let (xv, gv, sv) = (self.value(x), self.value(gain), self.value(shift));
        let d = *xv.shape().last().ok_or_else(|| Error::Shape("layer_norm on rank-0 input".into()))?;
        if gv.numel() != d || sv.numel() != d {
            return Err(Error::Shape(format!(
                "layer_norm gain {:?} / shift {:?} do not match trailing dim {d}",
                gv.shape(),
                sv.shape()
            )));
        }
        let n = xv.numel() / d;
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            let xi = &xv.values()[i * d..(i + 1) * d];
            let (mu, inv) = row_norm_stats(xi, eps);
            for j in 0..d {
                out[i * d + j] = gv.values()[j] * (xi[j] - mu) * inv + sv.values()[j];
            }
        }
        let shape = xv.shape().to_vec();
        let rg = self.any_grad(&[x.0, gain.0, shift.0]);
        self.push(
            Tensor::new(shape, out)?,
            Op::LayerNorm { x: x.0, gain: gain.0, shift: shift.0, eps },
            rg,
        )
    }

    /// Row-wise softmax over the trailing dimension with optional masking.
    ///
    /// Disallowed entries receive probability exactly 0 and pass no
    /// gradient; allowed rows sum to 1. A row with every entry disallowed is
    /// a configuration error naming the row. Rows whose mask is entirely
    /// true take the identical code path as an absent mask, so an all-true
    /// mask reproduces the unmasked output bitwise.
    pub fn masked_softmax(&mut self, scores: Var, mask: Option<&Arc<MaskPlan>>) -> Result<Var> {
        let sv = self.value(scores);
        let (h, q, k) = canonical_hqk(sv.shape())?;
        if let Some(plan) = mask {
            if plan.q != q || plan.k != k {
                return Err(Error::Shape(format!(
                    "mask plan ({}, {}) does not fit scores {:?}",
                    plan.q,
                    plan.k,
                    sv.shape()
                )));
            }
            if plan.heads != 0 && plan.heads != h {
                return Err(Error::Shape(format!(
                    "mask plan has {} heads, scores have {h}",
                    plan.heads
                )));
            }
        }
        let mut out = vec![0.0; sv.numel()];
        for hh in 0..h {
            for qi in 0..q {
                let base = (hh * q + qi) * k;
                let row = &sv.values()[base..base + k];
                let flags = mask.map(|p| p.row(hh, qi));
                let fully_allowed = flags.map_or(true, |f| f.iter().all(|&a| a));
                if fully_allowed {
                    softmax_row(row, &mut out[base..base + k]);
                } else {
                    let flags = flags.unwrap();
                    if !flags.iter().any(|&a| a) {
                        return Err(Error::Config(format!(
                            "masked_softmax: row {qi} of head {hh} has no allowed entries"
                        )));
                    }
                    let shifted: Vec<f64> = row
                        .iter()
                        .zip(flags)
                        .map(|(&s, &a)| if a { s } else { s + MASK_NEG })
                        .collect();
                    softmax_row(&shifted, &mut out[base..base + k]);
                    for (o, &a) in out[base..base + k].iter_mut().zip(flags) {
                        if !a {
                            *o = 0.0;
                        }
                    }
                }
            }
        }
        let shape = sv.shape().to_vec();
        let rg = self.requires_grad(scores);
        self.push(Tensor::new(shape, out)?, Op::MaskedSoftmax { scores: scores.0 }, rg)
    }

    /// Stack 2-D tensors with equal column counts along the row axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Shape("concat_rows of zero parts".into()));
        }
        let d = self.value(parts[0]).shape().get(1).copied().ok_or_else(|| {
            Error::Shape(format!("concat_rows needs 2-D parts, got {:?}", self.value(parts[0]).shape()))
        })?;
        let mut values = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.rank() != 2 || pv.shape()[1] != d {
                return Err(Error::Shape(format!(
                    "concat_rows part {:?} does not match column count {d}",
                    pv.shape()
                )));
            }
            rows += pv.shape()[0];
            values.extend_from_slice(pv.values());
        }
        let idx: Vec<usize> = parts.iter().map(|v| v.0).collect();
        let rg = self.any_grad(&idx);
        self.push(Tensor::new(vec![rows, d], values)?, Op::ConcatRows { parts: idx }, rg)
    }

    /// Contiguous row range [start, end) of a 2-D tensor.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 2 || start >= end || end > xv.shape()[0] {
            return Err(Error::Shape(format!(
                "slice_rows [{start}, {end}) of {:?}",
                xv.shape()
            )));
        }
        let d = xv.shape()[1];
        let values = xv.values()[start * d..end * d].to_vec();
        let rg = self.requires_grad(x);
        self.push(Tensor::new(vec![end - start, d], values)?, Op::SliceRows { x: x.0, start }, rg)
    }

    /// Contiguous column range [start, end) of a 2-D tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 2 || start >= end || end > xv.shape()[1] {
            return Err(Error::Shape(format!(
                "slice_cols [{start}, {end}) of {:?}",
                xv.shape()
            )));
        }
        let (n, d) = (xv.shape()[0], xv.shape()[1]);
        let w = end - start;
        let mut values = vec![0.0; n * w];
        for i in 0..n {
            values[i * w..(i + 1) * w]
                .copy_from_slice(&xv.values()[i * d + start..i * d + end]);
        }
        let rg = self.requires_grad(x);
        self.push(Tensor::new(vec![n, w], values)?, Op::SliceCols { x: x.0, start }, rg)
    }

    /// View under a new shape with identical element count.
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshaped(shape.to_vec())?;
        let rg = self.requires_grad(x);
        self.push(value, Op::Reshape { x: x.0 }, rg)
    }

    /// [H, W, ch] image -> [grid_h*grid_w, patch*patch*ch] rows of flattened
    /// non-overlapping patches, scanned row-major.
    pub fn extract_patches(&mut self, x: Var, patch: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 3 {
            return Err(Error::Shape(format!("extract_patches needs [H, W, ch], got {:?}", xv.shape())));
        }
        let (hi, wi, ch) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        if patch == 0 || hi % patch != 0 || wi % patch != 0 {
            return Err(Error::Config(format!(
                "image {hi}x{wi} not divisible by patch size {patch}"
            )));
        }
        let (gh, gw) = (hi / patch, wi / patch);
        let cols = patch * patch * ch;
        let mut out = vec![0.0; gh * gw * cols];
        for gy in 0..gh {
            for gx in 0..gw {
                let r = gy * gw + gx;
                for py in 0..patch {
                    for px in 0..patch {
                        for c in 0..ch {
                            out[r * cols + (py * patch + px) * ch + c] =
                                xv.values()[((gy * patch + py) * wi + gx * patch + px) * ch + c];
                        }
                    }
                }
            }
        }
        let rg = self.requires_grad(x);
        self.push(Tensor::new(vec![gh * gw, cols], out)?, Op::ExtractPatches { x: x.0, patch }, rg)
    }

    /// Sparse-dense product S X with S a constant sparse matrix.
    pub fn sparse_matmul(&mut self, matrix: &Arc<SparseMatrix>, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 2 || xv.shape()[0] != matrix.cols() {
            return Err(Error::Shape(format!(
                "sparse_matmul: {}x{} times {:?}",
                matrix.rows(),
                matrix.cols(),
                xv.shape()
            )));
        }
        let d = xv.shape()[1];
        let mut out = vec![0.0; matrix.rows() * d];
        for &(r, c, v) in matrix.entries() {
            let src = &xv.values()[c * d..(c + 1) * d];
            let dst = &mut out[r * d..(r + 1) * d];
            for j in 0..d {
                dst[j] += v * src[j];
            }
        }
        let rg = self.requires_grad(x);
        self.push(
            Tensor::new(vec![matrix.rows(), d], out)?,
            Op::SparseMatmul { matrix: Arc::clone(matrix), x: x.0 },
            rg,
        )
    }

    /// Sum of all elements, as a rank-0 scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total: f64 = self.value(x).values().iter().sum();
        let rg = self.requires_grad(x);
        self.push(Tensor::scalar(total), Op::Sum { x: x.0 }, rg)
    }

    /// Mean over the leading axis of per-row L1 norms:
    /// (1/n) sum_i ||a_i - b_i||_1.
    pub fn l1_mean(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::Shape(format!(
                "l1_mean shapes differ: {:?} vs {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        if av.rank() == 0 {
            return Err(Error::Shape("l1_mean needs at least rank 1".into()));
        }
        let n = av.shape()[0] as f64;
        let total: f64 = av.values().iter().zip(bv.values()).map(|(x, y)| (x - y).abs()).sum();
        let rg = self.any_grad(&[a.0, b.0]);
        self.push(Tensor::scalar(total / n), Op::L1Mean { a: a.0, b: b.0 }, rg)
    }

    /// Run the record backward from a scalar root and return the gradients
    /// of every participating grad-tracked node.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_node = &self.nodes[root.0];
        if root_node.value.numel() != 1 {
            return Err(Error::Shape(format!(
                "backward root must be scalar, got {:?}",
                root_node.value.shape()
            )));
        }
        if !root_node.requires_grad {
            return Err(Error::Config("backward root does not require grad".into()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);

        for idx in (0..=root.0).rev() {
            let Some(gout) = grads[idx].take() else { continue };
            self.accumulate(idx, &gout, &mut grads)?;
            grads[idx] = Some(gout);
        }
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if !g.iter().all(|v| v.is_finite()) {
                    return Err(Error::Numeric(format!(
                        "non-finite gradient for tape node {i}"
                    )));
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(
        &self,
        idx: usize,
        gout: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) -> Result<()> {
        let add_to = |grads: &mut [Option<Vec<f64>>], target: usize, contrib: &dyn Fn(&mut [f64])| {
            if !self.nodes[target].requires_grad {
                return;
            }
            let slot = grads[target]
                .get_or_insert_with(|| vec![0.0; self.nodes[target].value.numel()]);
            contrib(slot);
        };
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let xv = &self.nodes[*x].value;
                let wv = &self.nodes[*w].value;
                let (d_in, d_out) = (wv.shape()[0], wv.shape()[1]);
                let n = xv.numel() / d_in;
                add_to(grads, *x, &|g: &mut [f64]| {
                    for i in 0..n {
                        for kk in 0..d_in {
                            let wrow = &wv.values()[kk * d_out..(kk + 1) * d_out];
                            let mut acc = 0.0;
                            for j in 0..d_out {
                                acc += gout[i * d_out + j] * wrow[j];
                            }
                            g[i * d_in + kk] += acc;
                        }
                    }
                });
                add_to(grads, *w, &|g: &mut [f64]| {
                    for i in 0..n {
                        for kk in 0..d_in {
                            let xik = xv.values()[i * d_in + kk];
                            if xik == 0.0 {
                                continue;
                            }
                            for j in 0..d_out {
                                g[kk * d_out + j] += xik * gout[i * d_out + j];
                            }
                        }
                    }
                });
                add_to(grads, *b, &|g: &mut [f64]| {
                    for i in 0..n {
                        for j in 0..d_out {
                            g[j] += gout[i * d_out + j];
                        }
                    }
                });
            }
            Op::Matmul { a, b } => {
                let av = &self.nodes[*a].value;
                let bv = &self.nodes[*b].value;
                let batched = av.rank() == 3;
                let (hb, m, k) = if batched {
                    (av.shape()[0], av.shape()[1], av.shape()[2])
                } else {
                    (1, av.shape()[0], av.shape()[1])
                };
                let n = *bv.shape().last().unwrap();
                add_to(grads, *a, &|g: &mut [f64]| {
                    // dA = dY B^T
                    for h in 0..hb {
                        let bb = &bv.values()[h * k * n..(h + 1) * k * n];
                        let go = &gout[h * m * n..(h + 1) * m * n];
                        let ga = &mut g[h * m * k..(h + 1) * m * k];
                        for i in 0..m {
                            for kk in 0..k {
                                let mut acc = 0.0;
                                for j in 0..n {
                                    acc += go[i * n + j] * bb[kk * n + j];
                                }
                                ga[i * k + kk] += acc;
                            }
                        }
                    }
                });
                add_to(grads, *b, &|g: &mut [f64]| {
                    // dB = A^T dY
                    for h in 0..hb {
                        let ab = &av.values()[h * m * k..(h + 1) * m * k];
                        let go = &gout[h * m * n..(h + 1) * m * n];
                        let gb = &mut g[h * k * n..(h + 1) * k * n];
                        for i in 0..m {
                            for kk in 0..k {
                                let aik = ab[i * k + kk];
                                if aik == 0.0 {
                                    continue;
                                }
                                for j in 0..n {
                                    gb[kk * n + j] += aik * go[i * n + j];
                                }
                            }
                        }
                    }
                });
            }
            Op::TransposeLast { x } => {
                let xv = &self.nodes[*x].value;
                let (hb, m, n) = if xv.rank() == 3 {
                    (xv.shape()[0], xv.shape()[1], xv.shape()[2])
                } else {
                    (1, xv.shape()[0], xv.shape()[1])
                };
                add_to(grads, *x, &|g: &mut [f64]| {
                    for h in 0..hb {
                        for i in 0..m {
                            for j in 0..n {
                                g[h * m * n + i * n + j] += gout[h * m * n + j * m + i];
                            }
                        }
                    }
                });
            }
            Op::SplitHeads { x, heads } => {
                let xv = &self.nodes[*x].value;
                let (t, d) = (xv.shape()[0], xv.shape()[1]);
                let dh = d / heads;
                let heads = *heads;
                add_to(grads, *x, &|g: &mut [f64]| {
                    for h in 0..heads {
                        for i in 0..t {
                            for j in 0..dh {
                                g[i * d + h * dh + j] += gout[(h * t + i) * dh + j];
                            }
                        }
                    }
                });
            }
            Op::MergeHeads { x } => {
                let xv = &self.nodes[*x].value;
                let (heads, t, dh) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
                let d = heads * dh;
                add_to(grads, *x, &|g: &mut [f64]| {
                    for h in 0..heads {
                        for i in 0..t {
                            for j in 0..dh {
                                g[(h * t + i) * dh + j] += gout[i * d + h * dh + j];
                            }
                        }
                    }
                });
            }
            Op::Add { a, b } => {
                for t in [*a, *b] {
                    add_to(grads, t, &|g: &mut [f64]| {
                        for (gi, go) in g.iter_mut().zip(gout) {
                            *gi += go;
                        }
                    });
                }
            }
            Op::AddRow { x, row } => {
                let d = self.nodes[*row].value.numel();
                let n = gout.len() / d;
                add_to(grads, *x, &|g: &mut [f64]| {
                    for (gi, go) in g.iter_mut().zip(gout) {
                        *gi += go;
                    }
                });
                add_to(grads, *row, &|g: &mut [f64]| {
                    for i in 0..n {
                        for j in 0..d {
                            g[j] += gout[i * d + j];
                        }
                    }
                });
            }
            Op::Scale { x, c } => {
                let c = *c;
                add_to(grads, *x, &|g: &mut [f64]| {
                    for (gi, go) in g.iter_mut().zip(gout) {
                        *gi += c * go;
                    }
                });
            }
            Op::MulScalar { x, s } => {
                let xv = &self.nodes[*x].value;
                let c = self.nodes[*s].value.values()[0];
                add_to(grads, *x, &|g: &mut [f64]| {
                    for (gi, go) in g.iter_mut().zip(gout) {
                        *gi += c * go;
                    }
                });
                add_to(grads, *s, &|g: &mut [f64]| {
                    let mut acc = 0.0;
                    for (xi, go) in xv.values().iter().zip(gout) {
                        acc += xi * go;
                    }
                    g[0] += acc;
                });
            }
            Op::Relu { x } => {
                let xv = &self.nodes[*x].value;
                add_to(grads, *x, &|g: &mut [f64]| {
                    for ((gi, go), xi) in g.iter_mut().zip(gout).zip(xv.values()) {
                        if *xi > 0.0 {
                            *gi += go;
                        }
                    }
                });
            }
            Op::Softplus { x } => {
                let xv = &self.nodes[*x].value;
                add_to(grads, *x, &|g: &mut [f64]| {
                    for ((gi, go), xi) in g.iter_mut().zip(gout).zip(xv.values()) {
                        *gi += go * sigmoid(*xi);
                    }
                });
            }
            Op::LayerNorm { x, gain, shift, eps } => {
                let xv = &self.nodes[*x].value;
                let gv = &self.nodes[*gain].value;
                let d = *xv.shape().last().unwrap();
                let n = xv.numel() / d;
                let eps = *eps;
                add_to(grads, *shift, &|g: &mut [f64]| {
                    for i in 0..n {
                        for j in 0..d {
                            g[j] += gout[i * d + j];
                        }
                    }
                });
                add_to(grads, *gain, &|g: &mut [f64]| {
                    for i in 0..n {
                        let xi = &xv.values()[i * d..(i + 1) * d];
                        let (mu, inv) = row_norm_stats(xi, eps);
                        for j in 0..d {
                            g[j] += gout[i * d + j] * (xi[j] - mu) * inv;
                        }
                    }
                });
                add_to(grads, *x, &|g: &mut [f64]| {
                    for i in 0..n {
                        let xi = &xv.values()[i * d..(i + 1) * d];
                        let (mu, inv) = row_norm_stats(xi, eps);
                        // dL/dx = inv * (h - mean(h) - xhat * mean(h .* xhat))
                        // with h = gain .* dL/dy
                        let mut mean_h = 0.0;
                        let mut mean_hx = 0.0;
                        for j in 0..d {
                            let xhat = (xi[j] - mu) * inv;
                            let hj = gv.values()[j] * gout[i * d + j];
                            mean_h += hj;
                            mean_hx += hj * xhat;
                        }
                        mean_h /= d as f64;
                        mean_hx /= d as f64;
                        for j in 0..d {
                            let xhat = (xi[j] - mu) * inv;
                            let hj = gv.values()[j] * gout[i * d + j];
                            g[i * d + j] += inv * (hj - mean_h - xhat * mean_hx);
                        }
                    }
                });
            }
            Op::MaskedSoftmax { scores } => {
                let pv = &self.nodes[idx].value;
                let (h, q, k) = canonical_hqk(pv.shape()).expect("validated at forward");
                add_to(grads, *scores, &|g: &mut [f64]| {
                    for row in 0..h * q {
                        let base = row * k;
                        let p = &pv.values()[base..base + k];
                        let go = &gout[base..base + k];
                        let dot: f64 = p.iter().zip(go).map(|(pi, gi)| pi * gi).sum();
                        for j in 0..k {
                            // masked entries have p == 0, so no gradient flows
                            g[base + j] += p[j] * (go[j] - dot);
                        }
                    }
                });
            }
            Op::ConcatRows { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.nodes[p].value.numel();
                    let local = &gout[offset..offset + len];
                    add_to(grads, p, &|g: &mut [f64]| {
                        for (gi, go) in g.iter_mut().zip(local) {
                            *gi += go;
                        }
                    });
                    offset += len;
                }
            }
            Op::SliceRows { x, start } => {
                let d = self.nodes[*x].value.shape()[1];
                let start = *start;
                add_to(grads, *x, &|g: &mut [f64]| {
                    for (i, go) in gout.iter().enumerate() {
                        g[start * d + i] += go;
                    }
                });
            }
            Op::SliceCols { x, start } => {
                let xv = &self.nodes[*x].value;
                let (n, d) = (xv.shape()[0], xv.shape()[1]);
                let w = gout.len() / n;
                let start = *start;
                add_to(grads, *x, &|g: &mut [f64]| {
                    for i in 0..n {
                        for j in 0..w {
                            g[i * d + start + j] += gout[i * w + j];
                        }
                    }
                });
            }
            Op::Reshape { x } => {
                add_to(grads, *x, &|g: &mut [f64]| {
                    for (gi, go) in g.iter_mut().zip(gout) {
                        *gi += go;
                    }
                });
            }
            Op::ExtractPatches { x, patch } => {
                let xv = &self.nodes[*x].value;
                let (_, wi, ch) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
                let patch = *patch;
                let gw = wi / patch;
                let cols = patch * patch * ch;
                let rows = gout.len() / cols;
                add_to(grads, *x, &|g: &mut [f64]| {
                    for r in 0..rows {
                        let (gy, gx) = (r / gw, r % gw);
                        for py in 0..patch {
                            for px in 0..patch {
                                for c in 0..ch {
                                    g[((gy * patch + py) * wi + gx * patch + px) * ch + c] +=
                                        gout[r * cols + (py * patch + px) * ch + c];
                                }
                            }
                        }
                    }
                });
            }
            Op::SparseMatmul { matrix, x } => {
                let d = self.nodes[*x].value.shape()[1];
                add_to(grads, *x, &|g: &mut [f64]| {
                    for &(r, c, v) in matrix.entries() {
                        let go = &gout[r * d..(r + 1) * d];
                        let gx = &mut g[c * d..(c + 1) * d];
                        for j in 0..d {
                            gx[j] += v * go[j];
                        }
                    }
                });
            }
            Op::Sum { x } => {
                let go = gout[0];
                add_to(grads, *x, &|g: &mut [f64]| {
                    for gi in g.iter_mut() {
                        *gi += go;
                    }
                });
            }
            Op::L1Mean { a, b } => {
                let av = &self.nodes[*a].value;
                let bv = &self.nodes[*b].value;
                let n = av.shape()[0] as f64;
                let go = gout[0] / n;
                add_to(grads, *a, &|g: &mut [f64]| {
                    for (gi, (x, y)) in g.iter_mut().zip(av.values().iter().zip(bv.values())) {
                        *gi += go * sign(x - y);
                    }
                });
                add_to(grads, *b, &|g: &mut [f64]| {
                    for (gi, (x, y)) in g.iter_mut().zip(av.values().iter().zip(bv.values())) {
                        *gi -= go * sign(x - y);
                    }
                });
            }
        }
        Ok(())
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for kk in 0..k {
            let aik = a[i * k + kk];
            if aik == 0.0 {
                continue;
            }
            let brow = &b[kk * n..(kk + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += aik * brow[j];
            }
        }
    }
    out
}

fn transpose2(values: &[f64], m: usize, n: usize, shape: Vec<usize>) -> Tensor {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = values[i * n + j];
        }
    }
    Tensor::new(shape, out).expect("transpose preserves element count")
}

/// Interpret a rank 1-3 shape as (heads, queries, keys).
fn canonical_hqk(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match shape.len() {
        1 => Ok((1, 1, shape[0])),
        2 => Ok((1, shape[0], shape[1])),
        3 => Ok((shape[0], shape[1], shape[2])),
        r => Err(Error::Shape(format!("softmax input must have rank 1-3, got {r}"))),
    }
}

fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, &s) in out.iter_mut().zip(row) {
        let e = (s - max).exp();
        *o = e;
        z += e;
    }
    for o in out.iter_mut() {
        *o /= z;
    }
}

/// Mean and inverse standard deviation of one row.
fn row_norm_stats(row: &[f64], eps: f64) -> (f64, f64) {
    let d = row.len() as f64;
    let mu = row.iter().sum::<f64>() / d;
    let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<f64>() / d;
    (mu, 1.0 / (var + eps).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf2(tape: &mut Tape, rows: &[Vec<f64>], rg: bool) -> Var {
        let t = Tensor::from_rows(rows).unwrap();
        tape.leaf(t, rg).unwrap()
    }

    #[test]
    fn linear_identity_passthrough() {
        let mut tape = Tape::new();
        let x = leaf2(&mut tape, &[vec![1.0, 2.0]], false);
        let w = leaf2(&mut tape, &[vec![1.0, 0.0], vec![0.0, 1.0]], false);
        let b = tape.leaf(Tensor::new(vec![2], vec![0.0, 0.0]).unwrap(), false).unwrap();
        let y = tape.linear(x, w, b).unwrap();
        assert_eq!(tape.value(y).values(), &[1.0, 2.0]);
    }

    #[test]
    fn linear_hand_matrix_multiply() {
        let mut tape = Tape::new();
        let x = leaf2(&mut tape, &[vec![1.0, 0.0], vec![0.0, 1.0]], false);
        let w = leaf2(&mut tape, &[vec![2.0, 0.0], vec![0.0, 3.0]], false);
        let b = tape.leaf(Tensor::new(vec![2], vec![1.0, 1.0]).unwrap(), false).unwrap();
        let y = tape.linear(x, w, b).unwrap();
        assert_eq!(tape.value(y).values(), &[3.0, 1.0, 1.0, 4.0]);
    }

    #[test]
    fn linear_shape_mismatch_names_shapes() {
        let mut tape = Tape::new();
        let x = leaf2(&mut tape, &[vec![1.0, 2.0, 3.0]], false);
        let w = leaf2(&mut tape, &[vec![1.0], vec![1.0]], false);
        let b = tape.leaf(Tensor::new(vec![1], vec![0.0]).unwrap(), false).unwrap();
        let err = tape.linear(x, w, b).unwrap_err().to_string();
        assert!(err.contains("[1, 3]") && err.contains("[2, 1]"), "{err}");
    }

    #[test]
    fn softmax_uniform_and_single_survivor() {
        let mut tape = Tape::new();
        let s = tape.leaf(Tensor::new(vec![2], vec![0.0, 0.0]).unwrap(), false).unwrap();
        let p = tape.masked_softmax(s, None).unwrap();
        assert_eq!(tape.value(p).values(), &[0.5, 0.5]);

        let s = tape.leaf(Tensor::new(vec![3], vec![5.0, 5.0, 5.0]).unwrap(), false).unwrap();
        let plan = Arc::new(MaskPlan::shared(1, 3, vec![false, true, false]).unwrap());
        let p = tape.masked_softmax(s, Some(&plan)).unwrap();
        assert_eq!(tape.value(p).values(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn softmax_two_logit_values() {
        let mut tape = Tape::new();
        let s = tape.leaf(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap(), false).unwrap();
        let p = tape.masked_softmax(s, None).unwrap();
        let v = tape.value(p).values();
        assert!((v[0] - 0.26894).abs() < 1e-4);
        assert!((v[1] - 0.73106).abs() < 1e-4);
    }

    #[test]
    fn softmax_fully_masked_row_names_row() {
        let mut tape = Tape::new();
        let s = leaf2(&mut tape, &[vec![0.0, 0.0], vec![0.0, 0.0]], false);
        let plan = Arc::new(MaskPlan::shared(2, 2, vec![true, true, false, false]).unwrap());
        let err = tape.masked_softmax(s, Some(&plan)).unwrap_err().to_string();
        assert!(err.contains("row 1"), "{err}");
    }

    #[test]
    fn softmax_all_true_mask_bitwise_equals_unmasked() {
        let mut tape = Tape::new();
        let vals: Vec<f64> = (0..24).map(|i| (i as f64 * 0.37).sin() * 3.0).collect();
        let s1 = tape.leaf(Tensor::new(vec![2, 3, 4], vals.clone()).unwrap(), false).unwrap();
        let s2 = tape.leaf(Tensor::new(vec![2, 3, 4], vals).unwrap(), false).unwrap();
        let plan = Arc::new(MaskPlan::shared(3, 4, vec![true; 12]).unwrap());
        let p1 = tape.masked_softmax(s1, None).unwrap();
        let p2 = tape.masked_softmax(s2, Some(&plan)).unwrap();
        let (v1, v2) = (tape.value(p1).values().to_vec(), tape.value(p2).values().to_vec());
        for (a, b) in v1.iter().zip(&v2) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn softmax_masked_entries_get_zero_gradient() {
        let plan = Arc::new(MaskPlan::shared(1, 3, vec![true, false, true]).unwrap());
        let mut tape = Tape::new();
        let s = tape
            .leaf(Tensor::new(vec![1, 1, 3], vec![0.3, -0.7, 1.1]).unwrap(), true)
            .unwrap();
        let p = tape.masked_softmax(s, Some(&plan)).unwrap();
        // reduce through a single output entry so the softmax grad is nonzero
        let flat = tape.reshape(p, &[1, 3]).unwrap();
        let col = tape.slice_cols(flat, 2, 3).unwrap();
        let root = tape.sum(col).unwrap();
        let grads = tape.backward(root).unwrap();
        let gs = grads.get(s).unwrap();
        assert_eq!(gs[1], 0.0, "masked logit must receive zero gradient");
        assert!(gs[0] != 0.0 && gs[2] != 0.0);
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![1, 3], vec![1.0, 1.0, 1.0]).unwrap(), false).unwrap();
        let g = tape.leaf(Tensor::new(vec![3], vec![1.0; 3]).unwrap(), false).unwrap();
        let s = tape.leaf(Tensor::new(vec![3], vec![0.0; 3]).unwrap(), false).unwrap();
        let y = tape.layer_norm(x, g, s, 1e-5).unwrap();
        assert_eq!(tape.value(y).values(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn layer_norm_two_point_standardization() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![1, 2], vec![-1.0, 1.0]).unwrap(), false).unwrap();
        let g = tape.leaf(Tensor::new(vec![2], vec![1.0; 2]).unwrap(), false).unwrap();
        let s = tape.leaf(Tensor::new(vec![2], vec![0.0; 2]).unwrap(), false).unwrap();
        let y = tape.layer_norm(x, g, s, 1e-5).unwrap();
        let v = tape.value(y).values();
        assert!((v[0] + 1.0).abs() < 1e-3 && (v[1] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn l1_mean_hand_values() {
        let mut tape = Tape::new();
        let a = leaf2(&mut tape, &[vec![0.0, 0.0, 0.0]], false);
        let b = leaf2(&mut tape, &[vec![1.0, -2.0, 3.0]], false);
        let l = tape.l1_mean(a, b).unwrap();
        assert_eq!(tape.value(l).scalar_value().unwrap(), 6.0);

        let a = leaf2(&mut tape, &[vec![1.0, 0.0], vec![0.0, 1.0]], false);
        let b = leaf2(&mut tape, &[vec![0.0, 0.0], vec![0.0, 0.0]], false);
        let l = tape.l1_mean(a, b).unwrap();
        assert_eq!(tape.value(l).scalar_value().unwrap(), 1.0);

        let l0 = tape.l1_mean(a, a).unwrap();
        assert_eq!(tape.value(l0).scalar_value().unwrap(), 0.0);
    }

    #[test]
    fn split_merge_heads_round_trip() {
        let mut tape = Tape::new();
        let vals: Vec<f64> = (0..24).map(|i| i as f64).collect();
        let x = tape.leaf(Tensor::new(vec![3, 8], vals.clone()).unwrap(), false).unwrap();
        let h = tape.split_heads(x, 2).unwrap();
        assert_eq!(tape.value(h).shape(), &[2, 3, 4]);
        let back = tape.merge_heads(h).unwrap();
        assert_eq!(tape.value(back).values(), &vals[..]);
    }

    #[test]
    fn concat_slice_round_trip() {
        let mut tape = Tape::new();
        let a = leaf2(&mut tape, &[vec![1.0, 2.0]], false);
        let b = leaf2(&mut tape, &[vec![3.0, 4.0], vec![5.0, 6.0]], false);
        let c = tape.concat_rows(&[a, b]).unwrap();
        assert_eq!(tape.value(c).shape(), &[3, 2]);
        let tail = tape.slice_rows(c, 1, 3).unwrap();
        assert_eq!(tape.value(tail).values(), &[3.0, 4.0, 5.0, 6.0]);
        let col = tape.slice_cols(c, 1, 2).unwrap();
        assert_eq!(tape.value(col).values(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn non_finite_op_output_is_hard_error() {
        let mut tape = Tape::new();
        let big = tape.leaf(Tensor::new(vec![1], vec![1e308]).unwrap(), false).unwrap();
        let err = tape.add(big, big);
        assert!(matches!(err, Err(Error::Numeric(_))));
    }
}
