//! Singular value decomposition of 3x3 matrices via one-sided Jacobi
//! rotations. Small fixed size, no external dependency; the kernel behind
//! similarity alignment in the evaluation metrics.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAX_SWEEPS: usize = 100;
// column-pair cosine below which a rotation is skipped; roundoff in the
// rotated dot products sits near 3*eps, so 1e-13 terminates reliably while
// keeping orthogonality errors far inside the 1e-8 contract
const ORTHO_TOL: f64 = 1e-13;

/// Decompose `m` (3x3) into `U diag(S) V^T` with U, V orthogonal and S
/// sorted descending, non-negative.
pub fn svd3(m: &Tensor) -> Result<(Tensor, [f64; 3], Tensor)> {
    if m.shape() != [3, 3] {
        return Err(Error::Shape(format!("svd3 expects [3, 3], got {:?}", m.shape())));
    }
    m.check_finite()?;
    let mut a = [0.0; 9]; // working copy, column-rotated in place
    a.copy_from_slice(m.values());
    let mut v = [0.0; 9];
    v[0] = 1.0;
    v[4] = 1.0;
    v[8] = 1.0;

    // columns whose squared norm falls below this are numerically zero;
    // rotating them chases underflow noise and never converges
    let frob2: f64 = a.iter().map(|v| v * v).sum();
    let dead = frob2 * 1e-30 + f64::MIN_POSITIVE;

    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        converged = true;
        for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
            let mut alpha = 0.0;
            let mut beta = 0.0;
            let mut gamma = 0.0;
            for r in 0..3 {
                alpha += a[r * 3 + p] * a[r * 3 + p];
                beta += a[r * 3 + q] * a[r * 3 + q];
                gamma += a[r * 3 + p] * a[r * 3 + q];
            }
            if alpha <= dead || beta <= dead {
                continue;
            }
            if gamma == 0.0 || gamma.abs() <= ORTHO_TOL * (alpha * beta).sqrt() {
                continue;
            }
            converged = false;
            let zeta = (beta - alpha) / (2.0 * gamma);
            let t = if zeta.abs() > 1e150 {
                0.5 / zeta // limit of the closed form before zeta^2 overflows
            } else {
                zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt())
            };
            let c = 1.0 / (1.0 + t * t).sqrt();
            let s = c * t;
            for r in 0..3 {
                let (ap, aq) = (a[r * 3 + p], a[r * 3 + q]);
                a[r * 3 + p] = c * ap - s * aq;
                a[r * 3 + q] = s * ap + c * aq;
                let (vp, vq) = (v[r * 3 + p], v[r * 3 + q]);
                v[r * 3 + p] = c * vp - s * vq;
                v[r * 3 + q] = s * vp + c * vq;
            }
        }
        if converged {
            break;
        }
    }
    if !converged {
        return Err(Error::Numeric(format!(
            "svd3 did not converge within {MAX_SWEEPS} Jacobi sweeps"
        )));
    }

    // Singular values are the column norms of the rotated matrix.
    let mut sv = [0.0; 3];
    for j in 0..3 {
        sv[j] = (a[j] * a[j] + a[3 + j] * a[3 + j] + a[6 + j] * a[6 + j]).sqrt();
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| sv[j].partial_cmp(&sv[i]).unwrap());

    let s_max = sv[order[0]];
    let rank_tol = s_max * 1e-13;
    let mut u = [0.0; 9];
    let mut vout = [0.0; 9];
    let mut s_out = [0.0; 3];
    let mut filled = [false; 3];
    for (dst, &src) in order.iter().enumerate() {
        s_out[dst] = sv[src];
        for r in 0..3 {
            vout[r * 3 + dst] = v[r * 3 + src];
        }
        if sv[src] > rank_tol && sv[src] > 0.0 {
            for r in 0..3 {
                u[r * 3 + dst] = a[r * 3 + src] / sv[src];
            }
            filled[dst] = true;
        }
    }
    complete_orthonormal(&mut u, &filled);

    Ok((
        Tensor::new(vec![3, 3], u.to_vec())?,
        s_out,
        Tensor::new(vec![3, 3], vout.to_vec())?,
    ))
}

/// Fill unfilled columns of `u` with unit vectors orthogonal to the filled
/// ones, deterministically.
fn complete_orthonormal(u: &mut [f64; 9], filled: &[bool; 3]) {
    for j in 0..3 {
        if filled[j] {
            continue;
        }
        let mut best = [0.0; 3];
        let mut best_norm = -1.0;
        for axis in 0..3 {
            let mut cand = [0.0; 3];
            cand[axis] = 1.0;
            // remove projections onto already-set columns
            for k in 0..3 {
                if k == j || (!filled[k] && k > j) {
                    continue;
                }
                let col = [u[k], u[3 + k], u[6 + k]];
                let dot = cand[0] * col[0] + cand[1] * col[1] + cand[2] * col[2];
                for r in 0..3 {
                    cand[r] -= dot * col[r];
                }
            }
            let norm = (cand[0] * cand[0] + cand[1] * cand[1] + cand[2] * cand[2]).sqrt();
            if norm > best_norm {
                best_norm = norm;
                best = cand;
            }
        }
        for r in 0..3 {
            u[r * 3 + j] = best[r] / best_norm;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn reconstruct(u: &Tensor, s: &[f64; 3], v: &Tensor) -> [f64; 9] {
        let mut out = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = 0.0;
                for k in 0..3 {
                    acc += u.at2(i, k) * s[k] * v.at2(j, k);
                }
                out[i * 3 + j] = acc;
            }
        }
        out
    }

    fn orthogonality_error(q: &Tensor) -> f64 {
        let mut err: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = 0.0;
                for r in 0..3 {
                    acc += q.at2(r, i) * q.at2(r, j);
                }
                let expect = if i == j { 1.0 } else { 0.0 };
                err = err.max((acc - expect).abs());
            }
        }
        err
    }

    fn check(m: &Tensor) {
        let (u, s, v) = svd3(m).unwrap();
        assert!(s[0] >= s[1] && s[1] >= s[2] && s[2] >= 0.0, "unsorted {s:?}");
        let rec = reconstruct(&u, &s, &v);
        for (got, want) in rec.iter().zip(m.values()) {
            assert!((got - want).abs() < 1e-8, "reconstruction off: {got} vs {want}");
        }
        assert!(orthogonality_error(&u) < 1e-8);
        assert!(orthogonality_error(&v) < 1e-8);
    }

    #[test]
    fn identity_has_unit_singular_values() {
        let m = Tensor::new(vec![3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let (_, s, _) = svd3(&m).unwrap();
        assert_eq!(s, [1.0, 1.0, 1.0]);
        check(&m);
    }

    #[test]
    fn diagonal_input_sorts_descending() {
        let m = Tensor::new(vec![3, 3], vec![3.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let (_, s, _) = svd3(&m).unwrap();
        assert!((s[0] - 3.0).abs() < 1e-12 && (s[1] - 2.0).abs() < 1e-12 && (s[2] - 1.0).abs() < 1e-12);
        check(&m);
    }

    #[test]
    fn thousand_random_matrices_reconstruct() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for trial in 0..1000 {
            let mut vals: Vec<f64> = (0..9).map(|_| rng.gen_range(-2.0..2.0)).collect();
            match trial % 5 {
                // rank-deficient variants
                1 => {
                    for j in 0..3 {
                        vals[3 + j] = vals[j] * 2.0; // dependent rows
                    }
                }
                2 => {
                    for i in 0..3 {
                        vals[i * 3 + 2] = 0.0; // zero column
                    }
                }
                3 => {
                    // rank 1 outer product
                    let a = [vals[0], vals[1], vals[2]];
                    let b = [vals[3], vals[4], vals[5]];
                    for i in 0..3 {
                        for j in 0..3 {
                            vals[i * 3 + j] = a[i] * b[j];
                        }
                    }
                }
                4 if trial % 25 == 4 => {
                    vals = vec![0.0; 9]; // zero matrix
                }
                _ => {}
            }
            let m = Tensor::new(vec![3, 3], vals).unwrap();
            check(&m);
        }
    }
}
