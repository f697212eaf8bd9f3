//! Training objectives: per-row L1 regression losses on fine vertices and
//! both joint branches (direct and mesh-regressed), the 2-D projection
//! loss, and their weighted combination under per-sample availability
//! flags.

use crate::error::{Error, Result};
use crate::model::net::OutputVars;
use crate::tensor::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Loss coefficients and the per-sample availability flags for 3-D and 2-D
/// ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_v3d: f64,
    pub lambda_j3d: f64,
    pub lambda_j2d: f64,
    pub alpha: bool,
    pub beta: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_v3d: 100.0,
            lambda_j3d: 1000.0,
            lambda_j2d: 100.0,
            alpha: true,
            beta: true,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_v3d", self.lambda_v3d),
            ("lambda_j3d", self.lambda_j3d),
            ("lambda_j2d", self.lambda_j2d),
        ] {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Supervision targets for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Fine-mesh vertex targets, M x 3.
    pub vertices3d: Tensor,
    /// Joint targets, K x 3.
    pub joints3d: Tensor,
    /// Projected joint targets, K x 2.
    pub joints2d: Tensor,
}

impl GroundTruth {
    pub fn validate(&self, joints: usize, fine_vertices: usize) -> Result<()> {
        if self.vertices3d.shape() != [fine_vertices, 3] {
            return Err(Error::Shape(format!(
                "vertex targets {:?}, expected [{fine_vertices}, 3]",
                self.vertices3d.shape()
            )));
        }
        if self.joints3d.shape() != [joints, 3] {
            return Err(Error::Shape(format!(
                "joint targets {:?}, expected [{joints}, 3]",
                self.joints3d.shape()
            )));
        }
        if self.joints2d.shape() != [joints, 2] {
            return Err(Error::Shape(format!(
                "2-D joint targets {:?}, expected [{joints}, 2]",
                self.joints2d.shape()
            )));
        }
        Ok(())
    }
}

/// (1/M) sum of per-vertex L1 distances between the predicted fine mesh
/// and its target.
pub fn loss_vertex(tape: &mut Tape, pred_fine: Var, gt: &Tensor) -> Result<Var> {
    let target = tape.leaf(gt.clone(), false)?;
    tape.l1_mean(pred_fine, target)
}

/// (1/K) (|J - gt| + |J' - gt|) over both predicted joint branches.
pub fn loss_joint(tape: &mut Tape, pred: Var, regressed: Var, gt: &Tensor) -> Result<Var> {
    let target = tape.leaf(gt.clone(), false)?;
    let a = tape.l1_mean(pred, target)?;
    let b = tape.l1_mean(regressed, target)?;
    tape.add(a, b)
}

/// (1/K) (|J2d - gt| + |J2d' - gt|) over both projected joint branches.
pub fn loss_joint2d(tape: &mut Tape, pred2d: Var, regressed2d: Var, gt2d: &Tensor) -> Result<Var> {
    let target = tape.leaf(gt2d.clone(), false)?;
    let a = tape.l1_mean(pred2d, target)?;
    let b = tape.l1_mean(regressed2d, target)?;
    tape.add(a, b)
}

/// The three component losses of one sample.
pub struct LossParts {
    pub vertex: Var,
    pub joint: Var,
    pub joint2d: Var,
}

/// alpha (lambda_v L_v + lambda_j L_j) + beta lambda_2d L_2d.
///
/// A disabled flag removes its terms exactly; with both flags off the
/// result is a constant zero.
pub fn total_loss(tape: &mut Tape, parts: &LossParts, weights: &LossWeights) -> Result<Var> {
    weights.validate()?;
    let mut terms: Vec<Var> = Vec::new();
    if weights.alpha {
        let v = tape.scale(parts.vertex, weights.lambda_v3d)?;
        let j = tape.scale(parts.joint, weights.lambda_j3d)?;
        terms.push(tape.add(v, j)?);
    }
    if weights.beta {
        terms.push(tape.scale(parts.joint2d, weights.lambda_j2d)?);
    }
    match terms.len() {
        0 => tape.leaf(Tensor::scalar(0.0), true),
        1 => Ok(terms[0]),
        _ => tape.add(terms[0], terms[1]),
    }
}

/// Compose the full objective for one sample's outputs against its targets.
pub fn model_loss(
    tape: &mut Tape,
    out: &OutputVars,
    gt: &GroundTruth,
    weights: &LossWeights,
) -> Result<(Var, LossParts)> {
    let parts = LossParts {
        vertex: loss_vertex(tape, out.fine_vertices3d, &gt.vertices3d)?,
        joint: loss_joint(tape, out.joints3d, out.regressed_joints3d, &gt.joints3d)?,
        joint2d: loss_joint2d(tape, out.joints2d, out.regressed_joints2d, &gt.joints2d)?,
    };
    let total = total_loss(tape, &parts, weights)?;
    Ok((total, parts))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(tape: &mut Tape, rows: &[Vec<f64>]) -> Var {
        tape.leaf(Tensor::from_rows(rows).unwrap(), true).unwrap()
    }

    #[test]
    fn vertex_loss_hand_values() {
        let mut tape = Tape::new();
        let pred = leaf(&mut tape, &[vec![0.0, 0.0, 0.0]]);
        let gt = Tensor::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        let l = loss_vertex(&mut tape, pred, &gt).unwrap();
        assert_eq!(tape.value(l).scalar_value().unwrap(), 6.0);

        let pred = leaf(&mut tape, &[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]);
        let gt = Tensor::zeros(vec![2, 3]);
        let l = loss_vertex(&mut tape, pred, &gt).unwrap();
        assert_eq!(tape.value(l).scalar_value().unwrap(), 1.0);

        let gt_eq = tape.value(pred).clone();
        let l = loss_vertex(&mut tape, pred, &gt_eq).unwrap();
        assert_eq!(tape.value(l).scalar_value().unwrap(), 0.0);
    }

    #[test]
    fn joint_loss_sums_both_branches() {
        let mut tape = Tape::new();
        let gt = Tensor::from_rows(&[vec![0.0, 0.0, 0.0]]).unwrap();
        let a = leaf(&mut tape, &[vec![1.0, 0.0, 0.0]]);
        let b = leaf(&mut tape, &[vec![0.0, 2.0, 0.0]]);
        let l = loss_joint(&mut tape, a, b, &gt).unwrap();
        assert_eq!(tape.value(l).scalar_value().unwrap(), 3.0);
        // symmetric under branch swap
        let l2 = loss_joint(&mut tape, b, a, &gt).unwrap();
        assert_eq!(tape.value(l2).scalar_value().unwrap(), 3.0);
    }

    #[test]
    fn joint2d_loss_hand_values() {
        let mut tape = Tape::new();
        let gt = Tensor::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let exact = tape.leaf(gt.clone(), true).unwrap();
        let off = leaf(&mut tape, &[vec![1.0, 1.0], vec![2.0, 2.0]]);
        let l = loss_joint2d(&mut tape, exact, off, &gt).unwrap();
        // one branch exact, the other off by (1, 1) per joint: (0 + 4) / 2
        assert_eq!(tape.value(l).scalar_value().unwrap(), 2.0);
    }

    #[test]
    fn total_loss_arithmetic_matches_hand_computation() {
        let mut tape = Tape::new();
        let parts = LossParts {
            vertex: tape.leaf(Tensor::scalar(0.01), true).unwrap(),
            joint: tape.leaf(Tensor::scalar(0.002), true).unwrap(),
            joint2d: tape.leaf(Tensor::scalar(0.03), true).unwrap(),
        };
        let total = total_loss(&mut tape, &parts, &LossWeights::default()).unwrap();
        let v = tape.value(total).scalar_value().unwrap();
        assert!((v - 6.0).abs() < 1e-12, "{v}");
    }

    #[test]
    fn flags_zero_out_their_terms_exactly() {
        let mut tape = Tape::new();
        let parts = LossParts {
            vertex: tape.leaf(Tensor::scalar(0.7), true).unwrap(),
            joint: tape.leaf(Tensor::scalar(0.3), true).unwrap(),
            joint2d: tape.leaf(Tensor::scalar(0.11), true).unwrap(),
        };
        let both_off = LossWeights { alpha: false, beta: false, ..Default::default() };
        let t = total_loss(&mut tape, &parts, &both_off).unwrap();
        assert_eq!(tape.value(t).scalar_value().unwrap(), 0.0);

        let no_2d = LossWeights { beta: false, ..Default::default() };
        let t = total_loss(&mut tape, &parts, &no_2d).unwrap();
        assert_eq!(tape.value(t).scalar_value().unwrap(), 100.0 * 0.7 + 1000.0 * 0.3);

        let only_2d = LossWeights { alpha: false, ..Default::default() };
        let t = total_loss(&mut tape, &parts, &only_2d).unwrap();
        assert_eq!(tape.value(t).scalar_value().unwrap(), 100.0 * 0.11);
    }

    #[test]
    fn negative_lambda_rejected() {
        let mut tape = Tape::new();
        let parts = LossParts {
            vertex: tape.leaf(Tensor::scalar(0.0), true).unwrap(),
            joint: tape.leaf(Tensor::scalar(0.0), true).unwrap(),
            joint2d: tape.leaf(Tensor::scalar(0.0), true).unwrap(),
        };
        let bad = LossWeights { lambda_j3d: -1.0, ..Default::default() };
        assert!(total_loss(&mut tape, &parts, &bad).is_err());
    }
}
