//! Evaluation metrics in millimeters: mean per-joint and per-vertex
//! position errors, with and without similarity alignment.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::svd3::svd3;
use crate::tensor::Tensor;

/// Mean Euclidean distance between corresponding rows of two [n, 3]
/// point sets.
pub fn mean_point_distance(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    check_points(pred, gt)?;
    let n = pred.shape()[0];
    let mut total = 0.0;
    for i in 0..n {
        let (p, g) = (pred.row(i), gt.row(i));
        total += ((p[0] - g[0]).powi(2) + (p[1] - g[1]).powi(2) + (p[2] - g[2]).powi(2)).sqrt();
    }
    Ok(total / n as f64)
}

/// Mean per-joint position error.
pub fn mpjpe(pred_joints: &Tensor, gt_joints: &Tensor) -> Result<f64> {
    mean_point_distance(pred_joints, gt_joints)
}

/// Mean per-vertex position error.
pub fn mpvpe(pred_vertices: &Tensor, gt_vertices: &Tensor) -> Result<f64> {
    mean_point_distance(pred_vertices, gt_vertices)
}

/// MPJPE after optimal similarity alignment of the prediction.
pub fn pa_mpjpe(pred_joints: &Tensor, gt_joints: &Tensor) -> Result<f64> {
    let aligned = procrustes_align(pred_joints, gt_joints)?;
    mean_point_distance(&aligned, gt_joints)
}

/// Optimal similarity alignment: returns s R pred + t minimizing the sum of
/// squared distances to gt over rotations R (det +1), scale s > 0 and
/// translation t.
///
/// Solved by centering both sets, decomposing the 3x3 cross-covariance
/// H = P~^T G~ as U S V^T, and taking R = V C U^T with
/// C = diag(1, 1, det(V U^T)) to rule out reflections;
/// s = trace(C S) / sum ||p~||^2.
pub fn procrustes_align(pred: &Tensor, gt: &Tensor) -> Result<Tensor> {
    check_points(pred, gt)?;
    let n = pred.shape()[0];
    if n < 3 {
        return Err(Error::Shape(format!("alignment needs at least 3 points, got {n}")));
    }
    let mu = |t: &Tensor| -> [f64; 3] {
        let mut m = [0.0; 3];
        for i in 0..n {
            for d in 0..3 {
                m[d] += t.at2(i, d);
            }
        }
        m.map(|v| v / n as f64)
    };
    let (mp, mg) = (mu(pred), mu(gt));

    let mut pred_var = 0.0;
    let mut gt_var = 0.0;
    let mut h = [0.0; 9]; // cross-covariance P~^T G~
    for i in 0..n {
        let p = [pred.at2(i, 0) - mp[0], pred.at2(i, 1) - mp[1], pred.at2(i, 2) - mp[2]];
        let g = [gt.at2(i, 0) - mg[0], gt.at2(i, 1) - mg[1], gt.at2(i, 2) - mg[2]];
        for a in 0..3 {
            pred_var += p[a] * p[a];
            gt_var += g[a] * g[a];
            for b in 0..3 {
                h[a * 3 + b] += p[a] * g[b];
            }
        }
    }
    if gt_var <= 0.0 {
        return Err(Error::Numeric("alignment target has zero variance".into()));
    }
    if pred_var <= 0.0 {
        return Err(Error::Numeric("alignment source has zero variance".into()));
    }

    let (u, s, v) = svd3(&Tensor::new(vec![3, 3], h.to_vec())?)?;
    // det(V U^T) decides whether the optimum needs a reflection flip
    let mut vut = [0.0; 9];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                vut[i * 3 + j] += v.at2(i, k) * u.at2(j, k);
            }
        }
    }
    let sign = if det3(&vut) < 0.0 { -1.0 } else { 1.0 };
    let mut r = [0.0; 9]; // R = V C U^T
    for i in 0..3 {
        for j in 0..3 {
            r[i * 3 + j] = v.at2(i, 0) * u.at2(j, 0) + v.at2(i, 1) * u.at2(j, 1)
                + sign * v.at2(i, 2) * u.at2(j, 2);
        }
    }
    let scale = (s[0] + s[1] + sign * s[2]) / pred_var;
    if !(scale > 0.0) {
        return Err(Error::Numeric(format!("alignment produced non-positive scale {scale}")));
    }
    let t = [
        mg[0] - scale * (r[0] * mp[0] + r[1] * mp[1] + r[2] * mp[2]),
        mg[1] - scale * (r[3] * mp[0] + r[4] * mp[1] + r[5] * mp[2]),
        mg[2] - scale * (r[6] * mp[0] + r[7] * mp[1] + r[8] * mp[2]),
    ];

    let mut out = vec![0.0; n * 3];
    for i in 0..n {
        let p = [pred.at2(i, 0), pred.at2(i, 1), pred.at2(i, 2)];
        for d in 0..3 {
            out[i * 3 + d] =
                scale * (r[d * 3] * p[0] + r[d * 3 + 1] * p[1] + r[d * 3 + 2] * p[2]) + t[d];
        }
    }
    Tensor::new(vec![n, 3], out)
}

fn det3(m: &[f64; 9]) -> f64 {
    m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6])
        + m[2] * (m[3] * m[7] - m[4] * m[6])
}

fn check_points(pred: &Tensor, gt: &Tensor) -> Result<()> {
    if pred.shape() != gt.shape() || pred.rank() != 2 || pred.shape()[1] != 3 {
        return Err(Error::Shape(format!(
            "point sets must share an [n, 3] shape, got {:?} vs {:?}",
            pred.shape(),
            gt.shape()
        )));
    }
    Ok(())
}

/// One evaluated sample in the metrics report.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub sample_id: usize,
    pub mpjpe: f64,
    pub pa_mpjpe: f64,
    pub mpvpe: f64,
}

/// CSV with columns sample_id, mpjpe, pa_mpjpe, mpvpe.
pub fn metrics_report_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from("sample_id,mpjpe,pa_mpjpe,mpvpe\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.sample_id, r.mpjpe, r.pa_mpjpe, r.mpvpe));
    }
    out
}

pub fn write_metrics_report(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    std::fs::write(path, metrics_report_csv(rows)).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Column means of a report: (mpjpe, pa_mpjpe, mpvpe).
pub fn metrics_means(rows: &[MetricsRow]) -> (f64, f64, f64) {
    let n = rows.len().max(1) as f64;
    (
        rows.iter().map(|r| r.mpjpe).sum::<f64>() / n,
        rows.iter().map(|r| r.pa_mpjpe).sum::<f64>() / n,
        rows.iter().map(|r| r.mpvpe).sum::<f64>() / n,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_points(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Tensor {
        Tensor::new(vec![n, 3], (0..n * 3).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
    }

    fn rot_z(deg: f64) -> [f64; 9] {
        let r = deg.to_radians();
        [r.cos(), -r.sin(), 0.0, r.sin(), r.cos(), 0.0, 0.0, 0.0, 1.0]
    }

    fn transform(points: &Tensor, s: f64, r: &[f64; 9], t: [f64; 3]) -> Tensor {
        let n = points.shape()[0];
        let mut out = vec![0.0; n * 3];
        for i in 0..n {
            let p = points.row(i);
            for d in 0..3 {
                out[i * 3 + d] = s * (r[d * 3] * p[0] + r[d * 3 + 1] * p[1] + r[d * 3 + 2] * p[2]) + t[d];
            }
        }
        Tensor::new(vec![n, 3], out).unwrap()
    }

    #[test]
    fn identical_points_give_zero_everywhere() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_points(&mut rng, 8, 50.0);
        assert_eq!(mpjpe(&p, &p).unwrap(), 0.0);
        assert_eq!(mpvpe(&p, &p).unwrap(), 0.0);
        assert!(pa_mpjpe(&p, &p).unwrap() < 1e-10);
        let aligned = procrustes_align(&p, &p).unwrap();
        for (a, b) in aligned.values().iter().zip(p.values()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn single_offset_joint_is_a_345_triangle() {
        let gt = Tensor::from_rows(&[vec![0.0, 0.0, 0.0]]).unwrap();
        let pred = Tensor::from_rows(&[vec![3.0, 4.0, 0.0]]).unwrap();
        assert_eq!(mpjpe(&pred, &gt).unwrap(), 5.0);
    }

    #[test]
    fn alignment_inverts_a_constructed_similarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let gt = random_points(&mut rng, 10, 40.0);
        let pred = transform(&gt, 2.0, &rot_z(30.0), [5.0, 5.0, 5.0]);
        let aligned = procrustes_align(&pred, &gt).unwrap();
        for (a, b) in aligned.values().iter().zip(gt.values()) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
        assert!(pa_mpjpe(&pred, &gt).unwrap() < 1e-8);
    }

    #[test]
    fn mirrored_prediction_uses_proper_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let gt = random_points(&mut rng, 12, 30.0);
        let mirrored = {
            let mut vals = gt.values().to_vec();
            for i in 0..12 {
                vals[i * 3] = -vals[i * 3];
            }
            Tensor::new(vec![12, 3], vals).unwrap()
        };
        let residual = pa_mpjpe(&mirrored, &gt).unwrap();
        assert!(residual > 1e-3, "reflection must not be absorbed, residual {residual}");
    }

    #[test]
    fn degenerate_target_is_a_numeric_error() {
        let gt = Tensor::filled(vec![4, 3], 1.5);
        let pred = Tensor::from_rows(&[
            vec![0.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ])
        .unwrap();
        assert!(matches!(procrustes_align(&pred, &gt), Err(Error::Numeric(_))));
    }

    #[test]
    fn alignment_never_increases_error_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let n = rng.gen_range(3..20);
            let gt = random_points(&mut rng, n, 60.0);
            let pred = random_points(&mut rng, n, 60.0);
            let plain = mpjpe(&pred, &gt).unwrap();
            let aligned = pa_mpjpe(&pred, &gt).unwrap();
            assert!(aligned <= plain + 1e-9, "{aligned} > {plain}");
        }
    }

    #[test]
    fn alignment_invariant_under_similarity_of_prediction() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let gt = random_points(&mut rng, 9, 25.0);
        let pred = random_points(&mut rng, 9, 25.0);
        let base = pa_mpjpe(&pred, &gt).unwrap();
        for trial in 0..20 {
            let s = rng.gen_range(0.2..3.0);
            let r = rot_z(rng.gen_range(-180.0..180.0));
            let t = [rng.gen_range(-9.0..9.0), rng.gen_range(-9.0..9.0), rng.gen_range(-9.0..9.0)];
            let moved = transform(&pred, s, &r, t);
            let again = pa_mpjpe(&moved, &gt).unwrap();
            assert!((again - base).abs() < 1e-8, "trial {trial}: {again} vs {base}");
        }
    }

    #[test]
    fn report_csv_shape() {
        let rows = vec![MetricsRow { sample_id: 0, mpjpe: 1.5, pa_mpjpe: 0.5, mpvpe: 2.0 }];
        let csv = metrics_report_csv(&rows);
        assert_eq!(csv.lines().next().unwrap(), "sample_id,mpjpe,pa_mpjpe,mpvpe");
        assert_eq!(csv.lines().count(), 2);
    }
}
