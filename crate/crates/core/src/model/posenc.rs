//! Fixed 2-D sine/cosine positional encodings for the feature grid.
//!
//! For a grid position (row r, col c) and dimension D, channels [0, D/2)
//! encode the row index and [D/2, D) the column index. Within each half of
//! size Dh, pair i holds sin(p / 10000^(2i/Dh)) at channel 2i and the
//! matching cosine at channel 2i+1.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const TEMPERATURE: f64 = 10000.0;

/// Encoding table of shape [grid_h * grid_w, dim], rows scanned row-major.
pub fn fixed_sine_grid(grid: [usize; 2], dim: usize) -> Result<Tensor> {
    if dim % 4 != 0 {
        return Err(Error::Config(format!(
            "fixed sine encoding needs dim divisible by 4, got {dim}"
        )));
    }
    let [h, w] = grid;
    let half = dim / 2;
    let mut values = vec![0.0; h * w * dim];
    for r in 0..h {
        for c in 0..w {
            let row = &mut values[(r * w + c) * dim..(r * w + c + 1) * dim];
            encode_axis(&mut row[..half], r as f64);
            encode_axis(&mut row[half..], c as f64);
        }
    }
    Tensor::new(vec![h * w, dim], values)
}

fn encode_axis(out: &mut [f64], pos: f64) {
    let dh = out.len();
    for i in 0..dh / 2 {
        let freq = TEMPERATURE.powf(-(2.0 * i as f64) / dh as f64);
        out[2 * i] = (pos * freq).sin();
        out[2 * i + 1] = (pos * freq).cos();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_position_is_alternating_zero_one() {
        let pe = fixed_sine_grid([3, 3], 8).unwrap();
        // row 0 of the table is grid position (0, 0): sin(0)=0, cos(0)=1
        assert_eq!(pe.row(0), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn matches_independent_formula() {
        let dim = 16;
        let pe = fixed_sine_grid([4, 5], dim).unwrap();
        let half = dim / 2;
        for r in 0..4 {
            for c in 0..5 {
                let row = pe.row(r * 5 + c);
                for i in 0..half / 2 {
                    let freq = TEMPERATURE.powf(-(2.0 * i as f64) / half as f64);
                    assert_eq!(row[2 * i], (r as f64 * freq).sin());
                    assert_eq!(row[2 * i + 1], (r as f64 * freq).cos());
                    assert_eq!(row[half + 2 * i], (c as f64 * freq).sin());
                    assert_eq!(row[half + 2 * i + 1], (c as f64 * freq).cos());
                }
            }
        }
    }

    #[test]
    fn odd_dims_rejected() {
        assert!(fixed_sine_grid([2, 2], 10).is_err());
    }
}
