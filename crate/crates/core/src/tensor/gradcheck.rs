//! Central-difference verification of reverse-mode gradients.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Relative error with a floor that keeps near-zero gradient pairs from
/// blowing up the ratio.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Compare the reverse-mode gradient of a scalar-valued function against
/// central finite differences, elementwise; returns the max relative error.
///
/// `build` must construct the same computation on any tape it is given.
pub fn finite_difference_check<F>(build: F, x: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let all: Vec<usize> = (0..x.numel()).collect();
    finite_difference_check_entries(build, x, step, &all)
}

/// Same as [`finite_difference_check`] but probing a random sample of at
/// most `max_entries` coordinates; used where full sweeps are too slow.
pub fn finite_difference_check_sampled<F>(
    build: F,
    x: &Tensor,
    step: f64,
    max_entries: usize,
    seed: u64,
) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut entries: Vec<usize> = (0..x.numel()).collect();
    if entries.len() > max_entries {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        entries.shuffle(&mut rng);
        entries.truncate(max_entries);
        entries.sort_unstable();
    }
    finite_difference_check_entries(build, x, step, &entries)
}

fn finite_difference_check_entries<F>(
    build: F,
    x: &Tensor,
    step: f64,
    entries: &[usize],
) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if step <= 0.0 {
        return Err(Error::Config(format!("finite-difference step must be positive, got {step}")));
    }
    let mut tape = Tape::new();
    let var = tape.leaf(x.clone(), true)?;
    let out = build(&mut tape, var)?;
    if tape.value(out).numel() != 1 {
        return Err(Error::Shape(format!(
            "gradient check target must be scalar, got {:?}",
            tape.value(out).shape()
        )));
    }
    let grads = tape.backward(out)?;
    let analytic = grads
        .get(var)
        .ok_or_else(|| Error::Numeric("no gradient reached the checked tensor".into()))?
        .to_vec();

    let eval = |probe: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let var = tape.leaf(probe.clone(), false)?;
        let out = build(&mut tape, var)?;
        tape.value(out).scalar_value()
    };

    let mut max_err: f64 = 0.0;
    let mut probe = x.clone();
    for &i in entries {
        let orig = probe.values()[i];
        probe.values_mut()[i] = orig + step;
        let fp = eval(&probe)?;
        probe.values_mut()[i] = orig - step;
        let fm = eval(&probe)?;
        probe.values_mut()[i] = orig;
        let numeric = (fp - fm) / (2.0 * step);
        max_err = max_err.max(relative_error(analytic[i], numeric));
    }
    Ok(max_err)
}
