//! Greedy and ε-greedy action selection.

use rand::Rng;

use crate::error::{Error, Result};

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Uniform random action with probability `epsilon`, otherwise [`argmax`].
/// At `epsilon = 0` the rng is not consumed.
pub fn select_action<R: Rng + ?Sized>(values: &[f64], epsilon: f64, rng: &mut R) -> Result<usize> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::Domain(format!("epsilon {epsilon} outside [0, 1]")));
    }
    if values.is_empty() {
        return Err(Error::Input("no action values".into()));
    }
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        return Ok(rng.random_range(0..values.len()));
    }
    Ok(argmax(values))
}

/// Linear decay from `start` to `end` over the first `fraction` of `total`, then flat.
pub fn linear_epsilon(start: f64, end: f64, fraction: f64, progress: usize, total: usize) -> f64 {
    let span = fraction * total as f64;
    if span <= 0.0 {
        return end;
    }
    let t = progress as f64 / span;
    if t >= 1.0 {
        end
    } else {
        start + (end - start) * t
    }
}
