//! Central finite-difference verification of tape gradients.

use serde::Serialize;

use super::{ParamStore, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize)]
pub struct ParamGradError {
    pub name: String,
    pub max_relative: f64,
    pub max_absolute: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradReport {
    pub epsilon: f64,
    pub tolerance: f64,
    pub params: Vec<ParamGradError>,
    pub checked_scalars: usize,
    pub pass: bool,
}

impl GradReport {
    pub fn max_relative(&self) -> f64 {
        self.params.iter().fold(0.0, |m, p| m.max(p.max_relative))
    }

    pub fn worst(&self) -> Option<&ParamGradError> {
        self.params
            .iter()
            .max_by(|a, b| a.max_relative.total_cmp(&b.max_relative))
    }
}

/// Relative error with the denominator floored at `1e-8`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn evaluate<F>(forward: &F, params: &ParamStore) -> Result<f64>
where
    F: Fn(&ParamStore, &mut Tape) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = forward(params, &mut tape)?;
    Ok(tape.scalar(loss))
}

/// Compares tape gradients of the scalar returned by `forward` against
/// `(f(θ+ε) − f(θ−ε)) / 2ε` for every scalar in `params`.
///
/// On return the store holds the analytic gradients of one backward pass.
pub fn grad_check<F>(forward: F, params: &mut ParamStore, epsilon: f64, tolerance: f64) -> Result<GradReport>
where
    F: Fn(&ParamStore, &mut Tape) -> Result<Var>,
{
    if !(epsilon > 0.0) {
        return Err(Error::Domain(format!("epsilon must be positive, got {epsilon}")));
    }
    params.zero_grad();
    let mut tape = Tape::new();
    let loss = forward(params, &mut tape)?;
    let first = tape.scalar(loss);
    tape.backward(loss, params)?;
    drop(tape);

    let second = evaluate(&forward, params)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::Determinism { first, second });
    }

    let mut report = GradReport {
        epsilon,
        tolerance,
        params: Vec::with_capacity(params.len()),
        checked_scalars: 0,
        pass: true,
    };
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let n = params.value(id).len();
        let mut entry = ParamGradError {
            name: params.name(id).to_string(),
            max_relative: 0.0,
            max_absolute: 0.0,
        };
        for k in 0..n {
            let original = params.value(id).data()[k];
            params.value_mut(id).data_mut()[k] = original + epsilon;
            let plus = evaluate(&forward, params);
            params.value_mut(id).data_mut()[k] = original - epsilon;
            let minus = evaluate(&forward, params);
            params.value_mut(id).data_mut()[k] = original;
            let numeric = (plus? - minus?) / (2.0 * epsilon);
            let analytic = params.grad(id).data()[k];
            entry.max_relative = entry.max_relative.max(relative_error(analytic, numeric));
            entry.max_absolute = entry.max_absolute.max((analytic - numeric).abs());
        }
        report.checked_scalars += n;
        if !(entry.max_relative <= tolerance) {
            report.pass = false;
        }
        report.params.push(entry);
    }
    Ok(report)
}
