//! Focal loss over age groups and its combination with the absolute age error.

use crate::error::{Error, Result};
use crate::numerics::{Tape, Var};

pub const DEFAULT_FOCAL_TAU: f64 = 1.3;
pub const DEFAULT_ETA: f64 = 0.5;

const PROB_FLOOR: f64 = 1e-12;
const SUM_TOLERANCE: f64 = 1e-9;

/// `−(1 − p)^τ · ln p` for the true group's probability `p`.
pub fn focal_loss(probabilities: &[f64], true_group: usize, tau: f64) -> Result<f64> {
    if true_group >= probabilities.len() {
        return Err(Error::Domain(format!(
            "group {true_group} outside a {}-way distribution",
            probabilities.len()
        )));
    }
    if probabilities.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::Domain("probabilities must be finite and non-negative".into()));
    }
    let total: f64 = probabilities.iter().sum();
    if (total - 1.0).abs() > SUM_TOLERANCE {
        return Err(Error::Domain(format!("probabilities sum to {total}")));
    }
    if tau < 0.0 {
        return Err(Error::Domain(format!("negative focusing parameter {tau}")));
    }
    let p = probabilities[true_group].max(PROB_FLOOR);
    Ok(-(1.0 - p).powf(tau) * p.ln())
}

/// `η · focal + (1 − η) · |age_pred − age_true|`.
pub fn combined_loss(
    probabilities: &[f64],
    true_group: usize,
    age_pred: f64,
    age_true: f64,
    eta: f64,
    tau: f64,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::Domain(format!("eta {eta} outside [0, 1]")));
    }
    let fl = focal_loss(probabilities, true_group, tau)?;
    Ok(eta * fl + (1.0 - eta) * (age_pred - age_true).abs())
}

/// Per-row focal loss of softmax(`logits`) as a `B x 1` var.
pub fn focal_loss_var(tape: &mut Tape, logits: Var, groups: &[usize], tau: f64) -> Result<Var> {
    let probs = tape.row_softmax(logits);
    let p = tape.gather(probs, groups.to_vec())?;
    let p = tape.clamp(p, PROB_FLOOR, 1.0);
    let log_p = tape.ln(p)?;
    let miss = tape.one_minus(p);
    let weight = tape.powf(miss, tau);
    let weighted = tape.mul(weight, log_p)?;
    Ok(tape.scale(weighted, -1.0))
}

/// Batch mean of the combined loss. `ages` holds the `B x 1` predictions.
pub fn combined_loss_var(
    tape: &mut Tape,
    logits: Var,
    ages: Var,
    groups: &[usize],
    true_ages: &[f64],
    eta: f64,
    tau: f64,
) -> Result<Var> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::Domain(format!("eta {eta} outside [0, 1]")));
    }
    let fl = focal_loss_var(tape, logits, groups, tau)?;
    let truth = tape.constant(crate::numerics::Matrix::col_vector(true_ages.to_vec()));
    let diff = tape.sub(ages, truth)?;
    let abs = tape.abs(diff);
    let fl = tape.scale(fl, eta);
    let abs = tape.scale(abs, 1.0 - eta);
    let per_sample = tape.add(fl, abs)?;
    Ok(tape.mean_all(per_sample))
}
