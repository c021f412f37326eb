//! Age estimation metrics: MAE, cumulative score and the σ-normalised error.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gcn::LayerDiagnostics;
use crate::rl::grid::GRID_SIDE;

pub const DEFAULT_CS_MAX: u32 = 10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub predicted: f64,
    pub truth: f64,
    pub sigma: Option<f64>,
}

impl EvalRecord {
    pub fn new(predicted: f64, truth: f64) -> Self {
        Self {
            predicted,
            truth,
            sigma: None,
        }
    }

    pub fn abs_error(&self) -> f64 {
        (self.predicted - self.truth).abs()
    }
}

fn nonempty(records: &[EvalRecord]) -> Result<()> {
    if records.is_empty() {
        return Err(Error::Input("no evaluation records".into()));
    }
    Ok(())
}

pub fn mae(records: &[EvalRecord]) -> Result<f64> {
    nonempty(records)?;
    Ok(records.iter().map(EvalRecord::abs_error).sum::<f64>() / records.len() as f64)
}

/// Percentage of records whose absolute error is at most `j`.
pub fn cumulative_score(records: &[EvalRecord], j: f64) -> Result<f64> {
    nonempty(records)?;
    if !(j >= 0.0) {
        return Err(Error::Domain(format!("threshold {j} must be non-negative")));
    }
    let hits = records.iter().filter(|r| r.abs_error() <= j).count();
    Ok(100.0 * hits as f64 / records.len() as f64)
}

fn sigma_of(r: &EvalRecord) -> Result<f64> {
    match r.sigma {
        Some(s) if s > 0.0 && s.is_finite() => Ok(s),
        other => Err(Error::Input(format!("epsilon error needs sigma > 0, found {other:?}"))),
    }
}

/// Per-sample mean of `1 − exp(−(y − ŷ)² / (2σ²))`; always in `[0, 1]`.
pub fn epsilon_error(records: &[EvalRecord]) -> Result<f64> {
    nonempty(records)?;
    let mut total = 0.0;
    for r in records {
        let s = sigma_of(r)?;
        total += 1.0 - (-(r.predicted - r.truth).powi(2) / (2.0 * s * s)).exp();
    }
    Ok(total / records.len() as f64)
}

/// `1 − Σ exp(−(y − ŷ)² / (2σ²))` summed without normalisation; unbounded
/// below, kept only for audit against the literal printed form.
pub fn epsilon_error_unnormalized(records: &[EvalRecord]) -> Result<f64> {
    nonempty(records)?;
    let mut sum = 0.0;
    for r in records {
        let s = sigma_of(r)?;
        sum += (-(r.predicted - r.truth).powi(2) / (2.0 * s * s)).exp();
    }
    Ok(1.0 - sum)
}

/// MAE per decade of the true age; `None` for decades with no records.
pub fn per_group_mae(records: &[EvalRecord]) -> Vec<Option<f64>> {
    let mut sums = [0.0; GRID_SIDE];
    let mut counts = [0usize; GRID_SIDE];
    for r in records {
        let g = ((r.truth.max(0.0) as usize) / GRID_SIDE).min(GRID_SIDE - 1);
        sums[g] += r.abs_error();
        counts[g] += 1;
    }
    (0..GRID_SIDE)
        .map(|g| (counts[g] > 0).then(|| sums[g] / counts[g] as f64))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsPoint {
    pub j: u32,
    pub percent: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub count: usize,
    pub mae: f64,
    pub cs_curve: Vec<CsPoint>,
    pub epsilon_error: Option<f64>,
    pub per_group_mae: Vec<Option<f64>>,
    #[serde(default)]
    pub diagnostics: Vec<LayerDiagnostics>,
}

impl MetricsReport {
    pub fn cs(&self, j: u32) -> Option<f64> {
        self.cs_curve.iter().find(|p| p.j == j).map(|p| p.percent)
    }

    /// Tab-separated `(j, percent)` table with a header line.
    pub fn cs_table(&self) -> String {
        let mut out = String::from("j\tpercent\n");
        for p in &self.cs_curve {
            let _ = writeln!(out, "{}\t{:.6}", p.j, p.percent);
        }
        out
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "samples        {}", self.count);
        let _ = writeln!(out, "mae            {:.6}", self.mae);
        match self.epsilon_error {
            Some(e) => {
                let _ = writeln!(out, "epsilon_error  {e:.6}");
            }
            None => {
                let _ = writeln!(out, "epsilon_error  n/a (no sigma)");
            }
        }
        let _ = writeln!(out, "cumulative score");
        for p in &self.cs_curve {
            let _ = writeln!(out, "  cs({:>2})       {:.2}%", p.j, p.percent);
        }
        let _ = writeln!(out, "per-group mae");
        for (g, m) in self.per_group_mae.iter().enumerate() {
            if let Some(m) = m {
                let _ = writeln!(out, "  {:>2}-{:<2}        {:.6}", g * 10, g * 10 + 9, m);
            }
        }
        out
    }
}

/// ε-error is reported when any record carries σ, in which case all must.
pub fn evaluate(records: &[EvalRecord], cs_max: u32) -> Result<MetricsReport> {
    let mae = mae(records)?;
    let cs_curve = (0..=cs_max)
        .map(|j| {
            Ok(CsPoint {
                j,
                percent: cumulative_score(records, j as f64)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let epsilon_error = if records.iter().any(|r| r.sigma.is_some()) {
        Some(epsilon_error(records)?)
    } else {
        None
    };
    Ok(MetricsReport {
        count: records.len(),
        mae,
        cs_curve,
        epsilon_error,
        per_group_mae: per_group_mae(records),
        diagnostics: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn recs(pairs: &[(f64, f64)]) -> Vec<EvalRecord> {
        pairs.iter().map(|&(p, t)| EvalRecord::new(p, t)).collect()
    }

    fn with_sigma(pairs: &[(f64, f64, f64)]) -> Vec<EvalRecord> {
        pairs
            .iter()
            .map(|&(p, t, s)| EvalRecord {
                predicted: p,
                truth: t,
                sigma: Some(s),
            })
            .collect()
    }

    #[test]
    fn mae_cases() {
        assert_eq!(mae(&recs(&[(3.0, 3.0), (40.0, 40.0)])).unwrap(), 0.0);
        assert_eq!(mae(&recs(&[(1.0, 2.0), (3.0, 2.0)])).unwrap(), 1.0);
        assert!(matches!(mae(&[]), Err(Error::Input(_))));
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let r: Vec<EvalRecord> = (0..100)
            .map(|_| EvalRecord::new(rng.random_range(0.0..100.0), rng.random_range(0.0..100.0)))
            .collect();
        let oracle = r.iter().fold(0.0, |acc, x| acc + (x.truth - x.predicted).abs()) / 100.0;
        assert!((mae(&r).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn cs_cases() {
        assert_eq!(cumulative_score(&recs(&[(5.0, 5.0)]), 0.0).unwrap(), 100.0);
        assert_eq!(cumulative_score(&recs(&[(1.0, 0.0), (6.0, 0.0)]), 5.0).unwrap(), 50.0);
        // the comparison is inclusive
        assert_eq!(cumulative_score(&recs(&[(5.0, 0.0)]), 5.0).unwrap(), 100.0);
        assert!(cumulative_score(&[], 5.0).is_err());
    }

    #[test]
    fn cs_matches_sorted_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let r: Vec<EvalRecord> = (0..200)
            .map(|_| EvalRecord::new(rng.random_range(0..60) as f64, rng.random_range(0..60) as f64))
            .collect();
        let mut errors: Vec<f64> = r.iter().map(EvalRecord::abs_error).collect();
        errors.sort_by(f64::total_cmp);
        let mut prev = 0.0;
        for j in 0..=10 {
            let count = errors.partition_point(|&e| e <= j as f64);
            let expect = 100.0 * count as f64 / errors.len() as f64;
            let got = cumulative_score(&r, j as f64).unwrap();
            assert_eq!(got, expect);
            assert!(got >= prev);
            prev = got;
        }
    }

    #[test]
    fn epsilon_cases() {
        assert_eq!(epsilon_error(&with_sigma(&[(3.0, 3.0, 2.0), (7.0, 7.0, 1.0)])).unwrap(), 0.0);
        let v = epsilon_error(&with_sigma(&[(5.0, 3.0, 2.0), (1.0, 4.0, 3.0)])).unwrap();
        assert!((v - (1.0 - (-0.5f64).exp())).abs() < 1e-12);
        assert!((v - 0.39347).abs() < 1e-5);
        assert!(epsilon_error(&with_sigma(&[(10.0, 3.0, 1e9)])).unwrap() < 1e-12);
        assert!(matches!(epsilon_error(&recs(&[(1.0, 1.0)])), Err(Error::Input(_))));
        assert!(epsilon_error(&with_sigma(&[(1.0, 1.0, 0.0)])).is_err());
        let raw = epsilon_error_unnormalized(&with_sigma(&[(1.0, 1.0, 1.0), (1.0, 1.0, 1.0)])).unwrap();
        assert_eq!(raw, -1.0);
    }

    #[test]
    fn report_without_sigma() {
        let r = evaluate(&recs(&[(20.0, 22.0), (61.0, 68.0)]), 10).unwrap();
        assert_eq!(r.epsilon_error, None);
        assert_eq!(r.mae, 4.5);
        assert_eq!(r.cs(5), Some(50.0));
        assert_eq!(r.per_group_mae[2], Some(2.0));
        assert_eq!(r.per_group_mae[6], Some(7.0));
        assert_eq!(r.per_group_mae[0], None);
        assert_eq!(r.cs_curve.len(), 11);
        assert!(r.cs_table().starts_with("j\tpercent\n0\t"));
        assert!(r.render_text().contains("n/a"));
    }

    proptest! {
        #[test]
        fn invariants(pairs in proptest::collection::vec((0.0f64..100.0, 0.0f64..100.0, 0.5f64..10.0), 1..40), shift in -50.0f64..50.0) {
            let r = with_sigma(&pairs);
            let e = epsilon_error(&r).unwrap();
            prop_assert!((0.0..=1.0).contains(&e));
            let max_err = r.iter().map(EvalRecord::abs_error).fold(0.0, f64::max);
            prop_assert_eq!(cumulative_score(&r, max_err).unwrap(), 100.0);
            let shifted: Vec<EvalRecord> = r.iter().map(|x| EvalRecord::new(x.predicted + shift, x.truth + shift)).collect();
            prop_assert!((mae(&r).unwrap() - mae(&shifted).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn epsilon_increases_with_error(a in 0.0f64..20.0, b in 0.0f64..20.0, sigma in 0.5f64..10.0) {
            prop_assume!((a - b).abs() > 1e-6);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let e_lo = epsilon_error(&with_sigma(&[(lo, 0.0, sigma)])).unwrap();
            let e_hi = epsilon_error(&with_sigma(&[(hi, 0.0, sigma)])).unwrap();
            prop_assert!(e_lo < e_hi || (e_hi == 1.0 && e_lo == 1.0));
        }
    }
}
