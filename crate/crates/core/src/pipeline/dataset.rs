//! JSON Lines sample files: one `{id, age, sigma?, n, features}` object per line,
//! where `features` holds `n` rows of equal width.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::LabeledSample;
use crate::numerics::Matrix;
use crate::walk::derive_seed;

const SPLIT_STREAM: u64 = 0x5311;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub id: String,
    pub age: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    pub n: usize,
    pub features: Vec<Vec<f64>>,
}

impl SampleRecord {
    pub fn from_sample(s: &LabeledSample) -> Self {
        Self {
            id: s.id.clone(),
            age: s.age as i64,
            sigma: s.sigma,
            n: s.features.rows(),
            features: s.features.to_rows(),
        }
    }

    pub fn into_sample(self) -> Result<LabeledSample> {
        let fail = |reason: String| Error::Ingestion {
            id: self.id.clone(),
            reason,
        };
        if self.age < 0 {
            return Err(fail(format!("negative age {}", self.age)));
        }
        if let Some(s) = self.sigma {
            if !(s > 0.0 && s.is_finite()) {
                return Err(fail(format!("sigma {s} must be positive and finite")));
            }
        }
        if self.n == 0 || self.features.len() != self.n {
            return Err(fail(format!("n = {} but {} feature rows", self.n, self.features.len())));
        }
        let width = self.features[0].len();
        if width == 0 || self.features.iter().any(|r| r.len() != width) {
            return Err(fail("feature rows must be non-empty and of equal width".into()));
        }
        if self.features.iter().flatten().any(|v| !v.is_finite()) {
            return Err(fail("non-finite feature value".into()));
        }
        let features = Matrix::from_rows(&self.features).map_err(|e| fail(e.to_string()))?;
        Ok(LabeledSample {
            id: self.id,
            age: self.age as u32,
            sigma: self.sigma,
            features,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<LabeledSample>,
}

impl Dataset {
    pub fn parse_jsonl(text: &str) -> Result<Self> {
        let mut samples: Vec<LabeledSample> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: SampleRecord = serde_json::from_str(line).map_err(|e| {
                let id = serde_json::from_str::<serde_json::Value>(line)
                    .ok()
                    .and_then(|v| v.get("id").and_then(|i| i.as_str()).map(str::to_owned))
                    .unwrap_or_else(|| format!("line {}", lineno + 1));
                Error::Ingestion {
                    id,
                    reason: e.to_string(),
                }
            })?;
            let sample = record.into_sample()?;
            if let Some(first) = samples.first() {
                if first.features.cols() != sample.features.cols() {
                    return Err(Error::Ingestion {
                        id: sample.id,
                        reason: format!(
                            "feature width {} differs from {}",
                            sample.features.cols(),
                            first.features.cols()
                        ),
                    });
                }
            }
            samples.push(sample);
        }
        if samples.is_empty() {
            return Err(Error::Input("dataset contains no records".into()));
        }
        Ok(Self { samples })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Ingestion {
            id: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::parse_jsonl(&text)
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for s in &self.samples {
            let line = serde_json::to_string(&SampleRecord::from_sample(s)).map_err(|e| Error::Input(e.to_string()))?;
            let _ = writeln!(out, "{line}");
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl()?)?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn feature_width(&self) -> usize {
        self.samples.first().map_or(0, |s| s.features.cols())
    }

    pub fn ages(&self, indices: &[usize]) -> Vec<u32> {
        indices.iter().map(|&i| self.samples[i].age).collect()
    }
}

/// Seeded shuffle then cut; indices within each part are sorted.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> Split {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, SPLIT_STREAM)));
    let cut = ((n as f64 * train_fraction).round() as usize).clamp(n.min(1), n);
    let mut train = order[..cut].to_vec();
    let mut test = order[cut..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Split { train, test }
}
