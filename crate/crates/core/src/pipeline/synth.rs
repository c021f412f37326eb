//! Seeded synthetic datasets whose node features respond smoothly to age.
//!
//! Nodes fall into clusters that share a sinusoidal response pattern over
//! `age / 100`, plus a small fixed per-node perturbation, so that the
//! similarity graph has structure and age stays recoverable from features.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use crate::error::{Error, Result};
use crate::graph::LabeledSample;
use crate::numerics::Matrix;
use crate::rl::grid::GRID_SIDE;

/// The age response is shared by every dataset, whatever its seed.
const BASIS_SEED: u64 = 0xA9E5_B451;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AgeDistribution {
    /// Integer ages uniform over `min..=max`.
    Uniform { min: u32, max: u32 },
    /// Per-decade weights; counts are allocated exactly by largest remainder.
    Groups { weights: Vec<f64> },
}

impl AgeDistribution {
    /// Two decades in the ratio `major : minor`.
    pub fn two_groups(major_group: usize, minor_group: usize, major: f64, minor: f64) -> Self {
        let mut weights = vec![0.0; GRID_SIDE];
        weights[major_group] = major;
        weights[minor_group] = minor;
        AgeDistribution::Groups { weights }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_samples: usize,
    pub nodes: usize,
    pub feature_width: usize,
    pub clusters: usize,
    pub distribution: AgeDistribution,
    pub noise: f64,
    /// Annotation σ written with every record when set.
    pub sigma: Option<f64>,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_samples: 1000,
            nodes: 12,
            feature_width: 16,
            clusters: 3,
            distribution: AgeDistribution::two_groups(2, 6, 9.0, 1.0),
            noise: 0.05,
            sigma: None,
            seed: 7,
        }
    }
}

/// Exact counts per bucket proportional to `weights`, summing to `n`.
pub fn allocate_counts(n: usize, weights: &[f64]) -> Result<Vec<usize>> {
    if weights.is_empty() || weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::Config("distribution weights must be finite and non-negative".into()));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::Config("distribution weights sum to zero".into()));
    }
    let quotas: Vec<f64> = weights.iter().map(|w| n as f64 * w / total).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut remaining = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if remaining == 0 {
            break;
        }
        if weights[i] > 0.0 {
            counts[i] += 1;
            remaining -= 1;
        }
    }
    Ok(counts)
}

struct Basis {
    freq: Matrix,
    phase: Matrix,
    /// Per-node offsets added to the shared phase.
    jitter: Matrix,
    cluster_of: Vec<usize>,
}

impl Basis {
    fn new(nodes: usize, width: usize, clusters: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(BASIS_SEED);
        let clusters = clusters.clamp(1, nodes.max(1));
        let mut freq = Matrix::zeros(clusters, width);
        let mut phase = Matrix::zeros(clusters, width);
        for c in 0..clusters {
            for k in 0..width {
                // the first feature of every cluster is slow, so the response is not periodic in age
                let f = if k == 0 { 0.4 } else { rng.random_range(0.4..2.5) };
                freq.set(c, k, f);
                phase.set(c, k, rng.random_range(0.0..TAU));
            }
        }
        let jitter = Matrix::uniform(nodes, width, -0.15, 0.15, &mut rng);
        Self {
            freq,
            phase,
            jitter,
            cluster_of: (0..nodes).map(|i| i % clusters).collect(),
        }
    }

    fn response(&self, age: f64) -> Matrix {
        let a = age / 100.0;
        let (nodes, width) = self.jitter.shape();
        let mut m = Matrix::zeros(nodes, width);
        for i in 0..nodes {
            let c = self.cluster_of[i];
            for k in 0..width {
                let v = (TAU * self.freq.get(c, k) * a + self.phase.get(c, k) + self.jitter.get(i, k)).sin();
                m.set(i, k, v);
            }
        }
        m
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    if spec.n_samples == 0 || spec.nodes == 0 || spec.feature_width == 0 {
        return Err(Error::Config("n_samples, nodes and feature_width must be positive".into()));
    }
    if !(spec.noise >= 0.0 && spec.noise.is_finite()) {
        return Err(Error::Config(format!("noise {} must be non-negative", spec.noise)));
    }
    if let Some(s) = spec.sigma {
        if !(s > 0.0) {
            return Err(Error::Config(format!("sigma {s} must be positive")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut ages: Vec<u32> = match &spec.distribution {
        AgeDistribution::Uniform { min, max } => {
            if min > max || *max > 99 {
                return Err(Error::Config(format!("uniform ages {min}..={max} invalid")));
            }
            (0..spec.n_samples).map(|_| rng.random_range(*min..=*max)).collect()
        }
        AgeDistribution::Groups { weights } => {
            if weights.len() != GRID_SIDE {
                return Err(Error::Config(format!("expected {GRID_SIDE} group weights, got {}", weights.len())));
            }
            let counts = allocate_counts(spec.n_samples, weights)?;
            let mut ages = Vec::with_capacity(spec.n_samples);
            for (g, &c) in counts.iter().enumerate() {
                for _ in 0..c {
                    ages.push((g * GRID_SIDE) as u32 + rng.random_range(0..GRID_SIDE as u32));
                }
            }
            use rand::seq::SliceRandom;
            ages.shuffle(&mut rng);
            ages
        }
    };
    ages.truncate(spec.n_samples);
    let basis = Basis::new(spec.nodes, spec.feature_width, spec.clusters);
    let normal = (spec.noise > 0.0)
        .then(|| Normal::new(0.0, spec.noise).map_err(|e| Error::Config(e.to_string())))
        .transpose()?;
    let samples = ages
        .into_iter()
        .enumerate()
        .map(|(i, age)| {
            let mut features = basis.response(age as f64);
            if let Some(n) = &normal {
                for v in features.data_mut() {
                    *v += n.sample(&mut rng);
                }
            }
            LabeledSample {
                id: format!("s{i:05}"),
                age,
                sigma: spec.sigma,
                features,
            }
        })
        .collect();
    Ok(Dataset { samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_initial_graph;
    use crate::rl::ImbalanceTable;

    #[test]
    fn largest_remainder_is_exact() {
        let mut w = vec![0.0; 10];
        w[2] = 9.0;
        w[6] = 1.0;
        let c = allocate_counts(1000, &w).unwrap();
        assert_eq!((c[2], c[6]), (900, 100));
        assert_eq!(allocate_counts(7, &[1.0, 1.0, 1.0]).unwrap(), vec![3, 2, 2]);
        assert!(allocate_counts(5, &[0.0, 0.0]).is_err());
        assert!(allocate_counts(5, &[1.0, -1.0]).is_err());
    }

    #[test]
    fn imbalance_counts_from_generated_data() {
        let d = generate_synthetic(&SyntheticSpec::default()).unwrap();
        let t = ImbalanceTable::from_ages(d.samples.iter().map(|s| s.age)).unwrap();
        assert_eq!((t.counts[2], t.counts[6]), (900, 100));
        assert_eq!(t.ratio(6), 9.0);
    }

    #[test]
    fn noiseless_same_age_is_identical() {
        let spec = SyntheticSpec {
            n_samples: 40,
            noise: 0.0,
            distribution: AgeDistribution::Uniform { min: 30, max: 31 },
            ..SyntheticSpec::default()
        };
        let d = generate_synthetic(&spec).unwrap();
        let same: Vec<_> = d.samples.iter().filter(|s| s.age == 30).collect();
        assert!(same.len() >= 2);
        assert_eq!(same[0].features, same[1].features);
    }

    #[test]
    fn byte_identical_files() {
        let spec = SyntheticSpec {
            n_samples: 30,
            ..SyntheticSpec::default()
        };
        let a = generate_synthetic(&spec).unwrap().to_jsonl().unwrap();
        let b = generate_synthetic(&spec).unwrap().to_jsonl().unwrap();
        assert_eq!(a, b);
        let other = generate_synthetic(&SyntheticSpec { seed: 8, ..spec }).unwrap().to_jsonl().unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn clusters_produce_edges() {
        let d = generate_synthetic(&SyntheticSpec {
            n_samples: 5,
            ..SyntheticSpec::default()
        })
        .unwrap();
        for s in &d.samples {
            let g = build_initial_graph(&s.features, 0.936).unwrap();
            assert!(g.edge_count() > 0);
        }
    }

    #[test]
    fn bad_weights_are_config_errors() {
        let spec = SyntheticSpec {
            distribution: AgeDistribution::Groups { weights: vec![1.0; 3] },
            ..SyntheticSpec::default()
        };
        assert!(matches!(generate_synthetic(&spec), Err(Error::Config(_))));
    }
}
