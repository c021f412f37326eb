//! Finite-difference check of the whole model on a small random graph.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use super::model::{full_model_loss_var, ModelParams, PreparedGraph};
use crate::error::Result;
use crate::numerics::{grad_check, GradReport, Matrix, ParamStore};
use crate::walk::derive_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckPreset {
    pub nodes: usize,
    pub feature_width: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub q_hidden: usize,
    pub edge_density: f64,
    pub epsilon: f64,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for GradcheckPreset {
    fn default() -> Self {
        Self {
            nodes: 12,
            feature_width: 6,
            hidden: 8,
            layers: 4,
            heads: 2,
            q_hidden: 8,
            edge_density: 0.3,
            epsilon: 1e-5,
            tolerance: 1e-4,
            seed: 7,
        }
    }
}

impl GradcheckPreset {
    pub fn config(&self) -> PipelineConfig {
        let mut cfg = PipelineConfig {
            seed: self.seed,
            ..PipelineConfig::default()
        };
        cfg.attention.heads = self.heads;
        cfg.gcn.layers = self.layers;
        cfg.gcn.hidden = self.hidden;
        cfg.rl.hidden = self.q_hidden;
        cfg
    }

    pub fn random_graph(&self) -> PreparedGraph {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, 0x6C));
        let features = Matrix::uniform(self.nodes, self.feature_width, -1.0, 1.0, &mut rng);
        let mut adjacency = Matrix::zeros(self.nodes, self.nodes);
        for i in 0..self.nodes {
            for j in i + 1..self.nodes {
                if rng.random::<f64>() < self.edge_density {
                    adjacency.set(i, j, 1.0);
                    adjacency.set(j, i, 1.0);
                }
            }
        }
        PreparedGraph { features, adjacency }
    }
}

pub fn run_gradcheck(preset: &GradcheckPreset) -> Result<GradReport> {
    let cfg = preset.config();
    cfg.validate()?;
    let graph = preset.random_graph();
    let mut store = ParamStore::new();
    let params = ModelParams::init(&mut store, &cfg, preset.feature_width)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(preset.seed, 0x9B));
    let probe = Matrix::uniform(params.qnet.actions, 1, -1.0, 1.0, &mut rng);
    let age = 37;
    grad_check(
        |s, t| full_model_loss_var(t, s, &params, &cfg, &graph, age, &probe),
        &mut store,
        preset.epsilon,
        preset.tolerance,
    )
}
