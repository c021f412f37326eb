//! Run configuration, read from and echoed as TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attention::{Combine, DEFAULT_HEADS};
use crate::error::{Error, Result};
use crate::gcn::StackConfig;
use crate::graph::DEFAULT_GRAPH_THRESHOLD;
use crate::numerics::AdamConfig;
use crate::rl::RlConfig;
use crate::walk::{ProfileSource, WalkConfig, DEFAULT_WALK_THRESHOLD};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphSection {
    pub threshold: f64,
    pub patches_per_side: usize,
}

impl Default for GraphSection {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_GRAPH_THRESHOLD,
            patches_per_side: 14,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WalkSection {
    pub enabled: bool,
    pub p: f64,
    pub q: f64,
    pub walks_per_node: usize,
    pub walk_length: usize,
    pub window: usize,
    pub tau: f64,
    pub profile_source: ProfileSource,
}

impl Default for WalkSection {
    fn default() -> Self {
        let w = WalkConfig::default();
        Self {
            enabled: true,
            p: w.p,
            q: w.q,
            walks_per_node: w.walks_per_node,
            walk_length: w.walk_length,
            window: w.window,
            tau: DEFAULT_WALK_THRESHOLD,
            profile_source: ProfileSource::default(),
        }
    }
}

impl WalkSection {
    pub fn walk_config(&self) -> WalkConfig {
        WalkConfig {
            p: self.p,
            q: self.q,
            walks_per_node: self.walks_per_node,
            walk_length: self.walk_length,
            window: self.window,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttentionSection {
    pub enabled: bool,
    pub heads: usize,
    /// 0 picks `feature_width / heads`, at least 1.
    pub key_dim: usize,
    pub combine: Combine,
}

impl Default for AttentionSection {
    fn default() -> Self {
        Self {
            enabled: true,
            heads: DEFAULT_HEADS,
            key_dim: 0,
            combine: Combine::default(),
        }
    }
}

impl AttentionSection {
    pub fn resolved_key_dim(&self, feature_width: usize) -> usize {
        if self.key_dim > 0 {
            self.key_dim
        } else {
            (feature_width / self.heads.max(1)).max(1)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardSection {
    /// Scale rewards by the group imbalance ratio.
    pub imbalance: bool,
    /// Scale penalties by the grid distance to the label.
    pub distance: bool,
}

impl Default for RewardSection {
    fn default() -> Self {
        Self {
            imbalance: true,
            distance: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Epochs of the supervised warm phase.
    pub epochs: usize,
    pub batch: usize,
    pub lr_floor: f64,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let a = AdamConfig::default();
        Self {
            lr: a.lr,
            weight_decay: a.weight_decay,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
            epochs: 120,
            batch: 32,
            lr_floor: 1e-6,
        }
    }
}

impl OptimizerSection {
    pub fn adam(&self, lr: f64) -> AdamConfig {
        AdamConfig {
            lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub train_fraction: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self { train_fraction: 0.8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub cs_max: u32,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { cs_max: 10 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub graph: GraphSection,
    pub walk: WalkSection,
    pub attention: AttentionSection,
    pub gcn: StackConfig,
    pub rl: RlConfig,
    pub reward: RewardSection,
    pub optimizer: OptimizerSection,
    pub split: SplitSection,
    pub eval: EvalSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            graph: GraphSection::default(),
            walk: WalkSection::default(),
            attention: AttentionSection::default(),
            gcn: StackConfig::default(),
            rl: RlConfig::default(),
            reward: RewardSection::default(),
            optimizer: OptimizerSection::default(),
            split: SplitSection::default(),
            eval: EvalSection::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// RL settings with an unset pass count tied to `optimizer.epochs`.
    pub fn resolved_rl(&self) -> RlConfig {
        RlConfig {
            epochs: Some(self.rl.epochs.unwrap_or(self.optimizer.epochs)),
            ..self.rl.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(-1.0..=1.0).contains(&self.graph.threshold) {
            return Err(Error::Config(format!("graph.threshold {} outside [-1, 1]", self.graph.threshold)));
        }
        if self.graph.patches_per_side == 0 {
            return Err(Error::Config("graph.patches_per_side must be positive".into()));
        }
        self.walk.walk_config().validate()?;
        if !(-1.0..=1.0).contains(&self.walk.tau) {
            return Err(Error::Config(format!("walk.tau {} outside [-1, 1]", self.walk.tau)));
        }
        if self.attention.heads == 0 {
            return Err(Error::Config("attention.heads must be positive".into()));
        }
        self.gcn.validate()?;
        self.rl.validate()?;
        let o = &self.optimizer;
        if !(o.lr > 0.0) || o.lr_floor < 0.0 || o.lr_floor > o.lr || o.weight_decay < 0.0 || o.batch == 0 {
            return Err(Error::Config(
                "optimizer needs lr > 0, 0 <= lr_floor <= lr, weight_decay >= 0, batch > 0".into(),
            ));
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || !(o.eps > 0.0) {
            return Err(Error::Config("optimizer betas must lie in [0, 1) and eps be positive".into()));
        }
        if !(self.split.train_fraction > 0.0 && self.split.train_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "split.train_fraction {} outside (0, 1]",
                self.split.train_fraction
            )));
        }
        Ok(())
    }
}
