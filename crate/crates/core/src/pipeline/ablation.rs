//! Component ablations run on one dataset and seed.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use super::dataset::{split_indices, Dataset};
use super::model::{prepare_all, PreparedGraph};
use super::train::{rl_phase, warm_phase, TrainOutcome, WarmState};
use crate::error::{Error, Result};
use crate::gcn::StackVariant;
use crate::rl::RlConfig;

pub const VARIANTS: [&str; 9] = [
    "no-lrc",
    "no-dfe",
    "resgcn",
    "no-rw",
    "bfs-only",
    "dfs-only",
    "no-imbalance",
    "no-distance",
    "one-shot",
];

pub fn apply_variant(base: &PipelineConfig, name: &str) -> Result<PipelineConfig> {
    let mut cfg = base.clone();
    match name {
        "full" => {}
        "no-lrc" => cfg.attention.enabled = false,
        "no-dfe" => cfg.gcn.variant = StackVariant::Vanilla,
        "resgcn" => cfg.gcn.variant = StackVariant::ResGcn,
        "no-rw" => cfg.walk.enabled = false,
        "bfs-only" => {
            cfg.walk.p = 0.5;
            cfg.walk.q = 2.0;
        }
        "dfs-only" => {
            cfg.walk.p = 2.0;
            cfg.walk.q = 0.5;
        }
        "no-imbalance" => cfg.reward.imbalance = false,
        "no-distance" => cfg.reward.distance = false,
        "one-shot" => cfg.rl.one_shot = true,
        other => {
            return Err(Error::Config(format!(
                "unknown ablation variant {other:?}; expected one of full, {}",
                VARIANTS.join(", ")
            )))
        }
    }
    Ok(cfg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub train_mae: f64,
    pub test_mae: f64,
    pub test_cs5: f64,
    /// Test MAE on the decade with the fewest training samples.
    pub minority_mae: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seed: u64,
    pub minority_group: Option<usize>,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, variant: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    pub fn render_table(&self) -> String {
        let mut out = format!("{:<14} {:>10} {:>10} {:>9} {:>13}\n", "variant", "train_mae", "test_mae", "cs(5)", "minority_mae");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<14} {:>10.4} {:>10.4} {:>8.2}% {:>13}",
                r.variant,
                r.train_mae,
                r.test_mae,
                r.test_cs5,
                r.minority_mae.map_or("-".into(), |m| format!("{m:.4}"))
            );
        }
        out
    }
}

/// Settings that leave the warm phase unchanged are blanked so runs that
/// differ only in them share one warm start.
fn warm_key(cfg: &PipelineConfig) -> Result<String> {
    let mut k = cfg.clone();
    k.reward = Default::default();
    k.rl = RlConfig {
        eta: cfg.rl.eta,
        focal_tau: cfg.rl.focal_tau,
        hidden: cfg.rl.hidden,
        one_shot: cfg.rl.one_shot,
        ..RlConfig::default()
    };
    k.to_toml_string()
}

fn graph_key(cfg: &PipelineConfig) -> Result<String> {
    let k = PipelineConfig {
        seed: cfg.seed,
        graph: cfg.graph.clone(),
        walk: cfg.walk.clone(),
        ..PipelineConfig::default()
    };
    k.to_toml_string()
}

pub fn row_from(variant: &str, outcome: &TrainOutcome, minority: Option<usize>) -> Result<AblationRow> {
    let test = outcome
        .test
        .as_ref()
        .ok_or_else(|| Error::Config("ablation needs a non-empty test split".into()))?;
    Ok(AblationRow {
        variant: variant.to_string(),
        train_mae: outcome.train.metrics.mae,
        test_mae: test.metrics.mae,
        test_cs5: test.metrics.cs(5).unwrap_or(0.0),
        minority_mae: minority.and_then(|g| test.metrics.per_group_mae[g]),
    })
}

/// Runs `full` followed by each requested variant.
pub fn run_ablation(base: &PipelineConfig, dataset: &Dataset, variants: &[String]) -> Result<AblationReport> {
    let mut names = vec!["full".to_string()];
    for v in variants {
        if !names.contains(v) {
            names.push(v.clone());
        }
    }
    let configs: Vec<PipelineConfig> = names
        .iter()
        .map(|n| apply_variant(base, n))
        .collect::<Result<_>>()?;
    for c in &configs {
        c.validate()?;
    }
    let split = split_indices(dataset.len(), base.split.train_fraction, base.seed);
    let table = crate::rl::ImbalanceTable::from_ages(dataset.ages(&split.train))?;
    let minority = table
        .counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .min_by_key(|(g, &c)| (c, *g))
        .map(|(g, _)| g);

    let mut graph_cache: Vec<(String, Vec<PreparedGraph>)> = Vec::new();
    let mut warm_cache: Vec<(String, WarmState)> = Vec::new();
    let mut rows = Vec::with_capacity(names.len());
    for (name, cfg) in names.iter().zip(&configs) {
        let gk = graph_key(cfg)?;
        if !graph_cache.iter().any(|(k, _)| *k == gk) {
            graph_cache.push((gk.clone(), prepare_all(dataset, cfg)?));
        }
        let graphs = &graph_cache.iter().find(|(k, _)| *k == gk).expect("cached").1;
        let wk = warm_key(cfg)?;
        let warm = match warm_cache.iter().find(|(k, _)| *k == wk) {
            Some((_, w)) => w.clone(),
            None => {
                let w = warm_phase(cfg, dataset, graphs, &split)?;
                warm_cache.push((wk, w.clone()));
                w
            }
        };
        let outcome = rl_phase(cfg, dataset, graphs, &split, warm)?;
        rows.push(row_from(name, &outcome, minority)?);
    }
    Ok(AblationReport {
        seed: base.seed,
        minority_group: minority,
        rows,
    })
}
