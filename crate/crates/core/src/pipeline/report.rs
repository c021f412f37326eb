//! Run directory layout and report rendering.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use super::config::PipelineConfig;
use super::train::{Prediction, TrainOutcome};
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::numerics::save_checkpoint;
use crate::rl::{ImbalanceTable, RlReport};

pub const CONFIG_FILE: &str = "config.toml";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const METRICS_FILE: &str = "metrics.json";
pub const REPORT_FILE: &str = "report.txt";
pub const CS_FILE: &str = "cs_curve.tsv";
pub const PREDICTIONS_FILE: &str = "predictions.tsv";
pub const ABORT_FILE: &str = "numeric_abort.txt";

#[derive(Serialize)]
struct SplitSummary {
    train: usize,
    test: usize,
    train_fraction: f64,
    seed: u64,
}

#[derive(Serialize)]
struct RunRecord<'a> {
    split: SplitSummary,
    warm_loss: &'a [f64],
    reward_table: &'a ImbalanceTable,
    reward_distance: bool,
    rl: &'a RlReport,
    train: &'a MetricsReport,
    test: Option<&'a MetricsReport>,
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Input(e.to_string()))?;
    if text.contains("NaN") || text.contains("inf") {
        return Err(Error::Numeric("report would contain a non-finite value".into()));
    }
    Ok(text + "\n")
}

pub fn predictions_table(predictions: &[Prediction]) -> String {
    let mut out = String::from("id\ttrue\tpredicted\n");
    for p in predictions {
        let _ = writeln!(out, "{}\t{}\t{}", p.id, p.truth, p.predicted);
    }
    out
}

pub fn render_run_report(cfg: &PipelineConfig, outcome: &TrainOutcome) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "run report");
    let _ = writeln!(out, "seed            {}", cfg.seed);
    let _ = writeln!(
        out,
        "split           {} train / {} test (seeded, train fraction {})",
        outcome.split.train.len(),
        outcome.split.test.len(),
        cfg.split.train_fraction
    );
    let _ = writeln!(out, "warm epochs     {}", outcome.warm_loss.len());
    if let (Some(first), Some(last)) = (outcome.warm_loss.first(), outcome.warm_loss.last()) {
        let _ = writeln!(out, "warm loss       {first:.6} -> {last:.6}");
    }
    let _ = writeln!(
        out,
        "rl              {} epochs, {} env steps, {} gradient steps, {} target syncs",
        outcome.rl.epochs.len(),
        outcome.rl.env_steps,
        outcome.rl.grad_steps,
        outcome.rl.target_syncs
    );
    for e in &outcome.rl.epochs {
        let hits: usize = e.row_hits.iter().sum();
        let _ = writeln!(
            out,
            "  epoch {:>3}  reward {:>10.4}  td {:>10}  row hits {:>5}/{}  eps {:.3}",
            e.epoch,
            e.mean_reward,
            e.mean_td_loss.map_or("-".into(), |v| format!("{v:.4}")),
            hits,
            e.episodes,
            e.final_epsilon
        );
    }
    let _ = writeln!(out, "\n[train]");
    out.push_str(&outcome.train.metrics.render_text());
    if let Some(t) = &outcome.test {
        let _ = writeln!(out, "\n[test]");
        out.push_str(&t.metrics.render_text());
    }
    let diag = &outcome
        .test
        .as_ref()
        .unwrap_or(&outcome.train)
        .metrics
        .diagnostics;
    if !diag.is_empty() {
        let _ = writeln!(out, "\nlayer diagnostics (beta mean, alpha mean, node variance)");
        for (l, d) in diag.iter().enumerate() {
            let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
            let _ = writeln!(
                out,
                "  layer {:>2}  {:>8}  {:>8}  {:.6}",
                l,
                f(d.beta_mean),
                f(d.alpha_mean),
                d.node_variance
            );
        }
    }
    out
}

pub fn write_run(out_dir: &Path, cfg: &PipelineConfig, outcome: &TrainOutcome) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join(CONFIG_FILE), cfg.to_toml_string()?)?;
    save_checkpoint(&outcome.store, &out_dir.join(CHECKPOINT_FILE))?;
    let record = RunRecord {
        split: SplitSummary {
            train: outcome.split.train.len(),
            test: outcome.split.test.len(),
            train_fraction: cfg.split.train_fraction,
            seed: cfg.seed,
        },
        warm_loss: &outcome.warm_loss,
        reward_table: &outcome.rewards.table,
        reward_distance: outcome.rewards.distance,
        rl: &outcome.rl,
        train: &outcome.train.metrics,
        test: outcome.test.as_ref().map(|t| &t.metrics),
    };
    std::fs::write(out_dir.join(METRICS_FILE), to_json(&record)?)?;
    std::fs::write(out_dir.join(REPORT_FILE), render_run_report(cfg, outcome))?;
    let headline = outcome.test.as_ref().unwrap_or(&outcome.train);
    std::fs::write(out_dir.join(CS_FILE), headline.metrics.cs_table())?;
    let mut preds = outcome.train.predictions.clone();
    if let Some(t) = &outcome.test {
        preds.extend(t.predictions.iter().cloned());
    }
    std::fs::write(out_dir.join(PREDICTIONS_FILE), predictions_table(&preds))?;
    Ok(())
}

pub fn write_eval(out_dir: &Path, metrics: &MetricsReport, predictions: &[Prediction]) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("eval_metrics.json"), to_json(metrics)?)?;
    std::fs::write(out_dir.join("eval_report.txt"), metrics.render_text())?;
    std::fs::write(out_dir.join("eval_cs_curve.tsv"), metrics.cs_table())?;
    std::fs::write(out_dir.join("eval_predictions.tsv"), predictions_table(predictions))?;
    Ok(())
}

pub fn write_numeric_abort(out_dir: &Path, cfg: &PipelineConfig, err: &Error) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let mut text = format!("numeric abort: {err}\n\nconfiguration:\n");
    text.push_str(&cfg.to_toml_string()?);
    std::fs::write(out_dir.join(ABORT_FILE), text)?;
    Ok(())
}
