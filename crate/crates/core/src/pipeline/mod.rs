//! End-to-end orchestration: synthetic data, training, evaluation,
//! gradient checks and ablations.

pub mod ablation;
pub mod config;
pub mod dataset;
pub mod gradcheck;
pub mod model;
pub mod report;
pub mod synth;
pub mod train;

use std::path::Path;

pub use ablation::{run_ablation, AblationReport, AblationRow, VARIANTS};
pub use config::PipelineConfig;
pub use dataset::{split_indices, Dataset, Split};
pub use gradcheck::{run_gradcheck, GradcheckPreset};
pub use model::{ModelParams, PreparedGraph};
pub use synth::{generate_synthetic, AgeDistribution, SyntheticSpec};
pub use train::{train_model, Evaluation, Prediction, TrainOutcome};

use crate::error::{Error, Result};
use crate::numerics::load_checkpoint;

/// Trains on `dataset_path` and writes the run directory; a numeric abort
/// leaves a diagnostic dump behind before returning the error.
pub fn run_train(cfg: &PipelineConfig, dataset_path: &Path, out_dir: &Path) -> Result<TrainOutcome> {
    let dataset = Dataset::load(dataset_path)?;
    match train_model(cfg, &dataset) {
        Ok(outcome) => {
            report::write_run(out_dir, cfg, &outcome)?;
            Ok(outcome)
        }
        Err(err @ Error::Numeric(_)) => {
            report::write_numeric_abort(out_dir, cfg, &err)?;
            Err(err)
        }
        Err(err) => Err(err),
    }
}

/// Greedy-policy evaluation of a checkpoint on every sample of a dataset.
pub fn run_eval(cfg: &PipelineConfig, checkpoint: &Path, dataset_path: &Path) -> Result<Evaluation> {
    cfg.validate()?;
    let store = load_checkpoint(checkpoint)?;
    let dataset = Dataset::load(dataset_path)?;
    let params = ModelParams::locate(&store, cfg, dataset.feature_width())?;
    let graphs = model::prepare_all(&dataset, cfg)?;
    let all: Vec<usize> = (0..dataset.len()).collect();
    train::evaluate_indices(&store, &params, cfg, &dataset, &graphs, &all)
}
