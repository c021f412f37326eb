//! Supervised warm phase, Double-DQN phase and held-out evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use super::dataset::{split_indices, Dataset, Split};
use super::model::{aux_loss_var, embed, embed_with_diagnostics, prepare_all, ModelParams, PreparedGraph};
use crate::error::{Error, Result};
use crate::gcn::LayerDiagnostics;
use crate::metrics::{evaluate, EvalRecord, MetricsReport};
use crate::numerics::{adam_step_for, cosine_lr, AdamConfig, ParamId, ParamStore, Tape};
use crate::rl::trainer::{predict_age, train_prlae, EmbeddingProvider, RlReport};
use crate::rl::{ImbalanceTable, RewardModel};
use crate::walk::derive_seed;

const WARM_STREAM: u64 = 0x3A53;
const RL_STREAM: u64 = 0x5E1F;

/// Model state after the supervised phase.
#[derive(Clone, Debug)]
pub struct WarmState {
    pub store: ParamStore,
    pub params: ModelParams,
    /// Mean training loss per epoch.
    pub loss: Vec<f64>,
}

pub fn warm_phase(cfg: &PipelineConfig, dataset: &Dataset, graphs: &[PreparedGraph], split: &Split) -> Result<WarmState> {
    let mut store = ParamStore::new();
    let params = ModelParams::init(&mut store, cfg, dataset.feature_width())?;
    let ids = params.warm_ids();
    let opt = &cfg.optimizer;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, WARM_STREAM));
    let mut order = split.train.clone();
    let mut loss_log = Vec::with_capacity(opt.epochs);
    let mut step = 0u64;
    for epoch in 0..opt.epochs {
        let adam = opt.adam(cosine_lr(opt.lr, opt.lr_floor, epoch, opt.epochs));
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(opt.batch) {
            store.zero_grad();
            for &i in batch {
                let mut tape = Tape::new();
                let loss = aux_loss_var(&mut tape, &store, &params, cfg, &graphs[i], dataset.samples[i].age)?;
                let value = tape.scalar(loss);
                if !value.is_finite() {
                    return Err(Error::Numeric(format!(
                        "warm phase loss {value} on sample {} in epoch {epoch}",
                        dataset.samples[i].id
                    )));
                }
                epoch_loss += value;
                let scaled = tape.scale(loss, 1.0 / batch.len() as f64);
                tape.backward(scaled, &mut store)?;
            }
            step += 1;
            adam_step_for(&mut store, &ids, &adam, step);
        }
        if !store.all_finite() {
            return Err(Error::Numeric(format!("parameters became non-finite in warm epoch {epoch}")));
        }
        loss_log.push(epoch_loss / order.len().max(1) as f64);
    }
    Ok(WarmState {
        store,
        params,
        loss: loss_log,
    })
}

/// Frozen mode embeds every training sample once; co-training takes one
/// auxiliary step on the representation before each episode.
struct CotrainProvider<'a> {
    cfg: &'a PipelineConfig,
    params: &'a ModelParams,
    graphs: Vec<&'a PreparedGraph>,
    ages: Vec<u32>,
    ids: Vec<ParamId>,
    adam: AdamConfig,
    step: u64,
}

impl EmbeddingProvider for CotrainProvider<'_> {
    fn sample_count(&self) -> usize {
        self.graphs.len()
    }

    fn embedding(&mut self, store: &ParamStore, sample: usize) -> Result<Vec<f64>> {
        embed(store, self.params, self.cfg, self.graphs[sample])
    }

    fn refresh(&mut self, store: &mut ParamStore, sample: usize) -> Result<()> {
        let mut tape = Tape::new();
        let loss = aux_loss_var(&mut tape, store, self.params, self.cfg, self.graphs[sample], self.ages[sample])?;
        if !tape.scalar(loss).is_finite() {
            return Err(Error::Numeric("non-finite co-training loss".into()));
        }
        store.zero_grad();
        tape.backward(loss, store)?;
        self.step += 1;
        adam_step_for(store, &self.ids, &self.adam, self.step);
        Ok(())
    }
}

pub fn reward_model(cfg: &PipelineConfig, train_ages: &[u32]) -> Result<RewardModel> {
    let table = if cfg.reward.imbalance {
        ImbalanceTable::from_ages(train_ages.iter().copied())?
    } else {
        ImbalanceTable::balanced()
    };
    Ok(RewardModel {
        table,
        distance: cfg.reward.distance,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub truth: u32,
    pub predicted: u32,
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub metrics: MetricsReport,
    pub predictions: Vec<Prediction>,
}

fn mean_diagnostics(all: &[Vec<LayerDiagnostics>]) -> Vec<LayerDiagnostics> {
    let Some(first) = all.first() else {
        return Vec::new();
    };
    let n = all.len() as f64;
    let avg = |f: &dyn Fn(&LayerDiagnostics) -> Option<f64>, l: usize| -> Option<f64> {
        let v: Option<Vec<f64>> = all.iter().map(|d| f(&d[l])).collect();
        v.map(|v| v.iter().sum::<f64>() / n)
    };
    (0..first.len())
        .map(|l| LayerDiagnostics {
            beta_mean: avg(&|d| d.beta_mean, l),
            beta_min: all
                .iter()
                .map(|d| d[l].beta_min)
                .collect::<Option<Vec<f64>>>()
                .map(|v| v.into_iter().fold(f64::INFINITY, f64::min)),
            alpha_mean: avg(&|d| d.alpha_mean, l),
            node_variance: all.iter().map(|d| d[l].node_variance).sum::<f64>() / n,
        })
        .collect()
}

pub fn evaluate_indices(
    store: &ParamStore,
    params: &ModelParams,
    cfg: &PipelineConfig,
    dataset: &Dataset,
    graphs: &[PreparedGraph],
    indices: &[usize],
) -> Result<Evaluation> {
    let mut records = Vec::with_capacity(indices.len());
    let mut predictions = Vec::with_capacity(indices.len());
    let mut diagnostics = Vec::with_capacity(indices.len());
    for &i in indices {
        let s = &dataset.samples[i];
        let (e, d) = embed_with_diagnostics(store, params, cfg, &graphs[i])?;
        let predicted = predict_age(store, &params.qnet, &e, cfg.rl.horizon)?;
        records.push(EvalRecord {
            predicted: predicted as f64,
            truth: s.clamped_age() as f64,
            sigma: s.sigma,
        });
        predictions.push(Prediction {
            id: s.id.clone(),
            truth: s.age,
            predicted,
        });
        diagnostics.push(d);
    }
    let mut metrics = evaluate(&records, cfg.eval.cs_max)?;
    metrics.diagnostics = mean_diagnostics(&diagnostics);
    Ok(Evaluation { metrics, predictions })
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub store: ParamStore,
    pub params: ModelParams,
    pub split: Split,
    pub warm_loss: Vec<f64>,
    pub rl: RlReport,
    pub rewards: RewardModel,
    pub train: Evaluation,
    pub test: Option<Evaluation>,
}

pub fn rl_phase(
    cfg: &PipelineConfig,
    dataset: &Dataset,
    graphs: &[PreparedGraph],
    split: &Split,
    warm: WarmState,
) -> Result<TrainOutcome> {
    let WarmState {
        mut store,
        params,
        loss: warm_loss,
    } = warm;
    store.reset_optimizer_state();
    let ages = dataset.ages(&split.train);
    let rewards = reward_model(cfg, &ages)?;
    let adam = cfg.optimizer.adam(cfg.optimizer.lr);
    let seed = derive_seed(cfg.seed, RL_STREAM);
    let rl_cfg = cfg.resolved_rl();
    let rl = if cfg.rl.cotrain {
        let mut provider = CotrainProvider {
            cfg,
            params: &params,
            graphs: split.train.iter().map(|&i| &graphs[i]).collect(),
            ages: ages.clone(),
            ids: params.representation_ids(),
            adam,
            step: 0,
        };
        train_prlae(&mut store, &params.qnet, &mut provider, &ages, &rewards, &rl_cfg, &adam, seed)?
    } else {
        let mut frozen: Vec<Vec<f64>> = split
            .train
            .iter()
            .map(|&i| embed(&store, &params, cfg, &graphs[i]))
            .collect::<Result<_>>()?;
        train_prlae(&mut store, &params.qnet, &mut frozen, &ages, &rewards, &rl_cfg, &adam, seed)?
    };
    if !store.all_finite() {
        return Err(Error::Numeric("parameters became non-finite during the RL phase".into()));
    }
    let train = evaluate_indices(&store, &params, cfg, dataset, graphs, &split.train)?;
    let test = if split.test.is_empty() {
        None
    } else {
        Some(evaluate_indices(&store, &params, cfg, dataset, graphs, &split.test)?)
    };
    Ok(TrainOutcome {
        store,
        params,
        split: split.clone(),
        warm_loss,
        rl,
        rewards,
        train,
        test,
    })
}

pub fn train_model(cfg: &PipelineConfig, dataset: &Dataset) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Input("empty dataset".into()));
    }
    let graphs = prepare_all(dataset, cfg)?;
    let split = split_indices(dataset.len(), cfg.split.train_fraction, cfg.seed);
    let warm = warm_phase(cfg, dataset, &graphs, &split)?;
    rl_phase(cfg, dataset, &graphs, &split, warm)
}
