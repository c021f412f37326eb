//! Full model: per-sample graph preparation, attention heads, residual stack
//! and the Q-network, all parameters in one store.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::PipelineConfig;
use super::dataset::Dataset;
use crate::attention::{attention_head, AttentionHeadParams};
use crate::error::{Error, Result};
use crate::gcn::{collect_diagnostics, forward_stack_var, LayerDiagnostics, LayerParams, StackParams};
use crate::graph::build_initial_graph;
use crate::numerics::{Matrix, ParamId, ParamStore, Tape, Var};
use crate::rl::grid::encode_age;
use crate::rl::loss::combined_loss_var;
use crate::rl::qnet::{q_forward_var, state_input, QNetworkParams, POSITION_FEATURES};
use crate::walk::{derive_seed, enrich_graph};

const INIT_STREAM: u64 = 0x1717;
const WALK_STREAM: u64 = 0x3A1C;

pub const ATTENTION_PREFIX: &str = "attn";
pub const STACK_PREFIX: &str = "gcn";
pub const Q_PREFIX: &str = "q";

/// Node features with the walk-enriched 0-1 adjacency (no self-loops).
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedGraph {
    pub features: Matrix,
    pub adjacency: Matrix,
}

pub fn prepare_graph(features: &Matrix, cfg: &PipelineConfig, walk_seed: u64) -> Result<PreparedGraph> {
    let graph = build_initial_graph(features, cfg.graph.threshold)?;
    let graph = if cfg.walk.enabled {
        enrich_graph(
            &graph,
            &cfg.walk.walk_config(),
            cfg.walk.tau,
            cfg.walk.profile_source,
            walk_seed,
        )?
    } else {
        graph
    };
    Ok(PreparedGraph {
        features: graph.node_features,
        adjacency: graph.adjacency,
    })
}

/// Walk seeds depend on the run seed and the sample's position in the file.
pub fn prepare_all(dataset: &Dataset, cfg: &PipelineConfig) -> Result<Vec<PreparedGraph>> {
    let base = derive_seed(cfg.seed, WALK_STREAM);
    dataset
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| prepare_graph(&s.features, cfg, derive_seed(base, i as u64)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelParams {
    pub heads: Vec<AttentionHeadParams>,
    pub stack: StackParams,
    pub qnet: QNetworkParams,
}

impl ModelParams {
    pub fn init(store: &mut ParamStore, cfg: &PipelineConfig, feature_width: usize) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, INIT_STREAM));
        let mut heads = Vec::new();
        if cfg.attention.enabled {
            let dk = cfg.attention.resolved_key_dim(feature_width);
            for m in 0..cfg.attention.heads {
                heads.push(AttentionHeadParams::init(
                    store,
                    &format!("{ATTENTION_PREFIX}.head{m}"),
                    feature_width,
                    dk,
                    &mut rng,
                )?);
            }
        }
        let stack = StackParams::init(store, STACK_PREFIX, feature_width, &cfg.gcn, &mut rng)?;
        let qnet = QNetworkParams::init(
            store,
            Q_PREFIX,
            cfg.gcn.hidden,
            cfg.rl.hidden,
            cfg.rl.action_space().size(),
            &mut rng,
        )?;
        Ok(Self { heads, stack, qnet })
    }

    /// Resolves parameter handles in a loaded store and checks every shape
    /// against what `cfg` would have created.
    pub fn locate(store: &ParamStore, cfg: &PipelineConfig, feature_width: usize) -> Result<Self> {
        let mut reference = ParamStore::new();
        Self::init(&mut reference, cfg, feature_width)?;
        if reference.len() != store.len() {
            return Err(Error::Compatibility(format!(
                "checkpoint has {} parameters, configuration expects {}",
                store.len(),
                reference.len()
            )));
        }
        for (_, name, p) in reference.iter() {
            let id = store
                .id(name)
                .ok_or_else(|| Error::Compatibility(format!("checkpoint lacks parameter {name}")))?;
            if store.value(id).shape() != p.value.shape() {
                return Err(Error::Compatibility(format!(
                    "parameter {name} has shape {:?}, configuration expects {:?}",
                    store.value(id).shape(),
                    p.value.shape()
                )));
            }
        }
        let get = |name: String| store.id(&name).ok_or(Error::Compatibility(format!("missing {name}")));
        let heads = (0..if cfg.attention.enabled { cfg.attention.heads } else { 0 })
            .map(|m| {
                Ok(AttentionHeadParams {
                    query: get(format!("{ATTENTION_PREFIX}.head{m}.query"))?,
                    key: get(format!("{ATTENTION_PREFIX}.head{m}.key"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let layers = (0..cfg.gcn.layers)
            .map(|l| {
                let p = format!("{STACK_PREFIX}.layer{l}");
                Ok(LayerParams {
                    w: get(format!("{p}.w"))?,
                    beta_w: get(format!("{p}.beta_w"))?,
                    beta_b: get(format!("{p}.beta_b"))?,
                    alpha_a: get(format!("{p}.alpha_a"))?,
                    alpha_b: get(format!("{p}.alpha_b"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let stack = StackParams {
            input: get(format!("{STACK_PREFIX}.input"))?,
            layers,
        };
        let qnet = QNetworkParams::locate(store, Q_PREFIX)?;
        Ok(Self { heads, stack, qnet })
    }

    /// Attention and stack parameters.
    pub fn representation_ids(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self.heads.iter().flat_map(|h| [h.query, h.key]).collect();
        ids.push(self.stack.input);
        for l in &self.stack.layers {
            ids.extend([l.w, l.beta_w, l.beta_b, l.alpha_a, l.alpha_b]);
        }
        ids
    }

    /// Everything the supervised warm phase trains: all but the action-value head.
    pub fn warm_ids(&self) -> Vec<ParamId> {
        let q = &self.qnet;
        let mut ids = self.representation_ids();
        ids.extend([
            q.trunk1_w, q.trunk1_b, q.trunk2_w, q.trunk2_b, q.class_w, q.class_b, q.reg_w, q.reg_b,
        ]);
        ids
    }
}

pub struct EmbeddingVars {
    pub embedding: Var,
    pub stack: crate::gcn::StackVars,
}

/// Records attention heads and the residual stack for one sample.
pub fn embed_var(
    tape: &mut Tape,
    store: &ParamStore,
    params: &ModelParams,
    cfg: &PipelineConfig,
    graph: &PreparedGraph,
) -> Result<EmbeddingVars> {
    let x = tape.constant(graph.features.clone());
    let a0 = tape.constant(graph.adjacency.clone());
    let adjacencies = if params.heads.is_empty() {
        vec![a0]
    } else {
        let a0_bar = tape.add_identity(a0)?;
        let mut adj = Vec::with_capacity(params.heads.len());
        for h in &params.heads {
            let (q, k) = (tape.param(store, h.query), tape.param(store, h.key));
            adj.push(attention_head(tape, x, a0_bar, q, k, cfg.attention.combine)?.adjacency);
        }
        adj
    };
    let stack = forward_stack_var(tape, store, &params.stack, &cfg.gcn, x, &adjacencies)?;
    Ok(EmbeddingVars {
        embedding: stack.embedding,
        stack,
    })
}

pub fn embed(store: &ParamStore, params: &ModelParams, cfg: &PipelineConfig, graph: &PreparedGraph) -> Result<Vec<f64>> {
    Ok(embed_with_diagnostics(store, params, cfg, graph)?.0)
}

pub fn embed_with_diagnostics(
    store: &ParamStore,
    params: &ModelParams,
    cfg: &PipelineConfig,
    graph: &PreparedGraph,
) -> Result<(Vec<f64>, Vec<LayerDiagnostics>)> {
    let mut tape = Tape::new();
    let v = embed_var(&mut tape, store, params, cfg, graph)?;
    let e = tape.value(v.embedding).data().to_vec();
    if e.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("non-finite graph embedding".into()));
    }
    Ok((e, collect_diagnostics(&tape, &v.stack)))
}

/// Combined group/age loss of the auxiliary heads, read without a grid position.
pub fn aux_loss_from_embedding(
    tape: &mut Tape,
    store: &ParamStore,
    params: &ModelParams,
    cfg: &PipelineConfig,
    embedding: Var,
    age: u32,
) -> Result<Var> {
    let zeros = tape.constant(Matrix::zeros(1, POSITION_FEATURES));
    let input = tape.concat_cols(embedding, zeros)?;
    let out = q_forward_var(tape, store, &params.qnet, input)?;
    let group = encode_age(age as i64)?.row;
    combined_loss_var(
        tape,
        out.class_logits,
        out.age,
        &[group],
        &[age as f64],
        cfg.rl.eta,
        cfg.rl.focal_tau,
    )
}

pub fn aux_loss_var(
    tape: &mut Tape,
    store: &ParamStore,
    params: &ModelParams,
    cfg: &PipelineConfig,
    graph: &PreparedGraph,
    age: u32,
) -> Result<Var> {
    let emb = embed_var(tape, store, params, cfg, graph)?.embedding;
    aux_loss_from_embedding(tape, store, params, cfg, emb, age)
}

/// Scalar loss touching every parameter, for finite-difference checks:
/// auxiliary loss plus a fixed projection of the action values at the label cell.
pub fn full_model_loss_var(
    tape: &mut Tape,
    store: &ParamStore,
    params: &ModelParams,
    cfg: &PipelineConfig,
    graph: &PreparedGraph,
    age: u32,
    probe: &Matrix,
) -> Result<Var> {
    let emb = embed_var(tape, store, params, cfg, graph)?.embedding;
    let aux = aux_loss_from_embedding(tape, store, params, cfg, emb, age)?;
    let onehot = Matrix::row_vector(state_input(&[], Some(encode_age(age as i64)?)));
    let pos = tape.constant(onehot);
    let input = tape.concat_cols(emb, pos)?;
    let q = q_forward_var(tape, store, &params.qnet, input)?.q;
    let p = tape.constant(probe.clone());
    let proj = tape.matmul(q, p)?;
    tape.add(aux, proj)
}
