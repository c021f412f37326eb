//! Multi-head latent relation graphs.
//!
//! Each head scores node pairs with scaled dot products of query/key
//! projections, normalises the scores row-wise with a softmax, and combines
//! them with the self-loop augmented enriched adjacency `Ā0 = A + I`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::FaceGraph;
use crate::numerics::{Matrix, ParamId, ParamStore, Tape, Var};

pub const DEFAULT_HEADS: usize = 8;

/// How attention scores meet the structural adjacency.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combine {
    /// `S × Ā0`: dense, mass propagated along known structure.
    #[default]
    Product,
    /// `S ∘ Ā0`: attention masked to existing edges and self-loops.
    Hadamard,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionHeadParams {
    pub query: ParamId,
    pub key: ParamId,
}

impl AttentionHeadParams {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        feature_width: usize,
        key_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let query = store.insert(format!("{prefix}.query"), Matrix::glorot(feature_width, key_dim, rng))?;
        let key = store.insert(format!("{prefix}.key"), Matrix::glorot(feature_width, key_dim, rng))?;
        Ok(Self { query, key })
    }

    pub fn key_dim(&self, store: &ParamStore) -> usize {
        store.value(self.query).cols()
    }
}

/// Head outputs on the tape: the softmax scores and the combined adjacency.
#[derive(Clone, Copy, Debug)]
pub struct HeadVars {
    pub scores: Var,
    pub adjacency: Var,
}

/// Records one head on `tape`. `a0_bar` must already include self-loops.
pub fn attention_head(
    tape: &mut Tape,
    features: Var,
    a0_bar: Var,
    query: Var,
    key: Var,
    combine: Combine,
) -> Result<HeadVars> {
    let (n, _) = tape.shape(features);
    if tape.shape(a0_bar) != (n, n) {
        return Err(Error::dim("attention_adjacency", tape.shape(features), tape.shape(a0_bar)));
    }
    let dk = tape.shape(query).1;
    if tape.shape(key).1 != dk {
        return Err(Error::dim("attention_adjacency", tape.shape(query), tape.shape(key)));
    }
    let q = tape.matmul(features, query)?;
    let k = tape.matmul(features, key)?;
    let kt = tape.transpose(k);
    let raw = tape.matmul(q, kt)?;
    let scaled = tape.scale(raw, 1.0 / (dk as f64).sqrt());
    let scores = tape.row_softmax(scaled);
    let adjacency = match combine {
        Combine::Product => tape.matmul(scores, a0_bar)?,
        Combine::Hadamard => tape.mul(scores, a0_bar)?,
    };
    Ok(HeadVars { scores, adjacency })
}

/// Plain-value form: returns `(scores, adjacency)` for a 0-1 adjacency `a0`.
pub fn attention_adjacency(
    features: &Matrix,
    a0: &Matrix,
    w_query: &Matrix,
    w_key: &Matrix,
    combine: Combine,
) -> Result<(Matrix, Matrix)> {
    let mut tape = Tape::new();
    let x = tape.constant(features.clone());
    let a = tape.constant(a0.clone());
    let a_bar = tape.add_identity(a)?;
    let q = tape.constant(w_query.clone());
    let k = tape.constant(w_key.clone());
    if w_query.rows() != features.cols() {
        return Err(Error::dim("attention_adjacency", features.shape(), w_query.shape()));
    }
    let head = attention_head(&mut tape, x, a_bar, q, k, combine)?;
    Ok((tape.value(head.scores).clone(), tape.value(head.adjacency).clone()))
}

#[derive(Clone, Debug)]
pub struct RelationGraphSet {
    pub node_features: Matrix,
    pub adjacencies: Vec<Matrix>,
    /// Softmax scores before combination, kept for audit.
    pub scores: Vec<Matrix>,
    pub head_params: Vec<AttentionHeadParams>,
}

pub fn generate_head_set(
    graph: &FaceGraph,
    store: &ParamStore,
    heads: &[AttentionHeadParams],
    combine: Combine,
) -> Result<RelationGraphSet> {
    if heads.is_empty() {
        return Err(Error::Input("at least one attention head is required".into()));
    }
    let mut adjacencies = Vec::with_capacity(heads.len());
    let mut scores = Vec::with_capacity(heads.len());
    for h in heads {
        let (s, a) = attention_adjacency(
            &graph.node_features,
            &graph.adjacency,
            store.value(h.query),
            store.value(h.key),
            combine,
        )?;
        scores.push(s);
        adjacencies.push(a);
    }
    Ok(RelationGraphSet {
        node_features: graph.node_features.clone(),
        adjacencies,
        scores,
        head_params: heads.to_vec(),
    })
}
