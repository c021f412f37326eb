//! Q-network: a shared two-layer trunk with action-value, group and age heads.

use rand::Rng;

use super::grid::{GridPosition, GRID_SIDE};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, ParamId, ParamStore, Tape, Var};

/// One-hot row plus one-hot column.
pub const POSITION_FEATURES: usize = 2 * GRID_SIDE;
pub const DEFAULT_Q_HIDDEN: usize = 64;

/// The regression head predicts `(age − AGE_SHIFT) / AGE_SCALE`.
pub const AGE_SCALE: f64 = 10.0;
pub const AGE_SHIFT: f64 = 50.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QNetworkParams {
    pub trunk1_w: ParamId,
    pub trunk1_b: ParamId,
    pub trunk2_w: ParamId,
    pub trunk2_b: ParamId,
    pub q_w: ParamId,
    pub q_b: ParamId,
    pub class_w: ParamId,
    pub class_b: ParamId,
    pub reg_w: ParamId,
    pub reg_b: ParamId,
    pub embed_dim: usize,
    pub actions: usize,
}

impl QNetworkParams {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        embed_dim: usize,
        hidden: usize,
        actions: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let input = embed_dim + POSITION_FEATURES;
        let mut add = |name: &str, m: Matrix| store.insert(format!("{prefix}.{name}"), m);
        Ok(Self {
            trunk1_w: add("trunk1.w", Matrix::glorot(input, hidden, rng))?,
            trunk1_b: add("trunk1.b", Matrix::zeros(1, hidden))?,
            trunk2_w: add("trunk2.w", Matrix::glorot(hidden, hidden, rng))?,
            trunk2_b: add("trunk2.b", Matrix::zeros(1, hidden))?,
            q_w: add("q.w", Matrix::glorot(hidden, actions, rng))?,
            q_b: add("q.b", Matrix::zeros(1, actions))?,
            class_w: add("class.w", Matrix::glorot(hidden, GRID_SIDE, rng))?,
            class_b: add("class.b", Matrix::zeros(1, GRID_SIDE))?,
            reg_w: add("reg.w", Matrix::glorot(hidden, 1, rng))?,
            reg_b: add("reg.b", Matrix::zeros(1, 1))?,
            embed_dim,
            actions,
        })
    }

    pub fn ids(&self) -> Vec<ParamId> {
        vec![
            self.trunk1_w,
            self.trunk1_b,
            self.trunk2_w,
            self.trunk2_b,
            self.q_w,
            self.q_b,
            self.class_w,
            self.class_b,
            self.reg_w,
            self.reg_b,
        ]
    }

    /// Looks up an existing network by name, e.g. after loading a checkpoint.
    pub fn locate(store: &ParamStore, prefix: &str) -> Result<Self> {
        let get = |name: &str| {
            store
                .id(&format!("{prefix}.{name}"))
                .ok_or_else(|| Error::Compatibility(format!("missing parameter {prefix}.{name}")))
        };
        let trunk1_w = get("trunk1.w")?;
        let q_w = get("q.w")?;
        let rows = store.value(trunk1_w).rows();
        if rows < POSITION_FEATURES {
            return Err(Error::Compatibility(format!("{prefix}.trunk1.w has only {rows} rows")));
        }
        Ok(Self {
            trunk1_w,
            trunk1_b: get("trunk1.b")?,
            trunk2_w: get("trunk2.w")?,
            trunk2_b: get("trunk2.b")?,
            q_w,
            q_b: get("q.b")?,
            class_w: get("class.w")?,
            class_b: get("class.b")?,
            reg_w: get("reg.w")?,
            reg_b: get("reg.b")?,
            embed_dim: rows - POSITION_FEATURES,
            actions: store.value(q_w).cols(),
        })
    }
}

/// `[embedding ‖ one-hot row ‖ one-hot col]`; no position gives zero one-hots.
pub fn state_input(embedding: &[f64], position: Option<GridPosition>) -> Vec<f64> {
    let mut v = Vec::with_capacity(embedding.len() + POSITION_FEATURES);
    v.extend_from_slice(embedding);
    let mut onehot = [0.0; POSITION_FEATURES];
    if let Some(p) = position {
        onehot[p.row] = 1.0;
        onehot[GRID_SIDE + p.col] = 1.0;
    }
    v.extend_from_slice(&onehot);
    v
}

pub fn input_matrix(rows: &[Vec<f64>]) -> Result<Matrix> {
    let width = rows.first().map_or(0, Vec::len);
    let mut data = Vec::with_capacity(rows.len() * width);
    for r in rows {
        if r.len() != width {
            return Err(Error::dim("input_matrix", (1, width), (1, r.len())));
        }
        data.extend_from_slice(r);
    }
    Matrix::new(rows.len(), width, data)
}

#[derive(Clone, Copy, Debug)]
pub struct QVars {
    pub q: Var,
    pub class_logits: Var,
    /// Ages in years, `B x 1`.
    pub age: Var,
}

/// Batched forward over `B x (embed_dim + 20)` inputs.
pub fn q_forward_var(tape: &mut Tape, store: &ParamStore, params: &QNetworkParams, inputs: Var) -> Result<QVars> {
    let expected = params.embed_dim + POSITION_FEATURES;
    if tape.shape(inputs).1 != expected {
        return Err(Error::dim("q_forward", tape.shape(inputs), (expected, 0)));
    }
    let affine = |tape: &mut Tape, x: Var, w: ParamId, b: ParamId| -> Result<Var> {
        let (w, b) = (tape.param(store, w), tape.param(store, b));
        let xw = tape.matmul(x, w)?;
        tape.add_row(xw, b)
    };
    let h1 = affine(tape, inputs, params.trunk1_w, params.trunk1_b)?;
    let h1 = tape.relu(h1);
    let h2 = affine(tape, h1, params.trunk2_w, params.trunk2_b)?;
    let h2 = tape.relu(h2);
    let q = affine(tape, h2, params.q_w, params.q_b)?;
    let class_logits = affine(tape, h2, params.class_w, params.class_b)?;
    let raw = affine(tape, h2, params.reg_w, params.reg_b)?;
    let age = tape.affine(raw, AGE_SCALE, AGE_SHIFT);
    Ok(QVars { q, class_logits, age })
}

#[derive(Clone, Debug, PartialEq)]
pub struct QOutput {
    pub q: Vec<f64>,
    pub class_logits: Vec<f64>,
    pub age: f64,
}

pub fn q_forward(
    store: &ParamStore,
    params: &QNetworkParams,
    embedding: &[f64],
    position: Option<GridPosition>,
) -> Result<QOutput> {
    if embedding.len() != params.embed_dim {
        return Err(Error::dim("q_forward", (1, embedding.len()), (1, params.embed_dim)));
    }
    let mut tape = Tape::new();
    let x = tape.constant(Matrix::row_vector(state_input(embedding, position)));
    let v = q_forward_var(&mut tape, store, params, x)?;
    Ok(QOutput {
        q: tape.value(v.q).data().to_vec(),
        class_logits: tape.value(v.class_logits).data().to_vec(),
        age: tape.scalar(v.age),
    })
}

/// Action values for a batch of prepared inputs, one row per input.
pub fn q_values(store: &ParamStore, params: &QNetworkParams, inputs: &Matrix) -> Result<Matrix> {
    let mut tape = Tape::new();
    let x = tape.constant(inputs.clone());
    let v = q_forward_var(&mut tape, store, params, x)?;
    Ok(tape.value(v.q).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net(embed: usize, hidden: usize) -> (ParamStore, QNetworkParams) {
        let mut store = ParamStore::new();
        let p = QNetworkParams::init(&mut store, "q", embed, hidden, 5, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        (store, p)
    }

    #[test]
    fn zero_weights_give_bias() {
        let (mut store, p) = net(3, 4);
        for id in p.ids() {
            let (r, c) = store.value(id).shape();
            store.set_value(id, Matrix::zeros(r, c)).unwrap();
        }
        store.set_value(p.q_b, Matrix::row_vector(vec![0.5, -1.0, 2.0, 0.0, 3.0])).unwrap();
        let out = q_forward(&store, &p, &[1.0, 2.0, 3.0], Some(GridPosition { row: 2, col: 7 })).unwrap();
        assert_eq!(out.q, vec![0.5, -1.0, 2.0, 0.0, 3.0]);
        assert_eq!(out.age, AGE_SHIFT);
    }

    #[test]
    fn matches_layer_oracle() {
        let (store, p) = net(2, 3);
        let emb = [0.3, -0.7];
        let pos = GridPosition { row: 1, col: 4 };
        let x = state_input(&emb, Some(pos));
        let layer = |x: &[f64], w: &Matrix, b: &Matrix, relu: bool| -> Vec<f64> {
            (0..w.cols())
                .map(|j| {
                    let s = b.get(0, j) + (0..w.rows()).map(|i| x[i] * w.get(i, j)).sum::<f64>();
                    if relu {
                        s.max(0.0)
                    } else {
                        s
                    }
                })
                .collect()
        };
        let h1 = layer(&x, store.value(p.trunk1_w), store.value(p.trunk1_b), true);
        let h2 = layer(&h1, store.value(p.trunk2_w), store.value(p.trunk2_b), true);
        let q = layer(&h2, store.value(p.q_w), store.value(p.q_b), false);
        let out = q_forward(&store, &p, &emb, Some(pos)).unwrap();
        for (a, b) in out.q.iter().zip(&q) {
            assert!((a - b).abs() < 1e-12);
        }
        let again = q_forward(&store, &p, &emb, Some(pos)).unwrap();
        assert_eq!(out, again);
    }

    #[test]
    fn width_mismatch() {
        let (store, p) = net(3, 4);
        assert!(matches!(q_forward(&store, &p, &[1.0], None), Err(Error::Dimension { .. })));
    }

    #[test]
    fn locate_round_trip() {
        let (store, p) = net(6, 4);
        assert_eq!(QNetworkParams::locate(&store, "q").unwrap(), p);
        assert!(QNetworkParams::locate(&store, "other").is_err());
    }
}
