//! Deep residual graph convolution over the relation graphs.
//!
//! Each layer first blends the propagated state with the initial embedding
//! through a per-node gate `β` (adaptive initial residual), then runs a
//! weighted convolution whose output is blended with the previous residual
//! state through a layer gate `α` driven by inter-layer similarity
//! (dynamic developmental residual):
//!
//! ```text
//! H̃(l+1) = (1 − β) · Â H(l) + β · H(0)
//! H(l+1)  = ReLU((1 − α) · Â H̃(l+1) W(l) + α · H̃(l))
//! β_i     = clamp(σ(w_β · [H(0)_i ‖ H(l)_i] + b_β), β_min, 1)
//! α       = σ(a_l + b_l · mean_i cos(H̃(l+1)_i, H̃(l)_i))
//! ```
//!
//! `Â = D̃^{-1/2} (A + I) D̃^{-1/2}`. Vanilla GCN and fixed-α ResGCN are
//! available as baselines.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, ParamId, ParamStore, Tape, Var};

pub const DEFAULT_LAYERS: usize = 12;
pub const DEFAULT_HIDDEN: usize = 64;
pub const DEFAULT_BETA_MIN: f64 = 0.05;

const COSINE_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StackVariant {
    /// Adaptive initial residual followed by the developmental layer.
    #[default]
    Full,
    /// Plain `ReLU(Â H W)` layers.
    Vanilla,
    /// `ReLU((1 − α) Â H(l) W + α H(l−1))` with a fixed α.
    ResGcn,
}

/// Pins gates to fixed values instead of computing them.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GateOverride {
    pub beta: Option<f64>,
    pub alpha: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StackConfig {
    pub layers: usize,
    pub hidden: usize,
    pub beta_min: f64,
    pub variant: StackVariant,
    /// α used by the ResGCN baseline.
    pub res_alpha: f64,
    pub gate_override: GateOverride,
}

impl Default for StackConfig {
    fn default() -> Self {
        Self {
            layers: DEFAULT_LAYERS,
            hidden: DEFAULT_HIDDEN,
            beta_min: DEFAULT_BETA_MIN,
            variant: StackVariant::Full,
            res_alpha: 0.1,
            gate_override: GateOverride::default(),
        }
    }
}

impl StackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden == 0 {
            return Err(Error::Config("gcn layers and hidden width must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.beta_min) {
            return Err(Error::Config(format!("beta_min {} outside [0, 1]", self.beta_min)));
        }
        if !(0.0..=1.0).contains(&self.res_alpha) {
            return Err(Error::Config(format!("res_alpha {} outside [0, 1]", self.res_alpha)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerParams {
    pub w: ParamId,
    /// `2d x 1` projection of `[H(0)_i ‖ H(l)_i]`.
    pub beta_w: ParamId,
    pub beta_b: ParamId,
    pub alpha_a: ParamId,
    pub alpha_b: ParamId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StackParams {
    /// Input projection, feature width to hidden width.
    pub input: ParamId,
    pub layers: Vec<LayerParams>,
}

impl StackParams {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        feature_width: usize,
        cfg: &StackConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let d = cfg.hidden;
        let input = store.insert(format!("{prefix}.input"), Matrix::glorot(feature_width, d, rng))?;
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let p = format!("{prefix}.layer{l}");
            layers.push(LayerParams {
                w: store.insert(format!("{p}.w"), Matrix::glorot(d, d, rng))?,
                beta_w: store.insert(format!("{p}.beta_w"), Matrix::glorot(2 * d, 1, rng))?,
                beta_b: store.insert(format!("{p}.beta_b"), Matrix::zeros(1, 1))?,
                alpha_a: store.insert(format!("{p}.alpha_a"), Matrix::zeros(1, 1))?,
                alpha_b: store.insert(format!("{p}.alpha_b"), Matrix::zeros(1, 1))?,
            });
        }
        Ok(Self { input, layers })
    }
}

// ---------------------------------------------------------------------------
// Tape building blocks
// ---------------------------------------------------------------------------

pub fn normalize_adjacency_var(tape: &mut Tape, a: Var) -> Result<Var> {
    if tape.value(a).data().iter().any(|&v| v < 0.0) {
        return Err(Error::Domain("adjacency has negative entries".into()));
    }
    let a_tilde = tape.add_identity(a)?;
    let degree = tape.sum_cols(a_tilde);
    let inv_sqrt = tape.powf(degree, -0.5);
    let inv_sqrt_t = tape.transpose(inv_sqrt);
    let outer = tape.matmul(inv_sqrt, inv_sqrt_t)?;
    tape.mul(a_tilde, outer)
}

/// Row-wise cosine similarity averaged over rows, as a 1 x 1 var.
pub fn mean_row_cosine_var(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let ab = tape.mul(a, b)?;
    let dot = tape.sum_cols(ab);
    let aa = tape.mul(a, a)?;
    let bb = tape.mul(b, b)?;
    let na = tape.sum_cols(aa);
    let nb = tape.sum_cols(bb);
    let na = tape.affine(na, 1.0, COSINE_EPS);
    let nb = tape.affine(nb, 1.0, COSINE_EPS);
    let prod = tape.mul(na, nb)?;
    let denom = tape.sqrt(prod)?;
    let cos = tape.div(dot, denom)?;
    Ok(tape.mean_all(cos))
}

pub struct AirVars {
    pub h_tilde: Var,
    /// `N x 1` gate values.
    pub beta: Var,
}

#[allow(clippy::too_many_arguments)]
pub fn adaptive_initial_residual_var(
    tape: &mut Tape,
    h_l: Var,
    h0: Var,
    a_norm: Var,
    beta_w: Var,
    beta_b: Var,
    beta_min: f64,
    forced: Option<f64>,
) -> Result<AirVars> {
    if tape.shape(h_l) != tape.shape(h0) {
        return Err(Error::dim("adaptive_initial_residual", tape.shape(h_l), tape.shape(h0)));
    }
    let n = tape.shape(h_l).0;
    let beta = match forced {
        Some(b) => tape.constant(Matrix::filled(n, 1, b.clamp(beta_min, 1.0))),
        None => {
            let joined = tape.concat_cols(h0, h_l)?;
            let logits = tape.matmul(joined, beta_w)?;
            let logits = tape.add_row(logits, beta_b)?;
            let gate = tape.sigmoid(logits);
            tape.clamp(gate, beta_min, 1.0)
        }
    };
    let propagated = tape.matmul(a_norm, h_l)?;
    let keep = tape.one_minus(beta);
    let left = tape.mul_col(propagated, keep)?;
    let right = tape.mul_col(h0, beta)?;
    let h_tilde = tape.add(left, right)?;
    Ok(AirVars { h_tilde, beta })
}

pub struct DdrVars {
    pub h_next: Var,
    /// 1 x 1 gate value.
    pub alpha: Var,
}

#[allow(clippy::too_many_arguments)]
pub fn dynamic_developmental_var(
    tape: &mut Tape,
    h_tilde: Var,
    h_tilde_prev: Var,
    w: Var,
    alpha_a: Var,
    alpha_b: Var,
    a_norm: Var,
    forced: Option<f64>,
) -> Result<DdrVars> {
    if tape.shape(h_tilde) != tape.shape(h_tilde_prev) {
        return Err(Error::dim("dynamic_developmental_layer", tape.shape(h_tilde), tape.shape(h_tilde_prev)));
    }
    let alpha = match forced {
        Some(a) => tape.constant(Matrix::scalar(a)),
        None => {
            let c = mean_row_cosine_var(tape, h_tilde, h_tilde_prev)?;
            let bc = tape.mul(alpha_b, c)?;
            let z = tape.add(alpha_a, bc)?;
            tape.sigmoid(z)
        }
    };
    let propagated = tape.matmul(a_norm, h_tilde)?;
    let transformed = tape.matmul(propagated, w)?;
    let keep = tape.one_minus(alpha);
    let left = tape.mul_scalar(transformed, keep)?;
    let right = tape.mul_scalar(h_tilde_prev, alpha)?;
    let pre = tape.add(left, right)?;
    Ok(DdrVars {
        h_next: tape.relu(pre),
        alpha,
    })
}

pub fn gcn_layer_var(tape: &mut Tape, h: Var, a_norm: Var, w: Var) -> Result<Var> {
    let p = tape.matmul(a_norm, h)?;
    let t = tape.matmul(p, w)?;
    Ok(tape.relu(t))
}

pub fn res_gcn_layer_var(tape: &mut Tape, h_l: Var, h_prev: Var, a_norm: Var, w: Var, alpha: f64) -> Result<Var> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Domain(format!("alpha {alpha} outside [0, 1]")));
    }
    let p = tape.matmul(a_norm, h_l)?;
    let t = tape.matmul(p, w)?;
    let left = tape.scale(t, 1.0 - alpha);
    let right = tape.scale(h_prev, alpha);
    let pre = tape.add(left, right)?;
    Ok(tape.relu(pre))
}

// ---------------------------------------------------------------------------
// Plain-value wrappers
// ---------------------------------------------------------------------------

pub fn normalize_adjacency(a: &Matrix) -> Result<Matrix> {
    if a.rows() != a.cols() {
        return Err(Error::dim("normalize_adjacency", a.shape(), a.shape()));
    }
    let mut tape = Tape::new();
    let av = tape.constant(a.clone());
    let out = normalize_adjacency_var(&mut tape, av)?;
    Ok(tape.value(out).clone())
}

pub fn gcn_layer(h: &Matrix, a_norm: &Matrix, w: &Matrix) -> Result<Matrix> {
    let mut tape = Tape::new();
    let (h, a, w) = (tape.constant(h.clone()), tape.constant(a_norm.clone()), tape.constant(w.clone()));
    let out = gcn_layer_var(&mut tape, h, a, w)?;
    Ok(tape.value(out).clone())
}

pub fn res_gcn_layer(h_l: &Matrix, h_prev: &Matrix, a_norm: &Matrix, w: &Matrix, alpha: f64) -> Result<Matrix> {
    let mut tape = Tape::new();
    let hl = tape.constant(h_l.clone());
    let hp = tape.constant(h_prev.clone());
    let a = tape.constant(a_norm.clone());
    let w = tape.constant(w.clone());
    let out = res_gcn_layer_var(&mut tape, hl, hp, a, w, alpha)?;
    Ok(tape.value(out).clone())
}

/// Gate parameters for the adaptive initial residual.
#[derive(Clone, Debug)]
pub struct BetaGate {
    pub weights: Matrix,
    pub bias: f64,
    pub beta_min: f64,
    pub forced: Option<f64>,
}

pub fn adaptive_initial_residual(h_l: &Matrix, h0: &Matrix, gate: &BetaGate, a_norm: &Matrix) -> Result<(Matrix, Vec<f64>)> {
    let mut tape = Tape::new();
    let hl = tape.constant(h_l.clone());
    let h0v = tape.constant(h0.clone());
    let a = tape.constant(a_norm.clone());
    let bw = tape.constant(gate.weights.clone());
    let bb = tape.constant(Matrix::scalar(gate.bias));
    let out = adaptive_initial_residual_var(&mut tape, hl, h0v, a, bw, bb, gate.beta_min, gate.forced)?;
    Ok((tape.value(out.h_tilde).clone(), tape.value(out.beta).data().to_vec()))
}

/// Gate parameters `(a_l, b_l)` for the developmental residual.
#[derive(Clone, Copy, Debug)]
pub struct AlphaGate {
    pub scale: f64,
    pub shift: f64,
    pub forced: Option<f64>,
}

pub fn dynamic_developmental_layer(
    h_tilde: &Matrix,
    h_tilde_prev: &Matrix,
    w: &Matrix,
    gate: &AlphaGate,
    a_norm: &Matrix,
) -> Result<(Matrix, f64)> {
    let mut tape = Tape::new();
    let ht = tape.constant(h_tilde.clone());
    let hp = tape.constant(h_tilde_prev.clone());
    let wv = tape.constant(w.clone());
    let aa = tape.constant(Matrix::scalar(gate.scale));
    let ab = tape.constant(Matrix::scalar(gate.shift));
    let a = tape.constant(a_norm.clone());
    let out = dynamic_developmental_var(&mut tape, ht, hp, wv, aa, ab, a, gate.forced)?;
    Ok((tape.value(out.h_next).clone(), tape.scalar(out.alpha)))
}

// ---------------------------------------------------------------------------
// Full stack
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LayerDiagnostics {
    /// Mean β over heads and nodes; absent for baselines.
    pub beta_mean: Option<f64>,
    pub beta_min: Option<f64>,
    /// Mean α over heads; absent for baselines.
    pub alpha_mean: Option<f64>,
    /// Per-feature variance across nodes, averaged over features and heads.
    pub node_variance: f64,
}

/// Tape handles produced by [`forward_stack_var`].
pub struct StackVars {
    pub head_outputs: Vec<Var>,
    pub fused: Var,
    /// `1 x d` mean over nodes of the fused embeddings.
    pub embedding: Var,
    pub betas: Vec<Vec<Var>>,
    pub alphas: Vec<Vec<Var>>,
    pub layer_outputs: Vec<Vec<Var>>,
}

/// Column-wise variance across rows, averaged over columns.
pub fn node_variance(m: &Matrix) -> f64 {
    let (n, d) = m.shape();
    if n == 0 || d == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for c in 0..d {
        let mean = (0..n).map(|r| m.get(r, c)).sum::<f64>() / n as f64;
        total += (0..n).map(|r| (m.get(r, c) - mean).powi(2)).sum::<f64>() / n as f64;
    }
    total / d as f64
}

/// Mean Euclidean distance over all unordered row pairs.
pub fn mean_pairwise_distance(m: &Matrix) -> f64 {
    let n = m.rows();
    if n < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            total += m
                .row(i)
                .iter()
                .zip(m.row(j))
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
        }
    }
    total / (n * (n - 1) / 2) as f64
}

/// Runs the stack on every adjacency (one per head) with shared weights and
/// fuses by head mean, then node mean.
pub fn forward_stack_var(
    tape: &mut Tape,
    store: &ParamStore,
    params: &StackParams,
    cfg: &StackConfig,
    features: Var,
    adjacencies: &[Var],
) -> Result<StackVars> {
    if adjacencies.is_empty() {
        return Err(Error::Input("forward_stack needs at least one adjacency".into()));
    }
    if params.layers.len() < cfg.layers {
        return Err(Error::Config(format!(
            "stack has {} layers of parameters, config asks for {}",
            params.layers.len(),
            cfg.layers
        )));
    }
    let w_in = tape.param(store, params.input);
    let h0 = tape.matmul(features, w_in)?;
    let layer_vars: Vec<_> = params.layers[..cfg.layers]
        .iter()
        .map(|lp| {
            (
                tape.param(store, lp.w),
                tape.param(store, lp.beta_w),
                tape.param(store, lp.beta_b),
                tape.param(store, lp.alpha_a),
                tape.param(store, lp.alpha_b),
            )
        })
        .collect();

    let mut head_outputs = Vec::with_capacity(adjacencies.len());
    let mut betas = Vec::new();
    let mut alphas = Vec::new();
    let mut layer_outputs = Vec::new();
    for &adj in adjacencies {
        let a_norm = normalize_adjacency_var(tape, adj)?;
        let mut h = h0;
        let mut h_prev = h0;
        let mut h_tilde_prev = h0;
        let mut head_betas = Vec::new();
        let mut head_alphas = Vec::new();
        let mut outs = Vec::with_capacity(cfg.layers);
        for &(w, beta_w, beta_b, alpha_a, alpha_b) in &layer_vars {
            let next = match cfg.variant {
                StackVariant::Vanilla => gcn_layer_var(tape, h, a_norm, w)?,
                StackVariant::ResGcn => res_gcn_layer_var(tape, h, h_prev, a_norm, w, cfg.res_alpha)?,
                StackVariant::Full => {
                    let air = adaptive_initial_residual_var(
                        tape,
                        h,
                        h0,
                        a_norm,
                        beta_w,
                        beta_b,
                        cfg.beta_min,
                        cfg.gate_override.beta,
                    )?;
                    let ddr = dynamic_developmental_var(
                        tape,
                        air.h_tilde,
                        h_tilde_prev,
                        w,
                        alpha_a,
                        alpha_b,
                        a_norm,
                        cfg.gate_override.alpha,
                    )?;
                    head_betas.push(air.beta);
                    head_alphas.push(ddr.alpha);
                    h_tilde_prev = air.h_tilde;
                    ddr.h_next
                }
            };
            h_prev = h;
            h = next;
            outs.push(h);
        }
        head_outputs.push(h);
        betas.push(head_betas);
        alphas.push(head_alphas);
        layer_outputs.push(outs);
    }
    let mut fused = head_outputs[0];
    for &h in &head_outputs[1..] {
        fused = tape.add(fused, h)?;
    }
    let fused = tape.scale(fused, 1.0 / head_outputs.len() as f64);
    let embedding = tape.mean_rows(fused);
    Ok(StackVars {
        head_outputs,
        fused,
        embedding,
        betas,
        alphas,
        layer_outputs,
    })
}

pub fn collect_diagnostics(tape: &Tape, vars: &StackVars) -> Vec<LayerDiagnostics> {
    let layers = vars.layer_outputs.first().map_or(0, Vec::len);
    let heads = vars.layer_outputs.len() as f64;
    (0..layers)
        .map(|l| {
            let node_variance = vars
                .layer_outputs
                .iter()
                .map(|outs| node_variance(tape.value(outs[l])))
                .sum::<f64>()
                / heads;
            let beta_vals: Vec<f64> = vars
                .betas
                .iter()
                .filter_map(|b| b.get(l))
                .flat_map(|&v| tape.value(v).data().to_vec())
                .collect();
            let alpha_vals: Vec<f64> = vars
                .alphas
                .iter()
                .filter_map(|a| a.get(l))
                .map(|&v| tape.scalar(v))
                .collect();
            let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
            LayerDiagnostics {
                beta_mean: mean(&beta_vals),
                beta_min: (!beta_vals.is_empty()).then(|| beta_vals.iter().copied().fold(f64::INFINITY, f64::min)),
                alpha_mean: mean(&alpha_vals),
                node_variance,
            }
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct StackOutput {
    pub node_embeddings: Vec<Matrix>,
    pub fused_nodes: Matrix,
    pub graph_embedding: Vec<f64>,
    pub diagnostics: Vec<LayerDiagnostics>,
}

/// Value-only stack evaluation over raw node features and dense adjacencies.
pub fn forward_stack(
    features: &Matrix,
    adjacencies: &[Matrix],
    store: &ParamStore,
    params: &StackParams,
    cfg: &StackConfig,
) -> Result<StackOutput> {
    let mut tape = Tape::new();
    let x = tape.constant(features.clone());
    let adj: Vec<Var> = adjacencies.iter().map(|a| tape.constant(a.clone())).collect();
    let vars = forward_stack_var(&mut tape, store, params, cfg, x, &adj)?;
    Ok(StackOutput {
        node_embeddings: vars.head_outputs.iter().map(|&v| tape.value(v).clone()).collect(),
        fused_nodes: tape.value(vars.fused).clone(),
        graph_embedding: tape.value(vars.embedding).data().to_vec(),
        diagnostics: collect_diagnostics(&tape, &vars),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn normalize_cases() {
        assert_eq!(normalize_adjacency(&Matrix::zeros(1, 1)).unwrap(), Matrix::scalar(1.0));
        let two = normalize_adjacency(&Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap()).unwrap();
        for v in two.data() {
            assert!((v - 0.5).abs() < 1e-15);
        }
        assert_eq!(normalize_adjacency(&Matrix::zeros(3, 3)).unwrap(), Matrix::identity(3));
        let neg = Matrix::from_rows(&[[0.0, -1.0], [1.0, 0.0]]).unwrap();
        assert!(matches!(normalize_adjacency(&neg), Err(Error::Domain(_))));
    }

    #[test]
    fn gcn_layer_cases() {
        let h = Matrix::from_rows(&[[0.5, 2.0], [1.0, 0.0]]).unwrap();
        let i2 = Matrix::identity(2);
        assert_eq!(gcn_layer(&h, &i2, &i2).unwrap(), h);
        let neg = h.scale(-1.0).map(|v| v - 0.1);
        assert_eq!(gcn_layer(&neg, &i2, &i2).unwrap(), Matrix::zeros(2, 2));
        assert!(gcn_layer(&h, &Matrix::identity(3), &i2).is_err());
    }

    #[test]
    fn gcn_layer_matches_composition() {
        let mut r = rng(3);
        let h = Matrix::uniform(4, 3, -1.0, 1.0, &mut r);
        let a = normalize_adjacency(&Matrix::uniform(4, 4, 0.0, 1.0, &mut r)).unwrap();
        let w = Matrix::uniform(3, 2, -1.0, 1.0, &mut r);
        let out = gcn_layer(&h, &a, &w).unwrap();
        for i in 0..4 {
            for j in 0..2 {
                let mut s = 0.0;
                for k in 0..4 {
                    for m in 0..3 {
                        s += a.get(i, k) * h.get(k, m) * w.get(m, j);
                    }
                }
                assert!((out.get(i, j) - s.max(0.0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn res_gcn_cases() {
        let mut r = rng(4);
        let h = Matrix::uniform(3, 2, -1.0, 1.0, &mut r);
        let hp = Matrix::uniform(3, 2, 0.0, 1.0, &mut r);
        let a = normalize_adjacency(&Matrix::uniform(3, 3, 0.0, 1.0, &mut r)).unwrap();
        let w = Matrix::uniform(2, 2, -1.0, 1.0, &mut r);
        assert_eq!(res_gcn_layer(&h, &hp, &a, &w, 0.0).unwrap(), gcn_layer(&h, &a, &w).unwrap());
        assert_eq!(res_gcn_layer(&h, &hp, &a, &w, 1.0).unwrap(), hp);
        let half = res_gcn_layer(&h, &hp, &a, &w, 0.5).unwrap();
        let prop = a.matmul(&h).unwrap().matmul(&w).unwrap();
        for k in 0..6 {
            let expect = (0.5 * prop.data()[k] + 0.5 * hp.data()[k]).max(0.0);
            assert!((half.data()[k] - expect).abs() < 1e-12);
        }
        assert!(matches!(res_gcn_layer(&h, &hp, &a, &w, 1.5), Err(Error::Domain(_))));
    }

    fn gate(d: usize, forced: Option<f64>, beta_min: f64) -> BetaGate {
        BetaGate {
            weights: Matrix::filled(2 * d, 1, 0.1),
            bias: 0.0,
            beta_min,
            forced,
        }
    }

    #[test]
    fn air_cases() {
        let mut r = rng(5);
        let hl = Matrix::uniform(4, 3, -1.0, 1.0, &mut r);
        let h0 = Matrix::uniform(4, 3, -1.0, 1.0, &mut r);
        let a = normalize_adjacency(&Matrix::uniform(4, 4, 0.0, 1.0, &mut r)).unwrap();
        let (out, betas) = adaptive_initial_residual(&hl, &h0, &gate(3, Some(1.0), 0.05), &a).unwrap();
        assert_eq!(out, h0);
        assert_eq!(betas, vec![1.0; 4]);
        let (out, _) = adaptive_initial_residual(&hl, &h0, &gate(3, Some(0.0), 0.0), &a).unwrap();
        assert!(out.max_abs_diff(&a.matmul(&hl).unwrap()) < 1e-15);
        let (out, _) = adaptive_initial_residual(&hl, &h0, &gate(3, Some(0.3), 0.05), &a).unwrap();
        let prop = a.matmul(&hl).unwrap();
        for i in 0..4 {
            for j in 0..3 {
                let expect = 0.7 * prop.get(i, j) + 0.3 * h0.get(i, j);
                assert!((out.get(i, j) - expect).abs() < 1e-12);
            }
        }
        // floor applies to learned gates
        let mut low = gate(3, None, 0.05);
        low.bias = -50.0;
        let (_, betas) = adaptive_initial_residual(&hl, &h0, &low, &a).unwrap();
        assert!(betas.iter().all(|&b| b == 0.05));
    }

    #[test]
    fn ddr_cases() {
        let mut r = rng(6);
        let ht = Matrix::uniform(4, 3, -1.0, 1.0, &mut r);
        let hp = Matrix::uniform(4, 3, -1.0, 1.0, &mut r);
        let w = Matrix::uniform(3, 3, -1.0, 1.0, &mut r);
        let a = normalize_adjacency(&Matrix::uniform(4, 4, 0.0, 1.0, &mut r)).unwrap();
        let g = AlphaGate {
            scale: 0.3,
            shift: -0.8,
            forced: None,
        };
        let (_, alpha) = dynamic_developmental_layer(&ht, &ht, &w, &g, &a).unwrap();
        assert!((alpha - crate::numerics::sigmoid(0.3 - 0.8)).abs() < 1e-12);
        let g0 = AlphaGate { shift: 0.0, ..g };
        let (_, a1) = dynamic_developmental_layer(&ht, &hp, &w, &g0, &a).unwrap();
        assert_eq!(a1, crate::numerics::sigmoid(0.3));
        let pinned = AlphaGate {
            forced: Some(0.4),
            ..g
        };
        let (out, alpha) = dynamic_developmental_layer(&ht, &hp, &w, &pinned, &a).unwrap();
        assert_eq!(alpha, 0.4);
        let prop = a.matmul(&ht).unwrap().matmul(&w).unwrap();
        for k in 0..12 {
            let expect = (0.6 * prop.data()[k] + 0.4 * hp.data()[k]).max(0.0);
            assert!((out.data()[k] - expect).abs() < 1e-12);
        }
    }

    fn small_setup(seed: u64, n: usize, f: usize, cfg: &StackConfig) -> (ParamStore, StackParams, Matrix, Vec<Matrix>) {
        let mut r = rng(seed);
        let mut store = ParamStore::new();
        let params = StackParams::init(&mut store, "gcn", f, cfg, &mut r).unwrap();
        let x = Matrix::uniform(n, f, -1.0, 1.0, &mut r);
        let adj = vec![
            Matrix::uniform(n, n, 0.0, 1.0, &mut r),
            Matrix::uniform(n, n, 0.0, 1.0, &mut r),
        ];
        (store, params, x, adj)
    }

    #[test]
    fn single_layer_collapse() {
        let cfg = StackConfig {
            layers: 1,
            hidden: 4,
            beta_min: 0.0,
            gate_override: GateOverride {
                beta: Some(0.0),
                alpha: Some(0.0),
            },
            ..StackConfig::default()
        };
        let (store, params, x, adj) = small_setup(8, 5, 3, &cfg);
        let out = forward_stack(&x, &adj[..1], &store, &params, &cfg).unwrap();
        let h0 = x.matmul(store.value(params.input)).unwrap();
        let a = normalize_adjacency(&adj[0]).unwrap();
        let expected = gcn_layer(&a.matmul(&h0).unwrap(), &a, store.value(params.layers[0].w)).unwrap();
        assert!(out.fused_nodes.max_abs_diff(&expected) < 1e-14);
    }

    #[test]
    fn gates_stay_in_range_and_outputs_finite() {
        let cfg = StackConfig {
            layers: 6,
            hidden: 5,
            ..StackConfig::default()
        };
        let (store, params, x, adj) = small_setup(9, 7, 4, &cfg);
        let out = forward_stack(&x, &adj, &store, &params, &cfg).unwrap();
        assert_eq!(out.diagnostics.len(), 6);
        for d in &out.diagnostics {
            assert!(d.beta_min.unwrap() >= cfg.beta_min);
            assert!(d.beta_mean.unwrap() <= 1.0);
            let a = d.alpha_mean.unwrap();
            assert!(a > 0.0 && a < 1.0);
        }
        assert!(out.fused_nodes.is_finite());
        let mean: Vec<f64> = (0..5)
            .map(|c| (0..7).map(|r| out.fused_nodes.get(r, c)).sum::<f64>() / 7.0)
            .collect();
        for (a, b) in mean.iter().zip(&out.graph_embedding) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn stack_gradients_pass_finite_differences() {
        let cfg = StackConfig {
            layers: 3,
            hidden: 4,
            ..StackConfig::default()
        };
        let (mut store, params, x, adj) = small_setup(10, 6, 3, &cfg);
        let probe = Matrix::uniform(4, 1, -1.0, 1.0, &mut rng(77));
        let report = grad_check(
            |s, t| {
                let xv = t.constant(x.clone());
                let av: Vec<Var> = adj.iter().map(|a| t.constant(a.clone())).collect();
                let out = forward_stack_var(t, s, &params, &cfg, xv, &av)?;
                let p = t.constant(probe.clone());
                t.matmul(out.embedding, p)
            },
            &mut store,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.pass, "{:?}", report.worst());
    }

    #[test]
    fn pairwise_distance_helper() {
        let m = Matrix::from_rows(&[[0.0, 0.0], [3.0, 4.0], [0.0, 0.0]]).unwrap();
        assert!((mean_pairwise_distance(&m) - 10.0 / 3.0).abs() < 1e-15);
    }
}
