//! The trainable network: an input projection, `K` multi-head propagation layers and a linear head.
//!
//! Each propagation layer is one explicit-Euler diffusion step whose coupling is computed from
//! learned, row-normalised queries and keys:
//!
//! ```text
//! Z⁰      = ReLU(LayerNorm(X W_Iᵀ + b_I))
//! P_h     = R_h · Ã_h · V_h                   (per head, Ã from Q̃_h, K̃_h)
//! Z^{k+1} = σ(LayerNorm(τ·mean_h(P_h + Â V_h) + (1 − τ)·Z^k [+ τ·Z⁰]))
//! Ŷ       = Z^K W_O + b_O
//! ```
//!
//! The `simple` variant uses `Ã = 1 + Q̃K̃ᵀ` and never materialises it: with `s = K̃ᵀ1` and
//! `M = K̃ᵀV`, the numerator is `1(1ᵀV) + Q̃M` and the row sums are `N + Q̃s`, so a layer costs
//! `O(N·d²)`. The `advanced` variant uses `Ã = sigmoid(Q̃K̃ᵀ)` and costs `O(N²·d)`. The `identity`
//! variant propagates nothing (`P = V`) and serves as the MLP baseline.
//!
//! Attention here acts on projected queries and keys, whereas [`crate::diffusion`] evolves the
//! raw states; only the latter is covered by the energy audits.
//!
//! Parameters are plain named matrices. [`forward`] registers them on a [`Tape`] for training;
//! [`reference_forward`] recomputes the same logits with dense attention matrices and no tape.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::numerics::{row_l2_normalize, Matrix, Tape, Var, LAYER_NORM_EPS, NORM_EPS};
use crate::rng::seeded;

pub type Params = BTreeMap<String, Matrix>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Simple,
    Advanced,
    Identity,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Simple => "simple",
            Variant::Advanced => "advanced",
            Variant::Identity => "identity",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simple" => Ok(Variant::Simple),
            "advanced" => Ok(Variant::Advanced),
            "identity" | "mlp" => Ok(Variant::Identity),
            other => Err(Error::Parameter(format!("unknown variant {other:?} (simple, advanced, identity)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    None,
    Relu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub tau: f64,
    pub use_graph: bool,
    pub use_feature_transform: bool,
    pub use_source: bool,
    pub activation: Activation,
}

impl ModelConfig {
    pub fn new(variant: Variant, input_dim: usize, hidden_dim: usize, output_dim: usize) -> Self {
        Self {
            variant,
            input_dim,
            hidden_dim,
            output_dim,
            layers: 1,
            heads: 1,
            tau: 0.5,
            use_graph: false,
            use_feature_transform: true,
            use_source: false,
            activation: Activation::None,
        }
    }

    /// Default network: 8 layers of width 32, one head, `τ = 0.5`, graph channel on,
    /// no per-layer projections. The `identity` variant drops the graph and becomes a one-hidden-layer MLP.
    pub fn preset(variant: Variant, input_dim: usize, output_dim: usize) -> Self {
        Self {
            layers: 8,
            use_graph: variant != Variant::Identity,
            use_feature_transform: false,
            ..Self::new(variant, input_dim, 32, output_dim)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("input_dim", self.input_dim),
            ("hidden_dim", self.hidden_dim),
            ("output_dim", self.output_dim),
            ("layers", self.layers),
            ("heads", self.heads),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Parameter(format!("{name} must be at least 1")));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Parameter(format!("tau = {} outside [0, 1]", self.tau)));
        }
        Ok(())
    }

    fn projections(&self) -> &'static [&'static str] {
        match (self.use_feature_transform, self.variant) {
            (false, _) => &[],
            (true, Variant::Identity) => &["value"],
            (true, _) => &["query", "key", "value"],
        }
    }
}

fn head_param(layer: usize, head: usize, role: &str) -> String {
    format!("layer{layer}.head{head}.{role}")
}

/// Name and shape of every parameter the configuration owns.
pub fn param_shapes(cfg: &ModelConfig) -> Result<BTreeMap<String, (usize, usize)>> {
    cfg.validate()?;
    let d = cfg.hidden_dim;
    let mut shapes = BTreeMap::new();
    shapes.insert("input.weight".to_string(), (d, cfg.input_dim));
    shapes.insert("input.bias".to_string(), (1, d));
    for layer in 0..cfg.layers {
        for head in 0..cfg.heads {
            for role in cfg.projections() {
                shapes.insert(head_param(layer, head, role), (d, d));
            }
        }
    }
    shapes.insert("output.weight".to_string(), (d, cfg.output_dim));
    shapes.insert("output.bias".to_string(), (1, cfg.output_dim));
    Ok(shapes)
}

pub fn count_params(cfg: &ModelConfig) -> Result<usize> {
    Ok(param_shapes(cfg)?.values().map(|(r, c)| r * c).sum())
}

/// Glorot-uniform weights, zero biases, drawn in parameter-name order.
pub fn init_model(cfg: &ModelConfig, seed: u64) -> Result<Params> {
    let mut rng = seeded(seed, 0x1417);
    let mut params = Params::new();
    for (name, (rows, cols)) in param_shapes(cfg)? {
        let value = if name.ends_with(".bias") {
            Matrix::zeros(rows, cols)
        } else {
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-bound..bound))
        };
        params.insert(name, value);
    }
    Ok(params)
}

/// Every expected parameter present with its exact shape, and nothing else.
pub fn validate_params(cfg: &ModelConfig, params: &Params) -> Result<()> {
    let shapes = param_shapes(cfg)?;
    for (name, &shape) in &shapes {
        let value = params
            .get(name)
            .ok_or_else(|| Error::Contract(format!("missing parameter {name}")))?;
        if value.shape() != shape {
            return Err(Error::Contract(format!(
                "parameter {name} has shape {:?}, config needs {shape:?}",
                value.shape()
            )));
        }
    }
    if let Some(extra) = params.keys().find(|k| !shapes.contains_key(*k)) {
        return Err(Error::Contract(format!("unexpected parameter {extra}")));
    }
    Ok(())
}

fn check_inputs<'g>(cfg: &ModelConfig, x: &Matrix, g: Option<&'g Graph>) -> Result<Option<&'g Graph>> {
    cfg.validate()?;
    if x.cols() != cfg.input_dim {
        return Err(Error::dim("model input", x.shape(), (x.rows(), cfg.input_dim)));
    }
    if x.rows() == 0 {
        return Err(Error::Contract("model input has no rows".into()));
    }
    if !cfg.use_graph {
        return Ok(None);
    }
    let g = g.ok_or_else(|| Error::Contract("use_graph is set but no graph was given".into()))?;
    if g.n() != x.rows() {
        return Err(Error::dim("model graph", (g.n(), g.n()), x.shape()));
    }
    Ok(Some(g))
}

/// Records the network on `tape` and returns the `N × C` logits.
pub fn forward(tape: &mut Tape, params: &Params, x: &Matrix, g: Option<&Graph>, cfg: &ModelConfig) -> Result<Var> {
    Ok(forward_layers(tape, params, x, g, cfg)?.logits)
}

/// Tape handles of the logits and of every hidden state `Z⁰, …, Z^K`.
#[derive(Debug, Clone)]
pub struct ForwardVars {
    pub logits: Var,
    pub hidden: Vec<Var>,
}

pub fn forward_layers(tape: &mut Tape, params: &Params, x: &Matrix, g: Option<&Graph>, cfg: &ModelConfig) -> Result<ForwardVars> {
    let g = check_inputs(cfg, x, g)?;
    validate_params(cfg, params)?;
    let n = x.rows();
    let mut p = |name: &str| tape.param(name, params[name].clone());
    let w_in = p("input.weight");
    let b_in = p("input.bias");
    let w_out = p("output.weight");
    let b_out = p("output.bias");

    let x = tape.constant(x.clone());
    let w_in_t = tape.transpose(w_in);
    let projected = tape.matmul(x, w_in_t)?;
    let bias = tape.broadcast_row(b_in, n)?;
    let pre = tape.add(projected, bias)?;
    let normed = tape.layer_norm(pre);
    let z0 = tape.relu(normed);

    let adjacency = g.map(|g| Arc::new(g.sym_normalized_csr()));
    let rows_const = tape.constant(Matrix::filled(n, 1, n as f64));
    let mut z = z0;
    let mut hidden = vec![z0];
    for layer in 0..cfg.layers {
        let mut heads = Vec::with_capacity(cfg.heads);
        for head in 0..cfg.heads {
            let mut project = |role: &str| -> Result<Var> {
                if cfg.projections().contains(&role) {
                    let w = tape.param(&head_param(layer, head, role), params[&head_param(layer, head, role)].clone());
                    tape.matmul(z, w)
                } else {
                    Ok(z)
                }
            };
            let value = project("value")?;
            let propagated = match cfg.variant {
                Variant::Identity => value,
                Variant::Simple => {
                    let q = project("query")?;
                    let k = project("key")?;
                    let q = tape.row_l2_normalize(q);
                    let k = tape.row_l2_normalize(k);
                    let k_t = tape.transpose(k);
                    let key_sum = tape.row_sum(k_t);
                    let q_key_sum = tape.matmul(q, key_sum)?;
                    let denom = tape.add(q_key_sum, rows_const)?;
                    let inv = tape.recip(denom)?;
                    let v_t = tape.transpose(value);
                    let v_sum = tape.row_sum(v_t);
                    let v_sum = tape.transpose(v_sum);
                    let global = tape.broadcast_row(v_sum, n)?;
                    let kv = tape.matmul(k_t, value)?;
                    let local = tape.matmul(q, kv)?;
                    let numer = tape.add(global, local)?;
                    tape.diag_scale_rows(numer, inv)?
                }
                Variant::Advanced => {
                    let q = project("query")?;
                    let k = project("key")?;
                    let q = tape.row_l2_normalize(q);
                    let k = tape.row_l2_normalize(k);
                    let k_t = tape.transpose(k);
                    let logits = tape.matmul(q, k_t)?;
                    let scores = tape.sigmoid(logits);
                    let sums = tape.row_sum(scores);
                    let inv = tape.recip(sums)?;
                    let mixed = tape.matmul(scores, value)?;
                    tape.diag_scale_rows(mixed, inv)?
                }
            };
            let propagated = match &adjacency {
                Some(a) => {
                    let graph_part = tape.sparse_matmul(Arc::clone(a), value)?;
                    tape.add(propagated, graph_part)?
                }
                None => propagated,
            };
            heads.push(propagated);
        }
        let averaged = if heads.len() == 1 { heads[0] } else { tape.mean(&heads)? };
        let moved = tape.scale(averaged, cfg.tau);
        let kept = tape.scale(z, 1.0 - cfg.tau);
        let mut blended = tape.add(moved, kept)?;
        if cfg.use_source {
            let source = tape.scale(z0, cfg.tau);
            blended = tape.add(blended, source)?;
        }
        let normed = tape.layer_norm(blended);
        z = match cfg.activation {
            Activation::None => normed,
            Activation::Relu => tape.relu(normed),
        };
        hidden.push(z);
    }
    let out = tape.matmul(z, w_out)?;
    let bias = tape.broadcast_row(b_out, n)?;
    Ok(ForwardVars { logits: tape.add(out, bias)?, hidden })
}

/// Logits without keeping the tape.
pub fn predict(params: &Params, x: &Matrix, g: Option<&Graph>, cfg: &ModelConfig) -> Result<Matrix> {
    let mut tape = Tape::new();
    let out = forward(&mut tape, params, x, g, cfg)?;
    Ok(tape.value(out).clone())
}

/// Intermediate results of [`reference_forward`].
#[derive(Debug, Clone)]
pub struct ReferencePass {
    /// `Z⁰, …, Z^K`.
    pub hidden: Vec<Matrix>,
    /// `attention[k][h]`: the row-normalised `N × N` attention of head `h` in layer `k`
    /// (the identity for the `identity` variant).
    pub attention: Vec<Vec<Matrix>>,
    pub logits: Matrix,
}

fn dense_layer_norm(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for i in 0..m.rows() {
        let row = m.row(i);
        let mean = row.iter().sum::<f64>() / row.len() as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / row.len() as f64;
        let sd = (var + LAYER_NORM_EPS).sqrt();
        out.row_mut(i).iter_mut().for_each(|v| *v = (*v - mean) / sd);
    }
    out
}

/// Same network as [`forward`], materialising every attention matrix densely.
pub fn reference_forward(params: &Params, x: &Matrix, g: Option<&Graph>, cfg: &ModelConfig) -> Result<ReferencePass> {
    let g = check_inputs(cfg, x, g)?;
    validate_params(cfg, params)?;
    let n = x.rows();
    let bias_rows = |b: &Matrix| Matrix::from_fn(n, b.cols(), |_, j| b[(0, j)]);
    let pre = x.matmul(&params["input.weight"].transpose())?.add(&bias_rows(&params["input.bias"]))?;
    let z0 = dense_layer_norm(&pre).map(|v| v.max(0.0));
    let adjacency = g.map(|g| g.sym_normalized_csr().to_dense());

    let mut hidden = vec![z0.clone()];
    let mut attention = Vec::with_capacity(cfg.layers);
    for layer in 0..cfg.layers {
        let z = hidden.last().expect("Z⁰ pushed").clone();
        let mut sum = Matrix::zeros(n, cfg.hidden_dim);
        let mut layer_attention = Vec::with_capacity(cfg.heads);
        for head in 0..cfg.heads {
            let project = |role: &str| -> Result<Matrix> {
                if cfg.projections().contains(&role) {
                    z.matmul(&params[&head_param(layer, head, role)])
                } else {
                    Ok(z.clone())
                }
            };
            let value = project("value")?;
            let scores = match cfg.variant {
                Variant::Identity => Matrix::identity(n),
                Variant::Simple | Variant::Advanced => {
                    let q = row_l2_normalize(&project("query")?, NORM_EPS)?;
                    let k = row_l2_normalize(&project("key")?, NORM_EPS)?;
                    let dots = q.matmul(&k.transpose())?;
                    if cfg.variant == Variant::Simple {
                        dots.map(|v| 1.0 + v)
                    } else {
                        dots.map(|v| 1.0 / (1.0 + (-v).exp()))
                    }
                }
            };
            let sums = scores.row_sums();
            let normalized = Matrix::from_fn(n, n, |i, j| scores[(i, j)] / sums[i]);
            let mut propagated = normalized.matmul(&value)?;
            if let Some(a) = &adjacency {
                propagated = propagated.add(&a.matmul(&value)?)?;
            }
            sum = sum.add(&propagated)?;
            layer_attention.push(normalized);
        }
        let averaged = sum.scale(1.0 / cfg.heads as f64);
        let mut blended = averaged.scale(cfg.tau).axpy(1.0 - cfg.tau, &z)?;
        if cfg.use_source {
            blended = blended.axpy(cfg.tau, &z0)?;
        }
        let next = dense_layer_norm(&blended);
        hidden.push(match cfg.activation {
            Activation::None => next,
            Activation::Relu => next.map(|v| v.max(0.0)),
        });
        attention.push(layer_attention);
    }
    let last = hidden.last().expect("at least Z⁰");
    let logits = last.matmul(&params["output.weight"])?.add(&bias_rows(&params["output.bias"]))?;
    Ok(ReferencePass { hidden, attention, logits })
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub seed: u64,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: Params,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn new(config: ModelConfig, params: Params, meta: CheckpointMeta) -> Result<Self> {
        validate_params(&config, &params)?;
        Ok(Self { config, params, meta })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Self = serde_json::from_str(text)?;
        validate_params(&ckpt.config, &ckpt.params)?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::erdos_renyi;
    use crate::numerics::finite_diff_grad;
    use crate::rng::gaussian_matrix;
    use proptest::prelude::*;

    fn config(variant: Variant) -> ModelConfig {
        ModelConfig { layers: 2, heads: 2, ..ModelConfig::new(variant, 5, 8, 3) }
    }

    fn features(n: usize, d: usize, seed: u64) -> Matrix {
        gaussian_matrix(&mut seeded(seed, 7), n, d)
    }

    #[test]
    fn counts_and_shapes() {
        let cfg = ModelConfig::new(Variant::Simple, 3, 4, 2);
        assert_eq!(count_params(&cfg).unwrap(), 74);
        let doubled = ModelConfig { heads: 2, ..cfg.clone() };
        assert_eq!(count_params(&doubled).unwrap() - 74, 48);
        assert!(count_params(&ModelConfig { layers: 0, ..cfg.clone() }).is_err());
        let params = init_model(&cfg, 1).unwrap();
        assert_eq!(params["input.weight"].shape(), (4, 3));
        assert_eq!(params["input.bias"].shape(), (1, 4));
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let cfg = config(Variant::Advanced);
        let a = init_model(&cfg, 9).unwrap();
        assert_eq!(a, init_model(&cfg, 9).unwrap());
        assert_ne!(a, init_model(&cfg, 10).unwrap());
        for (name, m) in &a {
            if name.ends_with(".bias") {
                assert_eq!(m.max_abs(), 0.0);
            } else {
                assert!(m.max_abs() <= (6.0 / (m.rows() + m.cols()) as f64).sqrt());
            }
        }
    }

    #[test]
    fn tape_forward_matches_dense_reference() {
        for variant in [Variant::Simple, Variant::Advanced, Variant::Identity] {
            for (use_graph, use_source) in [(false, false), (true, true)] {
                let cfg = ModelConfig { use_graph, use_source, activation: Activation::Relu, ..config(variant) };
                let params = init_model(&cfg, 3).unwrap();
                let x = features(24, 5, 3);
                let g = erdos_renyi(24, 0.2, 3).unwrap();
                let fast = predict(&params, &x, Some(&g), &cfg).unwrap();
                let dense = reference_forward(&params, &x, Some(&g), &cfg).unwrap();
                assert!(fast.max_abs_diff(&dense.logits).unwrap() <= 1e-9, "{variant} {use_graph}");
            }
        }
    }

    #[test]
    fn duplicate_heads_match_one_head() {
        let one = ModelConfig { heads: 1, ..config(Variant::Simple) };
        let two = ModelConfig { heads: 2, ..config(Variant::Simple) };
        let mut params = init_model(&two, 4).unwrap();
        for layer in 0..2 {
            for role in ["query", "key", "value"] {
                let copy = params[&head_param(layer, 0, role)].clone();
                params.insert(head_param(layer, 1, role), copy);
            }
        }
        let single: Params = params.iter().filter(|(k, _)| !k.contains("head1")).map(|(k, v)| (k.clone(), v.clone())).collect();
        let x = features(10, 5, 4);
        let diff = predict(&params, &x, None, &two).unwrap().max_abs_diff(&predict(&single, &x, None, &one).unwrap()).unwrap();
        assert!(diff <= 1e-12);
    }

    #[test]
    fn zero_step_skips_mixing() {
        let cfg = ModelConfig { tau: 0.0, ..ModelConfig::new(Variant::Advanced, 5, 8, 3) };
        let params = init_model(&cfg, 5).unwrap();
        let x = features(7, 5, 5);
        let pass = reference_forward(&params, &x, None, &cfg).unwrap();
        let expected = dense_layer_norm(&pass.hidden[0]);
        assert!(pass.hidden[1].max_abs_diff(&expected).unwrap() <= 1e-12);
        let logits = predict(&params, &x, None, &cfg).unwrap();
        assert!(logits.max_abs_diff(&pass.logits).unwrap() <= 1e-12);
    }

    #[test]
    fn attention_rows_are_stochastic() {
        let cfg = config(Variant::Advanced);
        let pass = reference_forward(&init_model(&cfg, 6).unwrap(), &features(12, 5, 6), None, &cfg).unwrap();
        for a in pass.attention.iter().flatten() {
            assert!(a.row_sums().iter().all(|s| (s - 1.0).abs() <= 1e-12));
        }
    }

    #[test]
    fn input_contracts() {
        let cfg = ModelConfig { use_graph: true, ..config(Variant::Simple) };
        let params = init_model(&cfg, 1).unwrap();
        assert!(predict(&params, &features(4, 5, 1), None, &cfg).is_err());
        assert!(predict(&params, &features(4, 3, 1), Some(&Graph::empty(4)), &cfg).is_err());
        assert!(predict(&params, &features(4, 5, 1), Some(&Graph::empty(5)), &cfg).is_err());
        let mut broken = params.clone();
        broken.insert("output.bias".into(), Matrix::zeros(1, 4));
        assert!(predict(&broken, &features(4, 5, 1), Some(&Graph::empty(4)), &cfg).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        for variant in [Variant::Simple, Variant::Advanced] {
            let cfg = ModelConfig { use_graph: true, use_source: true, ..config(variant) };
            let params = init_model(&cfg, 8).unwrap();
            let x = features(10, 5, 8);
            let g = erdos_renyi(10, 0.3, 8).unwrap();
            let target = features(10, 3, 9);
            let loss_of = |p: &Params| {
                let out = predict(p, &x, Some(&g), &cfg).unwrap();
                out.sub(&target).unwrap().frobenius_sq()
            };
            let mut tape = Tape::new();
            let out = forward(&mut tape, &params, &x, Some(&g), &cfg).unwrap();
            let t = tape.constant(target.clone());
            let diff = tape.sub(out, t).unwrap();
            let sq = tape.hadamard(diff, diff).unwrap();
            let loss = tape.sum(sq);
            let grads = tape.backward(loss).unwrap();
            for name in ["input.weight", "layer1.head1.query", "layer0.head0.key", "output.bias"] {
                let fd = finite_diff_grad(
                    |m| {
                        let mut p = params.clone();
                        p.insert(name.to_string(), m.clone());
                        loss_of(&p)
                    },
                    &params[name],
                    1e-6,
                )
                .unwrap();
                let exact = grads.param(name).unwrap();
                let rel = fd.sub(exact).unwrap().frobenius_sq().sqrt() / exact.frobenius_sq().sqrt().max(1e-12);
                assert!(rel <= 1e-5, "{variant} {name}: {rel}");
            }
        }
    }

    #[test]
    fn checkpoint_round_trip_and_shape_check() {
        let cfg = config(Variant::Simple);
        let params = init_model(&cfg, 2).unwrap();
        let ckpt = Checkpoint::new(cfg.clone(), params, CheckpointMeta { epoch: 3, seed: 2, ..Default::default() }).unwrap();
        let back = Checkpoint::from_json(&ckpt.to_json().unwrap()).unwrap();
        assert_eq!(back, ckpt);
        let mut wrong = ckpt.clone();
        wrong.config.hidden_dim = 6;
        assert!(Checkpoint::from_json(&serde_json::to_string(&wrong).unwrap()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn permutation_equivariant_without_graph(seed in 0u64..1000, advanced in any::<bool>()) {
            let variant = if advanced { Variant::Advanced } else { Variant::Simple };
            let cfg = config(variant);
            let params = init_model(&cfg, seed).unwrap();
            let x = features(9, 5, seed);
            let mut order: Vec<usize> = (0..9).collect();
            crate::rng::shuffle(&mut seeded(seed, 1), &mut order);
            let base = predict(&params, &x, None, &cfg).unwrap();
            let permuted = predict(&params, &x.select_rows(&order), None, &cfg).unwrap();
            let expected = base.select_rows(&order);
            prop_assert!(permuted.max_abs_diff(&expected).unwrap() <= 1e-10);
        }
    }
}
