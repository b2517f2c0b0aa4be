//! Reverse-mode differentiation over whole-matrix primitives.
//!
//! A [`Tape`] records every primitive applied to its [`Var`] handles in
//! execution order, so the node list is topologically sorted by construction.
//! [`Tape::backward`] walks it once in reverse and accumulates adjoints.
//!
//! ```
//! use difformer::numerics::{Matrix, Tape};
//!
//! let mut tape = Tape::new();
//! let w = tape.param("w", Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap());
//! let sq = tape.hadamard(w, w).unwrap();
//! let loss = tape.sum(sq);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.param("w").unwrap().data(), &[2.0, 4.0]);
//! ```

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numerics::{Csr, Matrix};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub enum Primitive {
    MatMul,
    Add,
    Sub,
    Scale(f64),
    Hadamard,
    Sigmoid,
    Relu,
    RowL2Normalize { eps: f64 },
    /// Per-row standardisation without affine parameters.
    LayerNorm { eps: f64 },
    RowSoftmax,
    /// Arithmetic mean of any number of same-shape inputs.
    Mean,
    Transpose,
    /// `diag(v)·m` for inputs `(m, v)` with `v` an N×1 column.
    DiagScaleRows,
    RowSum,
    /// Repeats a 1×d row `rows` times.
    BroadcastRow { rows: usize },
    Recip,
    /// Fixed sparse left factor applied to a dense input.
    SparseMatMul(Arc<Csr>),
    Sum,
    /// Mean negative log-softmax of `labels[k]` at row `rows[k]`.
    CrossEntropy { rows: Arc<Vec<usize>>, labels: Arc<Vec<usize>> },
    /// Mean squared error against `target` over the selected rows.
    Mse { rows: Arc<Vec<usize>>, target: Arc<Matrix> },
}

#[derive(Debug)]
enum Origin {
    Constant,
    Param,
    Op(Primitive, Vec<Var>),
}

#[derive(Debug)]
struct Node {
    origin: Origin,
    value: Matrix,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    adjoints: Vec<Option<Matrix>>,
    params: BTreeMap<String, Matrix>,
}

impl Gradients {
    pub fn param(&self, name: &str) -> Option<&Matrix> {
        self.params.get(name)
    }

    pub fn params(&self) -> &BTreeMap<String, Matrix> {
        &self.params
    }

    pub fn into_params(self) -> BTreeMap<String, Matrix> {
        self.params
    }

    /// Adjoint of any recorded node; `None` if the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&Matrix> {
        self.adjoints.get(v.0).and_then(Option::as_ref)
    }
}

fn expect_same(op: &'static str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(op, a.shape(), b.shape()));
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn layer_norm_row(x: &[f64], eps: f64) -> (Vec<f64>, f64) {
    let d = x.len() as f64;
    let mean = x.iter().sum::<f64>() / d;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
    let sd = (var + eps).sqrt();
    (x.iter().map(|v| (v - mean) / sd).collect(), sd)
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn check_rows(op: &'static str, rows: &[usize], n: usize) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::Contract(format!("{op}: empty row selection")));
    }
    if let Some(r) = rows.iter().find(|&&r| r >= n) {
        return Err(Error::Contract(format!("{op}: row {r} outside {n} rows")));
    }
    Ok(())
}

fn forward(prim: &Primitive, x: &[&Matrix]) -> Result<Matrix> {
    use Primitive::*;
    let arity = match prim {
        MatMul | Add | Sub | Hadamard | DiagScaleRows => Some(2),
        Mean => None,
        _ => Some(1),
    };
    if let Some(k) = arity {
        if x.len() != k {
            return Err(Error::Contract(format!("{prim:?} takes {k} inputs, got {}", x.len())));
        }
    }
    Ok(match prim {
        MatMul => x[0].matmul(x[1])?,
        Add => x[0].add(x[1])?,
        Sub => x[0].sub(x[1])?,
        Scale(c) => x[0].scale(*c),
        Hadamard => x[0].hadamard(x[1])?,
        Sigmoid => x[0].map(sigmoid),
        Relu => x[0].map(|v| v.max(0.0)),
        RowL2Normalize { eps } => crate::numerics::row_l2_normalize(x[0], *eps)?,
        LayerNorm { eps } => {
            let mut out = x[0].clone();
            for i in 0..out.rows() {
                let (y, _) = layer_norm_row(x[0].row(i), *eps);
                out.row_mut(i).copy_from_slice(&y);
            }
            out
        }
        RowSoftmax => {
            let mut out = x[0].clone();
            for i in 0..out.rows() {
                let lse = log_sum_exp(x[0].row(i));
                out.row_mut(i).iter_mut().for_each(|v| *v = (*v - lse).exp());
            }
            out
        }
        Mean => {
            let first = x.first().ok_or_else(|| Error::Contract("mean of empty list".into()))?;
            let mut acc = (*first).clone();
            for m in &x[1..] {
                acc = acc.add(m)?;
            }
            acc.scale(1.0 / x.len() as f64)
        }
        Transpose => x[0].transpose(),
        DiagScaleRows => {
            if x[1].shape() != (x[0].rows(), 1) {
                return Err(Error::dim("diag_scale_rows", x[0].shape(), x[1].shape()));
            }
            x[0].scale_rows(x[1].data())?
        }
        RowSum => Matrix::column(x[0].row_sums()),
        BroadcastRow { rows } => {
            if x[0].rows() != 1 {
                return Err(Error::dim("broadcast_row", x[0].shape(), (1, x[0].cols())));
            }
            Matrix::from_fn(*rows, x[0].cols(), |_, j| x[0][(0, j)])
        }
        Recip => {
            if let Some(v) = x[0].data().iter().find(|v| **v == 0.0) {
                return Err(Error::Domain { what: "reciprocal input", value: *v, domain: "nonzero" });
            }
            x[0].map(|v| 1.0 / v)
        }
        SparseMatMul(a) => a.matmul_dense(x[0])?,
        Sum => Matrix::scalar(x[0].sum()),
        CrossEntropy { rows, labels } => {
            check_rows("cross_entropy", rows, x[0].rows())?;
            if rows.len() != labels.len() {
                return Err(Error::Contract("cross_entropy: rows and labels differ in length".into()));
            }
            if let Some(c) = labels.iter().find(|&&c| c >= x[0].cols()) {
                return Err(Error::Contract(format!("label {c} outside {} classes", x[0].cols())));
            }
            let total: f64 = rows
                .iter()
                .zip(labels.iter())
                .map(|(&r, &c)| log_sum_exp(x[0].row(r)) - x[0][(r, c)])
                .sum();
            Matrix::scalar(total / rows.len() as f64)
        }
        Mse { rows, target } => {
            check_rows("mse", rows, x[0].rows())?;
            expect_same("mse", x[0], target)?;
            let total: f64 = rows
                .iter()
                .flat_map(|&r| x[0].row(r).iter().zip(target.row(r)).map(|(a, b)| (a - b) * (a - b)))
                .sum();
            Matrix::scalar(total / (rows.len() * x[0].cols()) as f64)
        }
    })
}

/// Adjoints of every input given the output adjoint `g`.
fn backward_rule(prim: &Primitive, x: &[&Matrix], y: &Matrix, g: &Matrix) -> Vec<Matrix> {
    use Primitive::*;
    match prim {
        MatMul => vec![
            g.matmul(&x[1].transpose()).expect("shapes fixed in forward"),
            x[0].transpose().matmul(g).expect("shapes fixed in forward"),
        ],
        Add => vec![g.clone(), g.clone()],
        Sub => vec![g.clone(), g.scale(-1.0)],
        Scale(c) => vec![g.scale(*c)],
        Hadamard => vec![
            g.hadamard(x[1]).expect("same shape"),
            g.hadamard(x[0]).expect("same shape"),
        ],
        Sigmoid => vec![Matrix::from_fn(g.rows(), g.cols(), |i, j| {
            g[(i, j)] * y[(i, j)] * (1.0 - y[(i, j)])
        })],
        Relu => vec![Matrix::from_fn(g.rows(), g.cols(), |i, j| {
            if x[0][(i, j)] > 0.0 { g[(i, j)] } else { 0.0 }
        })],
        RowL2Normalize { eps } => {
            let mut dx = g.clone();
            for i in 0..g.rows() {
                let norm = x[0].row_norm(i);
                if norm > *eps {
                    let proj = y.row_dot(i, g, i);
                    for j in 0..g.cols() {
                        dx[(i, j)] = (g[(i, j)] - y[(i, j)] * proj) / norm;
                    }
                } else {
                    dx.row_mut(i).iter_mut().for_each(|v| *v /= eps);
                }
            }
            vec![dx]
        }
        LayerNorm { eps } => {
            let mut dx = g.clone();
            let d = g.cols() as f64;
            for i in 0..g.rows() {
                let (_, sd) = layer_norm_row(x[0].row(i), *eps);
                let g_mean = g.row(i).iter().sum::<f64>() / d;
                let gy_mean = y.row_dot(i, g, i) / d;
                for j in 0..g.cols() {
                    dx[(i, j)] = (g[(i, j)] - g_mean - y[(i, j)] * gy_mean) / sd;
                }
            }
            vec![dx]
        }
        RowSoftmax => {
            let mut dx = g.clone();
            for i in 0..g.rows() {
                let gy = y.row_dot(i, g, i);
                for j in 0..g.cols() {
                    dx[(i, j)] = y[(i, j)] * (g[(i, j)] - gy);
                }
            }
            vec![dx]
        }
        Mean => {
            let share = g.scale(1.0 / x.len() as f64);
            vec![share; x.len()]
        }
        Transpose => vec![g.transpose()],
        DiagScaleRows => {
            let dm = g.scale_rows(x[1].data()).expect("shape fixed in forward");
            let dv = Matrix::column((0..g.rows()).map(|i| g.row_dot(i, x[0], i)).collect());
            vec![dm, dv]
        }
        RowSum => vec![Matrix::from_fn(x[0].rows(), x[0].cols(), |i, _| g[(i, 0)])],
        BroadcastRow { .. } => vec![Matrix::from_fn(1, g.cols(), |_, j| {
            (0..g.rows()).map(|i| g[(i, j)]).sum()
        })],
        Recip => vec![Matrix::from_fn(g.rows(), g.cols(), |i, j| {
            -g[(i, j)] * y[(i, j)] * y[(i, j)]
        })],
        SparseMatMul(a) => vec![a.transpose().matmul_dense(g).expect("shape fixed in forward")],
        Sum => vec![Matrix::filled(x[0].rows(), x[0].cols(), g[(0, 0)])],
        CrossEntropy { rows, labels } => {
            let logits = x[0];
            let scale = g[(0, 0)] / rows.len() as f64;
            let mut dx = Matrix::zeros(logits.rows(), logits.cols());
            for (&r, &c) in rows.iter().zip(labels.iter()) {
                let lse = log_sum_exp(logits.row(r));
                for j in 0..logits.cols() {
                    let p = (logits[(r, j)] - lse).exp();
                    dx[(r, j)] += scale * (p - if j == c { 1.0 } else { 0.0 });
                }
            }
            vec![dx]
        }
        Mse { rows, target } => {
            let pred = x[0];
            let scale = 2.0 * g[(0, 0)] / (rows.len() * pred.cols()) as f64;
            let mut dx = Matrix::zeros(pred.rows(), pred.cols());
            for &r in rows.iter() {
                for j in 0..pred.cols() {
                    dx[(r, j)] += scale * (pred[(r, j)] - target[(r, j)]);
                }
            }
            vec![dx]
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(Origin::Constant, value)
    }

    /// Registers a named trainable leaf; registering a name twice returns the first handle.
    pub fn param(&mut self, name: &str, value: Matrix) -> Var {
        if let Some(&v) = self.params.get(name) {
            return v;
        }
        let v = self.push(Origin::Param, value);
        self.params.insert(name.to_string(), v);
        v
    }

    pub fn param_var(&self, name: &str) -> Option<Var> {
        self.params.get(name).copied()
    }

    fn push(&mut self, origin: Origin, value: Matrix) -> Var {
        self.nodes.push(Node { origin, value });
        Var(self.nodes.len() - 1)
    }

    /// Records `prim` applied to `inputs` and returns the handle of its output.
    pub fn apply(&mut self, prim: Primitive, inputs: &[Var]) -> Result<Var> {
        if let Some(v) = inputs.iter().find(|v| v.0 >= self.nodes.len()) {
            return Err(Error::Contract(format!("handle {} not on this tape", v.0)));
        }
        let values: Vec<&Matrix> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
        let value = forward(&prim, &values)?;
        if !value.is_finite() {
            return Err(Error::Contract(format!("{prim:?} produced a non-finite value")));
        }
        Ok(self.push(Origin::Op(prim, inputs.to_vec()), value))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::MatMul, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Sub, &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.apply(Primitive::Scale(c), &[a]).expect("unary op on a valid handle")
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Hadamard, &[a, b])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.apply(Primitive::Sigmoid, &[a]).expect("unary op on a valid handle")
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.apply(Primitive::Relu, &[a]).expect("unary op on a valid handle")
    }

    pub fn row_l2_normalize(&mut self, a: Var) -> Var {
        self.apply(Primitive::RowL2Normalize { eps: crate::numerics::NORM_EPS }, &[a])
            .expect("unary op on a valid handle")
    }

    pub fn layer_norm(&mut self, a: Var) -> Var {
        self.apply(Primitive::LayerNorm { eps: crate::numerics::LAYER_NORM_EPS }, &[a])
            .expect("unary op on a valid handle")
    }

    pub fn row_softmax(&mut self, a: Var) -> Var {
        self.apply(Primitive::RowSoftmax, &[a]).expect("unary op on a valid handle")
    }

    pub fn mean(&mut self, items: &[Var]) -> Result<Var> {
        self.apply(Primitive::Mean, items)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        self.apply(Primitive::Transpose, &[a]).expect("unary op on a valid handle")
    }

    pub fn diag_scale_rows(&mut self, m: Var, v: Var) -> Result<Var> {
        self.apply(Primitive::DiagScaleRows, &[m, v])
    }

    pub fn row_sum(&mut self, a: Var) -> Var {
        self.apply(Primitive::RowSum, &[a]).expect("unary op on a valid handle")
    }

    pub fn broadcast_row(&mut self, a: Var, rows: usize) -> Result<Var> {
        self.apply(Primitive::BroadcastRow { rows }, &[a])
    }

    pub fn recip(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Recip, &[a])
    }

    pub fn sparse_matmul(&mut self, a: Arc<Csr>, x: Var) -> Result<Var> {
        self.apply(Primitive::SparseMatMul(a), &[x])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        self.apply(Primitive::Sum, &[a]).expect("unary op on a valid handle")
    }

    /// Reverse accumulation from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_value = self.value(loss);
        if loss_value.shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a 1x1 loss, got {:?}",
                loss_value.shape()
            )));
        }
        let mut adjoints: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        adjoints[loss.0] = Some(Matrix::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = adjoints[idx].take() else { continue };
            if let Origin::Op(prim, inputs) = &self.nodes[idx].origin {
                let values: Vec<&Matrix> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
                let grads = backward_rule(prim, &values, &self.nodes[idx].value, &g);
                for (input, grad) in inputs.iter().zip(grads) {
                    let slot = &mut adjoints[input.0];
                    *slot = Some(match slot.take() {
                        Some(acc) => acc.add(&grad)?,
                        None => grad,
                    });
                }
            }
            adjoints[idx] = Some(g);
        }
        let mut params = BTreeMap::new();
        for (name, &v) in &self.params {
            let shape = self.value(v).shape();
            let grad = adjoints
                .get(v.0)
                .and_then(Clone::clone)
                .unwrap_or_else(|| Matrix::zeros(shape.0, shape.1));
            params.insert(name.clone(), grad);
        }
        Ok(Gradients { adjoints, params })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_diff_grad;
    use crate::rng::{gaussian_matrix, seeded};

    fn rel_err(a: &Matrix, b: &Matrix) -> f64 {
        let diff = a.sub(b).unwrap().frobenius_sq().sqrt();
        diff / (a.frobenius_sq().sqrt() + b.frobenius_sq().sqrt()).max(1e-8)
    }

    #[test]
    fn eager_values() {
        let mut t = Tape::new();
        let z = t.constant(Matrix::scalar(0.0));
        let s = t.sigmoid(z);
        assert_eq!(t.value(s).data(), &[0.5]);
        let r = t.constant(Matrix::from_rows(&[vec![-1.0, 2.0]]).unwrap());
        let r = t.relu(r);
        assert_eq!(t.value(r).data(), &[0.0, 2.0]);
        let c = t.constant(Matrix::filled(2, 3, 7.0));
        let ln = t.layer_norm(c);
        assert!(t.value(ln).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn linear_and_quadratic_losses() {
        let mut t = Tape::new();
        let w = t.param("w", Matrix::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0]]).unwrap());
        let loss = t.sum(w);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.param("w").unwrap(), &Matrix::filled(2, 2, 1.0));

        let mut t = Tape::new();
        let w = t.param("w", Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap());
        let sq = t.hadamard(w, w).unwrap();
        let loss = t.sum(sq);
        assert_eq!(t.backward(loss).unwrap().param("w").unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::new();
        let w = t.param("w", Matrix::zeros(2, 2));
        assert!(matches!(t.backward(w), Err(Error::Contract(_))));
    }

    #[test]
    fn shape_errors_surface() {
        let mut t = Tape::new();
        let a = t.constant(Matrix::zeros(2, 3));
        let b = t.constant(Matrix::zeros(2, 3));
        assert!(matches!(t.matmul(a, b), Err(Error::Dimension { .. })));
    }

    #[test]
    fn reused_param_accumulates() {
        let mut t = Tape::new();
        let w = t.param("w", Matrix::scalar(3.0));
        let again = t.param("w", Matrix::scalar(100.0));
        assert_eq!(w, again);
        let p = t.hadamard(w, again).unwrap();
        let loss = t.add(p, w).unwrap();
        let g = t.backward(loss).unwrap();
        assert_eq!(g.param("w").unwrap().data(), &[7.0]);
    }

    /// Scalar probe `Σ C ∘ prim(inputs)` differentiated by tape and by central differences.
    fn check_primitive(prim: Primitive, inputs: Vec<Matrix>, seed: u64) {
        let build = |vals: &[Matrix]| -> (Tape, Var, Vec<Var>) {
            let mut t = Tape::new();
            let vars: Vec<Var> = vals
                .iter()
                .enumerate()
                .map(|(k, m)| t.param(&format!("x{k}"), m.clone()))
                .collect();
            let out = t.apply(prim.clone(), &vars).unwrap();
            let shape = t.value(out).shape();
            let weights = gaussian_matrix(&mut seeded(seed, 99), shape.0, shape.1);
            let c = t.constant(weights);
            let prod = t.hadamard(out, c).unwrap();
            let loss = t.sum(prod);
            (t, loss, vars)
        };
        let (tape, loss, _) = build(&inputs);
        let grads = tape.backward(loss).unwrap();
        for k in 0..inputs.len() {
            let fd = finite_diff_grad(
                |m| {
                    let mut vals = inputs.clone();
                    vals[k] = m.clone();
                    let (t, l, _) = build(&vals);
                    t.value(l)[(0, 0)]
                },
                &inputs[k],
                1e-5,
            )
            .unwrap();
            let an = grads.param(&format!("x{k}")).unwrap();
            let err = rel_err(an, &fd);
            assert!(err <= 1e-5, "{prim:?} input {k}: rel err {err}");
        }
    }

    fn positive(m: Matrix) -> Matrix {
        m.map(|v| v.abs() + 0.5)
    }

    #[test]
    fn every_primitive_matches_finite_differences() {
        for seed in 0..5 {
            let mut rng = seeded(seed, 5);
            let mut g = |r, c| gaussian_matrix(&mut rng, r, c);
            let a34 = g(3, 4);
            let b34 = g(3, 4);
            let b42 = g(4, 2);
            let col = g(3, 1);
            let row = g(1, 4);
            let csr = Arc::new(
                Csr::from_triplets(3, 3, vec![(0, 1, 0.5), (1, 0, 0.5), (2, 2, 1.0), (2, 0, -0.3)]).unwrap(),
            );
            check_primitive(Primitive::MatMul, vec![a34.clone(), b42.clone()], seed);
            check_primitive(Primitive::Add, vec![a34.clone(), b34.clone()], seed);
            check_primitive(Primitive::Sub, vec![a34.clone(), b34.clone()], seed);
            check_primitive(Primitive::Scale(-1.7), vec![a34.clone()], seed);
            check_primitive(Primitive::Hadamard, vec![a34.clone(), b34.clone()], seed);
            check_primitive(Primitive::Sigmoid, vec![a34.clone()], seed);
            check_primitive(Primitive::Relu, vec![a34.clone()], seed);
            check_primitive(Primitive::RowL2Normalize { eps: 1e-12 }, vec![a34.clone()], seed);
            check_primitive(Primitive::LayerNorm { eps: 1e-5 }, vec![a34.clone()], seed);
            check_primitive(Primitive::RowSoftmax, vec![a34.clone()], seed);
            check_primitive(Primitive::Mean, vec![a34.clone(), b34.clone(), a34.scale(0.3)], seed);
            check_primitive(Primitive::Transpose, vec![a34.clone()], seed);
            check_primitive(Primitive::DiagScaleRows, vec![a34.clone(), col.clone()], seed);
            check_primitive(Primitive::RowSum, vec![a34.clone()], seed);
            check_primitive(Primitive::BroadcastRow { rows: 5 }, vec![row.clone()], seed);
            check_primitive(Primitive::Recip, vec![positive(a34.clone())], seed);
            check_primitive(Primitive::SparseMatMul(csr), vec![a34.clone()], seed);
            check_primitive(Primitive::Sum, vec![a34.clone()], seed);
            check_primitive(
                Primitive::CrossEntropy { rows: Arc::new(vec![0, 2, 2]), labels: Arc::new(vec![1, 3, 0]) },
                vec![a34.clone()],
                seed,
            );
            check_primitive(
                Primitive::Mse { rows: Arc::new(vec![1, 2]), target: Arc::new(b34.clone()) },
                vec![a34.clone()],
                seed,
            );
        }
    }

    #[test]
    fn two_layer_network_gradients() {
        let mut rng = seeded(21, 0);
        let x = gaussian_matrix(&mut rng, 6, 3);
        let w1 = gaussian_matrix(&mut rng, 3, 5);
        let w2 = gaussian_matrix(&mut rng, 5, 2);
        let run = |w1: &Matrix, w2: &Matrix| {
            let mut t = Tape::new();
            let xv = t.constant(x.clone());
            let a = t.param("w1", w1.clone());
            let b = t.param("w2", w2.clone());
            let h = t.matmul(xv, a).unwrap();
            let h = t.sigmoid(h);
            let h = t.layer_norm(h);
            let o = t.matmul(h, b).unwrap();
            let loss = t
                .apply(
                    Primitive::CrossEntropy { rows: Arc::new(vec![0, 1, 2, 3]), labels: Arc::new(vec![0, 1, 1, 0]) },
                    &[o],
                )
                .unwrap();
            (t, loss)
        };
        let (t, loss) = run(&w1, &w2);
        let grads = t.backward(loss).unwrap();
        let fd1 = finite_diff_grad(|m| { let (t, l) = run(m, &w2); t.value(l)[(0, 0)] }, &w1, 1e-5).unwrap();
        let fd2 = finite_diff_grad(|m| { let (t, l) = run(&w1, m); t.value(l)[(0, 0)] }, &w2, 1e-5).unwrap();
        assert!(rel_err(grads.param("w1").unwrap(), &fd1) <= 1e-5);
        assert!(rel_err(grads.param("w2").unwrap(), &fd2) <= 1e-5);
    }

    #[test]
    fn gradients_match_param_shapes() {
        let mut t = Tape::new();
        let a = t.param("a", Matrix::filled(2, 3, 0.1));
        let unused = t.param("unused", Matrix::filled(4, 1, 1.0));
        let _ = unused;
        let loss = t.sum(a);
        let g = t.backward(loss).unwrap();
        for (name, grad) in g.params() {
            let v = t.value(t.param_var(name).unwrap());
            assert_eq!(grad.shape(), v.shape());
        }
    }

    #[test]
    fn cross_entropy_limits() {
        let mut t = Tape::new();
        let uniform = t.constant(Matrix::zeros(2, 4));
        let ce = t
            .apply(Primitive::CrossEntropy { rows: Arc::new(vec![0, 1]), labels: Arc::new(vec![2, 3]) }, &[uniform])
            .unwrap();
        assert!((t.value(ce)[(0, 0)] - 4f64.ln()).abs() <= 1e-12);
        let confident = t.constant(Matrix::from_rows(&[vec![1e6, 0.0]]).unwrap());
        let ce = t
            .apply(Primitive::CrossEntropy { rows: Arc::new(vec![0]), labels: Arc::new(vec![0]) }, &[confident])
            .unwrap();
        assert!(t.value(ce)[(0, 0)].abs() <= 1e-12);
        assert!(t
            .apply(Primitive::CrossEntropy { rows: Arc::new(vec![]), labels: Arc::new(vec![]) }, &[confident])
            .is_err());
    }
}
