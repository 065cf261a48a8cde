use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};

use super::ops::{self, gemm_nn, gemm_nt, gemm_tn};
use super::{Array, Scalar};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    BatchMatMul { a: Var, b: Var, transpose_rhs: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    /// `a + b` where `b`'s shape is a trailing suffix of `a`'s.
    AddSuffix(Var, Var),
    Broadcast(Var),
    Permute(Var, Vec<usize>),
    Reshape(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Gelu(Var),
    Sum(Var),
}

impl<T> Op<T> {
    fn tag(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::BatchMatMul { .. } => "batch_matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddSuffix(..) => "add_suffix",
            Op::Broadcast(..) => "broadcast",
            Op::Permute(..) => "permute",
            Op::Reshape(..) => "reshape",
            Op::Softmax(..) => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Gelu(..) => "gelu",
            Op::Sum(..) => "sum",
        }
    }

    fn parents(&self) -> Vec<Var> {
        match *self {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::BatchMatMul { a, b, .. }
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddSuffix(a, b) => vec![a, b],
            Op::LayerNorm { x, gain, bias, .. } => vec![x, gain, bias],
            Op::Scale(a, _)
            | Op::Broadcast(a)
            | Op::Permute(a, _)
            | Op::Reshape(a)
            | Op::Softmax(a)
            | Op::Gelu(a)
            | Op::Sum(a) => vec![a],
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    value: Array<T>,
    op: Op<T>,
    requires_grad: bool,
    finite: bool,
}

/// A per-step computation graph. Nodes are appended in evaluation order, so
/// the node list is already a topological order and the graph is acyclic by
/// construction.
#[derive(Debug, Default)]
pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    params: Vec<(String, Var)>,
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct GradTable<T> {
    named: BTreeMap<String, Array<T>>,
    per_node: Vec<Option<Array<T>>>,
}

impl<T: Scalar> GradTable<T> {
    /// Gradient of a named parameter; zero-filled when the loss does not
    /// depend on it.
    pub fn get(&self, name: &str) -> Option<&Array<T>> {
        self.named.get(name)
    }

    /// Gradient for any node that required one and was reached.
    pub fn of(&self, var: Var) -> Option<&Array<T>> {
        self.per_node.get(var.0).and_then(Option::as_ref)
    }

    pub fn named(&self) -> &BTreeMap<String, Array<T>> {
        &self.named
    }

    pub fn into_named(self) -> BTreeMap<String, Array<T>> {
        self.named
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            params: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A named leaf that receives a gradient.
    pub fn param(&mut self, name: impl Into<String>, value: Array<T>) -> Var {
        let var = self.push(value, Op::Leaf, true);
        self.params.push((name.into(), var));
        var
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Array<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, var: Var) -> &Array<T> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn op_tag(&self, var: Var) -> &'static str {
        self.nodes[var.0].op.tag()
    }

    pub fn parents(&self, var: Var) -> Vec<Var> {
        self.nodes[var.0].op.parents()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Array<T>, op: Op<T>, leaf_grad: bool) -> Var {
        let parents = op.parents();
        let requires_grad = leaf_grad || parents.iter().any(|p| self.nodes[p.0].requires_grad);
        let finite = if cfg!(debug_assertions) {
            let finite = value.is_finite();
            if !finite && !parents.is_empty() && parents.iter().all(|p| self.nodes[p.0].finite) {
                panic!("{} produced a non-finite value from finite inputs", op.tag());
            }
            finite
        } else {
            true
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            finite,
        });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = ops::matmul(self.value(a), self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b), false))
    }

    pub fn batch_matmul(&mut self, a: Var, b: Var, transpose_rhs: bool) -> Result<Var> {
        let value = ops::batch_matmul(self.value(a), self.value(b), transpose_rhs)?;
        Ok(self.push(value, Op::BatchMatMul { a, b, transpose_rhs }, false))
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Array<T> {
        let (x, y) = (self.value(a), self.value(b));
        Array::from_parts(
            x.shape().to_vec(),
            x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect(),
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.zip_with(a, b, |p, q| p + q);
        Ok(self.push(value, Op::Add(a, b), false))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.zip_with(a, b, |p, q| p - q);
        Ok(self.push(value, Op::Sub(a, b), false))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.zip_with(a, b, |p, q| p * q);
        Ok(self.push(value, Op::Mul(a, b), false))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let s = T::of(factor);
        let value = self.value(a).map(|v| v * s);
        self.push(value, Op::Scale(a, s), false)
    }

    /// `a + b`, broadcasting `b` over the leading axes of `a`.
    pub fn add_suffix(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(Error::Dimension {
                op: "add_suffix",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let x = self.value(a);
        let y = self.value(b).data();
        let inner = y.len();
        let data = x
            .data()
            .chunks(inner)
            .flat_map(|row| row.iter().zip(y).map(|(&p, &q)| p + q))
            .collect();
        let value = Array::from_parts(x.shape().to_vec(), data);
        Ok(self.push(value, Op::AddSuffix(a, b), false))
    }

    pub fn broadcast_to(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = ops::broadcast_to(self.value(a), shape)?;
        Ok(self.push(value, Op::Broadcast(a), false))
    }

    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let value = ops::permute(self.value(a), axes)?;
        Ok(self.push(value, Op::Permute(a, axes.to_vec()), false))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).reshape(shape)?;
        Ok(self.push(value, Op::Reshape(a), false))
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let value = ops::softmax(self.value(a));
        self.push(value, Op::Softmax(a), false)
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let d = *self.shape(x).last().expect("rank ≥ 1");
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(Error::Dimension {
                op: "layer_norm",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(gain).to_vec(),
            });
        }
        let parts = ops::layer_norm_parts(
            self.value(x).data(),
            self.value(gain).data(),
            self.value(bias).data(),
            T::of(eps),
        );
        let value = Array::from_parts(self.shape(x).to_vec(), parts.out);
        let op = Op::LayerNorm {
            x,
            gain,
            bias,
            xhat: parts.xhat,
            rstd: parts.rstd,
        };
        Ok(self.push(value, op, false))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let value = ops::gelu(self.value(a));
        self.push(value, Op::Gelu(a), false)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Array::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a), false)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// `x · w + b` over the last axis of `x`, any leading shape.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (&fan_in, lead) = shape.split_last().expect("rank ≥ 1");
        let rows: usize = lead.iter().product();
        let fan_out = self.shape(weight).get(1).copied().unwrap_or(0);
        let x2 = self.reshape(x, &[rows, fan_in])?;
        let mut y = self.matmul(x2, weight)?;
        if let Some(b) = bias {
            y = self.add_suffix(y, b)?;
        }
        let mut out_shape = lead.to_vec();
        out_shape.push(fan_out);
        self.reshape(y, &out_shape)
    }

    /// Mean squared difference over all elements.
    pub fn mse(&mut self, prediction: Var, target: Var) -> Result<Var> {
        let d = self.sub(prediction, target)?;
        let sq = self.mul(d, d)?;
        Ok(self.mean(sq))
    }

    /// Inverted dropout. Identity when `rate` is zero.
    pub fn dropout(&mut self, x: Var, rate: f64, rng: &mut impl Rng) -> Result<Var> {
        if rate <= 0.0 {
            return Ok(x);
        }
        let keep = T::of(1.0 / (1.0 - rate));
        let mask = Array::from_fn(self.shape(x), |_| {
            if rng.gen::<f64>() < rate {
                T::zero()
            } else {
                keep
            }
        });
        let m = self.constant(mask);
        self.mul(x, m)
    }

    /// Reverse-mode accumulation from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<GradTable<T>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Array<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Array::from_parts(self.shape(loss).to_vec(), vec![T::one()]));
        }
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        let named = self
            .params
            .iter()
            .map(|(name, var)| {
                let g = grads[var.0]
                    .clone()
                    .unwrap_or_else(|| Array::zeros(self.shape(*var)));
                (name.clone(), g)
            })
            .collect();
        Ok(GradTable {
            named,
            per_node: grads,
        })
    }

    fn propagate(&self, node: &Node<T>, g: &Array<T>, grads: &mut [Option<Array<T>>]) {
        let gd = g.data();
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if wants(*a) {
                    let mut da = vec![T::zero(); m * k];
                    gemm_nt(&mut da, gd, self.value(*b).data(), m, n, k);
                    accumulate(grads, *a, sa, da);
                }
                if wants(*b) {
                    let mut db = vec![T::zero(); k * n];
                    gemm_tn(&mut db, self.value(*a).data(), gd, k, m, n);
                    accumulate(grads, *b, sb, db);
                }
            }
            Op::BatchMatMul { a, b, transpose_rhs } => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (batch, m, k) = (sa[0], sa[1], sa[2]);
                let n = if *transpose_rhs { sb[1] } else { sb[2] };
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if wants(*a) {
                    let mut da = vec![T::zero(); batch * m * k];
                    for t in 0..batch {
                        let out = &mut da[t * m * k..(t + 1) * m * k];
                        let gt = &gd[t * m * n..(t + 1) * m * n];
                        let bt = &bv[t * k * n..(t + 1) * k * n];
                        if *transpose_rhs {
                            gemm_nn(out, gt, bt, m, n, k);
                        } else {
                            gemm_nt(out, gt, bt, m, n, k);
                        }
                    }
                    accumulate(grads, *a, sa, da);
                }
                if wants(*b) {
                    let mut db = vec![T::zero(); batch * k * n];
                    for t in 0..batch {
                        let out = &mut db[t * k * n..(t + 1) * k * n];
                        let gt = &gd[t * m * n..(t + 1) * m * n];
                        let at = &av[t * m * k..(t + 1) * m * k];
                        if *transpose_rhs {
                            gemm_tn(out, gt, at, n, m, k);
                        } else {
                            gemm_tn(out, at, gt, k, m, n);
                        }
                    }
                    accumulate(grads, *b, sb, db);
                }
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    accumulate(grads, *a, g.shape(), gd.to_vec());
                }
                if wants(*b) {
                    accumulate(grads, *b, g.shape(), gd.to_vec());
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    accumulate(grads, *a, g.shape(), gd.to_vec());
                }
                if wants(*b) {
                    accumulate(grads, *b, g.shape(), gd.iter().map(|&v| -v).collect());
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if wants(*a) {
                    let da = gd.iter().zip(bv).map(|(&x, &y)| x * y).collect();
                    accumulate(grads, *a, g.shape(), da);
                }
                if wants(*b) {
                    let db = gd.iter().zip(av).map(|(&x, &y)| x * y).collect();
                    accumulate(grads, *b, g.shape(), db);
                }
            }
            Op::Scale(a, s) => {
                if wants(*a) {
                    accumulate(grads, *a, g.shape(), gd.iter().map(|&v| v * *s).collect());
                }
            }
            Op::AddSuffix(a, b) => {
                if wants(*a) {
                    accumulate(grads, *a, g.shape(), gd.to_vec());
                }
                if wants(*b) {
                    let inner = self.value(*b).numel();
                    let mut db = vec![T::zero(); inner];
                    for row in gd.chunks(inner) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d = *d + v;
                        }
                    }
                    accumulate(grads, *b, self.shape(*b), db);
                }
            }
            Op::Broadcast(a) => {
                if wants(*a) {
                    let from = self.shape(*a);
                    accumulate(grads, *a, from, ops::unbroadcast(gd, from, g.shape()));
                }
            }
            Op::Permute(a, axes) => {
                if wants(*a) {
                    let back = ops::permute(g, &ops::inverse_axes(axes)).expect("valid axes");
                    accumulate(grads, *a, self.shape(*a), back.into_data());
                }
            }
            Op::Reshape(a) => {
                if wants(*a) {
                    accumulate(grads, *a, self.shape(*a), gd.to_vec());
                }
            }
            Op::Softmax(a) => {
                if wants(*a) {
                    let y = node.value.data();
                    let n = *g.shape().last().expect("rank ≥ 1");
                    let mut da = vec![T::zero(); y.len()];
                    for ((dr, yr), gr) in da.chunks_mut(n).zip(y.chunks(n)).zip(gd.chunks(n)) {
                        let dot: T = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                        for j in 0..n {
                            dr[j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    accumulate(grads, *a, g.shape(), da);
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let gv = self.value(*gain).data();
                let d = gv.len();
                if wants(*x) {
                    let inv_d = T::one() / T::of(d as f64);
                    let mut dx = vec![T::zero(); gd.len()];
                    for (r, &rs) in rstd.iter().enumerate() {
                        let gr = &gd[r * d..(r + 1) * d];
                        let hr = &xhat[r * d..(r + 1) * d];
                        let mut sum_dh = T::zero();
                        let mut sum_dh_h = T::zero();
                        for j in 0..d {
                            let dh = gr[j] * gv[j];
                            sum_dh = sum_dh + dh;
                            sum_dh_h = sum_dh_h + dh * hr[j];
                        }
                        for j in 0..d {
                            let dh = gr[j] * gv[j];
                            dx[r * d + j] = rs * (dh - inv_d * sum_dh - hr[j] * inv_d * sum_dh_h);
                        }
                    }
                    accumulate(grads, *x, g.shape(), dx);
                }
                if wants(*gain) || wants(*bias) {
                    let mut dgain = vec![T::zero(); d];
                    let mut dbias = vec![T::zero(); d];
                    for (gr, hr) in gd.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            dgain[j] = dgain[j] + gr[j] * hr[j];
                            dbias[j] = dbias[j] + gr[j];
                        }
                    }
                    if wants(*gain) {
                        accumulate(grads, *gain, &[d], dgain);
                    }
                    if wants(*bias) {
                        accumulate(grads, *bias, &[d], dbias);
                    }
                }
            }
            Op::Gelu(a) => {
                if wants(*a) {
                    let xv = self.value(*a).data();
                    let da = gd
                        .iter()
                        .zip(xv)
                        .map(|(&q, &x)| q * ops::gelu_grad_scalar(x))
                        .collect();
                    accumulate(grads, *a, g.shape(), da);
                }
            }
            Op::Sum(a) => {
                if wants(*a) {
                    let n = self.value(*a).numel();
                    accumulate(grads, *a, self.shape(*a), vec![g.item(); n]);
                }
            }
        }
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Array<T>>], var: Var, shape: &[usize], delta: Vec<T>) {
    match &mut grads[var.0] {
        Some(existing) => {
            for (e, d) in existing.data_mut().iter_mut().zip(delta) {
                *e = *e + d;
            }
        }
        slot @ None => *slot = Some(Array::from_parts(shape.to_vec(), delta)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_gradient() {
        let x = Array::<f64>::from_vec(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let mut g = Graph::new();
        let v = g.param("x", x.clone());
        let sq = g.mul(v, v).unwrap();
        let loss = g.sum(sq);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get("x").unwrap(), &x.map(|v| 2.0 * v));
    }

    #[test]
    fn unreachable_parameter_gets_zero() {
        let mut g = Graph::<f64>::new();
        let x = g.param("x", Array::full(&[2], 3.0));
        let _p = g.param("p", Array::full(&[2, 2], 1.0));
        let loss = g.sum(x);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get("p").unwrap(), &Array::zeros(&[2, 2]));
        assert_eq!(grads.get("x").unwrap(), &Array::full(&[2], 1.0));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::<f32>::new();
        let x = g.param("x", Array::zeros(&[2]));
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn constants_carry_no_gradient() {
        let mut g = Graph::<f32>::new();
        let c = g.constant(Array::full(&[2], 1.0));
        let s = g.sum(c);
        assert!(!g.requires_grad(s));
        let grads = g.backward(s).unwrap();
        assert!(grads.of(c).is_none());
        assert_eq!(g.op_tag(s), "sum");
        assert_eq!(g.parents(s), vec![c]);
    }

    #[test]
    fn zero_rate_dropout_is_identity() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut g = Graph::<f32>::new();
        let x = g.param("x", Array::full(&[4], 2.0));
        assert_eq!(g.dropout(x, 0.0, &mut rng).unwrap(), x);
        let y = g.dropout(x, 0.5, &mut rng).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0 || v == 4.0));
    }
}
