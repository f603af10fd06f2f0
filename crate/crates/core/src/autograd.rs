//! Wengert-tape reverse-mode differentiation over [`Tensor`].
//!
//! A [`Graph`] records every op of one forward pass. Nodes that do not depend on
//! a trainable parameter or a differentiable input are constants and cost nothing
//! in the backward sweep, so frozen backbone weights never get gradient work.

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{gemm_nn, gemm_nt, gemm_tn, sigmoid_scalar, Tensor};

const LN_EPS: f64 = 1e-5;
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    Log(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Tensor,
        rstd: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<f64>,
    },
    Softmax(Var),
    LogSoftmax(Var),
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    Reshape(Var),
    Bce {
        pred: Var,
        target: Tensor,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::AddRow(..) => "add_row",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Relu(..) => "relu",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Attention { .. } => "attention",
            Op::Softmax(..) => "softmax_spatial",
            Op::LogSoftmax(..) => "log_softmax",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::MeanRows(..) => "mean_rows",
            Op::Reshape(..) => "reshape",
            Op::Bce { .. } => "bce",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    fault: Option<&'static str>,
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Test fixture: multiplies the backward output of every op with this name by 1.5.
    #[doc(hidden)]
    pub fn with_corrupted_backward(op_name: &'static str) -> Self {
        Graph {
            nodes: Vec::new(),
            fault: Some(op_name),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Differentiable free input; its gradient is available from [`Gradients::wrt`].
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Parameter read. Frozen parameters enter as constants.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let p = store.get(id);
        if p.trainable {
            self.push(p.value.clone(), Op::Param(id), true)
        } else {
            self.push(p.value.clone(), Op::Leaf, false)
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    fn zip(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(name, ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "div", |x, y| x / y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Div(a, b), rg))
    }

    /// Adds a length-`m` row vector to every row of an `n×m` matrix.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (tx, tr) = (self.value(x), self.value(row));
        let m = tx.cols();
        if tr.len() != m {
            return Err(Error::Dimension {
                op: "add_row",
                lhs: tx.shape().to_vec(),
                rhs: tr.shape().to_vec(),
            });
        }
        let mut out = tx.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v += tr.data()[i % m];
        }
        let rg = self.rg(x) || self.rg(row);
        Ok(self.push(out, Op::AddRow(x, row), rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v * c);
        let rg = self.rg(x);
        self.push(out, Op::Scale(x, c), rg)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v + c);
        let rg = self.rg(x);
        self.push(out, Op::AddScalar(x), rg)
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let out = self.value(x).map(f);
        let rg = self.rg(x);
        self.push(out, op, rg)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Op::Exp(x), f64::exp)
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, Op::Log(x), f64::ln)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| v.max(0.0))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), f64::tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), sigmoid_scalar)
    }

    /// Row-wise layer normalization with affine gain and bias (both length `cols`).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let tx = self.value(x);
        let (n, m) = (tx.rows(), tx.cols());
        let (tg, tb) = (self.value(gain), self.value(bias));
        if tg.len() != m || tb.len() != m {
            return Err(Error::Dimension {
                op: "layer_norm",
                lhs: tx.shape().to_vec(),
                rhs: tg.shape().to_vec(),
            });
        }
        let mut xhat = Tensor::zeros(tx.shape());
        let mut out = Tensor::zeros(tx.shape());
        let mut rstd = Vec::with_capacity(n);
        for i in 0..n {
            let row = tx.row(i);
            let mean = row.iter().sum::<f64>() / m as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m as f64;
            let r = 1.0 / (var + LN_EPS).sqrt();
            rstd.push(r);
            for j in 0..m {
                let h = (row[j] - mean) * r;
                xhat.data_mut()[i * m + j] = h;
                out.data_mut()[i * m + j] = h * tg.data()[j] + tb.data()[j];
            }
        }
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// Multi-head scaled dot-product self-attention over `N×d` query/key/value
    /// matrices; head `j` owns columns `j·d/heads .. (j+1)·d/heads`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        let (tq, tk, tv) = (self.value(q), self.value(k), self.value(v));
        same_shape("attention", tq, tk)?;
        same_shape("attention", tq, tv)?;
        let (n, d) = (tq.rows(), tq.cols());
        if heads == 0 || d % heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "attention: width {d} not divisible by {heads} heads"
            )));
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut probs = vec![0.0; heads * n * n];
        let mut out = Tensor::zeros(&[n, d]);
        let (qh, kh, vh) = (
            split_heads(tq, heads),
            split_heads(tk, heads),
            split_heads(tv, heads),
        );
        let mut oh = vec![0.0; n * dh];
        for h in 0..heads {
            let p = &mut probs[h * n * n..(h + 1) * n * n];
            gemm_nt(&qh[h], &kh[h], p, n, dh, n);
            for i in 0..n {
                let row = &mut p[i * n..(i + 1) * n];
                let mx = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b * scale));
                let mut s = 0.0;
                for x in row.iter_mut() {
                    *x = (*x * scale - mx).exp();
                    s += *x;
                }
                for x in row.iter_mut() {
                    *x /= s;
                }
            }
            oh.iter_mut().for_each(|x| *x = 0.0);
            gemm_nn(p, &vh[h], &mut oh, n, n, dh);
            merge_head(&mut out, &oh, h, dh);
        }
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        Ok(self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            },
            rg,
        ))
    }

    /// Softmax over every entry of the tensor (spatial normalization of a map).
    pub fn softmax(&mut self, x: Var) -> Var {
        let out = softmax_all(self.value(x));
        let rg = self.rg(x);
        self.push(out, Op::Softmax(x), rg)
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let mx = t.data().iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = mx + t.data().iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
        let out = t.map(|v| v - lse);
        let rg = self.rg(x);
        self.push(out, Op::LogSoftmax(x), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(x);
        self.push(out, Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let out = Tensor::scalar(t.sum() / t.len() as f64);
        let rg = self.rg(x);
        self.push(out, Op::Mean(x), rg)
    }

    /// Column means of an `n×m` matrix, as a `1×m` row.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let (n, m) = (t.rows(), t.cols());
        let mut out = vec![0.0; m];
        for i in 0..n {
            for (o, v) in out.iter_mut().zip(t.row(i)) {
                *o += v / n as f64;
            }
        }
        let out = Tensor::new(&[1, m], out).expect("shape");
        let rg = self.rg(x);
        self.push(out, Op::MeanRows(x), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    /// Mean binary cross-entropy of probabilities against fixed targets, with the
    /// probabilities clamped to `[1e-7, 1-1e-7]`.
    pub fn bce(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        let tp = self.value(pred);
        if tp.len() != target.len() {
            return Err(Error::Dimension {
                op: "bce",
                lhs: tp.shape().to_vec(),
                rhs: target.shape().to_vec(),
            });
        }
        let n = tp.len() as f64;
        let loss = tp
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &t)| {
                let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
            })
            .sum::<f64>()
            / n;
        let rg = self.rg(pred);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Bce {
                pred,
                target: target.clone(),
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(self.value(loss).shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let g = match self.fault {
                Some(name) if name == node.op.name() => g.map(|x| 1.5 * x),
                _ => g,
            };
            self.backward_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backward_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let mut send = |v: Var, t: Tensor| {
            if self.nodes[v.0].requires_grad {
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&t),
                    slot => *slot = Some(t),
                }
            }
        };
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (n, k, m) = (ta.rows(), ta.cols(), tb.cols());
                if self.rg(*a) {
                    let mut ga = vec![0.0; n * k];
                    gemm_nt(g.data(), tb.data(), &mut ga, n, m, k);
                    send(*a, Tensor::new(ta.shape(), ga).expect("shape"));
                }
                if self.rg(*b) {
                    let mut gb = vec![0.0; k * m];
                    gemm_tn(ta.data(), g.data(), &mut gb, n, k, m);
                    send(*b, Tensor::new(tb.shape(), gb).expect("shape"));
                }
            }
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::Sub(a, b) => {
                send(*a, g.clone());
                send(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                if self.rg(*a) {
                    send(*a, hadamard(g, tb));
                }
                if self.rg(*b) {
                    send(*b, hadamard(g, ta));
                }
            }
            Op::Div(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                if self.rg(*a) {
                    send(*a, zip_map(g, tb, |gi, bi| gi / bi));
                }
                if self.rg(*b) {
                    let t = zip_map(ta, tb, |ai, bi| -ai / (bi * bi));
                    send(*b, hadamard(g, &t));
                }
            }
            Op::AddRow(x, row) => {
                send(*x, g.clone());
                if self.rg(*row) {
                    let tr = val(*row);
                    let m = tr.len();
                    let mut gr = vec![0.0; m];
                    for (i, v) in g.data().iter().enumerate() {
                        gr[i % m] += v;
                    }
                    send(*row, Tensor::new(tr.shape(), gr).expect("shape"));
                }
            }
            Op::Scale(x, c) => send(*x, g.map(|v| v * c)),
            Op::AddScalar(x) => send(*x, g.clone()),
            Op::Exp(x) => send(*x, hadamard(g, &node.value)),
            Op::Log(x) => send(*x, zip_map(g, val(*x), |gi, xi| gi / xi)),
            Op::Relu(x) => send(*x, zip_map(g, val(*x), |gi, xi| if xi > 0.0 { gi } else { 0.0 })),
            Op::Tanh(x) => send(*x, zip_map(g, &node.value, |gi, y| gi * (1.0 - y * y))),
            Op::Sigmoid(x) => send(*x, zip_map(g, &node.value, |gi, y| gi * y * (1.0 - y))),
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let tg = val(*gain);
                let (n, m) = (xhat.rows(), xhat.cols());
                if self.rg(*x) {
                    let mut gx = Tensor::zeros(xhat.shape());
                    for i in 0..n {
                        let dy = g.row(i);
                        let xh = xhat.row(i);
                        let dxh: Vec<f64> = (0..m).map(|j| dy[j] * tg.data()[j]).collect();
                        let mean_dxh = dxh.iter().sum::<f64>() / m as f64;
                        let mean_dxh_xh =
                            dxh.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / m as f64;
                        for j in 0..m {
                            gx.data_mut()[i * m + j] =
                                rstd[i] * (dxh[j] - mean_dxh - xh[j] * mean_dxh_xh);
                        }
                    }
                    send(*x, gx);
                }
                if self.rg(*gain) {
                    let mut gg = vec![0.0; m];
                    for i in 0..n {
                        for j in 0..m {
                            gg[j] += g.get(i, j) * xhat.get(i, j);
                        }
                    }
                    send(*gain, Tensor::new(tg.shape(), gg).expect("shape"));
                }
                if self.rg(*bias) {
                    let mut gb = vec![0.0; m];
                    for i in 0..n {
                        for j in 0..m {
                            gb[j] += g.get(i, j);
                        }
                    }
                    send(*bias, Tensor::new(val(*bias).shape(), gb).expect("shape"));
                }
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            } => {
                let (tq, tk, tv) = (val(*q), val(*k), val(*v));
                let (n, d) = (tq.rows(), tq.cols());
                let heads = *heads;
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let (qh, kh, vh) = (
                    split_heads(tq, heads),
                    split_heads(tk, heads),
                    split_heads(tv, heads),
                );
                let gh = split_heads(g, heads);
                let mut gq = Tensor::zeros(&[n, d]);
                let mut gk = Tensor::zeros(&[n, d]);
                let mut gv = Tensor::zeros(&[n, d]);
                let mut dp = vec![0.0; n * n];
                let mut buf = vec![0.0; n * dh];
                for h in 0..heads {
                    let p = &probs[h * n * n..(h + 1) * n * n];
                    // dV = Pᵀ dO
                    buf.iter_mut().for_each(|x| *x = 0.0);
                    gemm_tn(p, &gh[h], &mut buf, n, n, dh);
                    merge_head(&mut gv, &buf, h, dh);
                    // dP = dO Vᵀ, then softmax backward into dS (scaled).
                    dp.iter_mut().for_each(|x| *x = 0.0);
                    gemm_nt(&gh[h], &vh[h], &mut dp, n, dh, n);
                    for i in 0..n {
                        let pr = &p[i * n..(i + 1) * n];
                        let dr = &mut dp[i * n..(i + 1) * n];
                        let dot: f64 = pr.iter().zip(dr.iter()).map(|(a, b)| a * b).sum();
                        for (dv, pv) in dr.iter_mut().zip(pr) {
                            *dv = pv * (*dv - dot) * scale;
                        }
                    }
                    buf.iter_mut().for_each(|x| *x = 0.0);
                    gemm_nn(&dp, &kh[h], &mut buf, n, n, dh);
                    merge_head(&mut gq, &buf, h, dh);
                    buf.iter_mut().for_each(|x| *x = 0.0);
                    gemm_tn(&dp, &qh[h], &mut buf, n, n, dh);
                    merge_head(&mut gk, &buf, h, dh);
                }
                send(*q, gq);
                send(*k, gk);
                send(*v, gv);
            }
            Op::Softmax(x) => {
                let y = &node.value;
                let dot: f64 = g.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
                send(*x, zip_map(g, y, |gi, yi| yi * (gi - dot)));
            }
            Op::LogSoftmax(x) => {
                let total = g.sum();
                send(*x, zip_map(g, &node.value, |gi, yi| gi - yi.exp() * total));
            }
            Op::Sum(x) => send(*x, Tensor::filled(val(*x).shape(), g.data()[0])),
            Op::Mean(x) => {
                let t = val(*x);
                send(*x, Tensor::filled(t.shape(), g.data()[0] / t.len() as f64));
            }
            Op::MeanRows(x) => {
                let t = val(*x);
                let (n, m) = (t.rows(), t.cols());
                let mut gx = Tensor::zeros(t.shape());
                for i in 0..n {
                    for j in 0..m {
                        gx.data_mut()[i * m + j] = g.data()[j] / n as f64;
                    }
                }
                send(*x, gx);
            }
            Op::Reshape(x) => {
                let shape = val(*x).shape().to_vec();
                send(*x, g.clone().reshape(&shape).expect("shape"));
            }
            Op::Bce { pred, target } => {
                let tp = val(*pred);
                let n = tp.len() as f64;
                let s = g.data()[0];
                let gp = zip_map(tp, target, |p, t| {
                    if p <= BCE_CLAMP || p >= 1.0 - BCE_CLAMP {
                        0.0
                    } else {
                        s * (p - t) / (p * (1.0 - p)) / n
                    }
                });
                send(*pred, gp);
            }
        }
    }
}

/// Result of [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Adds every parameter gradient into the store's accumulators.
    pub fn accumulate(&self, graph: &Graph, store: &mut ParamStore) {
        for (node, g) in graph.nodes.iter().zip(&self.grads) {
            if let (Op::Param(id), Some(g)) = (&node.op, g) {
                store.accumulate(*id, g);
            }
        }
    }
}

fn hadamard(a: &Tensor, b: &Tensor) -> Tensor {
    zip_map(a, b, |x, y| x * y)
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape(), data).expect("shape")
}

fn split_heads(t: &Tensor, heads: usize) -> Vec<Vec<f64>> {
    let (n, d) = (t.rows(), t.cols());
    let dh = d / heads;
    (0..heads)
        .map(|h| {
            let mut out = Vec::with_capacity(n * dh);
            for i in 0..n {
                out.extend_from_slice(&t.data()[i * d + h * dh..i * d + (h + 1) * dh]);
            }
            out
        })
        .collect()
}

fn merge_head(out: &mut Tensor, src: &[f64], h: usize, dh: usize) {
    let d = out.cols();
    let n = out.rows();
    let data = out.data_mut();
    for i in 0..n {
        data[i * d + h * dh..i * d + (h + 1) * dh].copy_from_slice(&src[i * dh..(i + 1) * dh]);
    }
}

/// Max-subtracted softmax over all entries.
pub fn softmax_all(t: &Tensor) -> Tensor {
    let mx = t.data().iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e = t.map(|v| (v - mx).exp());
    let s = e.sum();
    e.map(|v| v / s)
}
