//! Standard LoRA and head-conditioned local LoRA (HCLoRA) branches on frozen
//! linear projections.
//!
//! An adapted projection computes `Y = X·W + ((X·A) ⊙ M)·B`. For plain LoRA
//! `M ≡ 1`; for HCLoRA each row of `M` is produced by a small gate network from
//! the head-prior value at that token's cell.

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::geometry::{GridSpec, HeadPrior};
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::{sigmoid_scalar, Tensor};

pub const DEFAULT_RANK: usize = 4;
pub const DEFAULT_GATE_HIDDEN: usize = 8;
pub const LORA_INIT_STD: f64 = 0.02;

/// Down-projection `A: d_in×r` and up-projection `B: r×d_out`.
#[derive(Debug, Clone, Copy)]
pub struct LoraParams {
    pub a: ParamId,
    pub b: ParamId,
    pub rank: usize,
}

impl LoraParams {
    /// `A ~ N(0, 0.02²)`, `B = 0`. Requires `1 ≤ rank ≤ min(d_in, d_out)/2`.
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        d_in: usize,
        d_out: usize,
        rank: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if rank == 0 || 2 * rank > d_in.min(d_out) {
            return Err(Error::InvalidArgument(format!(
                "LoRA rank {rank} must satisfy 1 <= r <= {}",
                d_in.min(d_out) / 2
            )));
        }
        let a = store.add(
            &format!("{prefix}.lora_a"),
            rng.gaussian_tensor(&[d_in, rank], LORA_INIT_STD),
            true,
        );
        let b = store.add(&format!("{prefix}.lora_b"), Tensor::zeros(&[rank, d_out]), true);
        Ok(LoraParams { a, b, rank })
    }
}

/// Scalar head prior → tanh hidden layer → `r` sigmoid gates.
#[derive(Debug, Clone, Copy)]
pub struct GateNet {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl GateNet {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        rank: usize,
        hidden: usize,
        rng: &mut Rng,
    ) -> Self {
        GateNet {
            w1: store.add(&format!("{prefix}.gate_w1"), rng.gaussian_tensor(&[1, hidden], 1.0), true),
            b1: store.add(&format!("{prefix}.gate_b1"), Tensor::zeros(&[hidden]), true),
            w2: store.add(
                &format!("{prefix}.gate_w2"),
                rng.gaussian_tensor(&[hidden, rank], 1.0 / (hidden as f64).sqrt()),
                true,
            ),
            b2: store.add(&format!("{prefix}.gate_b2"), Tensor::zeros(&[rank]), true),
        }
    }

    /// Gate values for one prior value.
    pub fn eval(&self, store: &ParamStore, h: f64) -> Vec<f64> {
        let (w1, b1) = (store.value(self.w1), store.value(self.b1));
        let (w2, b2) = (store.value(self.w2), store.value(self.b2));
        let hidden: Vec<f64> = (0..b1.len())
            .map(|j| (h * w1.data()[j] + b1.data()[j]).tanh())
            .collect();
        (0..b2.len())
            .map(|k| {
                let s: f64 = hidden
                    .iter()
                    .enumerate()
                    .map(|(j, z)| z * w2.get(j, k))
                    .sum();
                sigmoid_scalar(s + b2.data()[k])
            })
            .collect()
    }

    /// `M` on the graph from a column of prior values (`N×1`).
    pub fn apply(&self, g: &mut Graph, store: &ParamStore, prior: Var) -> Result<Var> {
        let w1 = g.param(store, self.w1);
        let b1 = g.param(store, self.b1);
        let w2 = g.param(store, self.w2);
        let b2 = g.param(store, self.b2);
        let h = g.matmul(prior, w1)?;
        let h = g.add_row(h, b1)?;
        let h = g.tanh(h);
        let m = g.matmul(h, w2)?;
        let m = g.add_row(m, b2)?;
        Ok(g.sigmoid(m))
    }
}

/// Prior values as an `N×1` column in token (row-major) order.
pub fn prior_column(prior: &HeadPrior, grid: GridSpec) -> Result<Tensor> {
    if prior.values.shape() != [grid.height, grid.width] {
        return Err(Error::Dimension {
            op: "prior_column",
            lhs: prior.values.shape().to_vec(),
            rhs: vec![grid.height, grid.width],
        });
    }
    Tensor::new(&[grid.cells(), 1], prior.values.data().to_vec())
}

/// `M(b)`: row `n` is the gate applied to the prior at token `n`'s cell.
pub fn gate_modulation(
    store: &ParamStore,
    gate: &GateNet,
    prior: &HeadPrior,
    grid: GridSpec,
) -> Result<Tensor> {
    let col = prior_column(prior, grid)?;
    let rank = store.value(gate.b2).len();
    let mut m = Tensor::zeros(&[grid.cells(), rank]);
    for (n, &h) in col.data().iter().enumerate() {
        for (k, v) in gate.eval(store, h).into_iter().enumerate() {
            m.set(n, k, v);
        }
    }
    Ok(m)
}

/// `(X·A)·B`.
pub fn lora_delta(x: &Tensor, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    x.matmul(a)?.matmul(b)
}

/// `X·W + ((X·A) ⊙ M)·B`.
pub fn hclora_forward(x: &Tensor, w: &Tensor, a: &Tensor, b: &Tensor, m: &Tensor) -> Result<Tensor> {
    let mut z = x.matmul(a)?;
    if z.shape() != m.shape() {
        return Err(Error::Dimension {
            op: "hclora_forward",
            lhs: z.shape().to_vec(),
            rhs: m.shape().to_vec(),
        });
    }
    for (zi, mi) in z.data_mut().iter_mut().zip(m.data()) {
        *zi *= mi;
    }
    let mut y = x.matmul(w)?;
    y.add_assign(&z.matmul(b)?);
    Ok(y)
}

/// A frozen projection `W` with a low-rank residual branch. Without a gate the
/// branch is standard LoRA.
#[derive(Debug, Clone)]
pub struct HcLoraLayer {
    pub name: String,
    pub w: ParamId,
    pub lora: LoraParams,
    pub gate: Option<GateNet>,
}

/// Output of an adapted projection on the graph.
#[derive(Debug, Clone, Copy)]
pub struct AdaptedOutput {
    pub y: Var,
    /// Modulated low-rank feature `(X·A) ⊙ M`, `N×r`.
    pub z: Var,
}

impl HcLoraLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        w: ParamId,
        rank: usize,
        gated: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        if store.get(w).trainable {
            return Err(Error::InvalidArgument(format!(
                "adapted projection {name} must be frozen"
            )));
        }
        let shape = store.value(w).shape().to_vec();
        let lora = LoraParams::init(store, name, shape[0], shape[1], rank, rng)?;
        let gate = gated.then(|| GateNet::init(store, name, rank, DEFAULT_GATE_HIDDEN, rng));
        Ok(HcLoraLayer {
            name: name.to_string(),
            w,
            lora,
            gate,
        })
    }

    /// Every trainable parameter of the branch.
    pub fn params(&self) -> Vec<ParamId> {
        let mut v = vec![self.lora.a, self.lora.b];
        if let Some(gn) = &self.gate {
            v.extend([gn.w1, gn.b1, gn.w2, gn.b2]);
        }
        v
    }

    /// Eager forward. `m` overrides the gate output when given.
    pub fn forward(
        &self,
        store: &ParamStore,
        x: &Tensor,
        prior: &HeadPrior,
        grid: GridSpec,
        m: Option<&Tensor>,
    ) -> Result<Tensor> {
        let (w, a, b) = (
            store.value(self.w),
            store.value(self.lora.a),
            store.value(self.lora.b),
        );
        let m = match (m, &self.gate) {
            (Some(m), _) => m.clone(),
            (None, Some(gate)) => gate_modulation(store, gate, prior, grid)?,
            (None, None) => Tensor::filled(&[x.rows(), self.lora.rank], 1.0),
        };
        hclora_forward(x, w, a, b, &m)
    }

    /// Graph forward. `m` is this layer's gate output; `None` means `M ≡ 1`.
    pub fn apply(&self, g: &mut Graph, store: &ParamStore, x: Var, m: Option<Var>) -> Result<AdaptedOutput> {
        let w = g.param(store, self.w);
        let a = g.param(store, self.lora.a);
        let b = g.param(store, self.lora.b);
        let base = g.matmul(x, w)?;
        let z = g.matmul(x, a)?;
        let z = match m {
            Some(m) => g.mul(z, m)?,
            None => z,
        };
        let delta = g.matmul(z, b)?;
        let y = g.add(base, delta)?;
        Ok(AdaptedOutput { y, z })
    }
}
