//! Training objectives: heatmap and in/out BCE, the out-of-cone penalty on
//! auxiliary evidence maps, the comparator auxiliary supervisions, and their
//! weighted combination.

use crate::autograd::{Graph, Var, BCE_CLAMP};
use crate::error::{Error, Result};
use crate::geometry::{ConeMask, GridSpec, Point};
use crate::tensor::Tensor;

pub const DEFAULT_BETA: f64 = 1.0;
pub const DEFAULT_LAMBDA: f64 = 0.1;
pub const DEFAULT_SIGMA_H: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// In/out BCE weight.
    pub beta: f64,
    /// Auxiliary-term weight.
    pub lambda: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            beta: DEFAULT_BETA,
            lambda: DEFAULT_LAMBDA,
        }
    }
}

impl LossWeights {
    pub fn new(beta: f64, lambda: f64) -> Result<Self> {
        if !(beta.is_finite() && lambda.is_finite() && beta >= 0.0 && lambda >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "loss weights must be finite and nonnegative (beta={beta}, lambda={lambda})"
            )));
        }
        Ok(LossWeights { beta, lambda })
    }
}

/// How the auxiliary maps of the last adapted layers are supervised.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuxStrategy {
    None,
    /// Fraction of evidence mass outside the soft gaze cone.
    OutOfCone,
    /// Regress the unit gaze direction from pooled head-token features.
    GazeVector,
    /// Per-cell BCE of the auxiliary map against the target heatmap.
    Heatmap,
    /// Cross-entropy of the evidence map against the normalized cone.
    GazeCone,
}

impl AuxStrategy {
    pub fn name(self) -> &'static str {
        match self {
            AuxStrategy::None => "none",
            AuxStrategy::OutOfCone => "ooc",
            AuxStrategy::GazeVector => "gaze-vector",
            AuxStrategy::Heatmap => "heatmap",
            AuxStrategy::GazeCone => "gaze-cone",
        }
    }
}

#[derive(Debug, Clone)]
pub struct TargetHeatmap {
    pub values: Tensor,
}

/// Gaussian splat around the gaze point in cell units; the cell containing the
/// point is pinned to 1. `None` (out of frame) gives an all-zero map.
pub fn gt_heatmap(gaze: Option<Point>, grid: GridSpec, sigma_h: f64) -> Result<TargetHeatmap> {
    if sigma_h.is_nan() || sigma_h <= 0.0 {
        return Err(Error::InvalidArgument(format!("sigma_h must be positive, got {sigma_h}")));
    }
    let mut values = Tensor::zeros(&[grid.height, grid.width]);
    if let Some(g) = gaze {
        let (gu, gv) = (g.x * grid.width as f64, g.y * grid.height as f64);
        for (i, c) in grid.centers().enumerate() {
            let du = c.x * grid.width as f64 - gu;
            let dv = c.y * grid.height as f64 - gv;
            values.data_mut()[i] = (-(du * du + dv * dv) / (2.0 * sigma_h * sigma_h)).exp();
        }
        values.data_mut()[grid.cell_of(g)] = 1.0;
    }
    Ok(TargetHeatmap { values })
}

/// Reference per-cell BCE on plain tensors (same clamping as the graph op).
pub fn bce_value(pred: &Tensor, target: &Tensor) -> f64 {
    let n = pred.len() as f64;
    pred.data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum::<f64>()
        / n
}

pub fn heatmap_bce(g: &mut Graph, pred: Var, target: &TargetHeatmap) -> Result<Var> {
    g.bce(pred, &target.values)
}

pub fn inout_bce(g: &mut Graph, prob: Var, in_frame: bool) -> Result<Var> {
    g.bce(prob, &Tensor::scalar(if in_frame { 1.0 } else { 0.0 }))
}

/// `Σ P(p)(1 − C(p)) / Σ P(p)` on plain tensors.
pub fn ooc_penalty_value(evidence: &Tensor, cone: &Tensor) -> Result<f64> {
    if evidence.len() != cone.len() {
        return Err(Error::Dimension {
            op: "ooc_penalty",
            lhs: evidence.shape().to_vec(),
            rhs: cone.shape().to_vec(),
        });
    }
    let mass = evidence.sum();
    if mass.is_nan() || mass < 1e-9 {
        return Err(Error::DegenerateEvidence(mass));
    }
    let outside: f64 = evidence
        .data()
        .iter()
        .zip(cone.data())
        .map(|(p, c)| p * (1.0 - c))
        .sum();
    Ok(outside / mass)
}

/// Differentiable out-of-cone penalty of an evidence map (any shape with one entry per cell).
pub fn ooc_penalty(g: &mut Graph, evidence: Var, cone: &ConeMask) -> Result<Var> {
    let ev = g.value(evidence);
    if ev.len() != cone.values.len() {
        return Err(Error::Dimension {
            op: "ooc_penalty",
            lhs: ev.shape().to_vec(),
            rhs: cone.values.shape().to_vec(),
        });
    }
    let mass = ev.sum();
    if mass.is_nan() || mass < 1e-9 {
        return Err(Error::DegenerateEvidence(mass));
    }
    let shape = ev.shape().to_vec();
    let outside = g.constant(cone.values.map(|c| 1.0 - c).reshape(&shape)?);
    let weighted = g.mul(evidence, outside)?;
    let num = g.sum(weighted);
    let den = g.sum(evidence);
    g.div(num, den)
}

/// Rigid cone matching: cross-entropy of the evidence distribution against the
/// cone mask normalized to unit mass.
pub fn gaze_cone_matching(g: &mut Graph, aux_logits: Var, cone: &ConeMask) -> Result<Var> {
    let shape = g.value(aux_logits).shape().to_vec();
    let total = cone.values.sum();
    let target = g.constant(cone.values.map(|c| -c / total).reshape(&shape)?);
    let logp = g.log_softmax(aux_logits);
    let prod = g.mul(logp, target)?;
    Ok(g.sum(prod))
}

/// Per-cell BCE between the sigmoid of the auxiliary logits and the target heatmap.
pub fn aux_heatmap_bce(g: &mut Graph, aux_logits: Var, target: &TargetHeatmap) -> Result<Var> {
    let p = g.sigmoid(aux_logits);
    g.bce(p, &target.values)
}

/// Squared error between a predicted 2-vector and the unit gaze direction.
pub fn gaze_vector_mse(g: &mut Graph, pred: Var, direction: Point) -> Result<Var> {
    let shape = g.value(pred).shape().to_vec();
    let t = g.constant(Tensor::new(&shape, vec![direction.x, direction.y])?);
    let diff = g.sub(pred, t)?;
    let sq = g.mul(diff, diff)?;
    Ok(g.sum(sq))
}

/// Components of the combined objective.
#[derive(Debug, Clone)]
pub struct LossTerms {
    pub heat: Var,
    pub inout: Option<Var>,
    pub aux: Vec<Var>,
    pub total: Var,
}

/// `L_heat + β·L_in/out + (λ/L)·Σ_l L_aux^(l)`. An empty `aux` list (out-of-frame
/// samples, or no auxiliary supervision) contributes nothing.
pub fn total_loss(
    g: &mut Graph,
    heat: Var,
    inout: Option<Var>,
    aux: &[Var],
    w: LossWeights,
) -> Result<LossTerms> {
    let mut total = heat;
    if let Some(io) = inout {
        if w.beta != 0.0 {
            let scaled = g.scale(io, w.beta);
            total = g.add(total, scaled)?;
        }
    }
    if !aux.is_empty() && w.lambda != 0.0 {
        let mut acc = aux[0];
        for &a in &aux[1..] {
            acc = g.add(acc, a)?;
        }
        let scaled = g.scale(acc, w.lambda / aux.len() as f64);
        total = g.add(total, scaled)?;
    }
    Ok(LossTerms {
        heat,
        inout,
        aux: aux.to_vec(),
        total,
    })
}
