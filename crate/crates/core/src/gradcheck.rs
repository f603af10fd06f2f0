//! Central finite-difference verification of analytic gradients.

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::datagen::{generate_sample, SceneConfig, Split};
use crate::geometry::GridSpec;
use crate::losses::{AuxStrategy, LossWeights};
use crate::model::{AdapterMode, BackboneConfig, Model, Site};
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::train::{saliency_target, sample_loss, TrainConfig};

#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub label: String,
    pub checked: usize,
    pub worst: Option<GradCheckEntry>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.worst.as_ref().map_or(0.0, |w| w.rel_err)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_err() < self.tol
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let status = if self.passed() { "ok  " } else { "FAIL" };
        match &self.worst {
            Some(w) => write!(
                f,
                "{status} {:<28} entries={:<5} max_rel_err={:.3e} at {}[{}] (analytic {:.6e}, numeric {:.6e})",
                self.label, self.checked, w.rel_err, w.name, w.index, w.analytic, w.numeric
            ),
            None => write!(f, "{status} {:<28} entries=0", self.label),
        }
    }
}

/// Relative error with an absolute floor so that gradients near zero do not
/// blow up the ratio.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Checks every trainable entry of `store` against central differences.
///
/// `f` builds the scalar loss on a fresh graph from the current parameter values.
pub fn grad_check<F>(label: &str, store: &mut ParamStore, f: F, eps: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    grad_check_with(label, store, f, eps, tol, Graph::new)
}

#[doc(hidden)]
pub fn grad_check_with<F, G>(
    label: &str,
    store: &mut ParamStore,
    f: F,
    eps: f64,
    tol: f64,
    new_graph: G,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
    G: Fn() -> Graph,
{
    if !(1e-7..=1e-4).contains(&eps) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step {eps} outside [1e-7, 1e-4]"
        )));
    }
    store.zero_grads();
    let mut g = new_graph();
    let loss = f(&mut g, store)?;
    let grads = g.backward(loss)?;
    grads.accumulate(&g, store);

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let v = f(&mut g, store)?;
        Ok(g.scalar(v))
    };

    let mut worst: Option<GradCheckEntry> = None;
    let mut checked = 0;
    let ids: Vec<_> = store.ids().filter(|&id| store.get(id).trainable).collect();
    for id in ids {
        for i in 0..store.get(id).value.len() {
            let orig = store.get(id).value.data()[i];
            store.get_mut(id).value.data_mut()[i] = orig + eps;
            let plus = eval(store)?;
            store.get_mut(id).value.data_mut()[i] = orig - eps;
            let minus = eval(store)?;
            store.get_mut(id).value.data_mut()[i] = orig;
            let name = store.get(id).name.clone();
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::GradCheck {
                    name,
                    reason: "loss is not finite".into(),
                });
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let analytic = store.get(id).grad.data()[i];
            let e = rel_err(analytic, numeric);
            checked += 1;
            if worst.as_ref().map_or(true, |w| e > w.rel_err) {
                worst = Some(GradCheckEntry {
                    name,
                    index: i,
                    analytic,
                    numeric,
                    rel_err: e,
                });
            }
        }
    }
    store.zero_grads();
    Ok(GradCheckReport {
        label: label.to_string(),
        checked,
        worst,
        tol,
    })
}

/// Step and tolerance used by [`suite`].
pub const SUITE_EPS: f64 = 1e-5;
pub const SUITE_TOL: f64 = 1e-4;

#[derive(Clone, Copy)]
enum Init {
    Normal,
    Positive,
    Prob,
    AwayFromZero,
}

fn init(rng: &mut Rng, shape: &[usize], kind: Init) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| match kind {
            Init::Normal => rng.normal(),
            Init::Positive => rng.uniform_range(0.5, 1.5),
            Init::Prob => rng.uniform_range(0.1, 0.9),
            Init::AwayFromZero => {
                let m = rng.uniform_range(0.2, 1.5);
                if rng.bernoulli(0.5) {
                    m
                } else {
                    -m
                }
            }
        })
        .collect();
    Tensor::new(shape, data).expect("shape")
}

type OpFn = fn(&mut Graph, &[Var]) -> Result<Var>;

/// Checks one op: the output is contracted with fixed random weights so every
/// output entry contributes to the scalar.
fn op_case(
    label: &str,
    inputs: &[(&[usize], Init)],
    f: OpFn,
    corrupt: Option<&'static str>,
) -> Result<GradCheckReport> {
    let mut rng = Rng::new(0x6C0C);
    let mut store = ParamStore::new();
    let ids: Vec<_> = inputs
        .iter()
        .enumerate()
        .map(|(i, (shape, kind))| store.add(&format!("{label}.in{i}"), init(&mut rng, shape, *kind), true))
        .collect();
    let loss = |g: &mut Graph, s: &ParamStore| -> Result<Var> {
        let xs: Vec<Var> = ids.iter().map(|&id| g.param(s, id)).collect();
        let y = f(g, &xs)?;
        let w = Rng::new(0xC0DE).gaussian_tensor(g.value(y).shape(), 1.0);
        let w = g.constant(w);
        let p = g.mul(y, w)?;
        Ok(g.sum(p))
    };
    grad_check_with(&format!("op {label}"), &mut store, loss, SUITE_EPS, SUITE_TOL, || match corrupt {
        Some(op) => Graph::with_corrupted_backward(op),
        None => Graph::new(),
    })
}

/// Every differentiable op at small shapes.
pub fn op_suite(corrupt: Option<&'static str>) -> Result<Vec<GradCheckReport>> {
    use Init::*;
    let m34: &[usize] = &[3, 4];
    let cases: Vec<(&str, Vec<(&[usize], Init)>, OpFn)> = vec![
        ("matmul", vec![(m34, Normal), (&[4, 2], Normal)], |g, x| g.matmul(x[0], x[1])),
        ("add", vec![(m34, Normal), (m34, Normal)], |g, x| g.add(x[0], x[1])),
        ("sub", vec![(m34, Normal), (m34, Normal)], |g, x| g.sub(x[0], x[1])),
        ("mul", vec![(m34, Normal), (m34, Normal)], |g, x| g.mul(x[0], x[1])),
        ("div", vec![(m34, Normal), (m34, Positive)], |g, x| g.div(x[0], x[1])),
        ("add_row", vec![(m34, Normal), (&[1, 4], Normal)], |g, x| g.add_row(x[0], x[1])),
        ("scale", vec![(m34, Normal)], |g, x| Ok(g.scale(x[0], 1.7))),
        ("add_scalar", vec![(m34, Normal)], |g, x| Ok(g.add_scalar(x[0], 0.3))),
        ("exp", vec![(m34, Normal)], |g, x| Ok(g.exp(x[0]))),
        ("log", vec![(m34, Positive)], |g, x| Ok(g.log(x[0]))),
        ("relu", vec![(m34, AwayFromZero)], |g, x| Ok(g.relu(x[0]))),
        ("tanh", vec![(m34, Normal)], |g, x| Ok(g.tanh(x[0]))),
        ("sigmoid", vec![(m34, Normal)], |g, x| Ok(g.sigmoid(x[0]))),
        ("layer_norm", vec![(m34, Normal), (&[1, 4], Normal), (&[1, 4], Normal)], |g, x| {
            g.layer_norm(x[0], x[1], x[2])
        }),
        ("attention", vec![(&[5, 4], Normal), (&[5, 4], Normal), (&[5, 4], Normal)], |g, x| {
            g.attention(x[0], x[1], x[2], 2)
        }),
        ("softmax_spatial", vec![(m34, Normal)], |g, x| Ok(g.softmax(x[0]))),
        ("log_softmax", vec![(m34, Normal)], |g, x| Ok(g.log_softmax(x[0]))),
        ("sum", vec![(m34, Normal)], |g, x| Ok(g.sum(x[0]))),
        ("mean", vec![(m34, Normal)], |g, x| Ok(g.mean(x[0]))),
        ("mean_rows", vec![(m34, Normal)], |g, x| Ok(g.mean_rows(x[0]))),
        ("reshape", vec![(m34, Normal)], |g, x| g.reshape(x[0], &[2, 6])),
        ("bce", vec![(m34, Prob)], |g, x| {
            let t = Rng::new(0xB0CE).gaussian_tensor(&[3, 4], 1.0).map(|v| 1.0 / (1.0 + (-v).exp()));
            g.bce(x[0], &t)
        }),
    ];
    cases
        .into_iter()
        .map(|(label, inputs, f)| op_case(label, &inputs, f, corrupt))
        .collect()
}

/// Toy backbone used by the composed-loss checks.
pub fn toy_backbone() -> BackboneConfig {
    BackboneConfig {
        grid: GridSpec::square(4).expect("grid"),
        d_in: 8,
        d: 8,
        n_layers: 2,
        n_heads: 2,
        mlp_ratio: 2,
        adapted_layers: vec![0, 1],
        aux_layers: 2,
        rank: 2,
        sites: vec![Site::AttnOut, Site::MlpIn],
    }
}

pub fn toy_scene() -> SceneConfig {
    SceneConfig {
        grid: GridSpec::square(4).expect("grid"),
        d_in: 8,
        head_margin: 0.0,
        distractor_size: 0.3,
        max_distractors: 2,
        p_out: 0.0,
        ..SceneConfig::default()
    }
}

/// The full training objective (heatmap BCE, in/out BCE and auxiliary terms)
/// for one adapter mode and strategy, with every adapter and head trainable
/// and the `B` matrices moved off zero so gradients reach `A` and the gate.
fn loss_case(
    mode: AdapterMode,
    strategy: AuxStrategy,
    corrupt: Option<&'static str>,
) -> Result<GradCheckReport> {
    let mut model = Model::new(toy_backbone(), 3)?;
    model.attach_adapters(mode, strategy == AuxStrategy::GazeVector, 4)?;
    model.unfreeze_heads();
    let mut rng = Rng::new(5);
    let bs: Vec<_> = model.adapters().map(|a| a.lora.b).collect();
    for b in bs {
        let shape = model.store.get(b).value.shape().to_vec();
        model.store.get_mut(b).value = rng.gaussian_tensor(&shape, 0.3);
    }
    for h in model.aux_heads.clone() {
        if let Some(v) = h.vector {
            model.store.get_mut(v).value = rng.gaussian_tensor(&[model.cfg.rank, 2], 0.3);
        }
    }
    let sample = generate_sample(11, &toy_scene(), Split::Train)?;
    let cfg = TrainConfig {
        strategy,
        weights: LossWeights::new(1.0, 0.5)?,
        ..TrainConfig::default()
    };
    let label = format!("loss {}+{}", mode.name(), strategy.name());
    let mut store = std::mem::take(&mut model.store);
    let report = grad_check_with(
        &label,
        &mut store,
        |g, s| {
            let mut view = model.clone();
            view.store = s.clone();
            Ok(sample_loss(g, &view, &sample, &cfg)?.total)
        },
        SUITE_EPS,
        SUITE_TOL,
        || match corrupt {
            Some(op) => Graph::with_corrupted_backward(op),
            None => Graph::new(),
        },
    );
    model.store = store;
    report
}

/// Pretext objective with the whole backbone trainable.
fn pretext_case(corrupt: Option<&'static str>) -> Result<GradCheckReport> {
    let mut model = Model::new(toy_backbone(), 3)?;
    let sample = generate_sample(12, &toy_scene(), Split::Train)?;
    let target = saliency_target(&sample, &model);
    let mut store = std::mem::take(&mut model.store);
    let report = grad_check_with(
        "loss pretext",
        &mut store,
        |g, s| {
            let mut view = model.clone();
            view.store = s.clone();
            let out = view.forward(g, &sample.features, sample.head_box)?;
            g.bce(out.heatmap, &target)
        },
        SUITE_EPS,
        SUITE_TOL,
        || match corrupt {
            Some(op) => Graph::with_corrupted_backward(op),
            None => Graph::new(),
        },
    );
    model.store = store;
    report
}

pub fn loss_suite(corrupt: Option<&'static str>) -> Result<Vec<GradCheckReport>> {
    let mut out = vec![pretext_case(corrupt)?];
    for strategy in [
        AuxStrategy::OutOfCone,
        AuxStrategy::None,
        AuxStrategy::GazeVector,
        AuxStrategy::Heatmap,
        AuxStrategy::GazeCone,
    ] {
        out.push(loss_case(AdapterMode::HcLora, strategy, corrupt)?);
    }
    out.push(loss_case(AdapterMode::Lora, AuxStrategy::OutOfCone, corrupt)?);
    Ok(out)
}

/// Op checks followed by composed-loss checks. `corrupt` names an op whose
/// backward is deliberately scaled, for testing the checker itself.
pub fn suite(corrupt: Option<&'static str>) -> Result<Vec<GradCheckReport>> {
    let mut out = op_suite(corrupt)?;
    out.extend(loss_suite(corrupt)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn x_squared_matches() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::scalar(3.0), true);
        let report = grad_check(
            "square",
            &mut store,
            |g, s| {
                let v = g.param(s, x);
                g.mul(v, v)
            },
            1e-5,
            1e-8,
        )
        .unwrap();
        assert!(report.passed(), "{report}");
        let w = report.worst.unwrap();
        assert!((w.analytic - 6.0).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_at_zero_matches() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::scalar(0.0), true);
        let report = grad_check(
            "sigmoid",
            &mut store,
            |g, s| {
                let v = g.param(s, x);
                Ok(g.sigmoid(v))
            },
            1e-5,
            1e-8,
        )
        .unwrap();
        assert!(report.passed(), "{report}");
    }

    #[test]
    fn non_finite_loss_names_parameter() {
        let mut store = ParamStore::new();
        let x = store.add("weird", Tensor::scalar(0.0), true);
        let err = grad_check(
            "log",
            &mut store,
            |g, s| {
                let v = g.param(s, x);
                Ok(g.log(v))
            },
            1e-5,
            1e-4,
        )
        .unwrap_err();
        assert!(err.to_string().contains("weird"), "{err}");
    }

    #[test]
    fn frozen_params_are_skipped() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::scalar(2.0), false);
        let report = grad_check(
            "frozen",
            &mut store,
            |g, s| {
                let v = g.param(s, x);
                g.mul(v, v)
            },
            1e-5,
            1e-8,
        )
        .unwrap();
        assert_eq!(report.checked, 0);
    }

    #[test]
    fn rejects_out_of_range_step() {
        let mut store = ParamStore::new();
        store.add("x", Tensor::scalar(2.0), true);
        assert!(grad_check("x", &mut store, |g, _| Ok(g.constant(Tensor::scalar(0.0))), 1e-2, 1e-4).is_err());
    }

    #[test]
    fn pristine_suite_passes() {
        let reports = suite(None).unwrap();
        assert!(reports.len() > 20);
        for r in &reports {
            assert!(r.passed(), "{r}");
            assert!(r.checked > 0, "{r}");
        }
    }

    #[test]
    fn corrupted_backward_is_named() {
        let reports = op_suite(Some("tanh")).unwrap();
        let failed: Vec<_> = reports.iter().filter(|r| !r.passed()).map(|r| r.label.as_str()).collect();
        assert_eq!(failed, vec!["op tanh"]);
        let losses = loss_suite(Some("layer_norm")).unwrap();
        assert!(losses.iter().all(|r| !r.passed()));
    }
}
