//! Pretext pretraining of the backbone, adapter training under each auxiliary
//! supervision strategy, and evaluation of a model on a scene set.

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::datagen::GazeSample;
use crate::error::{Error, Result};
use crate::eval::{score_sample, Report, SampleResult};
use crate::geometry::{cone_mask, Point, DEFAULT_CONE_ANGLE_DEG, DEFAULT_CONE_SHARPNESS, DEFAULT_EPS};
use crate::losses::{
    aux_heatmap_bce, gaze_cone_matching, gaze_vector_mse, gt_heatmap, heatmap_bce, inout_bce,
    ooc_penalty, total_loss, AuxStrategy, LossTerms, LossWeights, DEFAULT_SIGMA_H,
};
use crate::model::Model;
use crate::optim::{Optimizer, OptimizerKind};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub batch_size: usize,
    pub sigma_h: f64,
    pub weights: LossWeights,
    pub strategy: AuxStrategy,
    pub cone_angle_deg: f64,
    pub cone_sharpness: f64,
    /// Shuffles the sample order each epoch.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 8,
            lr: 3e-3,
            optimizer: OptimizerKind::default(),
            batch_size: 8,
            sigma_h: DEFAULT_SIGMA_H,
            weights: LossWeights::default(),
            strategy: AuxStrategy::None,
            cone_angle_deg: DEFAULT_CONE_ANGLE_DEG,
            cone_sharpness: DEFAULT_CONE_SHARPNESS,
            seed: 0,
        }
    }
}

/// Mean loss components over one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub total: f64,
    pub heat: f64,
    pub inout: f64,
    pub aux: f64,
}

/// Fisher-Yates shuffle driven by the crate RNG.
pub fn shuffle<T>(items: &mut [T], rng: &mut Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.int_range(0, i);
        items.swap(i, j);
    }
}

fn unit(p: Point) -> Point {
    let n = p.norm();
    Point::new(p.x / n, p.y / n)
}

/// Builds the full training loss of one sample on `g`.
pub fn sample_loss(g: &mut Graph, model: &Model, sample: &GazeSample, cfg: &TrainConfig) -> Result<LossTerms> {
    let grid = model.cfg.grid;
    let out = model.forward(g, &sample.features, sample.head_box)?;
    let gaze = sample.gaze_points.first().copied();
    let target = gt_heatmap(gaze, grid, cfg.sigma_h)?;
    let heat = heatmap_bce(g, out.heatmap, &target)?;
    let inout = inout_bce(g, out.inout, sample.in_frame)?;
    let mut aux: Vec<Var> = Vec::new();
    if let (Some(gp), true) = (gaze, cfg.strategy != AuxStrategy::None) {
        let h = sample.head_center();
        let cone = || {
            cone_mask(
                h,
                gp,
                cfg.cone_angle_deg.to_radians(),
                cfg.cone_sharpness,
                grid,
                DEFAULT_EPS,
            )
        };
        for (i, &z) in out.aux_features.iter().enumerate() {
            let term = match cfg.strategy {
                AuxStrategy::None => unreachable!(),
                AuxStrategy::OutOfCone => {
                    let logits = model.aux_logits(g, z, i)?;
                    let ev = g.softmax(logits);
                    ooc_penalty(g, ev, &cone()?)?
                }
                AuxStrategy::GazeCone => {
                    let logits = model.aux_logits(g, z, i)?;
                    gaze_cone_matching(g, logits, &cone()?)?
                }
                AuxStrategy::Heatmap => {
                    let logits = model.aux_logits(g, z, i)?;
                    aux_heatmap_bce(g, logits, &target)?
                }
                AuxStrategy::GazeVector => {
                    let v = model.aux_vector(g, z, out.prior, i)?;
                    if gp.dist(h) <= DEFAULT_EPS {
                        return Err(Error::UndefinedDirection);
                    }
                    gaze_vector_mse(g, v, unit(gp.sub(h)))?
                }
            };
            aux.push(term);
        }
    }
    total_loss(g, heat, Some(inout), &aux, cfg.weights)
}

/// Runs `epochs` passes over `samples`, stepping every `batch_size` samples.
/// `loss_fn` builds the per-sample objective and returns its components.
fn run_epochs<F>(model: &mut Model, samples: &[GazeSample], cfg: &TrainConfig, mut loss_fn: F) -> Result<Vec<EpochLog>>
where
    F: FnMut(&mut Graph, &Model, &GazeSample) -> Result<LossTerms>,
{
    if model.store.trainable_count() == 0 {
        return Err(Error::NotApplicable("model has no trainable parameters"));
    }
    if samples.is_empty() || cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("need samples and a positive batch size".into()));
    }
    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr, &model.store);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut rng = Rng::new(cfg.seed).fork(0x7A1);
    let mut logs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        shuffle(&mut order, &mut rng);
        let mut sums = [0.0; 4];
        let mut pending = 0;
        for &i in &order {
            let mut g = Graph::new();
            let terms = loss_fn(&mut g, model, &samples[i])?;
            let total = g.scalar(terms.total);
            if !total.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    seed: cfg.seed,
                });
            }
            sums[0] += total;
            sums[1] += g.scalar(terms.heat);
            sums[2] += terms.inout.map_or(0.0, |v| g.scalar(v));
            if !terms.aux.is_empty() {
                sums[3] += terms.aux.iter().map(|&a| g.scalar(a)).sum::<f64>() / terms.aux.len() as f64;
            }
            g.backward(terms.total)?.accumulate(&g, &mut model.store);
            pending += 1;
            if pending == cfg.batch_size {
                opt.step(&mut model.store, 1.0 / pending as f64);
                pending = 0;
            }
        }
        if pending > 0 {
            opt.step(&mut model.store, 1.0 / pending as f64);
        }
        let n = samples.len() as f64;
        logs.push(EpochLog {
            epoch,
            total: sums[0] / n,
            heat: sums[1] / n,
            inout: sums[2] / n,
            aux: sums[3] / n,
        });
    }
    Ok(logs)
}

/// Trains every trainable parameter of `model` on the sample set with the
/// configured objective.
pub fn train(model: &mut Model, samples: &[GazeSample], cfg: &TrainConfig) -> Result<Vec<EpochLog>> {
    run_epochs(model, samples, cfg, |g, m, s| sample_loss(g, m, s, cfg))
}

/// Pretext saliency target: 1 on cells whose center lies in a distractor box.
pub fn saliency_target(sample: &GazeSample, model: &Model) -> Tensor {
    let grid = model.cfg.grid;
    let mut t = Tensor::zeros(&[grid.height, grid.width]);
    for (i, c) in grid.centers().enumerate() {
        if sample.distractors.iter().any(|b| b.contains(c)) {
            t.data_mut()[i] = 1.0;
        }
    }
    t
}

/// Trains backbone and decoder to mark distractor cells, without adapters or
/// head input, then freezes everything. The in/out head is not touched.
pub fn pretext_pretrain(model: &mut Model, samples: &[GazeSample], cfg: &TrainConfig) -> Result<Vec<EpochLog>> {
    if model.has_adapters() {
        return Err(Error::InvalidArgument("pretext training runs before adapters are attached".into()));
    }
    model.store.set_trainable(model.inout.w, false);
    model.store.set_trainable(model.inout.b, false);
    let logs = run_epochs(model, samples, cfg, |g, m, s| {
        let out = m.forward(g, &s.features, s.head_box)?;
        let target = saliency_target(s, m);
        let heat = g.bce(out.heatmap, &target)?;
        total_loss(g, heat, None, &[], cfg.weights)
    })?;
    model.store.freeze_all();
    Ok(logs)
}

/// Scores `model` on every sample.
pub fn evaluate(model: &Model, samples: &[GazeSample], label: &str, thresholds: &[f64]) -> Result<(Report, Vec<SampleResult>)> {
    let mut results = Vec::with_capacity(samples.len());
    for s in samples {
        let p = model.predict(&s.features, s.head_box)?;
        let subset = s.consistency().ok();
        results.push(score_sample(
            &p.heatmap,
            model.cfg.grid,
            s.head_center(),
            &s.gaze_points,
            p.inout,
            subset,
        ));
    }
    Ok((Report::from_results(label, &results, thresholds), results))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_dataset, SceneConfig, Split};
    use crate::geometry::GridSpec;
    use crate::model::{AdapterMode, BackboneConfig, Site};

    fn small() -> (BackboneConfig, SceneConfig) {
        let grid = GridSpec::square(4).unwrap();
        (
            BackboneConfig {
                grid,
                d_in: 8,
                d: 8,
                n_layers: 2,
                n_heads: 2,
                mlp_ratio: 2,
                adapted_layers: vec![0, 1],
                aux_layers: 2,
                rank: 2,
                sites: vec![Site::AttnOut, Site::MlpIn],
            },
            SceneConfig {
                grid,
                d_in: 8,
                distractor_size: 0.3,
                max_distractors: 2,
                ..SceneConfig::default()
            },
        )
    }

    #[test]
    fn shuffle_is_permutation() {
        let mut v: Vec<usize> = (0..50).collect();
        shuffle(&mut v, &mut Rng::new(1));
        let mut s = v.clone();
        s.sort_unstable();
        assert_eq!(s, (0..50).collect::<Vec<_>>());
        assert_ne!(v, s);
    }

    #[test]
    fn frozen_mode_refuses_training() {
        let (bc, sc) = small();
        let data = generate_dataset(1, &sc, Split::Train, 4).unwrap();
        let mut m = Model::new(bc, 0).unwrap();
        m.attach_adapters(AdapterMode::Frozen, false, 0).unwrap();
        assert!(matches!(
            train(&mut m, &data, &TrainConfig::default()),
            Err(Error::NotApplicable(_))
        ));
    }

    #[test]
    fn frozen_weights_do_not_move() {
        let (bc, sc) = small();
        let data = generate_dataset(2, &sc, Split::Train, 16).unwrap();
        let mut m = Model::new(bc, 0).unwrap();
        m.attach_adapters(AdapterMode::HcLora, false, 1).unwrap();
        m.unfreeze_heads();
        let before = m.store.clone();
        let cfg = TrainConfig {
            epochs: 2,
            strategy: AuxStrategy::OutOfCone,
            optimizer: OptimizerKind::adam(),
            ..TrainConfig::default()
        };
        let logs = train(&mut m, &data, &cfg).unwrap();
        assert_eq!(logs.len(), 2);
        let mut moved = 0;
        for ((_, a), (_, b)) in before.iter().zip(m.store.iter()) {
            if a.trainable {
                moved += (a.value != b.value) as usize;
            } else {
                assert_eq!(a.value, b.value, "{}", a.name);
                assert!(b.grad.data().iter().all(|&v| v == 0.0));
            }
        }
        assert!(moved > 0);
    }

    #[test]
    fn every_strategy_runs() {
        let (bc, sc) = small();
        let data = generate_dataset(3, &sc, Split::Train, 6).unwrap();
        for strategy in [
            AuxStrategy::None,
            AuxStrategy::OutOfCone,
            AuxStrategy::GazeVector,
            AuxStrategy::Heatmap,
            AuxStrategy::GazeCone,
        ] {
            let mut m = Model::new(bc.clone(), 0).unwrap();
            m.attach_adapters(AdapterMode::HcLora, strategy == AuxStrategy::GazeVector, 1)
                .unwrap();
            let cfg = TrainConfig {
                epochs: 1,
                strategy,
                ..TrainConfig::default()
            };
            let logs = train(&mut m, &data, &cfg).unwrap();
            assert!(logs[0].total.is_finite());
            if strategy != AuxStrategy::None {
                assert!(logs[0].aux > 0.0, "{}", strategy.name());
            }
        }
    }

    #[test]
    fn pretext_freezes_everything() {
        let (bc, sc) = small();
        let data = generate_dataset(4, &sc, Split::Train, 8).unwrap();
        let mut m = Model::new(bc, 0).unwrap();
        let logs = pretext_pretrain(
            &mut m,
            &data,
            &TrainConfig {
                epochs: 1,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        assert!(logs[0].heat.is_finite());
        assert_eq!(m.store.trainable_count(), 0);
    }
}
