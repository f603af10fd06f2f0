//! Small end-to-end run: shortcut pretext pretraining, then the frozen baseline,
//! HCLoRA and HCLoRA + OOC on the same frozen backbone.

use hclora::datagen::{generate_dataset, SceneConfig, Split};
use hclora::geometry::GridSpec;
use hclora::losses::AuxStrategy;
use hclora::model::{AdapterMode, BackboneConfig, Model};
use hclora::optim::OptimizerKind;
use hclora::train::{evaluate, pretext_pretrain, train, TrainConfig};

fn main() -> hclora::Result<()> {
    let grid = GridSpec::square(8)?;
    let scene = SceneConfig {
        grid,
        d_in: 16,
        ..SceneConfig::default()
    };
    let backbone = BackboneConfig {
        grid,
        d_in: 16,
        d: 16,
        n_layers: 2,
        n_heads: 2,
        adapted_layers: vec![0, 1],
        rank: 4,
        ..BackboneConfig::default()
    };
    let train_set = generate_dataset(1, &scene, Split::Train, 300)?;
    let test_set = generate_dataset(1, &scene, Split::Test, 200)?;
    let thresholds = [15.0, 30.0, 45.0, 60.0];

    let mut pretext = Model::new(backbone, 1)?;
    let pre_cfg = TrainConfig {
        epochs: 2,
        optimizer: OptimizerKind::adam(),
        ..TrainConfig::default()
    };
    for log in pretext_pretrain(&mut pretext, &train_set, &pre_cfg)? {
        println!("pretext epoch {} heat {:.5}", log.epoch, log.heat);
    }
    let (report, _) = evaluate(&pretext, &test_set, "frozen", &thresholds)?;
    println!("{}", report.to_text());

    for strategy in [AuxStrategy::None, AuxStrategy::OutOfCone] {
        let mut model = pretext.clone();
        model.attach_adapters(AdapterMode::HcLora, false, 2)?;
        model.unfreeze_heads();
        let cfg = TrainConfig {
            epochs: 2,
            optimizer: OptimizerKind::adam(),
            strategy,
            ..TrainConfig::default()
        };
        for log in train(&mut model, &train_set, &cfg)? {
            println!(
                "hclora+{} epoch {} total {:.4} heat {:.4} aux {:.4}",
                strategy.name(),
                log.epoch,
                log.total,
                log.heat,
                log.aux
            );
        }
        let (report, _) = evaluate(&model, &test_set, &format!("hclora+{}", strategy.name()), &thresholds)?;
        println!("{}", report.to_text());
    }
    Ok(())
}
