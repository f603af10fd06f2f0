//! Save an adapted model and load it back; predictions match bit for bit.

use hclora::checkpoint::{load, load_model, save_model};
use hclora::datagen::{generate_sample, SceneConfig, Split};
use hclora::geometry::GridSpec;
use hclora::model::{AdapterMode, BackboneConfig, Model};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let grid = GridSpec::square(8)?;
    let backbone = BackboneConfig {
        grid,
        d_in: 16,
        d: 16,
        n_layers: 2,
        n_heads: 2,
        adapted_layers: vec![0, 1],
        ..BackboneConfig::default()
    };
    let mut model = Model::new(backbone, 3)?;
    model.attach_adapters(AdapterMode::HcLora, false, 4)?;
    model.unfreeze_heads();

    let path = std::env::temp_dir().join("hclora-example.ckpt");
    save_model(&path, &model, "example")?;
    let (manifest, store) = load(&path)?;
    println!(
        "manifest: mode {}, label {:?}, {} tensors, {} trainable",
        manifest.mode.name(),
        manifest.label,
        store.len(),
        store.trainable_count()
    );

    let back = load_model(&path)?;
    let scene = SceneConfig {
        grid,
        d_in: 16,
        ..SceneConfig::default()
    };
    let s = generate_sample(5, &scene, Split::Test)?;
    let a = model.predict(&s.features, s.head_box)?;
    let b = back.predict(&s.features, s.head_box)?;
    println!("identical heatmaps: {}, in/out {} vs {}", a.heatmap == b.heatmap, a.inout, b.inout);
    Ok(())
}
