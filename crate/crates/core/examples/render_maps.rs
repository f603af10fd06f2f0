//! Write predicted heatmap, target, cone mask and head prior of one scene as PGM files.

use hclora::cli::render_maps;
use hclora::config::RunConfig;
use hclora::datagen::{generate_sample, Split};
use hclora::model::Model;
use hclora::render::write_pgm;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = RunConfig::load(None, &["scene.grid=8".into(), "model.n_layers=2".into(), "model.adapted_layers=0,1".into()])?;
    let model = Model::new(cfg.backbone.clone(), 0)?;
    let sample = generate_sample(42, &cfg.scene, Split::Test)?;
    let dir = std::env::temp_dir().join("hclora-render");
    std::fs::create_dir_all(&dir)?;
    for (name, map) in render_maps(&model, &sample, &cfg)? {
        let path = dir.join(format!("{name}.pgm"));
        write_pgm(&path, &map)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
