//! Drive the command layer from code: gen-data, pretrain, train, eval and
//! render with one small config, as the binary would.

use hclora::cli::{run, Command};
use hclora::config::RunConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::temp_dir().join("hclora-pipeline");
    let overrides: Vec<String> = [
        "scene.grid=8",
        "scene.d_in=16",
        "model.d=16",
        "model.n_layers=2",
        "model.n_heads=2",
        "model.adapted_layers=0,1",
        "data.n_train=200",
        "data.n_test=100",
        "pretrain.epochs=1",
        "train.epochs=1",
        "train.mode=hclora+ooc",
    ]
    .iter()
    .map(|s| s.to_string())
    .chain([format!("paths.out={}", out.display())])
    .collect();
    let cfg = RunConfig::load(None, &overrides)?;
    let mut stdout = std::io::stdout().lock();
    for cmd in [Command::GenData, Command::Pretrain, Command::Train, Command::Eval, Command::Render] {
        run(cmd, &cfg, &mut stdout)?;
    }
    Ok(())
}
