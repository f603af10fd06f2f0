//! The six commands behind the `hclora` binary. Each one is a pure function of
//! the resolved config and its input files; human-readable output goes to `out`.

use std::io::Write;
use std::path::Path;

use crate::checkpoint::{load_model, save_model};
use crate::config::RunConfig;
use crate::datagen::{generate_dataset, read_dataset, write_dataset, GazeSample, SceneConfig, Split};
use crate::error::{Error, Result};
use crate::eval::Consistency;
use crate::geometry::{cone_mask, DEFAULT_EPS};
use crate::gradcheck::suite;
use crate::losses::{gt_heatmap, AuxStrategy};
use crate::model::{AdapterMode, Model};
use crate::render::write_pgm;
use crate::tensor::Tensor;
use crate::train::{evaluate, pretext_pretrain, train, EpochLog};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    GenData,
    Pretrain,
    Train,
    Eval,
    Gradcheck,
    Render,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::Pretrain => "pretrain",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Gradcheck => "gradcheck",
            Command::Render => "render",
        }
    }
}

fn say(out: &mut dyn Write, s: impl AsRef<str>) -> Result<()> {
    writeln!(out, "{}", s.as_ref()).map_err(|e| Error::io("<stdout>", e))
}

fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn ensure_parent(p: &Path) -> Result<()> {
    match p.parent() {
        Some(d) if !d.as_os_str().is_empty() => create_dir(d),
        _ => Ok(()),
    }
}

/// Logs the resolved config, then runs `cmd`.
pub fn run(cmd: Command, cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    say(out, format!("# {} with resolved config:", cmd.name()))?;
    for line in cfg.resolved().lines() {
        say(out, format!("#   {line}"))?;
    }
    match cmd {
        Command::GenData => cmd_gen_data(cfg, out),
        Command::Pretrain => cmd_pretrain(cfg, out),
        Command::Train => cmd_train(cfg, out),
        Command::Eval => cmd_eval(cfg, out),
        Command::Gradcheck => cmd_gradcheck(out),
        Command::Render => cmd_render(cfg, out),
    }
}

/// One-line summary of a sample set: size, out-of-frame count and subset sizes.
pub fn describe(samples: &[GazeSample]) -> String {
    let (mut cons, mut inc, mut out) = (0, 0, 0);
    for s in samples {
        match s.consistency() {
            Ok(Consistency::Consistent) => cons += 1,
            Ok(Consistency::Inconsistent) => inc += 1,
            Err(_) => out += 1,
        }
    }
    format!(
        "{} samples: {cons} consistent, {inc} inconsistent, {out} out of frame",
        samples.len()
    )
}

pub fn cmd_gen_data(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    create_dir(&cfg.data_dir())?;
    for (split, n, path) in [
        (Split::Train, cfg.n_train, cfg.train_data()),
        (Split::Test, cfg.n_test, cfg.test_data()),
    ] {
        let samples = generate_dataset(cfg.seed, &cfg.scene, split, n)?;
        write_dataset(&samples, &cfg.scene, &path)?;
        say(out, format!("{}: {}", path.display(), describe(&samples)))?;
    }
    Ok(())
}

fn read_split(cfg: &RunConfig, split: Split) -> Result<Vec<GazeSample>> {
    let path = match split {
        Split::Train => cfg.train_data(),
        Split::Test => cfg.test_data(),
    };
    read_dataset(&path, &cfg.scene)
}

fn log_epochs(out: &mut dyn Write, logs: &[EpochLog], with_aux: bool, with_inout: bool) -> Result<()> {
    for l in logs {
        let mut line = format!("epoch {:>3}  total {:.6}  heat {:.6}", l.epoch, l.total, l.heat);
        if with_inout {
            line.push_str(&format!("  inout {:.6}", l.inout));
        }
        if with_aux {
            line.push_str(&format!("  aux {:.6}", l.aux));
        }
        say(out, line)?;
    }
    Ok(())
}

fn trainable_entries(model: &Model) -> usize {
    model
        .store
        .iter()
        .filter(|(_, p)| p.trainable)
        .map(|(_, p)| p.value.len())
        .sum()
}

pub fn cmd_pretrain(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let samples = read_split(cfg, Split::Train)?;
    let mut model = Model::new(cfg.backbone.clone(), cfg.seed)?;
    say(out, format!("pretext pretraining on {}", describe(&samples)))?;
    say(out, format!("trainable parameters: {}", trainable_entries(&model)))?;
    let logs = pretext_pretrain(&mut model, &samples, &cfg.pretrain_config()?)?;
    log_epochs(out, &logs, false, false)?;
    let path = cfg.pretext_path();
    ensure_parent(&path)?;
    save_model(&path, &model, "pretext")?;
    say(out, format!("wrote {}", path.display()))
}

fn check_scene(model: &Model, scene: &SceneConfig) -> Result<()> {
    if model.cfg.grid != scene.grid || model.cfg.d_in != scene.d_in {
        return Err(Error::Incompatible(format!(
            "checkpoint expects a {}x{} grid with d_in={}, dataset config has {}x{} with d_in={}",
            model.cfg.grid.height,
            model.cfg.grid.width,
            model.cfg.d_in,
            scene.grid.height,
            scene.grid.width,
            scene.d_in
        )));
    }
    Ok(())
}

/// Loads the frozen pretext backbone and attaches the adapters of `train.mode`.
/// Adapter placement (layers, sites, rank) comes from the run config; the
/// backbone shape must match the checkpoint.
pub fn prepare_adaptation(cfg: &RunConfig) -> Result<Model> {
    let mode = cfg.run_mode()?;
    let mut model = load_model(&cfg.pretext_path())?;
    if model.has_adapters() || model.mode != AdapterMode::Frozen {
        return Err(Error::Incompatible(format!(
            "{} is not a pretext checkpoint (mode {})",
            cfg.pretext_path().display(),
            model.mode.name()
        )));
    }
    let (a, b) = (&model.cfg, &cfg.backbone);
    if (a.grid, a.d_in, a.d, a.n_layers, a.n_heads, a.mlp_ratio)
        != (b.grid, b.d_in, b.d, b.n_layers, b.n_heads, b.mlp_ratio)
    {
        return Err(Error::Incompatible(format!(
            "{}: stored backbone {:?} differs from configured {:?}",
            cfg.pretext_path().display(),
            a,
            b
        )));
    }
    model.cfg = cfg.backbone.clone();
    model.attach_adapters(mode.adapter, mode.strategy == AuxStrategy::GazeVector, cfg.seed)?;
    if mode.adapter != AdapterMode::Frozen {
        model.unfreeze_heads();
    }
    Ok(model)
}

pub fn cmd_train(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let mode = cfg.run_mode()?;
    let mut model = prepare_adaptation(cfg)?;
    say(out, format!("mode {}", mode.name()))?;
    say(out, format!("trainable parameters: {}", trainable_entries(&model)))?;
    if mode.adapter == AdapterMode::Frozen {
        return Err(Error::NotApplicable("mode frozen has no trainable parameters; evaluate the pretext checkpoint instead"));
    }
    let samples = read_split(cfg, Split::Train)?;
    let tc = cfg.train_config()?;
    let logs = train(&mut model, &samples, &tc)?;
    log_epochs(out, &logs, tc.strategy != AuxStrategy::None, true)?;
    let path = cfg.checkpoint_path();
    ensure_parent(&path)?;
    save_model(&path, &model, &mode.name())?;
    say(out, format!("wrote {}", path.display()))
}

pub fn cmd_eval(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let model = load_model(&cfg.checkpoint_path())?;
    check_scene(&model, &cfg.scene)?;
    let samples = read_split(cfg, Split::Test)?;
    let (report, _) = evaluate(&model, &samples, &cfg.mode, &cfg.tail_thresholds)?;
    say(out, report.to_text().trim_end())?;
    let path = cfg.report_path();
    ensure_parent(&path)?;
    std::fs::write(&path, report.to_json() + "\n").map_err(|e| Error::io(&path, e))?;
    say(out, format!("wrote {}", path.display()))
}

pub fn cmd_gradcheck(out: &mut dyn Write) -> Result<()> {
    let reports = suite(None)?;
    for r in &reports {
        say(out, r.to_string())?;
    }
    let worst = reports
        .iter()
        .max_by(|a, b| a.max_rel_err().total_cmp(&b.max_rel_err()))
        .expect("suite is not empty");
    if let Some(bad) = reports.iter().find(|r| !r.passed()) {
        let w = bad.worst.as_ref().expect("a failing check has a worst entry");
        return Err(Error::GradCheck {
            name: format!("{} ({}[{}])", bad.label, w.name, w.index),
            reason: format!("relative error {:.3e} exceeds {:.0e}", w.rel_err, bad.tol),
        });
    }
    say(
        out,
        format!(
            "{} checks passed; worst {:.3e} in {}",
            reports.len(),
            worst.max_rel_err(),
            worst.label
        ),
    )
}

/// Maps of one test sample: predicted heatmap, target heatmap, cone mask
/// (all zero when out of frame) and head prior.
pub fn render_maps(model: &Model, sample: &GazeSample, cfg: &RunConfig) -> Result<[(&'static str, Tensor); 4]> {
    let grid = model.cfg.grid;
    let shape = [grid.height, grid.width];
    let pred = model.predict(&sample.features, sample.head_box)?;
    let gaze = sample.gaze_points.first().copied();
    let target = gt_heatmap(gaze, grid, cfg.sigma_h)?.values;
    let cone = match gaze {
        Some(g) => {
            cone_mask(
                sample.head_center(),
                g,
                cfg.cone_angle_deg.to_radians(),
                cfg.cone_sharpness,
                grid,
                DEFAULT_EPS,
            )?
            .values
        }
        None => Tensor::zeros(&shape),
    };
    let prior = model.prior(sample.head_box)?.reshape(&shape)?;
    Ok([
        ("pred", pred.heatmap),
        ("target", target),
        ("cone", cone),
        ("prior", prior),
    ])
}

pub fn cmd_render(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let model = load_model(&cfg.checkpoint_path())?;
    check_scene(&model, &cfg.scene)?;
    let samples = read_split(cfg, Split::Test)?;
    let i = cfg.render_index;
    let sample = samples.get(i).ok_or_else(|| {
        Error::InvalidArgument(format!("render.index {i} out of range for {} test samples", samples.len()))
    })?;
    let dir = cfg.render_dir();
    create_dir(&dir)?;
    for (name, map) in render_maps(&model, sample, cfg)? {
        let path = dir.join(format!("sample{i}_{name}.pgm"));
        write_pgm(&path, &map)?;
        say(out, format!("wrote {}", path.display()))?;
    }
    Ok(())
}
