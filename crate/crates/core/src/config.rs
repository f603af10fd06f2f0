//! Flat `key = value` run configuration shared by every command.
//!
//! A config file holds one assignment per line; `#` starts a comment. Keys not
//! listed in [`RunConfig::KEYS`] are rejected. Command-line `--set k=v`
//! overrides are applied after the file, in order.

use std::path::{Path, PathBuf};

use crate::datagen::SceneConfig;
use crate::error::{Error, Result};
use crate::eval::DEFAULT_TAIL_THRESHOLDS;
use crate::geometry::GridSpec;
use crate::losses::{AuxStrategy, LossWeights};
use crate::model::{AdapterMode, BackboneConfig, Site};
use crate::optim::OptimizerKind;
use crate::train::TrainConfig;

/// Adapter mode plus auxiliary supervision, as selected by `train.mode`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunMode {
    pub adapter: AdapterMode,
    pub strategy: AuxStrategy,
}

impl RunMode {
    /// Accepts `frozen`, `lora`, `hclora`, `<lora|hclora>+<ooc|gaze-vector|heatmap|gaze-cone>`
    /// and the bare strategy names, which imply `hclora`.
    pub fn parse(s: &str) -> Result<RunMode> {
        let strategy = |t: &str| match t {
            "ooc" => Some(AuxStrategy::OutOfCone),
            "gaze-vector" => Some(AuxStrategy::GazeVector),
            "heatmap" => Some(AuxStrategy::Heatmap),
            "gaze-cone" => Some(AuxStrategy::GazeCone),
            _ => None,
        };
        let adapter = |t: &str| match t {
            "frozen" => Some(AdapterMode::Frozen),
            "lora" => Some(AdapterMode::Lora),
            "hclora" => Some(AdapterMode::HcLora),
            _ => None,
        };
        let bad = || Error::Config(format!("unknown train.mode '{s}'"));
        if let Some(st) = strategy(s) {
            return Ok(RunMode {
                adapter: AdapterMode::HcLora,
                strategy: st,
            });
        }
        let (a, st) = match s.split_once('+') {
            Some((a, st)) => (a, Some(st)),
            None => (s, None),
        };
        let adapter = adapter(a).ok_or_else(bad)?;
        let strategy = match st {
            None => AuxStrategy::None,
            Some(t) => strategy(t).ok_or_else(bad)?,
        };
        if adapter == AdapterMode::Frozen && strategy != AuxStrategy::None {
            return Err(bad());
        }
        Ok(RunMode { adapter, strategy })
    }

    pub fn name(self) -> String {
        match self.strategy {
            AuxStrategy::None => self.adapter.name().to_string(),
            s => format!("{}+{}", self.adapter.name(), s.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageConfig {
    pub epochs: usize,
    pub lr: f64,
    pub optimizer: String,
    pub momentum: f64,
    pub batch_size: usize,
}

impl StageConfig {
    fn optimizer_kind(&self) -> Result<OptimizerKind> {
        match self.optimizer.as_str() {
            "sgd" => Ok(OptimizerKind::Sgd { momentum: self.momentum }),
            "adam" => Ok(OptimizerKind::adam()),
            o => Err(Error::Config(format!("unknown optimizer '{o}' (sgd|adam)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub scene: SceneConfig,
    pub backbone: BackboneConfig,
    pub pretrain: StageConfig,
    pub train: StageConfig,
    pub mode: String,
    pub beta: f64,
    pub lambda: f64,
    pub sigma_h: f64,
    pub cone_angle_deg: f64,
    pub cone_sharpness: f64,
    pub tail_thresholds: Vec<f64>,
    pub render_index: usize,
    pub out_dir: PathBuf,
    pub data_dir: Option<PathBuf>,
    pub pretext_path: Option<PathBuf>,
    pub checkpoint_path: Option<PathBuf>,
    pub report_path: Option<PathBuf>,
    pub render_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        RunConfig {
            seed: 0,
            n_train: 2000,
            n_test: 2000,
            scene: SceneConfig::default(),
            backbone: BackboneConfig::default(),
            pretrain: StageConfig {
                epochs: 3,
                lr: 3e-3,
                optimizer: "adam".into(),
                momentum: 0.9,
                batch_size: 8,
            },
            train: StageConfig {
                epochs: t.epochs,
                lr: t.lr,
                optimizer: "adam".into(),
                momentum: 0.9,
                batch_size: t.batch_size,
            },
            mode: "hclora+ooc".into(),
            beta: t.weights.beta,
            lambda: t.weights.lambda,
            sigma_h: t.sigma_h,
            cone_angle_deg: t.cone_angle_deg,
            cone_sharpness: t.cone_sharpness,
            tail_thresholds: DEFAULT_TAIL_THRESHOLDS.to_vec(),
            render_index: 0,
            out_dir: PathBuf::from("runs/default"),
            data_dir: None,
            pretext_path: None,
            checkpoint_path: None,
            report_path: None,
            render_dir: None,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{v}'")))
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|x| parse_num(key, x.trim())).collect()
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn opt_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

fn set_opt_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

impl RunConfig {
    pub const KEYS: &'static [&'static str] = &[
        "seed",
        "data.n_train",
        "data.n_test",
        "scene.grid",
        "scene.d_in",
        "scene.min_distractors",
        "scene.max_distractors",
        "scene.distractor_size",
        "scene.distractor_strength",
        "scene.head_cells",
        "scene.head_strength",
        "scene.background_std",
        "scene.eta",
        "scene.p_consistent",
        "scene.p_out",
        "scene.jitter",
        "scene.min_range",
        "scene.head_margin",
        "scene.target_margin",
        "model.d",
        "model.n_layers",
        "model.n_heads",
        "model.mlp_ratio",
        "model.adapted_layers",
        "model.aux_layers",
        "model.rank",
        "model.sites",
        "pretrain.epochs",
        "pretrain.lr",
        "pretrain.optimizer",
        "pretrain.momentum",
        "pretrain.batch_size",
        "train.mode",
        "train.epochs",
        "train.lr",
        "train.optimizer",
        "train.momentum",
        "train.batch_size",
        "loss.beta",
        "loss.lambda",
        "loss.sigma_h",
        "loss.cone_angle",
        "loss.cone_sharpness",
        "eval.tail_thresholds",
        "render.index",
        "paths.out",
        "paths.data",
        "paths.pretext",
        "paths.checkpoint",
        "paths.report",
        "paths.render",
    ];

    /// Defaults, then the file, then each override.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            cfg.apply_text(&text, &path.display().to_string())?;
        }
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override '{o}' is not key=value")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{origin}:{}: expected key = value", i + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("{origin}:{}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let s = &mut self.scene;
        let b = &mut self.backbone;
        match key {
            "seed" => self.seed = parse_num(key, v)?,
            "data.n_train" => self.n_train = parse_num(key, v)?,
            "data.n_test" => self.n_test = parse_num(key, v)?,
            "scene.grid" => {
                let n: usize = parse_num(key, v)?;
                let grid = GridSpec::square(n).map_err(|e| Error::Config(format!("{key}: {e}")))?;
                s.grid = grid;
                b.grid = grid;
            }
            "scene.d_in" => {
                s.d_in = parse_num(key, v)?;
                b.d_in = s.d_in;
            }
            "scene.min_distractors" => s.min_distractors = parse_num(key, v)?,
            "scene.max_distractors" => s.max_distractors = parse_num(key, v)?,
            "scene.distractor_size" => s.distractor_size = parse_num(key, v)?,
            "scene.distractor_strength" => s.distractor_strength = parse_num(key, v)?,
            "scene.head_cells" => s.head_cells = parse_num(key, v)?,
            "scene.head_strength" => s.head_strength = parse_num(key, v)?,
            "scene.background_std" => s.background_std = parse_num(key, v)?,
            "scene.eta" => s.eta = parse_num(key, v)?,
            "scene.p_consistent" => s.p_consistent = parse_num(key, v)?,
            "scene.p_out" => s.p_out = parse_num(key, v)?,
            "scene.jitter" => s.jitter = parse_num(key, v)?,
            "scene.min_range" => s.min_range = parse_num(key, v)?,
            "scene.head_margin" => s.head_margin = parse_num(key, v)?,
            "scene.target_margin" => s.target_margin = parse_num(key, v)?,
            "model.d" => b.d = parse_num(key, v)?,
            "model.n_layers" => b.n_layers = parse_num(key, v)?,
            "model.n_heads" => b.n_heads = parse_num(key, v)?,
            "model.mlp_ratio" => b.mlp_ratio = parse_num(key, v)?,
            "model.adapted_layers" => b.adapted_layers = parse_list(key, v)?,
            "model.aux_layers" => b.aux_layers = parse_num(key, v)?,
            "model.rank" => b.rank = parse_num(key, v)?,
            "model.sites" => {
                b.sites = v
                    .split(',')
                    .map(|x| Site::parse(x.trim()).map_err(|e| Error::Config(format!("{key}: {e}"))))
                    .collect::<Result<_>>()?
            }
            "pretrain.epochs" => self.pretrain.epochs = parse_num(key, v)?,
            "pretrain.lr" => self.pretrain.lr = parse_num(key, v)?,
            "pretrain.optimizer" => self.pretrain.optimizer = v.to_string(),
            "pretrain.momentum" => self.pretrain.momentum = parse_num(key, v)?,
            "pretrain.batch_size" => self.pretrain.batch_size = parse_num(key, v)?,
            "train.mode" => self.mode = v.to_string(),
            "train.epochs" => self.train.epochs = parse_num(key, v)?,
            "train.lr" => self.train.lr = parse_num(key, v)?,
            "train.optimizer" => self.train.optimizer = v.to_string(),
            "train.momentum" => self.train.momentum = parse_num(key, v)?,
            "train.batch_size" => self.train.batch_size = parse_num(key, v)?,
            "loss.beta" => self.beta = parse_num(key, v)?,
            "loss.lambda" => self.lambda = parse_num(key, v)?,
            "loss.sigma_h" => self.sigma_h = parse_num(key, v)?,
            "loss.cone_angle" => self.cone_angle_deg = parse_num(key, v)?,
            "loss.cone_sharpness" => self.cone_sharpness = parse_num(key, v)?,
            "eval.tail_thresholds" => self.tail_thresholds = parse_list(key, v)?,
            "render.index" => self.render_index = parse_num(key, v)?,
            "paths.out" => self.out_dir = PathBuf::from(v),
            "paths.data" => self.data_dir = set_opt_path(v),
            "paths.pretext" => self.pretext_path = set_opt_path(v),
            "paths.checkpoint" => self.checkpoint_path = set_opt_path(v),
            "paths.report" => self.report_path = set_opt_path(v),
            "paths.render" => self.render_dir = set_opt_path(v),
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let s = &self.scene;
        let b = &self.backbone;
        Some(match key {
            "seed" => self.seed.to_string(),
            "data.n_train" => self.n_train.to_string(),
            "data.n_test" => self.n_test.to_string(),
            "scene.grid" => s.grid.width.to_string(),
            "scene.d_in" => s.d_in.to_string(),
            "scene.min_distractors" => s.min_distractors.to_string(),
            "scene.max_distractors" => s.max_distractors.to_string(),
            "scene.distractor_size" => s.distractor_size.to_string(),
            "scene.distractor_strength" => s.distractor_strength.to_string(),
            "scene.head_cells" => s.head_cells.to_string(),
            "scene.head_strength" => s.head_strength.to_string(),
            "scene.background_std" => s.background_std.to_string(),
            "scene.eta" => s.eta.to_string(),
            "scene.p_consistent" => s.p_consistent.to_string(),
            "scene.p_out" => s.p_out.to_string(),
            "scene.jitter" => s.jitter.to_string(),
            "scene.min_range" => s.min_range.to_string(),
            "scene.head_margin" => s.head_margin.to_string(),
            "scene.target_margin" => s.target_margin.to_string(),
            "model.d" => b.d.to_string(),
            "model.n_layers" => b.n_layers.to_string(),
            "model.n_heads" => b.n_heads.to_string(),
            "model.mlp_ratio" => b.mlp_ratio.to_string(),
            "model.adapted_layers" => join(&b.adapted_layers),
            "model.aux_layers" => b.aux_layers.to_string(),
            "model.rank" => b.rank.to_string(),
            "model.sites" => b.sites.iter().map(|s| s.name()).collect::<Vec<_>>().join(","),
            "pretrain.epochs" => self.pretrain.epochs.to_string(),
            "pretrain.lr" => self.pretrain.lr.to_string(),
            "pretrain.optimizer" => self.pretrain.optimizer.clone(),
            "pretrain.momentum" => self.pretrain.momentum.to_string(),
            "pretrain.batch_size" => self.pretrain.batch_size.to_string(),
            "train.mode" => self.mode.clone(),
            "train.epochs" => self.train.epochs.to_string(),
            "train.lr" => self.train.lr.to_string(),
            "train.optimizer" => self.train.optimizer.clone(),
            "train.momentum" => self.train.momentum.to_string(),
            "train.batch_size" => self.train.batch_size.to_string(),
            "loss.beta" => self.beta.to_string(),
            "loss.lambda" => self.lambda.to_string(),
            "loss.sigma_h" => self.sigma_h.to_string(),
            "loss.cone_angle" => self.cone_angle_deg.to_string(),
            "loss.cone_sharpness" => self.cone_sharpness.to_string(),
            "eval.tail_thresholds" => join(&self.tail_thresholds),
            "render.index" => self.render_index.to_string(),
            "paths.out" => self.out_dir.display().to_string(),
            "paths.data" => opt_path(&self.data_dir),
            "paths.pretext" => opt_path(&self.pretext_path),
            "paths.checkpoint" => opt_path(&self.checkpoint_path),
            "paths.report" => opt_path(&self.report_path),
            "paths.render" => opt_path(&self.render_dir),
            _ => return None,
        })
    }

    /// Every key with its resolved value, one `key = value` per line.
    pub fn resolved(&self) -> String {
        let mut out = String::new();
        for k in Self::KEYS {
            out.push_str(&format!("{k} = {}\n", self.get(k).expect("listed key")));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.backbone.validate()?;
        self.run_mode()?;
        self.pretrain.optimizer_kind()?;
        self.train.optimizer_kind()?;
        LossWeights::new(self.beta, self.lambda).map_err(|e| Error::Config(e.to_string()))?;
        if self.pretrain.batch_size == 0 || self.train.batch_size == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        if !(self.sigma_h > 0.0) {
            return Err(Error::Config(format!("loss.sigma_h must be positive, got {}", self.sigma_h)));
        }
        if !(self.cone_angle_deg > 0.0 && self.cone_angle_deg < 180.0) || !(self.cone_sharpness > 0.0) {
            return Err(Error::Config(format!(
                "cone angle {} must be in (0,180) and sharpness {} positive",
                self.cone_angle_deg, self.cone_sharpness
            )));
        }
        Ok(())
    }

    pub fn run_mode(&self) -> Result<RunMode> {
        RunMode::parse(&self.mode)
    }

    fn stage(&self, stage: &StageConfig, strategy: AuxStrategy) -> Result<TrainConfig> {
        Ok(TrainConfig {
            epochs: stage.epochs,
            lr: stage.lr,
            optimizer: stage.optimizer_kind()?,
            batch_size: stage.batch_size,
            sigma_h: self.sigma_h,
            weights: LossWeights::new(self.beta, self.lambda)?,
            strategy,
            cone_angle_deg: self.cone_angle_deg,
            cone_sharpness: self.cone_sharpness,
            seed: self.seed,
        })
    }

    pub fn pretrain_config(&self) -> Result<TrainConfig> {
        self.stage(&self.pretrain, AuxStrategy::None)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        self.stage(&self.train, self.run_mode()?.strategy)
    }

    pub fn data_dir(&self) -> PathBuf {
        self.data_dir.clone().unwrap_or_else(|| self.out_dir.join("data"))
    }

    pub fn train_data(&self) -> PathBuf {
        self.data_dir().join("train.jsonl")
    }

    pub fn test_data(&self) -> PathBuf {
        self.data_dir().join("test.jsonl")
    }

    pub fn pretext_path(&self) -> PathBuf {
        self.pretext_path.clone().unwrap_or_else(|| self.out_dir.join("pretext.ckpt"))
    }

    /// Checkpoint written by `train` and read by `eval` and `render`.
    /// Mode `frozen` resolves to the pretext checkpoint.
    pub fn checkpoint_path(&self) -> PathBuf {
        if let Some(p) = &self.checkpoint_path {
            return p.clone();
        }
        match self.run_mode() {
            Ok(m) if m.adapter == AdapterMode::Frozen => self.pretext_path(),
            _ => self.out_dir.join(format!("{}.ckpt", self.mode)),
        }
    }

    pub fn report_path(&self) -> PathBuf {
        self.report_path
            .clone()
            .unwrap_or_else(|| self.out_dir.join(format!("{}.report.json", self.mode)))
    }

    pub fn render_dir(&self) -> PathBuf {
        self.render_dir.clone().unwrap_or_else(|| self.out_dir.join("render"))
    }
}
