//! Deterministic synthetic gaze scenes with planted salient distractors.
//!
//! A scene is a grid of token features. Background cells are isotropic noise,
//! distractor cells carry a fixed signature, and the head cell carries the gaze
//! direction in its first two channels plus a fixed head signature. Everything
//! is a pure function of the sample seed and the [`SceneConfig`], so datasets
//! are stored without features and regenerated on read.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::Consistency;
use crate::geometry::{GridSpec, HeadBox, Point};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Seed for the fixed head and distractor signatures shared by every scene.
const SIGNATURE_SEED: u64 = 0x5EED_0F_5CE4E;
const MAX_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub grid: GridSpec,
    pub d_in: usize,
    pub min_distractors: usize,
    pub max_distractors: usize,
    /// Distractor box side, normalized.
    pub distractor_size: f64,
    pub distractor_strength: f64,
    /// Head box side in cells.
    pub head_cells: usize,
    pub head_strength: f64,
    pub background_std: f64,
    /// Angular noise on the encoded gaze direction, radians.
    pub eta: f64,
    pub p_consistent: f64,
    pub p_out: f64,
    /// Annotator jitter std, normalized.
    pub jitter: f64,
    /// Minimum head-to-target distance, normalized.
    pub min_range: f64,
    /// Keep-out margin between the head box and distractor boxes.
    pub head_margin: f64,
    /// Inconsistent targets stay at least this far outside every distractor box.
    pub target_margin: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            grid: GridSpec { height: 16, width: 16 },
            d_in: 32,
            min_distractors: 1,
            max_distractors: 3,
            distractor_size: 0.25,
            distractor_strength: 1.0,
            head_cells: 1,
            head_strength: 0.5,
            background_std: 0.1,
            eta: 0.0,
            p_consistent: 0.5,
            p_out: 0.1,
            jitter: 1.0 / 16.0,
            min_range: 0.2,
            head_margin: 0.05,
            target_margin: 0.03,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, p) in [("p_consistent", self.p_consistent), ("p_out", self.p_out)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must be in [0,1], got {p}"));
            }
        }
        if self.d_in < 3 {
            return bad(format!("d_in must be at least 3, got {}", self.d_in));
        }
        if self.min_distractors == 0 || self.min_distractors > self.max_distractors {
            return bad(format!(
                "distractor count range {}..={} is invalid",
                self.min_distractors, self.max_distractors
            ));
        }
        if !(self.distractor_size > 0.0 && self.distractor_size < 1.0) {
            return bad(format!("distractor_size must be in (0,1), got {}", self.distractor_size));
        }
        if self.head_cells == 0
            || self.head_cells > self.grid.width
            || self.head_cells > self.grid.height
        {
            return bad(format!("head_cells {} does not fit the grid", self.head_cells));
        }
        for (name, v) in [
            ("eta", self.eta),
            ("jitter", self.jitter),
            ("background_std", self.background_std),
            ("min_range", self.min_range),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        Ok(())
    }

    /// Stable digest of the configuration, stored with every record.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn annotators(self) -> usize {
        match self {
            Split::Train => 1,
            Split::Test => 3,
        }
    }

    fn tag(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Test => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GazeSample {
    pub seed: u64,
    pub features: Tensor,
    pub head_box: HeadBox,
    /// The target before annotator jitter; `None` when out of frame.
    pub true_target: Option<Point>,
    pub gaze_points: Vec<Point>,
    pub distractors: Vec<HeadBox>,
    pub in_frame: bool,
    pub split: Split,
}

impl GazeSample {
    pub fn head_center(&self) -> Point {
        self.head_box.center()
    }

    pub fn consistency(&self) -> Result<Consistency> {
        partition_consistency(&self.gaze_points, &self.distractors)
    }
}

/// Fixed (head, distractor) signatures for a feature width.
fn signatures(d_in: usize) -> (Vec<f64>, Vec<f64>) {
    let mut rng = Rng::new(SIGNATURE_SEED);
    let head: Vec<f64> = (0..d_in).map(|_| rng.normal()).collect();
    let dist: Vec<f64> = (0..d_in).map(|_| rng.normal()).collect();
    (head, dist)
}

/// Head direction channels `(cos, sin)` are written here; the signature fills the rest.
pub const DIRECTION_CHANNELS: [usize; 2] = [0, 1];

/// Builds one scene. Same seed and config always give the same sample.
pub fn generate_sample(seed: u64, cfg: &SceneConfig, split: Split) -> Result<GazeSample> {
    let mut rng = Rng::new(seed);
    let grid = cfg.grid;
    let (w, h) = (grid.width as f64, grid.height as f64);
    let gen_err = |reason: &str| Error::Generation {
        seed,
        reason: reason.to_string(),
    };

    let mut layout = None;
    for _ in 0..MAX_ATTEMPTS {
        let hu = rng.int_range(0, grid.width - cfg.head_cells);
        let hv = rng.int_range(0, grid.height - cfg.head_cells);
        let head_box = HeadBox::new(
            hu as f64 / w,
            hv as f64 / h,
            (hu + cfg.head_cells) as f64 / w,
            (hv + cfg.head_cells) as f64 / h,
        )?;
        let n = rng.int_range(cfg.min_distractors, cfg.max_distractors);
        let mut distractors: Vec<HeadBox> = Vec::with_capacity(n);
        for _ in 0..n {
            for _ in 0..MAX_ATTEMPTS {
                let x0 = rng.uniform_range(0.0, 1.0 - cfg.distractor_size);
                let y0 = rng.uniform_range(0.0, 1.0 - cfg.distractor_size);
                let b = HeadBox::new(x0, y0, x0 + cfg.distractor_size, y0 + cfg.distractor_size)?;
                if !b.overlaps(head_box, cfg.head_margin)
                    && distractors.iter().all(|o| !b.overlaps(*o, 0.0))
                {
                    distractors.push(b);
                    break;
                }
            }
        }
        if distractors.len() < cfg.min_distractors {
            continue;
        }
        let head = head_box.center();
        let in_frame = !rng.bernoulli(cfg.p_out);
        let target = if !in_frame {
            let a = rng.uniform_range(-std::f64::consts::PI, std::f64::consts::PI);
            Some((None, Point::new(a.cos(), a.sin())))
        } else if rng.bernoulli(cfg.p_consistent) {
            let b = distractors[rng.int_range(0, distractors.len() - 1)];
            let g = b.center();
            (g.dist(head) >= cfg.min_range).then(|| (Some(g), unit(g.sub(head))))
        } else {
            let mut found = None;
            for _ in 0..MAX_ATTEMPTS {
                let g = Point::new(rng.uniform_range(0.02, 0.98), rng.uniform_range(0.02, 0.98));
                let clear = distractors.iter().all(|b| {
                    let [x0, y0, x1, y1] = b.to_array();
                    let m = cfg.target_margin;
                    !(g.x >= x0 - m && g.x <= x1 + m && g.y >= y0 - m && g.y <= y1 + m)
                });
                if clear && g.dist(head) >= cfg.min_range {
                    found = Some((Some(g), unit(g.sub(head))));
                    break;
                }
            }
            found
        };
        if let Some((g, dir)) = target {
            layout = Some((head_box, distractors, in_frame, g, dir));
            break;
        }
    }
    let (head_box, distractors, in_frame, true_target, dir) =
        layout.ok_or_else(|| gen_err("scene placement failed after 100 attempts"))?;

    let noisy = dir.rotate(cfg.eta * rng.normal());
    let (head_sig, dist_sig) = signatures(cfg.d_in);
    let mut features = rng.gaussian_tensor(&[grid.cells(), cfg.d_in], cfg.background_std);
    for (n, c) in grid.centers().enumerate() {
        let row = &mut features.data_mut()[n * cfg.d_in..(n + 1) * cfg.d_in];
        for b in &distractors {
            if b.contains(c) {
                for (f, s) in row.iter_mut().zip(&dist_sig) {
                    *f += cfg.distractor_strength * s;
                }
            }
        }
        if head_box.contains(c) {
            for (f, s) in row.iter_mut().zip(&head_sig) {
                *f += cfg.head_strength * s;
            }
            row[DIRECTION_CHANNELS[0]] = noisy.x;
            row[DIRECTION_CHANNELS[1]] = noisy.y;
        }
    }

    let gaze_points = match true_target {
        Some(g) => (0..split.annotators())
            .map(|_| {
                Point::new(
                    (g.x + cfg.jitter * rng.normal()).clamp(0.0, 1.0),
                    (g.y + cfg.jitter * rng.normal()).clamp(0.0, 1.0),
                )
            })
            .collect(),
        None => Vec::new(),
    };
    Ok(GazeSample {
        seed,
        features,
        head_box,
        true_target,
        gaze_points,
        distractors,
        in_frame,
        split,
    })
}

fn unit(p: Point) -> Point {
    let n = p.norm();
    Point::new(p.x / n, p.y / n)
}

/// Reads the encoded gaze direction back out of the head cells.
pub fn decode_direction(sample: &GazeSample, grid: GridSpec) -> Option<Point> {
    let n = grid.centers().position(|c| sample.head_box.contains(c))?;
    let row = sample.features.row(n);
    Some(Point::new(row[DIRECTION_CHANNELS[0]], row[DIRECTION_CHANNELS[1]]))
}

/// Consistent when strictly more than half the annotations fall inside a
/// distractor box; a single annotation needs to be inside.
pub fn partition_consistency(gaze_points: &[Point], distractors: &[HeadBox]) -> Result<Consistency> {
    if gaze_points.is_empty() {
        return Err(Error::NotApplicable("out-of-frame sample has no consistency label"));
    }
    let inside = gaze_points
        .iter()
        .filter(|g| distractors.iter().any(|b| b.contains(**g)))
        .count();
    Ok(if 2 * inside > gaze_points.len() {
        Consistency::Consistent
    } else {
        Consistency::Inconsistent
    })
}

/// Per-sample seeds for a split, derived from the master seed.
pub fn sample_seeds(master_seed: u64, split: Split, n: usize) -> Vec<u64> {
    let mut rng = Rng::new(master_seed).fork(split.tag());
    (0..n).map(|_| rng.next_u64()).collect()
}

pub fn generate_dataset(master_seed: u64, cfg: &SceneConfig, split: Split, n: usize) -> Result<Vec<GazeSample>> {
    cfg.validate()?;
    sample_seeds(master_seed, split, n)
        .into_iter()
        .map(|s| generate_sample(s, cfg, split))
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    seed: u64,
    cfg_hash: String,
    head_box: [f64; 4],
    gaze_points: Vec<[f64; 2]>,
    distractors: Vec<[f64; 4]>,
    in_frame: u8,
    split: Split,
}

pub fn write_dataset(samples: &[GazeSample], cfg: &SceneConfig, path: &Path) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    let cfg_hash = cfg.hash();
    for s in samples {
        let rec = Record {
            seed: s.seed,
            cfg_hash: cfg_hash.clone(),
            head_box: s.head_box.to_array(),
            gaze_points: s.gaze_points.iter().map(|p| [p.x, p.y]).collect(),
            distractors: s.distractors.iter().map(|b| b.to_array()).collect(),
            in_frame: s.in_frame as u8,
            split: s.split,
        };
        let line = serde_json::to_string(&rec).expect("record serializes");
        writeln!(out, "{line}").map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Reads a dataset and regenerates features from each seed. Records must carry
/// the hash of `cfg` and agree with what the generator produces.
pub fn read_dataset(path: &Path, cfg: &SceneConfig) -> Result<Vec<GazeSample>> {
    cfg.validate()?;
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let expected = cfg.hash();
    let mut samples = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let parse = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            msg,
        };
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| parse(e.to_string()))?;
        if rec.cfg_hash != expected {
            return Err(Error::Incompatible(format!(
                "{}:{line_no}: dataset config hash {} does not match {}",
                path.display(),
                rec.cfg_hash,
                expected
            )));
        }
        let s = generate_sample(rec.seed, cfg, rec.split)?;
        let same = s.head_box.to_array() == rec.head_box
            && s.in_frame == (rec.in_frame != 0)
            && s.gaze_points.iter().map(|p| [p.x, p.y]).eq(rec.gaze_points.iter().copied())
            && s.distractors.iter().map(|b| b.to_array()).eq(rec.distractors.iter().copied());
        if !same {
            return Err(parse("record does not match the regenerated scene".to_string()));
        }
        samples.push(s);
    }
    Ok(samples)
}
