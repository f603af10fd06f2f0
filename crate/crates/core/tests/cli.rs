use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hclora::datagen::{read_dataset, SceneConfig};
use hclora::geometry::GridSpec;

const SMALL: &str = "\
seed = 3
data.n_train = 40
data.n_test = 24
scene.grid = 16
scene.d_in = 8
model.d = 8
model.n_layers = 2
model.n_heads = 2
model.adapted_layers = 0,1
model.aux_layers = 2
model.rank = 2
pretrain.epochs = 1
train.epochs = 1
";

struct Run {
    dir: tempfile::TempDir,
    cfg: PathBuf,
}

impl Run {
    fn new() -> Run {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("small.cfg");
        let text = format!("{SMALL}paths.out = {}\n", dir.path().join("out").display());
        std::fs::write(&cfg, text).unwrap();
        Run { dir, cfg }
    }

    fn out(&self) -> PathBuf {
        self.dir.path().join("out")
    }

    fn call(&self, cmd: &str, sets: &[&str]) -> Output {
        let mut c = Command::new(env!("CARGO_BIN_EXE_hclora"));
        c.arg(cmd).arg("--config").arg(&self.cfg);
        for s in sets {
            c.arg("--set").arg(s);
        }
        c.output().unwrap()
    }

    fn ok(&self, cmd: &str, sets: &[&str]) -> String {
        let o = self.call(cmd, sets);
        assert!(o.status.success(), "{cmd} failed: {}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8(o.stdout).unwrap()
    }

    fn prepared() -> Run {
        let r = Run::new();
        r.ok("gen-data", &[]);
        r.ok("pretrain", &[]);
        r
    }
}

fn epoch_lines(stdout: &str) -> Vec<&str> {
    stdout.lines().filter(|l| l.starts_with("epoch")).collect()
}

fn field(line: &str, name: &str) -> f64 {
    let mut it = line.split_whitespace();
    while let Some(w) = it.next() {
        if w == name {
            return it.next().unwrap().parse().unwrap();
        }
    }
    panic!("no {name} in {line}");
}

#[test]
fn unknown_key_is_a_config_error() {
    let r = Run::new();
    let o = r.call("gen-data", &["model.widht=3"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("model.widht"));
}

#[test]
fn bad_value_in_file_names_the_line() {
    let r = Run::new();
    std::fs::write(&r.cfg, "seed = 1\nmodel.rank = lots\n").unwrap();
    let o = r.call("gen-data", &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains(":2:"));
}

#[test]
fn missing_checkpoint_exits_with_one() {
    let r = Run::new();
    r.ok("gen-data", &[]);
    let o = r.call("eval", &["train.mode=hclora"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!o.stderr.is_empty());
}

#[test]
fn gen_data_reports_both_subsets() {
    let r = Run::new();
    let out = r.ok("gen-data", &["data.n_test=400"]);
    assert!(out.contains("# gen-data with resolved config:"));
    let line = out.lines().find(|l| l.contains("test.jsonl")).unwrap();
    let words: Vec<&str> = line.split([' ', ',']).filter(|w| !w.is_empty()).collect();
    let count = |tag: &str| -> usize {
        let k = words.iter().position(|w| *w == tag).unwrap();
        words[k - 1].parse().unwrap()
    };
    assert!(count("consistent") > 0, "{line}");
    assert!(count("inconsistent") > 0, "{line}");
}

#[test]
fn adaptation_pipeline() {
    let r = Run::prepared();

    // Frozen has nothing to train.
    let o = r.call("train", &["train.mode=frozen"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("trainable parameters: 0"));

    let plain = r.ok("train", &["train.mode=hclora"]);
    let lines = epoch_lines(&plain);
    assert_eq!(lines.len(), 1);
    assert!(!lines[0].contains("aux"));

    let ooc = r.ok("train", &["train.mode=hclora+ooc"]);
    assert!(epoch_lines(&ooc)[0].contains("aux"));

    // With lambda = 0 the aux term is logged but adds nothing.
    let silent = r.ok("train", &["train.mode=hclora+ooc", "loss.lambda=0"]);
    let l = epoch_lines(&silent)[0];
    assert!(field(l, "aux") > 0.0);
    assert!((field(l, "total") - field(l, "heat") - field(l, "inout")).abs() < 2e-6, "{l}");

    let eval = r.ok("eval", &["train.mode=hclora+ooc"]);
    assert!(eval.contains("inconsistent"));
    let report = r.out().join("hclora+ooc.report.json");
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(report).unwrap()).unwrap();
    assert_eq!(json["label"], "hclora+ooc");
    assert_eq!(json["n_samples"], 24);

    // The pretext checkpoint evaluates as the frozen baseline.
    r.ok("eval", &["train.mode=frozen"]);
    assert!(r.out().join("frozen.report.json").exists());

    let o = r.call("render", &["train.mode=hclora+ooc", "render.index=24"]);
    assert_eq!(o.status.code(), Some(1));

    let test = read_dataset(&r.out().join("data/test.jsonl"), &scene()).unwrap();
    let i = test.iter().position(|s| s.in_frame).unwrap();
    r.ok("render", &["train.mode=hclora+ooc", &format!("render.index={i}")]);
    for name in ["pred", "target", "cone", "prior"] {
        let bytes = std::fs::read(r.out().join(format!("render/sample{i}_{name}.pgm"))).unwrap();
        assert!(bytes.starts_with(b"P5 16 16 255\n"), "{name}");
        assert_eq!(bytes.len(), 13 + 256);
    }
    check_cone_render(&r.out().join(format!("render/sample{i}_cone.pgm")), &test[i]);
}

fn scene() -> SceneConfig {
    SceneConfig {
        grid: GridSpec::square(16).unwrap(),
        d_in: 8,
        ..SceneConfig::default()
    }
}

/// Dark behind the head, bright along the gaze ray.
fn check_cone_render(path: &Path, s: &hclora::datagen::GazeSample) {
    let px = &std::fs::read(path).unwrap()[13..];
    let grid = GridSpec::square(16).unwrap();
    let h = s.head_center();
    let g = s.gaze_points[0];
    let dir = g.sub(h);
    let mut behind = 0u8;
    for (k, c) in grid.centers().enumerate() {
        let rel = c.sub(h);
        let t = rel.dot(dir) / dir.norm();
        if t < -0.1 {
            behind = behind.max(px[k]);
        }
    }
    let ahead = px[grid.cell_of(g)];
    assert!(behind <= 1, "bright pixel {behind} behind the head");
    assert!(ahead >= 200, "gaze cell only {ahead}");
}
