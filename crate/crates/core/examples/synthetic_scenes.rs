//! Generate scenes, write them as JSONL, read them back and split by consistency.

use hclora::datagen::{decode_direction, generate_dataset, read_dataset, write_dataset, SceneConfig, Split};
use hclora::eval::Consistency;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = SceneConfig::default();
    let samples = generate_dataset(7, &cfg, Split::Test, 200)?;
    let dir = std::env::temp_dir().join("hclora-synthetic-scenes");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("test.jsonl");
    write_dataset(&samples, &cfg, &path)?;
    let back = read_dataset(&path, &cfg)?;
    println!("wrote and re-read {} samples: identical = {}", back.len(), back == samples);

    let (mut cons, mut inc, mut out) = (0, 0, 0);
    for s in &samples {
        match s.consistency() {
            Ok(Consistency::Consistent) => cons += 1,
            Ok(Consistency::Inconsistent) => inc += 1,
            Err(_) => out += 1,
        }
    }
    println!("consistent {cons}, inconsistent {inc}, out of frame {out}");

    let s = samples.iter().find(|s| s.in_frame).expect("some sample is in frame");
    let d = decode_direction(s, cfg.grid).expect("head cell present");
    println!(
        "sample {}: head at ({:.3}, {:.3}), encoded direction ({:+.3}, {:+.3}), annotations {:?}",
        s.seed,
        s.head_center().x,
        s.head_center().y,
        d.x,
        d.y,
        s.gaze_points.iter().map(|p| (p.x, p.y)).collect::<Vec<_>>()
    );
    println!("first record: {}", std::fs::read_to_string(&path)?.lines().next().unwrap_or(""));
    Ok(())
}

