//! Print the head prior and the soft gaze cone for one head/target pair.

use hclora::geometry::{
    cone_mask, head_prior, GridSpec, HeadBox, Point, DEFAULT_CONE_ANGLE_DEG, DEFAULT_CONE_SHARPNESS,
    DEFAULT_EPS,
};
use hclora::tensor::Tensor;

fn show(title: &str, t: &Tensor) {
    println!("{title}");
    for r in 0..t.rows() {
        let row: Vec<String> = t.row(r).iter().map(|v| format!("{v:4.2}")).collect();
        println!("  {}", row.join(" "));
    }
}

fn main() -> hclora::Result<()> {
    let grid = GridSpec::square(8)?;
    let head = HeadBox::new(0.125, 0.125, 0.25, 0.25)?;
    let target = Point::new(0.8, 0.7);

    show("head prior", &head_prior(head, grid, DEFAULT_EPS).values);
    let cone = cone_mask(
        head.center(),
        target,
        DEFAULT_CONE_ANGLE_DEG.to_radians(),
        DEFAULT_CONE_SHARPNESS,
        grid,
        DEFAULT_EPS,
    )?;
    show("cone mask (60 deg, alpha 50)", &cone.values);
    Ok(())
}
