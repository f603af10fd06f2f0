//! The out-of-cone penalty for evidence maps inside, outside and across the cone.

use hclora::geometry::{cone_mask, GridSpec, Point, DEFAULT_EPS};
use hclora::losses::ooc_penalty_value;
use hclora::tensor::Tensor;

fn main() -> hclora::Result<()> {
    let grid = GridSpec::square(8)?;
    let head = Point::new(0.1, 0.5);
    let target = Point::new(0.9, 0.5);
    let cone = cone_mask(head, target, 60f64.to_radians(), 50.0, grid, DEFAULT_EPS)?;

    let spike = |p: Point| {
        let mut t = Tensor::zeros(&[grid.height, grid.width]);
        t.data_mut()[grid.cell_of(p)] = 1.0;
        t
    };
    let uniform = Tensor::filled(&[grid.height, grid.width], 1.0 / grid.cells() as f64);

    for (name, ev) in [
        ("all mass on the target", spike(target)),
        ("all mass behind the head", spike(Point::new(0.0, 0.1))),
        ("all mass off to the side", spike(Point::new(0.5, 0.95))),
        ("uniform evidence", uniform.clone()),
        ("uniform, rescaled x7", uniform.map(|v| 7.0 * v)),
    ] {
        println!("{name:<28} OOC = {:.6}", ooc_penalty_value(&ev, &cone.values)?);
    }
    Ok(())
}
