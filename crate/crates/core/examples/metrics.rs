//! Heatmap AUC, L2/angular errors, in/out AP and tail counts on hand-made inputs.

use hclora::eval::{ang_metrics, ap_inout, auc, l2_metrics, tail_counts};
use hclora::geometry::{GridSpec, Point};
use hclora::tensor::Tensor;

fn main() -> hclora::Result<()> {
    let grid = GridSpec::square(4)?;
    let mut heat = Tensor::filled(&[4, 4], 0.1);
    heat.set(1, 2, 0.9);
    heat.set(1, 1, 0.5);
    let gaze = [Point::new(0.6, 0.3), Point::new(0.65, 0.35), Point::new(0.4, 0.4)];
    println!("AUC = {:.4}", auc(&heat, &gaze, grid)?);

    let head = Point::new(0.1, 0.9);
    let pred = Point::new(0.625, 0.375);
    let (avg_l2, min_l2) = l2_metrics(pred, &gaze)?;
    let (avg_ang, min_ang) = ang_metrics(head, pred, &gaze)?;
    println!("L2 avg {avg_l2:.4} min {min_l2:.4}; angle avg {avg_ang:.2} deg min {min_ang:.2} deg");

    let probs = [0.9, 0.8, 0.8, 0.3, 0.2];
    let labels = [true, false, true, true, false];
    println!("AP in/out = {:.4}", ap_inout(&probs, &labels)?);

    let mins = [3.0, 12.0, 31.0, 47.0, 95.0];
    println!("tail counts >15/30/45/60: {:?}", tail_counts(&mins, &[15.0, 30.0, 45.0, 60.0]));
    Ok(())
}
