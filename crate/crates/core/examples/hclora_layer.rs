//! One adapted projection: zero-init identity, LoRA reduction under M = 1, and
//! how the head prior localizes the update.

use hclora::adapter::{lora_delta, HcLoraLayer};
use hclora::geometry::{head_prior, GridSpec, HeadBox, DEFAULT_EPS};
use hclora::params::ParamStore;
use hclora::rng::Rng;
use hclora::tensor::Tensor;

fn main() -> hclora::Result<()> {
    let grid = GridSpec::square(6)?;
    let (n, d, r) = (grid.cells(), 8, 2);
    let mut rng = Rng::new(1);
    let mut store = ParamStore::new();
    let w = store.add("w", rng.gaussian_tensor(&[d, d], 0.3), false);
    let layer = HcLoraLayer::new(&mut store, "proj", w, r, true, &mut rng)?;
    let x = rng.gaussian_tensor(&[n, d], 1.0);
    let prior = head_prior(HeadBox::new(0.0, 0.0, 1.0 / 6.0, 1.0 / 6.0)?, grid, DEFAULT_EPS);

    let base = x.matmul(store.value(w))?;
    let y0 = layer.forward(&store, &x, &prior, grid, None)?;
    println!("B = 0: output equals X·W exactly: {}", y0 == base);

    store.get_mut(layer.lora.b).value = rng.gaussian_tensor(&[r, d], 0.5);
    let ones = Tensor::filled(&[n, r], 1.0);
    let y1 = layer.forward(&store, &x, &prior, grid, Some(&ones))?;
    let mut lora = base.clone();
    lora.add_assign(&lora_delta(&x, store.value(layer.lora.a), store.value(layer.lora.b))?);
    let diff = y1.data().iter().zip(lora.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("M = 1: max |HCLoRA - LoRA| = {diff:.2e}");

    // Sharpen the gate so it opens on the head token and closes elsewhere.
    if let Some(gate) = &layer.gate {
        store.get_mut(gate.w1).value = Tensor::filled(&[1, 8], 4.0);
        store.get_mut(gate.b1).value = Tensor::filled(&[1, 8], -2.0);
        store.get_mut(gate.w2).value = Tensor::filled(&[8, r], 1.5);
        store.get_mut(gate.b2).value = Tensor::zeros(&[1, r]);
    }
    let y = layer.forward(&store, &x, &prior, grid, None)?;
    println!("per-token update norm |Y - XW| (head in the top-left cell):");
    for v in 0..grid.height {
        let row: Vec<String> = (0..grid.width)
            .map(|u| {
                let t = v * grid.width + u;
                let s: f64 = (0..d).map(|j| (y.get(t, j) - base.get(t, j)).powi(2)).sum();
                format!("{:5.2}", s.sqrt())
            })
            .collect();
        println!("  {}", row.join(" "));
    }
    Ok(())
}
