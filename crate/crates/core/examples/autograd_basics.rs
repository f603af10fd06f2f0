//! Build a tiny graph, run the reverse sweep and compare with finite differences.

use hclora::autograd::Graph;
use hclora::params::ParamStore;
use hclora::tensor::Tensor;

fn main() -> hclora::Result<()> {
    let mut store = ParamStore::new();
    let w = store.add("w", Tensor::from_rows(&[&[0.5, -1.0], &[2.0, 0.25]]), true);
    let x = Tensor::from_rows(&[&[1.0, 2.0], &[-1.0, 0.5], &[0.0, 3.0]]);

    // loss = mean(tanh(x·w))
    let loss = |store: &ParamStore| -> hclora::Result<(Graph, hclora::autograd::Var)> {
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let wv = g.param(store, w);
        let h = g.matmul(xv, wv)?;
        let h = g.tanh(h);
        let l = g.mean(h);
        Ok((g, l))
    };

    let (g, l) = loss(&store)?;
    println!("loss = {:.6}", g.scalar(l));
    g.backward(l)?.accumulate(&g, &mut store);
    let analytic = store.get(w).grad.clone();

    let eps = 1e-6;
    for i in 0..4 {
        let orig = store.get(w).value.data()[i];
        store.get_mut(w).value.data_mut()[i] = orig + eps;
        let (gp, lp) = loss(&store)?;
        store.get_mut(w).value.data_mut()[i] = orig - eps;
        let (gm, lm) = loss(&store)?;
        store.get_mut(w).value.data_mut()[i] = orig;
        let numeric = (gp.scalar(lp) - gm.scalar(lm)) / (2.0 * eps);
        println!("dL/dw[{i}]  analytic {:+.8}  numeric {:+.8}", analytic.data()[i], numeric);
    }
    Ok(())
}
