//! CTC loss against a brute-force sum over every frame-level path.
//!
//! ```text
//! cargo run --release --example ctc_oracle
//! ```

use mixrep::autodiff::Graph;
use mixrep::losses::{ctc_loss, BLANK};
use mixrep::Tensor;
use rand::{Rng, SeedableRng};

/// −log Σ over the Vᵀ label paths that collapse to `target`.
fn brute_force(lp: &[f64], t: usize, v: usize, target: &[usize]) -> f64 {
    let mut total = 0.0;
    for code in 0..v.pow(t as u32) {
        let path: Vec<usize> = (0..t).map(|i| code / v.pow(i as u32) % v).collect();
        let mut collapsed = path.clone();
        collapsed.dedup();
        collapsed.retain(|&k| k != BLANK);
        if collapsed == target {
            total += path.iter().enumerate().map(|(i, &k)| lp[i * v + k]).sum::<f64>().exp();
        }
    }
    -total.ln()
}

fn main() -> mixrep::Result<()> {
    let mut rng = mixrep::rng::Rng::seed_from_u64(3);
    let (t, v) = (5, 4);
    for target in [vec![1], vec![1, 1], vec![2, 3, 1]] {
        let logits: Vec<f64> = (0..t * v).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut g = Graph::new();
        let x = g.param(Tensor::new(&[1, t, v], logits)?);
        let lp = g.log_softmax(x)?;
        let loss = ctc_loss(&mut g, lp, std::slice::from_ref(&target), &[t], BLANK)?;
        let fast = g.value(loss).item();
        let slow = brute_force(g.value(lp).data(), t, v, &target);
        println!("target {target:?}: forward {fast:.12}  brute force {slow:.12}  |diff| {:.1e}", (fast - slow).abs());
    }
    Ok(())
}
