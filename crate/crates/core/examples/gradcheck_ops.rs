//! Finite-difference checks of a few differentiable operations at 64-bit
//! precision.
//!
//! ```text
//! cargo run --release --example gradcheck_ops
//! ```

use mixrep::autodiff::{Graph, Var};
use mixrep::gradcheck::{check, Tolerance};
use mixrep::Tensor;

type Op = fn(&mut Graph<f64>, &[Var]) -> mixrep::Result<Var>;

fn input(shape: &[usize], seed: u64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let vals: Vec<f64> = (0..n)
        .map(|i| ((i as u64 * 7919 + seed * 104_729) % 1000) as f64 / 500.0 - 1.0)
        .collect();
    Tensor::new(shape, vals).unwrap()
}

fn main() -> mixrep::Result<()> {
    let ops: Vec<(&str, Vec<Tensor<f64>>, Op)> = vec![
        ("matmul", vec![input(&[3, 4], 1), input(&[4, 2], 2)], |g, v| {
            let y = g.matmul(v[0], v[1])?;
            Ok(g.sum_all(y))
        }),
        ("softmax", vec![input(&[2, 5], 3), input(&[2, 5], 4)], |g, v| {
            let s = g.softmax(v[0])?;
            let y = g.mul(s, v[1])?;
            Ok(g.sum_all(y))
        }),
        ("layer_norm", vec![input(&[3, 6], 5), input(&[6], 6), input(&[6], 7), input(&[3, 6], 8)], |g, v| {
            let n = g.layer_norm(v[0], v[1], v[2], 1e-5)?;
            let y = g.mul(n, v[3])?;
            Ok(g.sum_all(y))
        }),
        ("swish", vec![input(&[10], 9)], |g, v| {
            let y = g.swish(v[0]);
            Ok(g.sum_all(y))
        }),
        ("glu", vec![input(&[2, 8], 10)], |g, v| {
            let y = g.glu(v[0])?;
            Ok(g.mean_all(y))
        }),
    ];
    for (name, inputs, f) in ops {
        // No absolute floor, so the printed errors are the raw ones.
        let tol = Tolerance {
            abs_floor: 0.0,
            ..Tolerance::default()
        };
        let report = check(&inputs, f, tol)?;
        println!(
            "{name:<11} {:>3} elements  max rel err {:.2e}  {}",
            report.checked,
            report.max_rel_err,
            if report.passed() { "ok" } else { "FAILED" }
        );
    }
    Ok(())
}
