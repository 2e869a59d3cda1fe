//! Central finite-difference gradient checking at 64-bit precision.
//!
//! The numerical side never touches [`Graph::backward`]: it re-runs the
//! forward closure with perturbed inputs and differences the scalar outputs.

use rand::SeedableRng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::model::{Model, Session};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub step: f64,
    pub rel: f64,
    pub abs_floor: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            step: 1e-5,
            rel: 1e-4,
            abs_floor: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Mismatch {
    pub input: usize,
    pub element: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub checked: usize,
    pub max_rel_err: f64,
    /// Largest `|analytic − numeric|`, before the absolute floor applies.
    pub max_abs_err: f64,
    pub failures: Vec<Mismatch>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.checked > 0
    }
}

/// Relative error with an absolute floor: differences below `abs_floor`
/// count as exact.
pub fn rel_err(analytic: f64, numeric: f64, abs_floor: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff <= abs_floor {
        0.0
    } else {
        diff / analytic.abs().max(numeric.abs())
    }
}

/// Check every element of every input.
pub fn check<F>(inputs: &[Tensor<f64>], f: F, tol: Tolerance) -> Result<Report>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let picks: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.len()).map(move |e| (i, e)))
        .collect();
    check_elements(inputs, &picks, f, tol)
}

/// Check only the listed `(input, element)` pairs.
pub fn check_elements<F>(
    inputs: &[Tensor<f64>],
    picks: &[(usize, usize)],
    f: F,
    tol: Tolerance,
) -> Result<Report>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |ins: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.param(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    if let Some(&(i, e)) = picks.iter().find(|&&(i, e)| i >= inputs.len() || e >= inputs[i].len()) {
        return Err(Error::Usage(format!("gradcheck pick ({i}, {e}) out of range")));
    }
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let root = f(&mut g, &vars)?;
    g.backward(root)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let mut work = inputs.to_vec();
    differences(picks, tol, |i, e| analytic[i].data()[e], |i, e, delta| {
        let orig = work[i].data()[e];
        work[i].data_mut()[e] = orig + delta;
        let out = eval(&work);
        work[i].data_mut()[e] = orig;
        out
    })
}

/// Check a model loss with respect to `(parameter, element)` pairs. `f`
/// builds the loss inside a training session; every call gets the same
/// dropout stream, so the check is valid with dropout active.
pub fn check_params<F>(model: &Model<f64>, picks: &[(usize, usize)], f: F, tol: Tolerance) -> Result<Report>
where
    F: Fn(&mut Session<'_, f64>) -> Result<Var>,
{
    let eval = |m: &Model<f64>| -> Result<f64> {
        let mut s = Session::new(m, true, Rng::seed_from_u64(0));
        let out = f(&mut s)?;
        Ok(s.graph.value(out).item())
    };
    let values = model.params().values();
    if let Some(&(i, e)) = picks.iter().find(|&&(i, e)| i >= values.len() || e >= values[i].len()) {
        return Err(Error::Usage(format!("gradcheck pick ({i}, {e}) out of range")));
    }
    let mut s = Session::new(model, true, Rng::seed_from_u64(0));
    let root = f(&mut s)?;
    s.graph.backward(root)?;
    let analytic = s.take_gradients();
    let mut work = model.clone();
    differences(
        picks,
        tol,
        |i, e| analytic.get(i).and_then(|g| g.as_ref()).map_or(0.0, |g| g.data()[e]),
        |i, e, delta| {
            let orig = work.params().values()[i].data()[e];
            work.params_mut().values_mut()[i].data_mut()[e] = orig + delta;
            let out = eval(&work);
            work.params_mut().values_mut()[i].data_mut()[e] = orig;
            out
        },
    )
}

fn differences(
    picks: &[(usize, usize)],
    tol: Tolerance,
    analytic: impl Fn(usize, usize) -> f64,
    mut perturbed: impl FnMut(usize, usize, f64) -> Result<f64>,
) -> Result<Report> {
    let mut report = Report::default();
    for &(i, e) in picks {
        let up = perturbed(i, e, tol.step)?;
        let down = perturbed(i, e, -tol.step)?;
        let numeric = (up - down) / (2.0 * tol.step);
        let a = analytic(i, e);
        let err = rel_err(a, numeric, tol.abs_floor);
        report.checked += 1;
        report.max_rel_err = report.max_rel_err.max(err);
        report.max_abs_err = report.max_abs_err.max((a - numeric).abs());
        if err >= tol.rel || !err.is_finite() {
            report.failures.push(Mismatch {
                input: i,
                element: e,
                analytic: a,
                numeric,
                rel_err: err,
            });
        }
    }
    Ok(report)
}
