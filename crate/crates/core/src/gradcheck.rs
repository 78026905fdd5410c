//! Central finite-difference checks of graph gradients.

use crate::data::Sample;
use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::model::FsruModel;
use crate::params::Parameters;
use crate::tensor::Tensor;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Components whose analytic gradient is at most this are not compared.
pub const MIN_GRAD: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct Mismatch {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradReport {
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_error: f64,
    pub failures: Vec<Mismatch>,
    /// Names of parameters that received at least one checked component.
    pub covered: Vec<String>,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    /// Records one comparison; components with `|analytic| ≤ MIN_GRAD` are skipped.
    pub fn compare(&mut self, name: &str, index: usize, analytic: f64, numeric: f64, tol: f64) {
        if analytic.abs() <= MIN_GRAD {
            self.skipped += 1;
            return;
        }
        self.checked += 1;
        if self.covered.last().map(String::as_str) != Some(name) {
            self.covered.push(name.to_string());
        }
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs());
        self.max_rel_error = self.max_rel_error.max(rel);
        if rel > tol {
            self.failures.push(Mismatch {
                name: name.to_string(),
                index,
                analytic,
                numeric,
            });
        }
    }
}

/// Checks `build` (which must return a scalar node) against central
/// differences in every component of every input.
pub fn check_fn<F>(inputs: &[Tensor], build: F) -> Result<GradReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.leaf(t.clone())).collect();
        let out = build(&mut g, &vars)?;
        g.value(out).item()
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    let grads = g.backward(out)?;
    let mut report = GradReport::default();
    let mut work = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(*var, inputs[k].shape());
        for i in 0..inputs[k].len() {
            let orig = work[k].data()[i];
            work[k].data_mut()[i] = orig + STEP;
            let up = eval(&work)?;
            work[k].data_mut()[i] = orig - STEP;
            let down = eval(&work)?;
            work[k].data_mut()[i] = orig;
            report.compare(&format!("input{k}"), i, analytic.data()[i], (up - down) / (2.0 * STEP), TOLERANCE);
        }
    }
    Ok(report)
}

/// The total objective of `model` on `samples`.
pub fn model_loss(model: &FsruModel, samples: &[&Sample]) -> Result<f64> {
    let mut g = Graph::new();
    let vars = model.bind(&mut g);
    let texts: Vec<_> = samples.iter().map(|s| &s.text).collect();
    let images: Vec<_> = samples.iter().map(|s| &s.image).collect();
    let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
    let fwd = model.forward(&mut g, &vars, &texts, &images)?;
    let obj = model.objective(&mut g, &fwd, &labels)?;
    g.value(obj.total).item()
}

/// Analytic gradients of the total objective for every named parameter.
pub fn model_gradients(model: &FsruModel, samples: &[&Sample]) -> Result<Vec<(String, Tensor)>> {
    let mut g = Graph::new();
    let vars = model.bind(&mut g);
    let texts: Vec<_> = samples.iter().map(|s| &s.text).collect();
    let images: Vec<_> = samples.iter().map(|s| &s.image).collect();
    let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
    let fwd = model.forward(&mut g, &vars, &texts, &images)?;
    let obj = model.objective(&mut g, &fwd, &labels)?;
    let grads = g.backward(obj.total)?;
    let leaves = FsruModel::leaves(&vars);
    Ok(model
        .named()
        .into_iter()
        .zip(&leaves)
        .map(|((name, t), v)| (name, grads.get_or_zeros(*v, t.shape())))
        .collect())
}

/// Compares the analytic gradient of every parameter component with
/// `numeric(parameter_index, component)`.
pub fn check_model_with<F>(model: &FsruModel, samples: &[&Sample], mut numeric: F) -> Result<GradReport>
where
    F: FnMut(usize, usize) -> Result<f64>,
{
    let mut report = GradReport::default();
    for (p, (name, grad)) in model_gradients(model, samples)?.iter().enumerate() {
        for i in 0..grad.len() {
            let n = numeric(p, i)?;
            report.compare(name, i, grad.data()[i], n, TOLERANCE);
        }
    }
    Ok(report)
}

/// Checks every trainable parameter against f64 central differences.
///
/// The difference quotient resolves roughly `ulp(L) / (2·STEP)`, about
/// `2e-11` for a loss near 2, so components near [`MIN_GRAD`] can exceed the
/// tolerance through rounding alone. [`check_model_with`] accepts a more
/// precise numeric side.
pub fn check_model(model: &FsruModel, samples: &[&Sample]) -> Result<GradReport> {
    let mut probe = model.clone();
    check_model_with(model, samples, |p, i| {
        let orig = probe.named()[p].1.data()[i];
        probe.named_mut()[p].1.data_mut()[i] = orig + STEP;
        let up = model_loss(&probe, samples)?;
        probe.named_mut()[p].1.data_mut()[i] = orig - STEP;
        let down = model_loss(&probe, samples)?;
        probe.named_mut()[p].1.data_mut()[i] = orig;
        Ok((up - down) / (2.0 * STEP))
    })
}
