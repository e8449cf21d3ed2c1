//! Central finite-difference validation of [`Tape::backward`].

use super::{Result, Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckOptions {
    /// Finite-difference step.
    pub h: f64,
    /// Maximum accepted relative error.
    pub tol: f64,
    /// Denominator floor: the error is `|a - n| / max(|a|, |n|, floor)`.
    pub floor: f64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions { h: 1e-5, tol: 1e-6, floor: 1.0 }
    }
}

/// Outcome for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub param: usize,
    pub max_rel_err: f64,
    pub worst_entry: usize,
    pub checked: usize,
    /// Entries whose ±h perturbation changed a ReLU sign or pooling winner.
    pub skipped_kinks: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub options: GradcheckOptions,
    pub params: Vec<ParamCheck>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.max_rel_err <= self.options.tol && p.checked > 0)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }
}

/// Compares `backward()` against `(f(p + h) - f(p - h)) / 2h` for every
/// entry of every parameter.
pub fn gradcheck<F>(f: F, params: &[Tensor<f64>], h: f64, tol: f64) -> Result<GradcheckReport>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    gradcheck_with(f, params, GradcheckOptions { h, tol, ..GradcheckOptions::default() })
}

pub fn gradcheck_with<F>(f: F, params: &[Tensor<f64>], options: GradcheckOptions) -> Result<GradcheckReport>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<(f64, u64)> {
        let tape = Tape::new();
        let vars: Vec<Var<'_, f64>> = values.iter().map(|p| tape.constant(p.clone())).collect();
        let loss = f(&tape, &vars)?;
        let value = loss.value().item();
        Ok((value, tape.branch_signature()))
    };

    let tape = Tape::new();
    let vars: Vec<Var<'_, f64>> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&tape, &vars)?;
    let base_signature = tape.branch_signature();
    let grads = tape.backward(loss)?;

    let mut reports = Vec::with_capacity(params.len());
    let mut work: Vec<Tensor<f64>> = params.to_vec();
    for (pi, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).cloned().unwrap_or_else(|| params[pi].zeros_like());
        let mut report = ParamCheck { param: pi, max_rel_err: 0.0, worst_entry: 0, checked: 0, skipped_kinks: 0 };
        for e in 0..params[pi].len() {
            let orig = params[pi].data()[e];
            work[pi].data_mut()[e] = orig + options.h;
            let (plus, sig_plus) = eval(&work)?;
            work[pi].data_mut()[e] = orig - options.h;
            let (minus, sig_minus) = eval(&work)?;
            work[pi].data_mut()[e] = orig;
            if sig_plus != base_signature || sig_minus != base_signature {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * options.h);
            let a = analytic.data()[e];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(options.floor);
            report.checked += 1;
            if err > report.max_rel_err || err.is_nan() {
                report.max_rel_err = if err.is_nan() { f64::INFINITY } else { err };
                report.worst_entry = e;
            }
        }
        reports.push(report);
    }
    Ok(GradcheckReport { options, params: reports })
}
