//! Finite-difference verification of analytic gradients.
//!
//! The checker is the independent oracle for every backward rule: it
//! re-evaluates the forward function at perturbed parameter values and
//! compares central differences against what the tape computed.

use crate::error::{Error, Result};
use crate::numerics::store::{BoundParams, ParameterStore};
use crate::numerics::tape::{Tape, TensorId};
use crate::numerics::tensor::Real;

/// Verification outcome for one parameter.
#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// Element index where the worst relative error occurred.
    pub worst_index: usize,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_err).fold(0.0, f64::max)
    }

    pub fn all_below(&self, tol: f64) -> bool {
        self.max_rel_err() < tol
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for e in &self.entries {
            writeln!(
                f,
                "  {:<40} max rel err {:>12.3e}   max abs err {:>12.3e}",
                e.name, e.max_rel_err, e.max_abs_err
            )?;
        }
        Ok(())
    }
}

// Gradient components below this magnitude sit under the central-difference
// noise floor (loss ~O(1) at f64 with eps ~1e-5 resolves differences down to
// ~1e-10, i.e. gradients to ~1e-6) and compare as matching.
const NOISE_FLOOR: f64 = 1e-6;

fn rel_err(a: f64, n: f64) -> f64 {
    let scale = a.abs().max(n.abs());
    if scale < NOISE_FLOOR {
        0.0
    } else {
        (a - n).abs() / scale
    }
}

/// Compare analytic gradients of a scalar-valued function against central
/// finite differences, per parameter.
///
/// `f` must rebuild its forward pass from the bound parameters on every
/// call; the checker re-invokes it at perturbed points.
pub fn grad_check<T, F>(f: F, store: &ParameterStore<T>, eps: f64) -> Result<GradCheckReport>
where
    T: Real,
    F: Fn(&mut Tape<T>, &BoundParams) -> Result<TensorId>,
{
    check_impl(f, store, eps, None)
}

/// Like [`grad_check`] but with a fault injected into the analytic backward
/// pass (the gradient leaving the loss node is scaled). Used to prove the
/// checker detects a broken backward rule.
pub fn grad_check_with_fault<T, F>(
    f: F,
    store: &ParameterStore<T>,
    eps: f64,
    fault_scale: f64,
) -> Result<GradCheckReport>
where
    T: Real,
    F: Fn(&mut Tape<T>, &BoundParams) -> Result<TensorId>,
{
    check_impl(f, store, eps, Some(fault_scale))
}

fn check_impl<T, F>(
    f: F,
    store: &ParameterStore<T>,
    eps: f64,
    fault: Option<f64>,
) -> Result<GradCheckReport>
where
    T: Real,
    F: Fn(&mut Tape<T>, &BoundParams) -> Result<TensorId>,
{
    if eps <= 0.0 {
        return Err(Error::InvalidArgument("grad_check eps must be > 0".into()));
    }

    // Analytic pass.
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape)?;
    let loss = f(&mut tape, &bound)?;
    if !tape.value(loss).is_scalar() {
        return Err(Error::InvalidArgument(format!(
            "grad_check needs a scalar function, got output shape {:?}",
            tape.value(loss).shape()
        )));
    }
    if let Some(scale) = fault {
        tape.inject_backward_fault(loss, T::from_f64(scale));
    }
    let grads = tape.backward(loss)?;

    let eval_at = |probe: &ParameterStore<T>| -> Result<f64> {
        let mut tape = Tape::new();
        let bound = probe.bind(&mut tape)?;
        let loss = f(&mut tape, &bound)?;
        Ok(tape.value(loss).item().as_f64())
    };

    let mut report = GradCheckReport::default();
    for (name, tensor) in store.iter() {
        let analytic = grads.get_or_zeros(bound.id(name)?, tensor.shape());
        let mut entry = GradCheckEntry {
            name: name.to_string(),
            max_rel_err: 0.0,
            max_abs_err: 0.0,
            worst_index: 0,
        };
        let mut probe = store.cast::<T>();
        for i in 0..tensor.len() {
            let base = tensor.data()[i].as_f64();

            let mut plus = tensor.clone();
            plus.data_mut()[i] = T::from_f64(base + eps);
            probe.set(name, plus)?;
            let f_plus = eval_at(&probe)?;

            let mut minus = tensor.clone();
            minus.data_mut()[i] = T::from_f64(base - eps);
            probe.set(name, minus)?;
            let f_minus = eval_at(&probe)?;

            probe.set(name, tensor.clone())?;

            let numeric = (f_plus - f_minus) / (2.0 * eps);
            let a = analytic.data()[i].as_f64();
            let re = rel_err(a, numeric);
            if re > entry.max_rel_err {
                entry.max_rel_err = re;
                entry.worst_index = i;
            }
            entry.max_abs_err = entry.max_abs_err.max((a - numeric).abs());
        }
        report.entries.push(entry);
    }
    Ok(report)
}
