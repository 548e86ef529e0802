//! Central finite-difference verification of tape gradients.

use super::params::ParameterStore;
use super::tape::{NodeId, Tape};
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Parameter name and flat element index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

fn evaluate<F>(f: &mut F, store: &ParameterStore) -> Result<f64>
where
    F: FnMut(&mut Tape, &ParameterStore) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    tape.value(loss).item()
}

/// Compares analytic gradients of `f` against `(f(p+h) − f(p−h)) / 2h`
/// for every element of every parameter in `store`. Relative error is
/// `|a − n| / max(|a|, |n|, 1e-8)`.
///
/// `store` values are restored exactly after each probe; gradients are
/// left holding the analytic result.
pub fn grad_check<F>(mut f: F, store: &mut ParameterStore, step: f64) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &ParameterStore) -> Result<NodeId>,
{
    store.zero_grads();
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    tape.backward_into(loss, store)?;

    let names: Vec<String> = store.names().map(str::to_string).collect();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for name in names {
        let n = store.value(&name)?.len();
        for i in 0..n {
            let original = store.value(&name)?.data()[i];
            store.value_mut(&name)?.data_mut()[i] = original + step;
            let plus = evaluate(&mut f, store)?;
            store.value_mut(&name)?.data_mut()[i] = original - step;
            let minus = evaluate(&mut f, store)?;
            store.value_mut(&name)?.data_mut()[i] = original;

            let numeric = (plus - minus) / (2.0 * step);
            let analytic = store.grad(&name)?.data()[i];
            let denom = analytic.abs().max(numeric.abs()).max(1e-8);
            let err = (analytic - numeric).abs() / denom;
            report.checked += 1;
            if err > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = err;
                report.worst = Some((name.clone(), i));
                report.analytic = analytic;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
