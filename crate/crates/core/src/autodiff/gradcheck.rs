//! Central finite-difference verification of tape gradients (64-bit only).

use ndarray::Array2;

use super::{ParamStore, Tape, Var};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub entries: usize,
}

/// `|a - b| / max(|a|, |b|, 1e-8)`
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Tape gradients of `loss_fn` for every parameter (zeros where unused).
pub fn analytic_gradients<F>(store: &ParamStore<f64>, loss_fn: F) -> Result<Vec<Array2<f64>>>
where
    F: Fn(&mut Tape<'_, f64>) -> Result<Var>,
{
    let mut tape = Tape::with_params(store);
    let loss = loss_fn(&mut tape)?;
    let grads = tape.backward(loss)?;
    let mut out: Vec<Array2<f64>> = store
        .ids()
        .map(|id| Array2::zeros(store.value(id).raw_dim()))
        .collect();
    for (id, g) in grads.params() {
        out[id.index()] = g.as_standard_layout().into_owned();
    }
    Ok(out)
}

/// Factor applied to fixture losses before checking.
///
/// Central differences at step `1e-6` carry roundoff of about one ulp of the
/// loss divided by the step, roughly `1e-10` for an O(1) loss. Entries whose
/// true gradient is zero or tiny (a shared logit shift under softmax, a unit
/// in the 0.01 LeakyReLU regime) would then fail a relative test whose
/// denominator bottoms out at `1e-8`. Scaling the loss to about `1e-4` puts
/// that roundoff near `1e-14`, while a wrong gradient of ordinary size still
/// shows up as an O(1) relative error.
pub const LOSS_SCALE: f64 = 1e-4;

/// Compares the tape gradient of `loss_fn` with central differences
/// `(f(θ+h) - f(θ-h)) / 2h` for every entry of every non-frozen parameter.
pub fn check_params<F>(store: &ParamStore<f64>, step: f64, loss_fn: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'_, f64>) -> Result<Var>,
{
    let analytic = analytic_gradients(store, &loss_fn)?;
    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut tape = Tape::with_params(s);
        let loss = loss_fn(&mut tape)?;
        Ok(tape.scalar(loss))
    };

    let mut probe = store.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        entries: 0,
    };
    for id in store.ids() {
        if store.is_frozen(id) {
            continue;
        }
        for flat in 0..store.value(id).len() {
            let orig = store.value(id).as_slice().expect("standard layout")[flat];
            probe.value_mut(id).as_slice_mut().unwrap()[flat] = orig + step;
            let plus = eval(&probe)?;
            probe.value_mut(id).as_slice_mut().unwrap()[flat] = orig - step;
            let minus = eval(&probe)?;
            probe.value_mut(id).as_slice_mut().unwrap()[flat] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[id.index()].as_slice().unwrap()[flat];
            let err = relative_error(a, numeric);
            report.entries += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((store.name(id).to_string(), flat));
            }
        }
    }
    Ok(report)
}
