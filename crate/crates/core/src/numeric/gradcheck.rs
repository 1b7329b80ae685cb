//! Central finite-difference checks of recorded gradients.

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::error::Result;

/// Default central-difference step.
pub const STEP: f64 = 1e-5;

/// Gradient magnitudes below this are compared absolutely rather than relatively.
pub const REL_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
}

impl GradCheckReport {
    pub fn merge(&mut self, other: GradCheckReport) {
        self.checked += other.checked;
        if other.worst.is_some() && (self.worst.is_none() || other.max_rel_error > self.max_rel_error) {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst;
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares the analytic gradient of the scalar built by `loss` against
/// central differences for every entry of the given parameters (all of them
/// when `only` is `None`).
pub fn check_params<F>(store: &mut ParamStore<f64>, only: Option<&[ParamId]>, mut loss: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = loss(&mut tape, store)?;
    let grads = tape.backward(out)?;
    store.zero_grad();
    store.accumulate(&tape, &grads);

    let ids: Vec<ParamId> = match only {
        Some(ids) => ids.to_vec(),
        None => store.ids().collect(),
    };
    let mut report = GradCheckReport::default();
    let mut eval = |store: &ParamStore<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let v = loss(&mut tape, store)?;
        tape.check_finite()?;
        tape.value(v).item()
    };
    for id in ids {
        for k in 0..store.value(id).len() {
            let orig = store.value(id).data()[k];
            store.value_mut(id).data_mut()[k] = orig + STEP;
            let plus = eval(store)?;
            store.value_mut(id).data_mut()[k] = orig - STEP;
            let minus = eval(store)?;
            store.value_mut(id).data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * STEP);
            let err = relative_error(store.grad(id).data()[k], numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((store.name(id).to_string(), k));
            }
        }
    }
    Ok(report)
}
