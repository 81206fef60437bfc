//! Central finite-difference oracle for analytic gradients.
//!
//! The numeric side only ever evaluates the loss on an inference tape, so it
//! shares nothing with the backward closures it is checking.

use crate::error::Result;
use crate::tensor::{ParamStore, Tape, Var};

/// Gradients smaller than this in magnitude are compared absolutely.
pub const MAGNITUDE_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct ParamReport {
    pub name: String,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamReport>,
    pub checked_scalars: usize,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&ParamReport> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

/// `|a − n| / max(|a|, |n|, MAGNITUDE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(MAGNITUDE_FLOOR)
}

/// Compares backward-pass gradients of `loss` with central differences of step `h`
/// for every scalar of every parameter in `store`.
///
/// `loss` must be a pure function of the parameter values.
pub fn check_gradients<L>(store: &ParamStore<f64>, h: f64, loss: L) -> Result<GradCheckReport>
where
    L: Fn(&Tape<f64>, &ParamStore<f64>) -> Result<Var<f64>>,
{
    let mut analytic = store.clone();
    analytic.zero_grad();
    let tape = Tape::new();
    let out = loss(&tape, &analytic)?;
    tape.backward(&out, &mut analytic)?;

    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let tape = Tape::inference();
        Ok(loss(&tape, s)?.data()[0])
    };

    let mut work = store.clone();
    let mut params = Vec::with_capacity(store.len());
    let mut checked = 0;
    for id in store.ids() {
        let grad = analytic.grad_or_zeros(id);
        let mut worst_rel = 0.0f64;
        let mut worst_abs = 0.0f64;
        for i in 0..store.value(id).numel() {
            let orig = store.value(id).data()[i];
            work.value_mut(id).data_mut()[i] = orig + h;
            let up = eval(&work)?;
            work.value_mut(id).data_mut()[i] = orig - h;
            let down = eval(&work)?;
            work.value_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = grad.data()[i];
            worst_rel = worst_rel.max(relative_error(a, numeric));
            worst_abs = worst_abs.max((a - numeric).abs());
            checked += 1;
        }
        params.push(ParamReport {
            name: store.get(id).name.clone(),
            max_rel_error: worst_rel,
            max_abs_error: worst_abs,
        });
    }
    Ok(GradCheckReport {
        params,
        checked_scalars: checked,
    })
}
