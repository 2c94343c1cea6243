//! Central finite-difference verification of analytic gradients.

use serde::Serialize;

use crate::diff::params::ParamStore;
use crate::diff::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Denominator floor of the relative error.
pub const REL_ERR_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub elements: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub loss: f64,
}

impl GradCheckReport {
    pub fn worst(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }

    pub fn worst_param(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

fn evaluate<S, F>(store: &ParamStore<S>, f: &F) -> Result<S>
where
    S: Scalar,
    F: for<'p> Fn(&mut Tape<'p, S>) -> Result<Var>,
{
    let mut tape = Tape::with_params(store);
    let loss = f(&mut tape)?;
    let v = tape.value(loss);
    if !v.is_scalar() {
        return Err(Error::NonScalarLoss(v.shape().to_vec()));
    }
    Ok(v.item())
}

/// Compares the tape gradient of `f` against `(f(θ+h) - f(θ-h)) / 2h` for
/// every element of every trainable parameter. `f` must be deterministic;
/// run dropout in eval mode.
pub fn finite_diff_check<S, F>(store: &mut ParamStore<S>, h: f64, f: F) -> Result<GradCheckReport>
where
    S: Scalar,
    F: for<'p> Fn(&mut Tape<'p, S>) -> Result<Var>,
{
    if h.is_nan() || h <= 0.0 {
        return Err(Error::InvalidArgument(format!("step {h} must be positive")));
    }
    let (loss, analytic) = {
        let mut tape = Tape::with_params(&*store);
        let loss = f(&mut tape)?;
        let grads = tape.backward(loss)?;
        let analytic: Vec<Option<Vec<S>>> = store
            .ids()
            .map(|id| grads.param(id).map(<[S]>::to_vec))
            .collect();
        (tape.value(loss).item(), analytic)
    };
    let again = evaluate(store, &f)?;
    if again.as_f64().to_bits() != loss.as_f64().to_bits() {
        return Err(Error::NonDeterministic(format!(
            "repeated evaluation gave {} then {}",
            loss, again
        )));
    }

    let step = S::lit(h);
    let two_h = 2.0 * h;
    let ids: Vec<_> = store.ids().collect();
    let mut report = Vec::new();
    for (k, id) in ids.into_iter().enumerate() {
        if !store.get(id).trainable {
            continue;
        }
        let n = store.value(id).len();
        let mut max_rel: f64 = 0.0;
        let mut max_abs: f64 = 0.0;
        for j in 0..n {
            let orig = store.value(id).data()[j];
            store.value_mut(id).data_mut()[j] = orig + step;
            let plus = evaluate(store, &f)?;
            store.value_mut(id).data_mut()[j] = orig - step;
            let minus = evaluate(store, &f)?;
            store.value_mut(id).data_mut()[j] = orig;

            let numeric = (plus.as_f64() - minus.as_f64()) / two_h;
            let a = analytic[k].as_ref().map_or(0.0, |g| g[j].as_f64());
            max_rel = max_rel.max(relative_error(a, numeric));
            max_abs = max_abs.max((a - numeric).abs());
        }
        report.push(ParamCheck {
            name: store.get(id).name.clone(),
            elements: n,
            max_rel_err: max_rel,
            max_abs_err: max_abs,
        });
    }
    Ok(GradCheckReport {
        params: report,
        loss: loss.as_f64(),
    })
}
