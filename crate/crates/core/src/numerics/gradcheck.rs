//! Central finite-difference verification of reverse-mode gradients.

use crate::numerics::{ParamId, ParamStore, Tape, Tensor, TensorError, Var};
use crate::scalar::Real;

/// Below this magnitude the difference quotient is dominated by rounding, so
/// the error is measured against the floor instead.
pub const GRAD_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a| + |n|, GRAD_FLOOR)`.
pub fn relative_error<T: Real>(analytic: T, numeric: T) -> T {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(T::lit(GRAD_FLOOR))
}

/// Max relative error between the tape gradient of scalar `f` at `x` and
/// central differences with step `h`.
pub fn grad_check<T, F>(f: F, x: &Tensor<T>, h: T) -> Result<T, TensorError>
where
    T: Real,
    F: Fn(&Tape<T>, Var) -> Result<Var, TensorError>,
{
    let tape = Tape::new();
    let xv = tape.input(x.clone(), true);
    let out = f(&tape, xv)?;
    let grads = tape.backward(out)?;
    let analytic = grads
        .wrt(xv)
        .unwrap_or_else(|| Tensor::zeros(x.shape().to_vec()));

    let eval = |probe: Tensor<T>| -> Result<T, TensorError> {
        let t = Tape::new();
        let v = t.input(probe, false);
        let y = f(&t, v)?;
        Ok(t.item(y))
    };
    let mut worst = T::zero();
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        let numeric = (eval(plus)? - eval(minus)?) / (h + h);
        worst = worst.max(relative_error(analytic.data()[i], numeric));
    }
    Ok(worst)
}

/// Per-parameter max relative error for a loss built from `store`.
///
/// `loss` must bind parameters through [`Tape::param`] so that gradients
/// reach the store.
pub fn grad_check_params<T, F>(
    store: &ParamStore<T>,
    ids: &[ParamId],
    loss: F,
    h: T,
) -> Result<Vec<(String, T)>, TensorError>
where
    T: Real,
    F: Fn(&Tape<T>, &ParamStore<T>) -> Result<Var, TensorError>,
{
    let mut work = store.clone();
    work.zero_grad();
    let tape = Tape::new();
    let out = loss(&tape, &work)?;
    tape.backward(out)?.accumulate_into(&mut work);

    let eval = |s: &ParamStore<T>| -> Result<T, TensorError> {
        let t = Tape::new();
        let y = loss(&t, s)?;
        Ok(t.item(y))
    };
    let mut report = Vec::with_capacity(ids.len());
    for &id in ids {
        let analytic = work.get(id).grad.clone();
        let mut worst = T::zero();
        for i in 0..analytic.len() {
            let orig = work.get(id).value.data()[i];
            work.get_mut(id).value.data_mut()[i] = orig + h;
            let fp = eval(&work)?;
            work.get_mut(id).value.data_mut()[i] = orig - h;
            let fm = eval(&work)?;
            work.get_mut(id).value.data_mut()[i] = orig;
            let numeric = (fp - fm) / (h + h);
            worst = worst.max(relative_error(analytic[i], numeric));
        }
        report.push((work.get(id).name.clone(), worst));
    }
    Ok(report)
}
