use crate::error::{Error, Result};
use crate::model::ParamSet;
use crate::scalar::Scalar;

/// Central-difference gradient of `f` at `params`.
///
/// Only trainable tensors are perturbed; running-statistic slots stay zero.
pub fn finite_difference_gradient<T, F>(mut f: F, params: &ParamSet<T>, eps: T) -> Result<ParamSet<T>>
where
    T: Scalar,
    F: FnMut(&ParamSet<T>) -> Result<T>,
{
    let mut grads = params.zeros_like();
    let mut probe = params.clone();
    let two_eps = eps + eps;
    for pi in 0..params.len() {
        if !params.params()[pi].kind.is_trainable() {
            continue;
        }
        for vi in 0..params.params()[pi].tensor.len() {
            let original = params.params()[pi].tensor.data()[vi];
            probe.params_mut()[pi].tensor.data_mut()[vi] = original + eps;
            let plus = f(&probe)?;
            probe.params_mut()[pi].tensor.data_mut()[vi] = original - eps;
            let minus = f(&probe)?;
            probe.params_mut()[pi].tensor.data_mut()[vi] = original;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite("finite-difference objective".into()));
            }
            grads.params_mut()[pi].tensor.data_mut()[vi] = (plus - minus) / two_eps;
        }
    }
    Ok(grads)
}

/// Largest per-coordinate relative error `|a − b| / max(|a|, |b|, floor)`.
pub fn max_relative_error<T: Scalar>(a: &ParamSet<T>, b: &ParamSet<T>, floor: T) -> Result<T> {
    a.check_congruent(b)?;
    Ok(a.flatten()
        .into_iter()
        .zip(b.flatten())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(T::zero(), T::max))
}
