//! Central finite-difference checks for analytic gradients.

use ndarray::Array2;

use super::params::{ParamId, ParamStore};

/// `|a - n| / max(|a|, |n|, floor)`; the floor keeps vanishing gradients
/// from turning rounding noise into large relative errors.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Central difference of `loss` with respect to one scalar of a parameter.
pub fn central_difference(
    store: &mut ParamStore,
    id: ParamId,
    index: (usize, usize),
    step: f64,
    mut loss: impl FnMut(&ParamStore) -> f64,
) -> f64 {
    let orig = store.get(id).value[index];
    store.get_mut(id).value[index] = orig + step;
    let plus = loss(store);
    store.get_mut(id).value[index] = orig - step;
    let minus = loss(store);
    store.get_mut(id).value[index] = orig;
    (plus - minus) / (2.0 * step)
}

/// Central difference with respect to one entry of a free input matrix.
pub fn central_difference_input(
    input: &mut Array2<f64>,
    index: (usize, usize),
    step: f64,
    mut loss: impl FnMut(&Array2<f64>) -> f64,
) -> f64 {
    let orig = input[index];
    input[index] = orig + step;
    let plus = loss(input);
    input[index] = orig - step;
    let minus = loss(input);
    input[index] = orig;
    (plus - minus) / (2.0 * step)
}
