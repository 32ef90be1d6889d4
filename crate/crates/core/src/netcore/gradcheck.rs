//! Finite-difference gradient oracle.
//!
//! Central differences in f64 with a fixed step; callers compare against
//! tape gradients with [`grad_rel_err`].

use super::tape::{ParamId, ParamStore};

pub const FD_STEP: f64 = 1e-5;

/// Central-difference derivative of `f` with respect to one scalar component
/// of one parameter. Restores the original value before returning.
pub fn finite_diff_grad<F>(
    store: &mut ParamStore<f64>,
    id: ParamId,
    idx: usize,
    mut f: F,
) -> f64
where
    F: FnMut(&ParamStore<f64>) -> f64,
{
    let orig = store.value(id).data()[idx];
    store.value_mut(id).data_mut()[idx] = orig + FD_STEP;
    let hi = f(store);
    store.value_mut(id).data_mut()[idx] = orig - FD_STEP;
    let lo = f(store);
    store.value_mut(id).data_mut()[idx] = orig;
    (hi - lo) / (2.0 * FD_STEP)
}

/// Relative error between analytic and numeric gradients:
/// max-norm of the difference over the larger of the two max-norms,
/// floored to avoid division by zero on all-zero gradients.
pub fn grad_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let mut diff: f64 = 0.0;
    let mut na: f64 = 0.0;
    let mut nn: f64 = 0.0;
    for (&a, &f) in analytic.iter().zip(numeric) {
        diff = diff.max((a - f).abs());
        na = na.max(a.abs());
        nn = nn.max(f.abs());
    }
    diff / na.max(nn).max(1e-8)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::tensor::Tensor;

    #[test]
    fn quadratic_derivative() {
        let mut store = ParamStore::<f64>::new();
        let p = store.add("p", Tensor::from_vec(&[1], vec![3.0])).unwrap();
        let d = finite_diff_grad(&mut store, p, 0, |s| {
            let x = s.value(p).item();
            x * x
        });
        assert!((d - 6.0).abs() < 1e-8);
        assert_eq!(store.value(p).item(), 3.0);
    }

    #[test]
    fn rel_err_scales() {
        assert!(grad_rel_err(&[1.0, 2.0], &[1.0, 2.0]) < 1e-12);
        let e = grad_rel_err(&[1.0, 2.0], &[1.0, 2.002]);
        assert!((e - 0.002 / 2.002).abs() < 1e-12, "{e}");
        assert_eq!(grad_rel_err(&[0.0], &[0.0]), 0.0);
    }
}
