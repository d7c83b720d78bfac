use super::params::{Gradients, ParamId, ParamStore};
use crate::error::{Error, Result};

/// `|a − n| / (|a| + |n| + 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs() + 1e-8)
}

/// Central difference of `f` w.r.t. one scalar of one parameter. The
/// parameter value is restored exactly afterwards.
pub fn central_difference<F>(store: &mut ParamStore, id: ParamId, index: usize, h: f64, mut f: F) -> f64
where
    F: FnMut(&ParamStore) -> f64,
{
    let original = store.value(id).data()[index];
    store.value_mut(id).data_mut()[index] = original + h;
    let plus = f(store);
    store.value_mut(id).data_mut()[index] = original - h;
    let minus = f(store);
    store.value_mut(id).data_mut()[index] = original;
    (plus - minus) / (2.0 * h)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Largest per-parameter error.
    pub max_relative_error: f64,
    /// Parameter with the largest error.
    pub worst: Option<String>,
    /// `‖a − n‖ / (‖a‖ + ‖n‖ + 1e-8)` over each parameter tensor, in
    /// store order.
    pub per_param: Vec<(String, f64)>,
    /// Largest scalar-wise [`relative_error`]. Entries whose true gradient
    /// is below roughly `1e-6` are dominated by roundoff in the loss, so
    /// this is diagnostic only.
    pub max_elementwise_error: f64,
    pub worst_element: Option<(String, usize)>,
    pub checked: usize,
}

/// Compares the analytic gradient produced by `loss` against central
/// differences for every scalar of the selected parameters (all of them when
/// `only` is `None`).
///
/// `loss` is called once with a gradient buffer to collect the analytic
/// gradient and then repeatedly without one.
pub fn grad_check<F>(
    store: &mut ParamStore,
    only: Option<&[ParamId]>,
    h: f64,
    mut loss: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore, Option<&mut Gradients>) -> Result<f64>,
{
    let mut analytic = store.zero_gradients();
    let base = loss(store, Some(&mut analytic))?;
    if !base.is_finite() {
        return Err(Error::NonFinite(format!("loss = {base}")));
    }

    let ids: Vec<ParamId> = match only {
        Some(ids) => ids.to_vec(),
        None => store.ids().collect(),
    };
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        per_param: Vec::with_capacity(ids.len()),
        max_elementwise_error: 0.0,
        worst_element: None,
        checked: 0,
    };
    let mut failure = None;
    for id in ids {
        let (mut diff, mut norm_a, mut norm_n) = (0.0, 0.0, 0.0);
        for k in 0..store.value(id).len() {
            let numeric = central_difference(store, id, k, h, |s| match loss(s, None) {
                Ok(v) if v.is_finite() => v,
                Ok(v) => {
                    failure.get_or_insert_with(|| Error::NonFinite(format!("loss = {v}")));
                    0.0
                }
                Err(e) => {
                    failure.get_or_insert(e);
                    0.0
                }
            });
            if let Some(e) = failure.take() {
                return Err(e);
            }
            let a = analytic.get(id).data()[k];
            diff += (a - numeric).powi(2);
            norm_a += a * a;
            norm_n += numeric * numeric;
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_elementwise_error {
                report.max_elementwise_error = err;
                report.worst_element = Some((store.name(id).to_string(), k));
            }
        }
        let err = diff.sqrt() / (norm_a.sqrt() + norm_n.sqrt() + 1e-8);
        if err > report.max_relative_error {
            report.max_relative_error = err;
            report.worst = Some(store.name(id).to_string());
        }
        report.per_param.push((store.name(id).to_string(), err));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::tensor::Tensor;

    fn scalar(value: f64) -> (ParamStore, ParamId) {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::from_vec(&[1], vec![value]).unwrap());
        (store, id)
    }

    #[test]
    fn quadratic() {
        let (mut store, id) = scalar(3.0);
        let numeric = central_difference(&mut store, id, 0, 1e-5, |s| s.value(id).data()[0].powi(2));
        assert!((numeric - 6.0).abs() < 1e-6);
        let report = grad_check(&mut store, None, 1e-5, |s, g| {
            let w = s.value(id).data()[0];
            if let Some(g) = g {
                g.get_mut(id).data_mut()[0] += 2.0 * w;
            }
            Ok(w * w)
        })
        .unwrap();
        assert!(report.max_relative_error < 1e-9);
        assert_eq!(store.value(id).data()[0], 3.0);
    }

    #[test]
    fn constant_function_has_zero_gradient_both_ways() {
        let (mut store, id) = scalar(-1.5);
        let numeric = central_difference(&mut store, id, 0, 1e-5, |_| 4.0);
        assert_eq!(numeric, 0.0);
        let report = grad_check(&mut store, None, 1e-5, |_, _| Ok(4.0)).unwrap();
        assert_eq!(report.max_relative_error, 0.0);
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let (mut store, _) = scalar(1.0);
        assert!(matches!(
            grad_check(&mut store, None, 1e-5, |_, _| Ok(f64::NAN)),
            Err(Error::NonFinite(_))
        ));
        let (mut store, id) = scalar(1.0);
        let err = grad_check(&mut store, None, 1e-5, |s, _| {
            let w = s.value(id).data()[0];
            Ok(if w > 1.0 { f64::INFINITY } else { w })
        });
        assert!(matches!(err, Err(Error::NonFinite(_))));
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let (mut store, id) = scalar(2.0);
        let report = grad_check(&mut store, None, 1e-5, |s, g| {
            let w = s.value(id).data()[0];
            if let Some(g) = g {
                g.get_mut(id).data_mut()[0] += 3.0 * w;
            }
            Ok(w * w)
        })
        .unwrap();
        assert!(report.max_relative_error > 0.1);
        assert_eq!(report.worst.as_deref(), Some("w"));
        assert_eq!(report.worst_element, Some(("w".to_string(), 0)));
    }
}
