use alloc::format;
use alloc::vec::Vec;

use super::{Parameterized, Rng};
use crate::{Error, Result};

/// Central-difference step.
pub const GRAD_CHECK_STEP: f64 = 1e-5;

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares `analytic` against central differences of `f` at `params`.
///
/// `coords` restricts the check to a subset of coordinates; `None` checks all
/// of them. Returns the largest `|g_a - g_n| / max(1e-8, |g_a| + |g_n|)`.
pub fn grad_check<F>(mut f: F, params: &[f64], analytic: &[f64], coords: Option<&[usize]>) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    if params.len() != analytic.len() {
        return Err(Error::Dimension(format!(
            "{} parameters, {} analytic gradients",
            params.len(),
            analytic.len()
        )));
    }
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..params.len()).collect();
            &all
        }
    };
    let mut x = params.to_vec();
    let mut worst: f64 = 0.0;
    for &i in coords {
        let orig = x[i];
        x[i] = orig + GRAD_CHECK_STEP;
        let plus = f(&x);
        x[i] = orig - GRAD_CHECK_STEP;
        let minus = f(&x);
        x[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!("objective at coordinate {i}")));
        }
        let numeric = (plus - minus) / (2.0 * GRAD_CHECK_STEP);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    Ok(worst)
}

/// Tensor-wise gradient check over a [`Parameterized`] bundle.
///
/// At most `per_tensor` coordinates are sampled from every tensor (all of
/// them when the tensor is smaller). `loss` must be a pure function of the
/// parameters it receives.
pub fn grad_check_params<P, F>(params: &P, analytic: &P, mut loss: F, per_tensor: usize, rng: &mut Rng) -> Result<f64>
where
    P: Parameterized + Clone,
    F: FnMut(&P) -> f64,
{
    let grads: Vec<Vec<f64>> = analytic
        .named_params()
        .into_iter()
        .map(|(_, m)| m.data().to_vec())
        .collect();
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for (t, grad) in grads.iter().enumerate() {
        let n = grad.len();
        let coords: Vec<usize> = if n <= per_tensor {
            (0..n).collect()
        } else {
            (0..per_tensor).map(|_| rng.below(n)).collect()
        };
        for &i in &coords {
            let orig = probe.params_mut()[t].data()[i];
            probe.params_mut()[t].data_mut()[i] = orig + GRAD_CHECK_STEP;
            let plus = loss(&probe);
            probe.params_mut()[t].data_mut()[i] = orig - GRAD_CHECK_STEP;
            let minus = loss(&probe);
            probe.params_mut()[t].data_mut()[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite(format!("objective at tensor {t} coordinate {i}")));
            }
            let numeric = (plus - minus) / (2.0 * GRAD_CHECK_STEP);
            worst = worst.max(relative_error(grad[i], numeric));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::sigmoid;
    use alloc::vec;

    #[test]
    fn polynomial_is_exact() {
        let err = grad_check(|p| p[0] * p[0], &[3.0], &[6.0], None).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn sigmoid_sum() {
        let p = vec![-1.5, 0.0, 0.3, 2.0];
        let analytic: Vec<f64> = sigmoid(&p).iter().map(|s| s * (1.0 - s)).collect();
        let err = grad_check(|x| sigmoid(x).iter().sum(), &p, &analytic, None).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn doubled_gradient_reports_one_third() {
        let err = grad_check(|p| p[0] * p[0], &[3.0], &[12.0], None).unwrap();
        assert!((err - 1.0 / 3.0).abs() < 1e-8, "{err}");
    }

    #[test]
    fn non_finite_objective_is_an_error() {
        assert!(grad_check(|p| 1.0 / (p[0] - p[0]), &[1.0], &[0.0], None).is_err());
    }
}
