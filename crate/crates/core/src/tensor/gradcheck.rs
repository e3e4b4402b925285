use super::{Array, Graph, Tensor};
use crate::error::{Error, Result};

/// Denominator floor for the relative error, so that coordinates whose
/// true derivative is zero are compared in absolute terms.
const REL_FLOOR: f64 = 1e-6;
/// Coordinates whose central difference is off by more than this get their
/// one-sided slopes inspected for a kink.
const KINK_SUSPECT: f64 = 1e-4;
/// One-sided slopes agreeing to this relative gap mean no kink lies
/// within the step.
const KINK_AGREE: f64 = 1e-3;
/// The step shrinks tenfold per retry, at most this many times.
const KINK_RETRIES: usize = 3;

/// Outcome of comparing backward() against central differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// `(input, flat coordinate)` where the worst error occurred.
    pub worst: (usize, usize),
    /// Backward and central-difference derivatives at `worst`.
    pub worst_pair: (f64, f64),
    pub coordinates: usize,
    pub passed: bool,
}

/// Checks the gradient of a scalar function of several inputs.
///
/// Every coordinate of every input is perturbed by `±h`; the relative error
/// `|analytic − numeric| / max(|analytic|, |numeric|, 1e-6)` must stay below
/// `tol` everywhere for the check to pass. Where the error is suspicious
/// and the slopes on either side of `x` disagree, a ReLU or max kink lies
/// within the step; the step is shrunk tenfold until the two sides agree
/// (up to three times) and the central difference retaken.
pub fn finite_diff_check<F>(f: F, inputs: &[Array<f64>], h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: for<'g> Fn(&'g Graph<f64>, &[Tensor<'g, f64>]) -> Result<Tensor<'g, f64>>,
{
    finite_diff_check_surrogate(&f, &f, inputs, h, tol)
}

/// Like [`finite_diff_check`], but differences `surrogate` instead of `f`.
/// For graphs whose backward pass is not the derivative of their forward
/// value (straight-through estimators), `surrogate` is the function whose
/// derivative backward() is meant to compute.
pub fn finite_diff_check_surrogate<F, S>(
    f: F,
    surrogate: S,
    inputs: &[Array<f64>],
    h: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    F: for<'g> Fn(&'g Graph<f64>, &[Tensor<'g, f64>]) -> Result<Tensor<'g, f64>>,
    S: for<'g> Fn(&'g Graph<f64>, &[Tensor<'g, f64>]) -> Result<Tensor<'g, f64>>,
{
    let analytic = {
        let g = Graph::new();
        let leaves: Vec<_> = inputs.iter().map(|x| g.param(x.clone())).collect();
        let out = f(&g, &leaves)?;
        let grads = g.backward(out)?;
        leaves.iter().map(|t| grads.get_or_zeros(t)).collect::<Vec<_>>()
    };

    let eval = |which: usize, coord: usize, delta: f64| -> Result<f64> {
        let g = Graph::new();
        let leaves: Vec<_> = inputs
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let mut x = x.clone();
                if i == which {
                    x.data_mut()[coord] += delta;
                }
                g.constant(x)
            })
            .collect();
        let v = surrogate(&g, &leaves)?.item();
        if !v.is_finite() {
            return Err(Error::NonFinite(format!(
                "f at input {which} coordinate {coord} ({delta:+e})"
            )));
        }
        Ok(v)
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: (0, 0),
        worst_pair: (0.0, 0.0),
        coordinates: 0,
        passed: false,
    };
    for (which, x) in inputs.iter().enumerate() {
        for coord in 0..x.len() {
            let a = analytic[which].data()[coord];
            let rel = |numeric: f64| (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            let (mut up, mut down) = (eval(which, coord, h)?, eval(which, coord, -h)?);
            let mut numeric = (up - down) / (2.0 * h);
            if rel(numeric) > KINK_SUSPECT {
                let f0 = eval(which, coord, 0.0)?;
                let mut step = h;
                for _ in 0..KINK_RETRIES {
                    let (right, left) = ((up - f0) / step, (f0 - down) / step);
                    if (right - left).abs() <= KINK_AGREE * right.abs().max(left.abs()).max(REL_FLOOR) {
                        break;
                    }
                    step /= 10.0;
                    (up, down) = (eval(which, coord, step)?, eval(which, coord, -step)?);
                    numeric = (up - down) / (2.0 * step);
                }
            }
            let err = rel(numeric);
            if err > report.max_rel_err || report.coordinates == 0 {
                report.max_rel_err = err;
                report.worst = (which, coord);
                report.worst_pair = (a, numeric);
                report.worst_pair = (a, numeric);
            }
            report.coordinates += 1;
        }
    }
    report.passed = report.max_rel_err < tol;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Array<f64> {
        let len = shape.iter().product();
        Array::new(shape.to_vec(), (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn sum_of_squares_matches_analytic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&[8], &mut rng);
        let report = finite_diff_check(
            |_, xs| Ok(xs[0].square()?.sum()),
            std::slice::from_ref(&x),
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(report.passed, "{report:?}");

        let g = Graph::new();
        let t = g.param(x.clone());
        let grads = g.backward(t.square().unwrap().sum()).unwrap();
        for (gv, xv) in grads.get(&t).unwrap().data().iter().zip(x.data()) {
            assert!((gv - 2.0 * xv).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_matmul_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random(&[4, 3], &mut rng);
        let b = random(&[3, 5], &mut rng);
        let w = random(&[4, 5], &mut rng);
        let report = finite_diff_check(
            move |g, xs| {
                let p = xs[0].matmul(xs[1])?.softmax(1, 0.7)?;
                Ok(p.mul(g.constant(w.clone()))?.sum())
            },
            &[a, b],
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn constant_function_has_zero_gradients() {
        let x = Array::from_vec(vec![1.0, 2.0, 3.0]);
        let report = finite_diff_check(|g, _| Ok(g.scalar(4.0)), &[x], 1e-5, 1e-6).unwrap();
        assert_eq!(report.max_rel_err, 0.0);
        assert!(report.passed);
    }

    #[test]
    fn zero_tolerance_fails_everything() {
        let x = Array::from_vec(vec![0.3, -0.2]);
        let report = finite_diff_check(|_, xs| Ok(xs[0].exp().sum()), &[x], 1e-5, 0.0).unwrap();
        assert!(!report.passed);
    }

    #[test]
    fn non_finite_value_names_coordinate() {
        let x = Array::from_vec(vec![1.0, 1e-6]);
        let err = finite_diff_check(|_, xs| Ok(xs[0].ln().sum()), &[x], 1e-5, 1e-4).unwrap_err();
        assert!(err.to_string().contains("coordinate 1"), "{err}");
    }
}
