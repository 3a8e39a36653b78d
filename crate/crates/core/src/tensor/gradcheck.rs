use super::Tensor;
use crate::error::{Error, Result};

/// An operation with a hand-written backward rule, evaluated in `f64` for
/// verification.
pub trait DifferentiableOp {
    fn name(&self) -> &str;

    fn forward(&self, inputs: &[Tensor<f64>]) -> Result<Tensor<f64>>;

    /// Gradient of `sum(upstream * forward(inputs))` with respect to each
    /// input, in input order.
    fn backward(&self, inputs: &[Tensor<f64>], upstream: &Tensor<f64>)
        -> Result<Vec<Tensor<f64>>>;
}

/// Adapter turning a pair of closures into a [`DifferentiableOp`].
pub struct FnOp<F, B> {
    name: String,
    forward: F,
    backward: B,
}

impl<F, B> FnOp<F, B>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
    B: Fn(&[Tensor<f64>], &Tensor<f64>) -> Result<Vec<Tensor<f64>>>,
{
    pub fn new(name: impl Into<String>, forward: F, backward: B) -> Self {
        Self {
            name: name.into(),
            forward,
            backward,
        }
    }
}

impl<F, B> DifferentiableOp for FnOp<F, B>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
    B: Fn(&[Tensor<f64>], &Tensor<f64>) -> Result<Vec<Tensor<f64>>>,
{
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&self, inputs: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        (self.forward)(inputs)
    }

    fn backward(
        &self,
        inputs: &[Tensor<f64>],
        upstream: &Tensor<f64>,
    ) -> Result<Vec<Tensor<f64>>> {
        (self.backward)(inputs, upstream)
    }
}

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone)]
pub struct GradReport {
    pub op: String,
    pub max_rel_error: f64,
    /// `(input index, element index)` of the worst element.
    pub worst: Option<(usize, usize)>,
    pub elements_checked: usize,
    pub tol: f64,
    pub passed: bool,
}

impl std::fmt::Display for GradReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}: max rel err {:.3e} over {} elements (tol {:.0e}) {}",
            self.op,
            self.max_rel_error,
            self.elements_checked,
            self.tol,
            if self.passed { "PASS" } else { "FAIL" }
        )
    }
}

/// Compares the analytic gradient of `sum(op(inputs))` against central
/// differences with the given step, for every element of every input.
///
/// The relative error of an element is `|a - n| / max(|a|, |n|, 1e-12)`.
pub fn grad_check(
    op: &dyn DifferentiableOp,
    inputs: &[Tensor<f64>],
    step: f64,
    tol: f64,
) -> Result<GradReport> {
    let out = op.forward(inputs)?;
    if !out.all_finite() {
        return Err(Error::NonFinite(op.name().to_string()));
    }
    let ones = Tensor::full(out.shape(), 1.0);
    let analytic = op.backward(inputs, &ones)?;
    if analytic.len() != inputs.len() {
        return Err(Error::contract(format!(
            "{}: backward returned {} gradients for {} inputs",
            op.name(),
            analytic.len(),
            inputs.len()
        )));
    }

    let mut work = inputs.to_vec();
    let mut max_rel = 0.0f64;
    let mut worst = None;
    let mut checked = 0usize;
    for (ti, grad) in analytic.iter().enumerate() {
        grad.expect_shape("grad_check", inputs[ti].shape())?;
        for ei in 0..inputs[ti].len() {
            let x0 = inputs[ti].data()[ei];
            work[ti].data_mut()[ei] = x0 + step;
            let plus = op.forward(&work)?.sum();
            work[ti].data_mut()[ei] = x0 - step;
            let minus = op.forward(&work)?.sum();
            work[ti].data_mut()[ei] = x0;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite(op.name().to_string()));
            }
            let numeric = (plus - minus) / (2.0 * step);
            let a = grad.data()[ei];
            let denom = a.abs().max(numeric.abs()).max(1e-12);
            let rel = (a - numeric).abs() / denom;
            if rel > max_rel || rel.is_nan() {
                max_rel = if rel.is_nan() { f64::INFINITY } else { rel };
                worst = Some((ti, ei));
            }
            checked += 1;
        }
    }
    Ok(GradReport {
        op: op.name().to_string(),
        max_rel_error: max_rel,
        worst,
        elements_checked: checked,
        tol,
        passed: max_rel <= tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ops;

    fn tanh_op() -> impl DifferentiableOp {
        FnOp::new(
            "tanh",
            |x: &[Tensor<f64>]| Ok(ops::tanh(&x[0])),
            |x: &[Tensor<f64>], g: &Tensor<f64>| Ok(vec![ops::tanh_backward(&ops::tanh(&x[0]), g)?]),
        )
    }

    #[test]
    fn tanh_passes() {
        let x = Tensor::from_vec(&[3, 3], (0..9).map(|i| (i as f64 * 0.7).sin()).collect()).unwrap();
        let report = grad_check(&tanh_op(), &[x], 1e-6, 1e-5).unwrap();
        assert!(report.passed, "{report}");
        assert_eq!(report.elements_checked, 9);
    }

    #[test]
    fn constant_output_has_zero_gradient() {
        let op = FnOp::new(
            "const",
            |_: &[Tensor<f64>]| Ok(Tensor::full(&[2], 4.0)),
            |x: &[Tensor<f64>], _: &Tensor<f64>| Ok(vec![Tensor::zeros(x[0].shape())]),
        );
        let report = grad_check(&op, &[Tensor::full(&[4], 1.5)], 1e-6, 1e-5).unwrap();
        assert!(report.passed);
        assert_eq!(report.max_rel_error, 0.0);
    }

    #[test]
    fn wrong_gradient_fails() {
        let op = FnOp::new(
            "bad_square",
            |x: &[Tensor<f64>]| Ok(x[0].map(|v| v * v)),
            |x: &[Tensor<f64>], _: &Tensor<f64>| Ok(vec![x[0].map(|v| v)]),
        );
        let report = grad_check(&op, &[Tensor::full(&[2], 1.0)], 1e-6, 1e-5).unwrap();
        assert!(!report.passed);
    }

    #[test]
    fn non_finite_forward_names_the_op() {
        let op = FnOp::new(
            "blowup",
            |x: &[Tensor<f64>]| Ok(x[0].map(|v| v / 0.0)),
            |x: &[Tensor<f64>], _: &Tensor<f64>| Ok(vec![x[0].clone()]),
        );
        match grad_check(&op, &[Tensor::full(&[1], 1.0)], 1e-6, 1e-5) {
            Err(Error::NonFinite(name)) => assert_eq!(name, "blowup"),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }
}
