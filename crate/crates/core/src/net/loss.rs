use crate::error::{ensure, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone)]
pub struct LossOutput<T> {
    pub value: f64,
    pub grad_out: Tensor<T>,
    pub grad_3d: Tensor<T>,
}

/// Masked mean absolute error of the final output plus that of the 3D
/// block's coarse distance. With `l1_only` the coarse term is dropped.
pub fn coarse_fine_loss<T: Real>(
    d_out: &Tensor<T>,
    d_3d: &Tensor<T>,
    gt: &Tensor<T>,
    mask: &[bool],
    l1_only: bool,
) -> Result<LossOutput<T>> {
    d_3d.expect_shape("coarse_fine_loss", d_out.shape())?;
    gt.expect_shape("coarse_fine_loss", d_out.shape())?;
    ensure!(mask.len() == d_out.len(), "loss mask length mismatch");
    let n = mask.iter().filter(|&&m| m).count();
    ensure!(n > 0, "loss mask selects no pixels");
    let inv = T::of(1.0 / n as f64);
    let term = |pred: &Tensor<T>| -> (f64, Tensor<T>) {
        let mut sum = 0.0;
        let mut grad = Tensor::zeros(pred.shape());
        for (i, ((&p, &g), &m)) in pred.data().iter().zip(gt.data()).zip(mask).enumerate() {
            if !m {
                continue;
            }
            let e = p - g;
            sum += e.abs().to_f64_lossy();
            grad.data_mut()[i] = if e > T::zero() {
                inv
            } else if e < T::zero() {
                -inv
            } else {
                T::zero()
            };
        }
        (sum / n as f64, grad)
    };
    let (v_out, grad_out) = term(d_out);
    let (value, grad_3d) = if l1_only {
        (v_out, Tensor::zeros(d_3d.shape()))
    } else {
        let (v3, g3) = term(d_3d);
        (v_out + v3, g3)
    };
    Ok(LossOutput {
        value,
        grad_out,
        grad_3d,
    })
}
