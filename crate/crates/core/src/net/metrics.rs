use crate::error::{ensure, Result};
use crate::tensor::Real;

/// Masked mean absolute error in meters.
pub fn mae<T: Real>(pred: &[T], gt: &[T], mask: &[bool]) -> Result<f64> {
    ensure!(pred.len() == gt.len() && gt.len() == mask.len(), "metric operands differ in length");
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((&p, &g), &m) in pred.iter().zip(gt).zip(mask) {
        if m {
            sum += (p - g).abs().to_f64_lossy();
            n += 1;
        }
    }
    ensure!(n > 0, "metric mask selects no pixels");
    Ok(sum / n as f64)
}

/// `MAE(pred) / MAE(baseline)`; `None` when the baseline is exact.
pub fn relative_error<T: Real>(pred: &[T], baseline: &[T], gt: &[T], mask: &[bool]) -> Result<Option<f64>> {
    let base = mae(baseline, gt, mask)?;
    let m = mae(pred, gt, mask)?;
    Ok(if base > 0.0 { Some(m / base) } else { None })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_examples() {
        let gt = [1.0, 2.0, 3.0, 4.0];
        let base = [1.2, 2.2, 3.2, 4.2];
        let half = [1.1, 2.1, 3.1, 4.1];
        let mask = [true; 4];
        assert_eq!(mae(&gt, &gt, &mask).unwrap(), 0.0);
        assert_eq!(relative_error(&gt, &base, &gt, &mask).unwrap(), Some(0.0));
        assert_eq!(relative_error(&base, &base, &gt, &mask).unwrap(), Some(1.0));
        let r = relative_error(&half, &base, &gt, &mask).unwrap().unwrap();
        assert!((r - 0.5).abs() < 1e-12);
        assert_eq!(relative_error(&half, &gt, &gt, &mask).unwrap(), None);
    }
}
