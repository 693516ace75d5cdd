//! Pixel-wise mean absolute error.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

fn check<F: Scalar>(pred: &Tensor<F>, target: &Tensor<F>) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "loss inputs differ: {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Shape("loss of an empty tensor".into()));
    }
    Ok(())
}

/// Mean of `|pred - target|` over every element.
pub fn l1_loss<F: Scalar>(pred: &Tensor<F>, target: &Tensor<F>) -> Result<f64> {
    check(pred, target)?;
    let sum: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| (p.as_f64() - t.as_f64()).abs())
        .sum();
    Ok(sum / pred.len() as f64)
}

/// Gradient of `scale * l1_loss` with respect to `pred`. The subgradient at
/// zero difference is taken as 0.
pub fn l1_grad<F: Scalar>(pred: &Tensor<F>, target: &Tensor<F>, scale: f64) -> Result<Tensor<F>> {
    check(pred, target)?;
    let g = F::from_f64_lossy(scale / pred.len() as f64);
    let data = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            if p > t {
                g
            } else if p < t {
                -g
            } else {
                F::zero()
            }
        })
        .collect();
    Tensor::from_vec(pred.shape(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_cases() {
        let a = Tensor::from_vec(&[1, 1, 2, 2], vec![0.0f64, 0.5, 1.0, 0.25]).unwrap();
        let z = Tensor::zeros(&[1, 1, 2, 2]);
        assert_eq!(l1_loss(&a, &a).unwrap(), 0.0);
        assert!((l1_loss(&a, &z).unwrap() - 0.4375).abs() < 1e-15);
        let b = a.map(|v| v + 0.25);
        assert!((l1_loss(&a, &b).unwrap() - 0.25).abs() < 1e-15);
        assert!(l1_loss(&a, &Tensor::zeros(&[1, 1, 4, 1])).is_err());
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let p = Tensor::from_vec(&[4], vec![0.3f64, -0.2, 0.9, 0.1]).unwrap();
        let t = Tensor::from_vec(&[4], vec![0.1f64, 0.4, 0.2, 0.5]).unwrap();
        let g = l1_grad(&p, &t, 1.0).unwrap();
        let h = 1e-6;
        for i in 0..4 {
            let mut hi = p.clone();
            hi.data_mut()[i] += h;
            let mut lo = p.clone();
            lo.data_mut()[i] -= h;
            let fd = (l1_loss(&hi, &t).unwrap() - l1_loss(&lo, &t).unwrap()) / (2.0 * h);
            assert!((fd - g.data()[i]).abs() < 1e-8);
        }
    }
}
