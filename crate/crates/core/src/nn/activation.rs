use serde::{Deserialize, Serialize};

use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Silu,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Silu => "silu",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "relu" => Some(Activation::Relu),
            "silu" | "swish" => Some(Activation::Silu),
            _ => None,
        }
    }

    #[inline]
    pub fn apply<F: Scalar>(self, x: F) -> F {
        match self {
            Activation::Relu => x.max(F::zero()),
            Activation::Silu => silu(x),
        }
    }

    /// Derivative with respect to the pre-activation value.
    #[inline]
    pub fn derivative<F: Scalar>(self, x: F) -> F {
        match self {
            Activation::Relu => {
                if x > F::zero() {
                    F::one()
                } else {
                    F::zero()
                }
            }
            Activation::Silu => {
                let s = sigmoid(x);
                s * (F::one() + x * (F::one() - s))
            }
        }
    }

    pub fn forward<F: Scalar>(self, x: &Tensor<F>) -> Tensor<F> {
        x.map(|v| self.apply(v))
    }

    /// Gradient through the activation given its input `pre` and upstream `dy`.
    pub fn backward<F: Scalar>(self, pre: &Tensor<F>, dy: &Tensor<F>) -> Tensor<F> {
        let mut out = dy.clone();
        for (g, &x) in out.data_mut().iter_mut().zip(pre.data()) {
            *g = *g * self.derivative(x);
        }
        out
    }
}

#[inline]
pub fn sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// `x * sigmoid(x)`
#[inline]
pub fn silu<F: Scalar>(x: F) -> F {
    x * sigmoid(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn silu_reference_values() {
        assert_eq!(silu(0.0f64), 0.0);
        // 1 / (1 + e^-1) to 12 digits
        assert!((silu(1.0f64) - 0.731_058_578_630).abs() < 1e-6);
        assert!((silu(30.0f64) / 30.0 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn silu_is_not_monotonic() {
        // minimum sits near x = -1.278
        assert!(silu(-1.278f64) < silu(-0.5f64));
        assert!(silu(-1.278f64) < silu(-3.0f64));
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-6;
        for act in [Activation::Relu, Activation::Silu] {
            for &x in &[-2.5f64, -0.7, 0.3, 1.9] {
                let fd = (act.apply(x + h) - act.apply(x - h)) / (2.0 * h);
                assert!((fd - act.derivative(x)).abs() < 1e-8, "{act:?} at {x}");
            }
        }
    }

    #[test]
    fn sigmoid_is_stable_for_large_inputs() {
        assert_eq!(sigmoid(-1000.0f64), 0.0);
        assert_eq!(sigmoid(1000.0f64), 1.0);
    }
}
