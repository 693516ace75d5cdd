//! Adam and Lamb with explicit, serialisable state.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Gradients, Model, Trainable};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Lamb,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Lamb => "lamb",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "adam" => Some(OptimizerKind::Adam),
            "lamb" => Some(OptimizerKind::Lamb),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerHyper {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl OptimizerHyper {
    pub fn adam(lr: f64) -> Self {
        OptimizerHyper {
            kind: OptimizerKind::Adam,
            lr,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }

    pub fn lamb(lr: f64) -> Self {
        OptimizerHyper {
            kind: OptimizerKind::Lamb,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-6,
            weight_decay: 0.0,
        }
    }

    /// Defaults for `kind`, keeping `lr`.
    pub fn for_kind(kind: OptimizerKind, lr: f64) -> Self {
        match kind {
            OptimizerKind::Adam => Self::adam(lr),
            OptimizerKind::Lamb => Self::lamb(lr),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr", "must be positive"));
        }
        for (field, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(field, "must lie in [0, 1)"));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::config("eps", "must be positive"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("weight_decay", "must be non-negative"));
        }
        Ok(())
    }
}

/// First and second moments per parameter tensor plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<F = f32> {
    pub step: u64,
    pub m: Vec<Tensor<F>>,
    pub v: Vec<Tensor<F>>,
}

impl<F: Scalar> OptimizerState<F> {
    pub fn for_shapes<'a>(shapes: impl IntoIterator<Item = &'a [usize]>) -> Self {
        let m: Vec<Tensor<F>> = shapes.into_iter().map(Tensor::zeros).collect();
        OptimizerState {
            step: 0,
            v: m.clone(),
            m,
        }
    }

    pub fn for_tensors(params: &[Tensor<F>]) -> Self {
        Self::for_shapes(params.iter().map(|t| t.shape()))
    }

    pub fn for_model(model: &Model<F>) -> Self {
        Self::for_shapes(model.params().iter().map(|p| p.tensor.shape()))
    }

    fn check(&self, i: usize, w: &Tensor<F>, g: &Tensor<F>) -> Result<()> {
        let ok = i < self.m.len() && w.shape() == g.shape() && w.shape() == self.m[i].shape() && w.shape() == self.v[i].shape();
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "optimizer tensor {i}: param {:?}, grad {:?}",
                w.shape(),
                g.shape()
            )))
        }
    }
}

/// How Lamb scales each tensor's update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TrustRatio {
    /// `||w|| / ||u||`, or 1 when either norm is zero.
    #[default]
    Layerwise,
    /// Always 1; Lamb then moves along the Adam direction.
    Unit,
}

/// `||w|| / ||u||` with the zero-norm fallback of 1.
pub fn trust_ratio<F: Scalar>(w: &[F], u: &[F]) -> f64 {
    let norm = |x: &[F]| x.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt();
    let (wn, un) = (norm(w), norm(u));
    if wn > 0.0 && un > 0.0 {
        wn / un
    } else {
        1.0
    }
}

/// Updates the moments of one tensor and returns the bias-corrected ratio
/// `m_hat / (sqrt(v_hat) + eps)`.
fn moments<F: Scalar>(g: &[F], m: &mut [F], v: &mut [F], hyper: &OptimizerHyper, step: u64) -> Vec<F> {
    let b1 = F::from_f64_lossy(hyper.beta1);
    let b2 = F::from_f64_lossy(hyper.beta2);
    let one = F::one();
    let c1 = F::from_f64_lossy(1.0 - hyper.beta1.powi(step as i32));
    let c2 = F::from_f64_lossy(1.0 - hyper.beta2.powi(step as i32));
    let eps = F::from_f64_lossy(hyper.eps);
    g.iter()
        .zip(m.iter_mut().zip(v.iter_mut()))
        .map(|(&g, (m, v))| {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            (*m / c1) / ((*v / c2).sqrt() + eps)
        })
        .collect()
}

fn update_tensor<F: Scalar>(
    w: &mut Tensor<F>,
    g: &Tensor<F>,
    m: &mut Tensor<F>,
    v: &mut Tensor<F>,
    hyper: &OptimizerHyper,
    lr: f64,
    step: u64,
    trust: TrustRatio,
) -> f64 {
    let mut u = moments(g.data(), m.data_mut(), v.data_mut(), hyper, step);
    match hyper.kind {
        OptimizerKind::Adam => {
            let lr = F::from_f64_lossy(lr);
            for (w, r) in w.data_mut().iter_mut().zip(&u) {
                *w = *w - lr * *r;
            }
            1.0
        }
        OptimizerKind::Lamb => {
            let wd = F::from_f64_lossy(hyper.weight_decay);
            for (u, &w) in u.iter_mut().zip(w.data()) {
                *u = *u + wd * w;
            }
            let phi = match trust {
                TrustRatio::Layerwise => trust_ratio(w.data(), &u),
                TrustRatio::Unit => 1.0,
            };
            let step = F::from_f64_lossy(lr * phi);
            for (w, u) in w.data_mut().iter_mut().zip(&u) {
                *w = *w - step * *u;
            }
            phi
        }
    }
}

/// One optimizer step over all tensors. Returns the per-tensor trust ratio
/// (always 1 for Adam).
pub fn optimizer_step<F: Scalar>(
    params: &mut [Tensor<F>],
    grads: &[Tensor<F>],
    state: &mut OptimizerState<F>,
    hyper: &OptimizerHyper,
    lr_t: f64,
    trust: TrustRatio,
) -> Result<Vec<f64>> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "optimizer got {} params, {} grads, {} state tensors",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (w, g)) in params.iter().zip(grads).enumerate() {
        state.check(i, w, g)?;
    }
    state.step += 1;
    let step = state.step;
    Ok(params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
        .map(|((w, g), (m, v))| update_tensor(w, g, m, v, hyper, lr_t, step, trust))
        .collect())
}

/// Bias-corrected Adam step: `w -= lr_t * m_hat / (sqrt(v_hat) + eps)`.
pub fn adam_step<F: Scalar>(
    params: &mut [Tensor<F>],
    grads: &[Tensor<F>],
    state: &mut OptimizerState<F>,
    hyper: &OptimizerHyper,
    lr_t: f64,
) -> Result<()> {
    let hyper = OptimizerHyper {
        kind: OptimizerKind::Adam,
        ..*hyper
    };
    optimizer_step(params, grads, state, &hyper, lr_t, TrustRatio::Layerwise).map(|_| ())
}

/// Lamb step: `u = m_hat / (sqrt(v_hat) + eps) + wd * w`, `w -= lr_t * phi * u`
/// with a trust ratio `phi` per tensor.
pub fn lamb_step<F: Scalar>(
    params: &mut [Tensor<F>],
    grads: &[Tensor<F>],
    state: &mut OptimizerState<F>,
    hyper: &OptimizerHyper,
    lr_t: f64,
) -> Result<Vec<f64>> {
    let hyper = OptimizerHyper {
        kind: OptimizerKind::Lamb,
        ..*hyper
    };
    optimizer_step(params, grads, state, &hyper, lr_t, TrustRatio::Layerwise)
}

/// Steps the trainable partitions of `model`. Frozen tensors and their
/// moments are left untouched; the step counter still advances.
pub fn step_model<F: Scalar>(
    model: &mut Model<F>,
    grads: &Gradients<F>,
    state: &mut OptimizerState<F>,
    hyper: &OptimizerHyper,
    lr_t: f64,
    trainable: Trainable,
) -> Result<()> {
    let params = model.params_mut();
    if params.len() != grads.tensors.len() || params.len() != state.m.len() {
        return Err(Error::Shape("optimizer state does not match the model".into()));
    }
    for (i, (p, g)) in params.iter().zip(&grads.tensors).enumerate() {
        state.check(i, &p.tensor, g)?;
    }
    state.step += 1;
    let step = state.step;
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(&grads.tensors)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        if trainable.contains(p.partition) {
            update_tensor(&mut p.tensor, g, m, v, hyper, lr_t, step, TrustRatio::Layerwise);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Vec<Tensor<f64>> {
        vec![Tensor::from_vec(&[1], vec![v]).unwrap()]
    }

    #[test]
    fn zero_gradient_leaves_params_alone() {
        for hyper in [OptimizerHyper::adam(0.1), OptimizerHyper::lamb(0.1)] {
            let mut w = vec![Tensor::from_vec(&[3], vec![1.0f64, -2.0, 0.5]).unwrap()];
            let before = w.clone();
            let g = vec![Tensor::zeros(&[3])];
            let mut s = OptimizerState::for_tensors(&w);
            optimizer_step(&mut w, &g, &mut s, &hyper, 0.1, TrustRatio::Layerwise).unwrap();
            assert_eq!(w, before);
            assert_eq!(s.step, 1);
        }
    }

    #[test]
    fn adam_first_step_by_hand() {
        let hyper = OptimizerHyper::adam(0.01);
        let mut w = scalar(1.0);
        let mut s = OptimizerState::for_tensors(&w);
        adam_step(&mut w, &scalar(0.1), &mut s, &hyper, 0.01).unwrap();
        // m_hat = 0.1 and v_hat = 0.01 after bias correction
        let want = 1.0 - 0.01 * (0.1 / (0.1 + 1e-8));
        assert!((w[0].data()[0] - want).abs() < 1e-12);
    }

    #[test]
    fn lamb_first_step_by_hand() {
        let hyper = OptimizerHyper::lamb(0.001);
        let mut w = scalar(1.0);
        let mut s = OptimizerState::for_tensors(&w);
        let phi = lamb_step(&mut w, &scalar(0.1), &mut s, &hyper, 0.001).unwrap();
        let r = 0.1 / (0.1 + 1e-6);
        assert!((phi[0] - 1.0 / r).abs() < 1e-9);
        assert!((w[0].data()[0] - 0.999).abs() < 1e-9);
    }

    #[test]
    fn lamb_zero_weight_falls_back_to_unit_ratio() {
        let hyper = OptimizerHyper::lamb(0.01);
        let mut w = vec![Tensor::<f64>::zeros(&[2])];
        let g = vec![Tensor::from_vec(&[2], vec![0.3, -0.2]).unwrap()];
        let mut s = OptimizerState::for_tensors(&w);
        let phi = lamb_step(&mut w, &g, &mut s, &hyper, 0.01).unwrap();
        assert_eq!(phi, vec![1.0]);
        let r = |g: f64| g / (g.abs() + 1e-6);
        assert!((w[0].data()[0] + 0.01 * r(0.3)).abs() < 1e-15);
        assert!((w[0].data()[1] + 0.01 * r(-0.2)).abs() < 1e-15);
    }

    #[test]
    fn identical_tensors_get_identical_updates() {
        let hyper = OptimizerHyper::adam(0.01);
        let t = Tensor::from_vec(&[2], vec![0.4f64, -0.1]).unwrap();
        let g = Tensor::from_vec(&[2], vec![0.2f64, 0.05]).unwrap();
        let mut w = vec![t.clone(), t];
        let mut s = OptimizerState::for_tensors(&w);
        for _ in 0..3 {
            adam_step(&mut w, &[g.clone(), g.clone()], &mut s, &hyper, 0.01).unwrap();
        }
        assert_eq!(w[0], w[1]);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let hyper = OptimizerHyper::adam(0.01);
        let mut w = scalar(1.0);
        let mut s = OptimizerState::for_tensors(&w);
        let g = vec![Tensor::<f64>::zeros(&[2])];
        assert!(matches!(adam_step(&mut w, &g, &mut s, &hyper, 0.01), Err(Error::Shape(_))));
    }

    #[test]
    fn unit_trust_matches_adam_direction() {
        let mut a = vec![Tensor::from_vec(&[3], vec![2.0f64, -1.0, 0.5]).unwrap()];
        let mut b = a.clone();
        let g = vec![Tensor::from_vec(&[3], vec![0.3, 0.1, -0.7]).unwrap()];
        let lamb = OptimizerHyper { beta2: 0.99, eps: 1e-8, ..OptimizerHyper::lamb(0.01) };
        let mut sa = OptimizerState::for_tensors(&a);
        let mut sb = OptimizerState::for_tensors(&b);
        optimizer_step(&mut a, &g, &mut sa, &lamb, 0.01, TrustRatio::Unit).unwrap();
        adam_step(&mut b, &g, &mut sb, &OptimizerHyper::adam(0.01), 0.01).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn hyper_validation() {
        assert!(OptimizerHyper::adam(0.0).validate().is_err());
        assert!(OptimizerHyper { beta2: 1.0, ..OptimizerHyper::lamb(0.1) }.validate().is_err());
        assert!(OptimizerHyper::lamb(0.1).validate().is_ok());
    }
}
