//! Channel attention (squeeze-and-excitation) gating.

use super::activation::{sigmoid, Activation};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Borrowed weights of one attention unit. The two 1x1 convolutions act on
/// pooled vectors, so they are stored as dense `out x in` matrices.
#[derive(Debug, Clone, Copy)]
pub struct AttentionParams<'a, F> {
    pub down_w: &'a [F],
    pub down_b: &'a [F],
    pub up_w: &'a [F],
    pub up_b: &'a [F],
    pub act: Activation,
}

impl<F> AttentionParams<'_, F> {
    fn reduced(&self) -> usize {
        self.down_b.len()
    }

    fn channels(&self) -> usize {
        self.up_b.len()
    }
}

/// Intermediate values needed by the backward pass.
#[derive(Debug, Clone)]
pub struct AttentionCache<F> {
    /// Pre-activation of the squeeze layer, `n x c/r`.
    pub squeezed: Vec<F>,
    /// Per-channel gates in (0, 1), `n x c`.
    pub gate: Vec<F>,
    pooled: Vec<F>,
}

fn validate<F: Scalar>(x: &Tensor<F>, p: &AttentionParams<'_, F>) -> Result<()> {
    let c = x.shape().get(1).copied().unwrap_or(0);
    let cr = p.reduced();
    if x.shape().len() != 4 || c != p.channels() || cr == 0 || c % cr != 0 {
        return Err(Error::Shape(format!(
            "channel attention with {} channels reduced to {} cannot gate {:?}",
            p.channels(),
            cr,
            x.shape()
        )));
    }
    if p.down_w.len() != cr * c || p.up_w.len() != c * cr {
        return Err(Error::Shape("channel attention weight sizes disagree".into()));
    }
    Ok(())
}

/// Pool, squeeze, activate, excite, sigmoid, then rescale each input channel.
pub fn channel_attention<F: Scalar>(
    x: &Tensor<F>,
    p: AttentionParams<'_, F>,
) -> Result<(Tensor<F>, AttentionCache<F>)> {
    validate(x, &p)?;
    let (n, c, h, w) = x.dims4();
    let cr = p.reduced();
    let hw = h * w;
    let inv = F::one() / F::from_usize(hw).unwrap();

    let pooled: Vec<F> = x
        .data()
        .chunks_exact(hw)
        .map(|plane| plane.iter().copied().sum::<F>() * inv)
        .collect();
    let mut squeezed = vec![F::zero(); n * cr];
    let mut gate = vec![F::zero(); n * c];
    for b in 0..n {
        let s = &pooled[b * c..(b + 1) * c];
        for j in 0..cr {
            let row = &p.down_w[j * c..(j + 1) * c];
            squeezed[b * cr + j] =
                p.down_b[j] + row.iter().zip(s).map(|(&a, &v)| a * v).sum::<F>();
        }
        let hidden: Vec<F> = squeezed[b * cr..(b + 1) * cr]
            .iter()
            .map(|&z| p.act.apply(z))
            .collect();
        for i in 0..c {
            let row = &p.up_w[i * cr..(i + 1) * cr];
            let z = p.up_b[i] + row.iter().zip(&hidden).map(|(&a, &v)| a * v).sum::<F>();
            gate[b * c + i] = sigmoid(z);
        }
    }

    let mut out = x.clone();
    for (plane, &g) in out.data_mut().chunks_exact_mut(hw).zip(&gate) {
        for v in plane {
            *v = *v * g;
        }
    }
    Ok((
        out,
        AttentionCache {
            squeezed,
            gate,
            pooled,
        },
    ))
}

/// Gradients of one attention unit, laid out like [`AttentionParams`].
pub struct AttentionGrads<'a, F> {
    pub down_w: &'a mut [F],
    pub down_b: &'a mut [F],
    pub up_w: &'a mut [F],
    pub up_b: &'a mut [F],
}

/// Backward pass; accumulates parameter gradients and returns `dL/dx`.
pub fn channel_attention_backward<F: Scalar>(
    x: &Tensor<F>,
    p: AttentionParams<'_, F>,
    cache: &AttentionCache<F>,
    dy: &Tensor<F>,
    grads: AttentionGrads<'_, F>,
) -> Result<Tensor<F>> {
    validate(x, &p)?;
    let (n, c, h, w) = x.dims4();
    let cr = p.reduced();
    let hw = h * w;
    let inv = F::one() / F::from_usize(hw).unwrap();

    // direct path: dx = dy * gate
    let mut dx = dy.clone();
    for (plane, &g) in dx.data_mut().chunks_exact_mut(hw).zip(&cache.gate) {
        for v in plane {
            *v = *v * g;
        }
    }

    for b in 0..n {
        // d gate[i] = sum_hw dy * x
        let mut dz2 = vec![F::zero(); c];
        for i in 0..c {
            let off = (b * c + i) * hw;
            let dg: F = dy.data()[off..off + hw]
                .iter()
                .zip(&x.data()[off..off + hw])
                .map(|(&a, &v)| a * v)
                .sum();
            let g = cache.gate[b * c + i];
            dz2[i] = dg * g * (F::one() - g);
        }
        let z1 = &cache.squeezed[b * cr..(b + 1) * cr];
        let hidden: Vec<F> = z1.iter().map(|&z| p.act.apply(z)).collect();
        let mut dhidden = vec![F::zero(); cr];
        for i in 0..c {
            grads.up_b[i] = grads.up_b[i] + dz2[i];
            for j in 0..cr {
                grads.up_w[i * cr + j] = grads.up_w[i * cr + j] + dz2[i] * hidden[j];
                dhidden[j] = dhidden[j] + p.up_w[i * cr + j] * dz2[i];
            }
        }
        let pooled = &cache.pooled[b * c..(b + 1) * c];
        let mut dpooled = vec![F::zero(); c];
        for j in 0..cr {
            let dz1 = dhidden[j] * p.act.derivative(z1[j]);
            grads.down_b[j] = grads.down_b[j] + dz1;
            for i in 0..c {
                grads.down_w[j * c + i] = grads.down_w[j * c + i] + dz1 * pooled[i];
                dpooled[i] = dpooled[i] + p.down_w[j * c + i] * dz1;
            }
        }
        for i in 0..c {
            let add = dpooled[i] * inv;
            let off = (b * c + i) * hw;
            for v in &mut dx.data_mut()[off..off + hw] {
                *v = *v + add;
            }
        }
    }
    Ok(dx)
}
