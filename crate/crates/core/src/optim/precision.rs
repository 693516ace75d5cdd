//! Numeric precision policy. `fp16_mixed` keeps f32 master weights, runs the
//! forward and backward pass on half-rounded weights and inputs, and guards
//! the half-precision gradients with a dynamic loss scale.

use std::borrow::Cow;

use half::f16;
use serde::{Deserialize, Serialize};

use crate::model::{Gradients, Model};
use crate::tensor::Tensor;

pub const INITIAL_LOSS_SCALE: f64 = 65536.0;
pub const LOSS_SCALE_GROWTH_INTERVAL: u64 = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    Fp32,
    Fp16Mixed,
}

impl Precision {
    pub fn name(self) -> &'static str {
        match self {
            Precision::Fp32 => "fp32",
            Precision::Fp16Mixed => "fp16_mixed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "fp32" => Some(Precision::Fp32),
            "fp16_mixed" => Some(Precision::Fp16Mixed),
            _ => None,
        }
    }
}

/// Dynamic loss scale: halve on overflow, double after a run of clean steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossScaler {
    pub scale: f64,
    pub clean_steps: u64,
    pub growth_interval: u64,
    pub skipped_steps: u64,
}

impl Default for LossScaler {
    fn default() -> Self {
        LossScaler {
            scale: INITIAL_LOSS_SCALE,
            clean_steps: 0,
            growth_interval: LOSS_SCALE_GROWTH_INTERVAL,
            skipped_steps: 0,
        }
    }
}

impl LossScaler {
    /// Records one step's outcome and returns whether to apply the update.
    pub fn update(&mut self, overflow: bool) -> StepAction {
        if overflow {
            self.scale /= 2.0;
            self.clean_steps = 0;
            self.skipped_steps += 1;
            StepAction::Skip
        } else {
            self.clean_steps += 1;
            if self.clean_steps >= self.growth_interval {
                self.scale *= 2.0;
                self.clean_steps = 0;
            }
            StepAction::Apply
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepAction {
    Apply,
    /// Gradients overflowed; the optimizer step must not run.
    Skip,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionPolicy {
    pub mode: Precision,
    pub scaler: LossScaler,
}

fn round_half(v: f32) -> f32 {
    f16::from_f32(v).to_f32()
}

impl PrecisionPolicy {
    pub fn new(mode: Precision) -> Self {
        PrecisionPolicy {
            mode,
            scaler: LossScaler::default(),
        }
    }

    /// Factor applied to the loss gradient before backprop.
    pub fn loss_scale(&self) -> f64 {
        match self.mode {
            Precision::Fp32 => 1.0,
            Precision::Fp16Mixed => self.scaler.scale,
        }
    }

    /// Weights used for the forward and backward pass.
    pub fn compute_model<'a>(&self, master: &'a Model<f32>) -> Cow<'a, Model<f32>> {
        match self.mode {
            Precision::Fp32 => Cow::Borrowed(master),
            Precision::Fp16Mixed => {
                let mut m = master.clone();
                for p in m.params_mut() {
                    for v in p.tensor.data_mut() {
                        *v = round_half(*v);
                    }
                }
                Cow::Owned(m)
            }
        }
    }

    pub fn compute_input<'a>(&self, x: &'a Tensor<f32>) -> Cow<'a, Tensor<f32>> {
        match self.mode {
            Precision::Fp32 => Cow::Borrowed(x),
            Precision::Fp16Mixed => Cow::Owned(x.map(round_half)),
        }
    }

    /// Takes gradients of the scaled loss. Under `fp16_mixed` they are rounded
    /// to half precision, checked for overflow and unscaled; on overflow the
    /// step is skipped and the scale halved.
    pub fn process_gradients(&mut self, grads: &mut Gradients<f32>) -> StepAction {
        match self.mode {
            Precision::Fp32 => StepAction::Apply,
            Precision::Fp16Mixed => {
                let mut overflow = false;
                for t in &mut grads.tensors {
                    for v in t.data_mut() {
                        *v = round_half(*v);
                        overflow |= !v.is_finite();
                    }
                }
                let used = self.scaler.scale;
                let action = self.scaler.update(overflow);
                if action == StepAction::Apply {
                    grads.scale((1.0 / used) as f32);
                }
                action
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grads(v: f32) -> Gradients<f32> {
        Gradients {
            tensors: vec![Tensor::from_vec(&[2], vec![v, 1.0]).unwrap()],
        }
    }

    #[test]
    fn fp32_is_a_no_op() {
        let mut p = PrecisionPolicy::new(Precision::Fp32);
        let mut g = grads(0.125);
        assert_eq!(p.process_gradients(&mut g), StepAction::Apply);
        assert_eq!(g, grads(0.125));
        assert_eq!(p.loss_scale(), 1.0);
    }

    #[test]
    fn overflow_skips_and_halves() {
        let mut p = PrecisionPolicy::new(Precision::Fp16Mixed);
        let mut g = grads(f32::INFINITY);
        assert_eq!(p.process_gradients(&mut g), StepAction::Skip);
        assert_eq!(p.loss_scale(), INITIAL_LOSS_SCALE / 2.0);
        // finite in f32 but beyond the half range
        let mut g = grads(70000.0);
        assert_eq!(p.process_gradients(&mut g), StepAction::Skip);
        assert_eq!(p.loss_scale(), INITIAL_LOSS_SCALE / 4.0);
    }

    #[test]
    fn clean_steps_double_the_scale_and_unscale_correctly() {
        let mut p = PrecisionPolicy::new(Precision::Fp16Mixed);
        for i in 0..LOSS_SCALE_GROWTH_INTERVAL {
            let s = p.loss_scale() as f32;
            let mut g = grads(0.5 * s);
            assert_eq!(p.process_gradients(&mut g), StepAction::Apply);
            assert_eq!(g.tensors[0].data()[0], 0.5, "step {i}");
        }
        assert_eq!(p.loss_scale(), 2.0 * INITIAL_LOSS_SCALE);
    }
}
