//! Upscaler abstraction and the eight-way dihedral self-ensemble.

use crate::data::bicubic_resize;
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::model::Model;

/// Anything that maps an LR image to an SR image `scale` times larger.
pub trait Upscaler: Sync {
    fn scale(&self) -> usize;
    fn upscale(&self, lr: &ImageTensor) -> Result<ImageTensor>;
}

impl Upscaler for Model<f32> {
    fn scale(&self) -> usize {
        self.config().scale
    }

    fn upscale(&self, lr: &ImageTensor) -> Result<ImageTensor> {
        let x = ImageTensor::to_batch(&[lr])?;
        let y = self.forward(&x)?;
        ImageTensor::from_batch(&y, 0, lr.colorspace())
    }
}

/// Pixel replication.
#[derive(Debug, Clone, Copy)]
pub struct NearestUpscaler {
    pub scale: usize,
}

impl Upscaler for NearestUpscaler {
    fn scale(&self) -> usize {
        self.scale
    }

    fn upscale(&self, lr: &ImageTensor) -> Result<ImageTensor> {
        let s = self.scale;
        Ok(lr.remap(lr.height() * s, lr.width() * s, |y, x| (y / s, x / s)))
    }
}

/// The bicubic resizer used for degradation, run in the other direction.
#[derive(Debug, Clone, Copy)]
pub struct BicubicUpscaler {
    pub scale: usize,
}

impl Upscaler for BicubicUpscaler {
    fn scale(&self) -> usize {
        self.scale
    }

    fn upscale(&self, lr: &ImageTensor) -> Result<ImageTensor> {
        bicubic_resize(lr, lr.height() * self.scale, lr.width() * self.scale)
    }
}

/// Element of the symmetry group of the square: an optional horizontal flip
/// followed by `rot` counter-clockwise quarter turns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dihedral {
    pub flip: bool,
    pub rot: u8,
}

impl Dihedral {
    pub const IDENTITY: Dihedral = Dihedral { flip: false, rot: 0 };

    pub fn all() -> [Dihedral; 8] {
        let mut out = [Dihedral::IDENTITY; 8];
        for (i, d) in out.iter_mut().enumerate() {
            *d = Dihedral {
                flip: i >= 4,
                rot: (i % 4) as u8,
            };
        }
        out
    }

    pub fn apply(&self, img: &ImageTensor) -> ImageTensor {
        let mut out = if self.flip { img.flip_horizontal() } else { img.clone() };
        for _ in 0..self.rot {
            out = out.rot90();
        }
        out
    }

    /// Undoes [`Dihedral::apply`].
    pub fn invert(&self, img: &ImageTensor) -> ImageTensor {
        let mut out = img.clone();
        for _ in 0..(4 - self.rot) % 4 {
            out = out.rot90();
        }
        if self.flip {
            out = out.flip_horizontal();
        }
        out
    }
}

/// Average of `invert(model(apply(lr)))` over all eight transforms.
pub fn self_ensemble<U: Upscaler + ?Sized>(model: &U, lr: &ImageTensor) -> Result<ImageTensor> {
    let mut acc: Option<(ImageTensor, Vec<f64>)> = None;
    for d in Dihedral::all() {
        let out = d.invert(&model.upscale(&d.apply(lr))?);
        match &mut acc {
            None => {
                let sum = out.data().iter().map(|&v| v as f64).collect();
                acc = Some((out, sum));
            }
            Some((first, sum)) => {
                if out.dims() != first.dims() {
                    return Err(Error::Shape("self-ensemble outputs disagree in size".into()));
                }
                for (s, &v) in sum.iter_mut().zip(out.data()) {
                    *s += v as f64;
                }
            }
        }
    }
    let (mut img, sum) = acc.expect("eight transforms");
    for (o, s) in img.data_mut().iter_mut().zip(sum) {
        *o = (s / 8.0) as f32;
    }
    Ok(img)
}

/// Single pass or self-ensemble, by flag.
pub fn run_upscaler<U: Upscaler + ?Sized>(model: &U, lr: &ImageTensor, ensemble: bool) -> Result<ImageTensor> {
    if ensemble {
        self_ensemble(model, lr)
    } else {
        model.upscale(lr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::ColorSpace;
    use std::collections::HashSet;

    fn img(h: usize, w: usize) -> ImageTensor {
        ImageTensor::from_fn(h, w, ColorSpace::Rgb, |y, x, c| ((y * 5 + x * 11 + c * 3) % 23) as f32 / 22.0)
    }

    #[test]
    fn eight_distinct_invertible_transforms() {
        let a = img(5, 7);
        let all = Dihedral::all();
        let outputs: HashSet<Vec<u32>> = all
            .iter()
            .map(|d| d.apply(&a).data().iter().map(|v| v.to_bits()).collect())
            .collect();
        assert_eq!(outputs.len(), 8);
        for d in all {
            assert_eq!(d.invert(&d.apply(&a)), a);
            // closure: the inverse is itself one of the eight
            let inv = d.invert(&a);
            assert!(all.iter().any(|e| e.apply(&a) == inv));
        }
    }

    #[test]
    fn nearest_ensemble_collapses() {
        let m = NearestUpscaler { scale: 3 };
        let a = img(6, 9);
        assert_eq!(self_ensemble(&m, &a).unwrap(), m.upscale(&a).unwrap());
    }
}
