//! Aligned LR/HR patch sampling and the per-pair transforms applied to it.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use super::resize::bicubic_resize;
use crate::error::{Error, Result};
use crate::image::{ColorSpace, ImageTensor};
use crate::metrics::psnr;

/// Rejection rule for "easy" patches that bicubic already reconstructs well.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub threshold_db: f64,
    pub reject_prob: f64,
}

impl Default for Rejection {
    fn default() -> Self {
        Rejection {
            threshold_db: 24.0,
            reject_prob: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// LR patch side length.
    pub patch_size: usize,
    pub geo_aug: bool,
    pub color_aug: bool,
    pub mixup_alpha: Option<f64>,
    pub rejection: Option<Rejection>,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            patch_size: 48,
            geo_aug: true,
            color_aug: false,
            mixup_alpha: None,
            rejection: None,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size < 8 {
            return Err(Error::config("patch_size", "must be at least 8"));
        }
        if let Some(a) = self.mixup_alpha {
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::config("mixup_alpha", "must be positive"));
            }
        }
        if let Some(r) = self.rejection {
            if !(0.0..=1.0).contains(&r.reject_prob) {
                return Err(Error::config("reject_prob", "must lie in [0, 1]"));
            }
            if r.threshold_db.is_nan() {
                return Err(Error::config("rejection_threshold_db", "must be a number"));
            }
        }
        Ok(())
    }
}

/// An LR patch and the HR patch covering the same area.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPair {
    pub lr: ImageTensor,
    pub hr: ImageTensor,
    pub source_id: String,
    /// Top-left corner of the LR crop.
    pub offset: (usize, usize),
}

impl PatchPair {
    pub fn scale(&self) -> usize {
        self.hr.height() / self.lr.height()
    }
}

/// Uniformly random aligned crop; the HR offset is `scale` times the LR one.
pub fn sample_patch_pair<R: Rng + ?Sized>(
    source_id: &str,
    hr: &ImageTensor,
    lr: &ImageTensor,
    scale: usize,
    patch_size: usize,
    rng: &mut R,
) -> Result<PatchPair> {
    let (lh, lw) = lr.dims();
    if lh < patch_size || lw < patch_size {
        return Err(Error::Sampling(format!(
            "`{source_id}`: LR image {lh}x{lw} is smaller than patch {patch_size}"
        )));
    }
    if hr.height() < lh * scale || hr.width() < lw * scale {
        return Err(Error::Sampling(format!("`{source_id}`: HR image does not cover LR at scale {scale}")));
    }
    let top = rng.random_range(0..=lh - patch_size);
    let left = rng.random_range(0..=lw - patch_size);
    let hp = patch_size * scale;
    Ok(PatchPair {
        lr: lr.crop(top, left, patch_size, patch_size)?,
        hr: hr.crop(top * scale, left * scale, hp, hp)?,
        source_id: source_id.to_string(),
        offset: (top, left),
    })
}

/// Flip / transpose combination applied identically to LR and HR.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GeoTransform {
    pub hflip: bool,
    pub vflip: bool,
    pub transpose: bool,
}

impl GeoTransform {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        GeoTransform {
            hflip: rng.random_bool(0.5),
            vflip: rng.random_bool(0.5),
            transpose: rng.random_bool(0.5),
        }
    }

    pub fn apply_image(&self, img: &ImageTensor) -> ImageTensor {
        let mut out = img.clone();
        if self.hflip {
            out = out.flip_horizontal();
        }
        if self.vflip {
            out = out.flip_vertical();
        }
        if self.transpose {
            out = out.transpose();
        }
        out
    }

    pub fn apply(&self, pair: &PatchPair) -> PatchPair {
        PatchPair {
            lr: self.apply_image(&pair.lr),
            hr: self.apply_image(&pair.hr),
            ..pair.clone()
        }
    }
}

pub fn augment_geometric<R: Rng + ?Sized>(pair: &PatchPair, rng: &mut R) -> PatchPair {
    GeoTransform::sample(rng).apply(pair)
}

/// Colour inversion and channel permutation applied identically to LR and HR.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ColorTransform {
    pub invert: bool,
    /// Output channel `c` takes input channel `perm[c]`.
    pub perm: [usize; 3],
}

impl Default for ColorTransform {
    fn default() -> Self {
        ColorTransform {
            invert: false,
            perm: [0, 1, 2],
        }
    }
}

const PERMUTATIONS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

impl ColorTransform {
    /// Invert with probability 0.5; with probability 0.5 shuffle channels by
    /// one of the six permutations drawn uniformly.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let invert = rng.random_bool(0.5);
        let perm = if rng.random_bool(0.5) {
            PERMUTATIONS[rng.random_range(0..PERMUTATIONS.len())]
        } else {
            [0, 1, 2]
        };
        ColorTransform { invert, perm }
    }

    pub fn apply_image(&self, img: &ImageTensor) -> Result<ImageTensor> {
        if img.colorspace() != ColorSpace::Rgb {
            return Err(Error::Shape("colour augmentation needs RGB patches".into()));
        }
        let mut out = img.clone();
        for (dst, src) in out.data_mut().chunks_exact_mut(3).zip(img.data().chunks_exact(3)) {
            for c in 0..3 {
                let v = src[self.perm[c]];
                dst[c] = if self.invert { 1.0 - v } else { v };
            }
        }
        Ok(out)
    }

    pub fn apply(&self, pair: &PatchPair) -> Result<PatchPair> {
        Ok(PatchPair {
            lr: self.apply_image(&pair.lr)?,
            hr: self.apply_image(&pair.hr)?,
            ..pair.clone()
        })
    }
}

pub fn augment_color<R: Rng + ?Sized>(pair: &PatchPair, rng: &mut R) -> Result<PatchPair> {
    ColorTransform::sample(rng).apply(pair)
}

/// Mixes every sample `i` with `partner[i]` as `lambda * a + (1 - lambda) * b`
/// on both LR and HR.
pub fn mix_pairs(batch: &[PatchPair], lambda: f64, partner: &[usize]) -> Result<Vec<PatchPair>> {
    if partner.len() != batch.len() {
        return Err(Error::Shape("mixup partner list must match the batch".into()));
    }
    let mix = |a: &ImageTensor, b: &ImageTensor| -> Result<ImageTensor> {
        if a.dims() != b.dims() {
            return Err(Error::Shape("mixup needs equally sized patches".into()));
        }
        let mut out = a.clone();
        for (o, (&x, &y)) in out.data_mut().iter_mut().zip(a.data().iter().zip(b.data())) {
            // f64 keeps `mix(a, a) == a` exact after rounding back
            *o = ((lambda * x as f64 + (1.0 - lambda) * y as f64) as f32).clamp(0.0, 1.0);
        }
        Ok(out)
    };
    batch
        .iter()
        .zip(partner)
        .map(|(a, &j)| {
            let b = &batch[j];
            Ok(PatchPair {
                lr: mix(&a.lr, &b.lr)?,
                hr: mix(&a.hr, &b.hr)?,
                ..a.clone()
            })
        })
        .collect()
}

/// One `lambda ~ Beta(alpha, alpha)` per batch and a random partner
/// permutation. Returns the mixed batch and the drawn `lambda`.
pub fn mixup_batch<R: Rng + ?Sized>(batch: &[PatchPair], alpha: f64, rng: &mut R) -> Result<(Vec<PatchPair>, f64)> {
    if batch.len() < 2 {
        return Err(Error::Sampling("mixup needs at least two samples".into()));
    }
    let beta = Beta::new(alpha, alpha).map_err(|e| Error::config("mixup_alpha", e.to_string()))?;
    let lambda = beta.sample(rng);
    let mut partner: Vec<usize> = (0..batch.len()).collect();
    partner.shuffle(rng);
    Ok((mix_pairs(batch, lambda, &partner)?, lambda))
}

/// Returns `true` to accept, given the patch PSNR and a uniform draw `u` in
/// [0, 1). Patches at or above the threshold are rejected when `u < reject_prob`.
pub fn rejection_decision(psnr_db: f64, threshold_db: f64, reject_prob: f64, u: f64) -> bool {
    psnr_db < threshold_db || u >= reject_prob
}

/// Whether to keep a sampled pair. The LR patch is bicubic-upscaled to HR
/// size and compared against HR in RGB without border crop.
pub fn rejection_filter<R: Rng + ?Sized>(
    pair: &PatchPair,
    threshold_db: f64,
    reject_prob: f64,
    rng: &mut R,
) -> Result<bool> {
    let up = bicubic_resize(&pair.lr, pair.hr.height(), pair.hr.width())?;
    let db = psnr(&up, &pair.hr, 0)?;
    Ok(rejection_decision(db, threshold_db, reject_prob, rng.random::<f64>()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn gradient(h: usize, w: usize) -> ImageTensor {
        ImageTensor::from_fn(h, w, ColorSpace::Rgb, |y, x, c| ((y * 3 + x * 5 + c * 7) % 64) as f32 / 63.0)
    }

    fn pair() -> PatchPair {
        let hr = gradient(16, 16);
        let lr = super::super::resize::downscale(&hr, 2).unwrap().clamped();
        PatchPair {
            lr,
            hr,
            source_id: "p".into(),
            offset: (0, 0),
        }
    }

    #[test]
    fn exact_size_forces_origin() {
        let hr = gradient(96, 96);
        let lr = gradient(48, 48);
        let p = sample_patch_pair("x", &hr, &lr, 2, 48, &mut seeded(1)).unwrap();
        assert_eq!(p.offset, (0, 0));
        assert_eq!(p.hr.dims(), (96, 96));
    }

    #[test]
    fn hr_crop_is_aligned() {
        let hr = gradient(80, 60);
        let lr = gradient(40, 30);
        let mut rng = seeded(3);
        for _ in 0..20 {
            let p = sample_patch_pair("x", &hr, &lr, 2, 8, &mut rng).unwrap();
            let (t, l) = p.offset;
            assert_eq!(p.hr, hr.crop(2 * t, 2 * l, 16, 16).unwrap());
            assert_eq!(p.lr, lr.crop(t, l, 8, 8).unwrap());
        }
    }

    #[test]
    fn too_small_is_a_sampling_error() {
        let hr = gradient(20, 20);
        let lr = gradient(10, 10);
        assert!(matches!(
            sample_patch_pair("x", &hr, &lr, 2, 12, &mut seeded(0)),
            Err(Error::Sampling(_))
        ));
    }

    #[test]
    fn identity_geo_transform_is_noop_and_others_are_involutions() {
        let p = pair();
        assert_eq!(GeoTransform::default().apply(&p), p);
        for t in [
            GeoTransform { hflip: true, ..Default::default() },
            GeoTransform { vflip: true, ..Default::default() },
            GeoTransform { transpose: true, ..Default::default() },
        ] {
            assert_eq!(t.apply(&t.apply(&p)), p);
        }
    }

    #[test]
    fn hflip_keeps_lr_hr_alignment() {
        let p = pair();
        let t = GeoTransform { hflip: true, ..Default::default() }.apply(&p);
        let (lh, lw) = p.lr.dims();
        for i in 0..lh {
            for j in 0..lw {
                // LR pixel (i, j) moved to (i, lw-1-j); its HR block moved to the mirrored block
                assert_eq!(t.lr.get(i, lw - 1 - j, 0), p.lr.get(i, j, 0));
                assert_eq!(t.hr.get(2 * i, 2 * (lw - 1 - j) + 1, 0), p.hr.get(2 * i, 2 * j, 0));
            }
        }
    }

    #[test]
    fn invert_definition_and_involution() {
        let p = pair();
        let inv = ColorTransform { invert: true, perm: [0, 1, 2] };
        let once = inv.apply(&p).unwrap();
        assert!((once.lr.get(0, 0, 0) - (1.0 - p.lr.get(0, 0, 0))).abs() < 1e-7);
        let img = ImageTensor::filled(2, 2, ColorSpace::Rgb, 0.2);
        assert!((inv.apply_image(&img).unwrap().get(0, 0, 0) - 0.8).abs() < 1e-7);
        let twice = inv.apply(&once).unwrap();
        for (a, b) in twice.hr.data().iter().zip(p.hr.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn channel_permutation_moves_lr_and_hr_together() {
        let p = pair();
        let t = ColorTransform { invert: false, perm: [2, 0, 1] }.apply(&p).unwrap();
        let (ml, mh) = (p.lr.mean_per_channel(), p.hr.mean_per_channel());
        let (tl, th) = (t.lr.mean_per_channel(), t.hr.mean_per_channel());
        for c in 0..3 {
            let src = [2, 0, 1][c];
            assert!((tl[c] - ml[src]).abs() < 1e-9);
            assert!((th[c] - mh[src]).abs() < 1e-9);
        }
    }

    #[test]
    fn mixup_special_cases() {
        let a = pair();
        let mut b = pair();
        b.hr = b.hr.flip_horizontal();
        b.lr = b.lr.flip_horizontal();
        let batch = vec![a.clone(), b.clone()];
        assert_eq!(mix_pairs(&batch, 1.0, &[1, 0]).unwrap(), batch);
        for lambda in [0.0, 0.3, 0.9] {
            assert_eq!(mix_pairs(&batch, lambda, &[0, 1]).unwrap(), batch);
        }
        let mixed = mix_pairs(&batch, 0.25, &[1, 0]).unwrap();
        let want = 0.25 * a.hr.get(0, 0, 0) + 0.75 * b.hr.get(0, 0, 0);
        assert!((mixed[0].hr.get(0, 0, 0) - want).abs() < 1e-6);
    }

    #[test]
    fn mixup_lambda_mean_is_one_half() {
        let beta = Beta::new(0.15, 0.15).unwrap();
        let mut rng = seeded(11);
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| beta.sample(&mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.01, "{mean}");
        let batch = vec![pair(), pair()];
        let (_, lambda) = mixup_batch(&batch, 0.15, &mut rng).unwrap();
        assert!((0.0..=1.0).contains(&lambda));
        assert!(mixup_batch(&batch[..1], 0.15, &mut rng).is_err());
    }

    #[test]
    fn rejection_rule() {
        assert!(rejection_decision(20.0, 24.0, 0.8, 0.0));
        assert!(!rejection_decision(30.0, 24.0, 0.8, 0.5));
        assert!(rejection_decision(30.0, 24.0, 0.8, 0.85));
        assert!(rejection_decision(30.0, 24.0, 0.0, 0.0));
    }
}
