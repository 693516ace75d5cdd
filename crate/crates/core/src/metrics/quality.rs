//! Luma conversion and full-reference quality measures.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ColorSpace, ImageTensor};

/// Value reported for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// BT.601 luma variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum YConversion {
    /// Y in [16/255, 235/255], as used by published SR benchmark numbers.
    #[default]
    Studio,
    /// Y in [0, 1].
    Full,
}

impl YConversion {
    pub fn name(self) -> &'static str {
        match self {
            YConversion::Studio => "studio",
            YConversion::Full => "full",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "studio" => Some(YConversion::Studio),
            "full" => Some(YConversion::Full),
            _ => None,
        }
    }

    /// Luma of one pixel with channels in [0, 1].
    pub fn luma(self, r: f64, g: f64, b: f64) -> f64 {
        match self {
            YConversion::Studio => (16.0 + 65.481 * r + 128.553 * g + 24.966 * b) / 255.0,
            YConversion::Full => 0.299 * r + 0.587 * g + 0.114 * b,
        }
    }
}

pub fn rgb_to_y(img: &ImageTensor) -> Result<ImageTensor> {
    rgb_to_y_with(img, YConversion::Studio)
}

pub fn rgb_to_y_with(img: &ImageTensor, conv: YConversion) -> Result<ImageTensor> {
    if img.colorspace() != ColorSpace::Rgb {
        return Err(Error::Metric("luma conversion needs an RGB image".into()));
    }
    let data = img
        .data()
        .chunks_exact(3)
        .map(|p| conv.luma(p[0] as f64, p[1] as f64, p[2] as f64) as f32)
        .collect();
    ImageTensor::new(img.height(), img.width(), 1, data, ColorSpace::Y)
}

fn check_same(a: &ImageTensor, b: &ImageTensor) -> Result<()> {
    if a.dims() != b.dims() || a.channels() != b.channels() {
        return Err(Error::Shape(format!(
            "metric inputs differ: {}x{}x{} vs {}x{}x{}",
            a.height(),
            a.width(),
            a.channels(),
            b.height(),
            b.width(),
            b.channels()
        )));
    }
    Ok(())
}

/// Mean squared error over all channels after removing `crop` pixels per side.
pub fn mse(a: &ImageTensor, b: &ImageTensor, crop: usize) -> Result<f64> {
    check_same(a, b)?;
    let (h, w) = a.dims();
    if 2 * crop >= h || 2 * crop >= w {
        return Err(Error::Metric(format!("crop border {crop} leaves nothing of a {h}x{w} image")));
    }
    let c = a.channels();
    let mut sum = 0.0f64;
    for y in crop..h - crop {
        let row = (y * w + crop) * c..(y * w + w - crop) * c;
        for (&x, &z) in a.data()[row.clone()].iter().zip(&b.data()[row]) {
            let d = x as f64 - z as f64;
            sum += d * d;
        }
    }
    Ok(sum / ((h - 2 * crop) * (w - 2 * crop) * c) as f64)
}

/// PSNR in dB on the [0, 1] domain, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &ImageTensor, b: &ImageTensor, crop: usize) -> Result<f64> {
    let m = mse(a, b, crop)?;
    if m == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / m).log10()).min(PSNR_CAP_DB))
}

/// Normalised 1-D Gaussian; the 2-D window is its outer product.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let k: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// "Valid" separable filtering of an `h x w` plane.
fn filter_valid(src: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = k.iter().enumerate().map(|(i, &kv)| kv * src[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = k.iter().enumerate().map(|(i, &kv)| kv * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over every valid 11x11 window position of two single-channel
/// images, dynamic range 1.
pub fn ssim(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    check_same(a, b)?;
    if a.channels() != 1 {
        return Err(Error::Metric("SSIM takes single-channel images".into()));
    }
    let (h, w) = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Metric(format!("image {h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")));
    }
    let k = gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA);
    let x: Vec<f64> = a.data().iter().map(|&v| v as f64).collect();
    let y: Vec<f64> = b.data().iter().map(|&v| v as f64).collect();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
    let mx = filter_valid(&x, h, w, &k);
    let my = filter_valid(&y, h, w, &k);
    let sxx = filter_valid(&xx, h, w, &k);
    let syy = filter_valid(&yy, h, w, &k);
    let sxy = filter_valid(&xy, h, w, &k);
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let total: f64 = (0..mx.len())
        .map(|i| {
            let (ma, mb) = (mx[i], my[i]);
            let va = sxx[i] - ma * ma;
            let vb = syy[i] - mb * mb;
            let cov = sxy[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / mx.len() as f64)
}
