//! Separable bicubic resampling compatible with the de-facto SR benchmark
//! resizer: cubic convolution with `a = -0.5`, kernel widened by the scale
//! factor when shrinking, and symmetric (mirror) boundary handling.

use crate::error::{Error, Result};
use crate::image::ImageTensor;

/// Cubic convolution kernel with `a = -0.5`.
pub fn cubic(x: f64) -> f64 {
    let ax = x.abs();
    let ax2 = ax * ax;
    let ax3 = ax2 * ax;
    if ax <= 1.0 {
        1.5 * ax3 - 2.5 * ax2 + 1.0
    } else if ax <= 2.0 {
        -0.5 * ax3 + 2.5 * ax2 - 4.0 * ax + 2.0
    } else {
        0.0
    }
}

/// Sparse weights mapping an input axis onto an output axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Contributions {
    /// `(input index, weight)` per output position; weights sum to 1.
    pub taps: Vec<Vec<(usize, f64)>>,
}

/// Weights for resizing one axis from `in_len` to `out_len` samples.
pub fn contributions(in_len: usize, out_len: usize) -> Contributions {
    let scale = out_len as f64 / in_len as f64;
    let (kernel_width, shrink) = if scale < 1.0 { (4.0 / scale, scale) } else { (4.0, 1.0) };
    let taps_per = kernel_width.ceil() as i64 + 2;
    let n = in_len as i64;
    let taps = (1..=out_len)
        .map(|u| {
            // 1-based continuous input coordinate of output sample u
            let x = u as f64 / scale + 0.5 * (1.0 - 1.0 / scale);
            let left = (x - kernel_width / 2.0).floor() as i64;
            let raw: Vec<(i64, f64)> = (0..taps_per)
                .map(|p| {
                    let idx = left + p;
                    (idx, shrink * cubic(shrink * (x - idx as f64)))
                })
                .collect();
            let total: f64 = raw.iter().map(|&(_, w)| w).sum();
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(raw.len());
            for (idx, w) in raw {
                if w == 0.0 {
                    continue;
                }
                let src = mirror(idx - 1, n) as usize;
                merged.push((src, w / total));
            }
            merged
        })
        .collect();
    Contributions { taps }
}

/// Symmetric padding over `[0, n)`: `.. 1 0 | 0 1 .. n-1 | n-1 n-2 ..`.
fn mirror(i: i64, n: i64) -> i64 {
    let period = 2 * n;
    let m = i.rem_euclid(period);
    if m < n {
        m
    } else {
        period - 1 - m
    }
}

fn resize_rows(src: &[f64], h: usize, w: usize, c: usize, out_h: usize) -> Vec<f64> {
    let contrib = contributions(h, out_h);
    let row = w * c;
    let mut out = vec![0.0; out_h * row];
    for (y, taps) in contrib.taps.iter().enumerate() {
        let dst = &mut out[y * row..(y + 1) * row];
        for &(sy, wt) in taps {
            for (d, &s) in dst.iter_mut().zip(&src[sy * row..(sy + 1) * row]) {
                *d += wt * s;
            }
        }
    }
    out
}

fn resize_cols(src: &[f64], h: usize, w: usize, c: usize, out_w: usize) -> Vec<f64> {
    let contrib = contributions(w, out_w);
    let mut out = vec![0.0; h * out_w * c];
    for y in 0..h {
        for (x, taps) in contrib.taps.iter().enumerate() {
            for ch in 0..c {
                let mut acc = 0.0;
                for &(sx, wt) in taps {
                    acc += wt * src[(y * w + sx) * c + ch];
                }
                out[(y * out_w + x) * c + ch] = acc;
            }
        }
    }
    out
}

/// Resizes `img` to `out_h x out_w`. The axis with the smaller scale factor
/// is processed first (rows first on ties).
pub fn bicubic_resize(img: &ImageTensor, out_h: usize, out_w: usize) -> Result<ImageTensor> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::Shape(format!("resize target {out_h}x{out_w} must be positive")));
    }
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let mut buf: Vec<f64> = img.data().iter().map(|&v| v as f64).collect();
    let sh = out_h as f64 / h as f64;
    let sw = out_w as f64 / w as f64;
    let (mut ch, mut cw) = (h, w);
    let rows_first = sh <= sw;
    for pass in 0..2 {
        let do_rows = (pass == 0) == rows_first;
        if do_rows {
            if out_h != ch {
                buf = resize_rows(&buf, ch, cw, c, out_h);
                ch = out_h;
            }
        } else if out_w != cw {
            buf = resize_cols(&buf, ch, cw, c, out_w);
            cw = out_w;
        }
    }
    ImageTensor::new(out_h, out_w, c, buf.into_iter().map(|v| v as f32).collect(), img.colorspace())
}

/// Downscale by an integer factor (dims are floored).
pub fn downscale(img: &ImageTensor, scale: usize) -> Result<ImageTensor> {
    let (h, w) = img.dims();
    if h < scale || w < scale {
        return Err(Error::Shape(format!("{h}x{w} image is smaller than scale {scale}")));
    }
    bicubic_resize(img, h / scale, w / scale)
}

pub fn upscale(img: &ImageTensor, scale: usize) -> Result<ImageTensor> {
    bicubic_resize(img, img.height() * scale, img.width() * scale)
}
