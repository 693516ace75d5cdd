//! Benchmark evaluation, report formatting and file-to-file inference.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ensemble::{run_upscaler, Upscaler};
use super::quality::{psnr, rgb_to_y_with, ssim, YConversion};
use crate::data::{scan_dataset, LoadedPair};
use crate::error::{Error, Result};
use crate::image::{ColorSpace, ImageTensor};

/// How images are compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalProtocol {
    /// `y` compares luma, `rgb` compares all channels (PSNR only on RGB).
    pub colorspace: ColorSpace,
    pub y_conversion: YConversion,
    pub crop_border: usize,
    pub ensemble: bool,
    pub scale: usize,
    pub quantize: bool,
}

impl EvalProtocol {
    /// Y channel, `scale` border pixels cropped, 8-bit quantisation.
    pub fn standard(scale: usize, ensemble: bool) -> Self {
        EvalProtocol {
            colorspace: ColorSpace::Y,
            y_conversion: YConversion::Studio,
            crop_border: scale,
            ensemble,
            scale,
            quantize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMetric {
    pub name: String,
    pub psnr_db: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub psnr_db: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_image: Vec<ImageMetric>,
    pub aggregate: Aggregate,
    pub protocol: EvalProtocol,
}

impl MetricReport {
    pub fn from_images(per_image: Vec<ImageMetric>, protocol: EvalProtocol) -> Result<Self> {
        if per_image.is_empty() {
            return Err(Error::Metric("no images to report".into()));
        }
        let n = per_image.len() as f64;
        let aggregate = Aggregate {
            psnr_db: per_image.iter().map(|m| m.psnr_db).sum::<f64>() / n,
            ssim: per_image.iter().map(|m| m.ssim).sum::<f64>() / n,
        };
        Ok(MetricReport {
            per_image,
            aggregate,
            protocol,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Metric(format!("bad report JSON: {e}")))
    }

    pub fn to_table(&self) -> String {
        let width = self.per_image.iter().map(|m| m.name.len()).max().unwrap_or(0).max(5);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:>9}  {:>7}", "image", "PSNR(dB)", "SSIM");
        for m in &self.per_image {
            let _ = writeln!(out, "{:<width$}  {:>9.4}  {:>7.4}", m.name, m.psnr_db, m.ssim);
        }
        let _ = writeln!(
            out,
            "{:<width$}  {:>9.4}  {:>7.4}",
            "mean", self.aggregate.psnr_db, self.aggregate.ssim
        );
        let p = &self.protocol;
        let _ = writeln!(
            out,
            "x{} {:?}/{} crop={} ensemble={} quantize={}",
            p.scale,
            p.colorspace,
            p.y_conversion.name(),
            p.crop_border,
            p.ensemble,
            p.quantize
        );
        out
    }
}

/// Scores one SR output against its HR reference under `protocol`.
pub fn score_image(name: &str, sr: &ImageTensor, hr: &ImageTensor, protocol: &EvalProtocol) -> Result<ImageMetric> {
    let mut sr = sr.clamped();
    let mut hr = hr.clone();
    if protocol.quantize {
        sr = sr.quantized();
        hr = hr.quantized();
    }
    let (psnr_db, ssim_v) = match protocol.colorspace {
        ColorSpace::Y => {
            let (sy, hy) = (rgb_to_y_with(&sr, protocol.y_conversion)?, rgb_to_y_with(&hr, protocol.y_conversion)?);
            let c = protocol.crop_border;
            let (h, w) = sy.dims();
            if 2 * c >= h || 2 * c >= w {
                return Err(Error::Metric(format!("`{name}`: crop border {c} leaves nothing of {h}x{w}")));
            }
            let sc = sy.crop(c, c, h - 2 * c, w - 2 * c)?;
            let hc = hy.crop(c, c, h - 2 * c, w - 2 * c)?;
            (psnr(&sc, &hc, 0)?, ssim(&sc, &hc)?)
        }
        ColorSpace::Rgb => {
            let p = psnr(&sr, &hr, protocol.crop_border)?;
            // SSIM on the luma of the cropped region keeps the column meaningful.
            let c = protocol.crop_border;
            let (h, w) = sr.dims();
            let sy = rgb_to_y_with(&sr.crop(c, c, h - 2 * c, w - 2 * c)?, protocol.y_conversion)?;
            let hy = rgb_to_y_with(&hr.crop(c, c, h - 2 * c, w - 2 * c)?, protocol.y_conversion)?;
            (p, ssim(&sy, &hy)?)
        }
    };
    Ok(ImageMetric {
        name: name.to_string(),
        psnr_db,
        ssim: ssim_v,
    })
}

/// Runs `model` over in-memory pairs and scores each output.
pub fn evaluate_pairs<U: Upscaler + ?Sized>(model: &U, pairs: &[LoadedPair], protocol: EvalProtocol) -> Result<MetricReport> {
    if model.scale() != protocol.scale {
        return Err(Error::config(
            "scale",
            format!("model scale {} differs from protocol scale {}", model.scale(), protocol.scale),
        ));
    }
    let per_image = pairs
        .par_iter()
        .map(|p| {
            let sr = run_upscaler(model, &p.lr, protocol.ensemble)?;
            score_image(&p.name, &sr, &p.hr, &protocol)
        })
        .collect::<Result<Vec<_>>>()?;
    MetricReport::from_images(per_image, protocol)
}

/// Evaluates a benchmark directory laid out as `HR/` plus optional
/// `LR_bicubic/X{scale}/`.
pub fn evaluate_benchmark<U: Upscaler + ?Sized>(model: &U, root: &Path, protocol: EvalProtocol) -> Result<MetricReport> {
    let index = scan_dataset(root, protocol.scale)?;
    if index.is_empty() {
        return Err(Error::Metric(format!("benchmark {} has no images", root.display())));
    }
    let pairs = index
        .entries
        .iter()
        .map(|e| {
            let hr = ImageTensor::load_png(&e.hr)?;
            let lr = e.lr.as_deref().map(ImageTensor::load_png).transpose()?;
            LoadedPair::new(e.stem.clone(), hr, lr, protocol.scale)
        })
        .collect::<Result<Vec<_>>>()?;
    evaluate_pairs(model, &pairs, protocol)
}

/// LR pixels of context added on each side of a tile.
pub fn tile_margin(scale: usize) -> usize {
    8 * scale
}

/// Upscales `lr` in `tile`-sized pieces, each run with [`tile_margin`] extra
/// context and centre-cropped back into place.
pub fn upscale_tiled<U: Upscaler + ?Sized>(model: &U, lr: &ImageTensor, tile: usize, ensemble: bool) -> Result<ImageTensor> {
    if tile == 0 {
        return Err(Error::config("tile", "must be positive"));
    }
    let s = model.scale();
    let (h, w) = lr.dims();
    if tile >= h && tile >= w {
        return run_upscaler(model, lr, ensemble);
    }
    let m = tile_margin(s);
    let mut out = ImageTensor::filled(h * s, w * s, lr.colorspace(), 0.0);
    let c = lr.channels();
    for ty in (0..h).step_by(tile) {
        for tx in (0..w).step_by(tile) {
            let (th, tw) = (tile.min(h - ty), tile.min(w - tx));
            let (y0, x0) = (ty.saturating_sub(m), tx.saturating_sub(m));
            let (y1, x1) = ((ty + th + m).min(h), (tx + tw + m).min(w));
            let piece = run_upscaler(model, &lr.crop(y0, x0, y1 - y0, x1 - x0)?, ensemble)?;
            let (oy, ox) = ((ty - y0) * s, (tx - x0) * s);
            for y in 0..th * s {
                for x in 0..tw * s {
                    for ch in 0..c {
                        out.set(ty * s + y, tx * s + x, ch, piece.get(oy + y, ox + x, ch));
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Reads an LR PNG, super-resolves it and writes an 8-bit PNG.
pub fn infer_image<U: Upscaler + ?Sized>(
    model: &U,
    lr_path: &Path,
    out_path: &Path,
    ensemble: bool,
    tile: Option<usize>,
) -> Result<ImageTensor> {
    let lr = ImageTensor::load_png(lr_path)?;
    let sr = match tile {
        Some(t) => upscale_tiled(model, &lr, t, ensemble)?,
        None => run_upscaler(model, &lr, ensemble)?,
    }
    .clamped()
    .quantized();
    sr.save_png(out_path)?;
    Ok(sr)
}
