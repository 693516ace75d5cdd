//! Procedural test images: smooth shading, hard-edged shapes, stripes and
//! fine texture, so that super-resolution has edges to recover.

use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::image::{ColorSpace, ImageTensor};
use crate::rng::seeded;

enum Shape {
    Disc { cy: f64, cx: f64, r: f64 },
    Rect { y0: f64, x0: f64, y1: f64, x1: f64 },
    Stripes { fy: f64, fx: f64, phase: f64 },
    Line { y: f64, x: f64, dy: f64, dx: f64, half_width: f64 },
}

impl Shape {
    /// Coverage in [0, 1] at the centre of pixel `(y, x)`, with a one-pixel
    /// soft edge.
    fn coverage(&self, y: f64, x: f64) -> f64 {
        let soft = |d: f64| (0.5 - d).clamp(0.0, 1.0);
        match *self {
            Shape::Disc { cy, cx, r } => soft(((y - cy).powi(2) + (x - cx).powi(2)).sqrt() - r),
            Shape::Rect { y0, x0, y1, x1 } => {
                let d = (y0 - y).max(y - y1).max(x0 - x).max(x - x1);
                soft(d)
            }
            Shape::Stripes { fy, fx, phase } => {
                let s = (fy * y + fx * x + phase).sin();
                if s > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Shape::Line { y: ly, x: lx, dy, dx, half_width } => {
                let d = ((y - ly) * dx - (x - lx) * dy).abs();
                soft(d - half_width)
            }
        }
    }
}

/// Deterministic RGB image in [0, 1] for `seed`.
pub fn synthetic_image(seed: u64, height: usize, width: usize) -> ImageTensor {
    let mut rng = seeded(seed);
    let (h, w) = (height as f64, width as f64);
    let mut color = || [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
    let base = [color(), color()];
    let mut shapes = Vec::new();
    let n = 6 + (seed % 5) as usize;
    for i in 0..n {
        let col = [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
        let shape = match i % 4 {
            0 => Shape::Disc {
                cy: rng.random::<f64>() * h,
                cx: rng.random::<f64>() * w,
                r: 3.0 + rng.random::<f64>() * h / 4.0,
            },
            1 => {
                let (y0, x0) = (rng.random::<f64>() * h, rng.random::<f64>() * w);
                Shape::Rect {
                    y0,
                    x0,
                    y1: y0 + 4.0 + rng.random::<f64>() * h / 3.0,
                    x1: x0 + 4.0 + rng.random::<f64>() * w / 3.0,
                }
            }
            2 => {
                let angle = rng.random::<f64>() * std::f64::consts::PI;
                let freq = 0.3 + rng.random::<f64>() * 0.9;
                Shape::Stripes {
                    fy: freq * angle.sin(),
                    fx: freq * angle.cos(),
                    phase: rng.random::<f64>() * 6.3,
                }
            }
            _ => {
                let angle = rng.random::<f64>() * std::f64::consts::PI;
                Shape::Line {
                    y: rng.random::<f64>() * h,
                    x: rng.random::<f64>() * w,
                    dy: angle.sin(),
                    dx: angle.cos(),
                    half_width: 0.5 + rng.random::<f64>() * 1.5,
                }
            }
        };
        // stripes fill the whole frame, so keep them inside a disc
        let mask = Shape::Disc {
            cy: rng.random::<f64>() * h,
            cx: rng.random::<f64>() * w,
            r: h / 5.0 + rng.random::<f64>() * h / 4.0,
        };
        let alpha = 0.6 + 0.4 * rng.random::<f64>();
        shapes.push((shape, mask, col, alpha, i % 4 == 2));
    }
    let noise_amp = 0.02;
    let noise: Vec<f64> = (0..height * width * 3).map(|_| (rng.random::<f64>() - 0.5) * noise_amp).collect();
    ImageTensor::from_fn(height, width, ColorSpace::Rgb, |y, x, c| {
        let (fy, fx) = (y as f64 + 0.5, x as f64 + 0.5);
        let t = (fy / h + fx / w) / 2.0;
        let mut v = base[0][c] * (1.0 - t) + base[1][c] * t;
        for (shape, mask, col, alpha, masked) in &shapes {
            let mut a = shape.coverage(fy, fx) * alpha;
            if *masked {
                a *= mask.coverage(fy, fx);
            }
            v = v * (1.0 - a) + col[c] * a;
        }
        (v + noise[(y * width + x) * 3 + c]).clamp(0.0, 1.0) as f32
    })
}

/// Writes `count` images as `<root>/HR/img_XXX.png`, 8-bit RGB.
pub fn write_synthetic_dataset(root: &Path, count: usize, height: usize, width: usize, seed: u64) -> Result<()> {
    if count == 0 {
        return Err(Error::config("count", "must be at least 1"));
    }
    for i in 0..count {
        let img = synthetic_image(seed.wrapping_mul(1000).wrapping_add(i as u64), height, width);
        img.save_png(&root.join("HR").join(format!("img_{i:03}.png")))?;
    }
    Ok(())
}
