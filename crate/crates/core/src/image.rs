//! `H x W x C` images with values in `[0, 1]`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorSpace {
    Rgb,
    Y,
}

/// Interleaved (`HWC`) image. Values are kept as `f32` and clamped to
/// `[0, 1]` whenever they cross an I/O boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
    colorspace: ColorSpace,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>, colorspace: ColorSpace) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::Shape(format!("image dims must be positive, got {height}x{width}x{channels}")));
        }
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "{height}x{width}x{channels} image needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        let expected = match colorspace {
            ColorSpace::Rgb => 3,
            ColorSpace::Y => 1,
        };
        if channels != expected {
            return Err(Error::Shape(format!("{colorspace:?} image must have {expected} channels, got {channels}")));
        }
        Ok(ImageTensor {
            height,
            width,
            channels,
            data,
            colorspace,
        })
    }

    pub fn rgb(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        Self::new(height, width, 3, data, ColorSpace::Rgb)
    }

    pub fn filled(height: usize, width: usize, colorspace: ColorSpace, value: f32) -> Self {
        let channels = if colorspace == ColorSpace::Rgb { 3 } else { 1 };
        Self::new(height, width, channels, vec![value; height * width * channels], colorspace)
            .expect("positive dims")
    }

    /// Builds an image from a per-pixel function `f(y, x, c)`.
    pub fn from_fn(height: usize, width: usize, colorspace: ColorSpace, f: impl Fn(usize, usize, usize) -> f32) -> Self {
        let channels = if colorspace == ColorSpace::Rgb { 3 } else { 1 };
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, channels, data, colorspace).expect("positive dims")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn colorspace(&self) -> ColorSpace {
        self.colorspace
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 || top + height > self.height || left + width > self.width {
            return Err(Error::Shape(format!(
                "crop {height}x{width} at ({top}, {left}) exceeds {}x{} image",
                self.height, self.width
            )));
        }
        let c = self.channels;
        let mut data = Vec::with_capacity(height * width * c);
        for y in top..top + height {
            let start = (y * self.width + left) * c;
            data.extend_from_slice(&self.data[start..start + width * c]);
        }
        Self::new(height, width, c, data, self.colorspace)
    }

    /// Largest top-left crop whose dims are multiples of `scale`.
    pub fn mod_crop(&self, scale: usize) -> Result<Self> {
        let h = self.height - self.height % scale;
        let w = self.width - self.width % scale;
        self.crop(0, 0, h, w)
    }

    pub fn clamped(&self) -> Self {
        let mut out = self.clone();
        for v in &mut out.data {
            *v = v.clamp(0.0, 1.0);
        }
        out
    }

    /// Rounds to the nearest 8-bit level and back.
    pub fn quantized(&self) -> Self {
        let mut out = self.clone();
        for v in &mut out.data {
            *v = to_u8(*v) as f32 / 255.0;
        }
        out
    }

    /// Rebuilds the image through an index map `(y, x) -> (sy, sx)` with
    /// output dims `(h, w)`.
    pub fn remap(&self, h: usize, w: usize, map: impl Fn(usize, usize) -> (usize, usize)) -> Self {
        let c = self.channels;
        let mut data = Vec::with_capacity(h * w * c);
        for y in 0..h {
            for x in 0..w {
                let (sy, sx) = map(y, x);
                let s = (sy * self.width + sx) * c;
                data.extend_from_slice(&self.data[s..s + c]);
            }
        }
        Self::new(h, w, c, data, self.colorspace).expect("remap keeps channels")
    }

    pub fn flip_horizontal(&self) -> Self {
        let w = self.width;
        self.remap(self.height, w, |y, x| (y, w - 1 - x))
    }

    pub fn flip_vertical(&self) -> Self {
        let h = self.height;
        self.remap(h, self.width, |y, x| (h - 1 - y, x))
    }

    pub fn transpose(&self) -> Self {
        self.remap(self.width, self.height, |y, x| (x, y))
    }

    /// Counter-clockwise rotation by 90 degrees.
    pub fn rot90(&self) -> Self {
        let w = self.width;
        self.remap(self.width, self.height, |y, x| (x, w - 1 - y))
    }

    pub fn mean_per_channel(&self) -> Vec<f64> {
        let mut sums = vec![0.0f64; self.channels];
        for px in self.data.chunks_exact(self.channels) {
            for (s, &v) in sums.iter_mut().zip(px) {
                *s += v as f64;
            }
        }
        let n = (self.height * self.width) as f64;
        sums.iter().map(|s| s / n).collect()
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        let data = rgb.as_raw().iter().map(|&b| b as f32 / 255.0).collect();
        Self::rgb(h as usize, w as usize, data)
    }

    /// 8-bit PNG bytes (RGB or grayscale), clamped and rounded.
    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let bytes: Vec<u8> = self.data.iter().map(|&v| to_u8(v)).collect();
        let color = match self.colorspace {
            ColorSpace::Rgb => image::ExtendedColorType::Rgb8,
            ColorSpace::Y => image::ExtendedColorType::L8,
        };
        let mut out = Vec::new();
        image::ImageEncoder::write_image(
            image::codecs::png::PngEncoder::new(&mut out),
            &bytes,
            self.width as u32,
            self.height as u32,
            color,
        )
        .map_err(|e| Error::Image {
            path: "<memory>".into(),
            reason: e.to_string(),
        })?;
        Ok(out)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes = self.encode_png()?;
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
        }
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    /// Packs images of equal size into an `N x C x H x W` tensor.
    pub fn to_batch(images: &[&ImageTensor]) -> Result<Tensor<f32>> {
        let first = images.first().ok_or_else(|| Error::Shape("empty image batch".into()))?;
        let (h, w, c) = (first.height, first.width, first.channels);
        let mut data = vec![0.0f32; images.len() * c * h * w];
        for (n, img) in images.iter().enumerate() {
            if (img.height, img.width, img.channels) != (h, w, c) {
                return Err(Error::Shape("images in a batch must share dims".into()));
            }
            let base = n * c * h * w;
            for (p, px) in img.data.chunks_exact(c).enumerate() {
                for (ch, &v) in px.iter().enumerate() {
                    data[base + ch * h * w + p] = v;
                }
            }
        }
        Tensor::from_vec(&[images.len(), c, h, w], data)
    }

    /// Unpacks sample `i` of an `N x C x H x W` tensor.
    pub fn from_batch(t: &Tensor<f32>, i: usize, colorspace: ColorSpace) -> Result<Self> {
        let (n, c, h, w) = t.dims4();
        if i >= n {
            return Err(Error::Shape(format!("batch index {i} out of range for {n}")));
        }
        let src = &t.data()[i * c * h * w..(i + 1) * c * h * w];
        let mut data = vec![0.0f32; c * h * w];
        for ch in 0..c {
            for p in 0..h * w {
                data[p * c + ch] = src[ch * h * w + p];
            }
        }
        Self::new(h, w, c, data, colorspace)
    }
}

#[inline]
pub fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ImageTensor {
        ImageTensor::from_fn(3, 5, ColorSpace::Rgb, |y, x, c| (y * 15 + x * 3 + c) as f32 / 45.0)
    }

    #[test]
    fn batch_round_trip() {
        let a = sample();
        let b = a.flip_horizontal();
        let t = ImageTensor::to_batch(&[&a, &b]).unwrap();
        assert_eq!(t.shape(), &[2, 3, 3, 5]);
        assert_eq!(ImageTensor::from_batch(&t, 1, ColorSpace::Rgb).unwrap(), b);
    }

    #[test]
    fn flips_and_transpose_are_involutions() {
        let a = sample();
        assert_eq!(a.flip_horizontal().flip_horizontal(), a);
        assert_eq!(a.flip_vertical().flip_vertical(), a);
        assert_eq!(a.transpose().transpose(), a);
        assert_eq!(a.rot90().rot90().rot90().rot90(), a);
    }

    #[test]
    fn png_round_trip_is_exact_for_8bit_values() {
        let a = sample().quantized();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        a.save_png(&p).unwrap();
        assert_eq!(ImageTensor::load_png(&p).unwrap(), a);
    }

    #[test]
    fn crop_bounds_are_checked() {
        let a = sample();
        assert!(a.crop(1, 1, 2, 4).is_ok());
        assert!(a.crop(2, 0, 2, 1).is_err());
    }
}
