use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::resize::downscale;
use crate::error::{Error, Result};
use crate::image::ImageTensor;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexEntry {
    pub stem: String,
    pub hr: PathBuf,
    pub lr: Option<PathBuf>,
}

/// Sorted list of HR images with their optional pre-generated LR files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub scale: usize,
    pub entries: Vec<IndexEntry>,
}

impl DatasetIndex {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Splits off the last `count` entries (by sorted name) as a held-out set.
    pub fn split_tail(&self, count: usize) -> (DatasetIndex, DatasetIndex) {
        let cut = self.entries.len().saturating_sub(count);
        let head = DatasetIndex {
            entries: self.entries[..cut].to_vec(),
            ..self.clone()
        };
        let tail = DatasetIndex {
            entries: self.entries[cut..].to_vec(),
            ..self.clone()
        };
        (head, tail)
    }
}

fn png_stems(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let rd = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in rd {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if !is_png || !path.is_file() {
            continue;
        }
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Index {
                file: path.display().to_string(),
                reason: "file name is not valid UTF-8".into(),
            })?
            .to_string();
        out.push((stem, path));
    }
    out.sort();
    Ok(out)
}

pub fn lr_dir(root: &Path, scale: usize) -> PathBuf {
    root.join("LR_bicubic").join(format!("X{scale}"))
}

/// Indexes `<root>/HR/*.png` and, when present, `<root>/LR_bicubic/X{scale}`.
pub fn scan_dataset(root: &Path, scale: usize) -> Result<DatasetIndex> {
    let hr_dir = root.join("HR");
    if !hr_dir.is_dir() {
        return Err(Error::io(
            &hr_dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "HR directory not found"),
        ));
    }
    let hr = png_stems(&hr_dir)?;
    let lr_root = lr_dir(root, scale);
    let lr = if lr_root.is_dir() { Some(png_stems(&lr_root)?) } else { None };

    let mut entries = Vec::with_capacity(hr.len());
    for (stem, path) in &hr {
        let lr_path = match &lr {
            None => None,
            Some(list) => match list.binary_search_by(|(s, _)| s.as_str().cmp(stem)) {
                Ok(i) => Some(list[i].1.clone()),
                Err(_) => {
                    return Err(Error::Index {
                        file: lr_root.join(format!("{stem}.png")).display().to_string(),
                        reason: "LR counterpart of an HR image is missing".into(),
                    })
                }
            },
        };
        entries.push(IndexEntry {
            stem: stem.clone(),
            hr: path.clone(),
            lr: lr_path,
        });
    }
    if let Some(list) = &lr {
        for (stem, path) in list {
            if hr.binary_search_by(|(s, _)| s.as_str().cmp(stem)).is_err() {
                return Err(Error::Index {
                    file: path.display().to_string(),
                    reason: "LR image has no HR counterpart".into(),
                });
            }
        }
    }
    Ok(DatasetIndex {
        root: root.to_path_buf(),
        scale,
        entries,
    })
}

/// One decoded training image pair. `hr` dims are exactly `scale * lr` dims.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedPair {
    pub name: String,
    pub hr: ImageTensor,
    pub lr: ImageTensor,
}

impl LoadedPair {
    /// Crops `hr` to a multiple of `scale` and synthesises `lr` when absent.
    pub fn new(name: String, hr: ImageTensor, lr: Option<ImageTensor>, scale: usize) -> Result<Self> {
        let hr = hr.mod_crop(scale).map_err(|_| Error::Index {
            file: name.clone(),
            reason: format!("image is smaller than scale {scale}"),
        })?;
        let lr = match lr {
            Some(lr) => lr,
            // quantised like an LR file written by `prepare_data`
            None => downscale(&hr, scale)?.clamped().quantized(),
        };
        if lr.height() * scale != hr.height() || lr.width() * scale != hr.width() {
            return Err(Error::Index {
                file: name,
                reason: format!(
                    "LR {}x{} does not match HR {}x{} at scale {scale}",
                    lr.height(),
                    lr.width(),
                    hr.height(),
                    hr.width()
                ),
            });
        }
        Ok(LoadedPair { name, hr, lr })
    }
}

/// Decoded image pairs held in memory.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub scale: usize,
    pub pairs: Vec<LoadedPair>,
}

impl TrainingSet {
    pub fn load(index: &DatasetIndex) -> Result<Self> {
        let pairs = index
            .entries
            .iter()
            .map(|e| {
                let hr = ImageTensor::load_png(&e.hr)?;
                let lr = e.lr.as_deref().map(ImageTensor::load_png).transpose()?;
                LoadedPair::new(e.stem.clone(), hr, lr, index.scale)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TrainingSet {
            scale: index.scale,
            pairs,
        })
    }

    pub fn from_pairs(scale: usize, pairs: Vec<LoadedPair>) -> Self {
        TrainingSet { scale, pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Mean RGB of all HR pixels.
    pub fn mean_rgb(&self) -> [f64; 3] {
        mean_rgb(self.pairs.iter().map(|p| &p.hr))
    }
}

fn mean_rgb<'a>(images: impl Iterator<Item = &'a ImageTensor>) -> [f64; 3] {
    let mut sum = [0.0f64; 3];
    let mut n = 0.0;
    for img in images {
        let px = (img.height() * img.width()) as f64;
        for (s, m) in sum.iter_mut().zip(img.mean_per_channel()) {
            *s += m * px;
        }
        n += px;
    }
    sum.map(|s| if n > 0.0 { s / n } else { 0.0 })
}

/// Contents of `<root>/meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub mean_rgb: [f64; 3],
    pub scale_list: Vec<usize>,
    pub count: usize,
}

impl DatasetMeta {
    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join("meta.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Index {
            file: path.display().to_string(),
            reason: e.to_string(),
        })
    }
}

fn write_if_changed(path: &Path, bytes: &[u8]) -> Result<bool> {
    if fs::read(path).ok().as_deref() == Some(bytes) {
        return Ok(false);
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    Ok(true)
}

/// Generates `LR_bicubic/X{s}` for every scale and `meta.json`. Files whose
/// content would not change are left untouched. Returns the number of files
/// written.
pub fn prepare_data(root: &Path, scales: &[usize]) -> Result<usize> {
    for &s in scales {
        crate::model::validate_scale(s)?;
    }
    let hr_dir = root.join("HR");
    if !hr_dir.is_dir() {
        return Err(Error::io(
            &hr_dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "HR directory not found"),
        ));
    }
    let hr = png_stems(&hr_dir)?;
    let mut written = 0;
    let mut images = Vec::with_capacity(hr.len());
    for (stem, path) in &hr {
        let img = ImageTensor::load_png(path)?;
        for &s in scales {
            let pair = LoadedPair::new(stem.clone(), img.clone(), None, s)?;
            let bytes = pair.lr.encode_png()?;
            if write_if_changed(&lr_dir(root, s).join(format!("{stem}.png")), &bytes)? {
                written += 1;
            }
        }
        images.push(img);
    }
    let mut scale_list = scales.to_vec();
    scale_list.sort_unstable();
    scale_list.dedup();
    let meta = DatasetMeta {
        mean_rgb: mean_rgb(images.iter()),
        scale_list,
        count: hr.len(),
    };
    let text = serde_json::to_string_pretty(&meta).expect("meta serialises") + "\n";
    if write_if_changed(&root.join("meta.json"), text.as_bytes())? {
        written += 1;
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::ColorSpace;

    fn write_hr(root: &Path, names: &[&str]) {
        for (i, n) in names.iter().enumerate() {
            let img = ImageTensor::from_fn(12, 16, ColorSpace::Rgb, |y, x, c| ((y + x * 2 + c + i) % 9) as f32 / 8.0);
            img.save_png(&root.join("HR").join(format!("{n}.png"))).unwrap();
        }
    }

    #[test]
    fn scans_hr_only() {
        let dir = tempfile::tempdir().unwrap();
        write_hr(dir.path(), &["c", "a", "b"]);
        let idx = scan_dataset(dir.path(), 2).unwrap();
        assert_eq!(idx.len(), 3);
        assert_eq!(idx.entries[0].stem, "a");
        assert!(idx.entries.iter().all(|e| e.lr.is_none()));
    }

    #[test]
    fn scans_matching_lr_tree() {
        let dir = tempfile::tempdir().unwrap();
        write_hr(dir.path(), &["a", "b", "c"]);
        prepare_data(dir.path(), &[2]).unwrap();
        let idx = scan_dataset(dir.path(), 2).unwrap();
        assert_eq!(idx.len(), 3);
        assert!(idx.entries.iter().all(|e| e.lr.is_some()));
    }

    #[test]
    fn missing_lr_file_is_named() {
        let dir = tempfile::tempdir().unwrap();
        write_hr(dir.path(), &["a", "b", "c"]);
        prepare_data(dir.path(), &[2]).unwrap();
        fs::remove_file(lr_dir(dir.path(), 2).join("b.png")).unwrap();
        match scan_dataset(dir.path(), 2) {
            Err(Error::Index { file, .. }) => assert!(file.ends_with("b.png"), "{file}"),
            other => panic!("expected index error, got {other:?}"),
        }
    }

    #[test]
    fn missing_hr_dir_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(scan_dataset(dir.path(), 2), Err(Error::Io { .. })));
    }

    #[test]
    fn prepare_is_idempotent_and_counts_files() {
        let dir = tempfile::tempdir().unwrap();
        write_hr(dir.path(), &["a", "b", "c"]);
        let first = prepare_data(dir.path(), &[2, 4]).unwrap();
        assert_eq!(first, 7); // 6 LR files + meta.json
        assert_eq!(prepare_data(dir.path(), &[2, 4]).unwrap(), 0);
        let meta = DatasetMeta::load(dir.path()).unwrap();
        assert_eq!(meta.count, 3);
        assert_eq!(meta.scale_list, vec![2, 4]);
        let set = TrainingSet::load(&scan_dataset(dir.path(), 4).unwrap()).unwrap();
        assert_eq!(set.pairs[0].lr.dims(), (3, 4));
    }
}
