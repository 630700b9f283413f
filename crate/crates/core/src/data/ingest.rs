//! Class-per-directory image ingestion: decode, grayscale, bilinear resize,
//! scale to `[0, 1]`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Normalize {
    #[default]
    Divide255,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub target_h: usize,
    pub target_w: usize,
    /// Rec.601 luminance when true, RGB channels otherwise.
    pub grayscale: bool,
    pub normalize: Normalize,
    /// Lower-case file extensions to pick up.
    pub extensions: Vec<String>,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            target_h: 28,
            target_w: 28,
            grayscale: true,
            normalize: Normalize::Divide255,
            extensions: vec!["png".into(), "jpg".into(), "jpeg".into()],
        }
    }
}

impl IngestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.target_h < 4 || self.target_w < 4 {
            return Err(Error::Config(format!(
                "ingest target {}x{} must be at least 4x4",
                self.target_h, self.target_w
            )));
        }
        Ok(())
    }

    fn channels(&self) -> usize {
        if self.grayscale {
            1
        } else {
            3
        }
    }
}

/// Rec.601 luminance of interleaved RGB samples.
pub fn rgb_to_gray(rgb: &[f32]) -> Vec<f32> {
    rgb.chunks_exact(3)
        .map(|p| (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64) as f32)
        .collect()
}

/// One output coordinate's two source taps and the weight of the second.
fn taps(out_len: usize, in_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(in_len - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

/// Bilinear resize of an interleaved `h x w x c` image using half-pixel
/// centres (no antialiasing).
pub fn bilinear_resize(src: &[f32], h: usize, w: usize, c: usize, out_h: usize, out_w: usize) -> Vec<f32> {
    assert_eq!(src.len(), h * w * c, "bilinear_resize input size");
    let ty = taps(out_h, h);
    let tx = taps(out_w, w);
    let at = |y: usize, x: usize, ch: usize| src[(y * w + x) * c + ch] as f64;
    let mut out = Vec::with_capacity(out_h * out_w * c);
    for &(y0, y1, wy) in &ty {
        for &(x0, x1, wx) in &tx {
            for ch in 0..c {
                let top = at(y0, x0, ch) * (1.0 - wx) + at(y0, x1, ch) * wx;
                let bottom = at(y1, x0, ch) * (1.0 - wx) + at(y1, x1, ch) * wx;
                out.push((top * (1.0 - wy) + bottom * wy) as f32);
            }
        }
    }
    out
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<Vec<_>>>()?;
    entries.sort();
    Ok(entries)
}

fn load_image(path: &Path, config: &IngestConfig) -> Result<Vec<f32>> {
    let img = image::open(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let rgb: Vec<f32> = rgb.into_raw().into_iter().map(f32::from).collect();
    let (pixels, c) = if config.grayscale { (rgb_to_gray(&rgb), 1) } else { (rgb, 3) };
    let resized = bilinear_resize(&pixels, h, w, c, config.target_h, config.target_w);
    Ok(match config.normalize {
        Normalize::Divide255 => resized.into_iter().map(|v| (v / 255.0).clamp(0.0, 1.0)).collect(),
    })
}

/// Reads `root/<class>/<image>` trees. Classes are the sorted subdirectory
/// names; files are visited in sorted path order. Classes with no matching
/// images are skipped with a warning.
pub fn ingest_image_dir(root: impl AsRef<Path>, config: &IngestConfig) -> Result<LabeledDataset> {
    config.validate()?;
    let root = root.as_ref();
    let mut class_names = Vec::new();
    let mut files: Vec<(PathBuf, usize)> = Vec::new();
    for class_dir in sorted_entries(root)?.into_iter().filter(|p| p.is_dir()) {
        let images: Vec<PathBuf> = sorted_entries(&class_dir)?
            .into_iter()
            .filter(|p| {
                p.is_file()
                    && p.extension()
                        .and_then(|e| e.to_str())
                        .is_some_and(|e| config.extensions.iter().any(|x| x.eq_ignore_ascii_case(e)))
            })
            .collect();
        let name = class_dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        if images.is_empty() {
            log::warn!("skipping empty class directory {}", class_dir.display());
            continue;
        }
        let label = class_names.len();
        class_names.push(name);
        files.extend(images.into_iter().map(|p| (p, label)));
    }
    if class_names.is_empty() {
        return Err(Error::Dataset(format!(
            "no class subdirectories with images under {}",
            root.display()
        )));
    }
    let (h, w, c) = (config.target_h, config.target_w, config.channels());
    let mut data = Vec::with_capacity(files.len() * h * w * c);
    let mut labels = Vec::with_capacity(files.len());
    for (path, label) in &files {
        data.extend(load_image(path, config)?);
        labels.push(*label);
    }
    let images = Tensor::new(vec![files.len(), h, w, c], data)?;
    LabeledDataset::new(images, labels, class_names)
}
