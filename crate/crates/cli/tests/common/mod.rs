#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use qrelu_core::data::LabeledDataset;
use qrelu_core::Tensor;

pub const TOY_SIDE: usize = 12;
pub const TOY_CLASSES: [&str; 3] = ["bars", "columns", "diagonals"];
pub const TRAIN_PER_CLASS: usize = 40;
pub const TEST_PER_CLASS: usize = 15;
pub const TRAIN_SEED: u64 = 1;
pub const TEST_SEED: u64 = 2;

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/toy")
}

pub fn toy_config_path() -> PathBuf {
    fixture_dir().join("toy.json")
}

/// One pattern per class: a horizontal bar, a vertical bar or a diagonal,
/// at a random offset on low noise. Pixels are multiples of 1/255.
pub fn toy_pixels(class: usize, side: usize, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let offset = rng.random_range(1..side - 1);
    (0..side * side)
        .map(|i| {
            let (r, c) = (i / side, i % side);
            let on = match class {
                0 => r == offset,
                1 => c == offset,
                _ => (r + side - c) % side == offset,
            };
            let noise: u8 = rng.random_range(0..60);
            if on {
                255 - noise
            } else {
                noise
            }
        })
        .collect()
}

pub fn toy_dataset(per_class: usize, seed: u64) -> LabeledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for i in 0..per_class * TOY_CLASSES.len() {
        let class = i % TOY_CLASSES.len();
        data.extend(toy_pixels(class, TOY_SIDE, &mut rng).into_iter().map(|p| p as f32 / 255.0));
        labels.push(class);
    }
    let n = labels.len();
    let images = Tensor::new(vec![n, TOY_SIDE, TOY_SIDE, 1], data).unwrap();
    LabeledDataset::new(images, labels, TOY_CLASSES.iter().map(|s| s.to_string()).collect()).unwrap()
}

/// Writes a dataset as `root/<class>/<index>.png` grayscale images.
pub fn write_png_tree(ds: &LabeledDataset, root: &Path) {
    let [h, w, c] = ds.image_dims();
    assert_eq!(c, 1);
    let data = ds.images().data();
    for (i, &label) in ds.labels().iter().enumerate() {
        let dir = root.join(&ds.class_names()[label]);
        std::fs::create_dir_all(&dir).unwrap();
        let pixels: Vec<u8> = data[i * h * w..(i + 1) * h * w]
            .iter()
            .map(|&v| (v * 255.0).round() as u8)
            .collect();
        image::GrayImage::from_raw(w as u32, h as u32, pixels)
            .unwrap()
            .save(dir.join(format!("{i:04}.png")))
            .unwrap();
    }
}

/// Colour images of a different size than the ingest target, so ingestion
/// exercises grayscale conversion and resizing.
pub fn write_rgb_tree(root: &Path, per_class: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = 20;
    for i in 0..per_class * TOY_CLASSES.len() {
        let class = i % TOY_CLASSES.len();
        let gray = toy_pixels(class, side, &mut rng);
        let tint: [u8; 3] = [rng.random(), rng.random(), rng.random()];
        let mut img = image::RgbImage::new(side as u32, side as u32);
        for (p, &g) in img.pixels_mut().zip(&gray) {
            *p = image::Rgb(tint.map(|t| ((g as u16 * (128 + t as u16 / 2)) / 255) as u8));
        }
        let dir = root.join(TOY_CLASSES[class]);
        std::fs::create_dir_all(&dir).unwrap();
        img.save(dir.join(format!("{i:04}.png"))).unwrap();
    }
}

/// Small network and training settings for fast end-to-end runs.
pub fn toy_model_and_train() -> serde_json::Value {
    let conv = |out: usize| json!({"in_channels": 1, "out_channels": out, "kernel_h": 3, "kernel_w": 3, "padding": "same", "stride": 1});
    json!({
        "model": {"conv1": conv(4), "conv2": conv(8), "dense_width": 16, "dropout_rate": 0.25},
        "train": {"epochs": 4, "batch_size": 8, "learning_rate": 0.02},
    })
}

/// A run config over an image directory with an internal split.
pub fn image_dir_config(root: &Path, activations: &[&str], out: &Path) -> serde_json::Value {
    let mut v = toy_model_and_train();
    v["seed"] = 5.into();
    v["data"] = json!({
        "source": "image_dir",
        "train_paths": [root],
        "test_paths": [],
        "ingest": {"target_h": TOY_SIDE, "target_w": TOY_SIDE},
        "test_fraction": 0.3,
    });
    v["activations"] = json!(activations);
    v["report"] = json!({"output_path": out, "bootstrap_resamples": 200});
    v
}

pub fn write_json(path: &Path, value: &serde_json::Value) {
    std::fs::write(path, serde_json::to_string_pretty(value).unwrap() + "\n").unwrap();
}
