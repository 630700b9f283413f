//! Labelled image datasets: MNIST IDX files, class-per-directory image
//! trees, and stratified splitting.

mod idx;
mod ingest;
mod split;

pub use idx::{load_mnist_idx, write_idx, IDX_IMAGES_MAGIC, IDX_IMAGES_MAGIC_4D, IDX_LABELS_MAGIC};
pub use ingest::{bilinear_resize, ingest_image_dir, rgb_to_gray, IngestConfig, Normalize};
pub use split::split;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `N` images in NHWC layout with pixels in `[0, 1]`, plus class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    images: Tensor<f32>,
    labels: Vec<usize>,
    class_names: Vec<String>,
}

impl LabeledDataset {
    pub fn new(images: Tensor<f32>, labels: Vec<usize>, class_names: Vec<String>) -> Result<Self> {
        images.expect_rank(4, "dataset images")?;
        if images.dims()[0] != labels.len() {
            return Err(Error::CountMismatch {
                images: images.dims()[0],
                labels: labels.len(),
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::LabelOutOfRange {
                label,
                classes: class_names.len(),
            });
        }
        if images.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Dataset("pixel values outside [0, 1]".into()));
        }
        Ok(LabeledDataset {
            images,
            labels,
            class_names,
        })
    }

    pub fn images(&self) -> &Tensor<f32> {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `[h, w, c]` of a single image.
    pub fn image_dims(&self) -> [usize; 3] {
        let d = self.images.dims();
        [d[1], d[2], d[3]]
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Ok(LabeledDataset {
            images: self.images.gather_outer(indices)?,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
        })
    }

    /// The first `n` samples (or all of them if there are fewer).
    pub fn take(&self, n: usize) -> Result<Self> {
        let n = n.min(self.len());
        let idx: Vec<usize> = (0..n).collect();
        self.subset(&idx)
    }

    /// Errors unless `other` uses the same class names in the same order;
    /// used when training on one dataset and testing on another.
    pub fn check_compatible(&self, other: &LabeledDataset) -> Result<()> {
        if self.class_names != other.class_names {
            return Err(Error::Dataset(format!(
                "class names differ between datasets: {:?} vs {:?}",
                self.class_names, other.class_names
            )));
        }
        if self.image_dims() != other.image_dims() {
            return Err(Error::Dataset(format!(
                "image dims differ between datasets: {:?} vs {:?}",
                self.image_dims(),
                other.image_dims()
            )));
        }
        Ok(())
    }
}
