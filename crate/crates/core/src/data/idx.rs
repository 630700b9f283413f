//! Big-endian IDX containers (the MNIST distribution format).

use std::fs;
use std::path::Path;

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
/// Unsigned-byte, rank-4 container used for multi-channel images `[N, H, W, C]`.
pub const IDX_IMAGES_MAGIC_4D: u32 = 0x0000_0804;

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Truncated {
            path: path.to_path_buf(),
            expected: (at + 4) as u64,
            actual: bytes.len() as u64,
        })
}

/// Parses header dims and returns `(dims, payload)`.
fn parse<'a>(bytes: &'a [u8], path: &Path, allowed: &[u32]) -> Result<(Vec<usize>, &'a [u8])> {
    let magic = be_u32(bytes, 0, path)?;
    if !allowed.contains(&magic) {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: allowed[0],
            found: magic,
        });
    }
    let rank = (magic & 0xff) as usize;
    let dims = (0..rank)
        .map(|i| be_u32(bytes, 4 + 4 * i, path).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let header = 4 + 4 * rank;
    let expected = header as u64 + dims.iter().map(|&d| d as u64).product::<u64>();
    if (bytes.len() as u64) < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            actual: bytes.len() as u64,
        });
    }
    Ok((dims, &bytes[header..expected as usize]))
}

/// Loads an IDX image file and its label file. Pixels are divided by 255
/// and class names are the decimal label values `"0".."K-1"`.
pub fn load_mnist_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let (ipath, lpath) = (images_path.as_ref(), labels_path.as_ref());
    let ibytes = read(ipath)?;
    let lbytes = read(lpath)?;
    let (idims, pixels) = parse(&ibytes, ipath, &[IDX_IMAGES_MAGIC, IDX_IMAGES_MAGIC_4D])?;
    let (ldims, labels) = parse(&lbytes, lpath, &[IDX_LABELS_MAGIC])?;
    if idims[0] != ldims[0] {
        return Err(Error::CountMismatch {
            images: idims[0],
            labels: ldims[0],
        });
    }
    let (n, h, w) = (idims[0], idims[1], idims[2]);
    let c = idims.get(3).copied().unwrap_or(1);
    if n == 0 || h == 0 || w == 0 || c == 0 {
        return Err(Error::Dataset(format!("{}: empty IDX dims {idims:?}", ipath.display())));
    }
    let labels: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    let classes = labels.iter().max().map_or(0, |&m| m + 1).max(2);
    let data = pixels.iter().map(|&p| p as f32 / 255.0).collect();
    let images = Tensor::new(vec![n, h, w, c], data)?;
    LabeledDataset::new(images, labels, (0..classes).map(|c| c.to_string()).collect())
}

/// Writes a dataset as an IDX image/label pair. Pixels are quantised to
/// `round(255 * v)`; single-channel images use the rank-3 container.
pub fn write_idx(dataset: &LabeledDataset, images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<()> {
    let dims = dataset.images().dims();
    if dataset.num_classes() > 256 {
        return Err(Error::Dataset("IDX labels hold at most 256 classes".into()));
    }
    let rank3 = dims[3] == 1;
    let mut out = Vec::with_capacity(20 + dataset.images().len());
    out.extend_from_slice(&(if rank3 { IDX_IMAGES_MAGIC } else { IDX_IMAGES_MAGIC_4D }).to_be_bytes());
    let header_dims = if rank3 { &dims[..3] } else { dims };
    for &d in header_dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend(dataset.images().data().iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    let ipath = images_path.as_ref();
    fs::write(ipath, &out).map_err(|e| Error::io(ipath, e))?;

    let mut out = Vec::with_capacity(8 + dataset.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(dataset.len() as u32).to_be_bytes());
    out.extend(dataset.labels().iter().map(|&l| l as u8));
    let lpath = labels_path.as_ref();
    fs::write(lpath, &out).map_err(|e| Error::io(lpath, e))
}
