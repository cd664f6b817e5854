//! IDX files (big-endian header, `u8` payload) as used by MNIST.

use std::path::Path;

use super::{read_file, Dataset};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IMAGE_MAGIC: u32 = 2051;
const LABEL_MAGIC: u32 = 2049;

#[derive(Debug, Clone, PartialEq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn header(bytes: &[u8], magic: u32, dims: usize, what: &str) -> Result<Vec<usize>> {
    let need = 4 * (1 + dims);
    if bytes.len() < need {
        return Err(Error::Dataset(format!("{what}: truncated header")));
    }
    let word = |i: usize| u32::from_be_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
    if word(0) != magic {
        return Err(Error::Dataset(format!("{what}: bad magic number {} (expected {magic})", word(0))));
    }
    Ok((1..=dims).map(|i| word(i) as usize).collect())
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let d = header(bytes, IMAGE_MAGIC, 3, "IDX images")?;
    let (count, rows, cols) = (d[0], d[1], d[2]);
    let body = &bytes[16..];
    let len = count * rows * cols;
    if body.len() < len {
        return Err(Error::Dataset(format!("IDX images: expected {len} pixel bytes, found {}", body.len())));
    }
    Ok(IdxImages { count, rows, cols, pixels: body[..len].to_vec() })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let d = header(bytes, LABEL_MAGIC, 1, "IDX labels")?;
    let body = &bytes[8..];
    if body.len() < d[0] {
        return Err(Error::Dataset(format!("IDX labels: expected {} labels, found {}", d[0], body.len())));
    }
    Ok(body[..d[0]].to_vec())
}

pub fn encode_idx_images(rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let count = pixels.len() / (rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for w in [IMAGE_MAGIC, count as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&w.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

fn load_pair(dir: &Path, prefix: &str, take: usize) -> Result<(Vec<f64>, Vec<usize>, usize)> {
    let images = parse_idx_images(&read_file(&dir.join(format!("{prefix}-images-idx3-ubyte")))?)?;
    let labels = parse_idx_labels(&read_file(&dir.join(format!("{prefix}-labels-idx1-ubyte")))?)?;
    if images.count != labels.len() {
        return Err(Error::Dataset(format!("{prefix}: {} images but {} labels", images.count, labels.len())));
    }
    if take > images.count {
        return Err(Error::Dataset(format!("{prefix}: requested {take} samples, file has {}", images.count)));
    }
    let pixels = images.rows * images.cols;
    let x = images.pixels[..take * pixels].iter().map(|&p| f64::from(p) / 255.0).collect();
    let y = labels[..take].iter().map(|&l| l as usize).collect();
    Ok((x, y, pixels))
}

/// MNIST from a directory holding the four canonical IDX files. The first
/// `train` samples of the training file and the first `val` samples of the
/// test file are used. Pixels are scaled to `[0, 1]`.
pub fn load_mnist(dir: &Path, train: usize, val: usize) -> Result<Dataset> {
    let (mut x, mut y, pixels) = load_pair(dir, "train", train)?;
    let (xv, yv, pixels_v) = load_pair(dir, "t10k", val)?;
    if pixels != pixels_v {
        return Err(Error::Dataset("train and test images differ in size".into()));
    }
    x.extend(xv);
    y.extend(yv);
    let classes = y.iter().max().map_or(0, |m| m + 1).max(10);
    let inputs = Tensor::new(vec![train + val, pixels], x)?;
    Dataset::new(
        inputs,
        y,
        classes,
        (0..train).collect(),
        (train..train + val).collect(),
        format!("canonical: first {train} of train, first {val} of t10k"),
    )
}
