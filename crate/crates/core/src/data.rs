//! Dataset ingest: MNIST IDX files and synthetic blobs.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{Label, LabeledSample};
use crate::scalar::Scalar;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Number of 0/1 samples the experiments are run with.
pub const DEFAULT_SAMPLE_COUNT: usize = 12_600;

/// Decoded MNIST-style images with their digit labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImageSet {
    pub rows: usize,
    pub cols: usize,
    /// Row-major pixels, `rows · cols` bytes per image.
    pub pixels: Vec<u8>,
    pub labels: Vec<u8>,
}

impl RawImageSet {
    pub fn new(rows: usize, cols: usize, pixels: Vec<u8>, labels: Vec<u8>) -> Result<Self> {
        let per = rows * cols;
        if per == 0 || !pixels.len().is_multiple_of(per) {
            return Err(Error::Consistency(format!(
                "{} pixel bytes do not form {rows}x{cols} images",
                pixels.len()
            )));
        }
        if pixels.len() / per != labels.len() {
            return Err(Error::Consistency(format!(
                "{} images but {} labels",
                pixels.len() / per,
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l > 9) {
            return Err(Error::Consistency(format!("label {bad} is not a digit")));
        }
        Ok(Self {
            rows,
            cols,
            pixels,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let per = self.rows * self.cols;
        &self.pixels[i * per..(i + 1) * per]
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Cursor<'a> {
    fn u32_be(&mut self) -> Result<u32> {
        let end = self.offset + 4;
        let chunk = self.bytes.get(self.offset..end).ok_or_else(|| Error::Parse {
            offset: self.bytes.len(),
            reason: format!("header truncated: expected {end} bytes, file has {}", self.bytes.len()),
        })?;
        self.offset = end;
        Ok(u32::from_be_bytes(chunk.try_into().expect("4 bytes")))
    }

    fn magic(&mut self, expected: u32) -> Result<()> {
        let offset = self.offset;
        let found = self.u32_be()?;
        if found != expected {
            return Err(Error::Parse {
                offset,
                reason: format!("bad magic 0x{found:08x}, expected 0x{expected:08x}"),
            });
        }
        Ok(())
    }

    fn body(&self, len: usize) -> Result<&'a [u8]> {
        let expected = self.offset + len;
        if self.bytes.len() < expected {
            return Err(Error::Parse {
                offset: self.bytes.len(),
                reason: format!("truncated: expected {expected} bytes, file has {}", self.bytes.len()),
            });
        }
        Ok(&self.bytes[self.offset..expected])
    }
}

/// Parses an IDX3 image file; returns `(rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let mut cur = Cursor { bytes, offset: 0 };
    cur.magic(IDX_IMAGES_MAGIC)?;
    let n = cur.u32_be()? as usize;
    let rows = cur.u32_be()? as usize;
    let cols = cur.u32_be()? as usize;
    Ok((rows, cols, cur.body(n * rows * cols)?.to_vec()))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut cur = Cursor { bytes, offset: 0 };
    cur.magic(IDX_LABELS_MAGIC)?;
    let n = cur.u32_be()? as usize;
    Ok(cur.body(n)?.to_vec())
}

/// Reads a file, inflating it when it starts with the gzip magic.
fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingDataset(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<RawImageSet> {
    let (rows, cols, pixels) = parse_idx_images(&read_maybe_gz(images_path)?)?;
    let labels = parse_idx_labels(&read_maybe_gz(labels_path)?)?;
    RawImageSet::new(rows, cols, pixels, labels)
}

pub fn encode_idx_images(set: &RawImageSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + set.pixels.len());
    for v in [IDX_IMAGES_MAGIC, set.len() as u32, set.rows as u32, set.cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&set.pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Writes an image/label pair of uncompressed IDX files.
pub fn write_idx(set: &RawImageSet, images_path: &Path, labels_path: &Path) -> Result<()> {
    fs::File::create(images_path)?.write_all(&encode_idx_images(set))?;
    fs::File::create(labels_path)?.write_all(&encode_idx_labels(&set.labels))?;
    Ok(())
}

fn find_file(dir: &Path, stems: &[&str]) -> Result<PathBuf> {
    for stem in stems {
        for suffix in ["", ".gz"] {
            let p = dir.join(format!("{stem}{suffix}"));
            if p.is_file() {
                return Ok(p);
            }
        }
    }
    Err(Error::MissingDataset(dir.join(stems[0])))
}

/// Locates the MNIST training pair in `dir` (plain or gzipped, either naming style).
pub fn mnist_train_paths(dir: &Path) -> Result<(PathBuf, PathBuf)> {
    if !dir.is_dir() {
        return Err(Error::MissingDataset(dir.to_path_buf()));
    }
    Ok((
        find_file(dir, &["train-images-idx3-ubyte", "train-images.idx3-ubyte"])?,
        find_file(dir, &["train-labels-idx1-ubyte", "train-labels.idx1-ubyte"])?,
    ))
}

/// Keeps digits 0 (label −1) and 1 (label +1), flattening each image row-major
/// and scaling pixels into `[0, 1]`.
pub fn binarize<T: Scalar>(raw: &RawImageSet) -> Vec<LabeledSample<T>> {
    let scale = T::lit(255.0);
    (0..raw.len())
        .filter_map(|i| {
            let label = match raw.labels[i] {
                0 => Label::Negative,
                1 => Label::Positive,
                _ => return None,
            };
            let features = raw
                .image(i)
                .iter()
                .map(|&p| T::from_u8(p).expect("byte fits scalar") / scale)
                .collect();
            Some(LabeledSample::new(features, label))
        })
        .collect()
}

/// Uniform random subset of `count` samples (order preserved), or all of them
/// if there are fewer.
pub fn truncate_random<T: Clone>(samples: Vec<T>, count: usize, seed: u64) -> Vec<T> {
    if samples.len() <= count {
        return samples;
    }
    let mut idx: Vec<usize> = (0..samples.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut keep = idx[..count].to_vec();
    keep.sort_unstable();
    let mut slots: Vec<Option<T>> = samples.into_iter().map(Some).collect();
    keep.into_iter()
        .map(|i| slots[i].take().expect("unique index"))
        .collect()
}

/// Binary MNIST from a directory, truncated to `count` samples.
pub fn load_mnist_binary<T: Scalar>(dir: &Path, count: Option<usize>, seed: u64) -> Result<Vec<LabeledSample<T>>> {
    let (images, labels) = mnist_train_paths(dir)?;
    let samples = binarize(&load_idx(&images, &labels)?);
    Ok(match count {
        Some(n) => truncate_random(samples, n, seed),
        None => samples,
    })
}

/// Gaussian blobs at `±margin·u` for a random unit vector `u`, with labels
/// alternating `+1, −1`. For `margin > 0`, points whose signed projection on
/// `u` is below `margin/2` are redrawn, so the classes are separable by the
/// hyperplane through the origin normal to `u`.
pub fn synth_dataset<T: Scalar>(d: usize, n: usize, margin: f64, seed: u64) -> Vec<LabeledSample<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gauss = || -> f64 { StandardNormal.sample(&mut rng) };
    let u = loop {
        let v: Vec<f64> = (0..d).map(|_| gauss()).collect();
        let len = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if len > 1e-12 {
            break v.into_iter().map(|x| x / len).collect::<Vec<_>>();
        }
    };
    (0..n)
        .map(|i| {
            let label = if i % 2 == 0 { Label::Positive } else { Label::Negative };
            let y = f64::from(label.as_i8());
            let x = loop {
                let x: Vec<f64> = u.iter().map(|ui| y * margin * ui + gauss()).collect();
                let proj: f64 = x.iter().zip(&u).map(|(a, b)| a * b).sum();
                if margin == 0.0 || y * proj >= margin / 2.0 {
                    break x;
                }
            };
            LabeledSample::new(x.into_iter().map(T::lit).collect(), label)
        })
        .collect()
}
