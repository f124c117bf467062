use std::path::Path;

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const IMAGE_MAGIC: u32 = 2051;
pub const LABEL_MAGIC: u32 = 2049;
pub const NUM_CLASSES: usize = 10;

/// Raw 8-bit images, row-major, one byte per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageSet {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl ImageSet {
    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.rows * self.cols;
        &self.pixels[i * n..(i + 1) * n]
    }

    pub fn from_idx_bytes(bytes: &[u8]) -> Result<Self> {
        let ctx = "idx image file";
        let magic = read_u32(bytes, 0, ctx)?;
        if magic != IMAGE_MAGIC {
            return Err(Error::format(ctx, format!("magic {magic}, expected {IMAGE_MAGIC}")));
        }
        let count = read_u32(bytes, 4, ctx)? as usize;
        let rows = read_u32(bytes, 8, ctx)? as usize;
        let cols = read_u32(bytes, 12, ctx)? as usize;
        let expected = 16 + (count as u64) * (rows as u64) * (cols as u64);
        if bytes.len() as u64 != expected {
            return Err(Error::Length {
                context: ctx.into(),
                expected,
                found: bytes.len() as u64,
            });
        }
        Ok(ImageSet {
            count,
            rows,
            cols,
            pixels: bytes[16..].to_vec(),
        })
    }

    pub fn to_idx_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.pixels.len());
        for v in [IMAGE_MAGIC, self.count as u32, self.rows as u32, self.cols as u32] {
            out.extend_from_slice(&v.to_be_bytes());
        }
        out.extend_from_slice(&self.pixels);
        out
    }
}

/// Images scaled to [0,1], one flattened image per row.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbImageSet<T> {
    pub rows: usize,
    pub cols: usize,
    pub features: Array2<T>,
}

impl<T: Scalar> ProbImageSet<T> {
    pub fn count(&self) -> usize {
        self.features.nrows()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }
}

fn read_u32(bytes: &[u8], at: usize, ctx: &str) -> Result<u32> {
    let b = bytes.get(at..at + 4).ok_or_else(|| Error::Length {
        context: ctx.into(),
        expected: (at + 4) as u64,
        found: bytes.len() as u64,
    })?;
    Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn load_idx_images(path: impl AsRef<Path>) -> Result<ImageSet> {
    ImageSet::from_idx_bytes(&read_file(path.as_ref())?)
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let ctx = "idx label file";
    let magic = read_u32(bytes, 0, ctx)?;
    if magic != LABEL_MAGIC {
        return Err(Error::format(ctx, format!("magic {magic}, expected {LABEL_MAGIC}")));
    }
    let count = read_u32(bytes, 4, ctx)? as u64;
    if bytes.len() as u64 != 8 + count {
        return Err(Error::Length {
            context: ctx.into(),
            expected: 8 + count,
            found: bytes.len() as u64,
        });
    }
    let labels = bytes[8..].to_vec();
    if let Some((i, l)) = labels.iter().enumerate().find(|(_, &l)| l as usize >= NUM_CLASSES) {
        return Err(Error::format(ctx, format!("label {l} at index {i} is outside 0..{NUM_CLASSES}")));
    }
    Ok(labels)
}

pub fn labels_to_idx_bytes(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    parse_idx_labels(&read_file(path.as_ref())?)
}

pub fn normalize<T: Scalar>(images: &ImageSet) -> ProbImageSet<T> {
    let dim = images.rows * images.cols;
    let scale = T::of(255.0);
    let features = Array2::from_shape_fn((images.count, dim), |(i, j)| {
        T::of(images.pixels[i * dim + j] as f64) / scale
    });
    ProbImageSet {
        rows: images.rows,
        cols: images.cols,
        features,
    }
}

/// Normalised images paired with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet<T> {
    pub images: ProbImageSet<T>,
    pub labels: Vec<u8>,
}

impl<T: Scalar> LabeledSet<T> {
    pub fn new(images: ProbImageSet<T>, labels: Vec<u8>) -> Result<Self> {
        if images.count() != labels.len() {
            return Err(Error::Shape(format!(
                "{} images but {} labels",
                images.count(),
                labels.len()
            )));
        }
        Ok(LabeledSet { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        LabeledSet {
            images: ProbImageSet {
                rows: self.images.rows,
                cols: self.images.cols,
                features: self.images.features.select(Axis(0), indices),
            },
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// The first `n` samples (or all of them if fewer).
    pub fn head(&self, n: usize) -> Self {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }
}

/// The four canonical MNIST IDX files from one directory.
#[derive(Debug, Clone)]
pub struct Mnist<T> {
    pub train: LabeledSet<T>,
    pub test: LabeledSet<T>,
}

impl<T: Scalar> Mnist<T> {
    pub const FILES: [&'static str; 4] = [
        "train-images-idx3-ubyte",
        "train-labels-idx1-ubyte",
        "t10k-images-idx3-ubyte",
        "t10k-labels-idx1-ubyte",
    ];

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let load = |img: &str, lbl: &str| -> Result<LabeledSet<T>> {
            let images = load_idx_images(dir.join(img))?;
            let labels = load_idx_labels(dir.join(lbl))?;
            LabeledSet::new(normalize(&images), labels)
        };
        Ok(Mnist {
            train: load(Self::FILES[0], Self::FILES[1])?,
            test: load(Self::FILES[2], Self::FILES[3])?,
        })
    }
}
