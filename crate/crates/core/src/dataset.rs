//! MNIST-style IDX ingestion, stratified validation splits and per-epoch
//! minibatch plans.

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use ndarray::{ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::DataError;
use crate::linalg::DataMatrix;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const NUM_CLASSES: usize = 10;

/// Images scaled to [0,1] together with their digit labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub images: DataMatrix,
    pub labels: Vec<u8>,
}

impl LabeledDataset {
    pub fn new(images: DataMatrix, labels: Vec<u8>) -> Result<Self, DataError> {
        if images.rows() != labels.len() {
            return Err(DataError::CountMismatch {
                images: images.rows(),
                labels: labels.len(),
            });
        }
        Ok(LabeledDataset { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            images: self.images.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Keeps the first `n` examples.
    pub fn truncate(&self, n: usize) -> LabeledDataset {
        let n = n.min(self.len());
        LabeledDataset {
            images: self.images.head(n),
            labels: self.labels[..n].to_vec(),
        }
    }
}

/// Resolves `path`, falling back to the same name with `.gz` added or removed.
fn resolve(path: &Path) -> PathBuf {
    if path.exists() {
        return path.to_path_buf();
    }
    let s = path.to_string_lossy();
    let alt = match s.strip_suffix(".gz") {
        Some(stem) => PathBuf::from(stem),
        None => PathBuf::from(format!("{s}.gz")),
    };
    if alt.exists() {
        alt
    } else {
        path.to_path_buf()
    }
}

/// Reads a whole file, transparently inflating gzip content.
fn read_maybe_gz(path: &Path) -> Result<Vec<u8>, DataError> {
    let unreadable = |source| DataError::Unreadable {
        path: path.to_path_buf(),
        source,
    };
    let mut raw = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut raw))
        .map_err(unreadable)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(unreadable)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], offset: usize) -> u32 {
    u32::from_be_bytes(bytes[offset..offset + 4].try_into().unwrap())
}

/// Parses an IDX payload: checks magic and byte count, returns dims and data.
fn parse_idx<'a>(
    path: &Path,
    bytes: &'a [u8],
    magic: u32,
) -> Result<(Vec<usize>, &'a [u8]), DataError> {
    let ndims = (magic & 0xff) as usize;
    let header = 4 + 4 * ndims;
    if bytes.len() < 4 {
        return Err(DataError::Truncated {
            path: path.to_path_buf(),
            expected: header,
            found: bytes.len(),
        });
    }
    let found = be_u32(bytes, 0);
    if found != magic {
        return Err(DataError::BadMagic {
            path: path.to_path_buf(),
            found,
            expected: magic,
        });
    }
    if bytes.len() < header {
        return Err(DataError::Truncated {
            path: path.to_path_buf(),
            expected: header,
            found: bytes.len(),
        });
    }
    let dims: Vec<usize> = (0..ndims).map(|d| be_u32(bytes, 4 + 4 * d) as usize).collect();
    let expected = header + dims.iter().product::<usize>();
    if bytes.len() < expected {
        return Err(DataError::Truncated {
            path: path.to_path_buf(),
            expected,
            found: bytes.len(),
        });
    }
    Ok((dims, &bytes[header..expected]))
}

/// Loads an IDX image/label pair, scaling pixel bytes to [0,1].
///
/// Either file may be gzip-compressed; a missing `.gz` suffix on the given
/// path is tolerated in both directions.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset, DataError> {
    let images_path = resolve(images_path);
    let labels_path = resolve(labels_path);
    let image_bytes = read_maybe_gz(&images_path)?;
    let label_bytes = read_maybe_gz(&labels_path)?;

    let (dims, pixels) = parse_idx(&images_path, &image_bytes, IMAGE_MAGIC)?;
    let (label_dims, labels) = parse_idx(&labels_path, &label_bytes, LABEL_MAGIC)?;
    let n = dims[0];
    if n != label_dims[0] {
        return Err(DataError::CountMismatch {
            images: n,
            labels: label_dims[0],
        });
    }
    if let Some(index) = labels.iter().position(|&l| l as usize >= NUM_CLASSES) {
        return Err(DataError::BadLabel {
            path: labels_path,
            index,
            label: labels[index],
        });
    }
    let features = dims[1] * dims[2];
    let values = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    let images = DataMatrix::from_vec(n, features, values).map_err(|_| DataError::Truncated {
        path: images_path.clone(),
        expected: n * features,
        found: pixels.len(),
    })?;
    LabeledDataset::new(images, labels.to_vec())
}

fn write_bytes(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let gz = path.extension().is_some_and(|e| e == "gz");
    let mut file = File::create(path)?;
    if gz {
        let mut enc = GzEncoder::new(file, Compression::default());
        enc.write_all(bytes)?;
        enc.finish()?;
    } else {
        file.write_all(bytes)?;
    }
    Ok(())
}

/// Writes a dataset as an IDX pair with `side × side` images. Pixels are
/// quantised back to bytes (`round(x·255)`), so values loaded by [`load_idx`]
/// round-trip exactly. A `.gz` extension selects gzip output.
pub fn write_idx(
    data: &LabeledDataset,
    side: (usize, usize),
    images_path: &Path,
    labels_path: &Path,
) -> std::io::Result<()> {
    assert_eq!(side.0 * side.1, data.images.cols(), "image side does not match feature count");
    let n = data.len() as u32;
    let mut image_bytes = Vec::with_capacity(16 + data.images.as_slice().len());
    image_bytes.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    image_bytes.extend_from_slice(&n.to_be_bytes());
    image_bytes.extend_from_slice(&(side.0 as u32).to_be_bytes());
    image_bytes.extend_from_slice(&(side.1 as u32).to_be_bytes());
    image_bytes.extend(
        data.images
            .as_slice()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    let mut label_bytes = Vec::with_capacity(8 + data.len());
    label_bytes.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    label_bytes.extend_from_slice(&n.to_be_bytes());
    label_bytes.extend_from_slice(&data.labels);
    write_bytes(images_path, &image_bytes)?;
    write_bytes(labels_path, &label_bytes)
}

/// Moves `per_class` examples of every digit into a validation set.
///
/// Which examples go to validation is a seeded shuffle within each class; both
/// outputs keep the original relative order of their rows.
pub fn stratified_split(
    data: &LabeledDataset,
    per_class: usize,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset), DataError> {
    let (train_idx, valid_idx) = stratified_indices(&data.labels, per_class, seed)?;
    Ok((data.select(&train_idx), data.select(&valid_idx)))
}

/// Index form of [`stratified_split`]: `(train, valid)` row indices.
pub fn stratified_indices(
    labels: &[u8],
    per_class: usize,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), DataError> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); NUM_CLASSES];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l as usize].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_valid = vec![false; labels.len()];
    for (class, members) in by_class.iter_mut().enumerate() {
        if members.len() < per_class {
            return Err(DataError::InsufficientClass {
                class: class as u8,
                available: members.len(),
                requested: per_class,
            });
        }
        members.shuffle(&mut rng);
        for &i in &members[..per_class] {
            in_valid[i] = true;
        }
    }
    let (valid, train): (Vec<usize>, Vec<usize>) = (0..labels.len()).partition(|&i| in_valid[i]);
    Ok((train, valid))
}

/// A shuffled partition of `0..rows` into consecutive batches.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MinibatchPlan {
    pub batch_size: usize,
    pub permutation: Vec<usize>,
    pub epoch_seed: u64,
}

impl MinibatchPlan {
    pub fn new(rows: usize, batch_size: usize, epoch_seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed);
        Self::with_rng(rows, batch_size, &mut rng, epoch_seed)
    }

    /// Draws the permutation from an existing generator.
    pub fn with_rng<R: rand::Rng + ?Sized>(
        rows: usize,
        batch_size: usize,
        rng: &mut R,
        epoch_seed: u64,
    ) -> Self {
        assert!(batch_size >= 1, "batch size must be at least 1");
        let mut permutation: Vec<usize> = (0..rows).collect();
        permutation.shuffle(rng);
        MinibatchPlan {
            batch_size,
            permutation,
            epoch_seed,
        }
    }

    pub fn batches(&self) -> impl Iterator<Item = &[usize]> {
        self.permutation.chunks(self.batch_size)
    }

    pub fn batch_sizes(&self) -> Vec<usize> {
        self.batches().map(<[usize]>::len).collect()
    }

    /// Materialises each batch as an owned matrix of the selected rows.
    pub fn gather<'s, 'd: 's>(
        &'s self,
        data: ArrayView2<'d, f64>,
    ) -> impl Iterator<Item = ndarray::Array2<f64>> + use<'s, 'd> {
        self.batches().map(move |idx| data.select(Axis(0), idx))
    }
}

/// Shuffled minibatches of `data` for one epoch. The last batch is kept even
/// when it is short.
pub fn minibatches(data: &DataMatrix, batch_size: usize, epoch_seed: u64) -> Vec<DataMatrix> {
    let plan = MinibatchPlan::new(data.rows(), batch_size, epoch_seed);
    plan.gather(data.view()).map(DataMatrix::from).collect()
}
