//! Datasets: synthetic Gaussian blobs, IDX and CSV loaders, mini-batch
//! plans, and class-stratified sampling.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::numerics::{LabelVector, ProbMatrix};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Row-stochastic tolerance for probability CSVs; rows within it are
/// renormalized, rows outside it are rejected.
pub const PROB_ROW_TOLERANCE: f64 = 1e-3;

/// Labelled feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Tensor,
    pub labels: LabelVector,
}

impl Dataset {
    pub fn new(features: Tensor, labels: LabelVector) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::dims(features.rows(), labels.len()));
        }
        if !features.is_finite() {
            return Err(Error::InvalidInput("non-finite feature".into()));
        }
        Ok(Dataset { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn classes(&self) -> usize {
        self.labels.classes()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let d = self.dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(self.features.row(i));
        }
        Dataset {
            features: Tensor::new(indices.len(), d, data).expect("sized"),
            labels: self.labels.select(indices),
        }
    }

    /// Indices of every sample, grouped by class.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut by_class = vec![Vec::new(); self.classes()];
        for (i, &l) in self.labels.iter().enumerate() {
            by_class[l].push(i);
        }
        by_class
    }
}

/// Per-feature affine map fitted on one dataset and applied to others.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
    /// Clip transformed values into this range, if set.
    pub clip: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    None,
    /// Zero mean, unit variance per feature.
    Standardize,
    /// Map the fitted range of each feature to `[0, 1]`, clipping.
    MinMax,
}

impl FeatureScaler {
    pub fn fit(data: &Dataset, scaling: Scaling) -> Option<Self> {
        let (n, d) = (data.len(), data.dim());
        let column = |j: usize| (0..n).map(move |i| data.features.get(i, j));
        match scaling {
            Scaling::None => None,
            Scaling::Standardize => {
                let mut shift = Vec::with_capacity(d);
                let mut scale = Vec::with_capacity(d);
                for j in 0..d {
                    let mean = column(j).sum::<f64>() / n as f64;
                    let var = column(j).map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
                    shift.push(mean);
                    scale.push(if var > 0.0 { 1.0 / var.sqrt() } else { 1.0 });
                }
                Some(FeatureScaler {
                    shift,
                    scale,
                    clip: None,
                })
            }
            Scaling::MinMax => {
                let mut shift = Vec::with_capacity(d);
                let mut scale = Vec::with_capacity(d);
                for j in 0..d {
                    let lo = column(j).fold(f64::INFINITY, f64::min);
                    let hi = column(j).fold(f64::NEG_INFINITY, f64::max);
                    shift.push(lo);
                    scale.push(if hi > lo { 1.0 / (hi - lo) } else { 1.0 });
                }
                Some(FeatureScaler {
                    shift,
                    scale,
                    clip: Some((0.0, 1.0)),
                })
            }
        }
    }

    pub fn apply(&self, data: &Dataset) -> Result<Dataset> {
        if data.dim() != self.shift.len() {
            return Err(Error::dims(self.shift.len(), data.dim()));
        }
        let d = data.dim();
        let mut features = data.features.clone();
        for (i, v) in features.data_mut().iter_mut().enumerate() {
            let j = i % d;
            *v = (*v - self.shift[j]) * self.scale[j];
            if let Some((lo, hi)) = self.clip {
                *v = v.clamp(lo, hi);
            }
        }
        Dataset::new(features, data.labels.clone())
    }
}

/// Parameters for [`gen_blobs`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    /// Standard deviation of each isotropic Gaussian.
    pub spread: f64,
    /// Distance of every class center from the origin.
    pub radius: f64,
    pub seed: u64,
}

impl Default for BlobSpec {
    fn default() -> Self {
        BlobSpec {
            classes: 3,
            per_class: 100,
            dim: 2,
            spread: 1.0,
            radius: 2.0,
            seed: 0,
        }
    }
}

/// Unit-norm class directions. With `dim >= classes` these are the
/// vertices of a centered regular simplex; otherwise Gaussian directions
/// from a fixed seed. Independent of the sample seed, so train and test
/// draws share their centers.
pub fn blob_directions(classes: usize, dim: usize) -> Vec<Vec<f64>> {
    if dim >= classes {
        let norm = ((classes - 1) as f64 / classes as f64).sqrt();
        (0..classes)
            .map(|c| {
                (0..dim)
                    .map(|j| {
                        let v = if j >= classes {
                            0.0
                        } else if j == c {
                            1.0 - 1.0 / classes as f64
                        } else {
                            -1.0 / classes as f64
                        };
                        v / norm
                    })
                    .collect()
            })
            .collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(0x9e37_79b9_7f4a_7c15);
        (0..classes)
            .map(|_| {
                let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                let n = v.iter().map(|x: &f64| x * x).sum::<f64>().sqrt();
                v.into_iter().map(|x| x / n).collect()
            })
            .collect()
    }
}

/// Balanced isotropic Gaussian blobs, class-major order.
pub fn gen_blobs(params: &BlobSpec) -> Result<Dataset> {
    if params.classes < 2 || params.per_class == 0 || params.dim == 0 {
        return Err(Error::InvalidInput(format!(
            "blobs need classes >= 2, per_class >= 1, dim >= 1; got {params:?}"
        )));
    }
    if !(params.spread >= 0.0 && params.radius.is_finite()) {
        return Err(Error::InvalidInput(
            "spread must be >= 0 and radius finite".into(),
        ));
    }
    let dirs = blob_directions(params.classes, params.dim);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let n = params.classes * params.per_class;
    let mut data = Vec::with_capacity(n * params.dim);
    let mut labels = Vec::with_capacity(n);
    for (c, dir) in dirs.iter().enumerate() {
        for _ in 0..params.per_class {
            for &u in dir {
                let noise: f64 = StandardNormal.sample(&mut rng);
                data.push(params.radius * u + params.spread * noise);
            }
            labels.push(c);
        }
    }
    Dataset::new(
        Tensor::new(n, params.dim, data)?,
        LabelVector::new(labels, params.classes)?,
    )
}

fn read_u32(bytes: &[u8], offset: usize, what: &str, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| {
            Error::format(
                format!("{} byte {offset}", path.display()),
                format!("truncated while reading {what}"),
            )
        })
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads an IDX image/label pair. Pixels are scaled to `[0, 1]` and each
/// image is flattened to one row. The class count is the largest label
/// plus one, and at least 2.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = read_file(images_path)?;
    let labels = read_file(labels_path)?;

    let magic = read_u32(&images, 0, "magic number", images_path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::format(
            format!("{} byte 0", images_path.display()),
            format!("bad image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        ));
    }
    let count = read_u32(&images, 4, "image count", images_path)? as usize;
    let rows = read_u32(&images, 8, "row count", images_path)? as usize;
    let cols = read_u32(&images, 12, "column count", images_path)? as usize;
    let dim = rows * cols;
    let expected = 16 + count * dim;
    if images.len() < expected {
        return Err(Error::format(
            format!("{} byte {}", images_path.display(), images.len()),
            format!("truncated pixel data, expected {expected} bytes"),
        ));
    }

    let magic = read_u32(&labels, 0, "magic number", labels_path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::format(
            format!("{} byte 0", labels_path.display()),
            format!("bad label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        ));
    }
    let label_count = read_u32(&labels, 4, "label count", labels_path)? as usize;
    if label_count != count {
        return Err(Error::format(
            format!("{} byte 4", labels_path.display()),
            format!("{label_count} labels for {count} images"),
        ));
    }
    if labels.len() < 8 + count {
        return Err(Error::format(
            format!("{} byte {}", labels_path.display(), labels.len()),
            format!("truncated label data, expected {} bytes", 8 + count),
        ));
    }

    let features: Vec<f64> = images[16..expected]
        .iter()
        .map(|&b| b as f64 / 255.0)
        .collect();
    let labels: Vec<usize> = labels[8..8 + count].iter().map(|&b| b as usize).collect();
    let classes = labels.iter().max().map_or(2, |&m| (m + 1).max(2));
    Dataset::new(
        Tensor::new(count, dim, features)?,
        LabelVector::new(labels, classes)?,
    )
}

/// Writes an IDX pair. Features are mapped back to bytes with
/// `round(255 * v)` after clamping to `[0, 1]`; `rows * cols` must equal
/// the feature dimension.
pub fn write_idx(
    data: &Dataset,
    rows: usize,
    cols: usize,
    images_path: &Path,
    labels_path: &Path,
) -> Result<()> {
    if rows * cols != data.dim() {
        return Err(Error::dims(data.dim(), rows * cols));
    }
    if let Some(&l) = data.labels.iter().find(|&&l| l > 255) {
        return Err(Error::InvalidInput(format!(
            "label {l} does not fit in a byte"
        )));
    }
    let mut img = Vec::with_capacity(16 + data.features.data().len());
    img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    for v in [data.len(), rows, cols] {
        img.extend_from_slice(&(v as u32).to_be_bytes());
    }
    img.extend(
        data.features
            .data()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    let mut lab = Vec::with_capacity(8 + data.len());
    lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(data.len() as u32).to_be_bytes());
    lab.extend(data.labels.iter().map(|&l| l as u8));
    std::fs::write(images_path, img).map_err(|e| Error::io(images_path, e))?;
    std::fs::write(labels_path, lab).map_err(|e| Error::io(labels_path, e))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    Error::format(format!("{} line {line}", path.display()), e.to_string())
}

type LabelledRows = (Vec<usize>, Vec<Vec<f64>>, Vec<u64>);

/// Parses `label,<prefix>0,...,<prefix>{k-1}` rows.
fn read_labelled_rows(path: &Path, prefix: char) -> Result<LabelledRows> {
    let mut reader = csv_reader(path)?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let width = headers.len().saturating_sub(1);
    let header_ok = headers.get(0) == Some("label")
        && width > 0
        && headers
            .iter()
            .skip(1)
            .enumerate()
            .all(|(i, h)| h == format!("{prefix}{i}"));
    if !header_ok {
        return Err(Error::format(
            format!("{} line 1", path.display()),
            format!("expected header label,{prefix}0,...,{prefix}K"),
        ));
    }
    let (mut labels, mut rows, mut lines) = (Vec::new(), Vec::new(), Vec::new());
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let at = || format!("{} line {line}", path.display());
        let label = record[0]
            .parse::<usize>()
            .map_err(|e| Error::format(at(), format!("bad label {:?}: {e}", &record[0])))?;
        let row = record
            .iter()
            .skip(1)
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::format(at(), format!("bad number {f:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        labels.push(label);
        rows.push(row);
        lines.push(line);
    }
    if rows.is_empty() {
        return Err(Error::format(
            format!("{} line 2", path.display()),
            "no data rows",
        ));
    }
    Ok((labels, rows, lines))
}

/// Loads a `label,p0,...,p{C-1}` probability matrix. Rows whose sum is
/// within [`PROB_ROW_TOLERANCE`] of 1 are renormalized.
pub fn load_probmatrix_csv(path: &Path) -> Result<(ProbMatrix, LabelVector)> {
    let (labels, rows, lines) = read_labelled_rows(path, 'p')?;
    let classes = rows[0].len();
    if classes < 2 {
        return Err(Error::format(
            format!("{} line 1", path.display()),
            "need at least 2 classes",
        ));
    }
    let mut flat = Vec::with_capacity(rows.len() * classes);
    for ((row, &label), line) in rows.iter().zip(&labels).zip(&lines) {
        let at = format!("{} line {line}", path.display());
        if label >= classes {
            return Err(Error::format(
                at,
                format!("label {label} out of range for {classes} classes"),
            ));
        }
        if row.iter().any(|&v| v < 0.0) {
            return Err(Error::format(at, "negative probability"));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > PROB_ROW_TOLERANCE {
            return Err(Error::format(at, format!("row sums to {sum}")));
        }
        flat.extend(row.iter().map(|v| v / sum));
    }
    let p = ProbMatrix::from_flat(flat, classes)?;
    Ok((p, LabelVector::new(labels, classes)?))
}

pub fn write_probmatrix_csv(path: &Path, p: &ProbMatrix, y: &LabelVector) -> Result<()> {
    let header =
        std::iter::once("label".to_string()).chain((0..p.classes()).map(|i| format!("p{i}")));
    write_labelled_rows(path, header, y, p.iter_rows())
}

/// Loads a `label,f0,...,f{d-1}` dataset. The class count is the largest
/// label plus one, at least 2, unless `classes` is given.
pub fn load_dataset_csv(path: &Path, classes: Option<usize>) -> Result<Dataset> {
    let (labels, rows, _) = read_labelled_rows(path, 'f')?;
    let d = rows[0].len();
    let inferred = labels.iter().max().map_or(2, |&m| (m + 1).max(2));
    let classes = classes.unwrap_or(inferred);
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Dataset::new(
        Tensor::new(labels.len(), d, flat)?,
        LabelVector::new(labels, classes)?,
    )
}

pub fn write_dataset_csv(path: &Path, data: &Dataset) -> Result<()> {
    let d = data.dim();
    let header = std::iter::once("label".to_string()).chain((0..d).map(|i| format!("f{i}")));
    write_labelled_rows(
        path,
        header,
        &data.labels,
        data.features.data().chunks_exact(d),
    )
}

fn write_labelled_rows<'a>(
    path: &Path,
    header: impl Iterator<Item = String>,
    labels: &LabelVector,
    rows: impl Iterator<Item = &'a [f64]>,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "{}", header.collect::<Vec<_>>().join(",")).map_err(io)?;
    for (row, label) in rows.zip(labels.iter()) {
        write!(w, "{label}").map_err(io)?;
        for v in row {
            // Shortest round-trip representation, always '.' decimal.
            write!(w, ",{v:?}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// One epoch's shuffled partition of `[0, n)` into mini-batches.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    pub order: Vec<usize>,
    pub batch_size: usize,
}

impl BatchPlan {
    pub fn shuffled<R: Rng + ?Sized>(n: usize, batch_size: usize, rng: &mut R) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        Ok(BatchPlan { order, batch_size })
    }

    /// Batches in order; the last may be short.
    pub fn batches(&self) -> std::slice::Chunks<'_, usize> {
        self.order.chunks(self.batch_size)
    }

    pub fn num_batches(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }
}

/// For every class, `class_batch_size` sample indices carrying that label.
/// Sampling is without replacement when the class has enough samples and
/// with replacement otherwise.
pub fn stratified_batches<R: Rng + ?Sized>(
    by_class: &[Vec<usize>],
    class_batch_size: usize,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    by_class
        .iter()
        .enumerate()
        .map(|(c, members)| {
            if members.is_empty() {
                return Err(Error::EmptyClass(c));
            }
            if members.len() >= class_batch_size {
                Ok(members
                    .choose_multiple(rng, class_batch_size)
                    .copied()
                    .collect())
            } else {
                Ok((0..class_batch_size)
                    .map(|_| members[rng.random_range(0..members.len())])
                    .collect())
            }
        })
        .collect()
}
