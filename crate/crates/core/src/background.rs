//! Negative-sample statistics: population mean and covariance with an exact
//! pairwise merge, offline harvesting from natural images, and a portable
//! binary file format.

use std::io::Write;
use std::path::{Path, PathBuf};

use faer::linalg::matmul::triangular::BlockStructure;
use faer::{Accum, Mat, MatMut, MatRef, Par};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{EldaError, Result};
use crate::features::{self, FeatureVector, GrayImage, HOG_DIM, PATCH_SIZE};
use crate::tracker::BoundingBox;

/// Magic bytes opening a model file.
pub const MODEL_MAGIC: [u8; 8] = *b"ELDABG1\0";
pub const MODEL_VERSION: u32 = 1;

/// Images with either side below this are skipped during offline harvesting.
pub const MIN_HARVEST_SIDE: usize = 16;

/// Offline features are reduced in chunks of this size and merged.
const HARVEST_CHUNK: usize = 1024;

/// Pooled negative statistics `(μ, Σ, n)` with the population covariance
/// (divisor `n`). `cov` is row-major `dim × dim` and exactly symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundModel {
    dim: usize,
    count: u64,
    mean: Vec<f64>,
    cov: Vec<f64>,
}

impl BackgroundModel {
    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            count: 0,
            mean: vec![0.0; dim],
            cov: vec![0.0; dim * dim],
        }
    }

    /// Builds a model from raw parts, checking shapes and symmetry.
    pub fn from_parts(dim: usize, count: u64, mean: Vec<f64>, cov: Vec<f64>) -> Result<Self> {
        if mean.len() != dim || cov.len() != dim * dim {
            return Err(EldaError::invalid(format!(
                "dimension {dim} needs {dim} means and {} covariance entries, got {} and {}",
                dim * dim,
                mean.len(),
                cov.len()
            )));
        }
        for i in 0..dim {
            for j in i + 1..dim {
                if cov[i * dim + j] != cov[j * dim + i] {
                    return Err(EldaError::invalid(format!(
                        "covariance not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self {
            dim,
            count,
            mean,
            cov,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Row-major covariance.
    pub fn cov(&self) -> &[f64] {
        &self.cov
    }

    pub fn cov_at(&self, i: usize, j: usize) -> f64 {
        self.cov[i * self.dim + j]
    }

    pub fn cov_view(&self) -> MatRef<'_, f64> {
        MatRef::from_row_major_slice(&self.cov, self.dim, self.dim)
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.cov_at(i, i)).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Same statistics reported with a different sample count. Used to give an
    /// online batch more (or less) mass than its literal size in a merge.
    pub fn with_count(mut self, count: u64) -> Self {
        if count == 0 {
            return Self::empty(self.dim);
        }
        self.count = count;
        self
    }
}

/// Mean and population covariance of `samples`, all of dimension `dim`.
pub fn batch_stats(dim: usize, samples: &[FeatureVector]) -> Result<BackgroundModel> {
    if let Some((i, s)) = samples.iter().enumerate().find(|(_, s)| s.dim() != dim) {
        return Err(EldaError::invalid(format!(
            "sample {i} has dimension {}, expected {dim}",
            s.dim()
        )));
    }
    let n = samples.len();
    if n == 0 {
        return Ok(BackgroundModel::empty(dim));
    }

    let mut mean = vec![0.0; dim];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(s.as_slice()) {
            *m += v;
        }
    }
    let inv_n = 1.0 / n as f64;
    mean.iter_mut().for_each(|m| *m *= inv_n);

    let centered = Mat::<f64>::from_fn(n, dim, |i, j| samples[i].as_slice()[j] - mean[j]);
    // Only the lower triangle is formed; column j of it is row j of the
    // upper triangle in row-major order.
    let mut gram = Mat::<f64>::zeros(dim, dim);
    faer::linalg::matmul::triangular::matmul(
        gram.as_mut(),
        BlockStructure::TriangularLower,
        Accum::Replace,
        centered.transpose(),
        BlockStructure::Rectangular,
        centered.as_ref(),
        BlockStructure::Rectangular,
        inv_n,
        Par::Seq,
    );
    let mut cov = vec![0.0; dim * dim];
    for (j, row) in cov.chunks_exact_mut(dim).enumerate() {
        row[j..].copy_from_slice(&gram.col_as_slice(j)[j..]);
    }
    mirror_upper(&mut cov, dim);
    Ok(BackgroundModel {
        dim,
        count: n as u64,
        mean,
        cov,
    })
}

fn mirror_upper(cov: &mut [f64], dim: usize) {
    const TILE: usize = 64;
    for i0 in (0..dim).step_by(TILE) {
        for j0 in (i0..dim).step_by(TILE) {
            for i in i0..(i0 + TILE).min(dim) {
                for j in j0.max(i + 1)..(j0 + TILE).min(dim) {
                    cov[j * dim + i] = cov[i * dim + j];
                }
            }
        }
    }
}

/// Pools two models as if their samples had been concatenated.
///
/// With `wa = a.n/n`, `wb = b.n/n` and `δ = a.μ − b.μ`:
/// `μ = wa·a.μ + wb·b.μ` and `Σ = wa·a.Σ + wb·b.Σ + wa·wb·δδᵀ`, which equals
/// `[a.n(a.Σ + a.μa.μᵀ) + b.n(b.Σ + b.μb.μᵀ)]/n − μμᵀ` without its cancellation.
pub fn merge(a: &BackgroundModel, b: &BackgroundModel) -> Result<BackgroundModel> {
    if a.dim != b.dim {
        return Err(EldaError::invalid(format!(
            "cannot merge models of dimension {} and {}",
            a.dim, b.dim
        )));
    }
    if b.count == 0 {
        return Ok(a.clone());
    }
    if a.count == 0 {
        return Ok(b.clone());
    }
    let dim = a.dim;
    let count = a
        .count
        .checked_add(b.count)
        .ok_or_else(|| EldaError::invalid("sample count overflow"))?;
    let n = count as f64;
    let wa = a.count as f64 / n;
    let wb = b.count as f64 / n;
    let wab = wa * wb;

    let mean: Vec<f64> = a
        .mean
        .iter()
        .zip(&b.mean)
        .map(|(ma, mb)| wa * ma + wb * mb)
        .collect();
    let delta: Vec<f64> = a.mean.iter().zip(&b.mean).map(|(ma, mb)| ma - mb).collect();

    // Every term is symmetric in (i, j) bit for bit, so the result is too.
    let mut cov = vec![0.0; dim * dim];
    cov.chunks_exact_mut(dim).enumerate().for_each(|(i, row)| {
        let ra = &a.cov[i * dim..(i + 1) * dim];
        let rb = &b.cov[i * dim..(i + 1) * dim];
        let di = delta[i];
        for j in 0..dim {
            row[j] = wa * ra[j] + wb * rb[j] + wab * (di * delta[j]);
        }
    });
    Ok(BackgroundModel {
        dim,
        count,
        mean,
        cov,
    })
}

/// `merge(a, batch_stats(samples))` with the batch counted as `count` samples
/// instead of `samples.len()`, computed in one pass without materializing the
/// batch covariance.
pub fn merge_samples(a: &BackgroundModel, samples: &[FeatureVector], count: u64) -> Result<BackgroundModel> {
    let dim = a.dim;
    if let Some((i, s)) = samples.iter().enumerate().find(|(_, s)| s.dim() != dim) {
        return Err(EldaError::invalid(format!(
            "sample {i} has dimension {}, expected {dim}",
            s.dim()
        )));
    }
    if samples.is_empty() || count == 0 {
        return Ok(a.clone());
    }
    if a.count == 0 {
        return Ok(batch_stats(dim, samples)?.with_count(count));
    }
    let total = a
        .count
        .checked_add(count)
        .ok_or_else(|| EldaError::invalid("sample count overflow"))?;
    let n = total as f64;
    let wa = a.count as f64 / n;
    let wb = count as f64 / n;
    let wab = wa * wb;

    let ns = samples.len();
    let mut mb = vec![0.0; dim];
    for s in samples {
        for (m, v) in mb.iter_mut().zip(s.as_slice()) {
            *m += v;
        }
    }
    mb.iter_mut().for_each(|m| *m /= ns as f64);
    let mean: Vec<f64> = a.mean.iter().zip(&mb).map(|(ma, m)| wa * ma + wb * m).collect();
    let delta: Vec<f64> = a.mean.iter().zip(&mb).map(|(ma, m)| ma - m).collect();

    let mut cov = vec![0.0; dim * dim];
    for (i, row) in cov.chunks_exact_mut(dim).enumerate() {
        let ra = &a.cov[i * dim..(i + 1) * dim];
        let di = delta[i];
        for j in 0..dim {
            row[j] = wa * ra[j] + wab * (di * delta[j]);
        }
    }
    // The buffer is symmetric, so its column-major view is the same matrix;
    // the lower triangle of that view is the row-major upper triangle.
    let centered = Mat::<f64>::from_fn(ns, dim, |i, j| samples[i].as_slice()[j] - mb[j]);
    faer::linalg::matmul::triangular::matmul(
        MatMut::from_column_major_slice_mut(&mut cov, dim, dim),
        BlockStructure::TriangularLower,
        Accum::Add,
        centered.transpose(),
        BlockStructure::Rectangular,
        centered.as_ref(),
        BlockStructure::Rectangular,
        wb / ns as f64,
        Par::Seq,
    );
    mirror_upper(&mut cov, dim);
    Ok(BackgroundModel {
        dim,
        count: total,
        mean,
        cov,
    })
}

/// Draws `num_patches` square boxes: image chosen uniformly, side uniform in
/// `[min(64, s), s]` with `s` the shorter image side, position uniform.
/// Returns `(image index, box)` in draw order.
pub fn plan_offline_patches(
    image_sizes: &[(usize, usize)],
    num_patches: usize,
    rng_seed: u64,
) -> Result<Vec<(usize, BoundingBox)>> {
    let usable: Vec<usize> = (0..image_sizes.len())
        .filter(|&i| {
            let (w, h) = image_sizes[i];
            w >= MIN_HARVEST_SIDE && h >= MIN_HARVEST_SIDE
        })
        .collect();
    if usable.is_empty() {
        return Err(EldaError::invalid("no usable images for offline harvesting"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut plan = Vec::with_capacity(num_patches);
    for _ in 0..num_patches {
        let img = usable[rng.random_range(0..usable.len())];
        let (w, h) = image_sizes[img];
        let short = w.min(h);
        let side = rng.random_range(PATCH_SIZE.min(short)..=short);
        let x = rng.random_range(0..=w - side);
        let y = rng.random_range(0..=h - side);
        let bbox = BoundingBox::new(x as f64, y as f64, side as f64, side as f64)?;
        plan.push((img, bbox));
    }
    Ok(plan)
}

/// Offline background model from in-memory images.
pub fn build_offline_from_images(
    images: &[GrayImage],
    num_patches: usize,
    rng_seed: u64,
) -> Result<BackgroundModel> {
    if num_patches < 2 {
        return Err(EldaError::invalid("num_patches must be at least 2"));
    }
    let sizes: Vec<_> = images.iter().map(|i| (i.width(), i.height())).collect();
    warn_small(&sizes, |i| format!("image #{i}"));
    let plan = plan_offline_patches(&sizes, num_patches, rng_seed)?;
    harvest(&plan, images.len(), |i| Ok(std::borrow::Cow::Borrowed(&images[i])))
}

/// Offline background model from image files. Images are decoded one at a
/// time, in path order, so memory stays bounded by a single image plus one
/// chunk of features.
pub fn build_offline<P: AsRef<Path>>(
    image_paths: &[P],
    num_patches: usize,
    rng_seed: u64,
) -> Result<BackgroundModel> {
    if image_paths.is_empty() {
        return Err(EldaError::invalid("no images found"));
    }
    if num_patches < 2 {
        return Err(EldaError::invalid("num_patches must be at least 2"));
    }
    let mut sizes = Vec::with_capacity(image_paths.len());
    for p in image_paths {
        let p = p.as_ref();
        let (w, h) = image::image_dimensions(p).map_err(|e| image_error(p, e))?;
        sizes.push((w as usize, h as usize));
    }
    warn_small(&sizes, |i| image_paths[i].as_ref().display().to_string());
    let plan = plan_offline_patches(&sizes, num_patches, rng_seed)?;
    harvest(&plan, image_paths.len(), |i| {
        load_gray(image_paths[i].as_ref()).map(std::borrow::Cow::Owned)
    })
}

fn warn_small(sizes: &[(usize, usize)], name: impl Fn(usize) -> String) {
    for (i, &(w, h)) in sizes.iter().enumerate() {
        if w < MIN_HARVEST_SIDE || h < MIN_HARVEST_SIDE {
            log::warn!("skipping {} ({w}x{h}): smaller than {MIN_HARVEST_SIDE}x{MIN_HARVEST_SIDE}", name(i));
        }
    }
}

/// Encodes the planned patches image by image (ascending index, draw order
/// within an image) and reduces them in fixed-size chunks.
fn harvest<'a>(
    plan: &[(usize, BoundingBox)],
    num_images: usize,
    load: impl Fn(usize) -> Result<std::borrow::Cow<'a, GrayImage>>,
) -> Result<BackgroundModel> {
    let mut by_image: Vec<Vec<BoundingBox>> = vec![Vec::new(); num_images];
    for (img, bbox) in plan {
        by_image[*img].push(*bbox);
    }
    let mut model = BackgroundModel::empty(HOG_DIM);
    let mut pending: Vec<FeatureVector> = Vec::with_capacity(HARVEST_CHUNK);
    for (img, boxes) in by_image.iter().enumerate() {
        if boxes.is_empty() {
            continue;
        }
        let frame = load(img)?;
        let mut start = 0;
        while start < boxes.len() {
            let take = (HARVEST_CHUNK - pending.len()).min(boxes.len() - start);
            let feats = boxes[start..start + take]
                .par_iter()
                .map(|b| features::encode_box(&frame, b))
                .collect::<Result<Vec<_>>>()?;
            pending.extend(feats);
            start += take;
            if pending.len() == HARVEST_CHUNK {
                model = merge(&model, &batch_stats(HOG_DIM, &pending)?)?;
                pending.clear();
            }
        }
    }
    if !pending.is_empty() {
        model = merge(&model, &batch_stats(HOG_DIM, &pending)?)?;
    }
    Ok(model)
}

fn image_error(path: &Path, e: image::ImageError) -> EldaError {
    match e {
        image::ImageError::IoError(source) => EldaError::io(path, source),
        other => EldaError::Image {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    }
}

/// Decodes an image file to [0, 1] luminance.
pub fn load_gray(path: &Path) -> Result<GrayImage> {
    let img = image::open(path).map_err(|e| image_error(path, e))?;
    features::to_gray(&img.to_rgb8()).map_err(|_| EldaError::Image {
        path: path.to_path_buf(),
        message: "empty image".into(),
    })
}

/// Serializes `m`: magic, then little-endian `version: u32`, `dim: u32`,
/// `count: u64`, `dim` f64 means and `dim²` row-major f64 covariances.
pub fn encode_model(m: &BackgroundModel) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + 8 * (m.dim + m.dim * m.dim));
    out.extend_from_slice(&MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(m.dim as u32).to_le_bytes());
    out.extend_from_slice(&m.count.to_le_bytes());
    for v in m.mean.iter().chain(&m.cov) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_model(bytes: &[u8]) -> Result<BackgroundModel> {
    const HEADER: usize = 8 + 4 + 4 + 8;
    if bytes.len() < HEADER {
        return Err(EldaError::Format(format!(
            "truncated header: {} of {HEADER} bytes",
            bytes.len()
        )));
    }
    if bytes[..8] != MODEL_MAGIC {
        return Err(EldaError::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&bytes[..8]),
            String::from_utf8_lossy(&MODEL_MAGIC)
        )));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u32_at(8);
    if version != MODEL_VERSION {
        return Err(EldaError::Format(format!(
            "unsupported version {version}, expected {MODEL_VERSION}"
        )));
    }
    let dim = u32_at(12) as usize;
    if dim == 0 {
        return Err(EldaError::Format("dimension 0".into()));
    }
    let count = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let expected = dim
        .checked_mul(dim)
        .and_then(|d2| d2.checked_add(dim))
        .and_then(|v| v.checked_mul(8))
        .and_then(|v| v.checked_add(HEADER))
        .ok_or_else(|| EldaError::Format(format!("dimension {dim} too large")))?;
    if bytes.len() != expected {
        return Err(EldaError::Format(format!(
            "dimension {dim} needs {expected} bytes, file has {}",
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes[HEADER..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let (mean, cov) = values.split_at(dim);
    BackgroundModel::from_parts(dim, count, mean.to_vec(), cov.to_vec())
        .map_err(|e| EldaError::Format(e.to_string()))
}

/// Writes atomically: the model goes to a sibling temp file which is then
/// renamed over `path`.
pub fn save_model(m: &BackgroundModel, path: &Path) -> Result<()> {
    let tmp: PathBuf = {
        let mut name = path.file_name().unwrap_or_default().to_os_string();
        name.push(".tmp");
        path.with_file_name(name)
    };
    let write = || -> std::io::Result<()> {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&encode_model(m))?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        EldaError::io(path, e)
    })
}

pub fn load_model(path: &Path) -> Result<BackgroundModel> {
    let bytes = std::fs::read(path).map_err(|e| EldaError::io(path, e))?;
    decode_model(&bytes)
}
