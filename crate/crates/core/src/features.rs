//! Grayscale frames, patch resampling and the fixed-layout HOG descriptor.
//!
//! A descriptor covers a 64×64 patch as an 8×8 grid of 8×8-pixel cells. Each
//! cell histogram (9 contrast-insensitive orientation bins) is emitted four
//! times, once normalized by each of the 2×2 blocks that contain the cell, so
//! the descriptor has 8·8·4·9 = 2304 values.

use std::f64::consts::PI;

use crate::error::{EldaError, Result};
use crate::tracker::BoundingBox;

/// Side of the square patch every sample is resampled to.
pub const PATCH_SIZE: usize = 64;
/// Cell side in pixels.
pub const CELL_SIZE: usize = 8;
/// Cells per patch side.
pub const CELLS: usize = PATCH_SIZE / CELL_SIZE;
/// Orientation bins over [0°, 180°).
pub const ORIENTATIONS: usize = 9;
/// Normalizations emitted per cell.
pub const NORMS_PER_CELL: usize = 4;
/// Length of every HOG descriptor.
pub const HOG_DIM: usize = CELLS * CELLS * NORMS_PER_CELL * ORIENTATIONS;

/// Normalized values are clipped at this level.
pub const HOG_CLIP: f64 = 0.2;
/// Blocks with an L2 norm below this produce zeros.
pub const HOG_NORM_FLOOR: f64 = 1e-12;

/// Row-major single-channel image with intensities in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(EldaError::invalid(format!(
                "image must be non-empty, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(EldaError::invalid(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    /// Pixel lookup with edge replication for out-of-range coordinates.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.get(x, y)
    }

    /// Bilinear sample at continuous pixel coordinates (pixel `i` sits at `i`).
    #[inline]
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let top = self.get(x0, y0) * (1.0 - fx) + self.get(x1, y0) * fx;
        let bottom = self.get(x0, y1) * (1.0 - fx) + self.get(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Quantizes to 8 bits.
    pub fn to_luma8(&self) -> image::GrayImage {
        let bytes = self
            .pixels
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        image::GrayImage::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("buffer length matches dimensions")
    }

    pub fn from_luma8(img: &image::GrayImage) -> Result<Self> {
        let pixels = img.as_raw().iter().map(|&v| v as f64 / 255.0).collect();
        Self::new(img.width() as usize, img.height() as usize, pixels)
    }
}

/// A HOG descriptor, or any fixed-length non-negative real feature.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(EldaError::invalid("feature vector must be non-empty"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(EldaError::invalid(format!(
                "feature component {i} is not finite ({})",
                values[i]
            )));
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for FeatureVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// ITU-R 601 luma of an RGB triple.
#[inline]
pub fn luminance(r: f64, g: f64, b: f64) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}

/// Converts an 8-bit RGB image to [0, 1] luminance.
pub fn to_gray(rgb: &image::RgbImage) -> Result<GrayImage> {
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    if w == 0 || h == 0 {
        return Err(EldaError::invalid("empty RGB image"));
    }
    let pixels = rgb
        .pixels()
        .map(|p| luminance(p[0] as f64, p[1] as f64, p[2] as f64) / 255.0)
        .collect();
    GrayImage::new(w, h, pixels)
}

/// Converts interleaved unit-range RGB triples to luminance.
pub fn to_gray_unit(width: usize, height: usize, rgb: &[[f64; 3]]) -> Result<GrayImage> {
    if rgb.is_empty() {
        return Err(EldaError::invalid("empty RGB image"));
    }
    GrayImage::new(
        width,
        height,
        rgb.iter().map(|p| luminance(p[0], p[1], p[2])).collect(),
    )
}

/// Resamples `bbox` of `frame` to a `PATCH_SIZE`×`PATCH_SIZE` patch.
pub fn extract_patch(frame: &GrayImage, bbox: &BoundingBox) -> Result<GrayImage> {
    extract_patch_sized(frame, bbox, PATCH_SIZE)
}

/// Resamples `bbox` to `size`×`size` by bilinear interpolation. Output pixel
/// centres map onto the box so that an axis-aligned box of exactly `size`
/// pixels at integer coordinates is copied verbatim. Samples outside the frame
/// replicate its border.
pub fn extract_patch_sized(frame: &GrayImage, bbox: &BoundingBox, size: usize) -> Result<GrayImage> {
    if !(bbox.w >= 1.0 && bbox.h >= 1.0) || !bbox.x.is_finite() || !bbox.y.is_finite() {
        return Err(EldaError::invalid(format!("degenerate box {bbox:?}")));
    }
    if size == 0 {
        return Err(EldaError::invalid("patch size must be positive"));
    }
    let sx = bbox.w / size as f64;
    let sy = bbox.h / size as f64;
    // Separable: source taps and weights depend only on u (columns) or v (rows).
    let xs: Vec<_> = (0..size)
        .map(|u| taps(bbox.x + (u as f64 + 0.5) * sx - 0.5, frame.width()))
        .collect();
    let mut pixels = Vec::with_capacity(size * size);
    for v in 0..size {
        let (y0, y1, fy) = taps(bbox.y + (v as f64 + 0.5) * sy - 0.5, frame.height());
        let r0 = &frame.pixels[y0 * frame.width..][..frame.width];
        let r1 = &frame.pixels[y1 * frame.width..][..frame.width];
        for &(x0, x1, fx) in &xs {
            let top = r0[x0] * (1.0 - fx) + r0[x1] * fx;
            let bottom = r1[x0] * (1.0 - fx) + r1[x1] * fx;
            pixels.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    GrayImage::new(size, size, pixels)
}

/// Bilinear taps `(i0, i1, frac)` for coordinate `c` on an axis of length `n`,
/// matching [`GrayImage::sample_bilinear`].
#[inline]
fn taps(c: f64, n: usize) -> (usize, usize, f64) {
    let c = c.clamp(0.0, (n - 1) as f64);
    let i0 = c.floor() as usize;
    (i0, (i0 + 1).min(n - 1), c - i0 as f64)
}

/// Magnitude and folded orientation (radians in [0, π)) of the centred
/// difference gradient at every pixel, borders edge-replicated.
fn gradients(patch: &GrayImage) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = (patch.width(), patch.height());
    // One pixel of edge replication on every side.
    let pw = w + 2;
    let mut padded = vec![0.0; pw * (h + 2)];
    for y in 0..h + 2 {
        let sy = y.saturating_sub(1).min(h - 1);
        let src = &patch.pixels[sy * w..][..w];
        let dst = &mut padded[y * pw..][..pw];
        dst[1..=w].copy_from_slice(src);
        dst[0] = src[0];
        dst[w + 1] = src[w - 1];
    }
    let mut magnitude = Vec::with_capacity(w * h);
    let mut orientation = Vec::with_capacity(w * h);
    for y in 1..=h {
        let (up, row, down) = (&padded[(y - 1) * pw..][..pw], &padded[y * pw..][..pw], &padded[(y + 1) * pw..][..pw]);
        for x in 1..=w {
            let gx = row[x + 1] - row[x - 1];
            let gy = down[x] - up[x];
            magnitude.push((gx * gx + gy * gy).sqrt());
            orientation.push(fold_orientation(gy.atan2(gx)));
        }
    }
    (magnitude, orientation)
}

#[inline]
fn fold_orientation(theta: f64) -> f64 {
    let mut t = theta;
    if t < 0.0 {
        t += PI;
    }
    if t >= PI {
        t -= PI;
    }
    t
}

/// Cells receiving a pixel's vote along one axis, with their triangular
/// weights. Cell centres sit at integer cell coordinates; votes falling off the
/// grid are dropped.
fn axis_taps() -> [([usize; 2], [f64; 2], usize); PATCH_SIZE] {
    std::array::from_fn(|p| {
        let c = (p as f64 + 0.5) / CELL_SIZE as f64 - 0.5;
        let c0 = c.floor();
        let f = c - c0;
        let c0 = c0 as isize;
        let mut cells = [0; 2];
        let mut weights = [0.0; 2];
        let mut n = 0;
        for (cell, w) in [(c0, 1.0 - f), (c0 + 1, f)] {
            if (0..CELLS as isize).contains(&cell) && w != 0.0 {
                cells[n] = cell as usize;
                weights[n] = w;
                n += 1;
            }
        }
        (cells, weights, n)
    })
}

/// Per-cell orientation histograms, `[cy][cx][bin]` flattened.
fn cell_histograms(patch: &GrayImage) -> Vec<f64> {
    let (magnitude, orientation) = gradients(patch);
    let taps = axis_taps();
    let mut hist = vec![0.0; CELLS * CELLS * ORIENTATIONS];
    let bin_width = PI / ORIENTATIONS as f64;
    for (y, (ycells, yweights, ny)) in taps.iter().enumerate() {
        for (x, (xcells, xweights, nx)) in taps.iter().enumerate() {
            let m = magnitude[y * PATCH_SIZE + x];
            if m == 0.0 {
                continue;
            }
            let t = orientation[y * PATCH_SIZE + x] / bin_width;
            let b0 = t.floor();
            let fb = t - b0;
            let b0 = (b0 as usize) % ORIENTATIONS;
            let b1 = (b0 + 1) % ORIENTATIONS;
            for i in 0..*ny {
                let row = ycells[i] * CELLS;
                let wy = m * yweights[i];
                for j in 0..*nx {
                    let base = (row + xcells[j]) * ORIENTATIONS;
                    let w = wy * xweights[j];
                    hist[base + b0] += w * (1.0 - fb);
                    hist[base + b1] += w * fb;
                }
            }
        }
    }
    hist
}

/// Computes the 2304-d HOG descriptor of a 64×64 patch.
pub fn extract_hog(patch: &GrayImage) -> Result<FeatureVector> {
    if patch.width() != PATCH_SIZE || patch.height() != PATCH_SIZE {
        return Err(EldaError::invalid(format!(
            "HOG expects a {PATCH_SIZE}x{PATCH_SIZE} patch, got {}x{}",
            patch.width(),
            patch.height()
        )));
    }
    let hist = cell_histograms(patch);
    let cell_energy: Vec<f64> = hist
        .chunks_exact(ORIENTATIONS)
        .map(|h| h.iter().map(|v| v * v).sum())
        .collect();

    // Block (by, bx) covers cells (by..by+2, bx..bx+2).
    const BLOCKS: usize = CELLS - 1;
    let mut block_norm = [0.0; BLOCKS * BLOCKS];
    for by in 0..BLOCKS {
        for bx in 0..BLOCKS {
            let e = cell_energy[by * CELLS + bx]
                + cell_energy[by * CELLS + bx + 1]
                + cell_energy[(by + 1) * CELLS + bx]
                + cell_energy[(by + 1) * CELLS + bx + 1];
            block_norm[by * BLOCKS + bx] = e.sqrt();
        }
    }

    let clamp_block = |c: isize| c.clamp(0, BLOCKS as isize - 1) as usize;
    let mut out = Vec::with_capacity(HOG_DIM);
    for cy in 0..CELLS as isize {
        for cx in 0..CELLS as isize {
            let cell = &hist[(cy as usize * CELLS + cx as usize) * ORIENTATIONS..][..ORIENTATIONS];
            // NW, NE, SW, SE
            for (oy, ox) in [(-1, -1), (-1, 0), (0, -1), (0, 0)] {
                let norm = block_norm[clamp_block(cy + oy) * BLOCKS + clamp_block(cx + ox)];
                if norm < HOG_NORM_FLOOR {
                    out.extend(std::iter::repeat_n(0.0, ORIENTATIONS));
                } else {
                    out.extend(cell.iter().map(|v| (v / norm).min(HOG_CLIP)));
                }
            }
        }
    }
    debug_assert_eq!(out.len(), HOG_DIM);
    Ok(FeatureVector(out))
}

/// Patch extraction followed by HOG encoding.
pub fn encode_box(frame: &GrayImage, bbox: &BoundingBox) -> Result<FeatureVector> {
    extract_hog(&extract_patch(frame, bbox)?)
}
