//! Independent reference implementations used by the integration and
//! acceptance tests. Nothing here calls into the code paths it checks.

#![allow(dead_code)]

use elda::features::GrayImage;
use elda::{BackgroundModel, FeatureVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Brute-force HOG: every (cell, bin) sums votes from every pixel using
/// triangular kernels in cell position and in (cyclic) orientation.
pub fn hog_oracle(patch: &GrayImage) -> Vec<f64> {
    const N: i64 = 64;
    const C: usize = 8;
    const B: usize = 9;
    let px = |x: i64, y: i64| patch.get(x.clamp(0, N - 1) as usize, y.clamp(0, N - 1) as usize);

    let mut mag = vec![0.0; 64 * 64];
    let mut ori = vec![0.0; 64 * 64];
    for y in 0..N {
        for x in 0..N {
            let gx = px(x + 1, y) - px(x - 1, y);
            let gy = px(x, y + 1) - px(x, y - 1);
            let i = (y * N + x) as usize;
            mag[i] = (gx * gx + gy * gy).sqrt();
            let mut deg = gy.atan2(gx).to_degrees();
            while deg < 0.0 {
                deg += 180.0;
            }
            while deg >= 180.0 {
                deg -= 180.0;
            }
            ori[i] = deg;
        }
    }

    let mut hist = vec![[0.0f64; B]; C * C];
    for cy in 0..C {
        for cx in 0..C {
            for y in 0..N {
                let py = (y as f64 + 0.5) / 8.0 - 0.5;
                let wy = (1.0 - (py - cy as f64).abs()).max(0.0);
                if wy == 0.0 {
                    continue;
                }
                for x in 0..N {
                    let pxc = (x as f64 + 0.5) / 8.0 - 0.5;
                    let wx = (1.0 - (pxc - cx as f64).abs()).max(0.0);
                    if wx == 0.0 {
                        continue;
                    }
                    let i = (y * N + x) as usize;
                    let t = ori[i] / 20.0;
                    for b in 0..B {
                        let mut d = (t - b as f64).abs();
                        d = d.min(B as f64 - d);
                        let wb = (1.0 - d).max(0.0);
                        hist[cy * C + cx][b] += mag[i] * wx * wy * wb;
                    }
                }
            }
        }
    }

    let block_norm = |by: i64, bx: i64| -> f64 {
        let by = by.clamp(0, 6) as usize;
        let bx = bx.clamp(0, 6) as usize;
        let mut s = 0.0;
        for (yy, xx) in [(by, bx), (by, bx + 1), (by + 1, bx), (by + 1, bx + 1)] {
            for v in hist[yy * C + xx] {
                s += v * v;
            }
        }
        s.sqrt()
    };

    let mut out = Vec::with_capacity(2304);
    for cy in 0..C as i64 {
        for cx in 0..C as i64 {
            for (oy, ox) in [(-1, -1), (-1, 0), (0, -1), (0, 0)] {
                let n = block_norm(cy + oy, cx + ox);
                for b in 0..B {
                    let h = hist[cy as usize * C + cx as usize][b];
                    out.push(if n < 1e-12 { 0.0 } else { (h / n).min(0.2) });
                }
            }
        }
    }
    out
}

/// Gaussian elimination with partial pivoting on a dense row-major matrix.
pub fn dense_solve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut row = a[i * n..(i + 1) * n].to_vec();
            row.push(b[i]);
            row
        })
        .collect();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| m[i][col].abs().partial_cmp(&m[j][col].abs()).unwrap())
            .unwrap();
        m.swap(col, piv);
        for r in col + 1..n {
            let f = m[r][col] / m[col][col];
            if f != 0.0 {
                for c in col..=n {
                    m[r][c] -= f * m[col][c];
                }
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = m[i][n];
        for j in i + 1..n {
            s -= m[i][j] * x[j];
        }
        x[i] = s / m[i][i];
    }
    x
}

pub fn matvec(a: &[f64], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|i| {
            let mut s = 0.0;
            for j in 0..n {
                s += a[i * n + j] * x[j];
            }
            s
        })
        .collect()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn naive_dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    num.sqrt() / norm(b).max(f64::MIN_POSITIVE)
}

/// Random symmetric positive semi-definite matrix `G·Gᵀ / k` plus `shift·I`,
/// with `G` of size `d × k`. `k < d` makes it singular when `shift = 0`.
pub fn random_spd(rng: &mut ChaCha8Rng, d: usize, k: usize, shift: f64) -> Vec<f64> {
    let g: Vec<f64> = (0..d * k).map(|_| StandardNormal.sample(rng)).collect();
    let mut a = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = 0.0;
            for t in 0..k {
                s += g[i * k + t] * g[j * k + t];
            }
            s /= k as f64;
            if i == j {
                s += shift;
            }
            a[i * d + j] = s;
            a[j * d + i] = s;
        }
    }
    a
}

pub fn random_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

pub fn random_features(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<FeatureVector> {
    (0..n)
        .map(|_| {
            FeatureVector::new(
                (0..d)
                    .map(|j| {
                        let z: f64 = StandardNormal.sample(rng);
                        j as f64 * 0.25 + z * (0.5 + 0.1 * j as f64)
                    })
                    .collect(),
            )
            .unwrap()
        })
        .collect()
}

pub fn model_with(rng: &mut ChaCha8Rng, d: usize, k: usize, shift: f64) -> BackgroundModel {
    let cov = random_spd(rng, d, k, shift);
    let mean = random_vec(rng, d);
    BackgroundModel::from_parts(d, 1000, mean, cov).unwrap()
}

/// Two-pass textbook population covariance.
pub fn two_pass_cov(d: usize, xs: &[FeatureVector]) -> (Vec<f64>, Vec<f64>) {
    let n = xs.len() as f64;
    let mut mean = vec![0.0; d];
    for x in xs {
        for j in 0..d {
            mean[j] += x.as_slice()[j];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut cov = vec![0.0; d * d];
    for x in xs {
        let x = x.as_slice();
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] += (x[i] - mean[i]) * (x[j] - mean[j]);
            }
        }
    }
    cov.iter_mut().for_each(|c| *c /= n);
    (mean, cov)
}

/// Integer lattice points in the closed disc of integer radius `r`, counted
/// column by column with an integer square root.
pub fn lattice_points_in_disc(r: i64) -> usize {
    let isqrt = |v: i64| {
        let mut s = (v as f64).sqrt() as i64;
        while s * s > v {
            s -= 1;
        }
        while (s + 1) * (s + 1) <= v {
            s += 1;
        }
        s
    };
    (-r..=r).map(|x| (2 * isqrt(r * r - x * x) + 1) as usize).sum()
}

/// Textured grayscale patch with 8-bit dyadic intensities.
pub fn random_patch(rng: &mut ChaCha8Rng) -> GrayImage {
    GrayImage::from_fn(64, 64, |_, _| rng.random_range(8..200) as f64 / 256.0).unwrap()
}

/// Frames of i.i.d. clamped Gaussian noise for offline background harvesting.
pub fn noise_images(seed: u64, count: usize, w: usize, h: usize) -> Vec<GrayImage> {
    let mut r = rng(seed);
    (0..count)
        .map(|_| {
            GrayImage::from_fn(w, h, |_, _| {
                let z: f64 = StandardNormal.sample(&mut r);
                (0.5 + 0.15 * z).clamp(0.0, 1.0)
            })
            .unwrap()
        })
        .collect()
}
