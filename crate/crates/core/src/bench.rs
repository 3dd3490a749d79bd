//! Evaluation: overlap, centre location error, success rate, the text formats
//! for ground truth and results, and a synthetic sequence generator with exact
//! ground truth.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{EldaError, Result};
use crate::features::GrayImage;
use crate::tracker::BoundingBox;

/// One tracked frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackResult {
    /// 1-based frame number.
    pub frame: usize,
    pub bbox: BoundingBox,
    /// Ensemble score of the selected candidate.
    pub score: f64,
}

impl TrackResult {
    pub fn center(&self) -> (f64, f64) {
        self.bbox.center()
    }
}

/// Intersection over union; touching or disjoint boxes give 0.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = (a.x + a.w).min(b.x + b.w) - a.x.max(b.x);
    let ih = (a.y + a.h).min(b.y + b.h) - a.y.max(b.y);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    // Areas from the same corner arithmetic as the intersection, so that
    // iou(a, a) is exactly 1.
    let extent = |r: &BoundingBox| ((r.x + r.w) - r.x) * ((r.y + r.h) - r.y);
    let inter = iw * ih;
    let union = extent(a) + extent(b) - inter;
    (inter / union).clamp(0.0, 1.0)
}

pub fn center_error(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    (ax - bx).hypot(ay - by)
}

fn check_lengths(results: &[BoundingBox], gt: &[BoundingBox]) -> Result<()> {
    if results.len() != gt.len() {
        return Err(EldaError::invalid(format!(
            "{} results but {} ground-truth boxes",
            results.len(),
            gt.len()
        )));
    }
    if results.is_empty() {
        return Err(EldaError::invalid("no frames to evaluate"));
    }
    Ok(())
}

/// Mean Euclidean distance between result and ground-truth centres.
pub fn cle(results: &[BoundingBox], gt: &[BoundingBox]) -> Result<f64> {
    check_lengths(results, gt)?;
    let total: f64 = results.iter().zip(gt).map(|(r, g)| center_error(r, g)).sum();
    Ok(total / results.len() as f64)
}

/// Fraction of frames with IoU strictly above `threshold`.
pub fn success_rate(results: &[BoundingBox], gt: &[BoundingBox], threshold: f64) -> Result<f64> {
    check_lengths(results, gt)?;
    let hits = results.iter().zip(gt).filter(|(r, g)| iou(r, g) > threshold).count();
    Ok(hits as f64 / results.len() as f64)
}

pub const DEFAULT_SUCCESS_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub cle: f64,
    pub sr: f64,
    pub per_frame_errors: Vec<f64>,
    pub per_frame_iou: Vec<f64>,
}

pub fn report(results: &[BoundingBox], gt: &[BoundingBox]) -> Result<Report> {
    Ok(Report {
        cle: cle(results, gt)?,
        sr: success_rate(results, gt, DEFAULT_SUCCESS_THRESHOLD)?,
        per_frame_errors: results.iter().zip(gt).map(|(r, g)| center_error(r, g)).collect(),
        per_frame_iou: results.iter().zip(gt).map(|(r, g)| iou(r, g)).collect(),
    })
}

impl Report {
    /// `cle,sr,frames` header plus one value row.
    pub fn summary_csv(&self) -> String {
        format!("cle,sr,frames\n{},{},{}\n", self.cle, self.sr, self.per_frame_errors.len())
    }

    /// `frame,center_error,iou`, one row per evaluated frame, numbered from `first_frame`.
    pub fn per_frame_csv(&self, first_frame: usize) -> String {
        let mut s = String::from("frame,center_error,iou\n");
        for (i, (e, o)) in self.per_frame_errors.iter().zip(&self.per_frame_iou).enumerate() {
            let _ = writeln!(s, "{},{},{}", first_frame + i, e, o);
        }
        s
    }
}

fn split_fields(line: &str) -> Vec<&str> {
    line.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|f| !f.is_empty())
        .collect()
}

fn parse_f64(field: &str, line: usize) -> Result<f64> {
    let v: f64 = field.parse().map_err(|_| EldaError::Parse {
        line,
        message: format!("not a number: {field:?}"),
    })?;
    if !v.is_finite() {
        return Err(EldaError::Parse {
            line,
            message: format!("not finite: {field:?}"),
        });
    }
    Ok(v)
}

fn parse_box(fields: &[&str], line: usize) -> Result<BoundingBox> {
    let v = fields
        .iter()
        .map(|f| parse_f64(f, line))
        .collect::<Result<Vec<_>>>()?;
    BoundingBox::new(v[0], v[1], v[2], v[3]).map_err(|e| EldaError::Parse {
        line,
        message: e.to_string(),
    })
}

fn is_skippable(line: &str) -> bool {
    let t = line.trim();
    t.is_empty() || t.starts_with('#')
}

/// Parses `x,y,w,h` lines (comma and/or whitespace separated). The `j`-th
/// box (1-based) belongs to frame `j`; blank lines are ignored.
pub fn parse_ground_truth(text: &str) -> Result<Vec<BoundingBox>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields = split_fields(line);
        if fields.len() != 4 {
            return Err(EldaError::Parse {
                line: i + 1,
                message: format!("expected 4 fields x,y,w,h, found {}", fields.len()),
            });
        }
        out.push(parse_box(&fields, i + 1)?);
    }
    Ok(out)
}

pub fn format_ground_truth(boxes: &[BoundingBox]) -> String {
    let mut s = String::new();
    for b in boxes {
        let _ = writeln!(s, "{},{},{},{}", b.x, b.y, b.w, b.h);
    }
    s
}

/// Result file: `frame_index,x,y,w,h,score` per frame and a `#` footer.
pub fn format_results(results: &[TrackResult]) -> String {
    let mut s = String::new();
    for r in results {
        let b = r.bbox;
        let _ = writeln!(s, "{},{},{},{},{},{}", r.frame, b.x, b.y, b.w, b.h, r.score);
    }
    let mean_score = if results.is_empty() {
        0.0
    } else {
        results.iter().map(|r| r.score).sum::<f64>() / results.len() as f64
    };
    let _ = writeln!(s, "# frames={} mean_score={}", results.len(), mean_score);
    s
}

/// Parses a result file. `#` lines are ignored. Six-field lines carry their
/// own frame index; four-field `x,y,w,h` lines are numbered by position, so a
/// ground-truth file also parses as a result file.
pub fn parse_results(text: &str) -> Result<Vec<TrackResult>> {
    let mut out = Vec::new();
    let mut position = 0;
    for (i, line) in text.lines().enumerate() {
        if is_skippable(line) {
            continue;
        }
        position += 1;
        let fields = split_fields(line);
        let r = match fields.len() {
            6 => {
                let frame: usize = fields[0].parse().map_err(|_| EldaError::Parse {
                    line: i + 1,
                    message: format!("bad frame index {:?}", fields[0]),
                })?;
                TrackResult {
                    frame,
                    bbox: parse_box(&fields[1..5], i + 1)?,
                    score: parse_f64(fields[5], i + 1)?,
                }
            }
            4 => TrackResult {
                frame: position,
                bbox: parse_box(&fields, i + 1)?,
                score: 0.0,
            },
            n => {
                return Err(EldaError::Parse {
                    line: i + 1,
                    message: format!("expected 6 fields frame,x,y,w,h,score (or 4), found {n}"),
                })
            }
        };
        out.push(r);
    }
    Ok(out)
}

/// Pairs results with ground truth by 1-based frame number.
pub fn align(results: &[TrackResult], gt: &[BoundingBox]) -> Result<(Vec<BoundingBox>, Vec<BoundingBox>)> {
    let mut rs = Vec::with_capacity(results.len());
    let mut gs = Vec::with_capacity(results.len());
    for r in results {
        let g = r
            .frame
            .checked_sub(1)
            .and_then(|i| gt.get(i))
            .ok_or_else(|| {
                EldaError::invalid(format!(
                    "result frame {} has no ground truth ({} boxes)",
                    r.frame,
                    gt.len()
                ))
            })?;
        rs.push(r.bbox);
        gs.push(*g);
    }
    Ok((rs, gs))
}

/// Object centre path.
#[derive(Debug, Clone, PartialEq)]
pub enum Trajectory {
    Static { center: (f64, f64) },
    Linear { start: (f64, f64), velocity: (f64, f64) },
    /// `c + a·sin(2πt/period + phase)` per axis.
    Lissajous {
        center: (f64, f64),
        amplitude: (f64, f64),
        period: (f64, f64),
        phase: (f64, f64),
    },
    Explicit(Vec<(f64, f64)>),
}

impl Trajectory {
    pub fn centers(&self, count: usize) -> Result<Vec<(f64, f64)>> {
        Ok(match self {
            Trajectory::Static { center } => vec![*center; count],
            Trajectory::Linear { start, velocity } => (0..count)
                .map(|t| (start.0 + velocity.0 * t as f64, start.1 + velocity.1 * t as f64))
                .collect(),
            Trajectory::Lissajous {
                center,
                amplitude,
                period,
                phase,
            } => {
                if !(period.0 > 0.0 && period.1 > 0.0) {
                    return Err(EldaError::invalid("Lissajous periods must be positive"));
                }
                (0..count)
                    .map(|t| {
                        let t = t as f64;
                        (
                            center.0 + amplitude.0 * (2.0 * PI * t / period.0 + phase.0).sin(),
                            center.1 + amplitude.1 * (2.0 * PI * t / period.1 + phase.1).sin(),
                        )
                    })
                    .collect()
            }
            Trajectory::Explicit(c) => {
                if c.len() != count {
                    return Err(EldaError::invalid(format!(
                        "explicit trajectory has {} centres, count is {count}",
                        c.len()
                    )));
                }
                c.clone()
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub texture_seed: u64,
    pub noise_seed: u64,
    pub trajectory: Trajectory,
    /// Standard deviation of the per-frame background noise.
    pub noise: f64,
    pub background_level: f64,
    pub frame_size: (usize, usize),
    pub object_size: (f64, f64),
    pub count: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            texture_seed: 1,
            noise_seed: 2,
            trajectory: Trajectory::Static { center: (160.0, 120.0) },
            noise: 0.02,
            background_level: 0.5,
            frame_size: (320, 240),
            object_size: (40.0, 40.0),
            count: 100,
        }
    }
}

/// A smooth random intensity field over the object's local coordinates.
#[derive(Debug, Clone)]
struct Texture {
    waves: Vec<(f64, f64, f64, f64)>,
    blobs: Vec<(f64, f64, f64, f64)>,
    size: (f64, f64),
}

impl Texture {
    fn new(seed: u64, size: (f64, f64)) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let waves = (0..4)
            .map(|_| {
                let angle = rng.random_range(0.0..PI);
                let freq = rng.random_range(0.15..0.45);
                (
                    freq * angle.cos(),
                    freq * angle.sin(),
                    rng.random_range(0.0..2.0 * PI),
                    rng.random_range(0.05..0.12),
                )
            })
            .collect();
        let blobs = (0..6)
            .map(|_| {
                (
                    rng.random_range(0.0..size.0),
                    rng.random_range(0.0..size.1),
                    rng.random_range(3.0..8.0),
                    rng.random_range(-0.35..0.35),
                )
            })
            .collect();
        Self { waves, blobs, size }
    }

    fn at(&self, u: f64, v: f64) -> f64 {
        let mut s = 0.5;
        for &(fu, fv, phase, amp) in &self.waves {
            s += amp * (fu * u + fv * v + phase).sin();
        }
        for &(bu, bv, r, amp) in &self.blobs {
            let d2 = (u - bu).powi(2) + (v - bv).powi(2);
            s += amp * (-d2 / (2.0 * r * r)).exp();
        }
        // Dark frame so the object outline is always visible.
        let edge = u.min(v).min(self.size.0 - u).min(self.size.1 - v);
        if edge < 2.0 {
            s = 0.1;
        }
        s.clamp(0.0, 1.0)
    }
}

/// Renders the sequence and its ground truth.
pub fn make_synthetic_sequence(spec: &SyntheticSpec) -> Result<(Vec<GrayImage>, Vec<BoundingBox>)> {
    let (fw, fh) = spec.frame_size;
    let (ow, oh) = spec.object_size;
    if fw == 0 || fh == 0 || !(ow >= 1.0 && oh >= 1.0) {
        return Err(EldaError::invalid("frame and object sizes must be positive"));
    }
    if !(spec.noise >= 0.0) {
        return Err(EldaError::invalid("noise level must be ≥ 0"));
    }
    let centers = spec.trajectory.centers(spec.count)?;
    let mut gt = Vec::with_capacity(spec.count);
    for (t, &(cx, cy)) in centers.iter().enumerate() {
        let b = BoundingBox::from_center(cx, cy, ow, oh)?;
        if b.x < 0.0 || b.y < 0.0 || b.x + b.w > fw as f64 || b.y + b.h > fh as f64 {
            return Err(EldaError::invalid(format!(
                "frame {}: object box {b:?} leaves the {fw}x{fh} frame",
                t + 1
            )));
        }
        gt.push(b);
    }

    let texture = Texture::new(spec.texture_seed, spec.object_size);
    let noise = Normal::new(0.0, spec.noise.max(0.0)).map_err(|e| EldaError::invalid(e.to_string()))?;
    let frames = gt
        .iter()
        .enumerate()
        .map(|(t, b)| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.noise_seed);
            rng.set_stream(t as u64);
            GrayImage::from_fn(fw, fh, |x, y| {
                let u = x as f64 + 0.5 - b.x;
                let v = y as f64 + 0.5 - b.y;
                // Draw for every pixel so the noise field does not depend on
                // where the object is.
                let n = if spec.noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                if (0.0..b.w).contains(&u) && (0.0..b.h).contains(&v) {
                    texture.at(u, v)
                } else {
                    (spec.background_level + n).clamp(0.0, 1.0)
                }
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((frames, gt))
}

/// Smooth closed path inside the frame whose per-frame speed never exceeds
/// `max_speed`.
pub fn bounded_speed_lissajous(
    frame_size: (usize, usize),
    object_size: (f64, f64),
    max_speed: f64,
    margin: f64,
) -> Trajectory {
    let (fw, fh) = (frame_size.0 as f64, frame_size.1 as f64);
    let ax = (fw - object_size.0) / 2.0 - margin;
    let ay = (fh - object_size.1) / 2.0 - margin;
    // Axis speeds peak at 2πa/period; split the budget so the vector speed
    // stays within max_speed.
    let per_axis = max_speed / std::f64::consts::SQRT_2;
    Trajectory::Lissajous {
        center: (fw / 2.0, fh / 2.0),
        amplitude: (ax, ay),
        period: (2.0 * PI * ax / per_axis, 2.0 * PI * ay / per_axis),
        phase: (0.0, PI / 2.0),
    }
}
