//! Per-frame tracking loop.
//!
//! Each frame: score every candidate box in the detection disc around the
//! previous centre with the object ensemble, move to the best one, harvest
//! negatives from a ring around the new centre, fold them into the background
//! model and, when due, admit the new position as a short-term exemplar.

use std::collections::HashSet;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::background::{self, BackgroundModel};
use crate::bench::TrackResult;
use crate::detector::{default_regularization, LdaSolver};
use crate::error::{EldaError, Result};
use crate::features::{self, FeatureVector, GrayImage, HOG_DIM};
use crate::object_model::ObjectModel;

/// Axis-aligned box; `(x, y)` is the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        if !(w > 0.0 && h > 0.0) || !x.is_finite() || !y.is_finite() || !w.is_finite() || !h.is_finite() {
            return Err(EldaError::invalid(format!("invalid box ({x}, {y}, {w}, {h})")));
        }
        Ok(Self { x, y, w, h })
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(cx - w / 2.0, cy - h / 2.0, w, h)
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self {
            x: self.x + dx,
            y: self.y + dy,
            ..*self
        }
    }
}

/// Shape of the detection area around the previous centre.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchArea {
    /// Offsets with `dx² + dy² ≤ R²`.
    Disc,
    /// Offsets with `max(|dx|, |dy|) ≤ R`.
    Square,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerConfig {
    /// Detection radius `R_d` in pixels.
    pub detect_radius: f64,
    pub search_area: SearchArea,
    /// Negatives are drawn with `ring_inner < d ≤ ring_outer`.
    pub ring_inner: f64,
    pub ring_outer: f64,
    pub negatives_per_frame: usize,
    pub search_stride: usize,
    /// Short-term window `TM` in frames.
    pub window: usize,
    pub admission_interval: usize,
    /// Ridge added to Σ; `None` picks [`default_regularization`] per factorization.
    pub reg: Option<f64>,
    pub online_weight_multiplier: f64,
    pub rng_seed: u64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            detect_radius: 30.0,
            search_area: SearchArea::Disc,
            ring_inner: 5.0,
            ring_outer: 30.0,
            negatives_per_frame: 64,
            search_stride: 2,
            window: 500,
            admission_interval: 1,
            reg: None,
            online_weight_multiplier: 1.0,
            rng_seed: 0,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(EldaError::invalid(m));
        if !(self.detect_radius >= 1.0) {
            return bad(format!("detect_radius must be ≥ 1, got {}", self.detect_radius));
        }
        if !(self.ring_inner >= 0.0 && self.ring_inner < self.ring_outer) {
            return bad(format!(
                "need 0 ≤ ring_inner < ring_outer, got {} and {}",
                self.ring_inner, self.ring_outer
            ));
        }
        if self.search_stride < 1 {
            return bad("search_stride must be ≥ 1".into());
        }
        if self.window < 1 || self.admission_interval < 1 {
            return bad("window and admission_interval must be ≥ 1".into());
        }
        if let Some(r) = self.reg {
            if !(r > 0.0 && r.is_finite()) {
                return bad(format!("reg must be positive, got {r}"));
            }
        }
        if !(self.online_weight_multiplier >= 0.0 && self.online_weight_multiplier.is_finite()) {
            return bad(format!(
                "online_weight_multiplier must be ≥ 0, got {}",
                self.online_weight_multiplier
            ));
        }
        Ok(())
    }
}

/// Stride-lattice offsets inside the search area, ascending `dy` then `dx`.
pub fn candidate_offsets(radius: f64, stride: usize, area: SearchArea) -> Vec<(i64, i64)> {
    let stride = stride.max(1) as i64;
    let steps = (radius / stride as f64).floor() as i64;
    let r2 = radius * radius;
    let mut out = Vec::new();
    for iy in -steps..=steps {
        let dy = iy * stride;
        for ix in -steps..=steps {
            let dx = ix * stride;
            let inside = match area {
                SearchArea::Disc => ((dx * dx + dy * dy) as f64) <= r2,
                SearchArea::Square => true,
            };
            if inside {
                out.push((dx, dy));
            }
        }
    }
    out
}

/// Candidate boxes of size `size` around `center`. Centres are clamped to
/// `[0, W−1] × [0, H−1]`; boxes that coincide after clamping are kept once, at
/// their first position in canonical order.
pub fn generate_candidates(
    center: (f64, f64),
    size: (f64, f64),
    radius: f64,
    stride: usize,
    area: SearchArea,
    frame_bounds: (usize, usize),
) -> Vec<BoundingBox> {
    let (fw, fh) = frame_bounds;
    if fw == 0 || fh == 0 {
        return Vec::new();
    }
    let max_x = (fw - 1) as f64;
    let max_y = (fh - 1) as f64;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (dx, dy) in candidate_offsets(radius, stride, area) {
        let cx = (center.0 + dx as f64).clamp(0.0, max_x);
        let cy = (center.1 + dy as f64).clamp(0.0, max_y);
        if seen.insert((cx.to_bits(), cy.to_bits())) {
            out.push(BoundingBox {
                x: cx - size.0 / 2.0,
                y: cy - size.1 / 2.0,
                w: size.0,
                h: size.1,
            });
        }
    }
    out
}

/// Ring negatives for one frame.
#[derive(Debug, Clone)]
pub struct OnlineNegatives {
    pub boxes: Vec<BoundingBox>,
    pub features: Vec<FeatureVector>,
    /// Requested minus returned.
    pub shortfall: usize,
}

/// Draws up to `config.negatives_per_frame` boxes whose centres lie uniformly
/// in the annulus `ring_inner < d ≤ ring_outer` around `center` (rejection
/// sampling on the enclosing square). Centres outside the frame are rejected.
pub fn sample_online_negatives(
    frame: &GrayImage,
    center: (f64, f64),
    size: (f64, f64),
    config: &TrackerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<OnlineNegatives> {
    let wanted = config.negatives_per_frame;
    let (inner2, outer) = (config.ring_inner * config.ring_inner, config.ring_outer);
    let outer2 = outer * outer;
    let max_x = (frame.width() - 1) as f64;
    let max_y = (frame.height() - 1) as f64;
    let max_draws = wanted.saturating_mul(200);
    let mut boxes = Vec::with_capacity(wanted);
    let mut draws = 0;
    while boxes.len() < wanted && draws < max_draws {
        draws += 1;
        let dx = rng.random_range(-outer..=outer);
        let dy = rng.random_range(-outer..=outer);
        let d2 = dx * dx + dy * dy;
        if d2 <= inner2 || d2 > outer2 {
            continue;
        }
        let (cx, cy) = (center.0 + dx, center.1 + dy);
        if !(0.0..=max_x).contains(&cx) || !(0.0..=max_y).contains(&cy) {
            continue;
        }
        boxes.push(BoundingBox::from_center(cx, cy, size.0, size.1)?);
    }
    let features = boxes
        .par_iter()
        .map(|b| features::encode_box(frame, b))
        .collect::<Result<Vec<_>>>()?;
    let shortfall = wanted - boxes.len();
    if shortfall > 0 {
        log::warn!("online negatives: {shortfall} of {wanted} could not be placed inside the frame");
    }
    Ok(OnlineNegatives {
        boxes,
        features,
        shortfall,
    })
}

/// Tracker state between frames.
#[derive(Debug, Clone)]
pub struct Tracker {
    config: TrackerConfig,
    frame_index: usize,
    bbox: BoundingBox,
    object: ObjectModel,
    background: Arc<BackgroundModel>,
    rng: ChaCha8Rng,
    last_score: f64,
    last_shortfall: usize,
}

impl Tracker {
    /// Initializes on frame 1 and returns the tracker plus the frame-1 result.
    pub fn init(
        frame1: &GrayImage,
        box1: BoundingBox,
        offline_bg: &BackgroundModel,
        config: TrackerConfig,
    ) -> Result<(Self, TrackResult)> {
        config.validate()?;
        if offline_bg.dim() != HOG_DIM {
            return Err(EldaError::invalid(format!(
                "background model has dimension {}, expected {HOG_DIM}",
                offline_bg.dim()
            )));
        }
        check_frame(frame1, &box1)?;
        let (cx, cy) = box1.center();
        if !(0.0..frame1.width() as f64).contains(&cx) || !(0.0..frame1.height() as f64).contains(&cy) {
            return Err(EldaError::invalid(format!("initial box {box1:?} centre is outside the frame")));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        let x_p1 = features::encode_box(frame1, &box1)?;
        let negatives = sample_online_negatives(frame1, box1.center(), (box1.w, box1.h), &config, &mut rng)?;
        let background = Arc::new(fold_negatives(offline_bg, &negatives.features, &config)?);
        let solver = make_solver(&background, &config)?;
        let object = ObjectModel::init(&x_p1, &solver, config.window, config.admission_interval)?;
        let score = object.long_term_self_score()?;
        if !(score > crate::object_model::MIN_SELF_SCORE) {
            return Err(EldaError::DegenerateExemplar(score));
        }

        let tracker = Self {
            config,
            frame_index: 1,
            bbox: box1,
            object,
            background,
            rng,
            last_score: score,
            last_shortfall: negatives.shortfall,
        };
        let result = TrackResult {
            frame: 1,
            bbox: box1,
            score,
        };
        Ok((tracker, result))
    }

    /// Processes the next frame.
    pub fn track(&mut self, frame: &GrayImage) -> Result<TrackResult> {
        check_frame(frame, &self.bbox)?;
        let k = self.frame_index + 1;
        let prev = self.bbox.center();
        let size = (self.bbox.w, self.bbox.h);
        let candidates = generate_candidates(
            prev,
            size,
            self.config.detect_radius,
            self.config.search_stride,
            self.config.search_area,
            (frame.width(), frame.height()),
        );
        if candidates.is_empty() {
            return Err(EldaError::invalid("no candidates in the detection area"));
        }
        let scores = self.score_candidates(frame, &candidates)?;
        let best = select_best(&candidates, &scores, prev);
        let bbox = candidates[best];
        let score = scores[best];

        let negatives = sample_online_negatives(frame, bbox.center(), size, &self.config, &mut self.rng)?;
        let background = Arc::new(fold_negatives(&self.background, &negatives.features, &self.config)?);
        self.background = background;

        if self.object.admission_due(k) {
            let solver = make_solver(&self.background, &self.config)?;
            let x_pk = features::encode_box(frame, &bbox)?;
            self.object.admit(&x_pk, k, &solver)?;
        }

        self.frame_index = k;
        self.bbox = bbox;
        self.last_score = score;
        self.last_shortfall = negatives.shortfall;
        Ok(TrackResult { frame: k, bbox, score })
    }

    /// Ensemble scores of `candidates` in `frame`, in candidate order.
    pub fn score_candidates(&self, frame: &GrayImage, candidates: &[BoundingBox]) -> Result<Vec<f64>> {
        candidates
            .par_iter()
            .map(|b| {
                let f = features::encode_box(frame, b)?;
                self.object.ensemble_score(&f)
            })
            .collect()
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    /// Index of the last processed frame (1 after init).
    pub fn frame_index(&self) -> usize {
        self.frame_index
    }

    pub fn bbox(&self) -> BoundingBox {
        self.bbox
    }

    pub fn object_model(&self) -> &ObjectModel {
        &self.object
    }

    pub fn background(&self) -> &BackgroundModel {
        &self.background
    }

    pub fn last_score(&self) -> f64 {
        self.last_score
    }

    pub fn last_shortfall(&self) -> usize {
        self.last_shortfall
    }
}

fn check_frame(frame: &GrayImage, bbox: &BoundingBox) -> Result<()> {
    if (frame.width() as f64) < bbox.w || (frame.height() as f64) < bbox.h {
        return Err(EldaError::invalid(format!(
            "{}x{} frame is smaller than the {}x{} object box",
            frame.width(),
            frame.height(),
            bbox.w,
            bbox.h
        )));
    }
    Ok(())
}

fn make_solver(bg: &Arc<BackgroundModel>, config: &TrackerConfig) -> Result<LdaSolver> {
    let reg = config.reg.unwrap_or_else(|| default_regularization(bg));
    LdaSolver::new(Arc::clone(bg), reg)
}

/// Merges a batch of online negatives into `bg`, scaling the batch's
/// effective count by the configured multiplier.
fn fold_negatives(bg: &BackgroundModel, negatives: &[FeatureVector], config: &TrackerConfig) -> Result<BackgroundModel> {
    let effective = (negatives.len() as f64 * config.online_weight_multiplier).round() as u64;
    background::merge_samples(bg, negatives, effective)
}

/// Index of the best candidate: highest score, then smallest displacement
/// from `prev`, then earliest in canonical order. NaN scores never win.
pub fn select_best(candidates: &[BoundingBox], scores: &[f64], prev: (f64, f64)) -> usize {
    let disp2 = |b: &BoundingBox| {
        let (cx, cy) = b.center();
        (cx - prev.0).powi(2) + (cy - prev.1).powi(2)
    };
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    let mut best_disp = f64::INFINITY;
    for (i, (b, &s)) in candidates.iter().zip(scores).enumerate() {
        if s.is_nan() {
            continue;
        }
        let d = disp2(b);
        if s > best_score || (s == best_score && d < best_disp) {
            best = i;
            best_score = s;
            best_disp = d;
        }
    }
    best
}
