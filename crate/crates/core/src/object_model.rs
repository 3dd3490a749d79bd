//! The weighted exemplar ensemble: one permanent long-term detector from the
//! first frame plus short-term detectors from a trailing window of frames.
//!
//! Each short-term detector `H_k` is weighted by how its exemplar scores under
//! the long-term detector, relative to the long-term exemplar's own score:
//! `λ_k = max(0, H_1(x_k) / H_1(x_1))` on raw scores. The ensemble response is
//! `λ_1·H_1(x) + Σ λ_i·H_i(x)` with `λ_1 = 1`.

use std::collections::VecDeque;

use crate::detector::{dot, raw_score, ExemplarDetector, LdaSolver};
use crate::error::{EldaError, Result};
use crate::features::FeatureVector;

/// Long-term self-scores at or below this are degenerate.
pub const MIN_SELF_SCORE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedDetector {
    pub detector: ExemplarDetector,
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct ObjectModel {
    long_term: WeightedDetector,
    short_term: VecDeque<WeightedDetector>,
    window: usize,
    admission_interval: usize,
    last_admitted: usize,
    // Σλᵢωᵢ and Σλᵢbᵢ over all members, rebuilt whenever membership changes.
    summed_weights: Vec<f64>,
    summed_bias: f64,
}

impl ObjectModel {
    /// Starts a model whose long-term detector is trained on the frame-1 exemplar.
    pub fn init(x_p1: &FeatureVector, solver: &LdaSolver, window: usize, admission_interval: usize) -> Result<Self> {
        Self::from_long_term(solver.train(x_p1, 1)?, window, admission_interval)
    }

    pub fn from_long_term(detector: ExemplarDetector, window: usize, admission_interval: usize) -> Result<Self> {
        if window < 1 {
            return Err(EldaError::invalid("time window must be at least one frame"));
        }
        if admission_interval < 1 {
            return Err(EldaError::invalid("admission interval must be at least one frame"));
        }
        let mut model = Self {
            last_admitted: detector.source_frame(),
            long_term: WeightedDetector { detector, weight: 1.0 },
            short_term: VecDeque::new(),
            window,
            admission_interval,
            summed_weights: Vec::new(),
            summed_bias: 0.0,
        };
        model.rebuild_sum();
        Ok(model)
    }

    pub fn long_term(&self) -> &WeightedDetector {
        &self.long_term
    }

    pub fn short_term(&self) -> impl ExactSizeIterator<Item = &WeightedDetector> + '_ {
        self.short_term.iter()
    }

    pub fn short_term_len(&self) -> usize {
        self.short_term.len()
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn admission_interval(&self) -> usize {
        self.admission_interval
    }

    pub fn dim(&self) -> usize {
        self.long_term.detector.dim()
    }

    /// Frame of the most recent admission (1 before any).
    pub fn last_admitted(&self) -> usize {
        self.last_admitted
    }

    pub fn admission_due(&self, frame: usize) -> bool {
        frame >= 2 && frame >= self.last_admitted + self.admission_interval
    }

    /// Long-term detector's raw score of its own exemplar.
    pub fn long_term_self_score(&self) -> Result<f64> {
        let h1 = &self.long_term.detector;
        raw_score(h1, h1.exemplar())
    }

    /// `max(0, H_1(x) / H_1(x_1))` on raw scores.
    pub fn exemplar_weight(&self, x_pk: &FeatureVector) -> Result<f64> {
        let denom = self.long_term_self_score()?;
        if !(denom > MIN_SELF_SCORE) {
            return Err(EldaError::DegenerateExemplar(denom));
        }
        let w = raw_score(&self.long_term.detector, x_pk)? / denom;
        if !w.is_finite() {
            return Err(EldaError::Numerical(format!("exemplar weight {w}")));
        }
        Ok(w.max(0.0))
    }

    /// Trains a detector for the frame-`frame` exemplar, weights it, appends it
    /// and evicts short-term entries with `source_frame ≤ frame − window`.
    pub fn admit(&mut self, x_pk: &FeatureVector, frame: usize, solver: &LdaSolver) -> Result<()> {
        if frame < 2 {
            return Err(EldaError::invalid("short-term exemplars start at frame 2"));
        }
        if !self.admission_due(frame) {
            return Err(EldaError::invalid(format!(
                "admission at frame {frame} not due (last {}, interval {})",
                self.last_admitted, self.admission_interval
            )));
        }
        let weight = self.exemplar_weight(x_pk)?;
        let detector = solver.train(x_pk, frame)?;
        self.short_term.push_back(WeightedDetector { detector, weight });
        self.last_admitted = frame;
        self.evict(frame);
        self.rebuild_sum();
        Ok(())
    }

    fn evict(&mut self, frame: usize) {
        while let Some(front) = self.short_term.front() {
            if front.detector.source_frame() + self.window <= frame {
                self.short_term.pop_front();
            } else {
                break;
            }
        }
    }

    fn rebuild_sum(&mut self) {
        let lt = &self.long_term;
        let mut w: Vec<f64> = lt.detector.weights().iter().map(|v| lt.weight * v).collect();
        let mut b = lt.weight * lt.detector.bias();
        for wd in &self.short_term {
            if wd.weight == 0.0 {
                continue;
            }
            for (acc, v) in w.iter_mut().zip(wd.detector.weights()) {
                *acc += wd.weight * v;
            }
            b += wd.weight * wd.detector.bias();
        }
        self.summed_weights = w;
        self.summed_bias = b;
    }

    /// Ensemble response through the pre-summed hyperplane, O(d).
    pub fn ensemble_score(&self, x: &FeatureVector) -> Result<f64> {
        if x.dim() != self.dim() {
            return Err(EldaError::invalid(format!(
                "feature has dimension {}, model {}",
                x.dim(),
                self.dim()
            )));
        }
        Ok(dot(&self.summed_weights, x.as_slice()) + self.summed_bias)
    }

    /// Ensemble response as the explicit weighted sum over detectors, O(W·d).
    pub fn explicit_score(&self, x: &FeatureVector) -> Result<f64> {
        let mut s = self.long_term.weight * raw_score(&self.long_term.detector, x)?;
        for wd in &self.short_term {
            s += wd.weight * raw_score(&wd.detector, x)?;
        }
        Ok(s)
    }

    /// Copy with every weight, long-term included, multiplied by `c`.
    pub fn with_scaled_weights(&self, c: f64) -> Self {
        let mut m = self.clone();
        m.long_term.weight *= c;
        for wd in &mut m.short_term {
            wd.weight *= c;
        }
        m.rebuild_sum();
        m
    }
}
