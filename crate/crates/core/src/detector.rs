//! Exemplar LDA detectors.
//!
//! A detector is trained from a single positive feature `x_p` against the
//! shared negative statistics `(μ, Σ)`: `ω = (Σ + reg·I)⁻¹(x_p − μ)` and the
//! midpoint bias `b = −ω·(x_p + μ)/2`. Because `Σ` does not depend on the
//! exemplar, one Cholesky factorization ([`LdaSolver`]) serves every detector
//! trained between two background updates.

use std::sync::Arc;

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::cholesky::llt::factor::{cholesky_in_place, cholesky_in_place_scratch};
use faer::linalg::triangular_solve::{solve_lower_triangular_in_place, solve_upper_triangular_in_place};
use faer::{Mat, Par};

use crate::background::BackgroundModel;
use crate::error::{EldaError, Result};
use crate::features::FeatureVector;

/// `max(1e-4 · trace(Σ)/d, 1e-8)`.
pub fn default_regularization(bg: &BackgroundModel) -> f64 {
    (1e-4 * bg.trace() / bg.dim() as f64).max(1e-8)
}

/// One trained exemplar hyperplane.
#[derive(Debug, Clone, PartialEq)]
pub struct ExemplarDetector {
    weights: Vec<f64>,
    bias: f64,
    source_frame: usize,
    exemplar: FeatureVector,
}

impl ExemplarDetector {
    /// Assembles a detector from an explicit hyperplane.
    pub fn from_parts(weights: Vec<f64>, bias: f64, source_frame: usize, exemplar: FeatureVector) -> Result<Self> {
        if weights.len() != exemplar.dim() {
            return Err(EldaError::invalid(format!(
                "weights have dimension {}, exemplar {}",
                weights.len(),
                exemplar.dim()
            )));
        }
        if source_frame < 1 {
            return Err(EldaError::invalid("source_frame is 1-based"));
        }
        if !bias.is_finite() || weights.iter().any(|w| !w.is_finite()) {
            return Err(EldaError::Numerical("non-finite detector hyperplane".into()));
        }
        Ok(Self {
            weights,
            bias,
            source_frame,
            exemplar,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn source_frame(&self) -> usize {
        self.source_frame
    }

    pub fn exemplar(&self) -> &FeatureVector {
        &self.exemplar
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }
}

/// Cholesky factor of `Σ + reg·I` for one background snapshot.
#[derive(Debug, Clone)]
pub struct LdaSolver {
    background: Arc<BackgroundModel>,
    reg: f64,
    lower: Mat<f64>,
}

impl LdaSolver {
    pub fn new(background: Arc<BackgroundModel>, reg: f64) -> Result<Self> {
        if !(reg > 0.0) || !reg.is_finite() {
            return Err(EldaError::invalid(format!("regularization must be positive, got {reg}")));
        }
        if background.count() < 2 {
            return Err(EldaError::invalid(format!(
                "background model needs at least 2 samples, has {}",
                background.count()
            )));
        }
        let d = background.dim();
        // Σ is exactly symmetric, so reading (j, i) walks row-major storage
        // contiguously while filling column-major.
        let mut lower = Mat::<f64>::from_fn(d, d, |i, j| {
            if j > i {
                0.0
            } else if i == j {
                background.cov_at(i, i) + reg
            } else {
                background.cov_at(j, i)
            }
        });
        let mut mem = MemBuffer::new(cholesky_in_place_scratch::<f64>(d, Par::Seq, Default::default()));
        cholesky_in_place(
            lower.as_mut(),
            Default::default(),
            Par::Seq,
            MemStack::new(&mut mem),
            Default::default(),
        )
        .map_err(|e| EldaError::Numerical(format!("Σ + {reg:e}·I is not positive definite: {e}")))?;
        for j in 0..d {
            for i in 0..j {
                lower[(i, j)] = 0.0;
            }
        }
        Ok(Self {
            background,
            reg,
            lower,
        })
    }

    /// Factorizes with [`default_regularization`].
    pub fn with_default_reg(background: Arc<BackgroundModel>) -> Result<Self> {
        let reg = default_regularization(&background);
        Self::new(background, reg)
    }

    pub fn background(&self) -> &Arc<BackgroundModel> {
        &self.background
    }

    pub fn reg(&self) -> f64 {
        self.reg
    }

    pub fn dim(&self) -> usize {
        self.background.dim()
    }

    /// `(Σ + reg·I)·v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let bg = &self.background;
        let d = bg.dim();
        let cov = bg.cov();
        (0..d)
            .map(|i| dot(&cov[i * d..(i + 1) * d], v) + self.reg * v[i])
            .collect()
    }

    fn solve_in_place(&self, rhs: &mut [f64]) {
        let d = rhs.len();
        let mut col = faer::MatMut::from_column_major_slice_mut(rhs, d, 1);
        solve_lower_triangular_in_place(self.lower.as_ref(), col.as_mut(), Par::Seq);
        solve_upper_triangular_in_place(self.lower.transpose(), col.as_mut(), Par::Seq);
    }

    /// Solves `(Σ + reg·I)·x = rhs` with one step of iterative refinement.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        if rhs.len() != self.dim() {
            return Err(EldaError::invalid(format!(
                "right-hand side has dimension {}, solver {}",
                rhs.len(),
                self.dim()
            )));
        }
        let mut x = rhs.to_vec();
        self.solve_in_place(&mut x);
        let ax = self.apply(&x);
        let mut r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
        self.solve_in_place(&mut r);
        for (xi, ri) in x.iter_mut().zip(&r) {
            *xi += ri;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(EldaError::Numerical("non-finite solution".into()));
        }
        Ok(x)
    }

    /// Trains the detector for exemplar `x_p` first seen in `source_frame`.
    pub fn train(&self, x_p: &FeatureVector, source_frame: usize) -> Result<ExemplarDetector> {
        let mu = self.background.mean();
        if x_p.dim() != mu.len() {
            return Err(EldaError::invalid(format!(
                "exemplar has dimension {}, background {}",
                x_p.dim(),
                mu.len()
            )));
        }
        let diff: Vec<f64> = x_p.as_slice().iter().zip(mu).map(|(x, m)| x - m).collect();
        let weights = self.solve(&diff)?;
        let midpoint: Vec<f64> = x_p.as_slice().iter().zip(mu).map(|(x, m)| 0.5 * (x + m)).collect();
        let bias = -dot(&weights, &midpoint);
        ExemplarDetector::from_parts(weights, bias, source_frame, x_p.clone())
    }
}

/// Trains one detector against `bg` with ridge `reg`. To train many detectors
/// against the same background, build an [`LdaSolver`] once instead.
pub fn train_detector(
    x_p: &FeatureVector,
    bg: &BackgroundModel,
    reg: f64,
    source_frame: usize,
) -> Result<ExemplarDetector> {
    if x_p.dim() != bg.dim() {
        return Err(EldaError::invalid(format!(
            "exemplar has dimension {}, background {}",
            x_p.dim(),
            bg.dim()
        )));
    }
    LdaSolver::new(Arc::new(bg.clone()), reg)?.train(x_p, source_frame)
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `ω·x + b`.
pub fn raw_score(det: &ExemplarDetector, x: &FeatureVector) -> Result<f64> {
    if x.dim() != det.dim() {
        return Err(EldaError::invalid(format!(
            "feature has dimension {}, detector {}",
            x.dim(),
            det.dim()
        )));
    }
    Ok(dot(&det.weights, x.as_slice()) + det.bias)
}

/// `+1` if the raw score exceeds `threshold`, else `−1`.
pub fn classify_with_threshold(det: &ExemplarDetector, x: &FeatureVector, threshold: f64) -> Result<i8> {
    Ok(if raw_score(det, x)? > threshold { 1 } else { -1 })
}

/// Sign of the raw score; a score of exactly zero is background.
pub fn classify(det: &ExemplarDetector, x: &FeatureVector) -> Result<i8> {
    classify_with_threshold(det, x, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_bg(d: usize, mean: Vec<f64>) -> BackgroundModel {
        let mut cov = vec![0.0; d * d];
        for i in 0..d {
            cov[i * d + i] = 1.0;
        }
        BackgroundModel::from_parts(d, 10, mean, cov).unwrap()
    }

    fn fv(v: &[f64]) -> FeatureVector {
        FeatureVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn exemplar_at_mean_gives_zero_hyperplane() {
        let mu = vec![0.5, -1.0, 2.0, 0.0];
        let det = train_detector(&fv(&mu), &identity_bg(4, mu.clone()), 1e-12, 1).unwrap();
        assert!(det.weights().iter().all(|&w| w == 0.0));
        assert_eq!(det.bias(), 0.0);
        // Raw score exactly 0 breaks toward background.
        assert_eq!(classify(&det, &fv(&[9.0, 9.0, 9.0, 9.0])).unwrap(), -1);
    }

    #[test]
    fn identity_covariance() {
        let det = train_detector(&fv(&[1.0, 0.0, 0.0, 0.0]), &identity_bg(4, vec![0.0; 4]), 1e-12, 1).unwrap();
        for (w, e) in det.weights().iter().zip([1.0, 0.0, 0.0, 0.0]) {
            assert!((w - e).abs() < 1e-11);
        }
        assert!((det.bias() + 0.5).abs() < 1e-11);
    }

    #[test]
    fn self_score_symmetry() {
        let mu = vec![0.1, 0.2, 0.3];
        let xp = fv(&[0.4, -0.2, 0.9]);
        let bg = identity_bg(3, mu.clone());
        let det = train_detector(&xp, &bg, 0.5, 3).unwrap();
        let s_pos = raw_score(&det, &xp).unwrap();
        let s_neg = raw_score(&det, &fv(&mu)).unwrap();
        assert!(s_pos > 0.0);
        assert!((s_pos + s_neg).abs() < 1e-14);
        assert_eq!(classify(&det, &xp).unwrap(), 1);
        assert_eq!(classify(&det, &fv(&mu)).unwrap(), -1);
        assert_eq!(classify_with_threshold(&det, &xp, s_pos * 2.0).unwrap(), -1);
        assert_eq!(det.source_frame(), 3);
    }

    #[test]
    fn errors() {
        let bg = identity_bg(3, vec![0.0; 3]);
        assert!(matches!(
            train_detector(&fv(&[1.0, 2.0]), &bg, 1e-3, 1),
            Err(EldaError::InvalidInput(_))
        ));
        assert!(train_detector(&fv(&[1.0, 2.0, 3.0]), &bg, 0.0, 1).is_err());
        let tiny = identity_bg(3, vec![0.0; 3]).with_count(1);
        assert!(train_detector(&fv(&[1.0, 2.0, 3.0]), &tiny, 1e-3, 1).is_err());
        // Indefinite covariance the ridge cannot rescue.
        let cov = vec![1.0, 0.0, 0.0, 0.0, -5.0, 0.0, 0.0, 0.0, 1.0];
        let bad = BackgroundModel::from_parts(3, 10, vec![0.0; 3], cov).unwrap();
        assert!(matches!(
            train_detector(&fv(&[1.0, 2.0, 3.0]), &bad, 1e-3, 1),
            Err(EldaError::Numerical(_))
        ));
        let det = train_detector(&fv(&[1.0, 2.0, 3.0]), &bg, 1e-3, 1).unwrap();
        assert!(raw_score(&det, &fv(&[1.0])).is_err());
    }

    #[test]
    fn default_reg_floor() {
        assert_eq!(default_regularization(&BackgroundModel::empty(4)), 1e-8);
        let bg = identity_bg(4, vec![0.0; 4]);
        assert!((default_regularization(&bg) - 1e-4).abs() < 1e-18);
    }
}
