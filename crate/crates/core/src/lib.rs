//! Exemplar-LDA visual object tracking.
//!
//! Every tracked frame trains one linear discriminant detector from a single
//! positive exemplar against a large pooled negative model. Detectors from the
//! first frame (long-term) and a trailing window of recent frames (short-term)
//! are combined into a weighted ensemble. Both the object model and the
//! negative statistics are updated online.
//!
//! Modules, bottom-up:
//!
//! * [`features`]: grayscale frames, bilinear patch extraction, 2304-d HOG.
//! * [`background`]: negative-sample mean/covariance with exact merging, offline
//!   harvesting and a binary model file.
//! * [`detector`]: exemplar LDA hyperplanes over a cached SPD factorization.
//! * [`object_model`]: long-term + windowed short-term weighted ensemble.
//! * [`tracker`]: candidate search, online negatives, per-frame updates.
//! * [`bench`]: IoU / CLE / success rate, GT and result files, synthetic sequences.
//! * [`cli`]: the `elda` command-line tool.

pub mod background;
pub mod bench;
pub mod cli;
pub mod detector;
mod error;
pub mod features;
pub mod object_model;
pub mod tracker;

pub use background::BackgroundModel;
pub use bench::{Report, TrackResult};
pub use detector::{ExemplarDetector, LdaSolver};
pub use error::{EldaError, Result};
pub use features::{FeatureVector, GrayImage, HOG_DIM, PATCH_SIZE};
pub use object_model::{ObjectModel, WeightedDetector};
pub use tracker::{BoundingBox, Tracker, TrackerConfig};
