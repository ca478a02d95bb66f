//! Detection-as-attention species identification toolkit.
//!
//! Evaluates organ detectors (NMS, COCO AP), fuses per-organ species
//! classifier outputs into per-image predictions (sum, product and voting
//! rules), splits and summarizes long-tailed datasets, scores classifiers and
//! simulates prediction corpora. Detector and classifier outputs come from
//! files; no model inference happens here.

pub mod class_eval;
pub mod cli;
pub mod curation;
pub mod detection;
pub mod error;
pub mod fusion;
pub mod geom;
pub mod io;
pub mod model;
pub mod numeric;
pub mod parallel;
pub mod report;
pub mod sim;
pub mod stats;

pub use error::{Error, Result};
pub use geom::BoundingBox;
pub use model::{
    DatasetManifest, Detection, GroundTruthAnnotation, ImageRecord, OrganClass, RoiPrediction,
    SpeciesDistribution, Split,
};
