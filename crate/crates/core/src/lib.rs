//! Test-time augmentation ensembles for object detection with fuzzy-integral
//! box fusion.
//!
//! A detector is run on several photometric variants of one image; the
//! resulting boxes are grouped per object and fused with a Choquet integral
//! whose fuzzy measure is derived from how much the boxes agree with each
//! other, so isolated outliers carry no weight.

pub mod augmentation;
pub mod detector;
pub mod evaluation;
pub mod fusion;
pub mod fuzzy_measure;
pub mod geometry;
pub mod grouping;
pub mod image_io;
pub mod pipeline;
pub mod schema;

pub use augmentation::{Augmentation, Image, Roster};
pub use detector::{DetectorBinding, SyntheticModel};
pub use fusion::{dispatch, fuse_aabbfi, fuse_average, fuse_median, fuse_nms, Detection, FusionMethod, FusionResult};
pub use fuzzy_measure::{agreement_chain, choquet, choquet_interval, ChainMeasure, FuzzyMeasure};
pub use geometry::{iou, union_length, Aabb, Interval};
pub use pipeline::{Pipeline, PipelineConfig, PipelineReport, Scene};
