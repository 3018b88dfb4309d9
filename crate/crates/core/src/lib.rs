//! Point-supervised instance segmentation and counting of round objects.
//!
//! The crate bundles the loss terms (segmentation, watershed-driven splitting,
//! shape priors and counting), the morphology and watershed primitives they
//! rely on, evaluation metrics, a synthetic scene generator and a small
//! CPU trainer.

pub mod formats;
pub mod hull;
pub mod losses;
pub mod metrics;
pub mod morphology;
pub mod shape;
pub mod synthgen;
pub mod trainer;
pub mod types;
pub mod watershed;

pub use losses::{total_loss, total_loss_with, LossError, LossOptions, LossReport, SegMode};
pub use metrics::{MetricReport, MetricsError};
pub use morphology::{connected_components, extract_blobs, Blob, InstanceLabelMap};
pub use types::{
    AnnotationSet, BinaryMask, ImageRGB, LossWeights, PixelCoord, ProbabilityMap, ShapeKind,
};
pub use watershed::{selective_watershed, watershed, ErosionMode, RegionSet};
