//! Shape measures on blobs and the Huber-style residual shared by the shape
//! and count losses.

use crate::morphology::Blob;

/// Which pixels the radius spread ranges over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LscMode {
    /// Boundary pixels only.
    #[default]
    Boundary,
    /// Every blob pixel; the minimum radius collapses towards 0 for any blob
    /// that covers its centroid.
    AllPixels,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeMeasureKind {
    Convexity,
    Lsc,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeMeasure {
    pub value: f64,
    pub kind: ShapeMeasureKind,
    pub blob_id: u32,
}

impl ShapeMeasure {
    pub fn convexity(blob: &Blob) -> Self {
        Self {
            value: convexity(blob),
            kind: ShapeMeasureKind::Convexity,
            blob_id: blob.id,
        }
    }

    pub fn lsc(blob: &Blob, mode: LscMode) -> Self {
        Self {
            value: lsc_with_mode(blob, mode),
            kind: ShapeMeasureKind::Lsc,
            blob_id: blob.id,
        }
    }
}

/// Pixel area over corner-hull area, in `(0, 1]`.
pub fn convexity(blob: &Blob) -> f64 {
    let area = blob.pixel_area as f64;
    if (blob.hull_area - area).abs() <= 1e-9 {
        1.0
    } else {
        area / blob.hull_area
    }
}

/// Spread between the largest and smallest centroid-to-boundary distance.
pub fn lsc(blob: &Blob) -> f64 {
    lsc_with_mode(blob, LscMode::Boundary)
}

pub fn lsc_with_mode(blob: &Blob, mode: LscMode) -> f64 {
    let pixels = match mode {
        LscMode::Boundary => &blob.boundary,
        LscMode::AllPixels => &blob.pixels,
    };
    let (lo, hi) = pixels
        .iter()
        .map(|&p| blob.radius(p))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r), hi.max(r)));
    if hi < lo {
        0.0
    } else {
        hi - lo
    }
}

/// Huber residual with unit threshold: `r^2 / 2` below 1, `|r| - 1/2` above.
#[inline]
pub fn huber_z(pred: f64, target: f64) -> f64 {
    let r = pred - target;
    if r.abs() < 1.0 {
        0.5 * r * r
    } else {
        r.abs() - 0.5
    }
}

/// Derivative of [`huber_z`] with respect to `pred`; `sign(r)` at `|r| = 1`.
#[inline]
pub fn huber_z_derivative(pred: f64, target: f64) -> f64 {
    let r = pred - target;
    if r.abs() < 1.0 {
        r
    } else {
        r.signum()
    }
}
