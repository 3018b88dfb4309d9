//! Shared domain types: pixel coordinates, images, probability maps, masks and
//! point annotations.
//!
//! Coordinates are `(u, v) = (row, column)` with the origin at the top-left
//! corner. Every raster in this crate is stored row-major.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Maximum deviation from 1 tolerated for the two channels of a probability map.
pub const CHANNEL_SUM_TOLERANCE: f64 = 1e-6;

/// Lower clamp applied to every probability before taking a logarithm; the
/// upper clamp is `1 - LOG_CLAMP`.
pub const LOG_CLAMP: f64 = 1e-7;

/// Clamps a probability into `[LOG_CLAMP, 1 - LOG_CLAMP]`.
#[inline]
pub fn clamp_probability(p: f64) -> f64 {
    p.clamp(LOG_CLAMP, 1.0 - LOG_CLAMP)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MapError {
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("buffer holds {actual} values, expected {expected}")]
    BufferLength { expected: usize, actual: usize },
    #[error("value at index {index} is not finite or outside [0, 1]")]
    OutOfRange { index: usize },
    #[error("channels at pixel {index} sum to {sum}, not 1")]
    NotNormalized { index: usize, sum: f64 },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AnnotationError {
    #[error("point {point} lies outside the {height}x{width} image")]
    OutOfBounds {
        point: PixelCoord,
        height: usize,
        width: usize,
    },
    #[error("point {point} is annotated both positive and negative")]
    PositiveNegativeOverlap { point: PixelCoord },
}

/// A pixel position, `u` = row and `v` = column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct PixelCoord {
    pub u: usize,
    pub v: usize,
}

impl PixelCoord {
    pub const fn new(u: usize, v: usize) -> Self {
        Self { u, v }
    }

    #[inline]
    pub fn in_bounds(&self, height: usize, width: usize) -> bool {
        self.u < height && self.v < width
    }

    #[inline]
    pub fn index(&self, width: usize) -> usize {
        self.u * width + self.v
    }
}

impl From<[usize; 2]> for PixelCoord {
    fn from([u, v]: [usize; 2]) -> Self {
        Self { u, v }
    }
}

impl From<PixelCoord> for [usize; 2] {
    fn from(p: PixelCoord) -> Self {
        [p.u, p.v]
    }
}

impl std::fmt::Display for PixelCoord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {})", self.u, self.v)
    }
}

/// 4-neighbours of `(u, v)` in the fixed scan order N, S, W, E.
#[inline]
pub(crate) fn neighbors4(
    u: usize,
    v: usize,
    height: usize,
    width: usize,
) -> impl Iterator<Item = (usize, usize)> {
    let n = (u > 0).then(|| (u - 1, v));
    let s = (u + 1 < height).then(|| (u + 1, v));
    let w = (v > 0).then(|| (u, v - 1));
    let e = (v + 1 < width).then(|| (u, v + 1));
    [n, s, w, e].into_iter().flatten()
}

/// Linear RGB image with values in `[0, 1]`, stored interleaved (HWC).
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRGB {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ImageRGB {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self, MapError> {
        let expected = height * width * 3;
        if data.len() != expected {
            return Err(MapError::BufferLength {
                expected,
                actual: data.len(),
            });
        }
        if let Some(index) = data
            .iter()
            .position(|x| !x.is_finite() || !(0.0..=1.0).contains(x))
        {
            return Err(MapError::OutOfRange { index });
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width * 3],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> [f64; 3] {
        let i = (u * self.width + v) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Sets a pixel, clamping each channel into `[0, 1]`.
    #[inline]
    pub fn set(&mut self, u: usize, v: usize, rgb: [f64; 3]) {
        let i = (u * self.width + v) * 3;
        for c in 0..3 {
            self.data[i + c] = rgb[c].clamp(0.0, 1.0);
        }
    }

    /// Mirrors the image top-to-bottom and/or left-to-right.
    pub fn flipped(&self, vertical: bool, horizontal: bool) -> Self {
        let mut out = Self::zeros(self.height, self.width);
        for u in 0..self.height {
            for v in 0..self.width {
                let (su, sv) = flip_coord(u, v, self.height, self.width, vertical, horizontal);
                out.set(u, v, self.get(su, sv));
            }
        }
        out
    }
}

#[inline]
fn flip_coord(
    u: usize,
    v: usize,
    height: usize,
    width: usize,
    vertical: bool,
    horizontal: bool,
) -> (usize, usize) {
    (
        if vertical { height - 1 - u } else { u },
        if horizontal { width - 1 - v } else { v },
    )
}

/// Two-channel per-pixel softmax output: background and foreground.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    height: usize,
    width: usize,
    background: Vec<f64>,
    foreground: Vec<f64>,
}

impl ProbabilityMap {
    pub fn from_channels(
        height: usize,
        width: usize,
        background: Vec<f64>,
        foreground: Vec<f64>,
    ) -> Result<Self, MapError> {
        let n = height * width;
        for len in [background.len(), foreground.len()] {
            if len != n {
                return Err(MapError::BufferLength {
                    expected: n,
                    actual: len,
                });
            }
        }
        for (index, (&b, &f)) in background.iter().zip(&foreground).enumerate() {
            if !b.is_finite() || !f.is_finite() || !(0.0..=1.0).contains(&b) || !(0.0..=1.0).contains(&f) {
                return Err(MapError::OutOfRange { index });
            }
            let sum = b + f;
            if (sum - 1.0).abs() > CHANNEL_SUM_TOLERANCE {
                return Err(MapError::NotNormalized { index, sum });
            }
        }
        Ok(Self {
            height,
            width,
            background,
            foreground,
        })
    }

    /// Builds a map from the foreground channel alone; background is `1 - fg`.
    pub fn from_foreground(height: usize, width: usize, foreground: Vec<f64>) -> Result<Self, MapError> {
        let background = foreground.iter().map(|f| 1.0 - f).collect();
        Self::from_channels(height, width, background, foreground)
    }

    pub fn uniform(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            background: vec![0.5; height * width],
            foreground: vec![0.5; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.foreground.len()
    }

    pub fn is_empty(&self) -> bool {
        self.foreground.is_empty()
    }

    pub fn foreground(&self) -> &[f64] {
        &self.foreground
    }

    pub fn background(&self) -> &[f64] {
        &self.background
    }

    #[inline]
    pub fn fg(&self, p: PixelCoord) -> f64 {
        self.foreground[p.index(self.width)]
    }
}

/// Per-pixel boolean foreground mask.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    pub fn filled(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![true; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<bool>) -> Result<Self, MapError> {
        if data.len() != height * width {
            return Err(MapError::BufferLength {
                expected: height * width,
                actual: data.len(),
            });
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for u in 0..height {
            for v in 0..width {
                data.push(f(u, v));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    /// Parses rows of `#` (foreground) and `.` (background); whitespace is ignored.
    pub fn from_ascii(rows: &[&str]) -> Self {
        let rows: Vec<Vec<bool>> = rows
            .iter()
            .map(|r| r.chars().filter(|c| !c.is_whitespace()).map(|c| c == '#').collect())
            .collect();
        let height = rows.len();
        let width = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == width), "ragged ascii mask");
        Self {
            height,
            width,
            data: rows.into_iter().flatten().collect(),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> bool {
        self.data[u * self.width + v]
    }

    #[inline]
    pub fn contains(&self, p: PixelCoord) -> bool {
        self.get(p.u, p.v)
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, value: bool) {
        self.data[u * self.width + v] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn pixels(&self) -> impl Iterator<Item = PixelCoord> + '_ {
        let w = self.width;
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| PixelCoord::new(i / w, i % w))
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.shape() == other.shape() && self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }

    pub fn intersects(&self, other: &BinaryMask) -> bool {
        self.data.iter().zip(&other.data).any(|(&a, &b)| a && b)
    }

    pub fn intersection_count(&self, other: &BinaryMask) -> usize {
        self.data.iter().zip(&other.data).filter(|(&a, &b)| a && b).count()
    }

    pub fn union_count(&self, other: &BinaryMask) -> usize {
        self.data.iter().zip(&other.data).filter(|(&a, &b)| a || b).count()
    }

    pub fn union(&self, other: &BinaryMask) -> BinaryMask {
        BinaryMask {
            height: self.height,
            width: self.width,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a || b).collect(),
        }
    }

    pub fn intersection(&self, other: &BinaryMask) -> BinaryMask {
        BinaryMask {
            height: self.height,
            width: self.width,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a && b).collect(),
        }
    }

    pub fn flipped(&self, vertical: bool, horizontal: bool) -> Self {
        Self::from_fn(self.height, self.width, |u, v| {
            let (su, sv) = flip_coord(u, v, self.height, self.width, vertical, horizontal);
            self.get(su, sv)
        })
    }
}

/// Positive (on-object) and negative (background) point annotations.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationSet {
    pub positives: Vec<PixelCoord>,
    pub negatives: Vec<PixelCoord>,
}

impl AnnotationSet {
    pub fn new(positives: Vec<PixelCoord>, negatives: Vec<PixelCoord>) -> Self {
        Self {
            positives,
            negatives,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.positives.is_empty() && self.negatives.is_empty()
    }

    /// Reports the first point that is out of bounds or appears in both lists.
    pub fn validate(&self, (height, width): (usize, usize)) -> Result<(), AnnotationError> {
        for &point in self.positives.iter().chain(&self.negatives) {
            if !point.in_bounds(height, width) {
                return Err(AnnotationError::OutOfBounds {
                    point,
                    height,
                    width,
                });
            }
        }
        let positives: std::collections::HashSet<_> = self.positives.iter().collect();
        if let Some(&point) = self.negatives.iter().find(|p| positives.contains(p)) {
            return Err(AnnotationError::PositiveNegativeOverlap { point });
        }
        Ok(())
    }

    pub fn flipped(&self, (height, width): (usize, usize), vertical: bool, horizontal: bool) -> Self {
        let flip = |p: &PixelCoord| {
            let (u, v) = flip_coord(p.u, p.v, height, width, vertical, horizontal);
            PixelCoord::new(u, v)
        };
        Self {
            positives: self.positives.iter().map(flip).collect(),
            negatives: self.negatives.iter().map(flip).collect(),
        }
    }
}

/// Which shape prior fills the shape slot of the total loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    #[default]
    Convex,
    Circ,
    None,
}

impl std::str::FromStr for ShapeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "convex" => Ok(Self::Convex),
            "circ" => Ok(Self::Circ),
            "none" => Ok(Self::None),
            other => Err(format!("unknown shape prior '{other}' (expected convex, circ or none)")),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("loss weight {name} = {value} must be finite and non-negative")]
pub struct InvalidWeight {
    pub name: &'static str,
    pub value: f64,
}

/// Weights of the segmentation, split, shape and count terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub seg: f64,
    pub split: f64,
    pub shape: f64,
    pub count: f64,
    pub shape_kind: ShapeKind,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            seg: 1.0,
            split: 1.0,
            shape: 1.0,
            count: 1.0,
            shape_kind: ShapeKind::Convex,
        }
    }
}

impl LossWeights {
    pub fn new(seg: f64, split: f64, shape: f64, count: f64, shape_kind: ShapeKind) -> Result<Self, InvalidWeight> {
        let w = Self {
            seg,
            split,
            shape,
            count,
            shape_kind,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), InvalidWeight> {
        for (name, value) in [
            ("seg", self.seg),
            ("split", self.split),
            ("shape", self.shape),
            ("count", self.count),
        ] {
            if !value.is_finite() || value < 0.0 {
                return Err(InvalidWeight { name, value });
            }
        }
        Ok(())
    }
}

/// Hard mask from a probability map: foreground iff fg > bg, ties go to background.
pub fn threshold_prediction(prob: &ProbabilityMap) -> BinaryMask {
    BinaryMask {
        height: prob.height,
        width: prob.width,
        data: prob
            .foreground
            .iter()
            .zip(&prob.background)
            .map(|(f, b)| f > b)
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_map_thresholds_to_background() {
        let mask = threshold_prediction(&ProbabilityMap::uniform(4, 5));
        assert!(mask.is_empty());
    }

    #[test]
    fn single_hot_pixel() {
        let mut fg = vec![0.0; 16];
        fg[6] = 1.0;
        let mask = threshold_prediction(&ProbabilityMap::from_foreground(4, 4, fg).unwrap());
        assert_eq!(mask.pixels().collect::<Vec<_>>(), vec![PixelCoord::new(1, 2)]);
    }

    #[test]
    fn threshold_matches_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let fg: Vec<f64> = (0..64).map(|_| rng.random::<f64>()).collect();
            let prob = ProbabilityMap::from_foreground(8, 8, fg.clone()).unwrap();
            let mask = threshold_prediction(&prob);
            for (i, &f) in fg.iter().enumerate() {
                let channels = [1.0 - f, f];
                let argmax = if channels[1] > channels[0] { 1 } else { 0 };
                assert_eq!(mask.data()[i], argmax == 1);
            }
        }
    }

    #[test]
    fn threshold_is_idempotent_through_one_hot() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let fg: Vec<f64> = (0..100).map(|_| rng.random::<f64>()).collect();
        let mask = threshold_prediction(&ProbabilityMap::from_foreground(10, 10, fg).unwrap());
        let one_hot = mask.data().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        let again = threshold_prediction(&ProbabilityMap::from_foreground(10, 10, one_hot).unwrap());
        assert_eq!(mask, again);
    }

    #[test]
    fn channel_sum_checked() {
        let err = ProbabilityMap::from_channels(1, 2, vec![0.5, 0.5], vec![0.5, 0.6]).unwrap_err();
        assert!(matches!(err, MapError::NotNormalized { index: 1, .. }));
        assert!(ProbabilityMap::from_channels(1, 1, vec![0.5], vec![0.5 + 5e-7]).is_ok());
    }

    #[test]
    fn validate_annotations() {
        assert!(AnnotationSet::default().validate((3, 3)).is_ok());
        let oob = AnnotationSet::new(vec![PixelCoord::new(5, 5)], vec![]);
        assert!(matches!(
            oob.validate((4, 4)),
            Err(AnnotationError::OutOfBounds { point, .. }) if point == PixelCoord::new(5, 5)
        ));
        let p = PixelCoord::new(1, 1);
        let overlap = AnnotationSet::new(vec![p], vec![PixelCoord::new(0, 0), p]);
        assert_eq!(
            overlap.validate((4, 4)),
            Err(AnnotationError::PositiveNegativeOverlap { point: p })
        );
    }

    #[test]
    fn annotation_json_uses_row_col_pairs() {
        let ann = AnnotationSet::new(vec![PixelCoord::new(2, 7)], vec![]);
        let json = serde_json::to_string(&ann).unwrap();
        assert_eq!(json, r#"{"positives":[[2,7]],"negatives":[]}"#);
    }

    #[test]
    fn weights_reject_negative() {
        assert!(LossWeights::new(1.0, -0.1, 0.0, 0.0, ShapeKind::None).is_err());
        assert!(LossWeights::new(1.0, f64::NAN, 0.0, 0.0, ShapeKind::None).is_err());
        assert!(LossWeights::new(0.0, 0.0, 0.0, 0.0, ShapeKind::Circ).is_ok());
    }

    #[test]
    fn flips_are_consistent() {
        let mask = BinaryMask::from_ascii(&["#..", "..."]);
        let ann = AnnotationSet::new(vec![PixelCoord::new(0, 0)], vec![]);
        let fm = mask.flipped(true, true);
        let fa = ann.flipped(mask.shape(), true, true);
        assert!(fm.contains(fa.positives[0]));
        assert_eq!(fa.positives[0], PixelCoord::new(1, 2));
    }
}
