//! Point-supervised loss terms and their weighted total.
//!
//! Every term returns its value together with `∂L/∂fg`, the gradient with
//! respect to the foreground channel of the probability map. Discrete
//! selections (watershed regions, connected-component supports, hulls,
//! boundaries) are recomputed from the inputs and then held constant: no
//! gradient flows through them.
//!
//! The circularity and count gradients are surrogates. They point in a
//! descent direction for the measure but are not derivatives of the value.

use thiserror::Error;

use crate::morphology::{connected_components, extract_blobs, Blob};
use crate::shape::{convexity, huber_z, huber_z_derivative, lsc_with_mode, LscMode};
use crate::types::{
    clamp_probability, AnnotationError, AnnotationSet, BinaryMask, InvalidWeight, LossWeights,
    ProbabilityMap, ShapeKind,
};
use crate::watershed::{expandable_regions, ErosionMode, WatershedError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("count loss over an empty list of images")]
    EmptyPairList,
    #[error("prediction mask shape {mask:?} differs from probability map shape {map:?}")]
    ShapeMismatch {
        mask: (usize, usize),
        map: (usize, usize),
    },
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
    #[error(transparent)]
    Weight(#[from] InvalidWeight),
    #[error(transparent)]
    Watershed(#[from] WatershedError),
}

/// Form of the negative-point term of the segmentation loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SegMode {
    /// `-log(1 - fg)` at negatives: binary cross-entropy.
    #[default]
    CrossEntropy,
    /// `-(1 - log fg)` at negatives, as typeset in the original formula. It is
    /// unbounded below and kept only to show how it diverges.
    Literal,
}

/// Knobs for variants of the terms. The defaults are used for training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LossOptions {
    pub seg_mode: SegMode,
    pub erosion: ErosionMode,
    pub lsc_mode: LscMode,
}

/// A scalar loss and its gradient with respect to the foreground channel.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad: Vec<f64>,
}

impl LossValue {
    fn zero(n: usize) -> Self {
        Self {
            value: 0.0,
            grad: vec![0.0; n],
        }
    }
}

/// Per-term values (unweighted), weighted total, and total gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub seg: f64,
    pub split: f64,
    pub shape: f64,
    pub count: f64,
    pub total: f64,
    pub grad: Vec<f64>,
}

/// Ground-truth and predicted instance counts of one image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CountPair {
    pub truth: usize,
    pub predicted: usize,
}

impl CountPair {
    pub fn new(truth: usize, predicted: usize) -> Self {
        Self { truth, predicted }
    }
}

fn check_shape(prob: &ProbabilityMap, pred: &BinaryMask) -> Result<(), LossError> {
    if prob.shape() != pred.shape() {
        return Err(LossError::ShapeMismatch {
            mask: pred.shape(),
            map: prob.shape(),
        });
    }
    Ok(())
}

/// Accumulates `-log fg` over `positive` pixels and `-log(1 - fg)` over
/// `negative` pixels.
fn cross_entropy<'a>(
    prob: &ProbabilityMap,
    positive: impl IntoIterator<Item = usize>,
    negative: impl IntoIterator<Item = usize>,
    out: &mut LossValue,
) {
    let fg = prob.foreground();
    for i in positive {
        let f = clamp_probability(fg[i]);
        out.value -= f.ln();
        out.grad[i] -= 1.0 / f;
    }
    for i in negative {
        let f = clamp_probability(fg[i]);
        out.value -= (1.0 - f).ln();
        out.grad[i] += 1.0 / (1.0 - f);
    }
}

/// Cross-entropy at the annotated points only.
pub fn seg_loss(prob: &ProbabilityMap, ann: &AnnotationSet) -> LossValue {
    seg_loss_with_mode(prob, ann, SegMode::CrossEntropy)
}

pub fn seg_loss_with_mode(prob: &ProbabilityMap, ann: &AnnotationSet, mode: SegMode) -> LossValue {
    let w = prob.width();
    let mut out = LossValue::zero(prob.len());
    let positives = ann.positives.iter().map(|p| p.index(w));
    match mode {
        SegMode::CrossEntropy => {
            cross_entropy(prob, positives, ann.negatives.iter().map(|p| p.index(w)), &mut out)
        }
        SegMode::Literal => {
            cross_entropy(prob, positives, std::iter::empty(), &mut out);
            for p in &ann.negatives {
                let i = p.index(w);
                let f = clamp_probability(prob.foreground()[i]);
                out.value -= 1.0 - f.ln();
                out.grad[i] += 1.0 / f;
            }
        }
    }
    out
}

/// Split loss over already selected (eroded) positive and negative regions.
pub fn split_loss_on_regions(
    prob: &ProbabilityMap,
    positive_regions: &[BinaryMask],
    negative_regions: &[BinaryMask],
) -> LossValue {
    let mut out = LossValue::zero(prob.len());
    let indices = |regions: &[BinaryMask]| -> Vec<usize> {
        regions
            .iter()
            .flat_map(|r| r.data().iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i))
            .collect()
    };
    cross_entropy(prob, indices(positive_regions), indices(negative_regions), &mut out);
    out
}

/// Cross-entropy over the eroded selective-watershed regions.
pub fn split_loss(
    prob: &ProbabilityMap,
    pred: &BinaryMask,
    ann: &AnnotationSet,
) -> Result<LossValue, LossError> {
    split_loss_with_mode(prob, pred, ann, ErosionMode::PerRegion)
}

pub fn split_loss_with_mode(
    prob: &ProbabilityMap,
    pred: &BinaryMask,
    ann: &AnnotationSet,
    erosion: ErosionMode,
) -> Result<LossValue, LossError> {
    check_shape(prob, pred)?;
    if ann.is_empty() {
        return Ok(LossValue::zero(prob.len()));
    }
    let (pos, neg) = expandable_regions(pred, prob, ann, erosion)?;
    Ok(split_loss_on_regions(prob, &pos, &neg))
}

/// Soft convexity of a blob: summed foreground probability over its hull area.
pub fn soft_convexity(prob: &ProbabilityMap, blob: &Blob) -> f64 {
    let w = prob.width();
    let mass: f64 = blob.pixels.iter().map(|p| prob.foreground()[p.index(w)]).sum();
    mass / blob.hull_area
}

/// Convexity loss with blob supports and hulls held fixed.
pub fn convex_loss_on_blobs(prob: &ProbabilityMap, blobs: &[Blob]) -> LossValue {
    let mut out = LossValue::zero(prob.len());
    if blobs.is_empty() {
        return out;
    }
    let n = blobs.len() as f64;
    let w = prob.width();
    for blob in blobs {
        let c = soft_convexity(prob, blob);
        out.value += huber_z(c, 1.0) / n;
        let g = huber_z_derivative(c, 1.0) / (n * blob.hull_area);
        for p in &blob.pixels {
            out.grad[p.index(w)] += g;
        }
    }
    out
}

/// Mean Huber residual of blob convexity against 1.
pub fn convex_loss(prob: &ProbabilityMap, pred: &BinaryMask) -> Result<LossValue, LossError> {
    check_shape(prob, pred)?;
    let blobs = extract_blobs(&connected_components(pred));
    Ok(convex_loss_on_blobs(prob, &blobs))
}

/// Mean Huber residual of the hard convexity measure against 1; the value the
/// soft loss reaches when the map is one-hot on its blobs.
pub fn hard_convex_value(pred: &BinaryMask) -> f64 {
    let blobs = extract_blobs(&connected_components(pred));
    if blobs.is_empty() {
        return 0.0;
    }
    blobs.iter().map(|b| huber_z(convexity(b), 1.0)).sum::<f64>() / blobs.len() as f64
}

/// Mean Huber residual of the radius spread against 0, with a surrogate
/// gradient pulling far boundary pixels in and pushing near ones out.
pub fn circ_loss(prob: &ProbabilityMap, pred: &BinaryMask) -> Result<LossValue, LossError> {
    circ_loss_with_mode(prob, pred, LscMode::Boundary)
}

pub fn circ_loss_with_mode(
    prob: &ProbabilityMap,
    pred: &BinaryMask,
    mode: LscMode,
) -> Result<LossValue, LossError> {
    check_shape(prob, pred)?;
    let blobs = extract_blobs(&connected_components(pred));
    let mut out = LossValue::zero(prob.len());
    if blobs.is_empty() {
        return Ok(out);
    }
    let n = blobs.len() as f64;
    let w = prob.width();
    for blob in &blobs {
        let spread = lsc_with_mode(blob, mode);
        out.value += huber_z(spread, 0.0) / n;
        let support = match mode {
            LscMode::Boundary => &blob.boundary,
            LscMode::AllPixels => &blob.pixels,
        };
        let radii: Vec<f64> = support.iter().map(|&p| blob.radius(p)).collect();
        let mean = radii.iter().sum::<f64>() / radii.len() as f64;
        let (lo, hi) = radii
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| (lo.min(r), hi.max(r)));
        let scale = huber_z_derivative(spread, 0.0) / (n * (hi - lo + 1e-9));
        for (p, r) in support.iter().zip(&radii) {
            out.grad[p.index(w)] += scale * (r - mean);
        }
    }
    Ok(out)
}

/// Mean Huber residual between predicted and true counts.
pub fn count_loss(pairs: &[CountPair]) -> Result<f64, LossError> {
    if pairs.is_empty() {
        return Err(LossError::EmptyPairList);
    }
    let sum: f64 = pairs
        .iter()
        .map(|p| huber_z(p.predicted as f64, p.truth as f64))
        .sum();
    Ok(sum / pairs.len() as f64)
}

/// Surrogate count gradient: when there are too many blobs, the surplus
/// smallest ones are pushed towards background. Too few blobs give no
/// gradient because nothing marks where the missing ones are.
pub fn count_grad(prob: &ProbabilityMap, pred: &BinaryMask, truth: usize) -> Result<Vec<f64>, LossError> {
    check_shape(prob, pred)?;
    let mut grad = vec![0.0; prob.len()];
    let mut blobs = extract_blobs(&connected_components(pred));
    let predicted = blobs.len();
    if predicted <= truth {
        return Ok(grad);
    }
    let slope = huber_z_derivative(predicted as f64, truth as f64);
    blobs.sort_by_key(|b| (b.pixel_area, b.id));
    let w = prob.width();
    for blob in blobs.iter().take(predicted - truth) {
        let g = slope / blob.pixel_area as f64;
        for p in &blob.pixels {
            grad[p.index(w)] += g;
        }
    }
    Ok(grad)
}

/// Weighted sum of the enabled terms. Terms with zero weight are not evaluated
/// and report 0.
pub fn total_loss(
    prob: &ProbabilityMap,
    pred: &BinaryMask,
    ann: &AnnotationSet,
    truth_count: usize,
    weights: &LossWeights,
) -> Result<LossReport, LossError> {
    total_loss_with(prob, pred, ann, truth_count, weights, &LossOptions::default())
}

pub fn total_loss_with(
    prob: &ProbabilityMap,
    pred: &BinaryMask,
    ann: &AnnotationSet,
    truth_count: usize,
    weights: &LossWeights,
    options: &LossOptions,
) -> Result<LossReport, LossError> {
    weights.validate()?;
    check_shape(prob, pred)?;
    ann.validate(prob.shape())?;

    let mut report = LossReport {
        seg: 0.0,
        split: 0.0,
        shape: 0.0,
        count: 0.0,
        total: 0.0,
        grad: vec![0.0; prob.len()],
    };
    let add = |weight: f64, term: LossValue, slot: &mut f64, grad: &mut [f64]| {
        *slot = term.value;
        for (g, t) in grad.iter_mut().zip(&term.grad) {
            *g += weight * t;
        }
    };
    let mut grad = std::mem::take(&mut report.grad);

    if weights.seg > 0.0 {
        add(weights.seg, seg_loss_with_mode(prob, ann, options.seg_mode), &mut report.seg, &mut grad);
    }
    if weights.split > 0.0 {
        let term = split_loss_with_mode(prob, pred, ann, options.erosion)?;
        add(weights.split, term, &mut report.split, &mut grad);
    }
    if weights.shape > 0.0 {
        let term = match weights.shape_kind {
            ShapeKind::Convex => Some(convex_loss(prob, pred)?),
            ShapeKind::Circ => Some(circ_loss_with_mode(prob, pred, options.lsc_mode)?),
            ShapeKind::None => None,
        };
        if let Some(term) = term {
            add(weights.shape, term, &mut report.shape, &mut grad);
        }
    }
    if weights.count > 0.0 {
        let predicted = connected_components(pred).num_labels();
        let value = count_loss(&[CountPair::new(truth_count, predicted)])?;
        let term = LossValue {
            value,
            grad: count_grad(prob, pred, truth_count)?,
        };
        add(weights.count, term, &mut report.count, &mut grad);
    }

    report.grad = grad;
    report.total = weights.seg * report.seg
        + weights.split * report.split
        + weights.shape * report.shape
        + weights.count * report.count;
    Ok(report)
}
