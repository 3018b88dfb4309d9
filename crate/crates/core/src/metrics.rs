//! Counting and segmentation metrics: MAE, mIoU (percent) and their joint
//! indicator `Q_cs = mIoU / MAE`.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::losses::CountPair;
use crate::morphology::connected_components;
use crate::types::BinaryMask;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("metric over an empty set of images")]
    EmptyInput,
    #[error("image {index}: prediction {pred:?} and ground truth {gt:?} differ in shape")]
    ShapeMismatch {
        index: usize,
        pred: (usize, usize),
        gt: (usize, usize),
    },
    #[error("{preds} predictions for {gts} ground-truth masks")]
    LengthMismatch { preds: usize, gts: usize },
    #[error("Q_cs is unbounded when MAE is zero")]
    ZeroMae,
}

/// Instance count of a prediction: its number of 4-connected components.
pub fn count_from_mask(pred: &BinaryMask) -> usize {
    connected_components(pred).num_labels()
}

pub fn mae(pairs: &[CountPair]) -> Result<f64, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let total: f64 = pairs
        .iter()
        .map(|p| (p.predicted as f64 - p.truth as f64).abs())
        .sum();
    Ok(total / pairs.len() as f64)
}

/// Foreground IoU of one image; two empty masks score 1.
pub fn iou(pred: &BinaryMask, gt: &BinaryMask) -> f64 {
    let union = pred.union_count(gt);
    if union == 0 {
        1.0
    } else {
        pred.intersection_count(gt) as f64 / union as f64
    }
}

/// Mean per-image foreground IoU, in percent.
pub fn miou(preds: &[BinaryMask], gts: &[BinaryMask]) -> Result<f64, MetricsError> {
    if preds.len() != gts.len() {
        return Err(MetricsError::LengthMismatch {
            preds: preds.len(),
            gts: gts.len(),
        });
    }
    if preds.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut sum = 0.0;
    for (index, (p, g)) in preds.iter().zip(gts).enumerate() {
        if p.shape() != g.shape() {
            return Err(MetricsError::ShapeMismatch {
                index,
                pred: p.shape(),
                gt: g.shape(),
            });
        }
        sum += iou(p, g);
    }
    Ok(100.0 * sum / preds.len() as f64)
}

pub fn qcs(miou_percent: f64, mae: f64) -> Result<f64, MetricsError> {
    if mae <= 0.0 {
        return Err(MetricsError::ZeroMae);
    }
    Ok(miou_percent / mae)
}

/// Aggregate metrics over a set of images. `qcs` is `+inf` when `mae` is 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mae: f64,
    pub miou_percent: f64,
    #[serde(with = "qcs_serde")]
    pub qcs: f64,
    pub n_images: usize,
}

impl MetricReport {
    pub fn from_parts(mae: f64, miou_percent: f64, n_images: usize) -> Self {
        Self {
            mae,
            miou_percent,
            qcs: qcs(miou_percent, mae).unwrap_or(f64::INFINITY),
            n_images,
        }
    }

    pub fn evaluate(
        preds: &[BinaryMask],
        gts: &[BinaryMask],
        truth_counts: &[usize],
    ) -> Result<Self, MetricsError> {
        if truth_counts.len() != preds.len() {
            return Err(MetricsError::LengthMismatch {
                preds: preds.len(),
                gts: truth_counts.len(),
            });
        }
        let miou_percent = miou(preds, gts)?;
        let pairs: Vec<CountPair> = preds
            .iter()
            .zip(truth_counts)
            .map(|(p, &c)| CountPair::new(c, count_from_mask(p)))
            .collect();
        Ok(Self::from_parts(mae(&pairs)?, miou_percent, preds.len()))
    }

    pub fn qcs_is_infinite(&self) -> bool {
        self.qcs.is_infinite()
    }

    /// Model-selection order: a zero-MAE report beats any finite `Q_cs`;
    /// equal `Q_cs` falls back to mIoU.
    pub fn selection_cmp(&self, other: &Self) -> Ordering {
        self.qcs
            .total_cmp(&other.qcs)
            .then(self.miou_percent.total_cmp(&other.miou_percent))
    }
}

/// JSON has no infinity; an unbounded `Q_cs` is written as `null`.
mod qcs_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}
