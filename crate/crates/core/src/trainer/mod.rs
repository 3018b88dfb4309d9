//! Desk-scale training: single-image Adam steps on the weighted loss, with
//! periodic validation and best-`Q_cs` model selection.

pub mod adam;
pub mod network;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::losses::{total_loss_with, LossError, LossOptions, LossReport};
use crate::losses::CountPair;
use crate::metrics::{count_from_mask, iou, mae, miou, MetricReport, MetricsError};
use crate::synthgen::{DatasetEntry, Split};
use crate::types::{threshold_prediction, AnnotationSet, BinaryMask, ImageRGB, LossWeights};

pub use adam::{cosine_lr, Adam};
pub use network::{backward, forward, ForwardCache, NetworkError, NetworkParams};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training split is empty")]
    DatasetEmpty,
    #[error("non-finite loss or parameters at iteration {iteration}: {detail}")]
    DivergenceDetected {
        iteration: usize,
        detail: String,
        /// Parameters just before the failing step.
        params: Box<NetworkParams>,
    },
    #[error("invalid training config: {0}")]
    ConfigInvalid(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// One image with its point annotations and evaluation ground truth.
#[derive(Debug, Clone)]
pub struct Sample {
    pub name: String,
    pub image: ImageRGB,
    pub annotations: AnnotationSet,
    pub gt_mask: BinaryMask,
    pub count: usize,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Dataset {
    pub fn from_entries(entries: Vec<DatasetEntry>) -> Self {
        let mut ds = Dataset::default();
        for e in entries {
            let sample = Sample {
                name: format!("{}/{:05}", e.split.as_str(), e.index),
                gt_mask: e.scene.instance_mask.foreground(),
                count: e.scene.count,
                image: e.scene.image,
                annotations: e.scene.annotations,
            };
            ds.split_mut(e.split).push(sample);
        }
        ds
    }

    pub fn split(&self, split: Split) -> &[Sample] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn split_mut(&mut self, split: Split) -> &mut Vec<Sample> {
        match split {
            Split::Train => &mut self.train,
            Split::Val => &mut self.val,
            Split::Test => &mut self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub weights: LossWeights,
    pub learning_rate: f64,
    pub iterations: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub cosine: bool,
    pub seed: u64,
    /// Validate (and possibly retain a checkpoint) every this many iterations.
    pub checkpoint_every: usize,
    /// Random vertical/horizontal flips, each with probability 0.5.
    pub flips: bool,
    pub loss_options: LossOptions,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            learning_rate: 1e-3,
            iterations: 2000,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            cosine: true,
            seed: 0,
            checkpoint_every: 250,
            flips: true,
            loss_options: LossOptions::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(TrainError::ConfigInvalid("learning rate must be positive".into()));
        }
        if self.checkpoint_every == 0 {
            return Err(TrainError::ConfigInvalid("checkpoint cadence must be positive".into()));
        }
        self.weights
            .validate()
            .map_err(|e| TrainError::ConfigInvalid(e.to_string()))
    }
}

/// Per-iteration training record (one JSON object per line in the log file).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub iteration: usize,
    pub seg: f64,
    pub split: f64,
    pub shape: f64,
    pub count: f64,
    pub total: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub iteration: usize,
    pub report: MetricReport,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best-`Q_cs` parameters on validation, or the final ones without a validation split.
    pub best: NetworkParams,
    pub best_report: Option<MetricReport>,
    pub final_params: NetworkParams,
    pub log: Vec<LogRecord>,
    pub validations: Vec<ValidationRecord>,
}

/// Loss report for one image under the current parameters.
pub fn step_loss(
    params: &NetworkParams,
    image: &ImageRGB,
    ann: &AnnotationSet,
    truth_count: usize,
    weights: &LossWeights,
    options: &LossOptions,
) -> Result<(LossReport, ForwardCache), TrainError> {
    let (prob, cache) = forward(params, image)?;
    let pred = threshold_prediction(&prob);
    let report = total_loss_with(&prob, &pred, ann, truth_count, weights, options)?;
    Ok((report, cache))
}

pub fn train(config: &TrainConfig, dataset: &Dataset) -> Result<TrainOutcome, TrainError> {
    train_from(config, dataset, NetworkParams::init(config.seed))
}

/// Trains starting from `params`.
pub fn train_from(config: &TrainConfig, dataset: &Dataset, mut params: NetworkParams) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if config.iterations > 0 && dataset.train.is_empty() {
        return Err(TrainError::DatasetEmpty);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(crate::synthgen::derive_seed(config.seed, 0x7EA1));
    let mut adam = Adam::new(params.num_params(), config.beta1, config.beta2, config.epsilon);
    let mut order: Vec<usize> = Vec::new();
    let mut log = Vec::with_capacity(config.iterations);
    let mut validations = Vec::new();
    let mut best: Option<(MetricReport, NetworkParams)> = None;

    for iteration in 0..config.iterations {
        if order.is_empty() {
            order = (0..dataset.train.len()).collect();
            order.shuffle(&mut rng);
            order.reverse();
        }
        let sample = &dataset.train[order.pop().expect("refilled above")];
        let (flip_v, flip_h) = if config.flips {
            (rng.random_bool(0.5), rng.random_bool(0.5))
        } else {
            (false, false)
        };
        let image = sample.image.flipped(flip_v, flip_h);
        let ann = sample.annotations.flipped(image.shape(), flip_v, flip_h);

        let lr = if config.cosine {
            cosine_lr(config.learning_rate, iteration, config.iterations)
        } else {
            config.learning_rate
        };
        let truth = ann.positives.len();
        let (report, cache) = step_loss(&params, &image, &ann, truth, &config.weights, &config.loss_options)?;
        if !report.total.is_finite() || report.grad.iter().any(|g| !g.is_finite()) {
            return Err(TrainError::DivergenceDetected {
                iteration,
                detail: format!(
                    "seg={} split={} shape={} count={} total={}",
                    report.seg, report.split, report.shape, report.count, report.total
                ),
                params: Box::new(params),
            });
        }
        let grads = backward(&params, &cache, &report.grad)?;
        let before = params.clone();
        adam.update(&mut params, &grads, lr);
        if !params.is_finite() {
            return Err(TrainError::DivergenceDetected {
                iteration,
                detail: "parameters became non-finite".into(),
                params: Box::new(before),
            });
        }
        log.push(LogRecord {
            iteration,
            seg: report.seg,
            split: report.split,
            shape: report.shape,
            count: report.count,
            total: report.total,
            lr,
        });

        let done = iteration + 1;
        if !dataset.val.is_empty() && (done % config.checkpoint_every == 0 || done == config.iterations) {
            let report = evaluate(&params, &dataset.val)?.report;
            validations.push(ValidationRecord {
                iteration: done,
                report,
            });
            let improved = best
                .as_ref()
                .is_none_or(|(r, _)| report.selection_cmp(r) == std::cmp::Ordering::Greater);
            if improved {
                best = Some((report, params.clone()));
            }
        }
    }

    let (best_report, best_params) = match best {
        Some((r, p)) => (Some(r), p),
        None => (None, params.clone()),
    };
    Ok(TrainOutcome {
        best: best_params,
        best_report,
        final_params: params,
        log,
        validations,
    })
}

/// Hard mask and instance count for one image.
pub fn predict(params: &NetworkParams, image: &ImageRGB) -> Result<(BinaryMask, usize), TrainError> {
    let (prob, _) = forward(params, image)?;
    let mask = threshold_prediction(&prob);
    let count = count_from_mask(&mask);
    Ok((mask, count))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageEval {
    pub name: String,
    pub truth: usize,
    pub predicted: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: MetricReport,
    pub per_image: Vec<ImageEval>,
}

/// Evaluates predictions against ground-truth masks and counts.
pub fn evaluate(params: &NetworkParams, samples: &[Sample]) -> Result<Evaluation, TrainError> {
    let preds = samples
        .iter()
        .map(|s| predict(params, &s.image).map(|(m, _)| m))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(evaluate_masks(samples, &preds)?)
}

/// Evaluates given prediction masks (one per sample); counts are their blob counts.
pub fn evaluate_masks(samples: &[Sample], preds: &[BinaryMask]) -> Result<Evaluation, MetricsError> {
    let counted: Vec<(BinaryMask, usize)> = preds.iter().map(|p| (p.clone(), count_from_mask(p))).collect();
    evaluate_predictions(samples, &counted)
}

/// Evaluates `(mask, count)` predictions, for callers whose counts do not come
/// from the mask's blobs (e.g. scoring instance-labelled ground truth).
pub fn evaluate_predictions(samples: &[Sample], preds: &[(BinaryMask, usize)]) -> Result<Evaluation, MetricsError> {
    if samples.len() != preds.len() {
        return Err(MetricsError::LengthMismatch {
            preds: preds.len(),
            gts: samples.len(),
        });
    }
    let masks: Vec<BinaryMask> = preds.iter().map(|(m, _)| m.clone()).collect();
    let gts: Vec<BinaryMask> = samples.iter().map(|s| s.gt_mask.clone()).collect();
    let miou_percent = miou(&masks, &gts)?;
    let pairs: Vec<CountPair> = samples
        .iter()
        .zip(preds)
        .map(|(s, (_, c))| CountPair::new(s.count, *c))
        .collect();
    let report = MetricReport::from_parts(mae(&pairs)?, miou_percent, samples.len());
    let per_image = samples
        .iter()
        .zip(preds)
        .map(|(s, (p, c))| ImageEval {
            name: s.name.clone(),
            truth: s.count,
            predicted: *c,
            iou: iou(p, &s.gt_mask),
        })
        .collect();
    Ok(Evaluation { report, per_image })
}
