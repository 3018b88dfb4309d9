use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};
use triple_s::formats::{
    self, load_checkpoint, load_dataset, load_pfm, save_checkpoint, write_bytes, write_dataset, write_json_lines,
    FormatError,
};
use triple_s::synthgen::{SceneConfig, Split, SplitSpec};
use triple_s::trainer::{self, evaluate, evaluate_predictions, Dataset, TrainConfig, TrainError};
use triple_s::types::{threshold_prediction, AnnotationSet, BinaryMask, PixelCoord};
use triple_s::watershed::selective_watershed;
use triple_s::{LossWeights, MetricReport, ShapeKind};

use crate::error::CliError;
use crate::{render, sibling};

pub fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or("expected HxW, e.g. 64x64")?;
    let h = h.trim().parse().map_err(|_| format!("bad height '{h}'"))?;
    let w = w.trim().parse().map_err(|_| format!("bad width '{w}'"))?;
    Ok((h, w))
}

pub fn parse_range(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(':').ok_or("expected MIN:MAX")?;
    let a: usize = a.trim().parse().map_err(|_| format!("bad minimum '{a}'"))?;
    let b: usize = b.trim().parse().map_err(|_| format!("bad maximum '{b}'"))?;
    if a > b {
        return Err(format!("invalid range {a}:{b} (minimum exceeds maximum)"));
    }
    Ok((a, b))
}

pub fn parse_radius(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(':').ok_or("expected MIN:MAX")?;
    let a: f64 = a.trim().parse().map_err(|_| format!("bad minimum '{a}'"))?;
    let b: f64 = b.trim().parse().map_err(|_| format!("bad maximum '{b}'"))?;
    if !(a <= b) {
        return Err(format!("invalid range {a}:{b}"));
    }
    Ok((a, b))
}

pub fn parse_split(s: &str) -> Result<SplitSpec, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [a, b, c] = parts[..] else {
        return Err("expected TRAIN:VAL:TEST percentages".into());
    };
    let p = |x: &str| x.trim().parse::<u32>().map_err(|_| format!("bad percentage '{x}'"));
    SplitSpec::new(p(a)?, p(b)?, p(c)?).map_err(|e| e.to_string())
}

pub fn parse_weights(s: &str) -> Result<[f64; 4], String> {
    let values = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|_| format!("bad weight '{x}'")))
        .collect::<Result<Vec<_>, _>>()?;
    <[f64; 4]>::try_from(values).map_err(|v| format!("expected 4 weights SEG,SPLIT,SHAPE,COUNT, got {}", v.len()))
}

pub fn loss_weights(w: [f64; 4], shape: ShapeKind) -> Result<LossWeights, CliError> {
    LossWeights::new(w[0], w[1], w[2], w[3], shape).map_err(|e| CliError::Usage(e.to_string()))
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value = "64x64", value_parser = parse_size)]
    size: (usize, usize),
    #[arg(long, default_value = "3:8", value_parser = parse_range)]
    berries: (usize, usize),
    /// Berry semi-axis range in pixels.
    #[arg(long, default_value = "3.5:6", value_parser = parse_radius)]
    radius: (f64, f64),
    /// Keep berries apart so that none touch.
    #[arg(long)]
    separated: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "90:5:5", value_parser = parse_split)]
    split: SplitSpec,
}

pub fn gen(args: GenArgs) -> Result<(), CliError> {
    let config = SceneConfig {
        height: args.size.0,
        width: args.size.1,
        berry_count_range: args.berries,
        radius_range: args.radius,
        separated: args.separated,
        seed: args.seed,
        ..Default::default()
    };
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let manifest = write_dataset(&config, args.n, args.split, &args.out)?;
    eprintln!(
        "wrote {} images ({} train / {} val / {} test) to {}",
        manifest.records.len(),
        manifest.split_len(Split::Train),
        manifest.split_len(Split::Val),
        manifest.split_len(Split::Test),
        args.out.display()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Loss weights SEG,SPLIT,SHAPE,COUNT.
    #[arg(long, default_value = "1,1,1,0", value_parser = parse_weights)]
    weights: [f64; 4],
    #[arg(long, default_value = "convex")]
    shape: ShapeKind,
    #[arg(long, default_value_t = 2000)]
    iters: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Validate every this many iterations.
    #[arg(long, default_value_t = 250)]
    checkpoint_every: usize,
    #[arg(long)]
    out: PathBuf,
    /// Line-delimited JSON training log [default: OUT.log.jsonl].
    #[arg(long)]
    log: Option<PathBuf>,
}

pub fn train(args: TrainArgs) -> Result<(), CliError> {
    let dataset = load_dataset(&args.data)?;
    let config = TrainConfig {
        weights: loss_weights(args.weights, args.shape)?,
        learning_rate: args.lr,
        iterations: args.iters,
        seed: args.seed,
        checkpoint_every: args.checkpoint_every,
        ..Default::default()
    };
    let log_path = args.log.unwrap_or_else(|| sibling(&args.out, ".log.jsonl"));
    let outcome = match trainer::train(&config, &dataset) {
        Ok(o) => o,
        Err(TrainError::DivergenceDetected { iteration, detail, params }) => {
            let dump = sibling(&args.out, ".diverged");
            save_checkpoint(&params, &dump)?;
            eprintln!("parameters before the failing step saved to {}", dump.display());
            return Err(CliError::Divergence { iteration, detail });
        }
        Err(e) => return Err(e.into()),
    };
    save_checkpoint(&outcome.best, &args.out)?;
    write_json_lines(&log_path, &outcome.log)?;

    // Report what was actually written, after f32 rounding.
    let saved = load_checkpoint(&args.out)?;
    if dataset.val.is_empty() {
        eprintln!("no validation split; skipping the validation report");
    } else {
        let report = evaluate(&saved, &dataset.val)?.report;
        println!("{}", serde_json::to_string(&report).expect("report serializes"));
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, required_unless_present = "gt_as_pred")]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    #[arg(long)]
    report: PathBuf,
    /// Per-image CSV [default: REPORT with a .csv extension].
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Score the ground-truth masks against themselves instead of a model.
    #[arg(long)]
    gt_as_pred: bool,
}

/// Evaluation report as written by `tss eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: Split,
    #[serde(flatten)]
    pub metrics: MetricReport,
    pub qcs_infinite: bool,
}

pub fn eval(args: EvalArgs) -> Result<(), CliError> {
    // Read the checkpoint first so corruption is reported before dataset problems.
    let params = match &args.ckpt {
        Some(path) if !args.gt_as_pred => Some(load_checkpoint(path)?),
        _ => None,
    };
    let dataset: Dataset = load_dataset(&args.data)?;
    let samples = dataset.split(args.split);
    if samples.is_empty() {
        return Err(CliError::Usage(format!("split '{}' has no images", args.split.as_str())));
    }
    let evaluation = match &params {
        Some(p) => evaluate(p, samples)?,
        // Ground truth is instance-labelled, so its count is the number of
        // instances rather than of (possibly merged) blobs.
        None => {
            let preds: Vec<(BinaryMask, usize)> = samples.iter().map(|s| (s.gt_mask.clone(), s.count)).collect();
            evaluate_predictions(samples, &preds).map_err(|e| CliError::Usage(e.to_string()))?
        }
    };
    let report = EvalReport {
        split: args.split,
        metrics: evaluation.report,
        qcs_infinite: evaluation.report.qcs_is_infinite(),
    };
    let mut json = serde_json::to_vec_pretty(&report).expect("report serializes");
    json.push(b'\n');
    write_bytes(&args.report, &json)?;

    let mut csv = String::from("image,truth,predicted,iou\n");
    for row in &evaluation.per_image {
        writeln!(csv, "{},{},{},{}", row.name, row.truth, row.predicted, row.iou).expect("write to string");
    }
    let csv_path = args.csv.unwrap_or_else(|| args.report.with_extension("csv"));
    write_bytes(&csv_path, csv.as_bytes())?;
    println!("{}", serde_json::to_string(&report).expect("report serializes"));
    Ok(())
}

#[derive(Debug, Args)]
pub struct WatershedArgs {
    /// Foreground probability map (single-channel PFM).
    #[arg(long)]
    prob: PathBuf,
    /// Annotation JSON with "positives" and "negatives".
    #[arg(long)]
    points: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Deserialize)]
struct PointsFile {
    #[serde(default)]
    positives: Vec<PixelCoord>,
    #[serde(default)]
    negatives: Vec<PixelCoord>,
}

pub fn watershed(args: WatershedArgs) -> Result<(), CliError> {
    let prob = match load_pfm(&args.prob) {
        Ok(p) => p,
        Err(e @ (FormatError::Pfm(_) | FormatError::Map(_))) => return Err(CliError::Usage(e.to_string())),
        Err(e) => return Err(e.into()),
    };
    let bytes = formats::read_bytes(&args.points)?;
    let points: PointsFile = serde_json::from_slice(&bytes)
        .map_err(|e| CliError::Usage(format!("{}: {e}", args.points.display())))?;
    let ann = AnnotationSet::new(points.positives, points.negatives);
    ann.validate(prob.shape()).map_err(|e| CliError::Usage(e.to_string()))?;
    let regions = selective_watershed(&threshold_prediction(&prob), &prob, &ann)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    render::save_regions(&regions, &ann, &args.out)?;
    eprintln!(
        "{} positive and {} negative regions written to {}",
        regions.positive_regions.len(),
        regions.negative_regions.len(),
        args.out.display()
    );
    Ok(())
}
