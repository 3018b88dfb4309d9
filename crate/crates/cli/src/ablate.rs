use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};
use triple_s::formats::{self, load_dataset, save_checkpoint, write_bytes};
use triple_s::synthgen::Split;
use triple_s::trainer::{self, evaluate, Dataset, TrainConfig};
use triple_s::{MetricReport, ShapeKind};

use crate::commands::loss_weights;
use crate::error::CliError;

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    /// JSON list of `{"name", "weights": [seg, split, shape, count], "shape", "iters"?, "lr"?}`.
    #[arg(long)]
    configs: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Split the table is computed on.
    #[arg(long, default_value = "test")]
    split: Split,
    /// Default iteration count for rows that do not set one.
    #[arg(long, default_value_t = 2000)]
    iters: usize,
    /// Default learning rate for rows that do not set one.
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Initialisation and shuffling seed shared by every row.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationConfig {
    pub name: String,
    pub weights: [f64; 4],
    #[serde(default)]
    pub shape: ShapeKind,
    pub iters: Option<usize>,
    pub lr: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<MetricReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn run_row(config: &AblationConfig, args: &AblateArgs, dataset: &Dataset, index: usize) -> Result<MetricReport, CliError> {
    let train_config = TrainConfig {
        weights: loss_weights(config.weights, config.shape)?,
        learning_rate: config.lr.unwrap_or(args.lr),
        iterations: config.iters.unwrap_or(args.iters),
        seed: args.seed,
        ..Default::default()
    };
    let outcome = trainer::train(&train_config, dataset)?;
    save_checkpoint(&outcome.best, &args.out.join(format!("row{index:02}.ckpt")))?;
    let saved = formats::load_checkpoint(&args.out.join(format!("row{index:02}.ckpt")))?;
    Ok(evaluate(&saved, dataset.split(args.split))?.report)
}

fn cell(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.2}")
    } else {
        "inf".into()
    }
}

pub fn markdown_table(rows: &[AblationRow]) -> String {
    let mut out = String::from("| Configuration | mIoU (%) | MAE | Q_cs |\n|---|---:|---:|---:|\n");
    for row in rows {
        match (&row.report, &row.error) {
            (Some(r), _) => writeln!(
                out,
                "| {} | {} | {} | {} |",
                row.name,
                cell(r.miou_percent),
                cell(r.mae),
                cell(r.qcs)
            ),
            (None, e) => writeln!(out, "| {} | failed: {} | - | - |", row.name, e.as_deref().unwrap_or("unknown")),
        }
        .expect("write to string");
    }
    out
}

pub fn ablate(args: AblateArgs) -> Result<(), CliError> {
    let bytes = formats::read_bytes(&args.configs)?;
    let configs: Vec<AblationConfig> = serde_json::from_slice(&bytes)
        .map_err(|e| CliError::Usage(format!("{}: {e}", args.configs.display())))?;
    if configs.is_empty() {
        return Err(CliError::Usage("no configurations given".into()));
    }
    let dataset = load_dataset(&args.data)?;
    if dataset.split(args.split).is_empty() {
        return Err(CliError::Usage(format!("split '{}' has no images", args.split.as_str())));
    }

    let mut rows = Vec::with_capacity(configs.len());
    let mut first_error = None;
    for (index, config) in configs.iter().enumerate() {
        eprintln!("[{}/{}] {}", index + 1, configs.len(), config.name);
        match run_row(config, &args, &dataset, index) {
            Ok(report) => rows.push(AblationRow {
                name: config.name.clone(),
                report: Some(report),
                error: None,
            }),
            Err(e) => {
                eprintln!("  failed: {e}");
                rows.push(AblationRow {
                    name: config.name.clone(),
                    report: None,
                    error: Some(e.to_string()),
                });
                first_error.get_or_insert(e);
            }
        }
    }

    let table = markdown_table(&rows);
    write_bytes(&args.out.join("ablation.md"), table.as_bytes())?;
    let mut json = serde_json::to_vec_pretty(&rows).expect("rows serialize");
    json.push(b'\n');
    write_bytes(&args.out.join("ablation.json"), &json)?;
    print!("{table}");

    match first_error {
        Some(e) if rows.iter().all(|r| r.report.is_none()) => Err(e),
        _ => Ok(()),
    }
}
