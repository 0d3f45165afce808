//! `smartbin` — file-based front end for the sorting-and-composting
//! pipeline. Every subcommand reads and writes plain files; given the
//! same flags, files, and seed the output bytes are identical.
//!
//! Exit codes: 0 success, 2 input or validation error, 3 violated
//! internal invariant. Nothing else.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use smartbin_core::compost;
use smartbin_core::controller::{self, BinConfig, ScriptedEvent};
use smartbin_core::dataset::{self, GroundTruthBox};
use smartbin_core::detector::{self, Detection, ImageDetections, RawGridOutput};
use smartbin_core::metrics::{self, CurveConfig, Snapshot};
use smartbin_core::svm::{self, KernelSpec, LabeledExample, SvmModel, TrainConfig};

#[derive(Parser)]
#[command(
    name = "smartbin",
    version,
    about = "Waste-sorting pipeline tools: dataset splits, margin classifier, \
             detection post-processing, evaluation curves, bin control and \
             composting simulation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split a dataset manifest into train/test id lists
    SplitDataset(SplitDatasetArgs),
    /// Train the margin classifier on labeled feature vectors
    TrainSvm(TrainSvmArgs),
    /// Label feature vectors with a trained model
    Predict(PredictArgs),
    /// Decode a raw grid tensor file into detections
    Decode(DecodeArgs),
    /// Suppress overlapping detections
    Nms(NmsArgs),
    /// Score detection snapshots into a mAP-vs-iteration curve
    EvalMap(EvalMapArgs),
    /// Run the composting model and report the final composition
    SimulateCompost(SimulateCompostArgs),
    /// Replay a bin event script and write the trace
    RunBin(RunBinArgs),
}

#[derive(Args)]
struct SplitDatasetArgs {
    /// Manifest file: JSON array of {image_id, label_path}
    #[arg(long)]
    manifest: PathBuf,
    /// Fraction of ids assigned to the training side
    #[arg(long, default_value_t = 0.9)]
    fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Where to write the split JSON {seed, train, test}
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainSvmArgs {
    /// Training set: JSON array of {x: [..], y: 1|-1}
    #[arg(long)]
    data: PathBuf,
    /// linear | polynomial | rbf
    #[arg(long, default_value = "linear")]
    kernel: String,
    /// Soft-margin penalty
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    /// Polynomial degree (polynomial kernel only)
    #[arg(long, default_value_t = 3)]
    degree: u32,
    /// Polynomial offset (polynomial kernel only)
    #[arg(long, default_value_t = 0.0)]
    coef0: f64,
    /// Width parameter (rbf kernel only)
    #[arg(long, default_value_t = 0.5)]
    gamma: f64,
    #[arg(long, default_value_t = 200)]
    max_epochs: usize,
    #[arg(long, default_value_t = 1e-6)]
    tolerance: f64,
    /// Where to write the model JSON
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// JSON array of feature vectors
    #[arg(long)]
    vectors: PathBuf,
    /// Output file for the labels (one per line); stdout if absent
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DecodeArgs {
    /// Raw tensor file: JSON {grid_size, input_size, anchors, cells}
    #[arg(long)]
    raw: PathBuf,
    /// Output detections JSON; stdout if absent
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct NmsArgs {
    /// Detections: JSON array or {image_id, detections} object
    #[arg(long)]
    detections: PathBuf,
    #[arg(long, default_value_t = detector::DEFAULT_IOU_THRESHOLD)]
    iou_threshold: f64,
    #[arg(long, default_value_t = detector::DEFAULT_CONF_THRESHOLD)]
    conf_threshold: f64,
    /// Output JSON (same shape as the input); stdout if absent
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalMapArgs {
    /// JSON array of {iteration, images: [{image_id, detections}]}
    #[arg(long)]
    snapshots: PathBuf,
    /// JSON array of {image_id, boxes: [{category_id, cx, cy, w, h}]}
    #[arg(long)]
    ground_truth: PathBuf,
    #[arg(long, default_value_t = 100)]
    interval: u32,
    #[arg(long, default_value_t = 2500)]
    max_batches: u32,
    #[arg(long, default_value_t = 0.5)]
    iou_threshold: f64,
    #[arg(long, default_value_t = 2)]
    category_count: usize,
    /// Output CSV `iteration,map`; stdout if absent
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateCompostArgs {
    /// Built-in preset name
    #[arg(long, default_value = "reference", conflicts_with = "preset_file")]
    preset: String,
    /// Preset JSON file overriding the built-in
    #[arg(long)]
    preset_file: Option<PathBuf>,
    /// Cycle length override, days
    #[arg(long)]
    days: Option<f64>,
    /// Integrator step override, days
    #[arg(long)]
    dt: Option<f64>,
    /// Daily time-series CSV; omitted entirely if absent
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunBinArgs {
    /// Event script: JSON array of {t_ms, event, payload}
    #[arg(long)]
    script: PathBuf,
    /// Optional fallback classifier model
    #[arg(long)]
    model: Option<PathBuf>,
    /// Directory for raw tensor fixtures referenced by the script
    #[arg(long)]
    fixtures: Option<PathBuf>,
    #[arg(long, default_value_t = detector::DEFAULT_IOU_THRESHOLD)]
    iou_threshold: f64,
    #[arg(long, default_value_t = detector::DEFAULT_CONF_THRESHOLD)]
    conf_threshold: f64,
    /// Trace output, JSON lines; stdout if absent
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Either a user-facing input problem (exit 2) or a broken internal
/// invariant (exit 3).
enum Failure {
    Input(String),
    Internal(String),
}

impl Failure {
    fn input(err: impl std::fmt::Display) -> Self {
        Failure::Input(err.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
        Err(Failure::Internal(message)) => {
            eprintln!("internal error: {message}");
            ExitCode::from(3)
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::SplitDataset(args) => cmd_split_dataset(args),
        Command::TrainSvm(args) => cmd_train_svm(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Decode(args) => cmd_decode(args),
        Command::Nms(args) => cmd_nms(args),
        Command::EvalMap(args) => cmd_eval_map(args),
        Command::SimulateCompost(args) => cmd_simulate_compost(args),
        Command::RunBin(args) => cmd_run_bin(args),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Input(format!("failed to read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Failure::Input(format!("invalid JSON in {}: {e}", path.display())))
}

fn write_output(out: &Option<PathBuf>, text: &str) -> Result<(), Failure> {
    match out {
        Some(path) => fs::write(path, text)
            .map_err(|e| Failure::Input(format!("failed to write {}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_split_dataset(args: SplitDatasetArgs) -> Result<(), Failure> {
    let index = dataset::read_manifest_index(&args.manifest).map_err(Failure::input)?;
    let ids: Vec<String> = index.into_iter().map(|e| e.image_id).collect();
    let split = dataset::split_ids(&ids, args.fraction, args.seed).map_err(Failure::input)?;
    if split.train.len() + split.test.len() != ids.len() {
        return Err(Failure::Internal("split does not partition the manifest".into()));
    }
    split.save(&args.out).map_err(Failure::input)?;
    println!(
        "split {} ids into {} train / {} test (seed {})",
        ids.len(),
        split.train.len(),
        split.test.len(),
        split.seed
    );
    Ok(())
}

fn parse_kernel(args: &TrainSvmArgs) -> Result<KernelSpec, Failure> {
    match args.kernel.as_str() {
        "linear" => Ok(KernelSpec::Linear),
        "polynomial" => Ok(KernelSpec::Polynomial {
            degree: args.degree,
            coef0: args.coef0,
        }),
        "rbf" => Ok(KernelSpec::Rbf { gamma: args.gamma }),
        other => Err(Failure::Input(format!(
            "unknown kernel {other:?}; expected linear, polynomial or rbf"
        ))),
    }
}

fn cmd_train_svm(args: TrainSvmArgs) -> Result<(), Failure> {
    let raw: Vec<LabeledExample> = read_json(&args.data)?;
    // re-validate: serde bypasses the label check in the constructor
    let mut data = Vec::with_capacity(raw.len());
    for example in raw {
        data.push(LabeledExample::new(example.x, example.y).map_err(Failure::input)?);
    }
    let kernel = parse_kernel(&args)?;
    let config = TrainConfig {
        max_epochs: args.max_epochs,
        tolerance: args.tolerance,
    };
    let model = svm::train(&data, &kernel, args.c, &config).map_err(Failure::input)?;

    let correct = data
        .iter()
        .filter(|e| model.predict(&e.x).is_ok_and(|p| p == e.y))
        .count();
    model.save(&args.out).map_err(Failure::input)?;
    println!(
        "trained on {} examples, training accuracy {correct}/{}, objective {:.6}",
        data.len(),
        data.len(),
        model.diagnostics.objective
    );
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> Result<(), Failure> {
    let model = SvmModel::load(&args.model).map_err(Failure::input)?;
    let vectors: Vec<Vec<f64>> = read_json(&args.vectors)?;
    let mut out = String::new();
    for vector in &vectors {
        let label = model.predict(vector).map_err(Failure::input)?;
        writeln!(out, "{label}").expect("writing to a String cannot fail");
    }
    write_output(&args.out, &out)
}

fn cmd_decode(args: DecodeArgs) -> Result<(), Failure> {
    let raw: RawGridOutput = read_json(&args.raw)?;
    let detections = detector::decode(&raw).map_err(Failure::input)?;
    let expected = raw.grid_size * raw.grid_size * raw.anchors.len();
    if detections.len() != expected {
        return Err(Failure::Internal(format!(
            "decode produced {} detections for {} slots",
            detections.len(),
            expected
        )));
    }
    let text = serde_json::to_string_pretty(&detections).expect("detections serialize");
    write_output(&args.out, &(text + "\n"))
}

/// Detections file shape: either a bare array or a per-image object.
#[derive(Deserialize)]
#[serde(untagged)]
enum DetectionsFile {
    Bare(Vec<Detection>),
    Image(ImageDetections),
}

fn cmd_nms(args: NmsArgs) -> Result<(), Failure> {
    let file: DetectionsFile = read_json(&args.detections)?;
    let keep = |detections: &[Detection]| {
        detector::nms(detections, args.iou_threshold, args.conf_threshold)
            .map_err(Failure::input)
    };
    let text = match file {
        DetectionsFile::Bare(detections) => {
            serde_json::to_string_pretty(&keep(&detections)?).expect("detections serialize")
        }
        DetectionsFile::Image(image) => {
            let kept = keep(&image.detections)?;
            serde_json::to_string_pretty(&ImageDetections {
                image_id: image.image_id,
                detections: kept,
            })
            .expect("detections serialize")
        }
    };
    write_output(&args.out, &(text + "\n"))
}

/// Ground-truth file row: image id plus its annotated boxes.
#[derive(Deserialize)]
struct GroundTruthEntry {
    image_id: String,
    boxes: Vec<GroundTruthBox>,
}

fn cmd_eval_map(args: EvalMapArgs) -> Result<(), Failure> {
    let snapshots: Vec<Snapshot> = read_json(&args.snapshots)?;
    let truth_rows: Vec<GroundTruthEntry> = read_json(&args.ground_truth)?;
    let truth: Vec<(String, Vec<GroundTruthBox>)> = truth_rows
        .into_iter()
        .map(|row| (row.image_id, row.boxes))
        .collect();
    let config = CurveConfig {
        interval: args.interval,
        max_batches: args.max_batches,
        iou_threshold: args.iou_threshold,
        category_count: args.category_count,
    };
    let curve = metrics::eval_curve(&snapshots, &truth, &config).map_err(Failure::input)?;
    if curve.len() != snapshots.len() {
        return Err(Failure::Internal(format!(
            "curve has {} rows for {} snapshots",
            curve.len(),
            snapshots.len()
        )));
    }
    write_output(&args.out, &metrics::curve_to_csv(&curve))
}

fn cmd_simulate_compost(args: SimulateCompostArgs) -> Result<(), Failure> {
    let mut preset = match &args.preset_file {
        Some(path) => compost::load_preset(path).map_err(Failure::input)?,
        None => compost::builtin_preset(&args.preset).map_err(Failure::input)?,
    };
    if let Some(days) = args.days {
        if !(days.is_finite() && days >= 0.0) {
            return Err(Failure::Input(format!("days {days} must be >= 0")));
        }
        preset.config.days = days;
    }
    if let Some(dt) = args.dt {
        preset.config.dt_days = dt; // range-checked by the stepper
    }
    let (final_state, series) =
        compost::run_cycle(&preset.feedstock, &preset.spec, &preset.config)
            .map_err(Failure::input)?;
    if let Some(path) = &args.out {
        fs::write(path, compost::series_to_csv(&series))
            .map_err(|e| Failure::Input(format!("failed to write {}: {e}", path.display())))?;
    }
    let report = compost::composition_report(&final_state);
    print!("{}", report.to_text());
    println!(
        "day {:.2}: {:.2} C, moisture {:.3}, C:N {:.2}",
        final_state.day,
        final_state.temperature_c,
        final_state.moisture_frac(),
        final_state.cn_ratio()
    );
    Ok(())
}

fn cmd_run_bin(args: RunBinArgs) -> Result<(), Failure> {
    let script: Vec<ScriptedEvent> = read_json(&args.script)?;
    let model = match &args.model {
        Some(path) => Some(SvmModel::load(path).map_err(Failure::input)?),
        None => None,
    };
    let config = BinConfig {
        iou_threshold: args.iou_threshold,
        conf_threshold: args.conf_threshold,
        ..BinConfig::default()
    };
    let trace = controller::run_simulation(
        &script,
        model.as_ref(),
        args.fixtures.as_deref(),
        &config,
    )
    .map_err(Failure::input)?;
    let text = controller::trace_to_jsonl(&trace);
    match &args.out {
        Some(path) => {
            fs::write(path, &text)
                .map_err(|e| Failure::Input(format!("failed to write {}: {e}", path.display())))?;
            let last = trace.last().expect("trace is never empty");
            println!(
                "{} events -> phase {:?}, {} bio / {} nonbio",
                trace.len() - 1,
                last.state.phase,
                last.state.counts.bio,
                last.state.counts.nonbio
            );
        }
        None => print!("{text}"),
    }
    Ok(())
}
