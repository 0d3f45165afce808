//! Discrete-event controller for the sorting bin: item arrival, image
//! capture, classification, disc rotation to the matching compartment,
//! and composter hand-off for biodegradables.
//!
//! The machine is a pure function [`step`]; [`run_simulation`] replays a
//! timed event script against it and records a trace. Nothing here
//! touches real hardware.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::{self, Detection, RawGridOutput};
use crate::svm::SvmModel;

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error("script times must be strictly increasing (event {index} at {t_ms} ms)")]
    TimeOrder { index: usize, t_ms: u64 },
    #[error("script event {index}: {message}")]
    Payload { index: usize, message: String },
    #[error("script event {index}: unknown event kind {name:?}")]
    UnknownEvent { index: usize, name: String },
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid JSON in {path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("fixture {path} did not decode: {source}")]
    Fixture {
        path: PathBuf,
        source: detector::DetectorError,
    },
}

/// Disc rest positions, degrees.
pub const HOME_ANGLE: f64 = 0.0;
pub const BIO_ANGLE: f64 = -90.0;
pub const NONBIO_ANGLE: f64 = 90.0;

/// Category id of the biodegradable class everywhere in the pipeline.
pub const BIO_CATEGORY: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Idle,
    ItemOnLid,
    Capturing,
    Classifying,
    Routing,
    Dumping,
    TransferringToComposter,
    Fault,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictSource {
    Detector,
    SvmFallback,
    /// Neither stage produced an answer (timeout, capture failure, or no
    /// model); the item is treated as non-biodegradable.
    FailSafe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierVerdict {
    pub category_id: usize,
    pub confidence: f64,
    pub source: VerdictSource,
}

impl ClassifierVerdict {
    fn fail_safe() -> Self {
        ClassifierVerdict {
            category_id: 1,
            confidence: 0.0,
            source: VerdictSource::FailSafe,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServoCommand {
    pub target_angle: f64,
    pub duration_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CompartmentCounts {
    pub bio: u64,
    pub nonbio: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BinEvent {
    ItemArrived { item: Option<String> },
    CaptureDone { detections: Vec<Detection> },
    VerdictReady { verdict: ClassifierVerdict },
    RotationDone,
    DumpDone,
    TransferDone,
    Timeout,
    Reset,
}

impl BinEvent {
    fn name(&self) -> &'static str {
        match self {
            BinEvent::ItemArrived { .. } => "item_arrived",
            BinEvent::CaptureDone { .. } => "capture_done",
            BinEvent::VerdictReady { .. } => "verdict_ready",
            BinEvent::RotationDone => "rotation_done",
            BinEvent::DumpDone => "dump_done",
            BinEvent::TransferDone => "transfer_done",
            BinEvent::Timeout => "timeout",
            BinEvent::Reset => "reset",
        }
    }
}

#[derive(Debug, Clone)]
pub struct BinConfig {
    /// Detector verdicts below this confidence defer to the fallback.
    pub confidence_floor: f64,
    /// Extra capture attempts after the first times out.
    pub capture_retries: u32,
    /// Duration stamped on every emitted servo command.
    pub servo_duration_ms: u64,
    /// Delay between a completed capture and the injected verdict.
    pub verdict_latency_ms: u64,
    /// NMS thresholds applied when a script references a raw fixture.
    pub iou_threshold: f64,
    pub conf_threshold: f64,
}

impl Default for BinConfig {
    fn default() -> Self {
        BinConfig {
            confidence_floor: 0.25,
            capture_retries: 2,
            servo_duration_ms: 700,
            verdict_latency_ms: 50,
            iou_threshold: detector::DEFAULT_IOU_THRESHOLD,
            conf_threshold: detector::DEFAULT_CONF_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinState {
    pub phase: Phase,
    pub pending_item: Option<String>,
    pub disc_angle: f64,
    pub counts: CompartmentCounts,
    /// Verdict driving the current routing/dump leg.
    pub last_verdict: Option<ClassifierVerdict>,
    /// Capture attempts consumed for the current item.
    pub capture_attempts: u32,
    /// Why the machine faulted; set on entry to `Fault`.
    pub diagnostic: Option<String>,
}

impl BinState {
    pub fn initial() -> Self {
        BinState {
            phase: Phase::Idle,
            pending_item: None,
            disc_angle: HOME_ANGLE,
            counts: CompartmentCounts::default(),
            last_verdict: None,
            capture_attempts: 0,
            diagnostic: None,
        }
    }
}

fn routing_angle(verdict: &ClassifierVerdict) -> f64 {
    if verdict.category_id == BIO_CATEGORY {
        BIO_ANGLE
    } else {
        NONBIO_ANGLE
    }
}

/// Apply one event. Always returns a successor state: an event that is
/// not legal in the current phase lands in `Fault` with a diagnostic,
/// and `Fault` absorbs everything except `Reset`.
pub fn step(state: &BinState, event: &BinEvent, config: &BinConfig) -> (BinState, Vec<ServoCommand>) {
    let mut next = state.clone();
    let mut commands = Vec::new();

    let fault = |mut s: BinState, why: String| {
        s.phase = Phase::Fault;
        s.diagnostic = Some(why);
        (s, Vec::new())
    };
    let servo = |angle: f64| ServoCommand {
        target_angle: angle,
        duration_ms: config.servo_duration_ms,
    };

    match (state.phase, event) {
        (Phase::Idle, BinEvent::ItemArrived { item }) => {
            next.phase = Phase::ItemOnLid;
            next.pending_item = item.clone();
            next.last_verdict = None;
            next.capture_attempts = 0;
        }
        // Settle period over: the item has come to rest, start the camera.
        (Phase::ItemOnLid, BinEvent::Timeout) => {
            next.phase = Phase::Capturing;
        }
        (Phase::Capturing, BinEvent::CaptureDone { .. }) => {
            next.phase = Phase::Classifying;
        }
        (Phase::Capturing, BinEvent::Timeout) => {
            if state.capture_attempts < config.capture_retries {
                next.capture_attempts += 1;
            } else {
                // Retries exhausted: route the item as non-bio rather than
                // hold the lid forever.
                let verdict = ClassifierVerdict::fail_safe();
                commands.push(servo(routing_angle(&verdict)));
                next.last_verdict = Some(verdict);
                next.phase = Phase::Routing;
            }
        }
        (Phase::Classifying, BinEvent::VerdictReady { verdict }) => {
            commands.push(servo(routing_angle(verdict)));
            next.last_verdict = Some(verdict.clone());
            next.phase = Phase::Routing;
        }
        (Phase::Classifying, BinEvent::Timeout) => {
            let verdict = ClassifierVerdict::fail_safe();
            commands.push(servo(routing_angle(&verdict)));
            next.last_verdict = Some(verdict);
            next.phase = Phase::Routing;
        }
        (Phase::Routing, BinEvent::RotationDone) => {
            // Disc position is only trusted once the motion reports done.
            next.disc_angle = state
                .last_verdict
                .as_ref()
                .map(routing_angle)
                .unwrap_or(HOME_ANGLE);
            next.phase = Phase::Dumping;
        }
        (Phase::Dumping, BinEvent::DumpDone) => {
            let bio = state
                .last_verdict
                .as_ref()
                .map(|v| v.category_id == BIO_CATEGORY)
                .unwrap_or(false);
            if bio {
                next.counts.bio += 1;
                next.phase = Phase::TransferringToComposter;
            } else {
                next.counts.nonbio += 1;
                next.phase = Phase::Idle;
            }
            next.pending_item = None;
            // Return home right away; the next arrival is only legal once
            // the machine is Idle again, so home always precedes it.
            commands.push(servo(HOME_ANGLE));
            next.disc_angle = HOME_ANGLE;
        }
        (Phase::TransferringToComposter, BinEvent::TransferDone) => {
            next.phase = Phase::Idle;
        }
        (Phase::Fault, BinEvent::Reset) => {
            let counts = state.counts;
            next = BinState::initial();
            next.counts = counts;
            commands.push(servo(HOME_ANGLE));
        }
        // Fault swallows everything else instead of cascading.
        (Phase::Fault, _) => {}
        // Timeouts on actuator legs mean stalled hardware.
        (Phase::Routing | Phase::Dumping | Phase::TransferringToComposter, BinEvent::Timeout) => {
            return fault(
                next,
                format!("actuator timeout in phase {:?}", state.phase),
            );
        }
        (_, ev) => {
            return fault(
                next,
                format!("event {} is not legal in phase {:?}", ev.name(), state.phase),
            );
        }
    }
    (next, commands)
}

/// Decide an item's category from its detections, falling back to the
/// margin classifier on pooled detection statistics, then to non-bio.
///
/// The fallback features are, in order: highest confidence, mean box
/// area, summed confidence for category 0, summed confidence for
/// category 1, and the detection count.
pub fn classify_item(
    detections: &[Detection],
    svm: Option<&SvmModel>,
    config: &BinConfig,
) -> ClassifierVerdict {
    let best = detections
        .iter()
        .enumerate()
        .max_by(|(ia, a), (ib, b)| {
            a.confidence
                .partial_cmp(&b.confidence)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(ib.cmp(ia)) // earlier detection wins a tie
        })
        .map(|(_, d)| d);
    if let Some(d) = best {
        if d.confidence >= config.confidence_floor {
            return ClassifierVerdict {
                category_id: d.category_id,
                confidence: d.confidence,
                source: VerdictSource::Detector,
            };
        }
    }
    if let Some(model) = svm {
        let features = pooled_features(detections);
        if let (Ok(label), Ok(value)) =
            (model.predict(&features), model.decision_value(&features))
        {
            return ClassifierVerdict {
                category_id: if label > 0.0 { BIO_CATEGORY } else { 1 },
                //|decision| squashed to [0,1); zero at the boundary.
                confidence: value.abs().tanh(),
                source: VerdictSource::SvmFallback,
            };
        }
    }
    ClassifierVerdict::fail_safe()
}

/// Five pooled statistics over a detection list; all zero when empty.
pub fn pooled_features(detections: &[Detection]) -> Vec<f64> {
    let n = detections.len();
    let max_conf = detections.iter().fold(0.0f64, |m, d| m.max(d.confidence));
    let mean_area = if n == 0 {
        0.0
    } else {
        detections.iter().map(|d| d.w * d.h).sum::<f64>() / n as f64
    };
    let sum_for = |cat: usize| {
        detections
            .iter()
            .filter(|d| d.category_id == cat)
            .map(|d| d.confidence)
            .sum::<f64>()
    };
    vec![max_conf, mean_area, sum_for(0), sum_for(1), n as f64]
}

/// One scripted stimulus. `payload` shape depends on `event`:
/// `item_arrived` takes an optional string id, `capture_done` takes
/// either `{"detections": [...]}` or `{"fixture": "file.json"}`, and
/// `verdict_ready` takes an explicit verdict object.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptedEvent {
    pub t_ms: u64,
    pub event: String,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub payload: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub t_ms: u64,
    pub state: BinState,
    pub commands: Vec<ServoCommand>,
}

impl TraceEntry {
    /// The compact line format used by the CLI:
    /// `{"t_ms":..,"phase":..,"disc_angle":..,"counts":{..}}`.
    pub fn to_line_value(&self) -> serde_json::Value {
        serde_json::json!({
            "t_ms": self.t_ms,
            "phase": self.state.phase,
            "disc_angle": self.state.disc_angle,
            "counts": self.state.counts,
        })
    }
}

/// Render a trace as JSON lines, one entry per line.
pub fn trace_to_jsonl(trace: &[TraceEntry]) -> String {
    let mut out = String::new();
    for entry in trace {
        out.push_str(&entry.to_line_value().to_string());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Deserialize)]
struct CapturePayload {
    #[serde(default)]
    detections: Option<Vec<Detection>>,
    #[serde(default)]
    fixture: Option<String>,
}

fn resolve_event(
    index: usize,
    scripted: &ScriptedEvent,
    fixtures_dir: Option<&Path>,
    config: &BinConfig,
) -> Result<BinEvent, ControllerError> {
    let payload_err = |message: String| ControllerError::Payload { index, message };
    match scripted.event.as_str() {
        "item_arrived" => {
            let item = match &scripted.payload {
                serde_json::Value::Null => None,
                serde_json::Value::String(s) => Some(s.clone()),
                other => {
                    return Err(payload_err(format!(
                        "item_arrived payload must be a string id or absent, got {other}"
                    )))
                }
            };
            Ok(BinEvent::ItemArrived { item })
        }
        "capture_done" => {
            let payload: CapturePayload = serde_json::from_value(scripted.payload.clone())
                .map_err(|e| payload_err(format!("capture_done payload: {e}")))?;
            let detections = match (payload.detections, payload.fixture) {
                (Some(d), None) => d,
                (None, Some(name)) => {
                    let path = match fixtures_dir {
                        Some(dir) => dir.join(&name),
                        None => PathBuf::from(&name),
                    };
                    let text = fs::read_to_string(&path).map_err(|source| ControllerError::Io {
                        path: path.clone(),
                        source,
                    })?;
                    let raw: RawGridOutput =
                        serde_json::from_str(&text).map_err(|source| ControllerError::Json {
                            path: path.clone(),
                            source,
                        })?;
                    let decoded = detector::decode(&raw)
                        .and_then(|d| {
                            detector::nms(&d, config.iou_threshold, config.conf_threshold)
                        })
                        .map_err(|source| ControllerError::Fixture { path, source })?;
                    decoded
                }
                _ => {
                    return Err(payload_err(
                        "capture_done payload needs exactly one of \"detections\" or \"fixture\""
                            .into(),
                    ))
                }
            };
            Ok(BinEvent::CaptureDone { detections })
        }
        "verdict_ready" => {
            let verdict: ClassifierVerdict = serde_json::from_value(scripted.payload.clone())
                .map_err(|e| payload_err(format!("verdict_ready payload: {e}")))?;
            if !(0.0..=1.0).contains(&verdict.confidence) || verdict.category_id > 1 {
                return Err(payload_err(format!(
                    "verdict out of range: category {} confidence {}",
                    verdict.category_id, verdict.confidence
                )));
            }
            Ok(BinEvent::VerdictReady { verdict })
        }
        "rotation_done" => Ok(BinEvent::RotationDone),
        "dump_done" => Ok(BinEvent::DumpDone),
        "transfer_done" => Ok(BinEvent::TransferDone),
        "timeout" => Ok(BinEvent::Timeout),
        "reset" => Ok(BinEvent::Reset),
        other => Err(ControllerError::UnknownEvent {
            index,
            name: other.to_string(),
        }),
    }
}

/// Replay a timed event script and record the state after every event.
///
/// The script supplies external stimuli only. When a `capture_done`
/// lands while the machine is capturing, the harness classifies the
/// detections itself (via [`classify_item`], with `svm` as fallback) and
/// injects the resulting `verdict_ready` at `t + verdict_latency_ms`; an
/// injected event scheduled at the same instant as a scripted one is
/// applied first, since it was already in flight. An injected verdict
/// whose machine has already left `Classifying` (say, a scripted timeout
/// beat it) is stale and silently discarded. The whole run is
/// deterministic.
pub fn run_simulation(
    script: &[ScriptedEvent],
    svm: Option<&SvmModel>,
    fixtures_dir: Option<&Path>,
    config: &BinConfig,
) -> Result<Vec<TraceEntry>, ControllerError> {
    // Validate and resolve everything (including fixture IO) up front so
    // a malformed script cannot leave a half-executed trace.
    let mut queue: Vec<(u64, u8, usize, BinEvent)> = Vec::with_capacity(script.len());
    let mut last_t: Option<u64> = None;
    for (index, scripted) in script.iter().enumerate() {
        if last_t.is_some_and(|t| scripted.t_ms <= t) {
            return Err(ControllerError::TimeOrder {
                index,
                t_ms: scripted.t_ms,
            });
        }
        last_t = Some(scripted.t_ms);
        let event = resolve_event(index, scripted, fixtures_dir, config)?;
        queue.push((scripted.t_ms, 1, index, event));
    }

    let mut state = BinState::initial();
    let mut trace = vec![TraceEntry {
        t_ms: 0,
        state: state.clone(),
        commands: Vec::new(),
    }];
    let mut seq = script.len();

    while !queue.is_empty() {
        // Smallest (t, injected-first, seq). The queue stays tiny, so a
        // linear scan beats maintaining a heap with a custom order.
        let min_index = queue
            .iter()
            .enumerate()
            .min_by_key(|(_, (t, kind, s, _))| (*t, *kind, *s))
            .map(|(i, _)| i)
            .expect("queue is non-empty");
        let (t, kind, _, event) = queue.swap_remove(min_index);
        if kind == 0 && state.phase != Phase::Classifying {
            continue; // stale injected verdict
        }

        let was_capturing = state.phase == Phase::Capturing;
        let (next, commands) = step(&state, &event, config);
        if was_capturing && next.phase == Phase::Classifying {
            if let BinEvent::CaptureDone { detections } = &event {
                let verdict = classify_item(detections, svm, config);
                queue.push((
                    t + config.verdict_latency_ms,
                    0,
                    seq,
                    BinEvent::VerdictReady { verdict },
                ));
                seq += 1;
            }
        }
        state = next;
        trace.push(TraceEntry {
            t_ms: t,
            state: state.clone(),
            commands,
        });
    }
    Ok(trace)
}
