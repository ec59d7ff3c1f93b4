//! Detector boundary. Detections come from a replay file, an external
//! process speaking newline-delimited JSON, or a synthetic noise model applied
//! to ground truth.
//!
//! Subprocess protocol, one JSON object per line:
//!
//! ```text
//! -> {"image_path": "...", "augmentation_id": 3, "request_id": 17}
//! <- {"request_id": 17, "detections": [{"bbox": [x1, y1, x2, y2], "label": "cone", "score": 0.9}]}
//! ```
//!
//! Box coordinates are absolute pixels in the original image frame.

use std::collections::HashSet;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::Detection;
use crate::geometry::Aabb;
use crate::schema::{read_json, ReplayFile, SchemaError, TruthObject};

pub const DEFAULT_TIMEOUT_MS: u64 = 5_000;

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("detector timed out after {0:?}")]
    Timeout(Duration),
    #[error("detector protocol error: {0}")]
    Protocol(String),
    #[error("no replay entry for image {image_id:?}, augmentation {augmentation_id}")]
    MissingReplayEntry {
        image_id: String,
        augmentation_id: usize,
    },
    #[error("synthetic detector needs ground truth for image {0:?}")]
    MissingTruth(String),
    #[error("invalid detector binding: {0}")]
    Binding(String),
    #[error("failed to start detector")]
    Spawn(#[source] std::io::Error),
    #[error(transparent)]
    Schema(#[from] SchemaError),
}

/// Everything a detector may need for one call.
#[derive(Debug, Clone, Copy)]
pub struct DetectRequest<'a> {
    pub image_id: &'a str,
    /// Augmented image on disk, when the binding needs pixels.
    pub image_path: Option<&'a Path>,
    pub augmentation_id: usize,
    pub truth: Option<&'a [TruthObject]>,
}

pub trait Detector: Send + Sync {
    fn detect(&self, req: &DetectRequest<'_>) -> Result<Vec<Detection>, DetectorError>;

    /// Whether `image_path` must be populated (augmented images written to disk).
    fn needs_pixels(&self) -> bool {
        false
    }
}

/// Noise model turning ground truth into plausible detector output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticModel {
    /// Pixels.
    pub center_jitter_sd: f64,
    /// Standard deviation of the log scale factor, drawn per axis.
    pub scale_jitter_sd: f64,
    pub outlier_rate: f64,
    /// Pixels.
    pub outlier_shift: f64,
    /// Added to `outlier_shift`, in multiples of the truth box width.
    pub outlier_shift_widths: f64,
    pub miss_rate: f64,
    pub score_base: f64,
    pub score_sd: f64,
    pub seed: u64,
}

impl Default for SyntheticModel {
    fn default() -> Self {
        Self {
            center_jitter_sd: 2.0,
            scale_jitter_sd: 0.05,
            outlier_rate: 0.0,
            outlier_shift: 0.0,
            outlier_shift_widths: 0.0,
            miss_rate: 0.0,
            score_base: 0.7,
            score_sd: 0.1,
            seed: 0,
        }
    }
}

impl SyntheticModel {
    pub fn validate(&self) -> Result<(), DetectorError> {
        let rate = |v: f64| (0.0..=1.0).contains(&v);
        let sd = |v: f64| v.is_finite() && v >= 0.0;
        if !rate(self.outlier_rate) || !rate(self.miss_rate) {
            return Err(DetectorError::Binding("rates must lie in [0, 1]".into()));
        }
        if !sd(self.center_jitter_sd) || !sd(self.scale_jitter_sd) || !sd(self.score_sd) {
            return Err(DetectorError::Binding("standard deviations must be >= 0".into()));
        }
        if !self.outlier_shift.is_finite() || !self.outlier_shift_widths.is_finite() || !self.score_base.is_finite() {
            return Err(DetectorError::Binding("non-finite model parameter".into()));
        }
        Ok(())
    }

    fn rng(&self, augmentation_id: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(augmentation_id as u64);
        rng
    }
}

/// Applies `model` to every truth box. Reproducible for a given
/// `(model, truth, augmentation_id)`.
pub fn synthesize(
    model: &SyntheticModel,
    truth: &[TruthObject],
    augmentation_id: usize,
) -> Vec<Detection> {
    let mut rng = model.rng(augmentation_id);
    let center = Normal::new(0.0, model.center_jitter_sd).expect("validated sd");
    let scale = Normal::new(0.0, model.scale_jitter_sd).expect("validated sd");
    let score = Normal::new(model.score_base, model.score_sd).expect("validated sd");

    let mut out = Vec::with_capacity(truth.len());
    for t in truth {
        // every draw happens for every box so the stream stays aligned
        let missed = rng.random::<f64>() < model.miss_rate;
        let (mut dx, mut dy) = (center.sample(&mut rng), center.sample(&mut rng));
        let (sx, sy) = (scale.sample(&mut rng).exp(), scale.sample(&mut rng).exp());
        let outlier = rng.random::<f64>() < model.outlier_rate;
        let angle = rng.random::<f64>() * std::f64::consts::TAU;
        let s = score.sample(&mut rng).clamp(0.0, 1.0);
        if missed {
            continue;
        }
        if outlier {
            let shift = model.outlier_shift + model.outlier_shift_widths * t.bbox.width();
            dx += shift * angle.cos();
            dy += shift * angle.sin();
        }
        let gx = 0.5 * t.bbox.width() * (sx - 1.0);
        let gy = 0.5 * t.bbox.height() * (sy - 1.0);
        let [x0, y0, x1, y1] = t.bbox.coords();
        let bbox = Aabb::new(x0 + dx - gx, y0 + dy - gy, x1 + dx + gx, y1 + dy + gy)
            .expect("positive scale keeps boxes valid");
        out.push(Detection {
            bbox,
            label: t.label.clone(),
            score: s,
        });
    }
    out
}

/// FNV-1a, used to key per-image random streams.
pub fn stable_hash(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub struct SyntheticDetector {
    model: SyntheticModel,
}

impl SyntheticDetector {
    pub fn new(model: SyntheticModel) -> Result<Self, DetectorError> {
        model.validate()?;
        Ok(Self { model })
    }
}

impl Detector for SyntheticDetector {
    fn detect(&self, req: &DetectRequest<'_>) -> Result<Vec<Detection>, DetectorError> {
        let truth = req
            .truth
            .ok_or_else(|| DetectorError::MissingTruth(req.image_id.to_string()))?;
        let model = SyntheticModel {
            seed: self.model.seed ^ stable_hash(req.image_id),
            ..self.model.clone()
        };
        Ok(synthesize(&model, truth, req.augmentation_id))
    }
}

pub struct ReplayDetector {
    file: ReplayFile,
}

impl ReplayDetector {
    pub fn new(file: ReplayFile) -> Self {
        Self { file }
    }

    pub fn load(path: &Path) -> Result<Self, DetectorError> {
        Ok(Self::new(ReplayFile::load(path)?))
    }
}

impl Detector for ReplayDetector {
    fn detect(&self, req: &DetectRequest<'_>) -> Result<Vec<Detection>, DetectorError> {
        self.file
            .lookup(req.image_id, req.augmentation_id)
            .map(<[Detection]>::to_vec)
            .ok_or_else(|| DetectorError::MissingReplayEntry {
                image_id: req.image_id.to_string(),
                augmentation_id: req.augmentation_id,
            })
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    image_path: &'a Path,
    augmentation_id: usize,
    request_id: u64,
}

#[derive(Deserialize)]
struct WireResponse {
    request_id: u64,
    detections: Vec<Detection>,
}

struct Worker {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

impl Worker {
    fn spawn(argv: &[String]) -> Result<Self, DetectorError> {
        let (program, args) = argv
            .split_first()
            .ok_or_else(|| DetectorError::Binding("empty command line".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(DetectorError::Spawn)?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Self {
            child,
            stdin,
            lines: rx,
        })
    }

    fn call(
        &mut self,
        image_path: &Path,
        augmentation_id: usize,
        request_id: u64,
        timeout: Duration,
    ) -> Result<Vec<Detection>, DetectorError> {
        let req = WireRequest {
            image_path,
            augmentation_id,
            request_id,
        };
        let mut line = serde_json::to_string(&req).expect("request serializes");
        line.push('\n');
        self.stdin
            .write_all(line.as_bytes())
            .and_then(|_| self.stdin.flush())
            .map_err(|e| DetectorError::Protocol(format!("write to detector failed: {e}")))?;

        let deadline = Instant::now() + timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            let line = match self.lines.recv_timeout(left) {
                Ok(Ok(l)) => l,
                Ok(Err(e)) => return Err(DetectorError::Protocol(format!("read failed: {e}"))),
                Err(RecvTimeoutError::Timeout) => return Err(DetectorError::Timeout(timeout)),
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(DetectorError::Protocol("detector process exited".into()))
                }
            };
            if line.trim().is_empty() {
                continue;
            }
            let resp: WireResponse = serde_json::from_str(&line)
                .map_err(|e| DetectorError::Protocol(format!("{e}: {line}")))?;
            // a late answer to an earlier, timed-out request
            if resp.request_id != request_id {
                log::debug!("discarding stale response {}", resp.request_id);
                continue;
            }
            return Ok(resp.detections);
        }
    }
}

impl Drop for Worker {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Pool of long-lived detector processes. Each child handles one request at a
/// time; requests are spread round-robin.
pub struct SubprocessDetector {
    workers: Vec<Mutex<Worker>>,
    next_worker: AtomicUsize,
    next_request: AtomicU64,
    timeout: Duration,
}

impl SubprocessDetector {
    pub fn spawn(argv: &[String], pool: usize, timeout: Duration) -> Result<Self, DetectorError> {
        if timeout.is_zero() {
            return Err(DetectorError::Binding("timeout must be positive".into()));
        }
        let workers = (0..pool.max(1))
            .map(|_| Worker::spawn(argv).map(Mutex::new))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            workers,
            next_worker: AtomicUsize::new(0),
            next_request: AtomicU64::new(1),
            timeout,
        })
    }
}

impl Detector for SubprocessDetector {
    fn detect(&self, req: &DetectRequest<'_>) -> Result<Vec<Detection>, DetectorError> {
        let path = req
            .image_path
            .ok_or_else(|| DetectorError::Binding("subprocess detector needs an image path".into()))?;
        let request_id = self.next_request.fetch_add(1, Ordering::Relaxed);
        let slot = self.next_worker.fetch_add(1, Ordering::Relaxed) % self.workers.len();
        let mut worker = self.workers[slot].lock().unwrap_or_else(|p| p.into_inner());
        worker.call(path, req.augmentation_id, request_id, self.timeout)
    }

    fn needs_pixels(&self) -> bool {
        true
    }
}

/// Where detections come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DetectorSource {
    Replay { path: PathBuf },
    Subprocess {
        argv: Vec<String>,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
        #[serde(default = "default_pool")]
        pool: usize,
    },
    Synthetic { model: SyntheticModel },
}

fn default_timeout_ms() -> u64 {
    DEFAULT_TIMEOUT_MS
}

fn default_pool() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorBinding {
    pub source: DetectorSource,
    /// Accepted labels; `None` accepts any label.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<Vec<String>>,
}

impl DetectorBinding {
    pub fn new(source: DetectorSource) -> Self {
        Self {
            source,
            classes: None,
        }
    }

    /// Parses `replay:<path>`, `cmd:<argv>` (whitespace separated) or
    /// `synthetic:<model.json>` (`synthetic:` alone uses the default model).
    pub fn parse(spec: &str) -> Result<Self, DetectorError> {
        let (kind, rest) = spec
            .split_once(':')
            .ok_or_else(|| DetectorError::Binding(format!("expected <kind>:<arg>, got {spec:?}")))?;
        let source = match kind {
            "replay" => DetectorSource::Replay {
                path: PathBuf::from(rest),
            },
            "cmd" => {
                let argv: Vec<String> = rest.split_whitespace().map(str::to_string).collect();
                if argv.is_empty() {
                    return Err(DetectorError::Binding("empty command".into()));
                }
                DetectorSource::Subprocess {
                    argv,
                    timeout_ms: DEFAULT_TIMEOUT_MS,
                    pool: 1,
                }
            }
            "synthetic" if rest.is_empty() => DetectorSource::Synthetic {
                model: SyntheticModel::default(),
            },
            "synthetic" => DetectorSource::Synthetic {
                model: read_json(Path::new(rest))?,
            },
            other => return Err(DetectorError::Binding(format!("unknown detector kind {other:?}"))),
        };
        Ok(Self::new(source))
    }

    pub fn validate(&self) -> Result<(), DetectorError> {
        if let Some(c) = &self.classes {
            if c.is_empty() {
                return Err(DetectorError::Binding("class list is empty".into()));
            }
        }
        match &self.source {
            DetectorSource::Subprocess { timeout_ms: 0, .. } => {
                Err(DetectorError::Binding("timeout must be positive".into()))
            }
            DetectorSource::Synthetic { model } => model.validate(),
            _ => Ok(()),
        }
    }

    /// Builds the live detector, wrapped in a label check when `classes` is set.
    pub fn connect(&self) -> Result<Box<dyn Detector>, DetectorError> {
        self.validate()?;
        let inner: Box<dyn Detector> = match &self.source {
            DetectorSource::Replay { path } => Box::new(ReplayDetector::load(path)?),
            DetectorSource::Subprocess {
                argv,
                timeout_ms,
                pool,
            } => Box::new(SubprocessDetector::spawn(
                argv,
                *pool,
                Duration::from_millis(*timeout_ms),
            )?),
            DetectorSource::Synthetic { model } => Box::new(SyntheticDetector::new(model.clone())?),
        };
        Ok(match &self.classes {
            Some(classes) => Box::new(ClassFilter {
                inner,
                classes: classes.iter().cloned().collect(),
            }),
            None => inner,
        })
    }
}

struct ClassFilter {
    inner: Box<dyn Detector>,
    classes: HashSet<String>,
}

impl Detector for ClassFilter {
    fn detect(&self, req: &DetectRequest<'_>) -> Result<Vec<Detection>, DetectorError> {
        let dets = self.inner.detect(req)?;
        if let Some(bad) = dets.iter().find(|d| !self.classes.contains(&d.label)) {
            return Err(DetectorError::Protocol(format!("unknown label {:?}", bad.label)));
        }
        Ok(dets)
    }

    fn needs_pixels(&self) -> bool {
        self.inner.needs_pixels()
    }
}
