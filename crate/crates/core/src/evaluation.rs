//! Accuracy statistics for fused detections: average IoU, detection counts,
//! VOC 11-point mAP, and per-method comparison tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augmentation::{Augmentation, Image};
use crate::fusion::{Detection, FusionMethod};
use crate::geometry::{cmp_f64, Aabb};
use crate::pipeline::{Pipeline, PipelineError, PipelineReport, Scene};
use crate::schema::{SchemaError, TruthImage, TruthObject};

pub const DEFAULT_MATCH_IOU: f64 = 0.5;
pub const DEFAULT_SCORE_THRESHOLD: f64 = 0.25;

/// Printed above every comparison table.
pub const IOU_POLICY: &str = "average IoU scores every unmatched ground-truth object as 0";

#[derive(Debug, Error)]
pub enum EvaluationError {
    #[error("no records with ground truth to evaluate")]
    NoRecords,
    #[error("predicted class {0:?} does not occur in the ground truth")]
    ClassMismatch(String),
    #[error("no methods to compare")]
    NoMethods,
    #[error("image {0:?} has no ground truth")]
    MissingTruth(String),
    #[error("threshold {0} outside (0, 1)")]
    Threshold(f64),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Schema(#[from] SchemaError),
}

/// Predictions and ground truth for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub image_id: String,
    pub predictions: Vec<Detection>,
    pub truth: Vec<TruthObject>,
}

/// Outcome for one ground-truth object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthMatch {
    pub truth: usize,
    pub prediction: Option<usize>,
    pub iou: f64,
    pub matched: bool,
}

impl EvalRecord {
    /// Class-agnostic one-to-one matching, greedy by descending IoU.
    /// `matched` marks pairs at or above `iou_threshold`.
    pub fn matches(&self, iou_threshold: f64) -> Vec<TruthMatch> {
        let preds: Vec<Aabb> = self.predictions.iter().map(|d| d.bbox).collect();
        let truth: Vec<Aabb> = self.truth.iter().map(|t| t.bbox).collect();
        let pairs = greedy_iou_matching(&preds, &truth);
        let mut out: Vec<TruthMatch> = (0..truth.len())
            .map(|t| TruthMatch {
                truth: t,
                prediction: None,
                iou: 0.0,
                matched: false,
            })
            .collect();
        for (p, t, iou) in pairs {
            out[t] = TruthMatch {
                truth: t,
                prediction: Some(p),
                iou,
                matched: iou >= iou_threshold,
            };
        }
        out
    }

    pub fn from_report(report: &PipelineReport, truth: Vec<TruthObject>) -> Self {
        Self {
            image_id: report.image_id.clone(),
            predictions: report_detections(report),
            truth,
        }
    }
}

/// Fused boxes of a report as detections.
pub fn report_detections(report: &PipelineReport) -> Vec<Detection> {
    report
        .objects
        .iter()
        .filter_map(|o| {
            Some(Detection {
                bbox: o.result.bbox?,
                label: o.result.label.clone(),
                score: o.result.score.unwrap_or(0.0),
            })
        })
        .collect()
}

/// `(prediction, truth, iou)` pairs with positive IoU, chosen greedily by
/// descending IoU; ties go to the lower prediction then truth index.
pub fn greedy_iou_matching(preds: &[Aabb], truth: &[Aabb]) -> Vec<(usize, usize, f64)> {
    let mut cand = Vec::new();
    for (p, pb) in preds.iter().enumerate() {
        for (t, tb) in truth.iter().enumerate() {
            let v = pb.iou(tb);
            if v > 0.0 {
                cand.push((p, t, v));
            }
        }
    }
    cand.sort_by(|a, b| cmp_f64(b.2, a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    let mut used_p = vec![false; preds.len()];
    let mut used_t = vec![false; truth.len()];
    let mut out = Vec::new();
    for (p, t, v) in cand {
        if !used_p[p] && !used_t[t] {
            used_p[p] = true;
            used_t[t] = true;
            out.push((p, t, v));
        }
    }
    out
}

/// Mean IoU over every ground-truth object; unmatched objects contribute 0.
pub fn average_iou(records: &[EvalRecord]) -> Result<f64, EvaluationError> {
    let ious: Vec<f64> = records
        .iter()
        .flat_map(|r| r.matches(DEFAULT_MATCH_IOU))
        .map(|m| m.iou)
        .collect();
    if ious.is_empty() {
        return Err(EvaluationError::NoRecords);
    }
    Ok(ious.iter().sum::<f64>() / ious.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionCount {
    pub detected: usize,
    pub total: usize,
}

impl std::fmt::Display for DetectionCount {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.detected, self.total)
    }
}

/// Ground-truth objects with a matched prediction of IoU at least `iou_threshold`.
pub fn detection_count(records: &[EvalRecord], iou_threshold: f64) -> Result<DetectionCount, EvaluationError> {
    if !(iou_threshold > 0.0 && iou_threshold < 1.0) {
        return Err(EvaluationError::Threshold(iou_threshold));
    }
    let mut c = DetectionCount { detected: 0, total: 0 };
    for r in records {
        let m = r.matches(iou_threshold);
        c.total += m.len();
        c.detected += m.iter().filter(|m| m.matched).count();
    }
    Ok(c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCurve {
    pub label: String,
    /// `(recall, precision)` after each prediction in descending score order.
    pub points: Vec<(f64, f64)>,
    pub ap: f64,
    pub positives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub classes: Vec<ClassCurve>,
    pub map: f64,
}

/// VOC 2007 11-point interpolated AP of a `(recall, precision)` curve.
pub fn eleven_point_ap(points: &[(f64, f64)]) -> f64 {
    (0..=10)
        .map(|i| {
            let r = i as f64 / 10.0;
            points
                .iter()
                .filter(|(rec, _)| *rec >= r - 1e-12)
                .map(|&(_, p)| p)
                .fold(0.0, f64::max)
        })
        .sum::<f64>()
        / 11.0
}

/// Per-class VOC 2007 AP and its mean over the ground-truth classes.
///
/// Predictions below `score_threshold` are dropped first. The rest are
/// visited by descending score (ties by image order, then prediction order);
/// each is a true positive if its best same-class truth in the image has IoU
/// at least `iou_threshold` and is not yet taken.
pub fn mean_ap(records: &[EvalRecord], score_threshold: f64, iou_threshold: f64) -> Result<PrCurve, EvaluationError> {
    let classes: BTreeSet<&str> = records
        .iter()
        .flat_map(|r| r.truth.iter().map(|t| t.label.as_str()))
        .collect();
    if classes.is_empty() {
        return Err(EvaluationError::NoRecords);
    }
    for r in records {
        if let Some(d) = r.predictions.iter().find(|d| !classes.contains(d.label.as_str())) {
            return Err(EvaluationError::ClassMismatch(d.label.clone()));
        }
    }

    let mut curves = Vec::with_capacity(classes.len());
    for &label in &classes {
        let positives = records
            .iter()
            .flat_map(|r| &r.truth)
            .filter(|t| t.label == label)
            .count();
        let mut preds: Vec<(usize, usize, f64)> = records
            .iter()
            .enumerate()
            .flat_map(|(ri, r)| {
                r.predictions
                    .iter()
                    .enumerate()
                    .filter(|(_, d)| d.label == label && d.score >= score_threshold)
                    .map(move |(pi, d)| (ri, pi, d.score))
            })
            .collect();
        preds.sort_by(|a, b| cmp_f64(b.2, a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));

        let mut taken: Vec<Vec<bool>> = records.iter().map(|r| vec![false; r.truth.len()]).collect();
        let (mut tp, mut fp) = (0usize, 0usize);
        let mut points = Vec::with_capacity(preds.len());
        for (ri, pi, _) in preds {
            let r = &records[ri];
            let bbox = r.predictions[pi].bbox;
            let best = r
                .truth
                .iter()
                .enumerate()
                .filter(|(_, t)| t.label == label)
                .map(|(ti, t)| (ti, bbox.iou(&t.bbox)))
                .max_by(|a, b| cmp_f64(a.1, b.1).then(b.0.cmp(&a.0)));
            match best {
                Some((ti, v)) if v >= iou_threshold && !taken[ri][ti] => {
                    taken[ri][ti] = true;
                    tp += 1;
                }
                _ => fp += 1,
            }
            points.push((tp as f64 / positives as f64, tp as f64 / (tp + fp) as f64));
        }
        curves.push(ClassCurve {
            label: label.to_string(),
            ap: eleven_point_ap(&points),
            points,
            positives,
        });
    }
    let map = curves.iter().map(|c| c.ap).sum::<f64>() / curves.len() as f64;
    Ok(PrCurve { classes: curves, map })
}

/// A row of the comparison table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComparedMethod {
    /// Identity-augmentation detections, unfused.
    NoFusion,
    Fused(FusionMethod),
}

impl ComparedMethod {
    pub fn name(&self) -> &'static str {
        match self {
            ComparedMethod::NoFusion => "no_fusion",
            ComparedMethod::Fused(m) => m.name(),
        }
    }
}

impl std::str::FromStr for ComparedMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "no_fusion" | "none" => Ok(ComparedMethod::NoFusion),
            other => other.parse().map(ComparedMethod::Fused),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub dataset: String,
    pub method: String,
    pub average_iou: f64,
    pub detection: DetectionCount,
    pub map: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub iou_policy: String,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn row(&self, method: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("# {}\n", self.iou_policy);
        let dw = self.rows.iter().map(|r| r.dataset.len()).max().unwrap_or(0).max(7);
        let _ = writeln!(s, "{:<dw$}  {:<10}  {:>11}  {:>11}  {:>7}", "dataset", "method", "average_iou", "detection", "mAP");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<dw$}  {:<10}  {:>11.4}  {:>11}  {:>7.4}",
                r.dataset,
                r.method,
                r.average_iou,
                r.detection.to_string(),
                r.map
            );
        }
        s
    }
}

/// Runs detection once per scene and scores every method on the same
/// detections. Scenes must carry ground truth.
pub fn compare_methods(
    dataset: &str,
    scenes: &[Scene],
    pipeline: &Pipeline,
    methods: &[ComparedMethod],
) -> Result<ComparisonTable, EvaluationError> {
    if methods.is_empty() {
        return Err(EvaluationError::NoMethods);
    }
    let identity = pipeline
        .config()
        .roster
        .iter()
        .position(|a| *a == Augmentation::Identity);

    let mut records: Vec<Vec<EvalRecord>> = vec![Vec::with_capacity(scenes.len()); methods.len()];
    for scene in scenes {
        let truth = scene
            .truth
            .clone()
            .ok_or_else(|| EvaluationError::MissingTruth(scene.image_id.clone()))?;
        let detected = pipeline.detect(scene)?;
        for (mi, m) in methods.iter().enumerate() {
            let predictions = match m {
                ComparedMethod::NoFusion => {
                    let id = identity.ok_or_else(|| {
                        PipelineError::Config("no_fusion needs an identity entry in the roster".into())
                    })?;
                    detected.augmentations[id].detections.clone()
                }
                ComparedMethod::Fused(f) => report_detections(&pipeline.fuse(&detected, *f)?),
            };
            records[mi].push(EvalRecord {
                image_id: scene.image_id.clone(),
                predictions,
                truth: truth.clone(),
            });
        }
    }

    let mut rows = Vec::with_capacity(methods.len());
    for (m, recs) in methods.iter().zip(&records) {
        rows.push(ComparisonRow {
            dataset: dataset.to_string(),
            method: m.name().to_string(),
            average_iou: average_iou(recs)?,
            detection: detection_count(recs, DEFAULT_MATCH_IOU)?,
            map: mean_ap(recs, DEFAULT_SCORE_THRESHOLD, DEFAULT_MATCH_IOU)?.map,
        });
    }
    Ok(ComparisonTable {
        iou_policy: IOU_POLICY.to_string(),
        rows,
    })
}

/// Default side of the square synthetic scenes are laid out on.
pub const DEFAULT_SYNTHETIC_CANVAS: f64 = 256.0;

/// Side of the placeholder image attached to synthetic scenes.
pub const SYNTHETIC_IMAGE_SIZE: usize = 16;

/// Seeded scenes with one box each, placed on a `canvas`-sized square, for
/// use with the synthetic detector. The attached image is a small flat
/// placeholder since the synthetic detector reads only the truth.
pub fn synthetic_scenes(count: usize, seed: u64, canvas: f64) -> Vec<Scene> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let image = Image::filled(SYNTHETIC_IMAGE_SIZE, SYNTHETIC_IMAGE_SIZE, 3, 128).expect("non-empty image");
    let c = canvas;
    (0..count)
        .map(|i| {
            let w = rng.random_range(0.1 * c..0.3 * c);
            let h = rng.random_range(0.1 * c..0.3 * c);
            let x = rng.random_range(0.0..c - w);
            let y = rng.random_range(0.0..c - h);
            Scene {
                image_id: format!("synthetic_{i:04}"),
                image: image.clone(),
                truth: Some(vec![TruthObject {
                    bbox: Aabb::new(x, y, x + w, y + h).expect("positive size"),
                    label: "object".into(),
                }]),
            }
        })
        .collect()
}

#[derive(Debug, Deserialize)]
struct VocAnnotation {
    filename: Option<String>,
    #[serde(default, rename = "object")]
    objects: Vec<VocObject>,
}

#[derive(Debug, Deserialize)]
struct VocObject {
    name: String,
    bndbox: VocBox,
}

#[derive(Debug, Deserialize)]
struct VocBox {
    xmin: f64,
    ymin: f64,
    xmax: f64,
    ymax: f64,
}

/// Reads a PASCAL VOC annotation. The image id is the `filename` stem, or
/// the annotation file stem when absent.
pub fn read_voc_annotation(path: &Path) -> Result<TruthImage, SchemaError> {
    let text = std::fs::read_to_string(path).map_err(|source| SchemaError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_voc_annotation(&text, path)
}

fn parse_voc_annotation(text: &str, path: &Path) -> Result<TruthImage, SchemaError> {
    let ann: VocAnnotation = quick_xml::de::from_str(text)
        .map_err(|e| SchemaError::Invalid(format!("{}: {e}", path.display())))?;
    let stem = |p: &Path| p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let image_id = ann
        .filename
        .as_deref()
        .map(|f| stem(Path::new(f)))
        .unwrap_or_else(|| stem(path));
    let objects = ann
        .objects
        .into_iter()
        .map(|o| {
            let b = o.bndbox;
            Aabb::new(b.xmin, b.ymin, b.xmax, b.ymax)
                .map(|bbox| TruthObject { bbox, label: o.name })
                .map_err(|e| SchemaError::Invalid(format!("{}: {e}", path.display())))
        })
        .collect::<Result<_, _>>()?;
    Ok(TruthImage { image_id, objects })
}

/// Per-label counts, handy for reports.
pub fn class_histogram(records: &[EvalRecord]) -> BTreeMap<String, usize> {
    let mut h = BTreeMap::new();
    for t in records.iter().flat_map(|r| &r.truth) {
        *h.entry(t.label.clone()).or_insert(0) += 1;
    }
    h
}
