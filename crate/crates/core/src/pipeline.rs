//! End-to-end ensemble: augment, detect on every variant, count objects,
//! group, and fuse each group.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augmentation::{Augmentation, AugmentationError, Image, Roster};
use crate::detector::{DetectRequest, Detector, DetectorBinding, DetectorError};
use crate::fusion::{dispatch, Detection, FusionError, FusionMethod, FusionResult, DEFAULT_NMS_IOU, DEFAULT_TOP_T};
use crate::grouping::{group, object_count, DetectionPool, GroupingError, ObjectGroup};
use crate::image_io::{read_image, write_image, ImageIoError};
use crate::schema::{Manifest, ManifestEntry, SchemaError, TruthFile, TruthObject};

pub const DEFAULT_SEED: u64 = 20_190_611;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid pipeline config: {0}")]
    Config(String),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Image(#[from] ImageIoError),
    #[error(transparent)]
    Augmentation(#[from] AugmentationError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Grouping(#[from] GroupingError),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("i/o error")]
    Io(#[from] std::io::Error),
    #[error("every augmentation failed to produce detections for {0}")]
    DetectorFailure(String),
    #[error("all {count} manifest entries failed")]
    AllFailed {
        count: usize,
        /// Every failure came from the detector rather than unreadable input.
        detector: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub roster: Vec<Augmentation>,
    pub top_t: usize,
    pub fusion_method: FusionMethod,
    #[serde(default = "default_nms_iou")]
    pub nms_iou: f64,
    pub binding: DetectorBinding,
    /// Seeds k-means initialisation and the noise augmentations.
    pub seed: u64,
    /// Worker threads for the augment and detect fan-out; 0 = all cores.
    #[serde(default)]
    pub jobs: usize,
}

fn default_nms_iou() -> f64 {
    DEFAULT_NMS_IOU
}

impl PipelineConfig {
    pub fn new(roster: Roster, binding: DetectorBinding) -> Self {
        let top_t = DEFAULT_TOP_T.min(roster.len()).max(1);
        Self {
            roster: roster.0,
            top_t,
            fusion_method: FusionMethod::Aabbfi,
            nms_iou: DEFAULT_NMS_IOU,
            binding,
            seed: DEFAULT_SEED,
            jobs: 0,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let m = self.roster.len();
        if m == 0 {
            return Err(PipelineError::Config("roster is empty".into()));
        }
        if self.top_t == 0 || self.top_t > m {
            return Err(PipelineError::Config(format!(
                "top-T = {} must lie in 1..={m}",
                self.top_t
            )));
        }
        if !(0.0..=1.0).contains(&self.nms_iou) {
            return Err(PipelineError::Config(format!("NMS IoU {} outside [0, 1]", self.nms_iou)));
        }
        for a in &self.roster {
            a.validate()?;
        }
        self.binding.validate()?;
        Ok(())
    }

    /// Roster entry `i` with its noise stream keyed to the run seed.
    fn augmentation(&self, i: usize) -> Augmentation {
        self.roster[i].with_seed(self.seed.wrapping_add(i as u64))
    }
}

/// One input image with optional ground truth (required by the synthetic detector).
#[derive(Debug, Clone)]
pub struct Scene {
    pub image_id: String,
    pub image: Image,
    pub truth: Option<Vec<TruthObject>>,
}

/// Stage wall times in milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub augment_ms: f64,
    pub detect_ms: f64,
    pub group_ms: f64,
    pub fuse_ms: f64,
    pub objects: usize,
}

impl Timing {
    pub fn fuse_ms_per_object(&self) -> f64 {
        if self.objects == 0 {
            0.0
        } else {
            self.fuse_ms / self.objects as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationReport {
    pub augmentation_id: usize,
    pub name: String,
    pub detections: Vec<Detection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectReport {
    pub object_id: usize,
    #[serde(flatten)]
    pub result: FusionResult,
    /// Augmentation ids of every group member.
    pub members: Vec<usize>,
    /// Augmentation ids whose detections were fused.
    pub selected: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub image_id: String,
    pub method: FusionMethod,
    pub top_t: usize,
    pub object_count: usize,
    pub objects: Vec<ObjectReport>,
    pub augmentations: Vec<AugmentationReport>,
    /// Augmentation ids that supplied at least one fused detection.
    pub tally: Vec<usize>,
    /// Kept out of the serialized report so reruns are byte-identical.
    #[serde(skip)]
    pub timing: Timing,
    #[serde(skip)]
    pub groups: Vec<ObjectGroup>,
}

/// Detector output for one scene, ready to be fused with any method.
#[derive(Debug, Clone)]
pub struct DetectedScene {
    pub image_id: String,
    pub augmentations: Vec<AugmentationReport>,
    pub groups: Vec<ObjectGroup>,
    pub object_count: usize,
    pub timing: Timing,
}

impl DetectedScene {
    pub fn pool(&self) -> DetectionPool {
        DetectionPool::new(self.augmentations.iter().map(|a| a.detections.clone()).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TallyEntry {
    pub augmentation_id: usize,
    pub name: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchFailure {
    pub image_path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub reports: Vec<PipelineReport>,
    /// Per augmentation, the number of images where it supplied a fused detection.
    pub tally: Vec<TallyEntry>,
    pub failures: Vec<BatchFailure>,
}

pub struct Pipeline {
    cfg: PipelineConfig,
    detector: Box<dyn Detector>,
    pool: rayon::ThreadPool,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig) -> Result<Self, PipelineError> {
        cfg.validate()?;
        let detector = cfg.binding.connect()?;
        Self::with_detector(cfg, detector)
    }

    /// Uses an already constructed detector instead of `cfg.binding`.
    pub fn with_detector(cfg: PipelineConfig, detector: Box<dyn Detector>) -> Result<Self, PipelineError> {
        cfg.validate()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(Self { cfg, detector, pool })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    /// Augments, detects and groups; fusion is left to [`Pipeline::fuse`].
    pub fn detect(&self, scene: &Scene) -> Result<DetectedScene, PipelineError> {
        let cfg = &self.cfg;
        let m = cfg.roster.len();

        let t0 = Instant::now();
        let variants: Vec<Image> = self.pool.install(|| {
            (0..m)
                .into_par_iter()
                .map(|i| cfg.augmentation(i).apply(&scene.image))
                .collect::<Result<_, _>>()
        })?;
        let workdir = if self.detector.needs_pixels() {
            let dir = tempfile::Builder::new().prefix("boxfuse-").tempdir()?;
            for (i, img) in variants.iter().enumerate() {
                let path = dir.path().join(variant_file_name(&scene.image_id, i, img));
                write_image(&path, img)?;
            }
            Some(dir)
        } else {
            None
        };
        let augment_ms = ms_since(t0);

        let t1 = Instant::now();
        let truth = scene.truth.as_deref();
        let results: Vec<Result<Vec<Detection>, DetectorError>> = self.pool.install(|| {
            (0..m)
                .into_par_iter()
                .map(|i| {
                    let path = workdir
                        .as_ref()
                        .map(|d| d.path().join(variant_file_name(&scene.image_id, i, &variants[i])));
                    self.detector.detect(&DetectRequest {
                        image_id: &scene.image_id,
                        image_path: path.as_deref(),
                        augmentation_id: i,
                        truth,
                    })
                })
                .collect()
        });
        let detect_ms = ms_since(t1);

        if results.iter().all(Result::is_err) {
            if let Some(Err(e)) = results.into_iter().next() {
                log::error!("{}: {}", scene.image_id, error_chain(&e));
            }
            return Err(PipelineError::DetectorFailure(scene.image_id.clone()));
        }
        let augmentations: Vec<AugmentationReport> = results
            .into_iter()
            .enumerate()
            .map(|(i, r)| {
                let name = cfg.roster[i].name();
                match r {
                    Ok(detections) => AugmentationReport {
                        augmentation_id: i,
                        name,
                        detections,
                        warning: None,
                    },
                    Err(e) => {
                        log::warn!("{} augmentation {i} ({name}): {}", scene.image_id, error_chain(&e));
                        AugmentationReport {
                            augmentation_id: i,
                            name,
                            detections: Vec::new(),
                            warning: Some(error_chain(&e)),
                        }
                    }
                }
            })
            .collect();

        let t2 = Instant::now();
        let pool = DetectionPool::new(augmentations.iter().map(|a| a.detections.clone()).collect());
        let s = object_count(&pool);
        let groups = if s == 0 { Vec::new() } else { group(&pool, s, cfg.seed)? };
        let group_ms = ms_since(t2);

        Ok(DetectedScene {
            image_id: scene.image_id.clone(),
            augmentations,
            groups,
            object_count: s,
            timing: Timing {
                augment_ms,
                detect_ms,
                group_ms,
                fuse_ms: 0.0,
                objects: s,
            },
        })
    }

    /// Fuses every group of `detected` with `method`.
    pub fn fuse(&self, detected: &DetectedScene, method: FusionMethod) -> Result<PipelineReport, PipelineError> {
        let t = Instant::now();
        let (objects, tally) = fuse_groups(&detected.groups, self.cfg.top_t, method, self.cfg.nms_iou)?;
        let fuse_ms = ms_since(t);

        Ok(PipelineReport {
            image_id: detected.image_id.clone(),
            method,
            top_t: self.cfg.top_t,
            object_count: detected.object_count,
            objects,
            augmentations: detected.augmentations.clone(),
            tally,
            timing: Timing {
                fuse_ms,
                ..detected.timing
            },
            groups: detected.groups.clone(),
        })
    }

    pub fn run(&self, scene: &Scene) -> Result<PipelineReport, PipelineError> {
        let detected = self.detect(scene)?;
        self.fuse(&detected, self.cfg.fusion_method)
    }

    /// Runs every manifest entry. Unreadable entries are skipped with a
    /// warning; the batch fails only when every entry fails.
    pub fn batch(&self, manifest: &Manifest) -> Result<BatchReport, PipelineError> {
        let outcomes: Vec<Result<PipelineReport, PipelineError>> = manifest
            .entries
            .iter()
            .map(|e| load_scene(e).and_then(|s| self.run(&s)))
            .collect();

        let mut reports = Vec::new();
        let mut failures = Vec::new();
        let mut detector_only = true;
        for (entry, outcome) in manifest.entries.iter().zip(outcomes) {
            match outcome {
                Ok(r) => reports.push(r),
                Err(e) => {
                    detector_only &= matches!(e, PipelineError::DetectorFailure(_) | PipelineError::Detector(_));
                    log::warn!("skipping {}: {}", entry.image_path.display(), error_chain(&e));
                    failures.push(BatchFailure {
                        image_path: entry.image_path.clone(),
                        reason: error_chain(&e),
                    });
                }
            }
        }
        if reports.is_empty() && !failures.is_empty() {
            return Err(PipelineError::AllFailed {
                count: failures.len(),
                detector: detector_only,
            });
        }
        let tally = tally_reports(&self.cfg.roster, &reports);
        Ok(BatchReport {
            reports,
            tally,
            failures,
        })
    }
}

/// Dispatches every group; also returns the sorted augmentation ids that
/// supplied fused members.
pub fn fuse_groups(
    groups: &[ObjectGroup],
    top_t: usize,
    method: FusionMethod,
    nms_iou: f64,
) -> Result<(Vec<ObjectReport>, Vec<usize>), FusionError> {
    let mut objects = Vec::with_capacity(groups.len());
    let mut tally = BTreeSet::new();
    for g in groups {
        let d = dispatch(&g.detections(), top_t, method, nms_iou)?;
        let selected: Vec<usize> = d.selected.iter().map(|&i| g.members[i].augmentation_id).collect();
        tally.extend(selected.iter().copied());
        objects.push(ObjectReport {
            object_id: g.object_id,
            result: d.result,
            members: g.members.iter().map(|m| m.augmentation_id).collect(),
            selected,
        });
    }
    Ok((objects, tally.into_iter().collect()))
}

/// Counts, per augmentation, the reports it supplied a fused detection to.
pub fn tally_reports(roster: &[Augmentation], reports: &[PipelineReport]) -> Vec<TallyEntry> {
    let mut counts = vec![0usize; roster.len()];
    for r in reports {
        for &a in &r.tally {
            if let Some(c) = counts.get_mut(a) {
                *c += 1;
            }
        }
    }
    roster
        .iter()
        .zip(counts)
        .enumerate()
        .map(|(i, (a, count))| TallyEntry {
            augmentation_id: i,
            name: a.name(),
            count,
        })
        .collect()
}

/// Reads the image and, if given, its ground truth.
pub fn load_scene(entry: &ManifestEntry) -> Result<Scene, PipelineError> {
    let image_id = entry.id();
    let image = read_image(&entry.image_path)?;
    let truth = match &entry.truth_path {
        None => None,
        Some(p) => {
            let file = TruthFile::load(p)?;
            let objects = match file.objects(&image_id) {
                Some(o) => o.to_vec(),
                None if file.images.len() == 1 => file.images[0].objects.clone(),
                None => {
                    return Err(SchemaError::Invalid(format!(
                        "{} has no entry for image {image_id:?}",
                        p.display()
                    ))
                    .into())
                }
            };
            Some(objects)
        }
    };
    Ok(Scene {
        image_id,
        image,
        truth,
    })
}

/// `outer: inner: ...` rendering of an error and its sources.
pub fn error_chain(e: &dyn std::error::Error) -> String {
    let mut s = e.to_string();
    let mut cur = e.source();
    while let Some(c) = cur {
        s.push_str(": ");
        s.push_str(&c.to_string());
        cur = c.source();
    }
    s
}

fn variant_file_name(image_id: &str, i: usize, img: &Image) -> String {
    format!("{image_id}__{i:02}.{}", crate::image_io::pnm_extension(img))
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}
