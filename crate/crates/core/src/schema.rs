//! On-disk JSON formats: replay files, ground truth and dataset manifests.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::Detection;
use crate::geometry::Aabb;

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("{path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, SchemaError> {
    let text = fs::read_to_string(path).map_err(|source| SchemaError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| SchemaError::Json {
        path: path.display().to_string(),
        source,
    })
}

/// `{"images":[{"image_id", "augmentations":[{"augmentation_id", "detections":[…]}]}]}`
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplayFile {
    pub images: Vec<ReplayImage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayImage {
    pub image_id: String,
    pub augmentations: Vec<ReplayAugmentation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayAugmentation {
    pub augmentation_id: usize,
    pub detections: Vec<Detection>,
}

impl ReplayFile {
    pub fn load(path: &Path) -> Result<Self, SchemaError> {
        read_json(path)
    }

    pub fn lookup(&self, image_id: &str, augmentation_id: usize) -> Option<&[Detection]> {
        self.images
            .iter()
            .find(|i| i.image_id == image_id)?
            .augmentations
            .iter()
            .find(|a| a.augmentation_id == augmentation_id)
            .map(|a| a.detections.as_slice())
    }

    pub fn image(&self, image_id: &str) -> Option<&ReplayImage> {
        self.images.iter().find(|i| i.image_id == image_id)
    }
}

/// Ground-truth object: the detection schema without a score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthObject {
    pub bbox: Aabb,
    pub label: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub images: Vec<TruthImage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthImage {
    pub image_id: String,
    pub objects: Vec<TruthObject>,
}

impl TruthFile {
    pub fn load(path: &Path) -> Result<Self, SchemaError> {
        read_json(path)
    }

    pub fn objects(&self, image_id: &str) -> Option<&[TruthObject]> {
        self.images
            .iter()
            .find(|i| i.image_id == image_id)
            .map(|i| i.objects.as_slice())
    }
}

/// One dataset entry. `image_id` defaults to the image file stem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_id: Option<String>,
}

impl ManifestEntry {
    pub fn id(&self) -> String {
        self.image_id.clone().unwrap_or_else(|| {
            self.image_path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default()
        })
    }
}

/// JSON array of [`ManifestEntry`]; relative paths resolve against the manifest's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, SchemaError> {
        let mut m: Manifest = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for e in &mut m.entries {
            if e.image_path.is_relative() {
                e.image_path = base.join(&e.image_path);
            }
            if let Some(t) = e.truth_path.as_mut() {
                if t.is_relative() {
                    *t = base.join(&*t);
                }
            }
        }
        Ok(m)
    }
}
