//! JSON scene manifests.
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "scenes": [
//!     {
//!       "scene_id": "s90_001",
//!       "camera_tag": "s90",
//!       "reference": ["ref_a.ppm", "ref_b.ppm"],
//!       "clean": ["clean.ppm"],
//!       "noisy": ["noisy_1.ppm"],
//!       "crop": {"x": 0, "y": 0, "w": 1024, "h": 768},
//!       "alignment": {"anchor_percentile": 99, "anchor_value": 230, "joint_alpha": false}
//!     }
//!   ]
//! }
//! ```
//!
//! Relative paths resolve against the manifest's directory.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::alignment::{AlignmentConfig, AnchorMapping};
use crate::codec::read_pnm16;
use crate::error::{Error, Result};
use crate::raster::Rect;
use crate::scene::SceneBundle;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AlignmentOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor_percentile: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor_value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joint_alpha: Option<bool>,
}

impl AlignmentOverrides {
    pub fn apply(&self, base: &AlignmentConfig) -> AlignmentConfig {
        let mut cfg = *base;
        cfg.anchor = AnchorMapping {
            percentile: self.anchor_percentile.unwrap_or(base.anchor.percentile),
            value: self.anchor_value.unwrap_or(base.anchor.value),
        };
        if let Some(j) = self.joint_alpha {
            cfg.joint_alpha = j;
        }
        cfg
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub scene_id: String,
    #[serde(default)]
    pub camera_tag: String,
    pub reference: Vec<PathBuf>,
    pub clean: Vec<PathBuf>,
    #[serde(default)]
    pub noisy: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crop: Option<Rect>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alignment: Option<AlignmentOverrides>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub schema_version: u32,
    pub scenes: Vec<SceneManifest>,
}

/// A scene together with the directory its relative paths resolve against.
#[derive(Clone, Debug)]
pub struct ManifestEntry {
    pub base_dir: PathBuf,
    pub scene: SceneManifest,
}

impl SceneManifest {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(format!("scene {}: {m}", self.scene_id)));
        if self.scene_id.is_empty() {
            return Err(Error::invalid("scene with empty scene_id"));
        }
        if self.reference.is_empty() {
            return bad("needs at least one reference path");
        }
        if self.clean.is_empty() {
            return bad("needs at least one clean path");
        }
        let mut seen = HashSet::new();
        for p in self.reference.iter().chain(&self.clean).chain(&self.noisy) {
            if !seen.insert(p) {
                return bad(&format!("path {} listed twice", p.display()));
            }
        }
        Ok(())
    }

    pub fn alignment_config(&self, base: &AlignmentConfig) -> AlignmentConfig {
        self.alignment.as_ref().map_or(*base, |o| o.apply(base))
    }
}

impl ManifestEntry {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Reads every image and assembles the bundle. Crop bounds are checked
    /// against the loaded images.
    pub fn load_bundle(&self) -> Result<SceneBundle> {
        let load =
            |paths: &[PathBuf]| -> Result<Vec<_>> { paths.iter().map(|p| read_pnm16(self.resolve(p))).collect() };
        let bundle = SceneBundle {
            scene_id: self.scene.scene_id.clone(),
            camera_tag: self.scene.camera_tag.clone(),
            reference: load(&self.scene.reference)?,
            clean: load(&self.scene.clean)?,
            noisy: load(&self.scene.noisy)?,
            crop: self.scene.crop,
        };
        bundle.validate()?;
        Ok(bundle)
    }
}

pub fn parse_manifest(text: &str, base_dir: &Path) -> Result<Vec<ManifestEntry>> {
    let file: ManifestFile = serde_json::from_str(text)?;
    if file.schema_version != SCHEMA_VERSION {
        return Err(Error::invalid(format!(
            "unsupported manifest schema_version {} (expected {SCHEMA_VERSION})",
            file.schema_version
        )));
    }
    file.scenes
        .into_iter()
        .map(|scene| {
            scene.validate()?;
            Ok(ManifestEntry {
                base_dir: base_dir.to_path_buf(),
                scene,
            })
        })
        .collect()
}

/// Loads and merges manifest files, sorted by scene id. Duplicate scene ids
/// across files are rejected.
pub fn load_manifests<P: AsRef<Path>>(paths: &[P]) -> Result<Vec<ManifestEntry>> {
    let mut all = Vec::new();
    for path in paths {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        all.extend(parse_manifest(&text, &base)?);
    }
    all.sort_by(|a, b| a.scene.scene_id.cmp(&b.scene.scene_id));
    if let Some(w) = all.windows(2).find(|w| w[0].scene.scene_id == w[1].scene.scene_id) {
        return Err(Error::invalid(format!("duplicate scene id {}", w[0].scene.scene_id)));
    }
    Ok(all)
}

pub fn write_manifest(path: &Path, scenes: Vec<SceneManifest>) -> Result<()> {
    let file = ManifestFile {
        schema_version: SCHEMA_VERSION,
        scenes,
    };
    let text = serde_json::to_string_pretty(&file)? + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
