use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Result, UmtError};
use crate::image_ops::{read_pgm, GrayImage};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    BonafideTrain,
    BonafideTest,
    SpoofTrain,
    SpoofTest,
}

impl Role {
    pub fn is_spoof(self) -> bool {
        matches!(self, Role::SpoofTrain | Role::SpoofTest)
    }

    pub fn is_train(self) -> bool {
        matches!(self, Role::BonafideTrain | Role::SpoofTrain)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    /// Relative to the corpus root.
    pub path: PathBuf,
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub material: Option<String>,
    pub image_id: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    pub version: u32,
    pub root: PathBuf,
    /// Known material names; a material's id is its index here.
    pub materials: Vec<String>,
    pub entries: Vec<ManifestEntry>,
}

/// How to discover images under a corpus root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Layout {
    /// A JSON manifest; relative entry paths resolve against the root.
    Manifest(PathBuf),
    /// `{train,test}/{live,spoof/<material>}/*.{pgm,png}`, matched
    /// case-insensitively (`training`, `testing`, `bonafide` and `fake` are
    /// accepted too).
    Convention,
}

impl CorpusManifest {
    pub fn material_id(&self, name: &str) -> Option<u16> {
        self.materials.iter().position(|m| m == name).map(|i| i as u16)
    }

    pub fn entry_material_id(&self, entry: &ManifestEntry) -> Option<u16> {
        entry.material.as_deref().and_then(|m| self.material_id(m))
    }

    pub fn path_of(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.path)
    }

    /// Checks structural invariants without touching the filesystem.
    pub fn validate_structure(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(UmtError::VersionMismatch {
                found: self.version,
                expected: MANIFEST_VERSION,
            });
        }
        let mut ids = HashSet::new();
        for e in &self.entries {
            if !ids.insert(e.image_id) {
                return Err(UmtError::Format(format!("duplicate image id {}", e.image_id)));
            }
            match (&e.material, e.role.is_spoof()) {
                (None, true) => {
                    return Err(UmtError::Format(format!(
                        "spoof entry {} has no material",
                        e.path.display()
                    )))
                }
                (Some(m), _) if self.material_id(m).is_none() => {
                    return Err(UmtError::MissingMaterial(m.clone()))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Structure plus existence and decodability of every image.
    pub fn validate(&self) -> Result<()> {
        self.validate_structure()?;
        for e in &self.entries {
            load_image(&self.path_of(e))?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

/// Decodes a PGM or PNG file as grayscale in `[0, 1]`.
pub fn load_image(path: &Path) -> Result<GrayImage> {
    if !path.is_file() {
        return Err(UmtError::MissingFile(path.to_path_buf()));
    }
    let undecodable = |reason: String| UmtError::UndecodableImage {
        path: path.to_path_buf(),
        reason,
    };
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("pgm") => read_pgm(path).map_err(|e| undecodable(e.to_string())),
        Some("png") => {
            let img = image::open(path).map_err(|e| undecodable(e.to_string()))?;
            let luma = img.into_luma16();
            let (w, h) = (luma.width() as usize, luma.height() as usize);
            let data = luma.into_raw().into_iter().map(|v| v as f32 / 65535.0).collect();
            GrayImage::new(w, h, data).map_err(|e| undecodable(e.to_string()))
        }
        _ => Err(undecodable("unsupported extension".into())),
    }
}

fn is_image(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("pgm") | Some("png")
    )
}

fn sorted_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.sort();
    Ok(paths)
}

fn name_of(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn split_of(name: &str) -> Option<bool> {
    match name.to_ascii_lowercase().as_str() {
        "train" | "training" => Some(true),
        "test" | "testing" => Some(false),
        _ => None,
    }
}

fn convention_entries(root: &Path) -> Result<Vec<(PathBuf, Role, Option<String>)>> {
    let mut found = Vec::new();
    for split_dir in sorted_dir(root)?.into_iter().filter(|p| p.is_dir()) {
        let split_name = name_of(&split_dir);
        let train = split_of(&split_name).ok_or_else(|| UmtError::UnknownRole(split_name.clone()))?;
        for class_dir in sorted_dir(&split_dir)?.into_iter().filter(|p| p.is_dir()) {
            let class = name_of(&class_dir);
            match class.to_ascii_lowercase().as_str() {
                "live" | "bonafide" => {
                    let role = if train { Role::BonafideTrain } else { Role::BonafideTest };
                    for img in sorted_dir(&class_dir)?.into_iter().filter(|p| is_image(p)) {
                        found.push((img, role, None));
                    }
                }
                "spoof" | "fake" => {
                    let role = if train { Role::SpoofTrain } else { Role::SpoofTest };
                    for mat_dir in sorted_dir(&class_dir)?.into_iter().filter(|p| p.is_dir()) {
                        let material = name_of(&mat_dir);
                        for img in sorted_dir(&mat_dir)?.into_iter().filter(|p| is_image(p)) {
                            found.push((img, role, Some(material.clone())));
                        }
                    }
                }
                _ => return Err(UmtError::UnknownRole(format!("{split_name}/{class}"))),
            }
        }
    }
    Ok(found)
}

/// Builds and validates a manifest. Entries are ordered by path.
pub fn ingest(root: &Path, layout: &Layout) -> Result<CorpusManifest> {
    if !root.is_dir() {
        return Err(UmtError::MissingFile(root.to_path_buf()));
    }
    let manifest = match layout {
        Layout::Manifest(file) => {
            if !file.is_file() {
                return Err(UmtError::MissingFile(file.clone()));
            }
            let mut m = CorpusManifest::from_json(&fs::read_to_string(file)?)?;
            m.root = root.to_path_buf();
            m.entries.sort_by(|a, b| a.path.cmp(&b.path));
            m
        }
        Layout::Convention => {
            let found = convention_entries(root)?;
            let materials: BTreeSet<String> = found.iter().filter_map(|f| f.2.clone()).collect();
            let entries = found
                .into_iter()
                .enumerate()
                .map(|(i, (path, role, material))| ManifestEntry {
                    path: path.strip_prefix(root).unwrap_or(&path).to_path_buf(),
                    role,
                    material,
                    image_id: i as u32,
                })
                .collect();
            CorpusManifest {
                version: MANIFEST_VERSION,
                root: root.to_path_buf(),
                materials: materials.into_iter().collect(),
                entries,
            }
        }
    };
    if manifest.entries.is_empty() {
        warn!("corpus at {} has no images", root.display());
    }
    manifest.validate()?;
    Ok(manifest)
}
