//! Dataset directories: `images/NNNN.png` (16-bit), `masks/NNNN.png`
//! (8-bit, {0, 255}) and a JSON `manifest.json` listing each entry's
//! `image_path`, `mask_path` (relative to the root) and `split`.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{load_grayscale, load_mask, save_gray16, save_mask, SampleMeta, SamplePair, Source, Split};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
const FORMAT_TAG: &str = "lightseg-manifest";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image_path: String,
    pub mask_path: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ManifestDoc {
    format: String,
    version: u32,
    pixel_spacing_mm: Option<f64>,
    entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub pixel_spacing_mm: Option<f64>,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    /// Decodes every sample of `split`, in manifest order.
    pub fn load_split(&self, split: Split) -> Result<Vec<SamplePair>> {
        let entries: Vec<&ManifestEntry> = self.split(split).collect();
        entries
            .par_iter()
            .map(|e| {
                let image = load_grayscale(self.root.join(&e.image_path))?;
                let mask = load_mask(self.root.join(&e.mask_path))?;
                if image.shape()[1..] != *mask.shape() {
                    return Err(Error::Manifest(format!(
                        "entry {}: image {:?} and mask {:?} differ in size",
                        e.image_path,
                        image.shape(),
                        mask.shape()
                    )));
                }
                Ok(SamplePair {
                    image,
                    mask,
                    meta: SampleMeta {
                        pixel_spacing_mm: self.pixel_spacing_mm.unwrap_or(f64::NAN),
                        source: Source::File,
                        split,
                    },
                })
            })
            .collect()
    }
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

/// Writes all samples and the manifest under `root`. Splits come from each
/// sample's metadata.
pub fn write_manifest(samples: &[SamplePair], root: impl AsRef<Path>) -> Result<DatasetManifest> {
    let root = root.as_ref();
    create_dir(&root.join("images"))?;
    create_dir(&root.join("masks"))?;
    let entries: Vec<ManifestEntry> = samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let entry = ManifestEntry {
                image_path: format!("images/{i:04}.png"),
                mask_path: format!("masks/{i:04}.png"),
                split: s.meta.split,
            };
            save_gray16(root.join(&entry.image_path), &s.image)?;
            save_mask(root.join(&entry.mask_path), &s.mask)?;
            Ok(entry)
        })
        .collect::<Result<_>>()?;
    let pixel_spacing_mm = samples.first().map(|s| s.meta.pixel_spacing_mm).filter(|v| v.is_finite());
    let doc = ManifestDoc {
        format: FORMAT_TAG.into(),
        version: 1,
        pixel_spacing_mm,
        entries: entries.clone(),
    };
    let path = root.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&doc).expect("manifest serializes");
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(DatasetManifest { root: root.to_path_buf(), pixel_spacing_mm, entries })
}

/// Parses `root/manifest.json` and checks that every referenced file exists.
pub fn read_manifest(root: impl AsRef<Path>) -> Result<DatasetManifest> {
    let root = root.as_ref();
    let path = root.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::Manifest(format!("cannot read {}: {e}", path.display())))?;
    let doc: ManifestDoc = serde_json::from_str(&text)
        .map_err(|e| Error::Manifest(format!("malformed {}: {e}", path.display())))?;
    if doc.format != FORMAT_TAG || doc.version != 1 {
        return Err(Error::Manifest(format!(
            "{}: unsupported format '{}' version {}",
            path.display(),
            doc.format,
            doc.version
        )));
    }
    for e in &doc.entries {
        for p in [&e.image_path, &e.mask_path] {
            if !root.join(p).is_file() {
                return Err(Error::Manifest(format!("entry references missing file {p}")));
            }
        }
    }
    Ok(DatasetManifest { root: root.to_path_buf(), pixel_spacing_mm: doc.pixel_spacing_mm, entries: doc.entries })
}
