//! Sample data: synthetic phantoms, grayscale image IO, preprocessing, and
//! on-disk dataset manifests.

mod io;
mod manifest;
mod phantom;
mod transform;

use serde::{Deserialize, Serialize};

use crate::metrics::BinaryMask;
use crate::tensor::Tensor;

pub use io::{load_grayscale, load_mask, save_gray16, save_mask};
pub use manifest::{read_manifest, write_manifest, DatasetManifest, ManifestEntry, MANIFEST_FILE};
pub use phantom::{generate_phantom, synthesize_set, PhantomSpec, SynthParams};
pub use transform::{extract_patches, normalize, resize_bilinear, NormalizeMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split '{other}' (expected train, val or test)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Synthetic,
    File,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub pixel_spacing_mm: f64,
    pub source: Source,
    pub split: Split,
}

/// Grayscale image `[1, H, W]` in `[0, 1]` with its `[H, W]` ground-truth mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair {
    pub image: Tensor,
    pub mask: BinaryMask,
    pub meta: SampleMeta,
}

impl SamplePair {
    /// `(H, W)`.
    pub fn extents(&self) -> (usize, usize) {
        let s = self.image.shape();
        (s[s.len() - 2], s[s.len() - 1])
    }
}
