//! Run manifests: the reproducibility envelope for an experiment run.
//!
//! The manifest is persisted verbatim into the output directory and every
//! result file embeds the manifest hash. The hash covers the experiment
//! identity (model, corpus, anchors, seed, alphas, precision, stages) but
//! not the output location, so re-running the same manifest into a different
//! directory reproduces byte-identical outputs.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::Precision;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageToggles {
    pub score: bool,
    pub patch: bool,
    pub flip: bool,
    pub steer: bool,
    pub stats: bool,
    pub figures: bool,
}

impl Default for StageToggles {
    fn default() -> Self {
        StageToggles { score: true, patch: true, flip: true, steer: true, stats: true, figures: true }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub model: String,
    pub corpus: String,
    pub anchor_set: String,
    pub anchor_file: Option<String>,
    pub seed: u64,
    pub alphas: Vec<f64>,
    pub precision: Precision,
    pub n_direction_pairs: usize,
    pub out_dir: String,
    pub stages: StageToggles,
}

impl RunManifest {
    /// Hex SHA-256 over the canonical JSON serialization with `out_dir`
    /// blanked.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.out_dir = String::new();
        let json = serde_json::to_string(&canonical).expect("manifest serializes");
        let digest = Sha256::digest(json.as_bytes());
        let mut out = String::with_capacity(64);
        for byte in digest {
            out.push_str(&format!("{byte:02x}"));
        }
        out
    }

    pub fn save(&self, dir: &std::path::Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(dir.join("manifest.json"), text)
    }

    pub fn load(path: &std::path::Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}
