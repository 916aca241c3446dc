use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::sequence::{load_sequence, FeatureSequence};
use crate::error::{Error, Result};

/// Dataset manifest: split name → sequence files. Relative paths resolve
/// against the manifest's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub splits: BTreeMap<String, Vec<PathBuf>>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((manifest, base))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn files(&self, split: &str, base: &Path) -> Result<Vec<PathBuf>> {
        let files = self
            .splits
            .get(split)
            .ok_or_else(|| Error::Config(format!("manifest has no split `{split}`")))?;
        Ok(files
            .iter()
            .map(|f| if f.is_absolute() { f.clone() } else { base.join(f) })
            .collect())
    }
}

/// Loads every sequence of `split`, checking they agree on dimension and
/// class count.
pub fn load_split(manifest_path: &Path, split: &str) -> Result<Vec<FeatureSequence>> {
    let (manifest, base) = Manifest::load(manifest_path)?;
    let seqs = manifest
        .files(split, &base)?
        .iter()
        .map(|p| load_sequence(p))
        .collect::<Result<Vec<_>>>()?;
    let Some(first) = seqs.first() else {
        return Err(Error::Config(format!("split `{split}` is empty")));
    };
    for s in &seqs {
        if s.dim != first.dim || s.num_classes != first.num_classes {
            return Err(Error::Dimension(format!(
                "sequence `{}` has D={}, C={} but `{}` has D={}, C={}",
                s.name, s.dim, s.num_classes, first.name, first.dim, first.num_classes
            )));
        }
    }
    Ok(seqs)
}
