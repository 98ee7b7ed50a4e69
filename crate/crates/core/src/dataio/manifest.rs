//! Dataset manifest: a JSON file naming the skeleton, the optional embedding
//! table and every sample. Relative paths resolve against the manifest's
//! directory.
//!
//! ```json
//! {
//!   "skeleton": "skeleton.json",
//!   "embeddings": "embeddings.csv",
//!   "vocabulary": "vocab.txt",
//!   "samples": [
//!     {"id": "s0000", "pose": "poses/s0000.jsonl", "glosses": "G1 G4 G0", "embedding_row": "s0000"}
//!   ]
//! }
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    load_embeddings, load_pose_sequence, load_skeleton, read_text, save_json, save_pose_sequence, save_skeleton,
    schema, EmbeddingTable, Vocabulary,
};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::trainer::{Dataset, Sample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestSample {
    pub id: String,
    pub pose: PathBuf,
    pub glosses: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_row: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub skeleton: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
    /// Token list fixing gloss ids; tokens not in it are appended.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocabulary: Option<PathBuf>,
    pub samples: Vec<ManifestSample>,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl DatasetManifest {
    pub fn read(path: &Path) -> Result<DatasetManifest> {
        serde_json::from_str(&read_text(path)?).map_err(|e| schema(path, e.to_string()))
    }

    /// Check references, then load every file. Gloss tokens missing from the
    /// vocabulary are interned in manifest order.
    pub fn load(path: &Path) -> Result<Dataset> {
        let m = DatasetManifest::read(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let skeleton_path = resolve(base, &m.skeleton);
        let mut referenced = vec![skeleton_path.clone()];
        referenced.extend(m.embeddings.iter().map(|e| resolve(base, e)));
        referenced.extend(m.vocabulary.iter().map(|e| resolve(base, e)));
        for f in &referenced {
            if !f.is_file() {
                return Err(schema(path, format!("referenced file {} does not exist", f.display())));
            }
        }
        let skeleton = load_skeleton(&skeleton_path)?;
        let table = m
            .embeddings
            .as_ref()
            .map(|e| load_embeddings(&resolve(base, e)))
            .transpose()?;
        let mut vocab = match &m.vocabulary {
            Some(v) => Vocabulary::load(&resolve(base, v))?,
            None => Vocabulary::new(),
        };
        let mut seen = std::collections::HashSet::new();
        let mut samples = Vec::with_capacity(m.samples.len());
        for (i, s) in m.samples.iter().enumerate() {
            let at = format!("samples[{i}]");
            if !seen.insert(s.id.clone()) {
                return Err(schema(path, format!("{at}: duplicate sample id `{}`", s.id)));
            }
            let pose_path = resolve(base, &s.pose);
            if !pose_path.is_file() {
                return Err(schema(
                    path,
                    format!("{at}: pose file {} does not exist", pose_path.display()),
                ));
            }
            let glosses: Vec<u32> = s.glosses.split_whitespace().map(|t| vocab.intern(t)).collect();
            if glosses.is_empty() {
                return Err(schema(path, format!("{at}: empty gloss string")));
            }
            let sentence = match (&s.embedding_row, &table) {
                (None, _) => None,
                (Some(_), None) => {
                    return Err(schema(
                        path,
                        format!("{at}: embedding_row given but no embeddings file"),
                    ))
                }
                (Some(row), Some(t)) => Some(
                    t.row(row)
                        .ok_or_else(|| schema(path, format!("{at}: embedding row `{row}` not in the table")))?
                        .to_vec(),
                ),
            };
            samples.push(Sample {
                id: s.id.clone(),
                glosses,
                pose: load_pose_sequence(&pose_path, &skeleton)?,
                sentence,
            });
        }
        Dataset::new(skeleton, vocab, samples)
    }

    /// Write `dataset` under `dir` (skeleton, one pose file per sample,
    /// embeddings if every sample has one, vocabulary) plus `manifest.json`.
    pub fn write_dataset(dir: &Path, dataset: &Dataset) -> Result<PathBuf> {
        let poses = dir.join("poses");
        std::fs::create_dir_all(&poses).map_err(|e| Error::io(&poses, e))?;
        save_skeleton(&dir.join("skeleton.json"), &dataset.skeleton)?;
        dataset.vocab.save(&dir.join("vocab.txt"))?;
        let with_embeddings = dataset.samples.iter().all(|s| s.sentence.is_some());
        let mut entries = Vec::with_capacity(dataset.len());
        for s in &dataset.samples {
            let rel = PathBuf::from("poses").join(format!("{}.jsonl", s.id));
            save_pose_sequence(&dir.join(&rel), &s.pose, &dataset.skeleton)?;
            let tokens: Vec<&str> = s
                .glosses
                .iter()
                .map(|&g| dataset.vocab.token(g).expect("validated gloss id"))
                .collect();
            entries.push(ManifestSample {
                id: s.id.clone(),
                pose: rel,
                glosses: tokens.join(" "),
                embedding_row: with_embeddings.then(|| s.id.clone()),
            });
        }
        let embeddings = if with_embeddings && !dataset.is_empty() {
            let rows: Vec<Vec<f64>> = dataset.samples.iter().map(|s| s.sentence.clone().unwrap()).collect();
            let table = EmbeddingTable {
                sample_ids: dataset.samples.iter().map(|s| s.id.clone()).collect(),
                rows: Tensor::from_rows(&rows)?,
            };
            table.save(&dir.join("embeddings.csv"))?;
            Some(PathBuf::from("embeddings.csv"))
        } else {
            None
        };
        let manifest = DatasetManifest {
            skeleton: PathBuf::from("skeleton.json"),
            embeddings,
            vocabulary: Some(PathBuf::from("vocab.txt")),
            samples: entries,
        };
        let path = dir.join("manifest.json");
        save_json(&path, &manifest)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::{synth_dataset, SynthSpec};

    fn small() -> Dataset {
        synth_dataset(&SynthSpec {
            num_sequences: 4,
            frames_per_sequence: 6,
            ..SynthSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn written_dataset_loads_back() {
        let dir = tempfile::tempdir().unwrap();
        let d = small();
        let m = DatasetManifest::write_dataset(dir.path(), &d).unwrap();
        let back = DatasetManifest::load(&m).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn missing_pose_file_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let m = DatasetManifest::write_dataset(dir.path(), &small()).unwrap();
        std::fs::remove_file(dir.path().join("poses/s0002.jsonl")).unwrap();
        let err = DatasetManifest::load(&m).unwrap_err();
        assert!(err.to_string().contains("samples[2]"), "{err}");
    }

    #[test]
    fn unknown_embedding_row_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let m = DatasetManifest::write_dataset(dir.path(), &small()).unwrap();
        let mut man = DatasetManifest::read(&m).unwrap();
        man.samples[1].embedding_row = Some("nope".into());
        save_json(&m, &man).unwrap();
        let err = DatasetManifest::load(&m).unwrap_err();
        assert!(err.to_string().contains("nope"), "{err}");
    }
}
