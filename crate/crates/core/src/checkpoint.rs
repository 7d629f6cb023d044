//! Versioned JSON checkpoints and atomic artifact writes.
//!
//! Layout (format version 1):
//!
//! ```json
//! {
//!   "format": "lacon-checkpoint",
//!   "version": 1,
//!   "tool_version": "0.1.0",
//!   "config": { ...TrainConfig... },
//!   "seed": 7,
//!   "vocab": ["[PAD]", "[UNK]", "[SEP]", "..."],
//!   "label_vocab": ["neg", "pos"],
//!   "dev_indices": [3, 17],
//!   "tensors": [{ "name": "token_embeddings", "rows": 40, "cols": 32, "data": [...] }, ...]
//! }
//! ```
//!
//! Floats are written in shortest round-trip form and parsed exactly, so a
//! save/load cycle reproduces every parameter bit for bit.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Vocab;
use crate::error::{Error, Result};
use crate::math::Matrix;
use crate::model::Model;
use crate::trainer::{Mode, TrainConfig};

pub const CHECKPOINT_FORMAT: &str = "lacon-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub vocab: Vocab,
    pub label_vocab: Vec<String>,
    /// Dev rows held out from the training file, when the split was internal.
    pub dev_indices: Option<Vec<usize>>,
    pub model: Model,
}

#[derive(Serialize, Deserialize)]
struct TensorDoc {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointDoc {
    format: String,
    version: u32,
    tool_version: String,
    config: TrainConfig,
    seed: u64,
    vocab: Vocab,
    label_vocab: Vec<String>,
    dev_indices: Option<Vec<usize>>,
    tensors: Vec<TensorDoc>,
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        let doc = CheckpointDoc {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            tool_version: TOOL_VERSION.into(),
            config: self.config.clone(),
            seed: self.config.seed,
            vocab: self.vocab.clone(),
            label_vocab: self.label_vocab.clone(),
            dev_indices: self.dev_indices.clone(),
            tensors: self
                .model
                .tensors()
                .into_iter()
                .map(|(name, m)| TensorDoc { name, rows: m.rows(), cols: m.cols(), data: m.as_slice().to_vec() })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Checkpoint> {
        let doc: CheckpointDoc =
            serde_json::from_str(text).map_err(|e| Error::CheckpointFormat(format!("not a valid checkpoint document: {e}")))?;
        if doc.format != CHECKPOINT_FORMAT {
            return Err(Error::CheckpointFormat(format!("unexpected format tag \"{}\"", doc.format)));
        }
        if doc.version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointFormat(format!("unsupported checkpoint version {}", doc.version)));
        }
        let cfg = &doc.config;
        let classes = doc.label_vocab.len();
        let mut model = Model::init(0, doc.vocab.len(), cfg.dim, classes, cfg.kernel_width)
            .map_err(|e| Error::CheckpointFormat(format!("invalid shapes: {e}")))?;
        if cfg.mode == Mode::CeBaseline {
            model = model.with_classifier(0);
        }
        let expected: Vec<(String, (usize, usize))> = model.tensors().into_iter().map(|(n, m)| (n, m.shape())).collect();
        if expected.len() != doc.tensors.len() {
            return Err(Error::CheckpointFormat(format!("expected {} tensors, found {}", expected.len(), doc.tensors.len())));
        }
        for ((name, shape), (slot, t)) in expected.iter().zip(model.tensors_mut().into_iter().zip(doc.tensors)) {
            if &t.name != name || (t.rows, t.cols) != *shape {
                return Err(Error::CheckpointFormat(format!(
                    "tensor {} {}x{} does not match expected {name} {}x{}",
                    t.name, t.rows, t.cols, shape.0, shape.1
                )));
            }
            *slot = Matrix::new(t.rows, t.cols, t.data).map_err(|e| Error::CheckpointFormat(format!("tensor {name}: {e}")))?;
        }
        Ok(Checkpoint {
            config: TrainConfig { seed: doc.seed, ..doc.config },
            vocab: doc.vocab,
            label_vocab: doc.label_vocab,
            dev_indices: doc.dev_indices,
            model,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_json(&text)
    }
}

/// Writes `bytes` to a temporary sibling file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or_else(|| Path::new("."));
    let name = path.file_name().ok_or_else(|| Error::io(path, std::io::Error::other("path has no file name")))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Dataset, Example, TaskMetric, Text};

    fn sample(mode: Mode) -> Checkpoint {
        let ds = Dataset::new(
            vec![Example { text: Text::Single { text: "a b c".into() }, label: 0 }],
            vec!["x".into(), "y".into()],
            TaskMetric::Accuracy,
        )
        .unwrap();
        let vocab = Vocab::build(&ds);
        let config = TrainConfig { mode, dim: 4, ..TrainConfig::default() };
        let mut model = Model::init(3, vocab.len(), 4, 2, 3).unwrap();
        if mode == Mode::CeBaseline {
            model = model.with_classifier(3);
        }
        Checkpoint { config, vocab, label_vocab: ds.label_vocab, dev_indices: Some(vec![0]), model }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        for mode in [Mode::LaconFusion, Mode::CeBaseline] {
            let ck = sample(mode);
            let path = dir.path().join("ck.json");
            ck.save(&path).unwrap();
            let back = Checkpoint::load(&path).unwrap();
            assert_eq!(back, ck);
            assert_eq!(back.to_json(), ck.to_json());
        }
    }

    #[test]
    fn rejects_foreign_and_tampered_documents() {
        assert!(matches!(Checkpoint::from_json("{}"), Err(Error::CheckpointFormat(_))));
        let json = sample(Mode::LaconVanilla).to_json().replace("\"version\": 1", "\"version\": 9");
        assert!(matches!(Checkpoint::from_json(&json), Err(Error::CheckpointFormat(_))));
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.txt");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
        assert!(write_atomic(&dir.path().join("missing/x.txt"), b"z").is_err());
    }
}
