//! Multi-vocabulary compositions: one input embedding table spanning the
//! target vocabulary followed by extra vocabularies at fixed offsets, with a
//! single output head over the target vocabulary.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensors::{self, EmbeddingTable, TensorError};
use crate::wordizer::{Tokenizer, Vocab, WordizerError};

/// Label value ignored by the usual cross-entropy implementations.
pub const MASK_LABEL: i64 = -100;

const INPUT_TENSOR: &str = "input_embeddings";
const HEAD_TENSOR: &str = "output_head";

#[derive(Debug, Error)]
pub enum HydraError {
    #[error("hidden size mismatch: {0}")]
    HiddenDim(String),
    #[error("table {name:?} has {rows} rows for a vocabulary of {vocab}")]
    VocabSize { name: String, rows: usize, vocab: usize },
    #[error("dtype mismatch: {0}")]
    Dtype(String),
    #[error("no segment {0}")]
    NoSegment(usize),
    #[error("segment {segment}: tokenizer vocabulary has {found} tokens, segment has {expected}")]
    TokenizerMismatch { segment: usize, expected: usize, found: usize },
    #[error("token id {id} outside the combined vocabulary of {size}")]
    InvalidId { id: u32, size: usize },
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Wordizer(#[from] WordizerError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub vocab_hash: String,
    pub offset: usize,
    pub size: usize,
}

#[derive(Debug, Clone)]
pub struct HydraComposition {
    pub output_vocab_size: usize,
    /// Segment 0 is the target vocabulary at offset 0.
    pub segments: Vec<Segment>,
    pub input_table: EmbeddingTable,
    pub output_head: EmbeddingTable,
    pub mask_label: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HydraManifest {
    pub output_vocab_size: usize,
    pub segments: Vec<Segment>,
    pub tensor_file: String,
    pub mask_label: i64,
    /// Free-form notes; routing of extra-vocabulary tokens through other
    /// layers is recorded here only.
    #[serde(default)]
    pub notes: Vec<String>,
}

fn check_rows(t: &EmbeddingTable, vocab: &Vocab) -> Result<(), HydraError> {
    if t.rows() != vocab.len() {
        return Err(HydraError::VocabSize {
            name: t.name.clone(),
            rows: t.rows(),
            vocab: vocab.len(),
        });
    }
    Ok(())
}

/// Stacks `[target; extra_1; extra_2; ...]` into one input table.
pub fn compose(
    target_vocab: &Vocab,
    target_embeddings: &EmbeddingTable,
    target_head: &EmbeddingTable,
    extras: &[(&Vocab, &EmbeddingTable)],
) -> Result<HydraComposition, HydraError> {
    check_rows(target_embeddings, target_vocab)?;
    check_rows(target_head, target_vocab)?;
    let dim = target_embeddings.cols();
    if target_head.cols() != dim {
        return Err(HydraError::HiddenDim(format!("head has {} columns, embeddings {dim}", target_head.cols())));
    }
    let dtype = target_embeddings.dtype();
    let mut segments = vec![Segment {
        vocab_hash: target_vocab.content_hash(),
        offset: 0,
        size: target_vocab.len(),
    }];
    let mut data = target_embeddings.bytes().to_vec();
    let mut offset = target_vocab.len();
    for (k, (vocab, table)) in extras.iter().enumerate() {
        check_rows(table, vocab)?;
        if table.cols() != dim {
            return Err(HydraError::HiddenDim(format!("extra table {} has {} columns, expected {dim}", k + 1, table.cols())));
        }
        if table.dtype() != dtype {
            return Err(HydraError::Dtype(format!("extra table {} is {:?}, expected {dtype:?}", k + 1, table.dtype())));
        }
        segments.push(Segment {
            vocab_hash: vocab.content_hash(),
            offset,
            size: vocab.len(),
        });
        data.extend_from_slice(table.bytes());
        offset += vocab.len();
    }
    let input_table = EmbeddingTable::from_bytes(INPUT_TENSOR, dtype, offset, dim, data)?;
    Ok(HydraComposition {
        output_vocab_size: target_vocab.len(),
        segments,
        input_table,
        output_head: target_head.clone().with_name(HEAD_TENSOR),
        mask_label: MASK_LABEL,
    })
}

impl HydraComposition {
    pub fn combined_size(&self) -> usize {
        self.segments.last().map_or(0, |s| s.offset + s.size)
    }

    fn check_id(&self, id: u32) -> Result<(), HydraError> {
        if (id as usize) < self.combined_size() {
            Ok(())
        } else {
            Err(HydraError::InvalidId {
                id,
                size: self.combined_size(),
            })
        }
    }

    /// Recovers `(segment index, id within the segment)`.
    pub fn decompose(&self, id: u32) -> Result<(usize, u32), HydraError> {
        self.check_id(id)?;
        let k = self.segments.partition_point(|s| s.offset <= id as usize) - 1;
        Ok((k, id - self.segments[k].offset as u32))
    }

    pub fn combine(&self, segment: usize, raw: u32) -> Result<u32, HydraError> {
        let s = self.segments.get(segment).ok_or(HydraError::NoSegment(segment))?;
        if raw as usize >= s.size {
            return Err(HydraError::InvalidId { id: raw, size: s.size });
        }
        Ok((s.offset + raw as usize) as u32)
    }

    /// Encodes each span with its segment's tokenizer and shifts ids by the
    /// segment offset. The flag tells whether the id is in the output
    /// vocabulary.
    pub fn encode_mixed(&self, spans: &[(usize, &str)], tokenizers: &[&Tokenizer]) -> Result<Vec<(u32, bool)>, HydraError> {
        let mut out = Vec::new();
        for &(segment, text) in spans {
            let seg = self.segments.get(segment).ok_or(HydraError::NoSegment(segment))?;
            let tok = tokenizers.get(segment).ok_or(HydraError::NoSegment(segment))?;
            if tok.vocab().len() != seg.size {
                return Err(HydraError::TokenizerMismatch {
                    segment,
                    expected: seg.size,
                    found: tok.vocab().len(),
                });
            }
            for raw in tok.encode(text)? {
                let id = (seg.offset + raw as usize) as u32;
                out.push((id, (id as usize) < self.output_vocab_size));
            }
        }
        Ok(out)
    }

    /// Replaces ids outside the output vocabulary with the mask label.
    pub fn mask_labels(&self, ids: &[u32]) -> Result<Vec<i64>, HydraError> {
        ids.iter()
            .map(|&id| {
                self.check_id(id)?;
                Ok(if (id as usize) < self.output_vocab_size {
                    id as i64
                } else {
                    self.mask_label
                })
            })
            .collect()
    }

    pub fn manifest(&self, tensor_file: &str) -> HydraManifest {
        HydraManifest {
            output_vocab_size: self.output_vocab_size,
            segments: self.segments.clone(),
            tensor_file: tensor_file.to_owned(),
            mask_label: self.mask_label,
            notes: vec!["extra segments share the target model's layers; no routing is applied".into()],
        }
    }

    /// Writes the tensors next to the manifest and then the manifest.
    pub fn save(&self, manifest_path: &Path, tensor_file: &str) -> Result<(), HydraError> {
        let dir = manifest_path.parent().unwrap_or(Path::new("."));
        tensors::write_tensors(&dir.join(tensor_file), &[self.input_table.clone(), self.output_head.clone()], false)?;
        let json = serde_json::to_string_pretty(&self.manifest(tensor_file)).expect("manifest serializes");
        crate::write_atomic(manifest_path, json.as_bytes()).map_err(|source| HydraError::Io {
            path: manifest_path.to_owned(),
            source,
        })
    }

    pub fn load(manifest_path: &Path) -> Result<Self, HydraError> {
        let text = std::fs::read_to_string(manifest_path).map_err(|source| HydraError::Io {
            path: manifest_path.to_owned(),
            source,
        })?;
        let m: HydraManifest = serde_json::from_str(&text).map_err(|e| HydraError::Manifest(e.to_string()))?;
        let mut expected = 0;
        for s in &m.segments {
            if s.offset != expected {
                return Err(HydraError::Manifest(format!("segment offset {} should be {expected}", s.offset)));
            }
            expected += s.size;
        }
        if m.segments.first().map(|s| s.size) != Some(m.output_vocab_size) {
            return Err(HydraError::Manifest("first segment must be the output vocabulary".into()));
        }
        let dir = manifest_path.parent().unwrap_or(Path::new("."));
        let path = dir.join(&m.tensor_file);
        let input_table = tensors::read_tensor(&path, INPUT_TENSOR)?;
        let output_head = tensors::read_tensor(&path, HEAD_TENSOR)?;
        if input_table.rows() != expected || output_head.rows() != m.output_vocab_size {
            return Err(HydraError::Manifest("tensor shapes disagree with segments".into()));
        }
        Ok(HydraComposition {
            output_vocab_size: m.output_vocab_size,
            segments: m.segments,
            input_table,
            output_head,
            mask_label: m.mask_label,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensors::Dtype;
    use crate::wordizer::MarkerStyle;

    fn vocab(prefix: &str, n: usize) -> Vocab {
        Vocab::new((0..n).map(|i| format!("{prefix}{i}")).collect(), MarkerStyle::default(), [], false).unwrap()
    }

    fn table(rows: usize, dim: usize, base: f32) -> EmbeddingTable {
        let v: Vec<f32> = (0..rows * dim).map(|i| base + i as f32).collect();
        EmbeddingTable::from_f32("t", Dtype::F32, rows, dim, &v).unwrap()
    }

    #[test]
    fn offsets_and_concatenation() {
        let (tv, e1, e2) = (vocab("t", 200), vocab("a", 100), vocab("b", 50));
        let (tt, t1, t2) = (table(200, 4, 0.0), table(100, 4, 1e4), table(50, 4, 2e4));
        let c = compose(&tv, &tt, &tt, &[(&e1, &t1), (&e2, &t2)]).unwrap();
        let offsets: Vec<_> = c.segments.iter().map(|s| s.offset).collect();
        assert_eq!(offsets, vec![0, 200, 300]);
        assert_eq!(c.input_table.rows(), 350);
        assert_eq!(c.input_table.row_bytes(305), t2.row_bytes(5));
        assert_eq!(c.output_head.rows(), 200);
        assert_eq!(c.decompose(305).unwrap(), (2, 5));
        assert_eq!(c.combine(2, 5).unwrap(), 305);
        assert!(c.decompose(350).is_err());
    }

    #[test]
    fn no_extras_is_plain_model() {
        let tv = vocab("t", 3);
        let tt = table(3, 2, 0.0);
        let c = compose(&tv, &tt, &tt, &[]).unwrap();
        assert_eq!(c.input_table.bytes(), tt.bytes());
        assert_eq!(c.mask_labels(&[0, 1, 2]).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn hidden_dim_mismatch() {
        let (tv, ev) = (vocab("t", 2), vocab("e", 2));
        let tt = table(2, 3, 0.0);
        assert!(matches!(
            compose(&tv, &tt, &tt, &[(&ev, &table(2, 4, 0.0))]),
            Err(HydraError::HiddenDim(_))
        ));
    }

    #[test]
    fn masking() {
        let (tv, ev) = (vocab("t", 32000), vocab("e", 32000));
        let (tt, et) = (EmbeddingTable::zeros("t", Dtype::F16, 32000, 1), EmbeddingTable::zeros("e", Dtype::F16, 32000, 1));
        let c = compose(&tv, &tt, &tt, &[(&ev, &et)]).unwrap();
        assert_eq!(c.mask_labels(&[5, 32017, 40]).unwrap(), vec![5, -100, 40]);
        assert_eq!(c.mask_labels(&[32000, 63999]).unwrap(), vec![-100, -100]);
        assert!(c.mask_labels(&[64000]).is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let (tv, ev) = (vocab("t", 3), vocab("e", 2));
        let (tt, et) = (table(3, 2, 0.0), table(2, 2, 9.0));
        let c = compose(&tv, &tt, &tt, &[(&ev, &et)]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = dir.path().join("hydra.json");
        c.save(&manifest, "hydra.safetensors").unwrap();
        let back = HydraComposition::load(&manifest).unwrap();
        assert_eq!(back.segments, c.segments);
        assert_eq!(back.input_table, c.input_table);
        assert_eq!(back.output_head, c.output_head);
    }
}
