//! File-level entry points shared by the command line and any scripting
//! layer, so every front end writes the same bytes.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aligner::{AlignDirection, AlignerConfig};
use crate::corpus::FilterConfig;
use crate::hydra::{self, HydraManifest};
use crate::mapper::{MapError, MapperConfig, TokenMapping};
use crate::pipeline::{run_pipeline, PipelineConfig, PipelineError, TokenizerPaths};
use crate::remapper::{self, Fallback, RemapOptions, RemapReport};
use crate::tensors::{self, EmbeddingTable};
use crate::wordizer::Vocab;

pub use crate::pipeline::{stats, MappingStats, TokenStat};

/// Everything `build_mapping` needs besides the three input paths.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MappingOptions {
    pub max_pairs: Option<usize>,
    pub filter: FilterConfig,
    pub aligner: AlignerConfig,
    pub direction: AlignDirection,
    pub mapper: MapperConfig,
    pub threads: Option<usize>,
    /// Where stage caches and artifacts go; a fresh temporary directory
    /// when absent.
    pub output_dir: Option<PathBuf>,
}

/// Runs the pipeline through the mapping stage and returns the mapping.
pub fn build_mapping(
    corpus: &Path,
    source: &TokenizerPaths,
    target: &TokenizerPaths,
    options: &MappingOptions,
) -> Result<TokenMapping, PipelineError> {
    let scratch;
    let out = match &options.output_dir {
        Some(dir) => dir.clone(),
        None => {
            scratch = tempfile::tempdir().map_err(|e| PipelineError::Stage {
                stage: "setup",
                source: e.into(),
            })?;
            scratch.path().to_path_buf()
        }
    };
    let mut cfg = PipelineConfig::new(corpus.to_path_buf(), source.clone(), target.clone(), out.clone());
    cfg.max_pairs = options.max_pairs;
    cfg.filter = options.filter;
    cfg.aligner = options.aligner.clone();
    cfg.direction = options.direction;
    cfg.mapper = options.mapper.clone();
    cfg.threads = options.threads;
    run_pipeline(&cfg)?;
    read_mapping(&out.join("mapping.json")).map_err(|e| PipelineError::Stage {
        stage: "map",
        source: e.into(),
    })
}

pub fn read_mapping(path: &Path) -> Result<TokenMapping, MapError> {
    TokenMapping::load(path)
}

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error(transparent)]
    Tensor(#[from] tensors::TensorError),
    #[error(transparent)]
    Remap(#[from] remapper::RemapError),
    #[error(transparent)]
    Hydra(#[from] hydra::HydraError),
    #[error(transparent)]
    Vocab(#[from] crate::wordizer::WordizerError),
    #[error(transparent)]
    Map(#[from] MapError),
}

/// A tensor file plus the name of the tensor to use when it holds several.
#[derive(Debug, Clone, Copy)]
pub struct TensorInput<'a> {
    pub path: &'a Path,
    pub name: Option<&'a str>,
}

impl<'a> From<&'a Path> for TensorInput<'a> {
    fn from(path: &'a Path) -> Self {
        Self { path, name: None }
    }
}

/// Remaps one table and writes it to `out`.
pub fn remap(
    mapping: &TokenMapping,
    source: TensorInput,
    out: &Path,
    fallback: Fallback,
    target_vocab: Option<&Vocab>,
) -> Result<RemapReport, ApiError> {
    let table = tensors::read_single(source.path, source.name)?;
    let options = RemapOptions { fallback, target_vocab };
    let (remapped, report) = remapper::remap_embeddings(&table, mapping, &options)?;
    tensors::write_tensors(out, &[remapped], false)?;
    Ok(report)
}

/// Writes a composition manifest next to its tensor file and returns the
/// manifest. `extras` are `(vocab, input embeddings)` per extra segment.
pub fn compose_hydra(
    target_vocab: &Path,
    target_embeddings: TensorInput,
    target_head: Option<TensorInput>,
    extras: &[(&Path, TensorInput)],
    manifest_path: &Path,
) -> Result<HydraManifest, ApiError> {
    let vocab = Vocab::load(target_vocab)?;
    let emb = tensors::read_single(target_embeddings.path, target_embeddings.name)?;
    let head = match target_head {
        Some(h) => tensors::read_single(h.path, h.name)?,
        None => emb.clone(),
    };
    let loaded = extras
        .iter()
        .map(|(v, t)| Ok((Vocab::load(v)?, tensors::read_single(t.path, t.name)?)))
        .collect::<Result<Vec<(Vocab, EmbeddingTable)>, ApiError>>()?;
    let refs: Vec<(&Vocab, &EmbeddingTable)> = loaded.iter().map(|(v, t)| (v, t)).collect();
    let composition = hydra::compose(&vocab, &emb, &head, &refs)?;
    let tensor_file = tensor_file_for(manifest_path);
    composition.save(manifest_path, &tensor_file)?;
    Ok(composition.manifest(&tensor_file))
}

fn tensor_file_for(manifest: &Path) -> String {
    let stem = manifest.file_stem().and_then(|s| s.to_str()).unwrap_or("hydra");
    format!("{stem}.safetensors")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_file_follows_manifest_stem() {
        assert_eq!(tensor_file_for(Path::new("/x/model.json")), "model.safetensors");
        assert_eq!(tensor_file_for(Path::new("hydra.json")), "hydra.safetensors");
    }

    #[test]
    fn build_mapping_rejects_missing_paths() {
        let dir = tempfile::tempdir().unwrap();
        let tp = TokenizerPaths {
            vocab: dir.path().join("v.json"),
            merges: dir.path().join("m.txt"),
        };
        let options = MappingOptions {
            output_dir: Some(dir.path().join("out")),
            ..Default::default()
        };
        let err = build_mapping(&dir.path().join("c.txt"), &tp, &tp, &options).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(!dir.path().join("out").exists());
    }
}
