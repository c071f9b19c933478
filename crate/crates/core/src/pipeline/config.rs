use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::aligner::{AlignDirection, AlignerConfig};
use crate::corpus::FilterConfig;
use crate::mapper::MapperConfig;
use crate::remapper::Fallback;

/// A tokenizer as a vocabulary file plus a merges file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenizerPaths {
    pub vocab: PathBuf,
    pub merges: PathBuf,
}

/// A tensor file and, when it holds several, the tensor's name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorRef {
    pub path: PathBuf,
    #[serde(default)]
    pub tensor: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub corpus: PathBuf,
    #[serde(default)]
    pub max_pairs: Option<usize>,
    #[serde(default)]
    pub filter: FilterConfig,
    pub source_tokenizer: TokenizerPaths,
    pub target_tokenizer: TokenizerPaths,
    #[serde(default)]
    pub aligner: AlignerConfig,
    #[serde(default)]
    pub direction: AlignDirection,
    #[serde(default)]
    pub mapper: MapperConfig,
    #[serde(default)]
    pub fallback: Fallback,
    #[serde(default)]
    pub source_embeddings: Option<TensorRef>,
    /// Untied output head of the source model.
    #[serde(default)]
    pub source_lm_head: Option<TensorRef>,
    /// Also write a composition with the source vocabulary as an extra
    /// input segment.
    #[serde(default)]
    pub hydra: bool,
    pub output_dir: PathBuf,
    /// Worker threads; all available cores when absent.
    #[serde(default)]
    pub threads: Option<usize>,
    /// Recorded for provenance. Every stage is deterministic.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub cache: bool,
}

fn default_true() -> bool {
    true
}

impl PipelineConfig {
    /// Minimal configuration with defaults for everything optional.
    pub fn new(corpus: PathBuf, source: TokenizerPaths, target: TokenizerPaths, output_dir: PathBuf) -> Self {
        Self {
            corpus,
            max_pairs: None,
            filter: FilterConfig::default(),
            source_tokenizer: source,
            target_tokenizer: target,
            aligner: AlignerConfig::default(),
            direction: AlignDirection::default(),
            mapper: MapperConfig::default(),
            fallback: Fallback::default(),
            source_embeddings: None,
            source_lm_head: None,
            hydra: false,
            output_dir,
            threads: None,
            seed: 0,
            cache: true,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        serde_json::from_str(text).map_err(|e| PipelineError::Validation(format!("config: {e}")))
    }

    /// Loads a config file; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        if let Some(base) = path.parent() {
            cfg.resolve_relative(base);
        }
        Ok(cfg)
    }

    pub fn resolve_relative(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.corpus);
        fix(&mut self.source_tokenizer.vocab);
        fix(&mut self.source_tokenizer.merges);
        fix(&mut self.target_tokenizer.vocab);
        fix(&mut self.target_tokenizer.merges);
        fix(&mut self.output_dir);
        if let Some(t) = &mut self.source_embeddings {
            fix(&mut t.path);
        }
        if let Some(t) = &mut self.source_lm_head {
            fix(&mut t.path);
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks parameters and that every input file exists.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let invalid = |m: String| Err(PipelineError::Validation(m));
        let mut files = vec![
            ("corpus", &self.corpus),
            ("source vocab", &self.source_tokenizer.vocab),
            ("source merges", &self.source_tokenizer.merges),
            ("target vocab", &self.target_tokenizer.vocab),
            ("target merges", &self.target_tokenizer.merges),
        ];
        if let Some(t) = &self.source_embeddings {
            files.push(("source embeddings", &t.path));
        }
        if let Some(t) = &self.source_lm_head {
            files.push(("source LM head", &t.path));
        }
        for (what, path) in files {
            if !path.is_file() {
                return invalid(format!("{what} file {} does not exist", path.display()));
            }
        }
        if self.threads == Some(0) {
            return invalid("threads must be at least 1".into());
        }
        if self.source_lm_head.is_some() && self.source_embeddings.is_none() {
            return invalid("source_lm_head requires source_embeddings".into());
        }
        if self.hydra && self.source_embeddings.is_none() {
            return invalid("hydra requires source_embeddings".into());
        }
        if !(self.mapper.min_count >= 0.0) {
            return invalid(format!("min_count {} must be >= 0", self.mapper.min_count));
        }
        self.filter.validate().map_err(|e| PipelineError::Validation(e.to_string()))?;
        self.aligner.validate().map_err(|e| PipelineError::Validation(e.to_string()))?;
        Ok(())
    }
}
