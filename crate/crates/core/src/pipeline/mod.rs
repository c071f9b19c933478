//! End-to-end driver: corpus, word re-merging, alignment, counting,
//! mapping and remapping, each stage cached under a content-hash key.

mod config;
mod stats;

use std::error::Error as StdError;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::aligner::{self, AlignmentCorpus, SentenceAlignment};
use crate::corpus::{filter_pairs, read_pairs, FilterConfig, SentencePair};
use crate::hydra;
use crate::mapper::{self, TokenMapping};
use crate::remapper::{self, RemapOptions, RemapReport};
use crate::tensors;
use crate::wordizer::{remerge_words, Tokenizer, Vocab, WordSequence, WordizerError};

pub use config::{PipelineConfig, TensorRef, TokenizerPaths};
pub use stats::{normalize_perplexity, stats, MappingStats, TokenStat};

pub type BoxError = Box<dyn StdError + Send + Sync>;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: BoxError,
    },
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Validation(_) => 2,
            PipelineError::Stage { .. } => 3,
        }
    }

    fn stage(stage: &'static str) -> impl FnOnce(BoxError) -> PipelineError {
        move |source| PipelineError::Stage { stage, source }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StageRecord {
    pub name: &'static str,
    pub key: String,
    pub cached: bool,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct CorpusReport {
    pub lines_read: usize,
    pub skipped_lines: usize,
    pub filtered_pairs: usize,
    pub pairs: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub stages: Vec<StageRecord>,
    pub corpus: CorpusReport,
    pub mapped_tokens: usize,
    pub unmapped_tokens: usize,
    pub remap: Option<RemapReport>,
    pub outputs: Vec<PathBuf>,
}

/// Reads and filters a corpus into memory.
pub fn load_corpus(path: &Path, max_pairs: Option<usize>, filter: FilterConfig) -> Result<(Vec<SentencePair>, CorpusReport), BoxError> {
    let mut reader = read_pairs(path, max_pairs)?;
    let mut seen = 0usize;
    let pairs = filter_pairs(
        reader.by_ref().inspect(|p| {
            if p.is_ok() {
                seen += 1;
            }
        }),
        filter,
    )
    .collect::<Result<Vec<_>, _>>()?;
    let report = CorpusReport {
        lines_read: reader.lines_read(),
        skipped_lines: reader.skipped(),
        filtered_pairs: seen - pairs.len(),
        pairs: pairs.len(),
    };
    Ok((pairs, report))
}

/// Encodes both sides of every pair, in parallel, keeping order.
pub fn encode_pairs(
    pairs: &[SentencePair],
    source: &Tokenizer,
    target: &Tokenizer,
) -> Result<Vec<(Vec<u32>, Vec<u32>)>, WordizerError> {
    pairs
        .par_iter()
        .map(|p| Ok((source.encode(&p.source_text)?, target.encode(&p.target_text)?)))
        .collect()
}

/// Reads, filters, encodes and re-merges a corpus in one pass.
pub fn corpus_words(
    path: &Path,
    max_pairs: Option<usize>,
    filter: FilterConfig,
    source: &Tokenizer,
    target: &Tokenizer,
) -> Result<(Vec<(WordSequence, WordSequence)>, CorpusReport), BoxError> {
    let (pairs, report) = load_corpus(path, max_pairs, filter)?;
    let words = encode_pairs(&pairs, source, target)?
        .into_par_iter()
        .map(|(s, t)| Ok((remerge_words(&s, source.vocab())?, remerge_words(&t, target.vocab())?)))
        .collect::<Result<Vec<_>, WordizerError>>()?;
    Ok((words, report))
}

/// Gives imported alignments the sentence lengths of `corpus`, which the
/// Pharaoh format does not carry, and checks every link against them.
pub fn attach_lengths(raw: Vec<SentenceAlignment>, corpus: &AlignmentCorpus) -> Result<Vec<SentenceAlignment>, BoxError> {
    if raw.len() != corpus.len() {
        return Err(format!("{} alignments for {} sentence pairs", raw.len(), corpus.len()).into());
    }
    raw.into_iter()
        .zip(&corpus.pairs)
        .map(|(a, p)| {
            let a = SentenceAlignment::new(a.ordinal, p.source.len(), p.target.len(), a.links);
            a.check_bounds()?;
            Ok(a)
        })
        .collect()
}

pub fn load_tokenizer(paths: &TokenizerPaths) -> Result<Tokenizer, WordizerError> {
    Tokenizer::load(&paths.vocab, &paths.merges)
}

fn hash_parts(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(h.finalize())
}

fn hash_file(path: &Path) -> io::Result<String> {
    let mut h = Sha256::new();
    io::copy(&mut fs::File::open(path)?, &mut h)?;
    Ok(hex::encode(h.finalize()))
}

fn json<T: Serialize>(v: &T) -> Vec<u8> {
    serde_json::to_vec(v).expect("serializes")
}

struct StageCache {
    root: PathBuf,
    enabled: bool,
    records: Vec<StageRecord>,
}

const DONE_MARKER: &str = ".complete";

impl StageCache {
    /// Returns the directory holding the stage's files, computing them
    /// unless a completed directory for `key` already exists.
    fn run(
        &mut self,
        name: &'static str,
        key: &str,
        compute: impl FnOnce(&Path) -> Result<(), BoxError>,
    ) -> Result<PathBuf, PipelineError> {
        let dir = self.root.join(format!("{name}-{}", &key[..16]));
        let start = Instant::now();
        let cached = self.enabled && dir.join(DONE_MARKER).is_file();
        if !cached {
            log::info!("stage {name}: computing");
            let tmp = self.root.join(format!(".tmp-{name}-{}", std::process::id()));
            let prepare = || -> io::Result<()> {
                if tmp.exists() {
                    fs::remove_dir_all(&tmp)?;
                }
                fs::create_dir_all(&tmp)
            };
            prepare().map_err(|e| PipelineError::stage(name)(e.into()))?;
            if let Err(e) = compute(&tmp) {
                let _ = fs::remove_dir_all(&tmp);
                return Err(PipelineError::Stage { stage: name, source: e });
            }
            let finish = || -> io::Result<()> {
                fs::write(tmp.join(DONE_MARKER), key)?;
                if dir.exists() {
                    fs::remove_dir_all(&dir)?;
                }
                fs::rename(&tmp, &dir)
            };
            finish().map_err(|e| PipelineError::stage(name)(e.into()))?;
        } else {
            log::info!("stage {name}: cached");
        }
        self.records.push(StageRecord {
            name,
            key: key.to_owned(),
            cached,
            seconds: start.elapsed().as_secs_f64(),
        });
        Ok(dir)
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), BoxError> {
    crate::write_atomic(path, bytes).map_err(|e| format!("{}: {e}", path.display()).into())
}

fn read_words(path: &Path, vocab: &Vocab) -> Result<Vec<WordSequence>, BoxError> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let lines: Vec<&str> = text.lines().collect();
    lines
        .par_iter()
        .map(|line| {
            let ids = Tokenizer::parse_surfaces(vocab, line)?;
            Ok(remerge_words(&ids, vocab)?)
        })
        .collect()
}

/// Runs every configured stage. Validation errors come before any work.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunSummary, PipelineError> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads.unwrap_or(0))
        .build()
        .map_err(|e| PipelineError::Validation(format!("thread pool: {e}")))?;
    pool.install(|| run_stages(config))
}

fn run_stages(cfg: &PipelineConfig) -> Result<RunSummary, PipelineError> {
    let out = &cfg.output_dir;
    let setup = PipelineError::stage("setup");
    let cache_root = out.join(".cache");
    if let Err(e) = fs::create_dir_all(&cache_root) {
        return Err(setup(e.into()));
    }
    write(&out.join("config.effective.json"), cfg.to_json().as_bytes()).map_err(PipelineError::stage("setup"))?;

    let load_tok = |p: &TokenizerPaths| load_tokenizer(p).map_err(|e| PipelineError::stage("tokenize")(e.into()));
    let src_tok = load_tok(&cfg.source_tokenizer)?;
    let tgt_tok = load_tok(&cfg.target_tokenizer)?;
    let (src_vocab, tgt_vocab) = (src_tok.vocab(), tgt_tok.vocab());
    let mut cache = StageCache {
        root: cache_root,
        enabled: cfg.cache,
        records: Vec::new(),
    };

    // tokenize
    let corpus_hash = hash_file(&cfg.corpus).map_err(|e| PipelineError::stage("tokenize")(e.into()))?;
    let merges_text = |t: &Tokenizer| t.merges().to_text();
    let tok_key = hash_parts(&[
        b"tokenize",
        corpus_hash.as_bytes(),
        &json(&cfg.filter),
        &json(&cfg.max_pairs),
        src_vocab.content_hash().as_bytes(),
        merges_text(&src_tok).as_bytes(),
        tgt_vocab.content_hash().as_bytes(),
        merges_text(&tgt_tok).as_bytes(),
    ]);
    let tok_dir = cache.run("tokenize", &tok_key, |dir| {
        let (pairs, report) = load_corpus(&cfg.corpus, cfg.max_pairs, cfg.filter)?;
        if pairs.is_empty() {
            return Err("no sentence pairs left after reading and filtering".into());
        }
        let encoded = encode_pairs(&pairs, &src_tok, &tgt_tok)?;
        let (mut src, mut tgt) = (String::new(), String::new());
        for (s, t) in &encoded {
            src.push_str(&src_tok.format_surfaces(s));
            src.push('\n');
            tgt.push_str(&tgt_tok.format_surfaces(t));
            tgt.push('\n');
        }
        write(&dir.join("tokenized.src.txt"), src.as_bytes())?;
        write(&dir.join("tokenized.tgt.txt"), tgt.as_bytes())?;
        write(&dir.join("corpus.json"), &json(&report))
    })?;
    let corpus_report: CorpusReport = (|| -> Result<_, BoxError> {
        let v: serde_json::Value = serde_json::from_slice(&fs::read(tok_dir.join("corpus.json"))?)?;
        let get = |k: &str| v[k].as_u64().unwrap_or(0) as usize;
        Ok(CorpusReport {
            lines_read: get("lines_read"),
            skipped_lines: get("skipped_lines"),
            filtered_pairs: get("filtered_pairs"),
            pairs: get("pairs"),
        })
    })()
    .map_err(PipelineError::stage("tokenize"))?;
    let words = (|| -> Result<_, BoxError> {
        let src = read_words(&tok_dir.join("tokenized.src.txt"), src_vocab)?;
        let tgt = read_words(&tok_dir.join("tokenized.tgt.txt"), tgt_vocab)?;
        if src.len() != tgt.len() {
            return Err("tokenized sides differ in length".into());
        }
        Ok(src.into_iter().zip(tgt).collect::<Vec<_>>())
    })()
    .map_err(PipelineError::stage("tokenize"))?;
    let corpus: AlignmentCorpus = words.iter().map(|(s, t)| (s, t)).collect();

    // align
    let align_key = hash_parts(&[b"align", tok_key.as_bytes(), &json(&cfg.aligner), &json(&cfg.direction)]);
    let align_dir = cache.run("align", &align_key, |dir| {
        let alignments = aligner::align_bidirectional(&corpus, &cfg.aligner, cfg.direction)?;
        aligner::export_pharaoh(&dir.join("alignments.txt"), &alignments)?;
        Ok(())
    })?;
    let alignments = aligner::import_alignments(&align_dir.join("alignments.txt"))
        .map_err(BoxError::from)
        .and_then(|raw| attach_lengths(raw, &corpus))
        .map_err(PipelineError::stage("align"))?;

    // count
    let count_key = hash_parts(&[b"count", align_key.as_bytes()]);
    let count_dir = cache.run("count", &count_key, |dir| {
        let counts = mapper::count_word_pairs_interned(&corpus, &alignments)?;
        mapper::write_counts_tsv(&counts, src_vocab, tgt_vocab, &dir.join("counts.tsv"))?;
        Ok(())
    })?;

    // map
    let map_key = hash_parts(&[b"map", count_key.as_bytes(), &json(&cfg.mapper)]);
    let map_dir = cache.run("map", &map_key, |dir| {
        let counts = mapper::read_counts_tsv(&count_dir.join("counts.tsv"), src_vocab, tgt_vocab)?;
        let (mapping, smoothing) = mapper::build_mapping(counts, src_vocab, tgt_vocab, &cfg.mapper)?;
        mapping.save(&dir.join("mapping.json"))?;
        write(&dir.join("mapping.txt"), mapping.to_readable(src_vocab, tgt_vocab).as_bytes())?;
        write(&dir.join("smoothing.json"), &json(&smoothing))?;
        write(&dir.join("stats.json"), &json(&stats(&mapping, src_vocab, tgt_vocab)))
    })?;
    let mapping = TokenMapping::load(&map_dir.join("mapping.json")).map_err(|e| PipelineError::stage("map")(e.into()))?;

    let mut finals: Vec<(PathBuf, &str)> = vec![
        (align_dir.join("alignments.txt"), "alignments.txt"),
        (count_dir.join("counts.tsv"), "counts.tsv"),
        (map_dir.join("mapping.json"), "mapping.json"),
        (map_dir.join("mapping.txt"), "mapping.txt"),
        (map_dir.join("smoothing.json"), "smoothing.json"),
        (map_dir.join("stats.json"), "stats.json"),
    ];

    // remap
    let mut remap_report = None;
    if let Some(emb) = &cfg.source_embeddings {
        let file_key = |t: &Option<TensorRef>| -> Result<Vec<u8>, PipelineError> {
            match t {
                Some(t) => {
                    let h = hash_file(&t.path).map_err(|e| PipelineError::stage("remap")(e.into()))?;
                    Ok([h.as_bytes(), &json(&t.tensor)].concat())
                }
                None => Ok(Vec::new()),
            }
        };
        let remap_key = hash_parts(&[
            b"remap",
            map_key.as_bytes(),
            &file_key(&Some(emb.clone()))?,
            &file_key(&cfg.source_lm_head)?,
            &json(&cfg.fallback),
            &json(&cfg.hydra),
        ]);
        let remap_dir = cache.run("remap", &remap_key, |dir| {
            let options = RemapOptions {
                fallback: cfg.fallback,
                target_vocab: Some(tgt_vocab),
            };
            let source = tensors::read_single(&emb.path, emb.tensor.as_deref())?;
            let (table, report) = remapper::remap_embeddings(&source, &mapping, &options)?;
            tensors::write_tensors(&dir.join("embeddings.safetensors"), &[table.clone()], false)?;
            let mut head_out = None;
            if let Some(head) = &cfg.source_lm_head {
                let head = tensors::read_single(&head.path, head.tensor.as_deref())?;
                let (h, head_report) = remapper::remap_lm_head(&head, &mapping, &options)?;
                tensors::write_tensors(&dir.join("lm_head.safetensors"), &[h.clone()], false)?;
                write(&dir.join("lm_head_report.json"), &json(&head_report))?;
                head_out = Some(h);
            }
            if cfg.hydra {
                let head = head_out.as_ref().unwrap_or(&table);
                let composition = hydra::compose(tgt_vocab, &table, head, &[(src_vocab, &source)])?;
                composition.save(&dir.join("hydra.json"), "hydra.safetensors")?;
            }
            write(&dir.join("remap_report.json"), &json(&report))
        })?;
        let report: RemapReport = fs::read(remap_dir.join("remap_report.json"))
            .map_err(BoxError::from)
            .and_then(|b| serde_json::from_slice(&b).map_err(BoxError::from))
            .map_err(PipelineError::stage("remap"))?;
        remap_report = Some(report);
        finals.push((remap_dir.join("embeddings.safetensors"), "embeddings.safetensors"));
        finals.push((remap_dir.join("remap_report.json"), "remap_report.json"));
        if cfg.source_lm_head.is_some() {
            finals.push((remap_dir.join("lm_head.safetensors"), "lm_head.safetensors"));
            finals.push((remap_dir.join("lm_head_report.json"), "lm_head_report.json"));
        }
        if cfg.hydra {
            finals.push((remap_dir.join("hydra.json"), "hydra.json"));
            finals.push((remap_dir.join("hydra.safetensors"), "hydra.safetensors"));
        }
    }

    let mut outputs = Vec::new();
    for (from, name) in finals {
        let to = out.join(name);
        fs::read(&from)
            .map_err(BoxError::from)
            .and_then(|bytes| write(&to, &bytes))
            .map_err(PipelineError::stage("publish"))?;
        outputs.push(to);
    }
    let summary = RunSummary {
        stages: cache.records,
        corpus: corpus_report,
        mapped_tokens: mapping.rows.len(),
        unmapped_tokens: mapping.unmapped.len(),
        remap: remap_report,
        outputs,
    };
    write(&out.join("summary.json"), serde_json::to_string_pretty(&summary).expect("serializes").as_bytes())
        .map_err(PipelineError::stage("publish"))?;
    Ok(summary)
}
