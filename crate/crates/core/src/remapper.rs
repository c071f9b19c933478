//! Applies a token mapping to embedding tables and output heads.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mapper::TokenMapping;
use crate::tensors::{EmbeddingTable, TensorError};
use crate::wordizer::Vocab;

#[derive(Debug, Error)]
pub enum RemapError {
    #[error("table has {rows} rows but the mapping's source vocabulary has {expected}")]
    SourceSize { rows: usize, expected: usize },
    #[error("{count} target tokens have no mapping: {}", .tokens.join(", "))]
    Unmapped { count: usize, tokens: Vec<String> },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid weights: {0}")]
    Weights(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// What unmapped target rows receive.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    /// Mean of all mapped target rows.
    #[default]
    MeanOfMapped,
    Zero,
    Error,
}

impl std::str::FromStr for Fallback {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean" | "mean_of_mapped" => Ok(Fallback::MeanOfMapped),
            "zero" => Ok(Fallback::Zero),
            "error" => Ok(Fallback::Error),
            other => Err(format!("unknown fallback {other:?} (expected mean, zero or error)")),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RemapOptions<'a> {
    pub fallback: Fallback,
    /// Used only to name tokens in error messages.
    pub target_vocab: Option<&'a Vocab>,
}

const HISTOGRAM_BINS: usize = 10;
const ERROR_LIST_LIMIT: usize = 20;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RemapReport {
    pub mapped_count: usize,
    /// Mapped rows copied from a single source row.
    pub identity_count: usize,
    pub smoothed_only_count: usize,
    pub fallback_count: usize,
    pub fallback_vector_norm: f64,
    /// Rows binned by their largest weight, ten bins over `[0, 1]`.
    pub max_weight_histogram: Vec<usize>,
}

/// Target row `t` becomes `sum_s w(t, s) * source row s`, accumulated in
/// f32 in ascending source order. Output keeps the source dtype.
pub fn remap_embeddings(
    source: &EmbeddingTable,
    mapping: &TokenMapping,
    options: &RemapOptions,
) -> Result<(EmbeddingTable, RemapReport), RemapError> {
    if source.rows() != mapping.source_vocab_size {
        return Err(RemapError::SourceSize {
            rows: source.rows(),
            expected: mapping.source_vocab_size,
        });
    }
    let (rows, dim) = (mapping.target_vocab_size, source.cols());
    if options.fallback == Fallback::Error && !mapping.unmapped.is_empty() {
        let tokens = mapping
            .unmapped
            .iter()
            .take(ERROR_LIST_LIMIT)
            .map(|&t| match options.target_vocab.and_then(|v| v.token(t)) {
                Some(s) => format!("{s:?}"),
                None => format!("#{t}"),
            })
            .collect();
        return Err(RemapError::Unmapped {
            count: mapping.unmapped.len(),
            tokens,
        });
    }

    let src = source.to_f32();
    let mut out = vec![0f32; rows * dim];
    if dim > 0 {
        out.par_chunks_mut(dim).enumerate().for_each(|(t, acc)| {
            let Some(row) = mapping.row(t as u32) else { return };
            let (s0, w0) = row[0];
            let w0 = w0 as f32;
            let first = &src[s0 as usize * dim..(s0 as usize + 1) * dim];
            // start from the first term so a weight-1 copy is bit-exact
            acc.iter_mut().zip(first).for_each(|(a, x)| *a = w0 * x);
            for &(s, w) in &row[1..] {
                let w = w as f32;
                let x = &src[s as usize * dim..(s as usize + 1) * dim];
                acc.iter_mut().zip(x).for_each(|(a, x)| *a += w * x);
            }
        });
    }

    let mut report = RemapReport {
        mapped_count: mapping.rows.len(),
        identity_count: mapping.rows.values().filter(|r| r.len() == 1).count(),
        smoothed_only_count: mapping.smoothed_only.len(),
        fallback_count: mapping.unmapped.len(),
        max_weight_histogram: vec![0; HISTOGRAM_BINS],
        ..Default::default()
    };
    for row in mapping.rows.values() {
        let max = row.iter().map(|e| e.1).fold(0.0, f64::max);
        let bin = ((max * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
        report.max_weight_histogram[bin] += 1;
    }

    if !mapping.unmapped.is_empty() && dim > 0 {
        let fill = match options.fallback {
            Fallback::MeanOfMapped => mean_of_rows(&out, dim, mapping.rows.keys().map(|&t| t as usize)),
            Fallback::Zero | Fallback::Error => vec![0f32; dim],
        };
        report.fallback_vector_norm = fill.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
        for &t in &mapping.unmapped {
            out[t as usize * dim..(t as usize + 1) * dim].copy_from_slice(&fill);
        }
    }
    let table = EmbeddingTable::from_f32(source.name.clone(), source.dtype(), rows, dim, &out)?;
    Ok((table, report))
}

fn mean_of_rows(data: &[f32], dim: usize, rows: impl Iterator<Item = usize>) -> Vec<f32> {
    let mut sum = vec![0f64; dim];
    let mut n = 0usize;
    for r in rows {
        sum.iter_mut().zip(&data[r * dim..(r + 1) * dim]).for_each(|(s, &x)| *s += x as f64);
        n += 1;
    }
    if n == 0 {
        log::warn!("no mapped rows; mean fallback degenerates to zero");
        return vec![0f32; dim];
    }
    sum.into_iter().map(|s| (s / n as f64) as f32).collect()
}

/// Same contract as [`remap_embeddings`] for a `[vocab x hidden]` head.
pub fn remap_lm_head(
    head: &EmbeddingTable,
    mapping: &TokenMapping,
    options: &RemapOptions,
) -> Result<(EmbeddingTable, RemapReport), RemapError> {
    remap_embeddings(head, mapping, options)
}

fn check_same_shape(a: &EmbeddingTable, b: &EmbeddingTable) -> Result<(), RemapError> {
    if a.shape() != b.shape() {
        return Err(RemapError::Shape(format!(
            "{:?} is {:?} but {:?} is {:?}",
            a.name,
            a.shape(),
            b.name,
            b.shape()
        )));
    }
    Ok(())
}

/// Elementwise weighted mean of equally shaped tables; uniform by default.
pub fn merge_initializations(tables: &[EmbeddingTable], weights: Option<&[f64]>) -> Result<EmbeddingTable, RemapError> {
    let first = tables.first().ok_or_else(|| RemapError::Shape("no tables to merge".into()))?;
    for t in &tables[1..] {
        check_same_shape(first, t)?;
    }
    let uniform = vec![1.0 / tables.len() as f64; tables.len()];
    let weights = weights.unwrap_or(&uniform);
    if weights.len() != tables.len() {
        return Err(RemapError::Weights(format!("{} weights for {} tables", weights.len(), tables.len())));
    }
    if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
        return Err(RemapError::Weights("weights must be finite and nonnegative".into()));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(RemapError::Weights(format!("weights sum to {total}, expected 1")));
    }
    let mut acc = vec![0f64; first.rows() * first.cols()];
    for (t, &w) in tables.iter().zip(weights) {
        acc.iter_mut().zip(t.to_f32()).for_each(|(a, x)| *a += w * x as f64);
    }
    let values: Vec<f32> = acc.into_iter().map(|v| v as f32).collect();
    Ok(EmbeddingTable::from_f32(first.name.clone(), first.dtype(), first.rows(), first.cols(), &values)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CosineReport {
    pub per_row: Vec<f64>,
    pub mean: f64,
    pub median: f64,
    /// Twenty equal bins over `[-1, 1]`.
    pub histogram: Vec<usize>,
}

/// Per-row cosine similarity; a row that is zero in either table scores 0.
pub fn compare_initializations(a: &EmbeddingTable, b: &EmbeddingTable) -> Result<CosineReport, RemapError> {
    check_same_shape(a, b)?;
    let (xa, xb) = (a.to_f32(), b.to_f32());
    let dim = a.cols().max(1);
    let per_row: Vec<f64> = xa
        .chunks(dim)
        .zip(xb.chunks(dim))
        .map(|(u, v)| {
            let (mut dot, mut nu, mut nv) = (0f64, 0f64, 0f64);
            for (&x, &y) in u.iter().zip(v) {
                dot += x as f64 * y as f64;
                nu += x as f64 * x as f64;
                nv += y as f64 * y as f64;
            }
            if nu == 0.0 || nv == 0.0 {
                0.0
            } else {
                (dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0)
            }
        })
        .collect();
    let n = per_row.len();
    let mean = if n == 0 { 0.0 } else { per_row.iter().sum::<f64>() / n as f64 };
    let mut sorted = per_row.clone();
    sorted.sort_by(f64::total_cmp);
    let median = match n {
        0 => 0.0,
        _ if n % 2 == 1 => sorted[n / 2],
        _ => (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0,
    };
    let mut histogram = vec![0usize; 20];
    for &c in &per_row {
        histogram[(((c + 1.0) * 10.0) as usize).min(19)] += 1;
    }
    Ok(CosineReport {
        per_row,
        mean,
        median,
        histogram,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapper::{Provenance, SplitStrategy, ThresholdStage};
    use crate::tensors::Dtype;
    use std::collections::{BTreeMap, BTreeSet};

    fn mapping(src: usize, tgt: usize, rows: &[(u32, &[(u32, f64)])]) -> TokenMapping {
        let rows: BTreeMap<_, _> = rows.iter().map(|(t, r)| (*t, r.to_vec())).collect();
        TokenMapping {
            source_vocab_hash: "s".into(),
            target_vocab_hash: "t".into(),
            source_vocab_size: src,
            target_vocab_size: tgt,
            unmapped: (0..tgt as u32).filter(|t| !rows.contains_key(t)).collect(),
            rows,
            smoothed_only: BTreeSet::new(),
            provenance: Provenance {
                strategy: SplitStrategy::Average,
                min_count: 10.0,
                threshold_stage: ThresholdStage::Word,
                exempt_smoothed: true,
            },
        }
    }

    fn table(rows: usize, cols: usize, v: &[f32]) -> EmbeddingTable {
        EmbeddingTable::from_f32("emb", Dtype::F32, rows, cols, v).unwrap()
    }

    #[test]
    fn convex_combination_and_copy() {
        let src = table(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let m = mapping(2, 2, &[(0, &[(0, 0.5), (1, 0.5)]), (1, &[(0, 1.0)])]);
        let (out, report) = remap_embeddings(&src, &m, &RemapOptions::default()).unwrap();
        assert_eq!(out.to_f32(), vec![0.5, 0.5, 1.0, 0.0]);
        assert_eq!(report.mapped_count + report.fallback_count, 2);
        assert_eq!(report.identity_count, 1);
        assert_eq!(report.max_weight_histogram[5], 1);
        assert_eq!(report.max_weight_histogram[9], 1);
    }

    #[test]
    fn weight_one_copy_keeps_negative_zero() {
        let src = table(1, 2, &[-0.0, 3.5]);
        let m = mapping(1, 1, &[(0, &[(0, 1.0)])]);
        let (out, _) = remap_embeddings(&src, &m, &RemapOptions::default()).unwrap();
        assert_eq!(out.bytes(), src.bytes());
    }

    #[test]
    fn fallback_policies() {
        let src = table(2, 2, &[2.0, 0.0, 0.0, 4.0]);
        let m = mapping(2, 3, &[(0, &[(0, 1.0)]), (2, &[(1, 1.0)])]);
        let (out, report) = remap_embeddings(&src, &m, &RemapOptions::default()).unwrap();
        assert_eq!(out.row_f32(1), vec![1.0, 2.0]);
        assert!((report.fallback_vector_norm - 5f64.sqrt()).abs() < 1e-6);
        let zero = RemapOptions { fallback: Fallback::Zero, ..Default::default() };
        assert_eq!(remap_lm_head(&src, &m, &zero).unwrap().0.row_f32(1), vec![0.0, 0.0]);

        let v = Vocab::new(vec!["a".into(), "b".into(), "c".into()], Default::default(), [], false).unwrap();
        let err = RemapOptions { fallback: Fallback::Error, target_vocab: Some(&v) };
        match remap_embeddings(&src, &m, &err) {
            Err(e @ RemapError::Unmapped { count: 1, .. }) => assert!(e.to_string().contains("\"b\"")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn source_size_checked() {
        let src = table(3, 1, &[1.0, 2.0, 3.0]);
        let m = mapping(2, 1, &[(0, &[(0, 1.0)])]);
        assert!(matches!(
            remap_embeddings(&src, &m, &RemapOptions::default()),
            Err(RemapError::SourceSize { rows: 3, expected: 2 })
        ));
    }

    #[test]
    fn merge_and_compare() {
        let a = table(1, 2, &[2.0, 0.0]);
        let b = table(1, 2, &[0.0, 2.0]);
        let m = merge_initializations(&[a.clone(), b.clone()], None).unwrap();
        assert_eq!(m.to_f32(), vec![1.0, 1.0]);
        assert_eq!(merge_initializations(&[a.clone(), a.clone()], None).unwrap(), a);
        assert!(merge_initializations(&[a.clone(), b.clone()], Some(&[0.7, 0.7])).is_err());
        assert!(merge_initializations(&[a.clone(), table(2, 1, &[0.0, 0.0])], None).is_err());

        assert_eq!(compare_initializations(&a, &a).unwrap().per_row, vec![1.0]);
        assert_eq!(compare_initializations(&a, &b).unwrap().per_row, vec![0.0]);
        let z = table(1, 2, &[0.0, 0.0]);
        assert_eq!(compare_initializations(&a, &z).unwrap().mean, 0.0);
    }

    #[test]
    fn fallback_names_parse() {
        assert_eq!("mean".parse::<Fallback>().unwrap(), Fallback::MeanOfMapped);
        assert!("avg".parse::<Fallback>().is_err());
    }
}
