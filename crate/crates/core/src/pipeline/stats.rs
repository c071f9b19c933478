use serde::Serialize;

use super::PipelineError;
use crate::mapper::TokenMapping;
use crate::wordizer::{TokenId, Vocab};

/// Perplexity per native token: `exp(mean_loss) * model_tokens / native_tokens`,
/// where `mean_loss` is in nats per model token.
pub fn normalize_perplexity(mean_loss: f64, model_tokens: u64, native_tokens: u64) -> Result<f64, PipelineError> {
    if model_tokens == 0 || native_tokens == 0 {
        return Err(PipelineError::Validation("token counts must be positive".into()));
    }
    if !mean_loss.is_finite() {
        return Err(PipelineError::Validation(format!("mean loss {mean_loss} is not finite")));
    }
    Ok(mean_loss.exp() * model_tokens as f64 / native_tokens as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TokenStat {
    pub target_id: TokenId,
    pub target: String,
    pub fan_in: usize,
    pub entropy_bits: f64,
    pub top_source: String,
    pub top_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MappingStats {
    pub target_vocab_size: usize,
    pub mapped: usize,
    pub unmapped_fraction: f64,
    /// Rows that are a single source token with the target's surface.
    pub identity_fraction: f64,
    pub smoothed_only: usize,
    pub mean_fan_in: f64,
    pub mean_entropy_bits: f64,
    pub tokens: Vec<TokenStat>,
}

pub fn stats(mapping: &TokenMapping, source: &Vocab, target: &Vocab) -> MappingStats {
    let mut tokens = Vec::with_capacity(mapping.rows.len());
    let mut identity = 0usize;
    for (&t, row) in &mapping.rows {
        let target_surface = target.token(t).unwrap_or("?");
        let &(top, top_weight) = row
            .iter()
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
            .expect("rows are nonempty");
        let top_source = source.token(top).unwrap_or("?");
        if row.len() == 1
            && source.marker_style().normalize(top_source) == target.marker_style().normalize(target_surface)
        {
            identity += 1;
        }
        tokens.push(TokenStat {
            target_id: t,
            target: target_surface.to_owned(),
            fan_in: row.len(),
            entropy_bits: mapping.row_entropy_bits(t).unwrap_or(0.0).max(0.0),
            top_source: top_source.to_owned(),
            top_weight,
        });
    }
    let n = mapping.target_vocab_size.max(1) as f64;
    let mapped = tokens.len();
    let mean = |f: &dyn Fn(&TokenStat) -> f64| {
        if mapped == 0 {
            0.0
        } else {
            tokens.iter().map(f).sum::<f64>() / mapped as f64
        }
    };
    MappingStats {
        target_vocab_size: mapping.target_vocab_size,
        mapped,
        unmapped_fraction: mapping.unmapped.len() as f64 / n,
        identity_fraction: identity as f64 / n,
        smoothed_only: mapping.smoothed_only.len(),
        mean_fan_in: mean(&|s| s.fan_in as f64),
        mean_entropy_bits: mean(&|s| s.entropy_bits),
        tokens,
    }
}
