//! ROUGE-L and mean ± standard deviation summaries.

use serde::{Deserialize, Serialize};

use crate::embed::{embed_query_text, EmbeddingProvider};
use crate::error::{ApceError, Result};
use crate::select::cosine;
use crate::textpipe::{split_words, Tokenizer};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeLScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeLScore {
    const ZERO: Self = Self {
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
    };
}

/// Longest common subsequence length, O(|a|·|b|) time and O(|b|) space.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

pub fn rouge_l_f1<T: PartialEq>(candidate: &[T], reference: &[T]) -> RougeLScore {
    if candidate.is_empty() || reference.is_empty() {
        return RougeLScore::ZERO;
    }
    let lcs = lcs_len(candidate, reference) as f64;
    let p = lcs / candidate.len() as f64;
    let r = lcs / reference.len() as f64;
    let f1 = if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    };
    RougeLScore {
        precision: p,
        recall: r,
        f1,
    }
}

/// Lowercased word/punctuation tokens, independent of the model tokenizer.
pub fn scoring_tokens(text: &str) -> Vec<String> {
    split_words(text).into_iter().map(|w| w.0).collect()
}

pub fn rouge_l_text(candidate: &str, reference: &str) -> RougeLScore {
    rouge_l_f1(&scoring_tokens(candidate), &scoring_tokens(reference))
}

/// Cosine between embeddings of candidate and reference text. A cheap proxy
/// for semantic overlap; not BERTScore.
pub fn embedding_cosine_proxy(
    provider: &dyn EmbeddingProvider,
    tokenizer: &Tokenizer,
    candidate: &str,
    reference: &str,
) -> Result<f64> {
    let a = embed_query_text(provider, tokenizer, candidate)?;
    let b = embed_query_text(provider, tokenizer, reference)?;
    cosine(&a, &b)
}

/// Population mean and standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(ApceError::invalid("cannot summarize an empty list"));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Ok(Self {
            mean,
            std: var.sqrt(),
        })
    }
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.4}±{:.4}", self.mean, self.std)
    }
}

/// `"mean±std"` to four decimals.
pub fn score_summary(scores: &[f64]) -> Result<String> {
    Ok(MeanStd::of(scores)?.to_string())
}
