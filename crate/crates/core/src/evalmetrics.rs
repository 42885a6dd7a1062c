//! BLEU-4 and ROUGE-1/2/L over whitespace tokens.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::hash::Hash;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("at least one reference is required")]
    NoReferences,
    #[error("n-gram order must be >= 1")]
    InvalidOrder,
    #[error("{hyps} hypotheses but {refs} references")]
    LengthMismatch { hyps: usize, refs: usize },
}

pub type Result<T> = std::result::Result<T, MetricError>;

pub const BLEU_ORDER: usize = 4;

/// Whitespace split, optionally lowercased.
pub fn tokenize(text: &str, lowercase: bool) -> Vec<String> {
    text.split_whitespace()
        .map(|t| if lowercase { t.to_lowercase() } else { t.to_owned() })
        .collect()
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for w in tokens.windows(n) {
        *counts.entry(w).or_insert(0) += 1;
    }
    counts
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "epsilon")]
pub enum Smoothing {
    /// Any zero n-gram precision zeroes the score.
    #[default]
    None,
    /// Replace a zero match count with `epsilon`.
    Epsilon(f64),
}

/// Clipped n-gram match counts and lengths; additive across segments.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BleuStats {
    pub matches: [usize; BLEU_ORDER],
    pub totals: [usize; BLEU_ORDER],
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn from_segment<T: Eq + Hash>(hyp: &[T], refs: &[&[T]]) -> Result<Self> {
        if refs.is_empty() {
            return Err(MetricError::NoReferences);
        }
        let mut stats = BleuStats {
            hyp_len: hyp.len(),
            ref_len: closest_ref_len(hyp.len(), refs),
            ..Default::default()
        };
        for n in 1..=BLEU_ORDER {
            let hyp_counts = ngram_counts(hyp, n);
            let mut max_ref: HashMap<&[T], usize> = HashMap::new();
            for r in refs {
                for (g, c) in ngram_counts(r, n) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(c);
                }
            }
            stats.matches[n - 1] = hyp_counts
                .iter()
                .map(|(g, c)| (*c).min(max_ref.get(g).copied().unwrap_or(0)))
                .sum();
            stats.totals[n - 1] = hyp.len().saturating_sub(n - 1);
        }
        Ok(stats)
    }

    pub fn merge(&mut self, other: &BleuStats) {
        for n in 0..BLEU_ORDER {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
    }

    pub fn score(&self, smoothing: Smoothing) -> BleuScore {
        let mut precisions = [0.0; BLEU_ORDER];
        for n in 0..BLEU_ORDER {
            let total = self.totals[n];
            precisions[n] = if total == 0 {
                0.0
            } else if self.matches[n] == 0 {
                match smoothing {
                    Smoothing::None => 0.0,
                    Smoothing::Epsilon(eps) => eps / total as f64,
                }
            } else {
                self.matches[n] as f64 / total as f64
            };
        }
        let brevity_penalty = if self.hyp_len == 0 {
            0.0
        } else if self.hyp_len > self.ref_len {
            1.0
        } else {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        };
        let score = if precisions.iter().any(|p| *p <= 0.0) {
            0.0
        } else {
            let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / BLEU_ORDER as f64;
            (brevity_penalty * log_mean.exp()).min(1.0)
        };
        BleuScore {
            score,
            precisions,
            brevity_penalty,
            hyp_len: self.hyp_len,
            ref_len: self.ref_len,
            empty_hypothesis: self.hyp_len == 0,
        }
    }
}

/// Reference length closest to the hypothesis length; the shorter one on ties.
fn closest_ref_len<T>(hyp_len: usize, refs: &[&[T]]) -> usize {
    refs.iter()
        .map(|r| r.len())
        .min_by_key(|&len| (len.abs_diff(hyp_len), len))
        .unwrap_or(0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BleuScore {
    pub score: f64,
    pub precisions: [f64; BLEU_ORDER],
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
    /// Set when the hypothesis had no tokens; the score is then 0.
    pub empty_hypothesis: bool,
}

/// Sentence-level BLEU-4 without smoothing.
pub fn bleu4<T: Eq + Hash>(hypothesis: &[T], references: &[&[T]]) -> Result<BleuScore> {
    bleu4_smoothed(hypothesis, references, Smoothing::None)
}

pub fn bleu4_smoothed<T: Eq + Hash>(hypothesis: &[T], references: &[&[T]], smoothing: Smoothing) -> Result<BleuScore> {
    Ok(BleuStats::from_segment(hypothesis, references)?.score(smoothing))
}

/// Precision, recall and their harmonic mean.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn from_counts(overlap: usize, hyp_total: usize, ref_total: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        Self::new(ratio(overlap, hyp_total), ratio(overlap, ref_total))
    }

    pub fn new(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self { precision, recall, f1 }
    }
}

pub fn rouge_n<T: Eq + Hash>(hypothesis: &[T], reference: &[T], n: usize) -> Result<Prf> {
    if n == 0 {
        return Err(MetricError::InvalidOrder);
    }
    let hyp = ngram_counts(hypothesis, n);
    let refc = ngram_counts(reference, n);
    let overlap = hyp
        .iter()
        .map(|(g, c)| (*c).min(refc.get(g).copied().unwrap_or(0)))
        .sum();
    Ok(Prf::from_counts(overlap, hyp.values().sum(), refc.values().sum()))
}

/// Longest common subsequence length, `O(|a|·|b|)` time and `O(|b|)` space.
pub fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l<T: Eq>(hypothesis: &[T], reference: &[T]) -> Prf {
    Prf::from_counts(lcs_len(hypothesis, reference), hypothesis.len(), reference.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BleuMode {
    /// Pool clipped counts and lengths over all segments.
    #[default]
    Corpus,
    /// Average of per-segment scores.
    SentenceMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricOptions {
    pub lowercase: bool,
    pub smoothing: Smoothing,
    pub bleu_mode: BleuMode,
}

impl Default for MetricOptions {
    fn default() -> Self {
        Self {
            lowercase: true,
            smoothing: Smoothing::None,
            bleu_mode: BleuMode::Corpus,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub bleu4: f64,
    pub rouge1: Prf,
    pub rouge2: Prf,
    #[serde(rename = "rougeL")]
    pub rouge_l: Prf,
    pub segments: usize,
    pub hyp_tokens: usize,
    pub ref_tokens: usize,
    pub empty_hypotheses: usize,
    pub tokenization: String,
    pub options: MetricOptions,
}

/// Score aligned hypothesis/reference segments. ROUGE values are averaged
/// over segments; BLEU follows `options.bleu_mode`.
pub fn score_corpus<S: AsRef<str>>(
    hypotheses: &[S],
    references: &[S],
    options: &MetricOptions,
) -> Result<MetricReport> {
    if hypotheses.len() != references.len() {
        return Err(MetricError::LengthMismatch {
            hyps: hypotheses.len(),
            refs: references.len(),
        });
    }
    let mut pooled = BleuStats::default();
    let mut sentence_sum = 0.0;
    let mut sums = [Prf::default(); 3];
    let (mut hyp_tokens, mut ref_tokens, mut empty) = (0, 0, 0);
    for (h, r) in hypotheses.iter().zip(references) {
        let h = tokenize(h.as_ref(), options.lowercase);
        let r = tokenize(r.as_ref(), options.lowercase);
        hyp_tokens += h.len();
        ref_tokens += r.len();
        let stats = BleuStats::from_segment(&h, &[r.as_slice()])?;
        if stats.hyp_len == 0 {
            empty += 1;
        }
        sentence_sum += stats.score(options.smoothing).score;
        pooled.merge(&stats);
        let scores = [rouge_n(&h, &r, 1)?, rouge_n(&h, &r, 2)?, rouge_l(&h, &r)];
        for (acc, s) in sums.iter_mut().zip(scores) {
            acc.precision += s.precision;
            acc.recall += s.recall;
            acc.f1 += s.f1;
        }
    }
    let n = hypotheses.len();
    let mean = |p: Prf| {
        if n == 0 {
            Prf::default()
        } else {
            Prf {
                precision: p.precision / n as f64,
                recall: p.recall / n as f64,
                f1: p.f1 / n as f64,
            }
        }
    };
    let bleu4 = match options.bleu_mode {
        BleuMode::Corpus => pooled.score(options.smoothing).score,
        BleuMode::SentenceMean if n == 0 => 0.0,
        BleuMode::SentenceMean => sentence_sum / n as f64,
    };
    Ok(MetricReport {
        bleu4,
        rouge1: mean(sums[0]),
        rouge2: mean(sums[1]),
        rouge_l: mean(sums[2]),
        segments: n,
        hyp_tokens,
        ref_tokens,
        empty_hypotheses: empty,
        tokenization: if options.lowercase {
            "whitespace, lowercased".into()
        } else {
            "whitespace".into()
        },
        options: *options,
    })
}
