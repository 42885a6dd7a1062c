//! Order-k tabular categorical language model and a preference-training harness.
//!
//! The policy keeps one row of logits per context window of the last `k`
//! tokens (left-padded with a start symbol) and scores the next token with a
//! softmax over the row. Sequence log-probabilities are teacher-forced over
//! the response, conditioned on the prompt.

mod data;
mod train;

pub use data::{synthetic_dataset, Dataset, EncodedTriple, PreferenceTriple, TripleRecord};
pub use train::{
    batch_loss_graph, corpus_stats, train, train_step, CorpusStats, LossGraph, ReferenceSpec, StepMetrics, TrainConfig,
    TrainRun, TrainingTrajectory, TrajectoryMeta, TrajectoryRecord, MARGIN_DEFINITION,
};

use crate::diffcore::DiffError;
use crate::losses::{Aggregation, LossError, LossFamily};
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::{Read, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ToyError {
    #[error("vocabulary needs at least 2 tokens, got {0}")]
    VocabTooSmall(usize),
    #[error("context order must be >= 1")]
    InvalidOrder,
    #[error("token '{0}' is not in the vocabulary")]
    UnknownToken(String),
    #[error("triple {index}: {reason}")]
    InvalidTriple { index: usize, reason: String },
    #[error("{0} requires a reference policy snapshot")]
    MissingReference(LossFamily),
    #[error("triple {index}: {source}")]
    Loss {
        index: usize,
        #[source]
        source: LossError,
    },
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("JSON error on line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ToyError>;

/// Ordered token set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Keeps first occurrences in order; duplicates are dropped.
    pub fn new<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Vocab {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in tokens {
            let t = t.into();
            if !v.index.contains_key(&t) {
                v.index.insert(t.clone(), v.tokens.len());
                v.tokens.push(t);
            }
        }
        v
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<S: AsRef<str>>(&self, seq: &[S]) -> Result<Vec<usize>> {
        seq.iter()
            .map(|t| {
                self.id(t.as_ref())
                    .ok_or_else(|| ToyError::UnknownToken(t.as_ref().to_owned()))
            })
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.tokens[i].clone()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Init {
    /// Uniform in `[-0.01, 0.01]` from the seed.
    #[default]
    SmallUniform,
    Zero,
}

/// `π_θ`: a table of logits indexed by (context window, next token).
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyModel {
    vocab: Vocab,
    order: usize,
    logits: Vec<f64>,
    version: u64,
}

impl PolicyModel {
    pub fn init(vocab: Vocab, order: usize, seed: u64, init: Init) -> Result<Self> {
        if vocab.len() < 2 {
            return Err(ToyError::VocabTooSmall(vocab.len()));
        }
        if order == 0 {
            return Err(ToyError::InvalidOrder);
        }
        let n = Self::num_contexts(vocab.len(), order)
            .and_then(|c| c.checked_mul(vocab.len()))
            .filter(|n| *n <= 1 << 26)
            .ok_or_else(|| {
                ToyError::InvalidConfig(format!("order {order} is too large for |vocab| = {}", vocab.len()))
            })?;
        let logits = match init {
            Init::Zero => vec![0.0; n],
            Init::SmallUniform => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..n).map(|_| rng.gen_range(-0.01..=0.01)).collect()
            }
        };
        Ok(Self {
            vocab,
            order,
            logits,
            version: 0,
        })
    }

    fn num_contexts(vocab_len: usize, order: usize) -> Option<usize> {
        (vocab_len + 1).checked_pow(u32::try_from(order).ok()?)
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    pub(crate) fn bump_version(&mut self) {
        self.version += 1;
    }

    /// Context index of the last `order` tokens of `history`, left-padded
    /// with the start symbol (encoded as `|vocab|`).
    pub fn context_index(&self, history: &[usize]) -> usize {
        let pad = self.vocab.len();
        let base = pad + 1;
        let start = history.len().saturating_sub(self.order);
        let tail = &history[start..];
        let mut idx = 0;
        for _ in 0..self.order - tail.len() {
            idx = idx * base + pad;
        }
        for &t in tail {
            idx = idx * base + t;
        }
        idx
    }

    /// Offset of the logits row for a context index.
    pub fn row_offset(&self, context: usize) -> usize {
        context * self.vocab.len()
    }

    pub fn row(&self, context: usize) -> &[f64] {
        let off = self.row_offset(context);
        &self.logits[off..off + self.vocab.len()]
    }

    /// Log-softmax of one logits row.
    pub fn next_token_logprobs(&self, context: usize) -> Vec<f64> {
        let row = self.row(context);
        let lse = log_sum_exp(row);
        row.iter().map(|l| l - lse).collect()
    }

    /// Per-position teacher-forced log-probabilities of `response` given `prompt`.
    pub fn token_logprobs(&self, prompt: &[usize], response: &[usize]) -> Vec<f64> {
        let mut history: Vec<usize> = prompt.to_vec();
        let mut out = Vec::with_capacity(response.len());
        for &tok in response {
            let ctx = self.context_index(&history);
            let row = self.row(ctx);
            out.push(row[tok] - log_sum_exp(row));
            history.push(tok);
        }
        out
    }

    pub fn sequence_logprob_ids(&self, prompt: &[usize], response: &[usize], agg: Aggregation) -> f64 {
        agg.reduce(&self.token_logprobs(prompt, response))
    }

    pub fn sequence_logprob<S: AsRef<str>>(&self, prompt: &[S], response: &[S], agg: Aggregation) -> Result<f64> {
        let p = self.vocab.encode(prompt)?;
        let r = self.vocab.encode(response)?;
        Ok(self.sequence_logprob_ids(&p, &r, agg))
    }

    /// Greedy (argmax, lowest id on ties) or seeded ancestral sampling.
    pub fn generate<S: AsRef<str>>(
        &self,
        prompt: &[S],
        max_len: usize,
        decoding: Decoding,
        stop: Option<&str>,
    ) -> Result<Vec<String>> {
        let mut history = self.vocab.encode(prompt)?;
        let stop_id = match stop {
            Some(s) => Some(self.vocab.id(s).ok_or_else(|| ToyError::UnknownToken(s.to_owned()))?),
            None => None,
        };
        let mut rng = match decoding {
            Decoding::Sample { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
            Decoding::Greedy => None,
        };
        let mut out = Vec::new();
        while out.len() < max_len {
            let logps = self.next_token_logprobs(self.context_index(&history));
            let next = match rng.as_mut() {
                None => argmax(&logps),
                Some(rng) => {
                    let weights: Vec<f64> = logps.iter().map(|l| l.exp()).collect();
                    WeightedIndex::new(&weights)
                        .map_err(|e| ToyError::InvalidConfig(e.to_string()))?
                        .sample(rng)
                }
            };
            if Some(next) == stop_id {
                break;
            }
            out.push(next);
            history.push(next);
        }
        Ok(self.vocab.decode(&out))
    }

    pub fn write_checkpoint<W: Write>(&self, out: W) -> Result<()> {
        let ckpt = Checkpoint {
            format: CHECKPOINT_FORMAT.to_owned(),
            format_version: CHECKPOINT_VERSION,
            vocab: self.vocab.tokens.clone(),
            order: self.order,
            version: self.version,
            logits: self.logits.clone(),
        };
        serde_json::to_writer(out, &ckpt).map_err(|e| ToyError::Checkpoint(e.to_string()))
    }

    pub fn read_checkpoint<R: Read>(reader: R) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_reader(reader).map_err(|e| ToyError::Checkpoint(e.to_string()))?;
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.format_version != CHECKPOINT_VERSION {
            return Err(ToyError::Checkpoint(format!(
                "unsupported format {} v{}",
                ckpt.format, ckpt.format_version
            )));
        }
        let vocab = Vocab::new(ckpt.vocab);
        let mut policy = PolicyModel::init(vocab, ckpt.order, 0, Init::Zero)?;
        if policy.logits.len() != ckpt.logits.len() {
            return Err(ToyError::Checkpoint(format!(
                "expected {} logits, found {}",
                policy.logits.len(),
                ckpt.logits.len()
            )));
        }
        policy.logits = ckpt.logits;
        policy.version = ckpt.version;
        Ok(policy)
    }
}

const CHECKPOINT_FORMAT: &str = "prefalign-policy";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    format_version: u32,
    vocab: Vec<String>,
    order: usize,
    version: u64,
    logits: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decoding {
    Greedy,
    Sample { seed: u64 },
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Frozen `π_ref`. Only read access is exposed.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePolicy {
    policy: PolicyModel,
    snapshot_step: u64,
}

impl ReferencePolicy {
    pub fn snapshot(policy: &PolicyModel) -> Self {
        Self {
            policy: policy.clone(),
            snapshot_step: policy.version,
        }
    }

    pub fn snapshot_step(&self) -> u64 {
        self.snapshot_step
    }

    pub fn policy(&self) -> &PolicyModel {
        &self.policy
    }

    pub fn sequence_logprob_ids(&self, prompt: &[usize], response: &[usize], agg: Aggregation) -> f64 {
        self.policy.sequence_logprob_ids(prompt, response, agg)
    }

    pub fn sequence_logprob<S: AsRef<str>>(&self, prompt: &[S], response: &[S], agg: Aggregation) -> Result<f64> {
        self.policy.sequence_logprob(prompt, response, agg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn abcd() -> Vocab {
        Vocab::new(["a", "b", "c", "d"])
    }

    #[test]
    fn init_is_deterministic() {
        let p = PolicyModel::init(abcd(), 2, 11, Init::SmallUniform).unwrap();
        let q = PolicyModel::init(abcd(), 2, 11, Init::SmallUniform).unwrap();
        assert_eq!(p.logits(), q.logits());
        assert_eq!(p.logits().len(), 25 * 4);
        assert!(p.logits().iter().all(|l| l.abs() <= 0.01));
        let r = PolicyModel::init(abcd(), 2, 12, Init::SmallUniform).unwrap();
        assert_ne!(p.logits(), r.logits());
    }

    #[test]
    fn zero_init_is_uniform() {
        let p = PolicyModel::init(abcd(), 1, 0, Init::Zero).unwrap();
        for ctx in 0..5 {
            for lp in p.next_token_logprobs(ctx) {
                assert!((lp.exp() - 0.25).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn init_rejects_tiny_vocab_and_zero_order() {
        assert!(matches!(
            PolicyModel::init(Vocab::new(["x"]), 1, 0, Init::Zero),
            Err(ToyError::VocabTooSmall(1))
        ));
        assert!(PolicyModel::init(Vocab::new(Vec::<String>::new()), 1, 0, Init::Zero).is_err());
        assert!(matches!(
            PolicyModel::init(abcd(), 0, 0, Init::Zero),
            Err(ToyError::InvalidOrder)
        ));
    }

    #[test]
    fn uniform_sequence_logprob() {
        let p = PolicyModel::init(abcd(), 2, 0, Init::Zero).unwrap();
        let lp = p.sequence_logprob(&["a"], &["b", "c", "d"], Aggregation::Sum).unwrap();
        assert!((lp - 3.0 * 0.25f64.ln()).abs() < 1e-12);
        assert!((lp + 4.158_883_083_359_672).abs() < 1e-9);
        assert_eq!(p.sequence_logprob::<&str>(&["a"], &[], Aggregation::Sum).unwrap(), 0.0);
        let mean = p.sequence_logprob(&["a"], &["b", "c", "d"], Aggregation::Mean).unwrap();
        assert!((mean - 0.25f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn unknown_token_is_named() {
        let p = PolicyModel::init(abcd(), 1, 0, Init::Zero).unwrap();
        let err = p.sequence_logprob(&["a"], &["zebra"], Aggregation::Sum).unwrap_err();
        assert!(matches!(err, ToyError::UnknownToken(ref t) if t == "zebra"));
    }

    /// Saturate logits so each context predicts a fixed successor: a→b→c→d→a.
    fn saturated() -> PolicyModel {
        let mut p = PolicyModel::init(abcd(), 1, 0, Init::Zero).unwrap();
        let succ = |t: usize| (t + 1) % 4;
        for ctx_tok in 0..=4usize {
            let ctx = p.context_index(if ctx_tok == 4 {
                &[]
            } else {
                std::slice::from_ref(&ctx_tok)
            });
            let want = if ctx_tok == 4 { 0 } else { succ(ctx_tok) };
            let off = p.row_offset(ctx);
            for j in 0..4 {
                p.logits_mut()[off + j] = if j == want { 20.0 } else { -20.0 };
            }
        }
        p
    }

    #[test]
    fn saturated_policy_on_its_argmax_chain() {
        let p = saturated();
        let lp = p
            .sequence_logprob(&["a"], &["b", "c", "d", "a"], Aggregation::Sum)
            .unwrap();
        // each step has probability 1 / (1 + 3e-40)
        assert!(lp <= 0.0 && lp > -1e-15, "{lp}");
        let out = p.generate(&["b"], 6, Decoding::Greedy, None).unwrap();
        assert_eq!(out, ["c", "d", "a", "b", "c", "d"]);
        let stopped = p.generate(&["b"], 6, Decoding::Greedy, Some("a")).unwrap();
        assert_eq!(stopped, ["c", "d"]);
    }

    #[test]
    fn generation_is_deterministic() {
        let p = PolicyModel::init(abcd(), 2, 5, Init::SmallUniform).unwrap();
        let g1 = p.generate(&["a"], 8, Decoding::Greedy, None).unwrap();
        assert_eq!(g1, p.generate(&["a"], 8, Decoding::Greedy, None).unwrap());
        let s1 = p.generate(&["a"], 8, Decoding::Sample { seed: 4 }, None).unwrap();
        assert_eq!(s1, p.generate(&["a"], 8, Decoding::Sample { seed: 4 }, None).unwrap());
        assert_eq!(s1.len(), 8);
        assert!(p.generate(&["a"], 0, Decoding::Greedy, None).unwrap().is_empty());
        assert!(p.generate(&["q"], 3, Decoding::Greedy, None).is_err());
    }

    #[test]
    fn context_padding() {
        let p = PolicyModel::init(abcd(), 2, 0, Init::Zero).unwrap();
        // pad = 4, base = 5
        assert_eq!(p.context_index(&[]), 4 * 5 + 4);
        assert_eq!(p.context_index(&[2]), 4 * 5 + 2);
        assert_eq!(p.context_index(&[0, 1, 3]), 5 + 3);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut p = PolicyModel::init(abcd(), 2, 3, Init::SmallUniform).unwrap();
        p.bump_version();
        let mut buf = Vec::new();
        p.write_checkpoint(&mut buf).unwrap();
        let back = PolicyModel::read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back, p);
        assert!(PolicyModel::read_checkpoint(&b"{\"format\":\"x\"}"[..]).is_err());
    }

    #[test]
    fn reference_snapshot_is_independent() {
        let mut p = PolicyModel::init(abcd(), 1, 3, Init::SmallUniform).unwrap();
        let r = ReferencePolicy::snapshot(&p);
        let before = r.sequence_logprob(&["a"], &["b", "c"], Aggregation::Sum).unwrap();
        p.logits_mut()[0] += 5.0;
        let after = r.sequence_logprob(&["a"], &["b", "c"], Aggregation::Sum).unwrap();
        assert_eq!(before.to_bits(), after.to_bits());
        assert_eq!(r.snapshot_step(), 0);
    }
}
