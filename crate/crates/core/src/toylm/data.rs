//! Preference triples, JSONL I/O and the seeded synthetic dataset.

use super::{ToyError, Vocab};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::io::{BufRead, Write};

/// One `(prompt, chosen, rejected)` record, whitespace-tokenised.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreferenceTriple {
    pub prompt: Vec<String>,
    pub chosen: Vec<String>,
    pub rejected: Vec<String>,
}

/// Wire form: one JSON object per line with string fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripleRecord {
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
}

fn tokenize(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_owned).collect()
}

impl PreferenceTriple {
    pub fn new(prompt: &str, chosen: &str, rejected: &str) -> Self {
        Self {
            prompt: tokenize(prompt),
            chosen: tokenize(chosen),
            rejected: tokenize(rejected),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.chosen.is_empty() || self.rejected.is_empty() {
            return Err("responses must be non-empty".into());
        }
        if self.chosen == self.rejected {
            return Err("chosen and rejected responses are identical".into());
        }
        Ok(())
    }

    pub fn to_record(&self) -> TripleRecord {
        TripleRecord {
            prompt: self.prompt.join(" "),
            chosen: self.chosen.join(" "),
            rejected: self.rejected.join(" "),
        }
    }

    pub fn from_record(rec: &TripleRecord) -> Self {
        Self::new(&rec.prompt, &rec.chosen, &rec.rejected)
    }

    pub fn tokens(&self) -> impl Iterator<Item = &String> {
        self.prompt.iter().chain(&self.chosen).chain(&self.rejected)
    }
}

/// Triples encoded against a vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedTriple {
    pub prompt: Vec<usize>,
    pub chosen: Vec<usize>,
    pub rejected: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Dataset {
    pub triples: Vec<PreferenceTriple>,
}

impl Dataset {
    pub fn new(triples: Vec<PreferenceTriple>) -> Result<Self, ToyError> {
        for (index, t) in triples.iter().enumerate() {
            t.validate()
                .map_err(|reason| ToyError::InvalidTriple { index, reason })?;
        }
        Ok(Self { triples })
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    /// Sorted set of every token that appears in the dataset.
    pub fn vocab(&self) -> Vocab {
        let set: BTreeSet<&String> = self.triples.iter().flat_map(|t| t.tokens()).collect();
        Vocab::new(set.into_iter().cloned())
    }

    pub fn encode(&self, vocab: &Vocab) -> Result<Vec<EncodedTriple>, ToyError> {
        self.triples
            .iter()
            .map(|t| {
                Ok(EncodedTriple {
                    prompt: vocab.encode(&t.prompt)?,
                    chosen: vocab.encode(&t.chosen)?,
                    rejected: vocab.encode(&t.rejected)?,
                })
            })
            .collect()
    }

    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Self, ToyError> {
        let mut triples = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: TripleRecord = serde_json::from_str(&line).map_err(|source| ToyError::Json {
                line: lineno + 1,
                source,
            })?;
            triples.push(PreferenceTriple::from_record(&rec));
        }
        Self::new(triples)
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), ToyError> {
        for t in &self.triples {
            let line = serde_json::to_string(&t.to_record()).map_err(|source| ToyError::Json { line: 0, source })?;
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    /// FNV-1a over the canonical JSONL serialisation, as 16 hex digits.
    pub fn digest(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("in-memory write");
        let hash = buf.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
            (h ^ u64::from(*b)).wrapping_mul(0x0000_0100_0000_01b3)
        });
        format!("{hash:016x}")
    }
}

const PROMPT_VERBS: [&str; 4] = ["describe", "explain", "summarize", "review"];
const PROMPT_TOPICS: [&str; 5] = ["weather", "music", "food", "travel", "sports"];

/// Preferred responses draw only from {sure, here, is, a, helpful, answer,
/// clear, glad, to, help}.
const CHOSEN_TEMPLATES: [&[&str]; 4] = [
    &["sure", "here", "is", "a", "helpful", "answer"],
    &["here", "is", "a", "clear", "answer"],
    &["glad", "to", "help", "here", "is", "a", "clear", "answer"],
    &["sure", "glad", "to", "help"],
];

/// Rejected responses draw from a disjoint set of ten tokens.
const REJECTED_TEMPLATES: [&[&str]; 4] = [
    &["no", "idea"],
    &["whatever", "go", "away"],
    &["not", "my", "problem"],
    &["ugh", "meh", "whatever", "no", "idea"],
];

/// Seeded synthetic preference data over a 30-token vocabulary.
///
/// Prompts are `[please] <verb> <topic>`. The chosen response follows the
/// topic's preferred template 80% of the time and a random preferred
/// template otherwise; the rejected response is a random template from a
/// token set disjoint from the preferred one, so every pair is separable.
pub fn synthetic_dataset(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut triples = Vec::with_capacity(n);
    for _ in 0..n {
        let mut prompt = Vec::with_capacity(3);
        if rng.gen_bool(0.5) {
            prompt.push("please");
        }
        prompt.push(*PROMPT_VERBS.choose(&mut rng).expect("non-empty"));
        let topic = rng.gen_range(0..PROMPT_TOPICS.len());
        prompt.push(PROMPT_TOPICS[topic]);

        let chosen = if rng.gen_bool(0.8) {
            CHOSEN_TEMPLATES[topic % CHOSEN_TEMPLATES.len()]
        } else {
            *CHOSEN_TEMPLATES.choose(&mut rng).expect("non-empty")
        };
        let rejected = *REJECTED_TEMPLATES.choose(&mut rng).expect("non-empty");
        triples.push(PreferenceTriple {
            prompt: prompt.into_iter().map(str::to_owned).collect(),
            chosen: chosen.iter().map(|s| s.to_string()).collect(),
            rejected: rejected.iter().map(|s| s.to_string()).collect(),
        });
    }
    Dataset::new(triples).expect("templates are disjoint and non-empty")
}
