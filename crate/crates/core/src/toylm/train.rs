//! Gradient-descent training of a [`PolicyModel`] on preference triples.

use super::{Dataset, EncodedTriple, Init, PolicyModel, ReferencePolicy, Result, ToyError};
use crate::diffcore::exprs::{self, PairNodes};
use crate::diffcore::{Graph, NodeId};
use crate::losses::{self, Aggregation, LogProbPair, LossFamily, LossParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::{self, BufRead, Write};

pub const MARGIN_DEFINITION: &str = "corpus mean of log pi(y_w|x) - log pi(y_l|x)";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub params: LossParams,
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
    pub order: usize,
    #[serde(skip, default)]
    pub init: Init,
    /// `None` trains on the full dataset every step.
    pub batch_size: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            params: LossParams::new(LossFamily::Asft).with_clamp(true),
            steps: 200,
            lr: 0.05,
            seed: 0,
            order: 2,
            init: Init::SmallUniform,
            batch_size: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub loss: f64,
    pub mean_x1: f64,
    pub mean_x2: f64,
    pub margin: f64,
}

/// Loss and likelihood summaries of a policy over a set of triples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorpusStats {
    pub loss: f64,
    /// Arithmetic mean of `π(y_w|x)`.
    pub mean_x1: f64,
    /// Arithmetic mean of `π(y_l|x)`.
    pub mean_x2: f64,
    pub mean_logp_w: f64,
    pub mean_logp_l: f64,
    /// `mean_logp_w - mean_logp_l`.
    pub margin: f64,
}

fn pair_for(
    policy: &PolicyModel,
    t: &EncodedTriple,
    agg: Aggregation,
    reference: Option<&ReferencePolicy>,
) -> LogProbPair {
    let pair = LogProbPair::new(
        policy.sequence_logprob_ids(&t.prompt, &t.chosen, agg),
        policy.sequence_logprob_ids(&t.prompt, &t.rejected, agg),
    );
    match reference {
        Some(r) => pair.with_reference(
            r.sequence_logprob_ids(&t.prompt, &t.chosen, agg),
            r.sequence_logprob_ids(&t.prompt, &t.rejected, agg),
        ),
        None => pair,
    }
}

fn reference_for(family: LossFamily, reference: Option<&ReferencePolicy>) -> Result<Option<&ReferencePolicy>> {
    if !family.requires_reference() {
        return Ok(None);
    }
    reference.map(Some).ok_or(ToyError::MissingReference(family))
}

pub fn corpus_stats(
    policy: &PolicyModel,
    triples: &[EncodedTriple],
    params: &LossParams,
    reference: Option<&ReferencePolicy>,
) -> Result<CorpusStats> {
    if triples.is_empty() {
        return Err(ToyError::EmptyBatch);
    }
    let reference = reference_for(params.family, reference)?;
    let n = triples.len() as f64;
    let (mut loss, mut x1, mut x2, mut lw, mut ll) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (index, t) in triples.iter().enumerate() {
        let pair = pair_for(policy, t, params.aggregation, reference);
        loss += losses::evaluate(&pair, params).map_err(|source| ToyError::Loss { index, source })?;
        x1 += pair.logp_w.exp();
        x2 += pair.logp_l.exp();
        lw += pair.logp_w;
        ll += pair.logp_l;
    }
    let (mean_logp_w, mean_logp_l) = (lw / n, ll / n);
    Ok(CorpusStats {
        loss: loss / n,
        mean_x1: x1 / n,
        mean_x2: x2 / n,
        mean_logp_w,
        mean_logp_l,
        margin: mean_logp_w - mean_logp_l,
    })
}

/// Mean batch loss as a graph whose inputs are the policy logits it touches.
pub struct LossGraph {
    pub graph: Graph,
    pub output: NodeId,
    /// `(index into PolicyModel::logits, input node)`.
    pub params: Vec<(usize, NodeId)>,
}

struct Builder<'p> {
    policy: &'p PolicyModel,
    graph: Graph,
    params: HashMap<usize, NodeId>,
    order: Vec<(usize, NodeId)>,
    log_norm: HashMap<usize, NodeId>,
}

impl Builder<'_> {
    fn logit(&mut self, index: usize) -> NodeId {
        if let Some(id) = self.params.get(&index) {
            return *id;
        }
        let id = self
            .graph
            .input_with(format!("theta[{index}]"), self.policy.logits()[index]);
        self.params.insert(index, id);
        self.order.push((index, id));
        id
    }

    /// `log Σ_j exp(l_j)` for one context row, shifted by the row's current max.
    fn log_normaliser(&mut self, ctx: usize) -> NodeId {
        if let Some(id) = self.log_norm.get(&ctx) {
            return *id;
        }
        let off = self.policy.row_offset(ctx);
        let v = self.policy.vocab().len();
        let max = self.policy.row(ctx).iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let shift = self.graph.constant(-max);
        let mut terms = Vec::with_capacity(v);
        for j in 0..v {
            let l = self.logit(off + j);
            let shifted = self.graph.add(l, shift);
            terms.push(self.graph.exp(shifted));
        }
        let total = self.graph.sum(terms);
        let log_total = self.graph.log(total);
        let back = self.graph.constant(max);
        let id = self.graph.add(log_total, back);
        self.log_norm.insert(ctx, id);
        id
    }

    fn sequence_logprob(&mut self, prompt: &[usize], response: &[usize], agg: Aggregation) -> NodeId {
        if response.is_empty() {
            return self.graph.constant(0.0);
        }
        let mut history = prompt.to_vec();
        let mut terms = Vec::with_capacity(response.len());
        for &tok in response {
            let ctx = self.policy.context_index(&history);
            let l = self.logit(self.policy.row_offset(ctx) + tok);
            let norm = self.log_normaliser(ctx);
            terms.push(self.graph.sub(l, norm));
            history.push(tok);
        }
        let total = self.graph.sum(terms);
        match agg {
            Aggregation::Sum => total,
            Aggregation::Mean => self.graph.scale(1.0 / response.len() as f64, total),
        }
    }
}

pub fn batch_loss_graph(
    policy: &PolicyModel,
    batch: &[EncodedTriple],
    params: &LossParams,
    reference: Option<&ReferencePolicy>,
) -> Result<LossGraph> {
    if batch.is_empty() {
        return Err(ToyError::EmptyBatch);
    }
    let reference = reference_for(params.family, reference)?;
    let mut b = Builder {
        policy,
        graph: Graph::new(),
        params: HashMap::new(),
        order: Vec::new(),
        log_norm: HashMap::new(),
    };
    let mut per_example = Vec::with_capacity(batch.len());
    for (index, t) in batch.iter().enumerate() {
        let w = b.sequence_logprob(&t.prompt, &t.chosen, params.aggregation);
        let l = b.sequence_logprob(&t.prompt, &t.rejected, params.aggregation);
        let mut nodes = PairNodes::new(w, l);
        if let Some(r) = reference {
            let rw = b
                .graph
                .constant(r.sequence_logprob_ids(&t.prompt, &t.chosen, params.aggregation));
            let rl = b
                .graph
                .constant(r.sequence_logprob_ids(&t.prompt, &t.rejected, params.aggregation));
            nodes = nodes.with_reference(rw, rl);
        }
        per_example.push(exprs::loss(&mut b.graph, &nodes, params).map_err(|source| ToyError::Loss { index, source })?);
    }
    let total = b.graph.sum(per_example);
    let output = b.graph.scale(1.0 / batch.len() as f64, total);
    b.graph.set_output(output);
    Ok(LossGraph {
        graph: b.graph,
        output,
        params: b.order,
    })
}

/// One gradient-descent update on `batch`. Metrics describe the batch before
/// the update.
pub fn train_step(
    policy: &mut PolicyModel,
    batch: &[EncodedTriple],
    params: &LossParams,
    reference: Option<&ReferencePolicy>,
    lr: f64,
) -> Result<StepMetrics> {
    let stats = corpus_stats(policy, batch, params, reference)?;
    let mut lg = batch_loss_graph(policy, batch, params, reference)?;
    let loss = lg.graph.forward(&[])?;
    lg.graph.backward()?;
    let logits = policy.logits_mut();
    for (index, node) in &lg.params {
        logits[*index] -= lr * lg.graph.grad(*node);
    }
    policy.bump_version();
    Ok(StepMetrics {
        loss,
        mean_x1: stats.mean_x1,
        mean_x2: stats.mean_x2,
        margin: stats.margin,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub step: usize,
    pub loss: f64,
    pub x1: f64,
    pub x2: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub seed: u64,
    pub family: LossFamily,
    pub params: LossParams,
    pub lr: f64,
    pub steps: usize,
    pub order: usize,
    pub batch_size: Option<usize>,
    pub dataset_digest: String,
    pub dataset_len: usize,
    pub reference_step: Option<u64>,
    pub margin_definition: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTrajectory {
    pub meta: TrajectoryMeta,
    pub records: Vec<TrajectoryRecord>,
}

pub const TRAJECTORY_HEADER: &str = "step,loss,x1,x2,margin";
const META_PREFIX: &str = "# meta ";

impl TrainingTrajectory {
    pub fn first(&self) -> &TrajectoryRecord {
        &self.records[0]
    }

    pub fn last(&self) -> &TrajectoryRecord {
        self.records.last().expect("trajectory always holds the initial record")
    }

    /// Floats use the shortest representation that parses back exactly.
    pub fn write_csv<W: Write>(&self, mut out: W, header_lines: &[String]) -> io::Result<()> {
        for line in header_lines {
            writeln!(out, "# {line}")?;
        }
        writeln!(out, "{META_PREFIX}{}", serde_json::to_string(&self.meta)?)?;
        writeln!(out, "{TRAJECTORY_HEADER}")?;
        for r in &self.records {
            writeln!(out, "{},{},{},{},{}", r.step, r.loss, r.x1, r.x2, r.margin)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(reader: R) -> io::Result<Self> {
        let bad = |msg: String| io::Error::new(io::ErrorKind::InvalidData, msg);
        let mut meta = None;
        let mut records = Vec::new();
        let mut saw_header = false;
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if let Some(json) = line.strip_prefix(META_PREFIX) {
                meta = Some(serde_json::from_str(json)?);
                continue;
            }
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            if !saw_header {
                if line != TRAJECTORY_HEADER {
                    return Err(bad(format!("line {}: expected '{TRAJECTORY_HEADER}'", lineno + 1)));
                }
                saw_header = true;
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 5 {
                return Err(bad(format!("line {}: expected 5 columns", lineno + 1)));
            }
            let num = |i: usize| {
                cols[i]
                    .parse::<f64>()
                    .map_err(|e| bad(format!("line {}: {e}", lineno + 1)))
            };
            records.push(TrajectoryRecord {
                step: cols[0].parse().map_err(|e| bad(format!("line {}: {e}", lineno + 1)))?,
                loss: num(1)?,
                x1: num(2)?,
                x2: num(3)?,
                margin: num(4)?,
            });
        }
        let meta = meta.ok_or_else(|| bad("missing '# meta' line".into()))?;
        Ok(Self { meta, records })
    }
}

/// Where the frozen reference policy comes from.
#[derive(Debug, Clone)]
pub enum ReferenceSpec {
    None,
    /// Snapshot the policy before the first update.
    SnapshotInitial,
    Provided(ReferencePolicy),
}

pub struct TrainRun {
    pub policy: PolicyModel,
    pub reference: Option<ReferencePolicy>,
    pub trajectory: TrainingTrajectory,
}

/// Run `config.steps` updates and record corpus statistics after each one
/// (record 0 is the initial policy).
pub fn train(
    dataset: &Dataset,
    config: &TrainConfig,
    initial: Option<PolicyModel>,
    reference: ReferenceSpec,
) -> Result<TrainRun> {
    let params = config.params;
    params.validate().map_err(|e| ToyError::InvalidConfig(e.to_string()))?;
    if !(config.lr.is_finite() && config.lr >= 0.0) {
        return Err(ToyError::InvalidConfig(format!(
            "learning rate {} must be >= 0",
            config.lr
        )));
    }
    if config.batch_size == Some(0) {
        return Err(ToyError::InvalidConfig("batch size must be >= 1".into()));
    }
    let family = params.family;
    if family.requires_reference() && matches!(reference, ReferenceSpec::None) {
        return Err(ToyError::MissingReference(family));
    }
    if dataset.is_empty() {
        return Err(ToyError::InvalidConfig("dataset is empty".into()));
    }

    let mut policy = match initial {
        Some(p) => p,
        None => PolicyModel::init(dataset.vocab(), config.order, config.seed, config.init)?,
    };
    let triples = dataset.encode(policy.vocab())?;
    let reference = if family.requires_reference() {
        match reference {
            ReferenceSpec::None => unreachable!("checked above"),
            ReferenceSpec::SnapshotInitial => Some(ReferencePolicy::snapshot(&policy)),
            ReferenceSpec::Provided(r) => {
                if r.policy().vocab() != policy.vocab() {
                    return Err(ToyError::InvalidConfig(
                        "reference vocabulary differs from the policy vocabulary".into(),
                    ));
                }
                Some(r)
            }
        }
    } else {
        None
    };

    let record = |step: usize, policy: &PolicyModel| -> Result<TrajectoryRecord> {
        let s = corpus_stats(policy, &triples, &params, reference.as_ref())?;
        Ok(TrajectoryRecord {
            step,
            loss: s.loss,
            x1: s.mean_x1,
            x2: s.mean_x2,
            margin: s.margin,
        })
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut records = Vec::with_capacity(config.steps + 1);
    records.push(record(0, &policy)?);
    for step in 1..=config.steps {
        match config.batch_size {
            Some(b) if b < triples.len() => {
                let batch: Vec<EncodedTriple> = rand::seq::index::sample(&mut rng, triples.len(), b)
                    .into_iter()
                    .map(|i| triples[i].clone())
                    .collect();
                train_step(&mut policy, &batch, &params, reference.as_ref(), config.lr)?;
            }
            _ => {
                train_step(&mut policy, &triples, &params, reference.as_ref(), config.lr)?;
            }
        }
        records.push(record(step, &policy)?);
    }

    let meta = TrajectoryMeta {
        seed: config.seed,
        family,
        params,
        lr: config.lr,
        steps: config.steps,
        order: policy.order(),
        batch_size: config.batch_size,
        dataset_digest: dataset.digest(),
        dataset_len: dataset.len(),
        reference_step: reference.as_ref().map(ReferencePolicy::snapshot_step),
        margin_definition: MARGIN_DEFINITION.to_owned(),
    };
    Ok(TrainRun {
        policy,
        reference,
        trajectory: TrainingTrajectory { meta, records },
    })
}
