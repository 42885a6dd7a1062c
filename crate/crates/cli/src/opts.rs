//! Command-line flags and the matching TOML config sections.
//!
//! Every option is an `Option` so that a flag can be layered over the config
//! file value, which in turn is layered over the built-in default.

use clap::{Args, Parser, Subcommand, ValueEnum};
use prefalign::{Aggregation, LossFamily};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use std::str::FromStr;

#[derive(Debug, Parser)]
#[command(name = "prefalign", version, about = "Preference-alignment loss laboratory")]
pub struct Cli {
    /// TOML config file; command-line flags take precedence over it.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Seed for every random choice. Falls back to the config file, then
    /// $PREFALIGN_SEED, then 0.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sweep the (x1, x2) plane and write loss, partials and case labels.
    Field(FieldOpts),
    /// Train the toy policy on preference triples and log the trajectory.
    Train(TrainOpts),
    /// Score hypotheses against references with BLEU-4 and ROUGE-1/2/L.
    Eval(EvalOpts),
    /// Check closed-form gradients and identities against numerical oracles.
    Verify(VerifyOpts),
    /// Write the seeded synthetic preference dataset as JSONL.
    Gendata(GendataOpts),
}

/// Top-level layout of the `--config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub seed: Option<u64>,
    pub field: FieldOpts,
    pub train: TrainOpts,
    pub eval: EvalOpts,
    pub verify: VerifyOpts,
    pub gendata: GendataOpts,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlaneFamily {
    Asft,
    Bt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerifyFamily {
    All,
    Asft,
    Bt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMode {
    Uniform,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BleuModeArg {
    Corpus,
    SentenceMean,
}

fn parse_family(s: &str) -> Result<LossFamily, String> {
    LossFamily::from_str(s)
}

fn parse_agg(s: &str) -> Result<Aggregation, String> {
    Aggregation::from_str(s)
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldOpts {
    /// Plane loss to sweep [default: asft]
    #[arg(long, value_enum)]
    pub loss: Option<PlaneFamily>,
    /// BT temperature [default: 0.1]
    #[arg(long)]
    pub beta: Option<f64>,
    /// Points per axis [default: 100]
    #[arg(long)]
    pub grid: Option<usize>,
    /// Lower axis bound, strictly above 0 [default: 0.01]
    #[arg(long)]
    pub lo: Option<f64>,
    /// Upper axis bound, strictly below 1 [default: 0.99]
    #[arg(long)]
    pub hi: Option<f64>,
    /// Lower case-label threshold [default: 0.25]
    #[arg(long)]
    pub t_lo: Option<f64>,
    /// Upper case-label threshold [default: 0.75]
    #[arg(long)]
    pub t_hi: Option<f64>,
    /// Output CSV (x1,x2,loss,d1,d2,case)
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Also render the vector field as SVG
    #[arg(long, value_name = "PATH")]
    pub svg: Option<PathBuf>,
    /// Also write unit descent directions and magnitudes as CSV
    #[arg(long, value_name = "PATH")]
    pub arrows: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOpts {
    /// JSONL dataset with prompt/chosen/rejected fields; omit to use the
    /// synthetic generator
    #[arg(long, value_name = "PATH")]
    pub data: Option<PathBuf>,
    /// Synthetic dataset size when --data is absent [default: 500]
    #[arg(long)]
    pub gen_n: Option<usize>,
    /// sft|asft|bt|dpo|ipo|orpo [default: asft]
    #[arg(long, value_parser = parse_family)]
    pub loss: Option<LossFamily>,
    /// ASFT alignment weight / BT temperature [default: 0.1]
    #[arg(long)]
    pub beta: Option<f64>,
    /// DPO temperature [default: 0.1]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// ORPO weight [default: 0.1]
    #[arg(long)]
    pub lambda: Option<f64>,
    /// IPO regulariser [default: 0.1]
    #[arg(long)]
    pub tau: Option<f64>,
    /// Token log-prob aggregation, sum|mean [default: sum]
    #[arg(long, value_parser = parse_agg)]
    pub agg: Option<Aggregation>,
    /// Clamp log-probabilities before the log-odds transform [default: true]
    #[arg(long)]
    pub clamp: Option<bool>,
    /// Gradient-descent steps [default: 200]
    #[arg(long)]
    pub steps: Option<usize>,
    /// Learning rate [default: 0.05]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Context order of the tabular policy [default: 2]
    #[arg(long)]
    pub order: Option<usize>,
    /// Minibatch size; omit for full-batch descent
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Logit initialisation [default: uniform]
    #[arg(long, value_enum)]
    pub init_mode: Option<InitMode>,
    /// Start from this policy checkpoint instead of a fresh table
    #[arg(long, value_name = "PATH")]
    pub init: Option<PathBuf>,
    /// Reference policy for DPO/IPO: `init` snapshots the starting policy,
    /// anything else is read as a checkpoint path
    #[arg(long, value_name = "init|PATH")]
    pub ref_snapshot: Option<String>,
    /// Output trajectory CSV (step,loss,x1,x2,margin)
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Output policy checkpoint [default: <out>.ckpt.json]
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOpts {
    /// Hypotheses, one segment per line
    #[arg(long, value_name = "PATH", requires = "reference", conflicts_with = "jsonl")]
    pub hyp: Option<PathBuf>,
    /// References, one segment per line
    #[arg(long = "ref", value_name = "PATH", requires = "hyp")]
    #[serde(rename = "ref")]
    pub reference: Option<PathBuf>,
    /// JSONL with hypothesis/reference fields
    #[arg(long, value_name = "PATH")]
    pub jsonl: Option<PathBuf>,
    /// Lowercase before tokenising [default: true]
    #[arg(long)]
    pub lowercase: Option<bool>,
    /// Epsilon for zero n-gram matches in BLEU; 0 disables smoothing [default: 0]
    #[arg(long)]
    pub smoothing: Option<f64>,
    /// Corpus-level BLEU or the mean of sentence scores [default: corpus]
    #[arg(long, value_enum)]
    pub bleu_mode: Option<BleuModeArg>,
    /// Output JSON report; stdout when omitted
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyOpts {
    /// Finite-difference step [default: 1e-6]
    #[arg(long)]
    pub h: Option<f64>,
    /// Points per axis of the finite-difference grid [default: 20]
    #[arg(long)]
    pub grid: Option<usize>,
    /// Lower grid bound [default: 0.05]
    #[arg(long)]
    pub lo: Option<f64>,
    /// Upper grid bound [default: 0.95]
    #[arg(long)]
    pub hi: Option<f64>,
    /// Plane families to check [default: all]
    #[arg(long, value_enum)]
    pub loss: Option<VerifyFamily>,
    /// BT temperatures to check; repeat or comma-separate [default: 0.1,0.5,1]
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub beta: Option<Vec<f64>>,
    /// Pass threshold for gradient errors [default: 1e-5]
    #[arg(long)]
    pub tol: Option<f64>,
    /// Random points per family in the autodiff check [default: 100]
    #[arg(long)]
    pub points: Option<usize>,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GendataOpts {
    /// Number of triples [default: 500]
    #[arg(long)]
    pub n: Option<usize>,
    /// Output JSONL; run metadata goes to <out>.meta.json
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

/// Fill every unset field of `self` from `base`.
macro_rules! overlay {
    ($ty:ident { $($f:ident),* $(,)? }) => {
        impl $ty {
            pub fn overlay(self, base: $ty) -> $ty {
                $ty { $($f: self.$f.or(base.$f)),* }
            }
        }
    };
}

overlay!(FieldOpts {
    loss,
    beta,
    grid,
    lo,
    hi,
    t_lo,
    t_hi,
    out,
    svg,
    arrows
});
overlay!(TrainOpts {
    data,
    gen_n,
    loss,
    beta,
    alpha,
    lambda,
    tau,
    agg,
    clamp,
    steps,
    lr,
    order,
    batch_size,
    init_mode,
    init,
    ref_snapshot,
    out,
    checkpoint,
});
overlay!(EvalOpts {
    hyp,
    reference,
    jsonl,
    lowercase,
    smoothing,
    bleu_mode,
    out
});
overlay!(VerifyOpts {
    h,
    grid,
    lo,
    hi,
    loss,
    beta,
    tol,
    points
});
overlay!(GendataOpts { n, out });
