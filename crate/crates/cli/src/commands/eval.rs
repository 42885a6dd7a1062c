use crate::opts::{BleuModeArg, EvalOpts};
use crate::{read_input, runtime, usage, write_output, CliError, Ctx};
use prefalign::evalmetrics::{score_corpus, BleuMode, MetricOptions, MetricReport, Smoothing};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Deserialize)]
struct Pair {
    hypothesis: String,
    reference: String,
}

#[derive(Serialize)]
#[serde(rename_all = "snake_case")]
enum Inputs<'a> {
    Text { hyp: &'a Path, reference: &'a Path },
    Jsonl(&'a Path),
}

#[derive(Serialize)]
struct EvalEcho<'a> {
    inputs: Inputs<'a>,
    options: &'a MetricOptions,
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    meta: serde_json::Value,
    #[serde(flatten)]
    report: &'a MetricReport,
}

fn read_lines(path: &Path) -> Result<Vec<String>, CliError> {
    Ok(read_input(path)?.lines().map(str::to_owned).collect())
}

fn read_pairs(path: &Path) -> Result<(Vec<String>, Vec<String>), CliError> {
    let text = read_input(path)?;
    let mut hyps = Vec::new();
    let mut refs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let p: Pair =
            serde_json::from_str(line).map_err(|e| usage(format!("{} line {}: {e}", path.display(), i + 1)))?;
        hyps.push(p.hypothesis);
        refs.push(p.reference);
    }
    Ok((hyps, refs))
}

pub fn run(opts: EvalOpts, ctx: &Ctx) -> Result<(), CliError> {
    let smoothing = match opts.smoothing.unwrap_or(0.0) {
        e if e == 0.0 => Smoothing::None,
        e if e > 0.0 && e.is_finite() => Smoothing::Epsilon(e),
        e => return Err(usage(format!("--smoothing {e} must be >= 0"))),
    };
    let options = MetricOptions {
        lowercase: opts.lowercase.unwrap_or(true),
        smoothing,
        bleu_mode: match opts.bleu_mode.unwrap_or(BleuModeArg::Corpus) {
            BleuModeArg::Corpus => BleuMode::Corpus,
            BleuModeArg::SentenceMean => BleuMode::SentenceMean,
        },
    };
    let (inputs, hyps, refs) = match (&opts.hyp, &opts.reference, &opts.jsonl) {
        (Some(h), Some(r), None) => (Inputs::Text { hyp: h, reference: r }, read_lines(h)?, read_lines(r)?),
        (None, None, Some(j)) => {
            let (h, r) = read_pairs(j)?;
            (Inputs::Jsonl(j), h, r)
        }
        _ => return Err(usage("eval: pass either --hyp and --ref, or --jsonl")),
    };
    let report = score_corpus(&hyps, &refs, &options).map_err(usage)?;

    let meta = ctx.meta(
        "eval",
        &EvalEcho {
            inputs,
            options: &options,
        },
    )?;
    let mut text = serde_json::to_string_pretty(&EvalOutput { meta, report: &report }).map_err(runtime)?;
    text.push('\n');
    match opts.out.as_deref().map(PathBuf::from) {
        Some(path) => {
            write_output(&path, text.as_bytes())?;
            eprintln!(
                "bleu4={} rougeL.f1={} over {} segments -> {}",
                report.bleu4,
                report.rouge_l.f1,
                report.segments,
                path.display()
            );
        }
        None => print!("{text}"),
    }
    Ok(())
}
