use crate::opts::{InitMode, TrainOpts};
use crate::{read_input, require_out, runtime, usage, write_output, CliError, Ctx};
use prefalign::toylm::{
    synthetic_dataset, train, Dataset, Init, PolicyModel, ReferencePolicy, ReferenceSpec, ToyError, TrainConfig,
};
use prefalign::{LossFamily, LossParams};
use serde::Serialize;
use std::path::{Path, PathBuf};

#[derive(Serialize)]
#[serde(rename_all = "snake_case")]
enum DataSource {
    File(PathBuf),
    Synthetic { n: usize },
}

#[derive(Serialize)]
struct TrainEcho<'a> {
    data: &'a DataSource,
    train: &'a TrainConfig,
    init_mode: InitMode,
    init: Option<&'a Path>,
    ref_snapshot: Option<&'a str>,
}

/// Input problems and incompatible settings are usage errors; failures in
/// the numerics are runtime errors.
fn toy_error(e: ToyError) -> CliError {
    match e {
        ToyError::Loss { .. } | ToyError::Diff(_) | ToyError::Io(_) => runtime(e),
        _ => usage(e),
    }
}

fn read_checkpoint(path: &Path) -> Result<PolicyModel, CliError> {
    let text = read_input(path)?;
    PolicyModel::read_checkpoint(text.as_bytes()).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn default_checkpoint_path(out: &Path) -> PathBuf {
    out.with_extension("ckpt.json")
}

pub fn run(opts: TrainOpts, ctx: &Ctx) -> Result<(), CliError> {
    let family = opts.loss.unwrap_or(LossFamily::Asft);
    let defaults = TrainConfig::default();
    let params = LossParams::new(family)
        .with_beta(opts.beta.unwrap_or(defaults.params.beta))
        .with_alpha(opts.alpha.unwrap_or(defaults.params.alpha))
        .with_lambda(opts.lambda.unwrap_or(defaults.params.lambda))
        .with_tau(opts.tau.unwrap_or(defaults.params.tau))
        .with_aggregation(opts.agg.unwrap_or_default())
        .with_clamp(opts.clamp.unwrap_or(true));
    params.validate().map_err(usage)?;
    let init_mode = opts.init_mode.unwrap_or(InitMode::Uniform);
    let config = TrainConfig {
        params,
        steps: opts.steps.unwrap_or(defaults.steps),
        lr: opts.lr.unwrap_or(defaults.lr),
        seed: ctx.seed,
        order: opts.order.unwrap_or(defaults.order),
        init: match init_mode {
            InitMode::Uniform => Init::SmallUniform,
            InitMode::Zero => Init::Zero,
        },
        batch_size: opts.batch_size,
    };
    let out = require_out(opts.out, "train")?;

    // Settle the reference before touching any data so a missing snapshot
    // fails fast.
    let ref_arg = opts.ref_snapshot.as_deref();
    let reference = match (family.requires_reference(), ref_arg) {
        (true, None) => {
            return Err(usage(format!(
                "{family} needs a frozen reference policy: pass --ref-snapshot init or --ref-snapshot <checkpoint>"
            )))
        }
        (true, Some("init")) => ReferenceSpec::SnapshotInitial,
        (true, Some(path)) => ReferenceSpec::Provided(ReferencePolicy::snapshot(&read_checkpoint(Path::new(path))?)),
        (false, Some(_)) => {
            eprintln!("note: {family} is reference-free; ignoring --ref-snapshot");
            ReferenceSpec::None
        }
        (false, None) => ReferenceSpec::None,
    };

    let source = match &opts.data {
        Some(path) => DataSource::File(path.clone()),
        None => DataSource::Synthetic {
            n: opts.gen_n.unwrap_or(500),
        },
    };
    let dataset = match &source {
        DataSource::File(path) => {
            let text = read_input(path)?;
            Dataset::read_jsonl(text.as_bytes()).map_err(|e| usage(format!("{}: {e}", path.display())))?
        }
        DataSource::Synthetic { n } => synthetic_dataset(*n, ctx.seed),
    };
    let initial = opts.init.as_deref().map(read_checkpoint).transpose()?;

    let run = train(&dataset, &config, initial, reference).map_err(toy_error)?;

    let echo = TrainEcho {
        data: &source,
        train: &config,
        init_mode,
        init: opts.init.as_deref(),
        ref_snapshot: if family.requires_reference() { ref_arg } else { None },
    };
    let header = ctx.header("train", &echo)?;
    let mut buf = Vec::new();
    run.trajectory.write_csv(&mut buf, &header).map_err(runtime)?;
    write_output(&out, &buf)?;

    let ckpt = opts.checkpoint.unwrap_or_else(|| default_checkpoint_path(&out));
    let mut buf = Vec::new();
    run.policy.write_checkpoint(&mut buf).map_err(runtime)?;
    write_output(&ckpt, &buf)?;

    let (first, last) = (run.trajectory.first(), run.trajectory.last());
    println!("step,loss,x1,x2,margin");
    for r in [first, last] {
        println!("{},{},{},{},{}", r.step, r.loss, r.x1, r.x2, r.margin);
    }
    eprintln!(
        "wrote trajectory to {} and checkpoint to {}",
        out.display(),
        ckpt.display()
    );
    Ok(())
}
