use crate::opts::GendataOpts;
use crate::{require_out, runtime, write_output, CliError, Ctx};
use prefalign::toylm::synthetic_dataset;
use serde::Serialize;
use std::path::{Path, PathBuf};

#[derive(Serialize)]
struct GendataConfig {
    n: usize,
}

/// `<out>.meta.json`, so the JSONL itself holds only records.
pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

pub fn run(opts: GendataOpts, ctx: &Ctx) -> Result<(), CliError> {
    let config = GendataConfig {
        n: opts.n.unwrap_or(500),
    };
    let out = require_out(opts.out, "gendata")?;
    let dataset = synthetic_dataset(config.n, ctx.seed);

    let mut buf = Vec::new();
    dataset.write_jsonl(&mut buf).map_err(runtime)?;
    write_output(&out, &buf)?;

    let mut meta = ctx.meta("gendata", &config)?;
    meta["records"] = dataset.len().into();
    meta["digest"] = dataset.digest().into();
    let mut text = serde_json::to_string_pretty(&meta).map_err(runtime)?;
    text.push('\n');
    write_output(&sidecar_path(&out), text.as_bytes())?;
    eprintln!("wrote {} triples to {}", dataset.len(), out.display());
    Ok(())
}
