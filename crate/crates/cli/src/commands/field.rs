use crate::opts::{FieldOpts, PlaneFamily};
use crate::{require_out, runtime, usage, write_output, CliError, Ctx};
use prefalign::gradfield::{sweep, CaseThresholds, GridSpec, PlaneLoss};

pub fn run(opts: FieldOpts, ctx: &Ctx) -> Result<(), CliError> {
    let loss = match opts.loss.unwrap_or(PlaneFamily::Asft) {
        PlaneFamily::Asft => PlaneLoss::Asft,
        PlaneFamily::Bt => PlaneLoss::Bt {
            beta: opts.beta.unwrap_or(0.1),
        },
    };
    let defaults = GridSpec::default();
    let mut spec = GridSpec::new(
        opts.grid.unwrap_or(defaults.n),
        opts.lo.unwrap_or(defaults.lo),
        opts.hi.unwrap_or(defaults.hi),
        loss,
    );
    spec.thresholds = CaseThresholds {
        lo: opts.t_lo.unwrap_or(defaults.thresholds.lo),
        hi: opts.t_hi.unwrap_or(defaults.thresholds.hi),
    };
    spec.validate().map_err(usage)?;
    let out = require_out(opts.out, "field")?;

    let field = sweep(&spec).map_err(runtime)?;
    let header = ctx.header("field", &spec)?;

    let mut buf = Vec::new();
    field.write_csv(&mut buf, &header).map_err(runtime)?;
    write_output(&out, &buf)?;

    if let Some(path) = opts.arrows {
        let mut buf = Vec::new();
        field.write_arrows_csv(&mut buf, &header).map_err(runtime)?;
        write_output(&path, &buf)?;
    }
    if let Some(path) = opts.svg {
        let mut buf = Vec::new();
        field.write_svg(&mut buf, &header).map_err(runtime)?;
        write_output(&path, &buf)?;
    }
    eprintln!(
        "wrote {} points ({}) to {}",
        field.len(),
        spec.loss.label(),
        out.display()
    );
    Ok(())
}
