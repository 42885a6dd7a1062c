use crate::opts::{VerifyFamily, VerifyOpts};
use crate::{runtime, usage, CliError, Ctx};
use prefalign::diffcore::exprs::{self, PairNodes};
use prefalign::diffcore::{grad_check, Graph};
use prefalign::gradfield::{asft_partials, bt_partials, fd_check_auto, update_rate_ratio, GridSpec, PlaneLoss};
use prefalign::losses::{asft_align_loss, f_theta, sigmoid};
use prefalign::{LogProbPair, LossFamily, LossParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

const SCORE_SAMPLES: usize = 10_000;
const SCORE_TOL: f64 = 1e-10;
const CLOSED_FORM_TOL: f64 = 1e-9;
const RATIO_TOL: f64 = 1e-12;
const PULLBACK_TOL: f64 = 1e-6;

struct Check {
    name: String,
    value: f64,
    tol: f64,
    /// Counts pass only at zero; errors must be strictly below `tol`.
    count: bool,
}

impl Check {
    fn err(name: impl Into<String>, value: f64, tol: f64) -> Self {
        Self {
            name: name.into(),
            value,
            tol,
            count: false,
        }
    }

    fn count(name: impl Into<String>, value: usize) -> Self {
        Self {
            name: name.into(),
            value: value as f64,
            tol: 0.0,
            count: true,
        }
    }

    fn passed(&self) -> bool {
        if self.count {
            self.value == 0.0
        } else {
            self.value < self.tol
        }
    }
}

struct Settings {
    h: f64,
    tol: f64,
    grid: Vec<(f64, f64)>,
    families: VerifyFamily,
    betas: Vec<f64>,
    points: usize,
    seed: u64,
}

fn settings(opts: VerifyOpts, ctx: &Ctx) -> Result<Settings, CliError> {
    let h = opts.h.unwrap_or(1e-6);
    if !(h.is_finite() && h > 0.0) {
        return Err(usage(format!("--h {h} must be > 0")));
    }
    let tol = opts.tol.unwrap_or(1e-5);
    if !(tol.is_finite() && tol > 0.0) {
        return Err(usage(format!("--tol {tol} must be > 0")));
    }
    let spec = GridSpec::new(
        opts.grid.unwrap_or(20),
        opts.lo.unwrap_or(0.05),
        opts.hi.unwrap_or(0.95),
        PlaneLoss::Asft,
    );
    spec.validate().map_err(usage)?;
    let betas = opts.beta.unwrap_or_else(|| vec![0.1, 0.5, 1.0]);
    if let Some(b) = betas.iter().find(|b| !(b.is_finite() && **b > 0.0)) {
        return Err(usage(format!("--beta {b} must be > 0")));
    }
    let axis = spec.axis();
    let grid = axis
        .iter()
        .flat_map(|&x2| axis.iter().map(move |&x1| (x1, x2)))
        .collect();
    Ok(Settings {
        h,
        tol,
        grid,
        families: opts.loss.unwrap_or(VerifyFamily::All),
        betas,
        points: opts.points.unwrap_or(100),
        seed: ctx.seed,
    })
}

fn max_over<F>(grid: &[(f64, f64)], mut f: F) -> Result<f64, CliError>
where
    F: FnMut(f64, f64) -> Result<f64, CliError>,
{
    grid.iter().try_fold(0.0f64, |acc, &(x1, x2)| Ok(acc.max(f(x1, x2)?)))
}

fn plane_checks(s: &Settings, loss: PlaneLoss, out: &mut Vec<Check>) -> Result<(), CliError> {
    let tag = loss.label();
    let fd = max_over(&s.grid, |x1, x2| {
        Ok(fd_check_auto(&loss, x1, x2, s.h).map_err(runtime)?.max())
    })?;
    out.push(Check::err(format!("fd {tag}"), fd, s.tol));

    let ratio = max_over(&s.grid, |x1, x2| {
        let (d1, d2) = loss.partials(x1, x2).map_err(runtime)?;
        Ok(match loss {
            PlaneLoss::Bt { .. } => (d2.abs() / d1.abs() - x1 / x2).abs(),
            PlaneLoss::Asft => {
                let rate = update_rate_ratio(x1, x2).map_err(runtime)?;
                (d1.abs() / d2.abs() - (1.0 - x2) / x1)
                    .abs()
                    .max((rate - (1.0 - x2) / x1).abs())
            }
        })
    })?;
    out.push(Check::err(format!("ratio {tag}"), ratio, RATIO_TOL));

    let mut bad_signs = 0;
    for &(x1, x2) in &s.grid {
        let (d1, d2) = loss.partials(x1, x2).map_err(runtime)?;
        if !(d1 < 0.0 && d2 > 0.0) {
            bad_signs += 1;
        }
    }
    out.push(Check::count(format!("sign violations {tag}"), bad_signs));

    if let PlaneLoss::Asft = loss {
        let exact = max_over(&s.grid, |x1, x2| {
            let (d1, d2) = asft_partials(x1, x2).map_err(runtime)?;
            Ok((d1 + 1.0 / x1).abs().max((d2 - 1.0 / (1.0 - x2)).abs()))
        })?;
        out.push(Check::err("exact asft partials", exact, RATIO_TOL));
        let closed = max_over(&s.grid, |x1, x2| {
            let l = asft_align_loss(&LogProbPair::new(x1.ln(), x2.ln())).map_err(runtime)?;
            Ok((l - (-x1.ln() - (1.0 - x2).ln())).abs())
        })?;
        out.push(Check::err("asft align closed form", closed, CLOSED_FORM_TOL));
    }
    if let PlaneLoss::Bt { beta } = loss {
        // Theorem 1 forms written out independently of the library.
        let exact = max_over(&s.grid, |x1, x2| {
            let (d1, d2) = bt_partials(x1, x2, beta).map_err(runtime)?;
            let den = x1.powf(beta) + x2.powf(beta);
            let e1 = -beta * x2.powf(beta) / (x1 * den);
            let e2 = beta * x2.powf(beta - 1.0) / den;
            Ok((d1 - e1).abs().max((d2 - e2).abs()))
        })?;
        out.push(Check::err(format!("exact {tag} partials"), exact, RATIO_TOL));
    }
    Ok(())
}

fn identity_checks(s: &Settings, out: &mut Vec<Check>) -> Result<(), CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let mut score = 0.0f64;
    for _ in 0..SCORE_SAMPLES {
        let p: f64 = rng.gen_range(1e-12..=1.0 - 1e-12);
        let back = sigmoid(f_theta(p.ln()).map_err(runtime)?);
        score = score.max((back - p).abs());
    }
    out.push(Check::err("score identity", score, SCORE_TOL));

    let mut stable = 0.0f64;
    for k in 0..SCORE_SAMPLES {
        let p = 1e-6 + (1.0 - 2e-6) * k as f64 / (SCORE_SAMPLES - 1) as f64;
        let naive = (p / (1.0 - p)).ln();
        stable = stable.max((f_theta(p.ln()).map_err(runtime)? - naive).abs());
    }
    out.push(Check::err("stable vs naive log-odds", stable, CLOSED_FORM_TOL));

    let non_finite = [-700.0, -500.0, -100.0, -40.0]
        .iter()
        .filter(|&&lp| !f_theta(lp).is_ok_and(f64::is_finite))
        .count();
    out.push(Check::count("non-finite log-odds down to -700", non_finite));
    Ok(())
}

fn autodiff_checks(s: &Settings, out: &mut Vec<Check>) -> Result<(), CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed ^ 0x5eed);
    for family in [
        LossFamily::Asft,
        LossFamily::Dpo,
        LossFamily::Orpo,
        LossFamily::Ipo,
        LossFamily::Bt,
        LossFamily::Sft,
    ] {
        let params = LossParams::new(family);
        let mut g = Graph::new();
        let pair = PairNodes::new(g.input("logp_w"), g.input("logp_l"))
            .with_reference(g.input("ref_logp_w"), g.input("ref_logp_l"));
        let root = exprs::loss(&mut g, &pair, &params).map_err(runtime)?;
        g.set_output(root);
        let mut worst = 0.0f64;
        for _ in 0..s.points {
            let mut lp = || rng.gen_range(0.02f64..0.98).ln();
            let point = [
                ("logp_w", lp()),
                ("logp_l", lp()),
                ("ref_logp_w", lp()),
                ("ref_logp_l", lp()),
            ];
            let report = grad_check(&mut g, &point, s.h).map_err(runtime)?;
            worst = worst.max(report.max_rel_err());
        }
        out.push(Check::err(format!("autodiff {family}"), worst, s.tol));
    }

    // dL/dx = (dL/dlogp) / x recovers the plane partials.
    let mut g = Graph::new();
    let pair = PairNodes::new(g.input("logp_w"), g.input("logp_l"));
    exprs::asft_align(&mut g, &pair, false);
    let pull = max_over(&s.grid, |x1, x2| {
        g.forward(&[("logp_w", x1.ln()), ("logp_l", x2.ln())])
            .map_err(runtime)?;
        let grads = g.backward().map_err(runtime)?;
        let (d1, d2) = asft_partials(x1, x2).map_err(runtime)?;
        let g1 = grads.get("logp_w").unwrap_or(0.0) / x1;
        let g2 = grads.get("logp_l").unwrap_or(0.0) / x2;
        Ok((g1 - d1).abs().max((g2 - d2).abs()))
    })?;
    out.push(Check::err("autodiff plane pullback", pull, PULLBACK_TOL));
    Ok(())
}

pub fn run(opts: VerifyOpts, ctx: &Ctx) -> Result<(), CliError> {
    let s = settings(opts, ctx)?;
    let start = Instant::now();
    let mut checks = Vec::new();
    if matches!(s.families, VerifyFamily::All | VerifyFamily::Asft) {
        plane_checks(&s, PlaneLoss::Asft, &mut checks)?;
    }
    if matches!(s.families, VerifyFamily::All | VerifyFamily::Bt) {
        for &beta in &s.betas {
            plane_checks(&s, PlaneLoss::Bt { beta }, &mut checks)?;
        }
    }
    identity_checks(&s, &mut checks)?;
    autodiff_checks(&s, &mut checks)?;

    println!(
        "# prefalign {} verify: seed {}, h {:e}, {} grid points, {} autodiff points per family",
        crate::VERSION,
        s.seed,
        s.h,
        s.grid.len(),
        s.points
    );
    println!("{:<36} {:>12} {:>10}  result", "check", "max error", "threshold");
    for c in &checks {
        let value = if c.count {
            format!("{}", c.value)
        } else {
            format!("{:.3e}", c.value)
        };
        let tol = if c.count {
            "0".to_string()
        } else {
            format!("{:.0e}", c.tol)
        };
        let result = if c.passed() { "PASS" } else { "FAIL" };
        println!("{:<36} {value:>12} {tol:>10}  {result}", c.name);
    }
    let failed = checks.iter().filter(|c| !c.passed()).count();
    eprintln!("{} checks in {:.2?}", checks.len(), start.elapsed());
    if failed > 0 {
        return Err(runtime(format!("{failed} of {} checks failed", checks.len())));
    }
    println!("all {} checks passed", checks.len());
    Ok(())
}
