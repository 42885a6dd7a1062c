//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Oracles (finite differences, closed forms, brute-force LCS) are
//! written out here rather than taken from the library.

use prefalign::diffcore::exprs::{self, PairNodes};
use prefalign::diffcore::{grad_check, Graph};
use prefalign::evalmetrics::{bleu4, lcs_len, rouge_l, rouge_n, score_corpus, MetricOptions};
use prefalign::gradfield::{asft_partials, bt_partials};
use prefalign::losses::{asft_align_loss, asft_align_loss_plane, bt_loss_plane, f_theta, sigmoid};
use prefalign::toylm::{synthetic_dataset, train, ReferenceSpec, ToyError, TrainConfig};
use prefalign::{LogProbPair, LossFamily, LossParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

const FD_H: f64 = 1e-6;
const BETAS: [f64; 3] = [0.1, 0.5, 1.0];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// `n` evenly spaced points per axis over `[lo, hi]`, as (x1, x2) pairs.
fn grid(n: usize, lo: f64, hi: f64) -> Vec<(f64, f64)> {
    let axis: Vec<f64> = (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect();
    axis.iter().flat_map(|&b| axis.iter().map(move |&a| (a, b))).collect()
}

fn fd_grid() -> Vec<(f64, f64)> {
    grid(20, 0.05, 0.95)
}

fn central<F: Fn(f64) -> f64>(f: F, x: f64) -> f64 {
    (f(x + FD_H) - f(x - FD_H)) / (2.0 * FD_H)
}

fn bt_partials_fd() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for beta in BETAS {
        let loss = |a: f64, b: f64| -(a.powf(beta) / (a.powf(beta) + b.powf(beta))).ln();
        for (x1, x2) in fd_grid() {
            let (d1, d2) = bt_partials(x1, x2, beta).unwrap();
            worst = worst
                .max((d1 - central(|t| loss(t, x2), x1)).abs())
                .max((d2 - central(|t| loss(x1, t), x2)).abs());
            // the library loss agrees with the written-out one
            worst = worst.max((bt_loss_plane(x1, x2, beta).unwrap() - loss(x1, x2)).abs());
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst < 1e-5 && elapsed < Duration::from_secs(1),
        format!("max abs err {worst:.2e} < 1e-5 over 3x400 points in {elapsed:.2?} (< 1 s)"),
    )
}

fn asft_partials_fd() -> Outcome {
    let start = Instant::now();
    let mut fd = 0.0f64;
    let mut exact = 0.0f64;
    for (x1, x2) in fd_grid() {
        let (d1, d2) = asft_partials(x1, x2).unwrap();
        let l1 = central(|t| asft_align_loss_plane(t, x2).unwrap(), x1);
        let l2 = central(|t| asft_align_loss_plane(x1, t).unwrap(), x2);
        fd = fd.max((d1 - l1).abs()).max((d2 - l2).abs());
        let e1 = -1.0 / x1;
        let e2 = 1.0 / (1.0 - x2);
        exact = exact.max((d1 - e1).abs() / e1.abs()).max((d2 - e2).abs() / e2.abs());
    }
    let elapsed = start.elapsed();
    outcome(
        fd < 1e-5 && exact <= f64::EPSILON && elapsed < Duration::from_secs(1),
        format!("fd max abs err {fd:.2e} < 1e-5, exact-form rel err {exact:.1e} <= eps, {elapsed:.2?} (< 1 s)"),
    )
}

fn score_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let p: f64 = rng.gen_range(1e-12..=1.0 - 1e-12);
        worst = worst.max((sigmoid(f_theta(p.ln()).unwrap()) - p).abs());
    }
    outcome(
        worst < 1e-10,
        format!("max |sigma(logit p) - p| {worst:.2e} < 1e-10 over 10^4 seeded p"),
    )
}

fn transformation_identity() -> Outcome {
    let mut closed = 0.0f64;
    let mut points = fd_grid();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    points.extend((0..10_000).map(|_| (rng.gen_range(1e-6..1.0 - 1e-6), rng.gen_range(1e-6..1.0 - 1e-6))));
    for &(x1, x2) in &points {
        let l = asft_align_loss(&LogProbPair::new(x1.ln(), x2.ln())).unwrap();
        closed = closed.max((l - (-x1.ln() - (1.0 - x2).ln())).abs());
    }
    let mut stable = 0.0f64;
    for &(p, _) in &points {
        let naive = (p / (1.0 - p)).ln();
        if naive.is_finite() {
            stable = stable.max((f_theta(p.ln()).unwrap() - naive).abs());
        }
    }
    let deep = f_theta(-700.0).unwrap();
    let finite = deep.is_finite() && (deep + 700.0).abs() < 1e-9;
    outcome(
        closed < 1e-9 && stable < 1e-9 && finite,
        format!("closed-form err {closed:.2e}, stable-vs-naive err {stable:.2e} (< 1e-9), f(-700) = {deep}"),
    )
}

fn ratio_identities() -> Outcome {
    let mut worst = 0.0f64;
    for (x1, x2) in fd_grid() {
        for beta in BETAS {
            let (d1, d2) = bt_partials(x1, x2, beta).unwrap();
            worst = worst.max((d2.abs() / d1.abs() - x1 / x2).abs());
        }
        let (d1, d2) = asft_partials(x1, x2).unwrap();
        worst = worst.max((d1.abs() / d2.abs() - (1.0 - x2) / x1).abs());
    }
    outcome(
        worst < 1e-12,
        format!("max err {worst:.2e} < 1e-12 (BT x1/x2, ASFT (1-x2)/x1)"),
    )
}

fn sign_field() -> Outcome {
    let points = grid(100, 0.01, 0.99);
    let mut bad = 0;
    for &(x1, x2) in &points {
        let mut fields = vec![asft_partials(x1, x2).unwrap()];
        fields.extend(BETAS.iter().map(|&b| bt_partials(x1, x2, b).unwrap()));
        bad += fields.iter().filter(|(d1, d2)| !(*d1 < 0.0 && *d2 > 0.0)).count();
    }
    outcome(
        bad == 0 && points.len() == 10_000,
        format!(
            "{bad} violations of d1 < 0 < d2 over {} points x 4 fields",
            points.len()
        ),
    )
}

fn autodiff_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut parts = Vec::new();
    let mut pass = true;
    for family in [LossFamily::Asft, LossFamily::Dpo, LossFamily::Orpo, LossFamily::Ipo] {
        let params = LossParams::new(family);
        let mut g = Graph::new();
        let pair = PairNodes::new(g.input("logp_w"), g.input("logp_l"))
            .with_reference(g.input("ref_logp_w"), g.input("ref_logp_l"));
        let out = exprs::loss(&mut g, &pair, &params).unwrap();
        g.set_output(out);
        let mut worst = 0.0f64;
        for _ in 0..100 {
            let mut lp = || rng.gen_range(0.02f64..0.98).ln();
            let point = [
                ("logp_w", lp()),
                ("logp_l", lp()),
                ("ref_logp_w", lp()),
                ("ref_logp_l", lp()),
            ];
            worst = worst.max(grad_check(&mut g, &point, FD_H).unwrap().max_rel_err());
        }
        pass &= worst < 1e-5;
        parts.push(format!("{family} {worst:.1e}"));
    }
    outcome(pass, format!("max rel err < 1e-5 at 100 points: {}", parts.join(", ")))
}

fn toy_training() -> Outcome {
    let start = Instant::now();
    let data = synthetic_dataset(500, 0);
    let vocab = data.vocab().len();
    let config = TrainConfig::default();
    let params = config.params;
    let run = match train(&data, &config, None, ReferenceSpec::None) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("ASFT run failed: {e}")),
    };
    let recs = &run.trajectory.records;
    let (first, last) = (run.trajectory.first(), run.trajectory.last());
    let windows: Vec<f64> = recs.iter().step_by(10).map(|r| r.margin).collect();
    let monotone = windows.windows(2).all(|w| w[1] > w[0]) && windows.len() == 21;
    let elapsed = start.elapsed();

    let dpo = TrainConfig {
        params: LossParams::new(LossFamily::Dpo).with_clamp(true),
        steps: 5,
        ..config
    };
    let refused = matches!(
        train(&data, &dpo, None, ReferenceSpec::None),
        Err(ToyError::MissingReference(LossFamily::Dpo))
    );
    let with_ref = train(&data, &dpo, None, ReferenceSpec::SnapshotInitial).is_ok();

    let pass = params.family == LossFamily::Asft
        && params.beta == 0.1
        && config.steps == 200
        && last.x1 > first.x1
        && last.x2 < first.x2
        && monotone
        && elapsed < Duration::from_secs(60)
        && refused
        && with_ref;
    outcome(
        pass,
        format!(
            "|V|={vocab}, x1 {:.3e} -> {:.3e}, x2 {:.3e} -> {:.3e}, margin {:.3} -> {:.3} (10-step windows increasing: {monotone}), {elapsed:.2?} (< 60 s); DPO refused without reference: {refused}, runs with snapshot: {with_ref}",
            first.x1, last.x1, first.x2, last.x2, first.margin, last.margin
        ),
    )
}

/// Longest common subsequence by enumerating every subsequence of `a`.
fn brute_lcs(a: &[u8], b: &[u8]) -> usize {
    let is_subseq = |s: &[u8]| {
        let mut it = b.iter();
        s.iter().all(|c| it.any(|d| d == c))
    };
    (0u32..1 << a.len())
        .map(|mask| {
            let s: Vec<u8> = (0..a.len()).filter(|i| mask >> i & 1 == 1).map(|i| a[i]).collect();
            if is_subseq(&s) {
                s.len()
            } else {
                0
            }
        })
        .max()
        .unwrap_or(0)
}

fn toks(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut lcs_mismatch = 0;
    for _ in 0..200 {
        let mut seq = || {
            let n = rng.gen_range(0..=8);
            (0..n).map(|_| rng.gen_range(b'a'..=b'd')).collect::<Vec<u8>>()
        };
        let (a, b) = (seq(), seq());
        if lcs_len(&a, &b) != brute_lcs(&a, &b) {
            lcs_mismatch += 1;
        }
    }

    let mut hand = Vec::new();
    let cat = toks("the cat sat down");
    hand.push(("bleu identical", bleu4(&cat, &[cat.as_slice()]).unwrap().score, 1.0));
    hand.push((
        "bleu p2 = 0",
        bleu4(&toks("the the the the"), &[cat.as_slice()]).unwrap().score,
        0.0,
    ));
    let long = toks("a b c d e f");
    let short = toks("a b c d");
    // precisions are all 1, so the score is the brevity penalty exp(1 - 6/4)
    hand.push((
        "bleu brevity",
        bleu4(&short, &[long.as_slice()]).unwrap().score,
        (-0.5f64).exp(),
    ));
    let (h, r) = (toks("the cat"), toks("the cat sat"));
    let r1 = rouge_n(&h, &r, 1).unwrap();
    hand.push(("rouge1 P", r1.precision, 1.0));
    hand.push(("rouge1 R", r1.recall, 2.0 / 3.0));
    hand.push(("rouge1 F1", r1.f1, 0.8));
    let rl = rouge_l(&h, &r);
    hand.push(("rougeL F1", rl.f1, 0.8));
    hand.push(("rougeL R", rl.recall, 2.0 / 3.0));
    let disjoint = rouge_n(&toks("x y"), &r, 1).unwrap();
    hand.push(("rouge disjoint", disjoint.f1, 0.0));
    let hand_bad: Vec<&str> = hand
        .iter()
        .filter(|(_, got, want)| (got - want).abs() > 1e-15)
        .map(|(n, _, _)| *n)
        .collect();

    let corpus = [
        "sure here is a helpful answer",
        "glad to help here is a clear answer",
        "The cat sat on the mat",
    ];
    let report = score_corpus(&corpus, &corpus, &MetricOptions::default()).unwrap();
    let perfect = [report.bleu4, report.rouge1.f1, report.rouge2.f1, report.rouge_l.f1]
        .iter()
        .all(|v| *v == 1.0);

    outcome(
        lcs_mismatch == 0 && hand_bad.is_empty() && perfect,
        format!(
            "LCS mismatches vs brute force: {lcs_mismatch}/200; hand examples off: {hand_bad:?}; identical corpus perfect: {perfect}"
        ),
    )
}

fn run_cli(dir: &Path, args: &[&str]) -> Result<Vec<u8>, String> {
    let o = Command::new(env!("CARGO_BIN_EXE_prefalign"))
        .args(args)
        .current_dir(dir)
        .env_remove("PREFALIGN_SEED")
        .output()
        .map_err(|e| e.to_string())?;
    if !o.status.success() {
        return Err(format!("{args:?}: {}", String::from_utf8_lossy(&o.stderr)));
    }
    Ok(o.stdout)
}

fn determinism() -> Outcome {
    let root = tempfile::TempDir::new().expect("temp dir");
    let dirs = [root.path().join("a"), root.path().join("b")];
    let text = "the cat sat on the mat\nhere is a clear answer\n";
    let mut stdouts = Vec::new();
    for dir in &dirs {
        fs::create_dir(dir).unwrap();
        fs::write(dir.join("h.txt"), text).unwrap();
        fs::write(dir.join("r.txt"), "the cat sat on a mat\nhere is an answer\n").unwrap();
        let runs: [&[&str]; 5] = [
            &["gendata", "--n", "200", "--seed", "5", "--out", "d.jsonl"],
            &[
                "field", "--loss", "bt", "--beta", "0.1", "--grid", "50", "--out", "f.csv", "--svg", "f.svg",
                "--arrows", "a.csv",
            ],
            &[
                "train", "--data", "d.jsonl", "--seed", "5", "--steps", "40", "--out", "t.csv",
            ],
            &[
                "train",
                "--loss",
                "dpo",
                "--ref-snapshot",
                "init",
                "--seed",
                "5",
                "--gen-n",
                "100",
                "--steps",
                "20",
                "--batch-size",
                "16",
                "--out",
                "dpo.csv",
            ],
            &["eval", "--hyp", "h.txt", "--ref", "r.txt", "--out", "m.json"],
        ];
        for args in runs {
            if let Err(e) = run_cli(dir, args) {
                return outcome(false, e);
            }
        }
        match run_cli(dir, &["verify", "--seed", "5"]) {
            Ok(out) => stdouts.push(out),
            Err(e) => return outcome(false, e),
        }
    }
    let files = [
        "d.jsonl",
        "d.jsonl.meta.json",
        "f.csv",
        "f.svg",
        "a.csv",
        "t.csv",
        "t.ckpt.json",
        "dpo.csv",
        "dpo.ckpt.json",
        "m.json",
    ];
    let differing: Vec<&str> = files
        .iter()
        .filter(|f| fs::read(dirs[0].join(f)).ok() != fs::read(dirs[1].join(f)).ok())
        .copied()
        .collect();
    let verify_same = stdouts[0] == stdouts[1];
    outcome(
        differing.is_empty() && verify_same,
        format!(
            "{} output files from gendata/field/train/eval byte-identical across reruns (differing: {differing:?}); verify table identical: {verify_same}",
            files.len()
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("bt-partials-vs-finite-differences", bt_partials_fd),
        ("asft-partials-vs-finite-differences", asft_partials_fd),
        ("score-identity", score_identity),
        ("transformation-identity", transformation_identity),
        ("gradient-ratio-identities", ratio_identities),
        ("sign-field", sign_field),
        ("autodiff-oracle", autodiff_oracle),
        ("toy-training", toy_training),
        ("metric-oracles", metric_oracles),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let o = check();
        if !o.pass {
            failed += 1;
        }
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!(
        "acceptance: {}/{} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
