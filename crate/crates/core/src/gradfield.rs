//! Gradient fields over the `(x1, x2)` probability plane.
//!
//! `x1` is the probability of the preferred response and `x2` that of the
//! dispreferred one. Both the BT loss `-log(x1^β / (x1^β + x2^β))` and the
//! ASFT alignment loss `-ln x1 - ln(1 - x2)` have closed-form partials; this
//! module evaluates them, sweeps grids for plotting and checks the closed
//! forms against central finite differences of the loss implementations.

use crate::losses::{self, LossError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FieldError {
    #[error("{name} = {value} must lie strictly inside (0, 1)")]
    Boundary { name: &'static str, value: f64 },
    #[error("finite-difference step h = {h} moves {name} = {value} outside (0, 1)")]
    StepCrossesBoundary { name: &'static str, value: f64, h: f64 },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error(transparent)]
    Loss(#[from] LossError),
}

pub type Result<T> = std::result::Result<T, FieldError>;

fn interior(name: &'static str, value: f64) -> Result<f64> {
    if value > 0.0 && value < 1.0 {
        Ok(value)
    } else {
        Err(FieldError::Boundary { name, value })
    }
}

/// Loss evaluated on the plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum PlaneLoss {
    Bt { beta: f64 },
    Asft,
}

impl PlaneLoss {
    pub fn loss(&self, x1: f64, x2: f64) -> Result<f64> {
        Ok(match *self {
            PlaneLoss::Bt { beta } => losses::bt_loss_plane(x1, x2, beta)?,
            PlaneLoss::Asft => losses::asft_align_loss_plane(x1, x2)?,
        })
    }

    pub fn partials(&self, x1: f64, x2: f64) -> Result<(f64, f64)> {
        match *self {
            PlaneLoss::Bt { beta } => bt_partials(x1, x2, beta),
            PlaneLoss::Asft => asft_partials(x1, x2),
        }
    }

    pub fn label(&self) -> String {
        match self {
            PlaneLoss::Bt { beta } => format!("bt(beta={beta})"),
            PlaneLoss::Asft => "asft".to_string(),
        }
    }
}

/// BT partials `(-βx2^β / (x1(x1^β + x2^β)), βx2^{β-1} / (x1^β + x2^β))`.
pub fn bt_partials(x1: f64, x2: f64, beta: f64) -> Result<(f64, f64)> {
    interior("x1", x1)?;
    interior("x2", x2)?;
    let a = x1.powf(beta);
    let b = x2.powf(beta);
    let denom = a + b;
    let d1 = -beta * b / (x1 * denom);
    let d2 = beta * x2.powf(beta - 1.0) / denom;
    Ok((d1, d2))
}

/// ASFT alignment partials `(-1/x1, 1/(1 - x2))`.
pub fn asft_partials(x1: f64, x2: f64) -> Result<(f64, f64)> {
    interior("x1", x1)?;
    interior("x2", x2)?;
    Ok((-1.0 / x1, 1.0 / (1.0 - x2)))
}

/// `|∂L/∂x1| / |∂L/∂x2| = (1 - x2) / x1` for the ASFT alignment loss.
pub fn update_rate_ratio(x1: f64, x2: f64) -> Result<f64> {
    interior("x1", x1)?;
    interior("x2", x2)?;
    Ok((1.0 - x2) / x1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CaseLabel {
    Case1,
    Case2,
    Case3,
    Interior,
}

impl CaseLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            CaseLabel::Case1 => "case1",
            CaseLabel::Case2 => "case2",
            CaseLabel::Case3 => "case3",
            CaseLabel::Interior => "interior",
        }
    }
}

impl fmt::Display for CaseLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CaseLabel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "case1" => Ok(CaseLabel::Case1),
            "case2" => Ok(CaseLabel::Case2),
            "case3" => Ok(CaseLabel::Case3),
            "interior" => Ok(CaseLabel::Interior),
            other => Err(format!("unknown case label '{other}'")),
        }
    }
}

/// Cut points separating the qualitative corner regions of the plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaseThresholds {
    pub lo: f64,
    pub hi: f64,
}

impl Default for CaseThresholds {
    fn default() -> Self {
        Self { lo: 0.25, hi: 0.75 }
    }
}

impl CaseThresholds {
    /// Case1: preferred unlikely, dispreferred likely. Case2: both likely.
    /// Case3: dispreferred unlikely.
    pub fn classify(&self, x1: f64, x2: f64) -> CaseLabel {
        if x1 <= self.lo && x2 >= self.hi {
            CaseLabel::Case1
        } else if x1 >= self.hi && x2 >= self.hi {
            CaseLabel::Case2
        } else if x2 <= self.lo {
            CaseLabel::Case3
        } else {
            CaseLabel::Interior
        }
    }
}

/// Classify with the default 0.25 / 0.75 thresholds.
pub fn classify_case(x1: f64, x2: f64) -> CaseLabel {
    CaseThresholds::default().classify(x1, x2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradPoint {
    pub x1: f64,
    pub x2: f64,
    pub loss: f64,
    pub d1: f64,
    pub d2: f64,
    pub case: CaseLabel,
}

impl GradPoint {
    pub fn magnitude(&self) -> f64 {
        self.d1.hypot(self.d2)
    }

    /// Unit descent direction `-∇L / |∇L|`.
    pub fn descent_direction(&self) -> (f64, f64) {
        let m = self.magnitude();
        if m == 0.0 {
            (0.0, 0.0)
        } else {
            (-self.d1 / m, -self.d2 / m)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n: usize,
    pub lo: f64,
    pub hi: f64,
    pub loss: PlaneLoss,
    pub thresholds: CaseThresholds,
}

impl GridSpec {
    pub fn new(n: usize, lo: f64, hi: f64, loss: PlaneLoss) -> Self {
        Self {
            n,
            lo,
            hi,
            loss,
            thresholds: CaseThresholds::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(FieldError::InvalidGrid(format!("n = {} must be >= 2", self.n)));
        }
        if !(self.lo > 0.0 && self.lo < self.hi && self.hi < 1.0) {
            return Err(FieldError::InvalidGrid(format!(
                "range [{}, {}] must satisfy 0 < lo < hi < 1",
                self.lo, self.hi
            )));
        }
        if let PlaneLoss::Bt { beta } = self.loss {
            if !(beta.is_finite() && beta > 0.0) {
                return Err(FieldError::InvalidGrid(format!("beta = {beta} must be > 0")));
            }
        }
        if !(self.thresholds.lo < self.thresholds.hi) {
            return Err(FieldError::InvalidGrid("case thresholds need lo < hi".into()));
        }
        Ok(())
    }

    pub fn axis(&self) -> Vec<f64> {
        let step = (self.hi - self.lo) / (self.n - 1) as f64;
        (0..self.n).map(|k| self.lo + k as f64 * step).collect()
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        Self::new(100, 0.01, 0.99, PlaneLoss::Asft)
    }
}

/// Points in row-major order: `x2` indexes rows, `x1` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct GradField {
    pub spec: GridSpec,
    pub points: Vec<GradPoint>,
}

pub fn evaluate_point(loss: &PlaneLoss, thresholds: &CaseThresholds, x1: f64, x2: f64) -> Result<GradPoint> {
    let (d1, d2) = loss.partials(x1, x2)?;
    Ok(GradPoint {
        x1,
        x2,
        loss: loss.loss(x1, x2)?,
        d1,
        d2,
        case: thresholds.classify(x1, x2),
    })
}

/// Evaluate the loss, closed-form partials and case label over an `n × n` grid.
pub fn sweep(spec: &GridSpec) -> Result<GradField> {
    spec.validate()?;
    let axis = spec.axis();
    let n = spec.n;
    let points = (0..n * n)
        .into_par_iter()
        .map(|idx| evaluate_point(&spec.loss, &spec.thresholds, axis[idx % n], axis[idx / n]))
        .collect::<Result<Vec<_>>>()?;
    Ok(GradField { spec: *spec, points })
}

/// Absolute gaps between closed-form partials and central differences of the loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdError {
    pub err1: f64,
    pub err2: f64,
}

impl FdError {
    pub fn max(&self) -> f64 {
        self.err1.max(self.err2)
    }
}

pub const DEFAULT_FD_STEP: f64 = 1e-6;

pub fn fd_check(loss: &PlaneLoss, x1: f64, x2: f64, h: f64) -> Result<FdError> {
    if !(h.is_finite() && h > 0.0) {
        return Err(FieldError::InvalidGrid(format!("step h = {h} must be > 0")));
    }
    interior("x1", x1)?;
    interior("x2", x2)?;
    for (name, value) in [("x1", x1), ("x2", x2)] {
        if value - h <= 0.0 || value + h >= 1.0 {
            return Err(FieldError::StepCrossesBoundary { name, value, h });
        }
    }
    let (d1, d2) = loss.partials(x1, x2)?;
    let fd1 = (loss.loss(x1 + h, x2)? - loss.loss(x1 - h, x2)?) / (2.0 * h);
    let fd2 = (loss.loss(x1, x2 + h)? - loss.loss(x1, x2 - h)?) / (2.0 * h);
    Ok(FdError {
        err1: (d1 - fd1).abs(),
        err2: (d2 - fd2).abs(),
    })
}

/// Largest step `<= h` that keeps both probes inside the open unit square.
pub fn interior_step(x1: f64, x2: f64, h: f64) -> f64 {
    let room = x1.min(1.0 - x1).min(x2).min(1.0 - x2);
    h.min(room * 0.5)
}

/// [`fd_check`] with the step shrunk near the boundary.
pub fn fd_check_auto(loss: &PlaneLoss, x1: f64, x2: f64, h: f64) -> Result<FdError> {
    interior("x1", x1)?;
    interior("x2", x2)?;
    fd_check(loss, x1, x2, interior_step(x1, x2, h))
}

pub const CSV_HEADER: &str = "x1,x2,loss,d1,d2,case";

/// Nine significant digits in scientific notation.
pub fn fmt_sig9(v: f64) -> String {
    format!("{v:.8e}")
}

impl GradField {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Write the `x1,x2,loss,d1,d2,case` table, preceded by `#` metadata lines.
    pub fn write_csv<W: Write>(&self, mut out: W, metadata: &[String]) -> io::Result<()> {
        for line in metadata {
            writeln!(out, "# {line}")?;
        }
        writeln!(out, "{CSV_HEADER}")?;
        for p in &self.points {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                fmt_sig9(p.x1),
                fmt_sig9(p.x2),
                fmt_sig9(p.loss),
                fmt_sig9(p.d1),
                fmt_sig9(p.d2),
                p.case
            )?;
        }
        Ok(())
    }

    /// Arrow table: unit descent direction `(u, v)` and gradient magnitude as
    /// separate columns.
    pub fn write_arrows_csv<W: Write>(&self, mut out: W, metadata: &[String]) -> io::Result<()> {
        for line in metadata {
            writeln!(out, "# {line}")?;
        }
        writeln!(out, "x1,x2,u,v,magnitude,case")?;
        for p in &self.points {
            let (u, v) = p.descent_direction();
            writeln!(
                out,
                "{},{},{},{},{},{}",
                fmt_sig9(p.x1),
                fmt_sig9(p.x2),
                fmt_sig9(u),
                fmt_sig9(v),
                fmt_sig9(p.magnitude()),
                p.case
            )?;
        }
        Ok(())
    }

    /// Minimal SVG of the field: one arrow per point along the descent
    /// direction, coloured by case label. Arrow length scales with
    /// log-magnitude relative to the field's range. `metadata` lines become
    /// XML comments.
    pub fn write_svg<W: Write>(&self, mut out: W, metadata: &[String]) -> io::Result<()> {
        const SIZE: f64 = 600.0;
        const PAD: f64 = 40.0;
        let span = SIZE - 2.0 * PAD;
        let n = self.spec.n.max(2) as f64;
        let cell = span / n;
        let logs: Vec<f64> = self.points.iter().map(|p| p.magnitude().max(1e-300).ln()).collect();
        let (min_l, max_l) = logs
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let range = (max_l - min_l).max(1e-12);
        let to_px = |x1: f64, x2: f64| (PAD + x1 * span, SIZE - PAD - x2 * span);

        writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
        )?;
        for line in metadata {
            writeln!(out, "<!-- {} -->", line.replace("--", "- -"))?;
        }
        writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#)?;
        writeln!(
            out,
            r#"<rect x="{PAD}" y="{PAD}" width="{span}" height="{span}" fill="none" stroke="black"/>"#
        )?;
        writeln!(
            out,
            r#"<text x="{}" y="{}" font-size="14" text-anchor="middle">x1</text>"#,
            SIZE / 2.0,
            SIZE - 10.0
        )?;
        writeln!(
            out,
            r#"<text x="12" y="{}" font-size="14" text-anchor="middle">x2</text>"#,
            SIZE / 2.0
        )?;
        for (p, l) in self.points.iter().zip(&logs) {
            let (u, v) = p.descent_direction();
            let len = cell * (0.25 + 0.7 * (l - min_l) / range);
            let (sx, sy) = to_px(p.x1, p.x2);
            let (ex, ey) = (sx + u * len, sy - v * len);
            writeln!(
                out,
                r#"<line x1="{sx:.2}" y1="{sy:.2}" x2="{ex:.2}" y2="{ey:.2}" stroke="{}" stroke-width="1"/>"#,
                case_colour(p.case)
            )?;
            writeln!(
                out,
                r#"<circle cx="{ex:.2}" cy="{ey:.2}" r="1.2" fill="{}"/>"#,
                case_colour(p.case)
            )?;
        }
        writeln!(out, "</svg>")
    }

    /// Read back a table written by [`GradField::write_csv`]. `spec` is not
    /// stored in the table and must be supplied.
    pub fn read_csv<R: BufRead>(reader: R, spec: GridSpec) -> io::Result<Self> {
        let bad = |msg: String| io::Error::new(io::ErrorKind::InvalidData, msg);
        let mut points = Vec::new();
        let mut saw_header = false;
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            if !saw_header {
                if line != CSV_HEADER {
                    return Err(bad(format!("line {}: expected header '{CSV_HEADER}'", lineno + 1)));
                }
                saw_header = true;
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 6 {
                return Err(bad(format!("line {}: expected 6 columns", lineno + 1)));
            }
            let num = |i: usize| {
                cols[i]
                    .parse::<f64>()
                    .map_err(|e| bad(format!("line {}: column {}: {e}", lineno + 1, i + 1)))
            };
            points.push(GradPoint {
                x1: num(0)?,
                x2: num(1)?,
                loss: num(2)?,
                d1: num(3)?,
                d2: num(4)?,
                case: cols[5].parse().map_err(bad)?,
            });
        }
        Ok(GradField { spec, points })
    }
}

fn case_colour(case: CaseLabel) -> &'static str {
    match case {
        CaseLabel::Case1 => "#d62728",
        CaseLabel::Case2 => "#9467bd",
        CaseLabel::Case3 => "#2ca02c",
        CaseLabel::Interior => "#1f77b4",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn bt_partials_examples() {
        let (d1, d2) = bt_partials(0.5, 0.5, 1.0).unwrap();
        assert!(close(d1, -1.0, 1e-15) && close(d2, 1.0, 1e-15));
        let (d1, d2) = bt_partials(0.5, 0.5, 0.1).unwrap();
        assert!(close(d1, -0.1, 1e-15) && close(d2, 0.1, 1e-15));
        let (d1, d2) = bt_partials(0.9, 0.1, 1.0).unwrap();
        assert!(close(d1, -1.0 / 9.0, 1e-15) && close(d2, 1.0, 1e-15));
        assert!(matches!(bt_partials(1.0, 0.5, 1.0), Err(FieldError::Boundary { .. })));
    }

    #[test]
    fn asft_partials_examples() {
        assert_eq!(asft_partials(0.5, 0.5).unwrap(), (-2.0, 2.0));
        assert_eq!(asft_partials(0.25, 0.75).unwrap(), (-4.0, 4.0));
        let (d1, d2) = asft_partials(0.99, 0.01).unwrap();
        assert!(close(d1, -1.0 / 0.99, 1e-15) && close(d2, 1.0 / 0.99, 1e-15));
        assert!(asft_partials(0.5, 0.0).is_err());
    }

    #[test]
    fn update_rate_examples() {
        assert_eq!(update_rate_ratio(0.5, 0.5).unwrap(), 1.0);
        assert!(close(update_rate_ratio(0.9, 0.1).unwrap(), 1.0, 1e-15));
        assert_eq!(update_rate_ratio(0.25, 0.5).unwrap(), 2.0);
        assert!(update_rate_ratio(0.0, 0.5).is_err());
    }

    #[test]
    fn fd_examples() {
        let e = fd_check(&PlaneLoss::Asft, 0.5, 0.5, 1e-6).unwrap();
        assert!(e.max() < 1e-6, "{e:?}");
        let e = fd_check(&PlaneLoss::Bt { beta: 0.1 }, 0.5, 0.5, 1e-6).unwrap();
        assert!(e.max() < 1e-6, "{e:?}");
        assert!(matches!(
            fd_check(&PlaneLoss::Asft, 0.5, 0.5, 0.6),
            Err(FieldError::StepCrossesBoundary { name: "x1", .. })
        ));
    }

    #[test]
    fn fd_auto_shrinks_near_boundary() {
        assert!(fd_check(&PlaneLoss::Asft, 1e-7, 0.5, 1e-6).is_err());
        assert_eq!(interior_step(1e-7, 0.5, 1e-6), 5e-8);
        assert_eq!(interior_step(0.5, 0.5, 1e-6), 1e-6);
        let e = fd_check_auto(&PlaneLoss::Asft, 1e-7, 0.5, 1e-6).unwrap();
        // truncation error of -1/x scales like h²/x³
        assert!(e.err1 / 1e7 < 0.1, "{e:?}");
    }

    #[test]
    fn classify_examples() {
        assert_eq!(classify_case(0.1, 0.9), CaseLabel::Case1);
        assert_eq!(classify_case(0.9, 0.9), CaseLabel::Case2);
        assert_eq!(classify_case(0.5, 0.1), CaseLabel::Case3);
        assert_eq!(classify_case(0.5, 0.5), CaseLabel::Interior);
        let tight = CaseThresholds { lo: 0.1, hi: 0.9 };
        assert_eq!(tight.classify(0.2, 0.8), CaseLabel::Interior);
    }

    #[test]
    fn sweep_asft_two_by_two() {
        let field = sweep(&GridSpec::new(2, 0.25, 0.75, PlaneLoss::Asft)).unwrap();
        assert_eq!(field.len(), 4);
        for p in &field.points {
            assert!([-4.0, -4.0 / 3.0].iter().any(|v| close(p.d1, *v, 1e-15)));
            assert!([4.0 / 3.0, 4.0].iter().any(|v| close(p.d2, *v, 1e-15)));
        }
        // row-major: x1 varies fastest
        assert_eq!((field.points[1].x1, field.points[1].x2), (0.75, 0.25));
    }

    #[test]
    fn sweep_bt_corner() {
        let field = sweep(&GridSpec::new(2, 0.25, 0.75, PlaneLoss::Bt { beta: 1.0 })).unwrap();
        let corner = field.points.iter().find(|p| p.x1 == 0.25 && p.x2 == 0.75).unwrap();
        assert!(close(corner.loss, 4f64.ln(), 1e-12));
        assert_eq!(corner.case, CaseLabel::Case1);
    }

    #[test]
    fn sweep_rejects_bad_range() {
        assert!(sweep(&GridSpec::new(10, 0.0, 0.9, PlaneLoss::Asft)).is_err());
        assert!(sweep(&GridSpec::new(10, 0.5, 0.4, PlaneLoss::Asft)).is_err());
        assert!(sweep(&GridSpec::new(1, 0.1, 0.9, PlaneLoss::Asft)).is_err());
        assert!(sweep(&GridSpec::new(4, 0.1, 0.9, PlaneLoss::Bt { beta: 0.0 })).is_err());
    }

    #[test]
    fn sweep_is_deterministic() {
        let spec = GridSpec::new(37, 0.02, 0.98, PlaneLoss::Bt { beta: 0.3 });
        assert_eq!(sweep(&spec).unwrap(), sweep(&spec).unwrap());
        assert_eq!(sweep(&spec).unwrap().len(), 37 * 37);
    }

    #[test]
    fn csv_round_trip_is_stable() {
        let spec = GridSpec::new(5, 0.05, 0.95, PlaneLoss::Bt { beta: 0.5 });
        let field = sweep(&spec).unwrap();
        let mut first = Vec::new();
        field.write_csv(&mut first, &["meta".into()]).unwrap();
        let text = String::from_utf8(first.clone()).unwrap();
        assert!(text.lines().nth(1).unwrap() == CSV_HEADER);
        let back = GradField::read_csv(first.as_slice(), spec).unwrap();
        assert_eq!(back.len(), field.len());
        for (a, b) in back.points.iter().zip(&field.points) {
            assert!(close(a.d1, b.d1, 1e-8 * b.d1.abs()));
            assert_eq!(a.case, b.case);
        }
        let mut second = Vec::new();
        back.write_csv(&mut second, &["meta".into()]).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn svg_has_one_arrow_per_point() {
        let field = sweep(&GridSpec::new(6, 0.05, 0.95, PlaneLoss::Asft)).unwrap();
        let mut buf = Vec::new();
        field.write_svg(&mut buf, &["a--b".into()]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.matches("<line").count(), 36);
        assert!(text.contains("<!-- a- -b -->"));
        assert!(text.trim_end().ends_with("</svg>"));
    }

    proptest! {
        #[test]
        fn bt_ratio_identity(x1 in 0.01f64..0.99, x2 in 0.01f64..0.99, beta in 0.05f64..2.0) {
            let (d1, d2) = bt_partials(x1, x2, beta).unwrap();
            prop_assert!(d1 < 0.0 && d2 > 0.0);
            prop_assert!((d2.abs() / d1.abs() - x1 / x2).abs() <= 1e-12 * (x1 / x2).max(1.0));
        }

        #[test]
        fn asft_ratio_identity(x1 in 0.01f64..0.99, x2 in 0.01f64..0.99) {
            let (d1, d2) = asft_partials(x1, x2).unwrap();
            prop_assert!(d1 < 0.0 && d2 > 0.0);
            let r = update_rate_ratio(x1, x2).unwrap();
            prop_assert!((d1.abs() / d2.abs() - r).abs() <= 1e-12 * r.max(1.0));
        }

        #[test]
        fn asft_separable(x1 in 0.01f64..0.99, x2 in 0.01f64..0.99, y in 0.01f64..0.99) {
            let (a1, a2) = asft_partials(x1, x2).unwrap();
            let (b1, _) = asft_partials(x1, y).unwrap();
            let (_, c2) = asft_partials(y, x2).unwrap();
            prop_assert_eq!(a1, b1);
            prop_assert_eq!(a2, c2);
        }

        #[test]
        fn exactly_one_label(x1 in 0.001f64..0.999, x2 in 0.001f64..0.999) {
            let t = CaseThresholds::default();
            let hits = [
                x1 <= t.lo && x2 >= t.hi,
                x1 >= t.hi && x2 >= t.hi,
                x2 <= t.lo,
            ];
            let n = hits.iter().filter(|h| **h).count();
            prop_assert!(n <= 1);
            let expected = match hits.iter().position(|h| *h) {
                Some(0) => CaseLabel::Case1,
                Some(1) => CaseLabel::Case2,
                Some(2) => CaseLabel::Case3,
                _ => CaseLabel::Interior,
            };
            prop_assert_eq!(t.classify(x1, x2), expected);
        }
    }
}
