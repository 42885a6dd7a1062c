//! Loss functions over sequence log-probabilities and over the probability plane.
//!
//! Every function here is pure. Sequence-space losses take a [`LogProbPair`]
//! holding `log π(y_w|x)` and `log π(y_l|x)` (plus reference values for the
//! families that need them). Plane-space losses take `x1 = π(y_w|x)` and
//! `x2 = π(y_l|x)` directly.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Upper clamp for a log-probability fed into [`f_theta`]: `ln(1 - 1e-7)`.
pub const LOGP_CLAMP_HI: f64 = -1.000_000_050_000_003_3e-7;
/// Lower clamp for a log-probability fed into [`f_theta`].
pub const LOGP_CLAMP_LO: f64 = -700.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LossError {
    #[error("non-finite input {name} = {value}")]
    NonFinite { name: &'static str, value: f64 },
    #[error("{name} = {value} is outside the domain of {op}")]
    Domain {
        op: &'static str,
        name: &'static str,
        value: f64,
    },
    #[error("{family} requires reference log-probabilities")]
    MissingReference { family: LossFamily },
    #[error("{name} = {value} must lie strictly inside (0, 1)")]
    Boundary { name: &'static str, value: f64 },
    #[error("hyperparameter {name} = {value} must be > 0")]
    InvalidParam { name: &'static str, value: f64 },
}

pub type Result<T> = std::result::Result<T, LossError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossFamily {
    Sft,
    Asft,
    Bt,
    Dpo,
    Ipo,
    Orpo,
}

impl LossFamily {
    pub const ALL: [LossFamily; 6] = [
        LossFamily::Sft,
        LossFamily::Asft,
        LossFamily::Bt,
        LossFamily::Dpo,
        LossFamily::Ipo,
        LossFamily::Orpo,
    ];

    /// DPO and IPO normalise by a frozen reference policy; the rest are reference-free.
    pub fn requires_reference(self) -> bool {
        matches!(self, LossFamily::Dpo | LossFamily::Ipo)
    }

    pub fn name(self) -> &'static str {
        match self {
            LossFamily::Sft => "sft",
            LossFamily::Asft => "asft",
            LossFamily::Bt => "bt",
            LossFamily::Dpo => "dpo",
            LossFamily::Ipo => "ipo",
            LossFamily::Orpo => "orpo",
        }
    }
}

impl fmt::Display for LossFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossFamily {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        LossFamily::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown loss family '{s}' (expected sft|asft|bt|dpo|ipo|orpo)"))
    }
}

/// How token log-probabilities are reduced to a sequence log-probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// `log π(y|x)` proper: the sum over response tokens.
    #[default]
    Sum,
    /// Length-normalised: the mean over response tokens.
    Mean,
}

impl Aggregation {
    pub fn reduce(self, token_logps: &[f64]) -> f64 {
        let total: f64 = token_logps.iter().sum();
        match self {
            Aggregation::Sum => total,
            Aggregation::Mean if token_logps.is_empty() => 0.0,
            Aggregation::Mean => total / token_logps.len() as f64,
        }
    }
}

impl FromStr for Aggregation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sum" => Ok(Aggregation::Sum),
            "mean" => Ok(Aggregation::Mean),
            _ => Err(format!("unknown aggregation '{s}' (expected sum|mean)")),
        }
    }
}

/// Loss family selector plus its scalar hyperparameters.
///
/// `beta` weights the ASFT alignment term and scales BT rewards, `alpha` is
/// the DPO temperature, `lambda` the ORPO odds-ratio weight and `tau` the IPO
/// regulariser. [`LossParams::validate`] enforces strict positivity; the loss
/// functions themselves accept zero so that limiting cases can be evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParams {
    pub family: LossFamily,
    pub beta: f64,
    pub alpha: f64,
    pub lambda: f64,
    pub tau: f64,
    pub aggregation: Aggregation,
    /// Clamp log-probabilities into `[LOGP_CLAMP_LO, LOGP_CLAMP_HI]` before the
    /// log-odds transform.
    pub clamp_logp: bool,
}

impl Default for LossParams {
    fn default() -> Self {
        Self {
            family: LossFamily::Asft,
            beta: 0.1,
            alpha: 0.1,
            lambda: 0.1,
            tau: 0.1,
            aggregation: Aggregation::Sum,
            clamp_logp: false,
        }
    }
}

impl LossParams {
    pub fn new(family: LossFamily) -> Self {
        Self {
            family,
            ..Self::default()
        }
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }

    pub fn with_aggregation(mut self, aggregation: Aggregation) -> Self {
        self.aggregation = aggregation;
        self
    }

    pub fn with_clamp(mut self, clamp: bool) -> Self {
        self.clamp_logp = clamp;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("beta", self.beta),
            ("alpha", self.alpha),
            ("lambda", self.lambda),
            ("tau", self.tau),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(LossError::InvalidParam { name, value });
            }
        }
        Ok(())
    }
}

/// Policy (and optionally reference) sequence log-probabilities for one triple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogProbPair {
    pub logp_w: f64,
    pub logp_l: f64,
    pub ref_logp_w: Option<f64>,
    pub ref_logp_l: Option<f64>,
}

impl LogProbPair {
    pub fn new(logp_w: f64, logp_l: f64) -> Self {
        Self {
            logp_w,
            logp_l,
            ref_logp_w: None,
            ref_logp_l: None,
        }
    }

    pub fn with_reference(mut self, ref_logp_w: f64, ref_logp_l: f64) -> Self {
        self.ref_logp_w = Some(ref_logp_w);
        self.ref_logp_l = Some(ref_logp_l);
        self
    }

    fn reference(&self, family: LossFamily) -> Result<(f64, f64)> {
        match (self.ref_logp_w, self.ref_logp_l) {
            (Some(w), Some(l)) => Ok((w, l)),
            _ => Err(LossError::MissingReference { family }),
        }
    }

    /// Reference-normalised log-ratio gap `(logp_w - ref_w) - (logp_l - ref_l)`.
    fn ratio_gap(&self, family: LossFamily) -> Result<f64> {
        let (ref_w, ref_l) = self.reference(family)?;
        check_logp("ref_logp_w", ref_w)?;
        check_logp("ref_logp_l", ref_l)?;
        check_logp("logp_w", self.logp_w)?;
        check_logp("logp_l", self.logp_l)?;
        Ok((self.logp_w - ref_w) - (self.logp_l - ref_l))
    }
}

fn check_finite(name: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(LossError::NonFinite { name, value })
    }
}

fn check_logp(name: &'static str, value: f64) -> Result<f64> {
    check_finite(name, value)?;
    if value > 0.0 {
        return Err(LossError::Domain {
            op: "log-probability",
            name,
            value,
        });
    }
    Ok(value)
}

fn check_open_unit(name: &'static str, value: f64) -> Result<f64> {
    if value > 0.0 && value < 1.0 {
        Ok(value)
    } else {
        Err(LossError::Boundary { name, value })
    }
}

/// `log σ(z)` without the caller checking finiteness. Never overflows.
#[inline]
pub fn log_sigmoid_raw(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

/// `σ(z)` evaluated without overflow.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 - e^x)` for `x < 0`, switching between the expm1 and log1p forms at
/// `-ln 2` so neither end loses precision.
#[inline]
pub fn log1m_exp(x: f64) -> f64 {
    if x > -std::f64::consts::LN_2 {
        (-x.exp_m1()).ln()
    } else {
        (-x.exp()).ln_1p()
    }
}

/// Numerically stable `log σ(z) = -log(1 + e^{-z})`.
pub fn logsigmoid(z: f64) -> Result<f64> {
    Ok(log_sigmoid_raw(check_finite("z", z)?))
}

pub fn clamp_logp(logp: f64) -> f64 {
    logp.clamp(LOGP_CLAMP_LO, LOGP_CLAMP_HI)
}

/// Log-odds `log(p / (1 - p))` of `p = e^logp`, computed as `logp - log(1 - e^logp)`.
///
/// Requires `logp < 0`; `logp = 0` means `p = 1` where the log-odds diverge.
pub fn f_theta(logp: f64) -> Result<f64> {
    check_finite("logp", logp)?;
    if logp >= 0.0 {
        return Err(LossError::Domain {
            op: "f_theta",
            name: "logp",
            value: logp,
        });
    }
    Ok(logp - log1m_exp(logp))
}

fn f_theta_maybe_clamped(logp: f64, clamp: bool) -> Result<f64> {
    if clamp {
        f_theta(clamp_logp(check_finite("logp", logp)?))
    } else {
        f_theta(logp)
    }
}

fn align_terms(logp_w: f64, logp_l: f64, clamp: bool) -> Result<f64> {
    let fw = f_theta_maybe_clamped(logp_w, clamp)?;
    let fl = f_theta_maybe_clamped(logp_l, clamp)?;
    Ok(-log_sigmoid_raw(fw) - log_sigmoid_raw(-fl))
}

/// ASFT alignment loss `-log σ(f(y_w)) - log σ(-f(y_l))`.
///
/// Equal to `-ln x1 - ln(1 - x2)` with `x1 = e^logp_w`, `x2 = e^logp_l`.
pub fn asft_align_loss(pair: &LogProbPair) -> Result<f64> {
    align_terms(pair.logp_w, pair.logp_l, false)
}

/// Negative log-likelihood of the chosen response.
pub fn sft_nll_loss(logp_w: f64) -> Result<f64> {
    Ok(-check_logp("logp_w", logp_w)?)
}

/// `L_SFT + β · L_align`.
pub fn asft_total_loss(pair: &LogProbPair, params: &LossParams) -> Result<f64> {
    let sft = sft_nll_loss(pair.logp_w)?;
    let align = align_terms(pair.logp_w, pair.logp_l, params.clamp_logp)?;
    Ok(sft + params.beta * align)
}

/// BT reward loss on the plane: `-log(x1^β / (x1^β + x2^β))`.
pub fn bt_loss_plane(x1: f64, x2: f64, beta: f64) -> Result<f64> {
    check_open_unit("x1", x1)?;
    check_open_unit("x2", x2)?;
    check_finite("beta", beta)?;
    Ok(-log_sigmoid_raw(beta * (x1.ln() - x2.ln())))
}

/// ASFT alignment loss on the plane, evaluated through [`asft_align_loss`].
pub fn asft_align_loss_plane(x1: f64, x2: f64) -> Result<f64> {
    check_open_unit("x1", x1)?;
    check_open_unit("x2", x2)?;
    asft_align_loss(&LogProbPair::new(x1.ln(), x2.ln()))
}

/// BT reward loss with `r = log π`: `-log σ(β logp_w - β logp_l)`.
pub fn bt_loss(pair: &LogProbPair, params: &LossParams) -> Result<f64> {
    check_logp("logp_w", pair.logp_w)?;
    check_logp("logp_l", pair.logp_l)?;
    Ok(-log_sigmoid_raw(params.beta * (pair.logp_w - pair.logp_l)))
}

/// `-log σ(α(logp_w - ref_w) - α(logp_l - ref_l))`.
pub fn dpo_loss(pair: &LogProbPair, params: &LossParams) -> Result<f64> {
    let gap = pair.ratio_gap(LossFamily::Dpo)?;
    Ok(-log_sigmoid_raw(params.alpha * gap))
}

/// `P(i > j) = σ(score_i - score_j)`.
pub fn bt_preference_prob(score_i: f64, score_j: f64) -> Result<f64> {
    check_finite("score_i", score_i)?;
    check_finite("score_j", score_j)?;
    Ok(sigmoid(score_i - score_j))
}

/// `(h - 1/(2τ))²` with `h` the reference-normalised log-ratio gap.
pub fn ipo_loss(pair: &LogProbPair, params: &LossParams) -> Result<f64> {
    let gap = pair.ratio_gap(LossFamily::Ipo)?;
    let target = 1.0 / (2.0 * params.tau);
    Ok((gap - target).powi(2))
}

/// `L_SFT + λ · (-log σ(f(y_w) - f(y_l)))`.
pub fn orpo_loss(pair: &LogProbPair, params: &LossParams) -> Result<f64> {
    let sft = sft_nll_loss(pair.logp_w)?;
    let fw = f_theta_maybe_clamped(pair.logp_w, params.clamp_logp)?;
    let fl = f_theta_maybe_clamped(pair.logp_l, params.clamp_logp)?;
    Ok(sft - params.lambda * log_sigmoid_raw(fw - fl))
}

/// Per-example loss for whichever family `params` selects.
pub fn evaluate(pair: &LogProbPair, params: &LossParams) -> Result<f64> {
    match params.family {
        LossFamily::Sft => sft_nll_loss(pair.logp_w),
        LossFamily::Asft => asft_total_loss(pair, params),
        LossFamily::Bt => bt_loss(pair, params),
        LossFamily::Dpo => dpo_loss(pair, params),
        LossFamily::Ipo => ipo_loss(pair, params),
        LossFamily::Orpo => orpo_loss(pair, params),
    }
}

/// Arithmetic-mean batch reduction of [`evaluate`].
pub fn evaluate_batch(pairs: &[LogProbPair], params: &LossParams) -> Result<f64> {
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for pair in pairs {
        total += evaluate(pair, params)?;
    }
    Ok(total / pairs.len() as f64)
}
