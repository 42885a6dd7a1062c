//! Desk-scale laboratory for reference-free preference alignment.
//!
//! * [`losses`]: stateless loss functions (SFT, ASFT, BT, DPO, IPO, ORPO) over
//!   sequence log-probabilities and over the `(x1, x2)` probability plane.
//! * [`gradfield`]: closed-form partials, plane sweeps, case labelling and a
//!   finite-difference oracle.
//! * [`diffcore`]: a small reverse-mode autodiff engine over scalar graphs.
//! * [`toylm`]: an order-k tabular policy with a seeded preference-training harness.
//! * [`evalmetrics`]: BLEU-4 and ROUGE-1/2/L.

pub mod diffcore;
pub mod evalmetrics;
pub mod gradfield;
pub mod losses;
pub mod toylm;

pub use losses::{Aggregation, LogProbPair, LossError, LossFamily, LossParams};
