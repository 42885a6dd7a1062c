//! Loss expressions built as graph nodes, mirroring [`crate::losses`].

use super::{Graph, NodeId};
use crate::losses::{LossError, LossFamily, LossParams, LOGP_CLAMP_HI, LOGP_CLAMP_LO};

/// Sequence log-probability nodes for one preference triple.
#[derive(Debug, Clone, Copy)]
pub struct PairNodes {
    pub logp_w: NodeId,
    pub logp_l: NodeId,
    pub ref_logp_w: Option<NodeId>,
    pub ref_logp_l: Option<NodeId>,
}

impl PairNodes {
    pub fn new(logp_w: NodeId, logp_l: NodeId) -> Self {
        Self {
            logp_w,
            logp_l,
            ref_logp_w: None,
            ref_logp_l: None,
        }
    }

    pub fn with_reference(mut self, ref_w: NodeId, ref_l: NodeId) -> Self {
        self.ref_logp_w = Some(ref_w);
        self.ref_logp_l = Some(ref_l);
        self
    }
}

/// `logp - log1p(-exp(logp))`, optionally after clamping `logp`.
pub fn log_odds(g: &mut Graph, logp: NodeId, clamp: bool) -> NodeId {
    let logp = if clamp {
        g.clamp(logp, LOGP_CLAMP_LO, LOGP_CLAMP_HI)
    } else {
        logp
    };
    let p = g.exp(logp);
    let neg_p = g.neg(p);
    let log1m = g.log1p(neg_p);
    g.sub(logp, log1m)
}

pub fn sft(g: &mut Graph, pair: &PairNodes) -> NodeId {
    g.neg(pair.logp_w)
}

pub fn asft_align(g: &mut Graph, pair: &PairNodes, clamp: bool) -> NodeId {
    let fw = log_odds(g, pair.logp_w, clamp);
    let fl = log_odds(g, pair.logp_l, clamp);
    let neg_fl = g.neg(fl);
    let a = g.log_sigmoid(fw);
    let b = g.log_sigmoid(neg_fl);
    let s = g.add(a, b);
    g.neg(s)
}

pub fn asft_total(g: &mut Graph, pair: &PairNodes, params: &LossParams) -> NodeId {
    let nll = sft(g, pair);
    let align = asft_align(g, pair, params.clamp_logp);
    let weighted = g.scale(params.beta, align);
    g.add(nll, weighted)
}

pub fn bt(g: &mut Graph, pair: &PairNodes, params: &LossParams) -> NodeId {
    let diff = g.sub(pair.logp_w, pair.logp_l);
    let z = g.scale(params.beta, diff);
    let ls = g.log_sigmoid(z);
    g.neg(ls)
}

fn ratio_gap(g: &mut Graph, pair: &PairNodes, family: LossFamily) -> Result<NodeId, LossError> {
    let (Some(rw), Some(rl)) = (pair.ref_logp_w, pair.ref_logp_l) else {
        return Err(LossError::MissingReference { family });
    };
    let chosen = g.sub(pair.logp_w, rw);
    let rejected = g.sub(pair.logp_l, rl);
    Ok(g.sub(chosen, rejected))
}

pub fn dpo(g: &mut Graph, pair: &PairNodes, params: &LossParams) -> Result<NodeId, LossError> {
    let gap = ratio_gap(g, pair, LossFamily::Dpo)?;
    let z = g.scale(params.alpha, gap);
    let ls = g.log_sigmoid(z);
    Ok(g.neg(ls))
}

pub fn ipo(g: &mut Graph, pair: &PairNodes, params: &LossParams) -> Result<NodeId, LossError> {
    let gap = ratio_gap(g, pair, LossFamily::Ipo)?;
    let target = g.constant(-1.0 / (2.0 * params.tau));
    let shifted = g.add(gap, target);
    Ok(g.square(shifted))
}

pub fn orpo(g: &mut Graph, pair: &PairNodes, params: &LossParams) -> NodeId {
    let nll = sft(g, pair);
    let fw = log_odds(g, pair.logp_w, params.clamp_logp);
    let fl = log_odds(g, pair.logp_l, params.clamp_logp);
    let diff = g.sub(fw, fl);
    let ls = g.log_sigmoid(diff);
    let weighted = g.scale(-params.lambda, ls);
    g.add(nll, weighted)
}

/// Per-example loss node for `params.family`.
pub fn loss(g: &mut Graph, pair: &PairNodes, params: &LossParams) -> Result<NodeId, LossError> {
    Ok(match params.family {
        LossFamily::Sft => sft(g, pair),
        LossFamily::Asft => asft_total(g, pair, params),
        LossFamily::Bt => bt(g, pair, params),
        LossFamily::Dpo => dpo(g, pair, params)?,
        LossFamily::Ipo => ipo(g, pair, params)?,
        LossFamily::Orpo => orpo(g, pair, params),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::grad_check;
    use crate::losses::{self, LogProbPair};

    fn pair_graph(params: &LossParams, w: f64, l: f64, rw: f64, rl: f64) -> (Graph, NodeId) {
        let mut g = Graph::new();
        let nodes = PairNodes::new(g.input_with("logp_w", w), g.input_with("logp_l", l))
            .with_reference(g.input_with("ref_logp_w", rw), g.input_with("ref_logp_l", rl));
        let out = loss(&mut g, &nodes, params).unwrap();
        g.set_output(out);
        (g, out)
    }

    #[test]
    fn graph_values_match_direct_losses() {
        let (w, l, rw, rl) = (-1.3, -2.2, -1.9, -1.1);
        let direct_pair = LogProbPair::new(w, l).with_reference(rw, rl);
        for family in LossFamily::ALL {
            let params = LossParams::new(family);
            let (mut g, _) = pair_graph(&params, w, l, rw, rl);
            let v = g.forward(&[]).unwrap();
            let expected = losses::evaluate(&direct_pair, &params).unwrap();
            assert!((v - expected).abs() < 1e-12, "{family}: {v} vs {expected}");
        }
    }

    #[test]
    fn align_graph_at_midpoint() {
        let mut g = Graph::new();
        let nodes = PairNodes::new(g.input("logp_w"), g.input("logp_l"));
        asft_align(&mut g, &nodes, false);
        let half = 0.5f64.ln();
        let v = g.forward(&[("logp_w", half), ("logp_l", half)]).unwrap();
        assert!((v - 1.386_294_361_119_890_6).abs() < 1e-12);
        let grads = g.backward().unwrap();
        // dL/dlogp_w = x1 · dL/dx1 = x1 · (-1/x1) = -1
        assert!((grads.get("logp_w").unwrap() + 1.0).abs() < 1e-12);
        // dL/dlogp_l = x2 · 1/(1-x2) = 1 at x2 = 1/2
        assert!((grads.get("logp_l").unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn asft_total_grad_check() {
        let params = LossParams::new(LossFamily::Asft);
        let (mut g, _) = pair_graph(&params, -0.8, -2.5, -1.0, -1.0);
        let report = grad_check(&mut g, &[], 1e-6).unwrap();
        assert!(report.max_rel_err() < 1e-5, "{report:?}");
    }

    #[test]
    fn reference_families_need_reference_nodes() {
        let mut g = Graph::new();
        let nodes = PairNodes::new(g.input("w"), g.input("l"));
        for family in [LossFamily::Dpo, LossFamily::Ipo] {
            assert!(matches!(
                loss(&mut g, &nodes, &LossParams::new(family)),
                Err(LossError::MissingReference { .. })
            ));
        }
    }

    #[test]
    fn clamped_log_odds_survive_certain_sequence() {
        let mut g = Graph::new();
        let nodes = PairNodes::new(g.input("w"), g.input("l"));
        asft_align(&mut g, &nodes, true);
        assert!(g.forward(&[("w", 0.0), ("l", -1.0)]).unwrap().is_finite());

        let mut g = Graph::new();
        let nodes = PairNodes::new(g.input("w"), g.input("l"));
        asft_align(&mut g, &nodes, false);
        assert!(g.forward(&[("w", 0.0), ("l", -1.0)]).is_err());
    }
}
