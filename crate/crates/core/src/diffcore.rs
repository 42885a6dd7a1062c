//! Reverse-mode automatic differentiation over scalar expression graphs.
//!
//! A [`Graph`] is append-only: every node's operands already exist when the
//! node is pushed, so node order is a topological order and the graph is
//! acyclic by construction. `forward` evaluates nodes in push order and
//! `backward` accumulates adjoints in reverse.

pub mod exprs;

use crate::losses::{log_sigmoid_raw, sigmoid};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiffError {
    #[error("input '{0}' is not bound")]
    UnboundInput(String),
    #[error("unknown input '{0}'")]
    UnknownInput(String),
    #[error("node {node} ({op}): argument {value} outside the domain")]
    Domain { node: usize, op: &'static str, value: f64 },
    #[error("node {node} ({op}) produced a non-finite value")]
    NonFinite { node: usize, op: &'static str },
    #[error("backward called before forward")]
    NotEvaluated,
    #[error("duplicate input name '{0}'")]
    DuplicateInput(String),
}

pub type Result<T> = std::result::Result<T, DiffError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Const(f64),
    Input(String),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Neg(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Log1p(NodeId),
    LogSigmoid(NodeId),
    Sum(Vec<NodeId>),
    /// Clamp into `[lo, hi]`; the gradient is zero where the clamp is active.
    Clamp {
        arg: NodeId,
        lo: f64,
        hi: f64,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Const(_) => "const",
            Op::Input(_) => "input",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Neg(_) => "neg",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Log1p(_) => "log1p",
            Op::LogSigmoid(_) => "logsigmoid",
            Op::Sum(_) => "sum",
            Op::Clamp { .. } => "clamp",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub op: Op,
    pub value: f64,
    pub grad: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Built,
    Evaluated,
}

#[derive(Debug, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
    inputs: Vec<NodeId>,
    by_name: HashMap<String, NodeId>,
    bound: Vec<Option<f64>>,
    output: Option<NodeId>,
    state: State,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            inputs: Vec::new(),
            by_name: HashMap::new(),
            bound: Vec::new(),
            output: None,
            state: State::Built,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op) -> NodeId {
        self.state = State::Built;
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op,
            value: f64::NAN,
            grad: 0.0,
        });
        self.bound.push(None);
        id
    }

    pub fn constant(&mut self, value: f64) -> NodeId {
        self.push(Op::Const(value))
    }

    /// Declare a named input. Panics on a duplicate name; use
    /// [`Graph::try_input`] to handle that case.
    pub fn input(&mut self, name: impl Into<String>) -> NodeId {
        self.try_input(name).expect("duplicate input name")
    }

    pub fn try_input(&mut self, name: impl Into<String>) -> Result<NodeId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(DiffError::DuplicateInput(name));
        }
        let id = self.push(Op::Input(name.clone()));
        self.inputs.push(id);
        self.by_name.insert(name, id);
        Ok(id)
    }

    /// Declare an input with a default binding.
    pub fn input_with(&mut self, name: impl Into<String>, value: f64) -> NodeId {
        let id = self.input(name);
        self.bound[id.0] = Some(value);
        id
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let nb = self.neg(b);
        self.add(a, nb)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul(a, b))
    }

    pub fn scale(&mut self, factor: f64, a: NodeId) -> NodeId {
        let c = self.constant(factor);
        self.mul(c, a)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.mul(a, a)
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Neg(a))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Exp(a))
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Log(a))
    }

    pub fn log1p(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Log1p(a))
    }

    pub fn log_sigmoid(&mut self, a: NodeId) -> NodeId {
        self.push(Op::LogSigmoid(a))
    }

    pub fn sum(&mut self, terms: Vec<NodeId>) -> NodeId {
        self.push(Op::Sum(terms))
    }

    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        self.push(Op::Clamp { arg: a, lo, hi })
    }

    /// Mark the node whose value `forward` returns. Defaults to the last node.
    pub fn set_output(&mut self, id: NodeId) {
        self.output = Some(id);
        self.state = State::Built;
    }

    pub fn output(&self) -> Option<NodeId> {
        self.output.or_else(|| self.nodes.len().checked_sub(1).map(NodeId))
    }

    pub fn input_id(&self, name: &str) -> Option<NodeId> {
        self.by_name.get(name).copied()
    }

    pub fn input_names(&self) -> impl Iterator<Item = &str> + '_ {
        self.inputs.iter().map(|id| match &self.nodes[id.0].op {
            Op::Input(name) => name.as_str(),
            _ => unreachable!("input list holds only input nodes"),
        })
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn value(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> f64 {
        self.nodes[id.0].grad
    }

    /// Replace the default binding of an input node.
    pub fn bind(&mut self, id: NodeId, value: f64) {
        debug_assert!(matches!(self.nodes[id.0].op, Op::Input(_)));
        self.bound[id.0] = Some(value);
        self.state = State::Built;
    }

    fn current_bindings(&self) -> Vec<(String, f64)> {
        self.inputs
            .iter()
            .filter_map(|id| match (&self.nodes[id.0].op, self.bound[id.0]) {
                (Op::Input(name), Some(v)) => Some((name.clone(), v)),
                _ => None,
            })
            .collect()
    }

    /// Bind the named inputs (others keep their default binding) and evaluate
    /// the graph up to its output node.
    pub fn forward(&mut self, bindings: &[(&str, f64)]) -> Result<f64> {
        for (name, value) in bindings {
            let id = self
                .by_name
                .get(*name)
                .copied()
                .ok_or_else(|| DiffError::UnknownInput(name.to_string()))?;
            self.bound[id.0] = Some(*value);
        }
        let Some(out) = self.output() else {
            return Err(DiffError::NotEvaluated);
        };
        for i in 0..=out.0 {
            let v = self.eval_node(i)?;
            self.nodes[i].value = v;
        }
        self.state = State::Evaluated;
        Ok(self.nodes[out.0].value)
    }

    fn eval_node(&self, i: usize) -> Result<f64> {
        let val = |id: &NodeId| self.nodes[id.0].value;
        let op = &self.nodes[i].op;
        let domain = |value: f64| DiffError::Domain {
            node: i,
            op: op.name(),
            value,
        };
        let v = match op {
            Op::Const(c) => *c,
            Op::Input(name) => self.bound[i].ok_or_else(|| DiffError::UnboundInput(name.clone()))?,
            Op::Add(a, b) => val(a) + val(b),
            Op::Mul(a, b) => val(a) * val(b),
            Op::Neg(a) => -val(a),
            Op::Exp(a) => val(a).exp(),
            Op::Log(a) => {
                let x = val(a);
                if !(x > 0.0) {
                    return Err(domain(x));
                }
                x.ln()
            }
            Op::Log1p(a) => {
                let x = val(a);
                if !(x > -1.0) {
                    return Err(domain(x));
                }
                x.ln_1p()
            }
            Op::LogSigmoid(a) => log_sigmoid_raw(val(a)),
            Op::Sum(terms) => terms.iter().map(val).sum(),
            Op::Clamp { arg, lo, hi } => val(arg).clamp(*lo, *hi),
        };
        if !v.is_finite() {
            return Err(DiffError::NonFinite { node: i, op: op.name() });
        }
        Ok(v)
    }

    /// Reverse-mode accumulation from the output node. Returns the gradient
    /// with respect to every input, in declaration order.
    pub fn backward(&mut self) -> Result<Gradients> {
        if self.state != State::Evaluated {
            return Err(DiffError::NotEvaluated);
        }
        let out = self.output().ok_or(DiffError::NotEvaluated)?;
        for node in &mut self.nodes {
            node.grad = 0.0;
        }
        self.nodes[out.0].grad = 1.0;
        for i in (0..=out.0).rev() {
            let g = self.nodes[i].grad;
            if g == 0.0 {
                continue;
            }
            let value = |id: &NodeId| self.nodes[id.0].value;
            let node = &self.nodes[i];
            let local: [(NodeId, f64); 2] = match &node.op {
                Op::Const(_) | Op::Input(_) => continue,
                Op::Sum(_) => {
                    let Op::Sum(terms) = std::mem::replace(&mut self.nodes[i].op, Op::Const(0.0)) else {
                        unreachable!()
                    };
                    for t in &terms {
                        self.nodes[t.0].grad += g;
                    }
                    self.nodes[i].op = Op::Sum(terms);
                    continue;
                }
                Op::Add(a, b) => [(*a, g), (*b, g)],
                Op::Mul(a, b) => [(*a, g * value(b)), (*b, g * value(a))],
                Op::Neg(a) => [(*a, -g), (*a, 0.0)],
                Op::Exp(a) => [(*a, g * node.value), (*a, 0.0)],
                Op::Log(a) => [(*a, g / value(a)), (*a, 0.0)],
                Op::Log1p(a) => [(*a, g / (1.0 + value(a))), (*a, 0.0)],
                Op::LogSigmoid(a) => [(*a, g * sigmoid(-value(a))), (*a, 0.0)],
                Op::Clamp { arg, lo, hi } => {
                    let x = value(arg);
                    let pass = if x > *lo && x < *hi { g } else { 0.0 };
                    [(*arg, pass), (*arg, 0.0)]
                }
            };
            for (id, d) in local {
                self.nodes[id.0].grad += d;
            }
        }
        let by_input = self
            .inputs
            .iter()
            .map(|id| match &self.nodes[id.0].op {
                Op::Input(name) => (name.clone(), self.nodes[id.0].grad),
                _ => unreachable!(),
            })
            .collect();
        Ok(Gradients { by_input })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub by_input: Vec<(String, f64)>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.by_input.iter().find(|(n, _)| n == name).map(|(_, g)| *g)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradEntry {
    pub input: String,
    pub analytic: f64,
    pub numeric: f64,
    pub abs_err: f64,
    /// `abs_err / max(1, |analytic|)`.
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub entries: Vec<GradEntry>,
}

impl GradReport {
    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().map(|e| e.rel_err).fold(0.0, f64::max)
    }

    pub fn max_abs_err(&self) -> f64 {
        self.entries.iter().map(|e| e.abs_err).fold(0.0, f64::max)
    }
}

/// Compare reverse-mode gradients with central differences for every input.
///
/// `bindings` override the graph's default bindings. On return the graph is
/// left evaluated at the unperturbed point.
pub fn grad_check(graph: &mut Graph, bindings: &[(&str, f64)], h: f64) -> Result<GradReport> {
    graph.forward(bindings)?;
    let grads = graph.backward()?;
    let base = graph.current_bindings();
    let mut entries = Vec::with_capacity(base.len());
    for (idx, (name, x)) in base.iter().enumerate() {
        let probe = |graph: &mut Graph, v: f64| -> Result<f64> {
            let mut point: Vec<(&str, f64)> = base.iter().map(|(n, x)| (n.as_str(), *x)).collect();
            point[idx].1 = v;
            graph.forward(&point)
        };
        let plus = probe(graph, x + h)?;
        let minus = probe(graph, x - h)?;
        let numeric = (plus - minus) / (2.0 * h);
        let analytic = grads.by_input[idx].1;
        let abs_err = (analytic - numeric).abs();
        entries.push(GradEntry {
            input: name.clone(),
            analytic,
            numeric,
            abs_err,
            rel_err: abs_err / analytic.abs().max(1.0),
        });
    }
    let restore: Vec<(&str, f64)> = base.iter().map(|(n, x)| (n.as_str(), *x)).collect();
    graph.forward(&restore)?;
    graph.backward()?;
    Ok(GradReport { entries })
}
