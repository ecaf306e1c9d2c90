//! Flat evaluation tapes compiled from expression DAGs.
//!
//! A tape is the DAG's node list in topological (SSA) order plus an input
//! slot map, so tape evaluation performs exactly the same floating-point
//! operations as recursive DAG evaluation and the two agree bit for bit.

use super::{Env, Node, NodeId, Ratio, Var};
use crate::error::Error;
use std::sync::Arc;

/// Where an input slot reads its value from.
#[derive(Clone, Debug)]
pub enum SlotSource {
    X(usize),
    V(usize),
    Param(Arc<str>),
}

impl SlotSource {
    fn to_var(&self) -> Var {
        match self {
            SlotSource::X(i) => Var::X(*i),
            SlotSource::V(i) => Var::V(*i),
            SlotSource::Param(name) => Var::Param(name.clone()),
        }
    }
}

/// Compiled multi-output tape. Evaluation is deterministic: identical inputs
/// produce bit-identical outputs.
#[derive(Clone, Debug)]
pub struct Tape {
    nodes: Arc<[Node]>,
    /// (slot index, source) for every variable node.
    inputs: Vec<(usize, SlotSource)>,
    outputs: Vec<NodeId>,
}

impl Tape {
    pub(super) fn compile(nodes: Arc<[Node]>, outputs: Vec<NodeId>) -> Self {
        let mut inputs = Vec::new();
        for (slot, node) in nodes.iter().enumerate() {
            if let Node::Var(v) = node {
                let source = match v {
                    Var::X(i) => SlotSource::X(*i),
                    Var::V(i) => SlotSource::V(*i),
                    Var::Param(name) => SlotSource::Param(name.clone()),
                };
                inputs.push((slot, source));
            }
        }
        Tape {
            nodes,
            inputs,
            outputs,
        }
    }

    /// Compiles a multi-output tape from extracted builder nodes.
    pub fn from_nodes(nodes: Vec<Node>, outputs: Vec<NodeId>) -> Self {
        Tape::compile(nodes.into(), outputs)
    }

    pub fn num_outputs(&self) -> usize {
        self.outputs.len()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Evaluates on coordinate slices. `buf` is reused scratch; outputs are
    /// written to `out`, whose length must equal `num_outputs()`.
    pub fn eval_xv(
        &self,
        x: &[f64],
        v: &[f64],
        buf: &mut Vec<f64>,
        out: &mut [f64],
    ) -> Result<(), Error> {
        buf.clear();
        buf.resize(self.nodes.len(), 0.0);
        for (slot, source) in &self.inputs {
            buf[*slot] = match source {
                SlotSource::X(i) => *x.get(*i).ok_or_else(|| {
                    Error::UnboundVariable(source.to_var())
                })?,
                SlotSource::V(i) => *v.get(*i).ok_or_else(|| {
                    Error::UnboundVariable(source.to_var())
                })?,
                SlotSource::Param(_) => {
                    return Err(Error::UnboundVariable(source.to_var()))
                }
            };
        }
        self.run(buf, out).map_err(|(op, node, arg)| Error::Domain {
            op,
            node,
            arg,
            bindings: Env::xv(x, v).bindings_public(),
        })
    }

    /// General path with an environment (parameters allowed).
    pub fn eval_env(&self, env: &Env, buf: &mut Vec<f64>, out: &mut [f64]) -> Result<(), Error> {
        buf.clear();
        buf.resize(self.nodes.len(), 0.0);
        for (slot, source) in &self.inputs {
            let var = source.to_var();
            buf[*slot] = env
                .lookup(&var)
                .ok_or(Error::UnboundVariable(var))?;
        }
        self.run(buf, out).map_err(|(op, node, arg)| Error::Domain {
            op,
            node,
            arg,
            bindings: env.bindings_public(),
        })
    }

    fn run(&self, slots: &mut [f64], out: &mut [f64]) -> Result<(), (&'static str, usize, f64)> {
        for (i, node) in self.nodes.iter().enumerate() {
            let value = match node {
                Node::Const(c) => *c,
                Node::Var(_) => continue, // filled by the caller
                Node::Add(a, b) => slots[*a as usize] + slots[*b as usize],
                Node::Sub(a, b) => slots[*a as usize] - slots[*b as usize],
                Node::Mul(a, b) => slots[*a as usize] * slots[*b as usize],
                Node::Div(a, b) => {
                    let y = slots[*b as usize];
                    if y == 0.0 {
                        return Err(("/", i, y));
                    }
                    slots[*a as usize] / y
                }
                Node::Neg(a) => -slots[*a as usize],
                Node::Pow(a, r) => {
                    eval_pow(slots[*a as usize], *r).map_err(|arg| ("^", i, arg))?
                }
                Node::Sqrt(a) => {
                    let x = slots[*a as usize];
                    if x < 0.0 {
                        return Err(("sqrt", i, x));
                    }
                    x.sqrt()
                }
                Node::Exp(a) => slots[*a as usize].exp(),
                Node::Log(a) => {
                    let x = slots[*a as usize];
                    if x <= 0.0 {
                        return Err(("log", i, x));
                    }
                    x.ln()
                }
                Node::Sin(a) => slots[*a as usize].sin(),
                Node::Cos(a) => slots[*a as usize].cos(),
            };
            slots[i] = value;
        }
        for (k, &output) in self.outputs.iter().enumerate() {
            out[k] = slots[output as usize];
        }
        Ok(())
    }
}

pub(super) fn eval_pow(x: f64, r: Ratio) -> Result<f64, f64> {
    if r.is_integer() {
        let n = r.num();
        if x == 0.0 && n < 0 {
            return Err(x);
        }
        Ok(x.powi(n as i32))
    } else {
        // Fractional exponents are restricted to positive bases.
        if x <= 0.0 {
            return Err(x);
        }
        Ok(x.powf(r.as_f64()))
    }
}
