//! Analytic expressions in position/velocity variables with exact symbolic
//! differentiation.
//!
//! Expressions are hash-consed DAGs: structurally identical subtrees share a
//! single node, which keeps high-order derivatives of quotient/sqrt
//! expressions tractable. A [`DagBuilder`] owns the node arena during
//! construction; a finished [`ExprDag`] is immutable and caches its compiled
//! evaluation tape, so it is safe to share across threads.

mod diff;
pub mod parse;
mod tape;

pub use parse::parse;
pub use tape::{SlotSource, Tape};

use crate::error::Error;
use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::sync::{Arc, OnceLock};

/// A free variable with its role.
///
/// `X(0)` is the position variable `x1`, `V(0)` the velocity variable `v1`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Var {
    X(usize),
    V(usize),
    Param(Arc<str>),
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::X(i) => write!(f, "x{}", i + 1),
            Var::V(i) => write!(f, "v{}", i + 1),
            Var::Param(name) => write!(f, "{name}"),
        }
    }
}

/// Exact rational exponent for power nodes.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub struct Ratio {
    num: i64,
    den: i64, // always > 0
}

impl Ratio {
    pub fn new(num: i64, den: i64) -> Self {
        assert!(den != 0, "rational exponent with zero denominator");
        let sign = if den < 0 { -1 } else { 1 };
        let (mut num, mut den) = (num * sign, den * sign);
        let g = gcd(num.unsigned_abs(), den.unsigned_abs()).max(1) as i64;
        num /= g;
        den /= g;
        Ratio { num, den }
    }

    pub fn integer(n: i64) -> Self {
        Ratio { num: n, den: 1 }
    }

    pub fn num(&self) -> i64 {
        self.num
    }

    pub fn den(&self) -> i64 {
        self.den
    }

    pub fn is_integer(&self) -> bool {
        self.den == 1
    }

    pub fn as_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    fn minus_one(&self) -> Self {
        Ratio::new(self.num - self.den, self.den)
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "({}/{})", self.num, self.den)
        }
    }
}

/// Node reference inside an arena.
pub type NodeId = u32;

/// A single DAG operation. Children always precede parents in the arena.
#[derive(Clone, Debug, PartialEq)]
pub enum Node {
    Const(f64),
    Var(Var),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Neg(NodeId),
    Pow(NodeId, Ratio),
    Sqrt(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Sin(NodeId),
    Cos(NodeId),
}

impl Node {
    pub fn op_name(&self) -> &'static str {
        match self {
            Node::Const(_) => "const",
            Node::Var(_) => "var",
            Node::Add(..) => "+",
            Node::Sub(..) => "-",
            Node::Mul(..) => "*",
            Node::Div(..) => "/",
            Node::Neg(_) => "neg",
            Node::Pow(..) => "^",
            Node::Sqrt(_) => "sqrt",
            Node::Exp(_) => "exp",
            Node::Log(_) => "log",
            Node::Sin(_) => "sin",
            Node::Cos(_) => "cos",
        }
    }

    fn children(&self) -> impl Iterator<Item = NodeId> {
        let pair = match *self {
            Node::Const(_) | Node::Var(_) => [None, None],
            Node::Neg(a)
            | Node::Pow(a, _)
            | Node::Sqrt(a)
            | Node::Exp(a)
            | Node::Log(a)
            | Node::Sin(a)
            | Node::Cos(a) => [Some(a), None],
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
                [Some(a), Some(b)]
            }
        };
        pair.into_iter().flatten()
    }
}

/// Interning key: constants are keyed by bit pattern.
#[derive(Clone, PartialEq, Eq, Hash)]
enum NodeKey {
    Const(u64),
    Var(Var),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Neg(NodeId),
    Pow(NodeId, i64, i64),
    Sqrt(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Sin(NodeId),
    Cos(NodeId),
}

fn key_of(node: &Node) -> NodeKey {
    match node {
        Node::Const(c) => NodeKey::Const(normalize_const(*c).to_bits()),
        Node::Var(v) => NodeKey::Var(v.clone()),
        Node::Add(a, b) => NodeKey::Add(*a, *b),
        Node::Sub(a, b) => NodeKey::Sub(*a, *b),
        Node::Mul(a, b) => NodeKey::Mul(*a, *b),
        Node::Div(a, b) => NodeKey::Div(*a, *b),
        Node::Neg(a) => NodeKey::Neg(*a),
        Node::Pow(a, r) => NodeKey::Pow(*a, r.num, r.den),
        Node::Sqrt(a) => NodeKey::Sqrt(*a),
        Node::Exp(a) => NodeKey::Exp(*a),
        Node::Log(a) => NodeKey::Log(*a),
        Node::Sin(a) => NodeKey::Sin(*a),
        Node::Cos(a) => NodeKey::Cos(*a),
    }
}

fn normalize_const(c: f64) -> f64 {
    if c == 0.0 {
        0.0
    } else {
        c
    }
}

/// Mutable arena with hash-consing; the work space for building DAGs.
#[derive(Default)]
pub struct DagBuilder {
    nodes: Vec<Node>,
    intern: HashMap<NodeKey, NodeId>,
    diff_memo: HashMap<(NodeId, Var), NodeId>,
}

impl DagBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id as usize]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn intern_node(&mut self, node: Node) -> NodeId {
        let key = key_of(&node);
        if let Some(&id) = self.intern.get(&key) {
            return id;
        }
        let id = self.nodes.len() as NodeId;
        self.nodes.push(node);
        self.intern.insert(key, id);
        id
    }

    pub fn constant(&mut self, c: f64) -> NodeId {
        self.intern_node(Node::Const(normalize_const(c)))
    }

    pub fn var(&mut self, v: Var) -> NodeId {
        self.intern_node(Node::Var(v))
    }

    fn const_value(&self, id: NodeId) -> Option<f64> {
        match self.nodes[id as usize] {
            Node::Const(c) => Some(c),
            _ => None,
        }
    }

    /// Raw constructors: hash-consed but not algebraically rewritten. The
    /// parser uses these so that `simplify` operates on what was written.
    pub fn raw_add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (a, b) = (a.min(b), a.max(b));
        self.intern_node(Node::Add(a, b))
    }

    pub fn raw_sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.intern_node(Node::Sub(a, b))
    }

    pub fn raw_mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (a, b) = (a.min(b), a.max(b));
        self.intern_node(Node::Mul(a, b))
    }

    pub fn raw_div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.intern_node(Node::Div(a, b))
    }

    pub fn raw_neg(&mut self, a: NodeId) -> NodeId {
        self.intern_node(Node::Neg(a))
    }

    pub fn raw_pow(&mut self, a: NodeId, r: Ratio) -> NodeId {
        self.intern_node(Node::Pow(a, r))
    }

    pub fn raw_func(&mut self, name: &str, a: NodeId) -> Option<NodeId> {
        let node = match name {
            "sqrt" => Node::Sqrt(a),
            "exp" => Node::Exp(a),
            "log" => Node::Log(a),
            "sin" => Node::Sin(a),
            "cos" => Node::Cos(a),
            _ => return None,
        };
        Some(self.intern_node(node))
    }

    /// Simplifying constructors: constant folding and identity elimination.
    /// These never grow the expression relative to their raw counterparts.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        match (self.const_value(a), self.const_value(b)) {
            (Some(x), Some(y)) => return self.fold(x + y, Node::Add(a, b)),
            (Some(0.0), _) => return b,
            (_, Some(0.0)) => return a,
            _ => {}
        }
        self.raw_add(a, b)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        if a == b {
            return self.constant(0.0);
        }
        match (self.const_value(a), self.const_value(b)) {
            (Some(x), Some(y)) => return self.fold(x - y, Node::Sub(a, b)),
            (Some(0.0), _) => return self.neg(b),
            (_, Some(0.0)) => return a,
            _ => {}
        }
        self.raw_sub(a, b)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        match (self.const_value(a), self.const_value(b)) {
            (Some(x), Some(y)) => return self.fold(x * y, Node::Mul(a, b)),
            (Some(0.0), _) | (_, Some(0.0)) => return self.constant(0.0),
            (Some(1.0), _) => return b,
            (_, Some(1.0)) => return a,
            (Some(-1.0), _) => return self.neg(b),
            (_, Some(-1.0)) => return self.neg(a),
            _ => {}
        }
        self.raw_mul(a, b)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        match (self.const_value(a), self.const_value(b)) {
            (Some(x), Some(y)) if y != 0.0 => return self.fold(x / y, Node::Div(a, b)),
            (Some(0.0), _) => return self.constant(0.0),
            (_, Some(1.0)) => return a,
            (_, Some(-1.0)) => return self.neg(a),
            _ => {}
        }
        self.raw_div(a, b)
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        if let Some(x) = self.const_value(a) {
            return self.constant(-x);
        }
        if let Node::Neg(inner) = self.nodes[a as usize] {
            return inner;
        }
        self.raw_neg(a)
    }

    pub fn pow(&mut self, a: NodeId, r: Ratio) -> NodeId {
        if r.num == 0 {
            return self.constant(1.0);
        }
        if r.num == r.den {
            return a;
        }
        if let Some(x) = self.const_value(a) {
            let y = if r.is_integer() {
                x.powi(r.num as i32)
            } else {
                x.powf(r.as_f64())
            };
            return self.fold(y, Node::Pow(a, r));
        }
        self.raw_pow(a, r)
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        if let Some(x) = self.const_value(a) {
            if x >= 0.0 {
                return self.constant(x.sqrt());
            }
        }
        self.intern_node(Node::Sqrt(a))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        if let Some(x) = self.const_value(a) {
            return self.fold(x.exp(), Node::Exp(a));
        }
        self.intern_node(Node::Exp(a))
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        if let Some(x) = self.const_value(a) {
            if x > 0.0 {
                return self.constant(x.ln());
            }
        }
        self.intern_node(Node::Log(a))
    }

    pub fn sin(&mut self, a: NodeId) -> NodeId {
        if let Some(x) = self.const_value(a) {
            return self.constant(x.sin());
        }
        self.intern_node(Node::Sin(a))
    }

    pub fn cos(&mut self, a: NodeId) -> NodeId {
        if let Some(x) = self.const_value(a) {
            return self.constant(x.cos());
        }
        self.intern_node(Node::Cos(a))
    }

    /// Folds to a constant only when the result is finite; otherwise keeps
    /// the symbolic node so the domain violation surfaces at evaluation.
    fn fold(&mut self, value: f64, fallback: Node) -> NodeId {
        if value.is_finite() {
            self.constant(value)
        } else {
            self.intern_node(fallback)
        }
    }

    /// Copies a node (and its closure) from another DAG into this builder,
    /// reusing `map` as the per-source memo table.
    pub fn import(&mut self, dag: &ExprDag, map: &mut Vec<Option<NodeId>>) -> NodeId {
        map.resize(dag.nodes.len(), None);
        for (i, node) in dag.nodes.iter().enumerate() {
            if map[i].is_some() {
                continue;
            }
            let remap = |id: NodeId, map: &[Option<NodeId>]| map[id as usize].unwrap();
            let new = match node {
                Node::Const(c) => self.constant(*c),
                Node::Var(v) => self.var(v.clone()),
                Node::Add(a, b) => self.raw_add(remap(*a, map), remap(*b, map)),
                Node::Sub(a, b) => self.raw_sub(remap(*a, map), remap(*b, map)),
                Node::Mul(a, b) => self.raw_mul(remap(*a, map), remap(*b, map)),
                Node::Div(a, b) => self.raw_div(remap(*a, map), remap(*b, map)),
                Node::Neg(a) => self.raw_neg(remap(*a, map)),
                Node::Pow(a, r) => self.raw_pow(remap(*a, map), *r),
                Node::Sqrt(a) => self.intern_node(Node::Sqrt(remap(*a, map))),
                Node::Exp(a) => self.intern_node(Node::Exp(remap(*a, map))),
                Node::Log(a) => self.intern_node(Node::Log(remap(*a, map))),
                Node::Sin(a) => self.intern_node(Node::Sin(remap(*a, map))),
                Node::Cos(a) => self.intern_node(Node::Cos(remap(*a, map))),
            };
            map[i] = Some(new);
        }
        map[dag.root as usize].unwrap()
    }

    /// Rebuilds `id`'s closure through the simplifying constructors.
    /// The result never has more reachable nodes than the input.
    pub fn resimplify(&mut self, id: NodeId) -> NodeId {
        let mut map: HashMap<NodeId, NodeId> = HashMap::new();
        for i in 0..=id {
            let node = self.nodes[i as usize].clone();
            let m = |id: NodeId, map: &HashMap<NodeId, NodeId>| map[&id];
            let new = match node {
                Node::Const(c) => self.constant(c),
                Node::Var(v) => self.var(v),
                Node::Add(a, b) => {
                    let (a, b) = (m(a, &map), m(b, &map));
                    self.add(a, b)
                }
                Node::Sub(a, b) => {
                    let (a, b) = (m(a, &map), m(b, &map));
                    self.sub(a, b)
                }
                Node::Mul(a, b) => {
                    let (a, b) = (m(a, &map), m(b, &map));
                    self.mul(a, b)
                }
                Node::Div(a, b) => {
                    let (a, b) = (m(a, &map), m(b, &map));
                    self.div(a, b)
                }
                Node::Neg(a) => {
                    let a = m(a, &map);
                    self.neg(a)
                }
                Node::Pow(a, r) => {
                    let a = m(a, &map);
                    self.pow(a, r)
                }
                Node::Sqrt(a) => {
                    let a = m(a, &map);
                    self.sqrt(a)
                }
                Node::Exp(a) => {
                    let a = m(a, &map);
                    self.exp(a)
                }
                Node::Log(a) => {
                    let a = m(a, &map);
                    self.log(a)
                }
                Node::Sin(a) => {
                    let a = m(a, &map);
                    self.sin(a)
                }
                Node::Cos(a) => {
                    let a = m(a, &map);
                    self.cos(a)
                }
            };
            map.insert(i, new);
        }
        map[&id]
    }

    /// Replaces variables by subexpressions. Entries absent from `subst`
    /// are kept as-is.
    pub fn substitute(&mut self, id: NodeId, subst: &HashMap<Var, NodeId>) -> NodeId {
        let mut map: HashMap<NodeId, NodeId> = HashMap::new();
        for i in 0..=id {
            let node = self.nodes[i as usize].clone();
            let m = |id: NodeId, map: &HashMap<NodeId, NodeId>| map[&id];
            let new = match node {
                Node::Var(ref v) if subst.contains_key(v) => subst[v],
                Node::Const(_) | Node::Var(_) => i,
                Node::Add(a, b) => {
                    let (a, b) = (m(a, &map), m(b, &map));
                    self.add(a, b)
                }
                Node::Sub(a, b) => {
                    let (a, b) = (m(a, &map), m(b, &map));
                    self.sub(a, b)
                }
                Node::Mul(a, b) => {
                    let (a, b) = (m(a, &map), m(b, &map));
                    self.mul(a, b)
                }
                Node::Div(a, b) => {
                    let (a, b) = (m(a, &map), m(b, &map));
                    self.div(a, b)
                }
                Node::Neg(a) => {
                    let a = m(a, &map);
                    self.neg(a)
                }
                Node::Pow(a, r) => {
                    let a = m(a, &map);
                    self.pow(a, r)
                }
                Node::Sqrt(a) => {
                    let a = m(a, &map);
                    self.sqrt(a)
                }
                Node::Exp(a) => {
                    let a = m(a, &map);
                    self.exp(a)
                }
                Node::Log(a) => {
                    let a = m(a, &map);
                    self.log(a)
                }
                Node::Sin(a) => {
                    let a = m(a, &map);
                    self.sin(a)
                }
                Node::Cos(a) => {
                    let a = m(a, &map);
                    self.cos(a)
                }
            };
            map.insert(i, new);
        }
        map[&id]
    }

    /// Extracts the reachable closure of `root` as an immutable DAG.
    pub fn finish(&self, root: NodeId) -> ExprDag {
        let (nodes, roots) = self.extract(&[root]);
        ExprDag::from_parts(nodes, roots[0])
    }

    /// Extracts the union of closures of several roots (shared nodes kept
    /// shared); used to compile multi-output tapes.
    pub fn extract(&self, roots: &[NodeId]) -> (Vec<Node>, Vec<NodeId>) {
        let mut keep = vec![false; self.nodes.len()];
        let mut stack: Vec<NodeId> = roots.to_vec();
        while let Some(id) = stack.pop() {
            if keep[id as usize] {
                continue;
            }
            keep[id as usize] = true;
            stack.extend(self.nodes[id as usize].children());
        }
        let mut map = vec![0 as NodeId; self.nodes.len()];
        let mut nodes = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if !keep[i] {
                continue;
            }
            let mut new = node.clone();
            match &mut new {
                Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
                    *a = map[*a as usize];
                    *b = map[*b as usize];
                }
                Node::Neg(a)
                | Node::Pow(a, _)
                | Node::Sqrt(a)
                | Node::Exp(a)
                | Node::Log(a)
                | Node::Sin(a)
                | Node::Cos(a) => *a = map[*a as usize],
                Node::Const(_) | Node::Var(_) => {}
            }
            map[i] = nodes.len() as NodeId;
            nodes.push(new);
        }
        let roots = roots.iter().map(|&r| map[r as usize]).collect();
        (nodes, roots)
    }
}

/// Immutable hash-consed expression DAG with a single root.
#[derive(Clone)]
pub struct ExprDag {
    nodes: Arc<[Node]>,
    root: NodeId,
    free_vars: BTreeSet<Var>,
    tape: Arc<OnceLock<Tape>>,
}

impl fmt::Debug for ExprDag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ExprDag({} nodes, root {})", self.nodes.len(), self.root)
    }
}

impl ExprDag {
    fn from_parts(nodes: Vec<Node>, root: NodeId) -> Self {
        let mut free_vars = BTreeSet::new();
        for node in &nodes {
            if let Node::Var(v) = node {
                free_vars.insert(v.clone());
            }
        }
        ExprDag {
            nodes: nodes.into(),
            root,
            free_vars,
            tape: Arc::new(OnceLock::new()),
        }
    }

    /// Builds a constant DAG.
    pub fn constant(c: f64) -> Self {
        ExprDag::from_parts(vec![Node::Const(c)], 0)
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn free_vars(&self) -> &BTreeSet<Var> {
        &self.free_vars
    }

    pub fn has_var(&self, var: &Var) -> bool {
        self.free_vars.contains(var)
    }

    /// Exact symbolic partial derivative; repeated application supports
    /// arbitrary mixed orders.
    pub fn differentiate(&self, var: &Var) -> ExprDag {
        let mut builder = DagBuilder::new();
        let mut map = Vec::new();
        let root = builder.import(self, &mut map);
        let droot = builder.diff(root, var);
        builder.finish(droot)
    }

    /// Constant folding, identity elimination and re-hash-consing. The node
    /// count never increases.
    pub fn simplify(&self) -> ExprDag {
        let mut builder = DagBuilder::new();
        let mut map = Vec::new();
        let root = builder.import(self, &mut map);
        let simplified = builder.resimplify(root);
        builder.finish(simplified)
    }

    /// Compiled tape, built on first use and cached.
    pub fn tape(&self) -> &Tape {
        self.tape
            .get_or_init(|| Tape::compile(self.nodes.clone(), vec![self.root]))
    }

    /// Evaluates at the given bindings through the cached tape.
    pub fn eval(&self, env: &Env) -> Result<f64, Error> {
        let mut buf = Vec::new();
        let mut out = [0.0];
        self.tape().eval_env(env, &mut buf, &mut out)?;
        Ok(out[0])
    }

    /// Reference evaluation by naive recursion over the stored DAG; used to
    /// check tapes bit-for-bit.
    pub fn eval_naive(&self, env: &Env) -> Result<f64, Error> {
        self.eval_node(self.root, env)
    }

    fn eval_node(&self, id: NodeId, env: &Env) -> Result<f64, Error> {
        let node = &self.nodes[id as usize];
        let domain_err = |op: &'static str, arg: f64| Error::Domain {
            op,
            node: id as usize,
            arg,
            bindings: env.bindings_public(),
        };
        Ok(match node {
            Node::Const(c) => *c,
            Node::Var(v) => env
                .lookup(v)
                .ok_or_else(|| Error::UnboundVariable(v.clone()))?,
            Node::Add(a, b) => self.eval_node(*a, env)? + self.eval_node(*b, env)?,
            Node::Sub(a, b) => self.eval_node(*a, env)? - self.eval_node(*b, env)?,
            Node::Mul(a, b) => self.eval_node(*a, env)? * self.eval_node(*b, env)?,
            Node::Div(a, b) => {
                let (x, y) = (self.eval_node(*a, env)?, self.eval_node(*b, env)?);
                if y == 0.0 {
                    return Err(domain_err("/", y));
                }
                x / y
            }
            Node::Neg(a) => -self.eval_node(*a, env)?,
            Node::Pow(a, r) => {
                let x = self.eval_node(*a, env)?;
                tape::eval_pow(x, *r).map_err(|arg| domain_err("^", arg))?
            }
            Node::Sqrt(a) => {
                let x = self.eval_node(*a, env)?;
                if x < 0.0 {
                    return Err(domain_err("sqrt", x));
                }
                x.sqrt()
            }
            Node::Exp(a) => self.eval_node(*a, env)?.exp(),
            Node::Log(a) => {
                let x = self.eval_node(*a, env)?;
                if x <= 0.0 {
                    return Err(domain_err("log", x));
                }
                x.ln()
            }
            Node::Sin(a) => self.eval_node(*a, env)?.sin(),
            Node::Cos(a) => self.eval_node(*a, env)?.cos(),
        })
    }
}

/// Variable bindings for evaluation.
#[derive(Clone, Debug, Default)]
pub struct Env {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub params: Vec<(Arc<str>, f64)>,
}

impl Env {
    pub fn xv(x: &[f64], v: &[f64]) -> Self {
        Env {
            x: x.to_vec(),
            v: v.to_vec(),
            params: Vec::new(),
        }
    }

    pub fn lookup(&self, var: &Var) -> Option<f64> {
        match var {
            Var::X(i) => self.x.get(*i).copied(),
            Var::V(i) => self.v.get(*i).copied(),
            Var::Param(name) => self
                .params
                .iter()
                .find(|(n, _)| n.as_ref() == name.as_ref())
                .map(|(_, value)| *value),
        }
    }

    pub(crate) fn bindings_public(&self) -> Vec<(Var, f64)> {
        let mut out = Vec::new();
        for (i, &value) in self.x.iter().enumerate() {
            out.push((Var::X(i), value));
        }
        for (i, &value) in self.v.iter().enumerate() {
            out.push((Var::V(i), value));
        }
        for (name, value) in &self.params {
            out.push((Var::Param(name.clone()), *value));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dag(src: &str) -> ExprDag {
        parse(src, &[]).unwrap()
    }

    #[test]
    fn simplify_eliminates_identities() {
        let d = dag("0*v1 + x1").simplify();
        assert_eq!(d.node_count(), 1);
        assert!(matches!(d.nodes()[0], Node::Var(Var::X(0))));
    }

    #[test]
    fn simplify_folds_constants() {
        let d = dag("2*3").simplify();
        assert_eq!(d.node_count(), 1);
        assert!(matches!(d.nodes()[0], Node::Const(c) if c == 6.0));
    }

    #[test]
    fn simplify_never_grows() {
        for src in ["v1^2 - v2^2", "exp(-x1)*((v1^2-v2^2))", "(v1+0)*1/(1)"] {
            let d = dag(src);
            assert!(d.simplify().node_count() <= d.node_count());
        }
    }

    #[test]
    fn derivative_of_quadratic() {
        let d = dag("-(v1^2)/2").differentiate(&Var::V(0));
        let env = Env::xv(&[], &[3.0]);
        assert_eq!(d.eval(&env).unwrap(), -3.0);
    }

    #[test]
    fn derivative_of_absent_variable_is_zero() {
        let d = dag("v2^2").differentiate(&Var::X(0)).simplify();
        assert_eq!(d.node_count(), 1);
        assert!(matches!(d.nodes()[0], Node::Const(c) if c == 0.0));
    }

    #[test]
    fn fourth_derivative() {
        let mut d = dag("v1^4");
        for _ in 0..4 {
            d = d.differentiate(&Var::V(0));
        }
        let env = Env::xv(&[], &[1.7]);
        assert_eq!(d.eval(&env).unwrap(), 24.0);
    }

    #[test]
    fn hash_consing_shares_subtrees() {
        // (v1+v2) appears twice and must be one node.
        let d = dag("(v1+v2)*(v1+v2)");
        let adds = d
            .nodes()
            .iter()
            .filter(|n| matches!(n, Node::Add(..)))
            .count();
        assert_eq!(adds, 1);
    }

    #[test]
    fn tape_matches_naive_bit_for_bit() {
        let d = dag("exp(-x1)*((v1^2-v2^2)) + sqrt(v1^2)/3 - log(2+x1^2)");
        let env = Env::xv(&[0.3], &[1.2, 0.4]);
        let a = d.eval(&env).unwrap();
        let b = d.eval_naive(&env).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn domain_error_names_node_and_bindings() {
        let d = dag("sqrt(v1^2 - v2^2)");
        let env = Env::xv(&[], &[1.0, 2.0]);
        match d.eval(&env) {
            Err(Error::Domain { op, arg, bindings, .. }) => {
                assert_eq!(op, "sqrt");
                assert!(arg < 0.0);
                assert!(!bindings.is_empty());
            }
            other => panic!("expected domain error, got {other:?}"),
        }
    }

    #[test]
    fn substitution_replaces_variables() {
        let d = dag("v1^2 + v2");
        let mut builder = DagBuilder::new();
        let mut map = Vec::new();
        let root = builder.import(&d, &mut map);
        let x1 = builder.var(Var::X(0));
        let c = builder.constant(2.0);
        let shifted = builder.sub(x1, c);
        let mut subst = HashMap::new();
        subst.insert(Var::V(0), shifted);
        let zero = builder.constant(0.0);
        subst.insert(Var::V(1), zero);
        let new_root = builder.substitute(root, &subst);
        let new = builder.finish(new_root);
        let env = Env::xv(&[5.0], &[]);
        assert_eq!(new.eval(&env).unwrap(), 9.0);
    }
}
