//! Symbolic differentiation over the node arena.

use super::{DagBuilder, Node, NodeId, Ratio, Var};

impl DagBuilder {
    /// Exact partial derivative of `id` with respect to `var`, memoized per
    /// (node, variable) pair so shared subtrees are differentiated once.
    pub fn diff(&mut self, id: NodeId, var: &Var) -> NodeId {
        if let Some(&d) = self.diff_memo.get(&(id, var.clone())) {
            return d;
        }
        let node = self.node(id).clone();
        let d = match node {
            Node::Const(_) => self.constant(0.0),
            Node::Var(v) => {
                if v == *var {
                    self.constant(1.0)
                } else {
                    self.constant(0.0)
                }
            }
            Node::Add(a, b) => {
                let (da, db) = (self.diff(a, var), self.diff(b, var));
                self.add(da, db)
            }
            Node::Sub(a, b) => {
                let (da, db) = (self.diff(a, var), self.diff(b, var));
                self.sub(da, db)
            }
            Node::Mul(a, b) => {
                let (da, db) = (self.diff(a, var), self.diff(b, var));
                let left = self.mul(da, b);
                let right = self.mul(a, db);
                self.add(left, right)
            }
            Node::Div(a, b) => {
                // (a'b - ab') / b^2
                let (da, db) = (self.diff(a, var), self.diff(b, var));
                let num_l = self.mul(da, b);
                let num_r = self.mul(a, db);
                let num = self.sub(num_l, num_r);
                let b2 = self.pow(b, Ratio::integer(2));
                self.div(num, b2)
            }
            Node::Neg(a) => {
                let da = self.diff(a, var);
                self.neg(da)
            }
            Node::Pow(a, r) => {
                // r * a^(r-1) * a'
                let da = self.diff(a, var);
                let coeff = self.constant(r.as_f64());
                let lower = self.pow(a, r.minus_one());
                let scaled = self.mul(coeff, lower);
                self.mul(scaled, da)
            }
            Node::Sqrt(a) => {
                // a' / (2 sqrt(a))
                let da = self.diff(a, var);
                let root = self.sqrt(a);
                let two = self.constant(2.0);
                let denom = self.mul(two, root);
                self.div(da, denom)
            }
            Node::Exp(a) => {
                let da = self.diff(a, var);
                let e = self.exp(a);
                self.mul(da, e)
            }
            Node::Log(a) => {
                let da = self.diff(a, var);
                self.div(da, a)
            }
            Node::Sin(a) => {
                let da = self.diff(a, var);
                let c = self.cos(a);
                self.mul(da, c)
            }
            Node::Cos(a) => {
                let da = self.diff(a, var);
                let s = self.sin(a);
                let ms = self.neg(s);
                self.mul(da, ms)
            }
        };
        self.diff_memo.insert((id, var.clone()), d);
        d
    }
}
