//! Recursive-descent parser for the expression grammar:
//!
//! ```text
//! expr   := term (('+'|'-') term)*
//! term   := factor (('*'|'/') factor)*
//! factor := ['-'] atom ['^' rational]
//! atom   := number | ident | '(' expr ')' | func '(' expr ')'
//! func   := sqrt | exp | log | sin | cos
//! ident  := x[1-9][0-9]* | v[1-9][0-9]* | declared parameter name
//! ```
//!
//! Rationals accept `2`, `-2`, `1/2` and parenthesized forms like `(-1/2)`.

use super::{DagBuilder, ExprDag, NodeId, Ratio, Var};
use crate::error::Error;
use std::sync::Arc;

/// Parses UTF-8 source into a DAG. `params` lists declared parameter names;
/// any other identifier is rejected with [`Error::UnknownVariable`].
pub fn parse(source: &str, params: &[&str]) -> Result<ExprDag, Error> {
    let mut parser = Parser {
        src: source.as_bytes(),
        pos: 0,
        params,
        builder: DagBuilder::new(),
    };
    let root = parser.expr()?;
    parser.skip_ws();
    if parser.pos != parser.src.len() {
        return Err(parser.syntax_error(&["'+'", "'-'", "'*'", "'/'", "'^'", "end of input"]));
    }
    Ok(parser.builder.finish(root))
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    params: &'a [&'a str],
    builder: DagBuilder,
}

impl<'a> Parser<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, byte: u8) -> bool {
        if self.peek() == Some(byte) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn syntax_error(&self, expected: &[&'static str]) -> Error {
        let found = match self.peek() {
            Some(b) => format!("'{}'", b as char),
            None => "end of input".to_string(),
        };
        Error::Syntax {
            offset: self.pos,
            found,
            expected: expected.to_vec(),
        }
    }

    fn expr(&mut self) -> Result<NodeId, Error> {
        let mut acc = self.term()?;
        loop {
            self.skip_ws();
            if self.eat(b'+') {
                let rhs = self.term()?;
                acc = self.builder.raw_add(acc, rhs);
            } else if self.eat(b'-') {
                let rhs = self.term()?;
                acc = self.builder.raw_sub(acc, rhs);
            } else {
                return Ok(acc);
            }
        }
    }

    fn term(&mut self) -> Result<NodeId, Error> {
        let mut acc = self.factor()?;
        loop {
            self.skip_ws();
            if self.eat(b'*') {
                let rhs = self.factor()?;
                acc = self.builder.raw_mul(acc, rhs);
            } else if self.eat(b'/') {
                let rhs = self.factor()?;
                acc = self.builder.raw_div(acc, rhs);
            } else {
                return Ok(acc);
            }
        }
    }

    fn factor(&mut self) -> Result<NodeId, Error> {
        self.skip_ws();
        let negated = self.eat(b'-');
        let mut atom = self.atom()?;
        self.skip_ws();
        if self.eat(b'^') {
            let exponent = self.rational()?;
            atom = self.builder.raw_pow(atom, exponent);
        }
        if negated {
            atom = self.builder.raw_neg(atom);
        }
        Ok(atom)
    }

    fn atom(&mut self) -> Result<NodeId, Error> {
        self.skip_ws();
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                self.skip_ws();
                if !self.eat(b')') {
                    return Err(self.syntax_error(&["')'"]));
                }
                Ok(inner)
            }
            Some(b) if b.is_ascii_digit() => {
                let value = self.number()?;
                Ok(self.builder.constant(value))
            }
            Some(b) if b.is_ascii_alphabetic() || b == b'_' => self.identifier(),
            _ => Err(self.syntax_error(&["number", "identifier", "'('", "'-'"])),
        }
    }

    fn number(&mut self) -> Result<f64, Error> {
        let start = self.pos;
        while self.peek().is_some_and(|b| b.is_ascii_digit()) {
            self.pos += 1;
        }
        if self.eat(b'.') {
            while self.peek().is_some_and(|b| b.is_ascii_digit()) {
                self.pos += 1;
            }
        }
        if self.peek() == Some(b'e') || self.peek() == Some(b'E') {
            let mark = self.pos;
            self.pos += 1;
            if self.peek() == Some(b'+') || self.peek() == Some(b'-') {
                self.pos += 1;
            }
            if self.peek().is_some_and(|b| b.is_ascii_digit()) {
                while self.peek().is_some_and(|b| b.is_ascii_digit()) {
                    self.pos += 1;
                }
            } else {
                // `e` belonged to something else (not a valid exponent).
                self.pos = mark;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii digits");
        text.parse::<f64>().map_err(|_| Error::Syntax {
            offset: start,
            found: format!("'{text}'"),
            expected: vec!["number"],
        })
    }

    fn identifier(&mut self) -> Result<NodeId, Error> {
        let start = self.pos;
        while self
            .peek()
            .is_some_and(|b| b.is_ascii_alphanumeric() || b == b'_')
        {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii identifier");

        // Function application.
        if matches!(name, "sqrt" | "exp" | "log" | "sin" | "cos") {
            self.skip_ws();
            if !self.eat(b'(') {
                return Err(self.syntax_error(&["'('"]));
            }
            let arg = self.expr()?;
            self.skip_ws();
            if !self.eat(b')') {
                return Err(self.syntax_error(&["')'"]));
            }
            return Ok(self.builder.raw_func(name, arg).expect("known function"));
        }

        if let Some(var) = coordinate_var(name) {
            return Ok(self.builder.var(var));
        }
        if self.params.contains(&name) {
            let var = Var::Param(Arc::from(name));
            return Ok(self.builder.var(var));
        }
        Err(Error::UnknownVariable {
            name: name.to_string(),
            offset: start,
        })
    }

    /// A bare exponent is an integer; `p/q` forms must be parenthesized so
    /// that `x^2/2` keeps its conventional reading `(x^2)/2`.
    fn rational(&mut self) -> Result<Ratio, Error> {
        self.skip_ws();
        if self.eat(b'(') {
            self.skip_ws();
            let negative = self.eat(b'-');
            let num = self.integer()? * if negative { -1 } else { 1 };
            self.skip_ws();
            let r = if self.eat(b'/') {
                let den = self.integer()?;
                if den == 0 {
                    return Err(Error::Syntax {
                        offset: self.pos,
                        found: "'0'".to_string(),
                        expected: vec!["nonzero denominator"],
                    });
                }
                Ratio::new(num, den)
            } else {
                Ratio::integer(num)
            };
            self.skip_ws();
            if !self.eat(b')') {
                return Err(self.syntax_error(&["')'"]));
            }
            Ok(r)
        } else {
            let negative = self.eat(b'-');
            let num = self.integer()? * if negative { -1 } else { 1 };
            Ok(Ratio::integer(num))
        }
    }

    fn integer(&mut self) -> Result<i64, Error> {
        self.skip_ws();
        let start = self.pos;
        while self.peek().is_some_and(|b| b.is_ascii_digit()) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.syntax_error(&["integer"]));
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii digits");
        text.parse::<i64>().map_err(|_| Error::Syntax {
            offset: start,
            found: format!("'{text}'"),
            expected: vec!["integer"],
        })
    }
}

fn coordinate_var(name: &str) -> Option<Var> {
    let mut chars = name.chars();
    let head = chars.next()?;
    let rest = chars.as_str();
    if rest.is_empty() || !rest.bytes().all(|b| b.is_ascii_digit()) || rest.starts_with('0') {
        return None;
    }
    let index: usize = rest.parse().ok()?;
    match head {
        'x' => Some(Var::X(index - 1)),
        'v' => Some(Var::V(index - 1)),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Env;

    #[test]
    fn parses_with_precedence() {
        let dag = parse("-(v1^2)/2 + (v2^2)/2", &[]).unwrap();
        assert_eq!(dag.free_vars().len(), 2);
        let env = Env::xv(&[], &[1.0, 0.0]);
        assert_eq!(dag.eval(&env).unwrap(), -0.5);
    }

    #[test]
    fn reports_offset_on_truncated_input() {
        match parse("v1 +", &[]) {
            Err(Error::Syntax { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn free_variables_with_roles() {
        let dag = parse("exp(-x1)*((v1^2-v2^2))", &[]).unwrap();
        let vars: Vec<_> = dag.free_vars().iter().cloned().collect();
        assert_eq!(vars, vec![Var::X(0), Var::V(0), Var::V(1)]);
        let env = Env::xv(&[0.0], &[2.0, 1.0]);
        assert_eq!(dag.eval(&env).unwrap(), 3.0);
    }

    #[test]
    fn unknown_identifier_is_rejected() {
        match parse("x1 + alpha", &[]) {
            Err(Error::UnknownVariable { name, offset }) => {
                assert_eq!(name, "alpha");
                assert_eq!(offset, 5);
            }
            other => panic!("expected unknown variable, got {other:?}"),
        }
        // x0 does not match x[1-9][0-9]*
        assert!(matches!(
            parse("x0", &[]),
            Err(Error::UnknownVariable { .. })
        ));
    }

    #[test]
    fn declared_parameters_are_accepted() {
        let dag = parse("a*v1", &["a"]).unwrap();
        let mut env = Env::xv(&[], &[2.0]);
        env.params.push(("a".into(), 3.0));
        assert_eq!(dag.eval(&env).unwrap(), 6.0);
    }

    #[test]
    fn rational_exponents() {
        let dag = parse("v1^(3/2)", &[]).unwrap();
        let env = Env::xv(&[], &[4.0]);
        assert_eq!(dag.eval(&env).unwrap(), 8.0);

        let dag = parse("v1^-2", &[]).unwrap();
        assert_eq!(dag.eval(&Env::xv(&[], &[2.0])).unwrap(), 0.25);

        let dag = parse("v1^(-1/2)", &[]).unwrap();
        assert_eq!(dag.eval(&Env::xv(&[], &[4.0])).unwrap(), 0.5);
    }

    #[test]
    fn unary_minus_binds_after_power() {
        // -x^2 reads as -(x^2)
        let dag = parse("-v1^2", &[]).unwrap();
        assert_eq!(dag.eval(&Env::xv(&[], &[3.0])).unwrap(), -9.0);
    }

    #[test]
    fn scientific_notation() {
        let dag = parse("1e-3 + 2.5E2", &[]).unwrap();
        assert_eq!(dag.eval(&Env::xv(&[], &[])).unwrap(), 250.001);
    }
}
