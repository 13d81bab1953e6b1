//! Arithmetic expressions over `t`, `x1..xd` and `z1..zd`.
//!
//! Grammar: `expr := term (('+'|'-') term)*`, `term := unary (('*'|'/') unary)*`,
//! `unary := '-' unary | power`, `power := atom ('^' unary)?`,
//! `atom := number | ident | func '(' args ')' | '(' expr ')'`.

use std::fmt;

#[derive(Clone, Debug, PartialEq)]
enum Node {
    Num(f64),
    T,
    X(usize),
    Z(usize),
    Neg(Box<Node>),
    Bin(char, Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Func {
    Abs,
    Log,
    Exp,
    Min,
    Max,
}

impl Func {
    fn arity(self) -> usize {
        match self {
            Func::Abs | Func::Log | Func::Exp => 1,
            Func::Min | Func::Max => 2,
        }
    }
}

/// Parse failure with the byte offset where it happened.
#[derive(Clone, Debug, PartialEq)]
pub struct ParseError {
    pub position: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "at offset {}: {}", self.position, self.message)
    }
}

impl std::error::Error for ParseError {}

/// A parsed expression, evaluated as a closure over `(t, x, z)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Expr {
    root: Node,
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    dim: usize,
}

impl<'a> Parser<'a> {
    fn err<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError { position: self.pos, message: message.into() })
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.term()?;
        while let Some(c @ (b'+' | b'-')) = self.peek() {
            self.pos += 1;
            lhs = Node::Bin(c as char, Box::new(lhs), Box::new(self.term()?));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.unary()?;
        while let Some(c @ (b'*' | b'/')) = self.peek() {
            self.pos += 1;
            lhs = Node::Bin(c as char, Box::new(lhs), Box::new(self.unary()?));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node, ParseError> {
        if self.eat(b'-') {
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ParseError> {
        let base = self.atom()?;
        if self.eat(b'^') {
            return Ok(Node::Bin('^', Box::new(base), Box::new(self.unary()?)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ParseError> {
        match self.peek() {
            None => self.err("unexpected end of expression"),
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                if !self.eat(b')') {
                    return self.err("expected ')'");
                }
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.ident(),
            Some(c) => self.err(format!("unexpected character '{}'", c as char)),
        }
    }

    fn number(&mut self) -> Result<Node, ParseError> {
        let start = self.pos;
        while self.pos < self.src.len() && (self.src[self.pos].is_ascii_digit() || self.src[self.pos] == b'.') {
            self.pos += 1;
        }
        if self.pos < self.src.len() && matches!(self.src[self.pos], b'e' | b'E') {
            let mark = self.pos;
            self.pos += 1;
            if self.pos < self.src.len() && matches!(self.src[self.pos], b'+' | b'-') {
                self.pos += 1;
            }
            let digits = self.pos;
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            if self.pos == digits {
                self.pos = mark;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        match text.parse::<f64>() {
            Ok(v) => Ok(Node::Num(v)),
            Err(_) => {
                self.pos = start;
                self.err(format!("invalid number '{text}'"))
            }
        }
    }

    fn ident(&mut self) -> Result<Node, ParseError> {
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_alphanumeric() {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        let func = match name {
            "abs" => Some(Func::Abs),
            "log" => Some(Func::Log),
            "exp" => Some(Func::Exp),
            "min" => Some(Func::Min),
            "max" => Some(Func::Max),
            _ => None,
        };
        if let Some(f) = func {
            if !self.eat(b'(') {
                return self.err(format!("expected '(' after {name}"));
            }
            let mut args = vec![self.expr()?];
            while self.eat(b',') {
                args.push(self.expr()?);
            }
            if !self.eat(b')') {
                return self.err("expected ')'");
            }
            if args.len() != f.arity() {
                return self.err(format!("{name} takes {} argument(s), got {}", f.arity(), args.len()));
            }
            return Ok(Node::Call(f, args));
        }
        if name == "t" {
            return Ok(Node::T);
        }
        let (kind, index) = name.split_at(1);
        match (kind, index.parse::<usize>()) {
            ("x" | "z", Ok(i)) if i >= 1 && i <= self.dim => {
                Ok(if kind == "x" { Node::X(i - 1) } else { Node::Z(i - 1) })
            }
            ("x" | "z", Ok(i)) => {
                self.pos = start;
                self.err(format!("{name}: index {i} outside 1..={}", self.dim))
            }
            _ => {
                self.pos = start;
                self.err(format!("unknown identifier '{name}'"))
            }
        }
    }
}

impl Expr {
    /// Parses `source` for state dimension `dim`.
    pub fn parse(source: &str, dim: usize) -> Result<Self, ParseError> {
        let mut p = Parser { src: source.as_bytes(), pos: 0, dim };
        let root = p.expr()?;
        if p.peek().is_some() {
            return p.err("unexpected trailing input");
        }
        Ok(Self { root })
    }

    /// The expression mentions some `z_i`.
    pub fn uses_jump(&self) -> bool {
        fn walk(n: &Node) -> bool {
            match n {
                Node::Z(_) => true,
                Node::Neg(a) => walk(a),
                Node::Bin(_, a, b) => walk(a) || walk(b),
                Node::Call(_, args) => args.iter().any(walk),
                _ => false,
            }
        }
        walk(&self.root)
    }

    pub fn eval(&self, t: f64, x: &[f64], z: &[f64]) -> f64 {
        fn go(n: &Node, t: f64, x: &[f64], z: &[f64]) -> f64 {
            match n {
                Node::Num(v) => *v,
                Node::T => t,
                Node::X(i) => x[*i],
                Node::Z(i) => z.get(*i).copied().unwrap_or(0.0),
                Node::Neg(a) => -go(a, t, x, z),
                Node::Bin(op, a, b) => {
                    let (a, b) = (go(a, t, x, z), go(b, t, x, z));
                    match op {
                        '+' => a + b,
                        '-' => a - b,
                        '*' => a * b,
                        '/' => a / b,
                        _ => a.powf(b),
                    }
                }
                Node::Call(f, args) => {
                    let a = go(&args[0], t, x, z);
                    match f {
                        Func::Abs => a.abs(),
                        Func::Log => a.ln(),
                        Func::Exp => a.exp(),
                        Func::Min => a.min(go(&args[1], t, x, z)),
                        Func::Max => a.max(go(&args[1], t, x, z)),
                    }
                }
            }
        }
        go(&self.root, t, x, z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval(s: &str, x: &[f64]) -> f64 {
        Expr::parse(s, x.len()).unwrap().eval(0.5, x, &[])
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(eval("1 + 2 * 3", &[0.0]), 7.0);
        assert_eq!(eval("(1 + 2) * 3", &[0.0]), 9.0);
        assert_eq!(eval("8 / 4 / 2", &[0.0]), 1.0);
        assert_eq!(eval("2 ^ 3 ^ 2", &[0.0]), 512.0);
        assert_eq!(eval("-2 ^ 2", &[0.0]), -4.0);
        assert_eq!(eval("10 - 2 - 3", &[0.0]), 5.0);
    }

    #[test]
    fn variables_and_functions() {
        assert_eq!(eval("x1 * x2 + t", &[2.0, 3.0]), 6.5);
        assert!((eval("exp(log(abs(x1)))", &[-3.0]) - 3.0).abs() < 1e-12);
        assert_eq!(eval("min(x1, 1) + max(x1, 1)", &[4.0]), 5.0);
        assert_eq!(eval("1.5e-1 * 2E1", &[0.0]), 3.0);
        let e = Expr::parse("z1 * x1", 1).unwrap();
        assert!(e.uses_jump());
        assert_eq!(e.eval(0.0, &[2.0], &[3.0]), 6.0);
    }

    #[test]
    fn errors_carry_positions() {
        let e = Expr::parse("1 + x3", 2).unwrap_err();
        assert_eq!(e.position, 4);
        assert!(Expr::parse("foo(1)", 1).is_err());
        assert!(Expr::parse("min(1)", 1).is_err());
        assert!(Expr::parse("(1 + 2", 1).is_err());
        assert!(Expr::parse("1 2", 1).is_err());
        assert!(Expr::parse("", 1).is_err());
    }
}
