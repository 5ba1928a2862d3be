//! Arithmetic expression language for scenario files.
//!
//! Supports numbers, named variables, `+ - * / ^`, comparisons, `&& || !`,
//! elementary functions, `norm(...)`, `min/max` and `if(cond, a, b)`.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("unexpected character '{ch}' at offset {pos}")]
    BadChar { ch: char, pos: usize },
    #[error("unexpected token at offset {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown variable '{0}'")]
    UnknownVariable(String),
    #[error("unknown function '{0}'")]
    UnknownFunction(String),
    #[error("function '{name}' expects {expected} arguments, got {got}")]
    Arity { name: String, expected: String, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Func {
    Exp,
    Log,
    Sqrt,
    Abs,
    Sin,
    Cos,
    Tan,
    Asin,
    Acos,
    Atan,
    Atan2,
    Sinh,
    Cosh,
    Tanh,
    Min,
    Max,
    Pow,
    Norm,
    If,
    Sign,
    Step,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
    And,
    Or,
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Var(usize),
    Neg(Box<Node>),
    Not(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

/// A compiled expression bound to an ordered list of variable names.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    root: Node,
    nvars: usize,
    source: String,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(&'static str),
    LParen,
    RParen,
    Comma,
}

fn tokenize(src: &str) -> Result<Vec<(Tok, usize)>, ExprError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_digit() || (c == '.' && i + 1 < chars.len() && chars[i + 1].is_ascii_digit()) {
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let save = i;
                i += 1;
                if i < chars.len() && (chars[i] == '+' || chars[i] == '-') {
                    i += 1;
                }
                if i < chars.len() && chars[i].is_ascii_digit() {
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                } else {
                    i = save;
                }
            }
            let s: String = chars[start..i].iter().collect();
            let v = s.parse::<f64>().map_err(|_| ExprError::Syntax {
                pos: start,
                msg: format!("bad number '{s}'"),
            })?;
            out.push((Tok::Num(v), start));
            continue;
        }
        if c.is_alphabetic() || c == '_' {
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push((Tok::Ident(chars[start..i].iter().collect()), start));
            continue;
        }
        let two: String = chars[i..(i + 2).min(chars.len())].iter().collect();
        let op2 = match two.as_str() {
            "<=" => Some("<="),
            ">=" => Some(">="),
            "==" => Some("=="),
            "!=" => Some("!="),
            "&&" => Some("&&"),
            "||" => Some("||"),
            "**" => Some("^"),
            _ => None,
        };
        if let Some(op) = op2 {
            out.push((Tok::Op(op), start));
            i += 2;
            continue;
        }
        let tok = match c {
            '+' => Tok::Op("+"),
            '-' => Tok::Op("-"),
            '*' => Tok::Op("*"),
            '/' => Tok::Op("/"),
            '^' => Tok::Op("^"),
            '<' => Tok::Op("<"),
            '>' => Tok::Op(">"),
            '!' => Tok::Op("!"),
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            ',' => Tok::Comma,
            _ => return Err(ExprError::BadChar { ch: c, pos: i }),
        };
        out.push((tok, start));
        i += 1;
    }
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    vars: &'a [&'a str],
    len: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.0)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map(|t| t.1).unwrap_or(self.len)
    }

    fn eat_op(&mut self, ops: &[&'static str]) -> Option<&'static str> {
        if let Some(Tok::Op(o)) = self.peek() {
            if let Some(found) = ops.iter().find(|x| **x == *o) {
                self.pos += 1;
                return Some(found);
            }
        }
        None
    }

    fn err<T>(&self, msg: &str) -> Result<T, ExprError> {
        Err(ExprError::Syntax { pos: self.offset(), msg: msg.to_string() })
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.and()?;
        while self.eat_op(&["||"]).is_some() {
            let rhs = self.and()?;
            lhs = Node::Bin(BinOp::Or, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.cmp()?;
        while self.eat_op(&["&&"]).is_some() {
            let rhs = self.cmp()?;
            lhs = Node::Bin(BinOp::And, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn cmp(&mut self) -> Result<Node, ExprError> {
        let lhs = self.add()?;
        if let Some(op) = self.eat_op(&["<", "<=", ">", ">=", "==", "!="]) {
            let rhs = self.add()?;
            let b = match op {
                "<" => BinOp::Lt,
                "<=" => BinOp::Le,
                ">" => BinOp::Gt,
                ">=" => BinOp::Ge,
                "==" => BinOp::Eq,
                _ => BinOp::Ne,
            };
            return Ok(Node::Bin(b, Box::new(lhs), Box::new(rhs)));
        }
        Ok(lhs)
    }

    fn add(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.mul()?;
        while let Some(op) = self.eat_op(&["+", "-"]) {
            let rhs = self.mul()?;
            let b = if op == "+" { BinOp::Add } else { BinOp::Sub };
            lhs = Node::Bin(b, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn mul(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.unary()?;
        while let Some(op) = self.eat_op(&["*", "/"]) {
            let rhs = self.unary()?;
            let b = if op == "*" { BinOp::Mul } else { BinOp::Div };
            lhs = Node::Bin(b, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        if let Some(op) = self.eat_op(&["-", "+", "!"]) {
            let inner = self.unary()?;
            return Ok(match op {
                "-" => Node::Neg(Box::new(inner)),
                "!" => Node::Not(Box::new(inner)),
                _ => inner,
            });
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ExprError> {
        let base = self.atom()?;
        if self.eat_op(&["^"]).is_some() {
            let exp = self.unary()?;
            return Ok(Node::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ExprError> {
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Node::Num(v))
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                let e = self.expr()?;
                if self.peek() != Some(&Tok::RParen) {
                    return self.err("expected ')'");
                }
                self.pos += 1;
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                if self.peek() == Some(&Tok::LParen) {
                    self.pos += 1;
                    let mut args = Vec::new();
                    if self.peek() != Some(&Tok::RParen) {
                        loop {
                            args.push(self.expr()?);
                            if self.peek() == Some(&Tok::Comma) {
                                self.pos += 1;
                                continue;
                            }
                            break;
                        }
                    }
                    if self.peek() != Some(&Tok::RParen) {
                        return self.err("expected ')' after arguments");
                    }
                    self.pos += 1;
                    return call(&name, args);
                }
                if let Some(i) = self.vars.iter().position(|v| *v == name) {
                    return Ok(Node::Var(i));
                }
                match name.as_str() {
                    "pi" => Ok(Node::Num(std::f64::consts::PI)),
                    "e" => Ok(Node::Num(std::f64::consts::E)),
                    _ => Err(ExprError::UnknownVariable(name)),
                }
            }
            _ => self.err("expected a number, variable, function call or '('"),
        }
    }
}

fn call(name: &str, args: Vec<Node>) -> Result<Node, ExprError> {
    let (f, arity): (Func, Option<usize>) = match name {
        "exp" => (Func::Exp, Some(1)),
        "log" | "ln" => (Func::Log, Some(1)),
        "sqrt" => (Func::Sqrt, Some(1)),
        "abs" => (Func::Abs, Some(1)),
        "sin" => (Func::Sin, Some(1)),
        "cos" => (Func::Cos, Some(1)),
        "tan" => (Func::Tan, Some(1)),
        "asin" => (Func::Asin, Some(1)),
        "acos" => (Func::Acos, Some(1)),
        "atan" => (Func::Atan, Some(1)),
        "atan2" => (Func::Atan2, Some(2)),
        "sinh" => (Func::Sinh, Some(1)),
        "cosh" => (Func::Cosh, Some(1)),
        "tanh" => (Func::Tanh, Some(1)),
        "pow" => (Func::Pow, Some(2)),
        "if" => (Func::If, Some(3)),
        "sign" => (Func::Sign, Some(1)),
        "step" => (Func::Step, Some(1)),
        "min" => (Func::Min, None),
        "max" => (Func::Max, None),
        "norm" => (Func::Norm, None),
        _ => return Err(ExprError::UnknownFunction(name.to_string())),
    };
    match arity {
        Some(k) if args.len() != k => Err(ExprError::Arity {
            name: name.to_string(),
            expected: k.to_string(),
            got: args.len(),
        }),
        None if args.is_empty() => Err(ExprError::Arity {
            name: name.to_string(),
            expected: "at least 1".into(),
            got: 0,
        }),
        _ => Ok(Node::Call(f, args)),
    }
}

fn truth(v: f64) -> bool {
    v != 0.0 && !v.is_nan()
}

fn b2f(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

fn eval(n: &Node, x: &[f64]) -> f64 {
    match n {
        Node::Num(v) => *v,
        Node::Var(i) => x[*i],
        Node::Neg(a) => -eval(a, x),
        Node::Not(a) => b2f(!truth(eval(a, x))),
        Node::Bin(op, a, b) => {
            let l = eval(a, x);
            match op {
                BinOp::And => return b2f(truth(l) && truth(eval(b, x))),
                BinOp::Or => return b2f(truth(l) || truth(eval(b, x))),
                _ => {}
            }
            let r = eval(b, x);
            match op {
                BinOp::Add => l + r,
                BinOp::Sub => l - r,
                BinOp::Mul => l * r,
                BinOp::Div => l / r,
                BinOp::Pow => {
                    if r == 2.0 {
                        l * l
                    } else if r.fract() == 0.0 && r.abs() < 64.0 {
                        l.powi(r as i32)
                    } else {
                        l.powf(r)
                    }
                }
                BinOp::Lt => b2f(l < r),
                BinOp::Le => b2f(l <= r),
                BinOp::Gt => b2f(l > r),
                BinOp::Ge => b2f(l >= r),
                BinOp::Eq => b2f(l == r),
                BinOp::Ne => b2f(l != r),
                BinOp::And | BinOp::Or => unreachable!(),
            }
        }
        Node::Call(f, args) => {
            let a = |k: usize| eval(&args[k], x);
            match f {
                Func::Exp => a(0).exp(),
                Func::Log => a(0).ln(),
                Func::Sqrt => a(0).sqrt(),
                Func::Abs => a(0).abs(),
                Func::Sin => a(0).sin(),
                Func::Cos => a(0).cos(),
                Func::Tan => a(0).tan(),
                Func::Asin => a(0).asin(),
                Func::Acos => a(0).acos(),
                Func::Atan => a(0).atan(),
                Func::Atan2 => a(0).atan2(a(1)),
                Func::Sinh => a(0).sinh(),
                Func::Cosh => a(0).cosh(),
                Func::Tanh => a(0).tanh(),
                Func::Pow => a(0).powf(a(1)),
                Func::Sign => {
                    let v = a(0);
                    if v > 0.0 {
                        1.0
                    } else if v < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                }
                Func::Step => b2f(a(0) >= 0.0),
                Func::If => {
                    if truth(a(0)) {
                        a(1)
                    } else {
                        a(2)
                    }
                }
                Func::Min => args.iter().map(|n| eval(n, x)).fold(f64::INFINITY, f64::min),
                Func::Max => args.iter().map(|n| eval(n, x)).fold(f64::NEG_INFINITY, f64::max),
                Func::Norm => args.iter().map(|n| eval(n, x).powi(2)).sum::<f64>().sqrt(),
            }
        }
    }
}

impl Expr {
    pub fn parse(src: &str, vars: &[&str]) -> Result<Expr, ExprError> {
        let toks = tokenize(src)?;
        let mut p = Parser { toks, pos: 0, vars, len: src.len() };
        let root = p.expr()?;
        if p.pos != p.toks.len() {
            return p.err("trailing input");
        }
        Ok(Expr { root, nvars: vars.len(), source: src.to_string() })
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert!(x.len() >= self.nvars);
        eval(&self.root, x)
    }

    pub fn source(&self) -> &str {
        &self.source
    }
}
