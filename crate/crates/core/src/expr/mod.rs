//! Scalar expression trees: parsing, evaluation, and forward-mode
//! differentiation.
//!
//! Expressions are immutable after construction; evaluation and
//! differentiation are pure and safe to call from multiple threads.
//! Smoothness of user-supplied expressions (the maps are assumed C1 on the
//! analysis region) cannot be checked mechanically and is a user obligation.

mod parse;

pub use parse::{parse, parse_with_names, ParseError, ParseErrorKind};

use crate::error::EvalError;

/// Unary primitive functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnOp {
    Neg,
    Sin,
    Cos,
    Exp,
    Tanh,
    Sqrt,
}

/// Binary arithmetic operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

/// A scalar arithmetic expression over a fixed, ordered variable list.
///
/// Variables are stored by index into the name list the expression was
/// parsed against. Exponents are restricted to non-negative integer
/// literals so that derivatives stay polynomial-exact.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Un(UnOp, Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, u32),
}

impl Expr {
    /// Evaluate with `vals[i]` bound to variable `i`.
    pub fn eval(&self, vals: &[f64]) -> Result<f64, EvalError> {
        match self {
            Expr::Const(c) => Ok(*c),
            Expr::Var(i) => Ok(vals[*i]),
            Expr::Un(op, e) => {
                let v = e.eval(vals)?;
                Ok(match op {
                    UnOp::Neg => -v,
                    UnOp::Sin => v.sin(),
                    UnOp::Cos => v.cos(),
                    UnOp::Exp => v.exp(),
                    UnOp::Tanh => v.tanh(),
                    UnOp::Sqrt => {
                        if v < 0.0 {
                            return Err(EvalError::SqrtNegative(v));
                        }
                        v.sqrt()
                    }
                })
            }
            Expr::Bin(op, a, b) => {
                let a = a.eval(vals)?;
                let b = b.eval(vals)?;
                Ok(match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => {
                        if b == 0.0 {
                            return Err(EvalError::DivisionByZero);
                        }
                        a / b
                    }
                })
            }
            Expr::Pow(e, k) => Ok(e.eval(vals)?.powi(*k as i32)),
        }
    }

    /// Forward-mode symbolic derivative with respect to variable `var`.
    ///
    /// Exact for all supported primitives; light constant folding keeps the
    /// resulting trees compact.
    pub fn diff(&self, var: usize) -> Expr {
        match self {
            Expr::Const(_) => Expr::Const(0.0),
            Expr::Var(i) => Expr::Const(if *i == var { 1.0 } else { 0.0 }),
            Expr::Un(op, e) => {
                let de = e.diff(var);
                match op {
                    UnOp::Neg => neg(de),
                    UnOp::Sin => mul(Expr::Un(UnOp::Cos, e.clone()), de),
                    UnOp::Cos => neg(mul(Expr::Un(UnOp::Sin, e.clone()), de)),
                    UnOp::Exp => mul(Expr::Un(UnOp::Exp, e.clone()), de),
                    // d tanh = 1 - tanh^2
                    UnOp::Tanh => mul(
                        sub(
                            Expr::Const(1.0),
                            Expr::Pow(Box::new(Expr::Un(UnOp::Tanh, e.clone())), 2),
                        ),
                        de,
                    ),
                    // d sqrt = de / (2 sqrt)
                    UnOp::Sqrt => div(
                        de,
                        mul(Expr::Const(2.0), Expr::Un(UnOp::Sqrt, e.clone())),
                    ),
                }
            }
            Expr::Bin(op, a, b) => {
                let da = a.diff(var);
                let db = b.diff(var);
                match op {
                    BinOp::Add => add(da, db),
                    BinOp::Sub => sub(da, db),
                    BinOp::Mul => add(mul(da, (**b).clone()), mul((**a).clone(), db)),
                    // (a/b)' = (a'b - ab') / b^2
                    BinOp::Div => div(
                        sub(mul(da, (**b).clone()), mul((**a).clone(), db)),
                        Expr::Pow(Box::new((**b).clone()), 2),
                    ),
                }
            }
            Expr::Pow(e, k) => {
                if *k == 0 {
                    return Expr::Const(0.0);
                }
                let de = e.diff(var);
                let inner = if *k == 1 {
                    Expr::Const(1.0)
                } else if *k == 2 {
                    (**e).clone()
                } else {
                    Expr::Pow(e.clone(), *k - 1)
                };
                mul(mul(Expr::Const(*k as f64), inner), de)
            }
        }
    }

    /// Replace every variable `i` by `subs[i]`.
    pub fn substitute(&self, subs: &[Expr]) -> Expr {
        match self {
            Expr::Const(c) => Expr::Const(*c),
            Expr::Var(i) => subs[*i].clone(),
            Expr::Un(op, e) => Expr::Un(*op, Box::new(e.substitute(subs))),
            Expr::Bin(op, a, b) => {
                Expr::Bin(*op, Box::new(a.substitute(subs)), Box::new(b.substitute(subs)))
            }
            Expr::Pow(e, k) => Expr::Pow(Box::new(e.substitute(subs)), *k),
        }
    }

    /// Indices of the variables the expression actually reads.
    pub fn free_vars(&self, out: &mut Vec<usize>) {
        match self {
            Expr::Const(_) => {}
            Expr::Var(i) => {
                if !out.contains(i) {
                    out.push(*i);
                }
            }
            Expr::Un(_, e) | Expr::Pow(e, _) => e.free_vars(out),
            Expr::Bin(_, a, b) => {
                a.free_vars(out);
                b.free_vars(out);
            }
        }
    }

    /// Render to a string that reparses (against the same names) to a
    /// structurally identical tree.
    pub fn print(&self, names: &[String]) -> String {
        match self {
            // A leading minus directly before a literal is re-folded into a
            // constant by the parser, so this round-trips structurally.
            Expr::Const(c) => {
                if c.is_sign_negative() {
                    format!("-{}", fmt_const(-*c))
                } else {
                    fmt_const(*c)
                }
            }
            Expr::Var(i) => names[*i].clone(),
            Expr::Un(UnOp::Neg, e) => format!("-({})", e.print(names)),
            Expr::Un(op, e) => {
                let f = match op {
                    UnOp::Sin => "sin",
                    UnOp::Cos => "cos",
                    UnOp::Exp => "exp",
                    UnOp::Tanh => "tanh",
                    UnOp::Sqrt => "sqrt",
                    UnOp::Neg => unreachable!(),
                };
                format!("{}({})", f, e.print(names))
            }
            Expr::Bin(op, a, b) => {
                let s = match op {
                    BinOp::Add => "+",
                    BinOp::Sub => "-",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                };
                format!("({} {} {})", a.print(names), s, b.print(names))
            }
            Expr::Pow(e, k) => format!("({})^{}", e.print(names), k),
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Var(_) => 1,
            Expr::Un(_, e) | Expr::Pow(e, _) => 1 + e.node_count(),
            Expr::Bin(_, a, b) => 1 + a.node_count() + b.node_count(),
        }
    }
}

fn fmt_const(c: f64) -> String {
    // Shortest representation that round-trips through the parser.
    let s = format!("{c}");
    if s.contains('.') || s.contains('e') || s.contains("inf") || s.contains("NaN") {
        s
    } else {
        format!("{s}.0")
    }
}

// Smart constructors with 0/1 folding, used by `diff` to keep derivative
// trees from ballooning.
fn add(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Const(x), _) if *x == 0.0 => b,
        (_, Expr::Const(y)) if *y == 0.0 => a,
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x + y),
        _ => Expr::Bin(BinOp::Add, Box::new(a), Box::new(b)),
    }
}

fn sub(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (_, Expr::Const(y)) if *y == 0.0 => a,
        (Expr::Const(x), _) if *x == 0.0 => neg(b),
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x - y),
        _ => Expr::Bin(BinOp::Sub, Box::new(a), Box::new(b)),
    }
}

fn mul(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Const(x), _) if *x == 0.0 => Expr::Const(0.0),
        (_, Expr::Const(y)) if *y == 0.0 => Expr::Const(0.0),
        (Expr::Const(x), _) if *x == 1.0 => b,
        (_, Expr::Const(y)) if *y == 1.0 => a,
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x * y),
        _ => Expr::Bin(BinOp::Mul, Box::new(a), Box::new(b)),
    }
}

fn div(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Const(x), _) if *x == 0.0 => Expr::Const(0.0),
        (_, Expr::Const(y)) if *y == 1.0 => a,
        _ => Expr::Bin(BinOp::Div, Box::new(a), Box::new(b)),
    }
}

fn neg(a: Expr) -> Expr {
    match &a {
        Expr::Const(x) => Expr::Const(-x),
        _ => Expr::Un(UnOp::Neg, Box::new(a)),
    }
}

/// Ordered variable layout of a system: states first, then inputs, plus the
/// output count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VarSpace {
    names: Vec<String>,
    n_x: usize,
    n_w: usize,
    n_z: usize,
}

impl VarSpace {
    pub fn new(
        states: &[&str],
        inputs: &[&str],
        n_z: usize,
    ) -> Result<Self, crate::error::ModelError> {
        use crate::error::ModelError;
        if states.is_empty() || inputs.is_empty() || n_z == 0 {
            return Err(ModelError::EmptyDimension);
        }
        let names: Vec<String> = states
            .iter()
            .chain(inputs.iter())
            .map(|s| s.to_string())
            .collect();
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(ModelError::DuplicateName(n.clone()));
            }
        }
        Ok(VarSpace {
            names,
            n_x: states.len(),
            n_w: inputs.len(),
            n_z,
        })
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }
    pub fn n_w(&self) -> usize {
        self.n_w
    }
    pub fn n_z(&self) -> usize {
        self.n_z
    }
    /// Total number of expression variables (states + inputs).
    pub fn n_vars(&self) -> usize {
        self.n_x + self.n_w
    }
    pub fn names(&self) -> &[String] {
        &self.names
    }
    pub fn state_names(&self) -> &[String] {
        &self.names[..self.n_x]
    }
    pub fn input_names(&self) -> &[String] {
        &self.names[self.n_x..]
    }
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}
