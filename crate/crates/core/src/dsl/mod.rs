//! Proxy expression language over per-layer statistics.
//!
//! ```text
//! expr    = term { ("+" | "-") term } ;
//! term    = power { ("*" | "/") power } ;
//! power   = unary { "^" unary } ;
//! unary   = "-" unary | primary ;
//! primary = number | feature | func "(" expr ")" | "(" expr ")" ;
//! func    = "exp" | "log" | "sqrt" | "abs" | "neg" ;
//! feature = "w_l2" | "w_l1_mean" | "w_std" | "w_max_abs" | "n_params"
//!         | "a_entropy" | "a_mean_abs" | "a_std" | "a_max_abs"
//!         | "depth" | "total_layers" | "layer_class" ;
//! ```
//!
//! All binary operators are left-associative. Canonical printing is fully
//! parenthesized and round-trips through [`parse`].

mod candidate;
mod eval;
mod parser;
mod stats;

use std::fmt;

pub use candidate::{CandidateOrigin, ProxyCandidate};
pub use eval::{builtin_tap, evaluate, Evaluation};
pub use parser::{parse, ParseError, ParseErrorKind};
pub use stats::{
    builtin_ompq, compute_layer_stats, entropy_bits, load_stats, ompq_scores, LayerStats, StatsFile, ENTROPY_BINS,
};

/// Maximum tree depth; a single leaf has depth 1.
pub const MAX_DEPTH: usize = 12;

/// Canonical source of the built-in TAP proxy.
pub const TAP_SOURCE: &str = "w_l2 * a_entropy * exp(-(depth / total_layers))";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Feature {
    WL2,
    WL1Mean,
    WStd,
    WMaxAbs,
    NParams,
    AEntropy,
    AMeanAbs,
    AStd,
    AMaxAbs,
    Depth,
    TotalLayers,
    LayerClass,
}

impl Feature {
    pub const ALL: [Feature; 12] = [
        Feature::WL2,
        Feature::WL1Mean,
        Feature::WStd,
        Feature::WMaxAbs,
        Feature::NParams,
        Feature::AEntropy,
        Feature::AMeanAbs,
        Feature::AStd,
        Feature::AMaxAbs,
        Feature::Depth,
        Feature::TotalLayers,
        Feature::LayerClass,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Feature::WL2 => "w_l2",
            Feature::WL1Mean => "w_l1_mean",
            Feature::WStd => "w_std",
            Feature::WMaxAbs => "w_max_abs",
            Feature::NParams => "n_params",
            Feature::AEntropy => "a_entropy",
            Feature::AMeanAbs => "a_mean_abs",
            Feature::AStd => "a_std",
            Feature::AMaxAbs => "a_max_abs",
            Feature::Depth => "depth",
            Feature::TotalLayers => "total_layers",
            Feature::LayerClass => "layer_class",
        }
    }

    pub fn from_name(name: &str) -> Option<Feature> {
        Feature::ALL.into_iter().find(|f| f.name() == name)
    }

    pub fn description(self) -> &'static str {
        match self {
            Feature::WL2 => "Frobenius norm of the layer weights",
            Feature::WL1Mean => "mean absolute weight",
            Feature::WStd => "standard deviation of the weights",
            Feature::WMaxAbs => "largest absolute weight",
            Feature::NParams => "parameter count (weights + bias)",
            Feature::AEntropy => "Shannon entropy in bits of a 256-bin histogram of the layer output",
            Feature::AMeanAbs => "mean absolute output activation",
            Feature::AStd => "standard deviation of the output activations",
            Feature::AMaxAbs => "largest absolute output activation",
            Feature::Depth => "1-based index among parameterized layers",
            Feature::TotalLayers => "number of parameterized layers L",
            Feature::LayerClass => "1 for convolution, 0 for linear",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Exp,
    Log,
    Sqrt,
    Abs,
    Neg,
}

impl UnaryOp {
    pub const ALL: [UnaryOp; 5] = [UnaryOp::Exp, UnaryOp::Log, UnaryOp::Sqrt, UnaryOp::Abs, UnaryOp::Neg];

    pub fn name(self) -> &'static str {
        match self {
            UnaryOp::Exp => "exp",
            UnaryOp::Log => "log",
            UnaryOp::Sqrt => "sqrt",
            UnaryOp::Abs => "abs",
            UnaryOp::Neg => "neg",
        }
    }

    fn from_name(name: &str) -> Option<UnaryOp> {
        UnaryOp::ALL.into_iter().find(|op| op.name() == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinaryOp {
    pub const ALL: [BinaryOp; 5] = [
        BinaryOp::Add,
        BinaryOp::Sub,
        BinaryOp::Mul,
        BinaryOp::Div,
        BinaryOp::Pow,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
            BinaryOp::Pow => "^",
        }
    }
}

/// Expression tree. Constants are non-negative; negation is always an
/// explicit [`UnaryOp::Neg`] node so that printing round-trips.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Feature(Feature),
    Const(f64),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn unary(op: UnaryOp, arg: Expr) -> Expr {
        Expr::Unary(op, Box::new(arg))
    }

    pub fn binary(op: BinaryOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Binary(op, Box::new(lhs), Box::new(rhs))
    }

    pub fn depth(&self) -> usize {
        match self {
            Expr::Feature(_) | Expr::Const(_) => 1,
            Expr::Unary(_, a) => 1 + a.depth(),
            Expr::Binary(_, a, b) => 1 + a.depth().max(b.depth()),
        }
    }

    pub fn size(&self) -> usize {
        match self {
            Expr::Feature(_) | Expr::Const(_) => 1,
            Expr::Unary(_, a) => 1 + a.size(),
            Expr::Binary(_, a, b) => 1 + a.size() + b.size(),
        }
    }

    pub fn references_feature(&self) -> bool {
        match self {
            Expr::Feature(_) => true,
            Expr::Const(_) => false,
            Expr::Unary(_, a) => a.references_feature(),
            Expr::Binary(_, a, b) => a.references_feature() || b.references_feature(),
        }
    }

    /// Subtrees in pre-order.
    pub fn subtrees(&self) -> Vec<&Expr> {
        let mut out = Vec::new();
        self.walk(&mut |e| out.push(e));
        out
    }

    fn walk<'a>(&'a self, f: &mut impl FnMut(&'a Expr)) {
        f(self);
        match self {
            Expr::Unary(_, a) => a.walk(f),
            Expr::Binary(_, a, b) => {
                a.walk(f);
                b.walk(f);
            }
            _ => {}
        }
    }

    /// Mutable reference to the `index`-th subtree in pre-order.
    pub fn subtree_mut(&mut self, index: usize) -> Option<&mut Expr> {
        fn go<'a>(e: &'a mut Expr, index: &mut usize) -> Option<&'a mut Expr> {
            if *index == 0 {
                return Some(e);
            }
            *index -= 1;
            match e {
                Expr::Unary(_, a) => go(a, index),
                Expr::Binary(_, a, b) => {
                    let left = a.size();
                    if *index < left {
                        go(a, index)
                    } else {
                        *index -= left;
                        go(b, index)
                    }
                }
                _ => None,
            }
        }
        let mut i = index;
        go(self, &mut i)
    }

    /// Canonical text: fully parenthesized binary nodes, `name(arg)` unary nodes.
    pub fn to_canonical(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Feature(feat) => f.write_str(feat.name()),
            Expr::Const(v) => write!(f, "{v}"),
            Expr::Unary(op, a) => write!(f, "{}({a})", op.name()),
            Expr::Binary(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
        }
    }
}

pub fn print_canonical(expr: &Expr) -> String {
    expr.to_canonical()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tap_canonical_form() {
        let e = parse(TAP_SOURCE).unwrap();
        assert_eq!(
            print_canonical(&e),
            "((w_l2 * a_entropy) * exp(neg((depth / total_layers))))"
        );
        let expected = Expr::binary(
            BinaryOp::Mul,
            Expr::binary(
                BinaryOp::Mul,
                Expr::Feature(Feature::WL2),
                Expr::Feature(Feature::AEntropy),
            ),
            Expr::unary(
                UnaryOp::Exp,
                Expr::unary(
                    UnaryOp::Neg,
                    Expr::binary(
                        BinaryOp::Div,
                        Expr::Feature(Feature::Depth),
                        Expr::Feature(Feature::TotalLayers),
                    ),
                ),
            ),
        );
        assert_eq!(e, expected);
    }

    #[test]
    fn constant_prints_shortest() {
        assert_eq!(print_canonical(&Expr::Const(2.5)), "2.5");
        assert_eq!(print_canonical(&Expr::Const(3.0)), "3");
        assert_eq!(parse("0.1").unwrap(), Expr::Const(0.1));
    }

    #[test]
    fn subtree_indexing_matches_preorder() {
        let mut e = parse("(w_l2 + depth) * exp(a_std)").unwrap();
        let names: Vec<String> = e.subtrees().iter().map(|s| s.to_string()).collect();
        assert_eq!(names[1], "(w_l2 + depth)");
        assert_eq!(names[3], "depth");
        assert_eq!(names[5], "a_std");
        for (i, n) in names.iter().enumerate() {
            assert_eq!(&e.subtree_mut(i).unwrap().to_string(), n);
        }
        assert!(e.subtree_mut(names.len()).is_none());
    }
}
