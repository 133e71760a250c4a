use super::{BinaryOp, Expr, Feature, LayerStats, UnaryOp};

const TINY: f64 = 1e-12;
const MAX_EXPONENT: f64 = 8.0;

/// Per-layer scores plus a flag per layer recording whether any numeric
/// guard fired (or the result had to be replaced by 0).
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub scores: Vec<f64>,
    pub warnings: Vec<bool>,
}

impl Evaluation {
    pub fn any_warning(&self) -> bool {
        self.warnings.iter().any(|&w| w)
    }

    /// 1-based depths of layers whose evaluation was guarded.
    pub fn warned_layers(&self) -> Vec<usize> {
        self.warnings
            .iter()
            .enumerate()
            .filter_map(|(i, &w)| w.then_some(i + 1))
            .collect()
    }
}

/// Total evaluation: guards replace every failure mode with a finite value.
pub fn evaluate(expr: &Expr, stats: &[LayerStats]) -> Evaluation {
    let mut scores = Vec::with_capacity(stats.len());
    let mut warnings = Vec::with_capacity(stats.len());
    for s in stats {
        let mut warned = false;
        let mut v = eval_node(expr, s, &mut warned);
        if !v.is_finite() {
            v = 0.0;
            warned = true;
        }
        scores.push(v);
        warnings.push(warned);
    }
    Evaluation { scores, warnings }
}

fn eval_node(e: &Expr, s: &LayerStats, warned: &mut bool) -> f64 {
    match e {
        Expr::Feature(f) => s.feature(*f),
        Expr::Const(c) => *c,
        Expr::Unary(op, a) => {
            let x = eval_node(a, s, warned);
            match op {
                UnaryOp::Exp => x.exp(),
                UnaryOp::Log => {
                    if !(x >= TINY) {
                        *warned = true;
                    }
                    x.max(TINY).ln()
                }
                UnaryOp::Sqrt => {
                    if x < 0.0 {
                        *warned = true;
                    }
                    x.abs().sqrt()
                }
                UnaryOp::Abs => x.abs(),
                UnaryOp::Neg => -x,
            }
        }
        Expr::Binary(op, a, b) => {
            let x = eval_node(a, s, warned);
            let y = eval_node(b, s, warned);
            match op {
                BinaryOp::Add => x + y,
                BinaryOp::Sub => x - y,
                BinaryOp::Mul => x * y,
                BinaryOp::Div => {
                    if y.abs() < TINY {
                        *warned = true;
                        x / if y < 0.0 { -TINY } else { TINY }
                    } else {
                        x / y
                    }
                }
                BinaryOp::Pow => {
                    if y.abs() > MAX_EXPONENT {
                        *warned = true;
                    }
                    x.powf(y.clamp(-MAX_EXPONENT, MAX_EXPONENT))
                }
            }
        }
    }
}

/// Closed-form `‖W‖₂ · H(A) · e^(−d/L)` computed directly from the stats.
pub fn builtin_tap(stats: &[LayerStats]) -> Vec<f64> {
    stats
        .iter()
        .map(|s| {
            let depth = s.feature(Feature::Depth);
            let total = s.feature(Feature::TotalLayers);
            let v = (s.w_l2 * s.a_entropy) * (-(depth / total)).exp();
            if v.is_finite() {
                v
            } else {
                0.0
            }
        })
        .collect()
}
