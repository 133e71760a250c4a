//! Seeded evolutionary generator: random trees, mutation and subtree
//! crossover over the expression language.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{GenerationOp, GenerationRequest};
use crate::dpo::{FeatureHint, Temperature};
use crate::dsl::{parse, BinaryOp, Expr, Feature, ProxyCandidate, UnaryOp, MAX_DEPTH, TAP_SOURCE};
use crate::error::Result;

const INIT_DEPTH: usize = 5;
const TAP_SEED_PROB: f64 = 0.2;
const CONST_LEAF_PROB: f64 = 0.15;
const MAX_TRIES: usize = 16;
const CONSTANTS: [f64; 6] = [0.5, 1.0, 2.0, 3.0, 0.1, 10.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MutationKind {
    SubtreeReplacement,
    ConstantJitter,
    OperatorSwap,
}

impl MutationKind {
    fn describe(self) -> &'static str {
        match self {
            MutationKind::SubtreeReplacement => "subtree replacement",
            MutationKind::ConstantJitter => "constant jitter",
            MutationKind::OperatorSwap => "operator swap",
        }
    }
}

fn feature_weight(f: Feature, hint: Option<FeatureHint>) -> f64 {
    use Feature::*;
    let group = match f {
        WL2 | WL1Mean | WStd | WMaxAbs | NParams => FeatureHint::Weights,
        AEntropy | AMeanAbs | AStd | AMaxAbs => FeatureHint::Activations,
        Depth | TotalLayers | LayerClass => FeatureHint::Depth,
    };
    match hint {
        Some(h) if h == group => 4.0,
        _ => 1.0,
    }
}

fn random_feature<R: Rng + ?Sized>(rng: &mut R, hint: Option<FeatureHint>) -> Feature {
    *Feature::ALL
        .choose_weighted(rng, |f| feature_weight(*f, hint))
        .expect("positive weights")
}

fn random_leaf<R: Rng + ?Sized>(rng: &mut R, hint: Option<FeatureHint>) -> Expr {
    if rng.random_bool(CONST_LEAF_PROB) {
        Expr::Const(*CONSTANTS.choose(rng).expect("non-empty"))
    } else {
        Expr::Feature(random_feature(rng, hint))
    }
}

fn random_binary<R: Rng + ?Sized>(rng: &mut R) -> BinaryOp {
    const WEIGHTED: [(BinaryOp, f64); 5] = [
        (BinaryOp::Mul, 0.35),
        (BinaryOp::Div, 0.2),
        (BinaryOp::Add, 0.2),
        (BinaryOp::Sub, 0.1),
        (BinaryOp::Pow, 0.15),
    ];
    WEIGHTED.choose_weighted(rng, |(_, w)| *w).expect("positive weights").0
}

/// Random tree of depth at most `max_depth` that references a feature.
pub fn random_tree<R: Rng + ?Sized>(rng: &mut R, max_depth: usize, hint: Option<FeatureHint>) -> Expr {
    for _ in 0..MAX_TRIES {
        let e = grow(rng, max_depth.max(1), hint);
        if e.references_feature() {
            return e;
        }
    }
    Expr::Feature(random_feature(rng, hint))
}

fn grow<R: Rng + ?Sized>(rng: &mut R, max_depth: usize, hint: Option<FeatureHint>) -> Expr {
    if max_depth <= 1 || rng.random_bool(0.3) {
        return random_leaf(rng, hint);
    }
    if rng.random_bool(0.3) {
        let op = *UnaryOp::ALL.choose(rng).expect("non-empty");
        return Expr::unary(op, grow(rng, max_depth - 1, hint));
    }
    let op = random_binary(rng);
    let lhs = grow(rng, max_depth - 1, hint);
    let rhs = if op == BinaryOp::Pow {
        Expr::Const(*[0.5, 2.0, 3.0].choose(rng).expect("non-empty"))
    } else {
        grow(rng, max_depth - 1, hint)
    };
    Expr::binary(op, lhs, rhs)
}

/// The TAP tree with each feature leaf independently resampled with
/// probability ½.
fn tap_skeleton<R: Rng + ?Sized>(rng: &mut R, hint: Option<FeatureHint>) -> Expr {
    let mut e = parse(TAP_SOURCE).expect("builtin source parses");
    for i in 0..e.size() {
        if let Some(node @ Expr::Feature(_)) = e.subtree_mut(i) {
            if rng.random_bool(0.5) {
                *node = Expr::Feature(random_feature(rng, hint));
            }
        }
    }
    e
}

fn replacement_depth(temperature: Option<Temperature>) -> usize {
    match temperature {
        Some(Temperature::Low) => 1,
        Some(Temperature::Mid) | None => 2,
        Some(Temperature::High) => 3,
    }
}

fn round_sig(v: f64) -> f64 {
    let v = v.clamp(1e-3, 1e3);
    let scale = 10f64.powi(2 - v.log10().floor() as i32);
    (v * scale).round() / scale
}

fn replace_subtree<R: Rng + ?Sized>(
    parent: &Expr,
    rng: &mut R,
    temperature: Option<Temperature>,
    hint: Option<FeatureHint>,
) -> Expr {
    for _ in 0..MAX_TRIES {
        let mut child = parent.clone();
        let index = rng.random_range(0..child.size());
        let new = random_tree(rng, replacement_depth(temperature), hint);
        *child.subtree_mut(index).expect("index within size") = new;
        if child.depth() <= MAX_DEPTH && child.references_feature() {
            return child;
        }
    }
    random_tree(rng, replacement_depth(temperature), hint)
}

/// Applies `kind` to `parent`. Constant jitter on a tree without constants
/// and operator swap on a bare leaf fall through to subtree replacement; the
/// kind actually applied is returned.
pub fn mutate<R: Rng + ?Sized>(
    parent: &Expr,
    kind: MutationKind,
    rng: &mut R,
    temperature: Option<Temperature>,
    hint: Option<FeatureHint>,
) -> (Expr, MutationKind) {
    let nodes = parent.subtrees();
    match kind {
        MutationKind::ConstantJitter => {
            let consts: Vec<usize> = (0..nodes.len())
                .filter(|&i| matches!(nodes[i], Expr::Const(_)))
                .collect();
            if let Some(&index) = consts.choose(rng) {
                let mut child = parent.clone();
                if let Some(Expr::Const(v)) = child.subtree_mut(index) {
                    *v = round_sig(*v * rng.random_range(0.5..2.0));
                }
                return (child, kind);
            }
        }
        MutationKind::OperatorSwap => {
            let ops: Vec<usize> = (0..nodes.len())
                .filter(|&i| matches!(nodes[i], Expr::Unary(..) | Expr::Binary(..)))
                .collect();
            if let Some(&index) = ops.choose(rng) {
                let mut child = parent.clone();
                match child.subtree_mut(index) {
                    Some(Expr::Unary(op, _)) => {
                        let others: Vec<UnaryOp> = UnaryOp::ALL.into_iter().filter(|o| o != op).collect();
                        *op = *others.choose(rng).expect("non-empty");
                    }
                    Some(Expr::Binary(op, _, _)) => {
                        let others: Vec<BinaryOp> = BinaryOp::ALL.into_iter().filter(|o| o != op).collect();
                        *op = *others.choose(rng).expect("non-empty");
                    }
                    _ => unreachable!("index selects an operator node"),
                }
                return (child, kind);
            }
        }
        MutationKind::SubtreeReplacement => {}
    }
    (
        replace_subtree(parent, rng, temperature, hint),
        MutationKind::SubtreeReplacement,
    )
}

/// Swaps a uniformly chosen subtree of `a` with one of `b`, returning both
/// children. Swaps that would exceed the depth limit are redrawn; if none
/// fits, the parents are returned unchanged.
pub fn crossover<R: Rng + ?Sized>(a: &Expr, b: &Expr, rng: &mut R) -> (Expr, Expr) {
    for _ in 0..MAX_TRIES {
        let i = rng.random_range(0..a.size());
        let j = rng.random_range(0..b.size());
        let sa = a.subtrees()[i].clone();
        let sb = b.subtrees()[j].clone();
        let mut ca = a.clone();
        let mut cb = b.clone();
        *ca.subtree_mut(i).expect("index within size") = sb;
        *cb.subtree_mut(j).expect("index within size") = sa;
        if ca.depth() <= MAX_DEPTH && cb.depth() <= MAX_DEPTH && ca.references_feature() && cb.references_feature() {
            return (ca, cb);
        }
    }
    (a.clone(), b.clone())
}

/// Deterministic generation: the output is a pure function of `req`.
pub fn generate_offline(req: &GenerationRequest) -> Result<Vec<ProxyCandidate>> {
    req.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
    let hint = req.action.map(|a| a.feature_hint);
    let temperature = req.action.map(|a| a.temperature);
    let parents: Vec<(String, Expr)> = req
        .context
        .iter()
        .map(|c| Ok((c.id.clone(), parse(&c.expr)?)))
        .collect::<std::result::Result<_, crate::dsl::ParseError>>()?;
    let mut out = Vec::with_capacity(req.count);
    let push = |out: &mut Vec<ProxyCandidate>, expr: &Expr, reasoning: String, parent_ids: Vec<String>| {
        let seq = req.first_seq + out.len() as u64;
        let mut c = ProxyCandidate::new(seq, reasoning, expr, req.op.origin());
        req.stamp(&mut c, parent_ids);
        out.push(c);
    };
    while out.len() < req.count {
        match req.op {
            GenerationOp::Init => {
                let (expr, how) = if rng.random_bool(TAP_SEED_PROB) {
                    (tap_skeleton(&mut rng, hint), "seeded from the TAP skeleton")
                } else {
                    (random_tree(&mut rng, INIT_DEPTH, hint), "random tree")
                };
                push(&mut out, &expr, format!("offline init: {how}"), Vec::new());
            }
            GenerationOp::Mutation => {
                let (id, parent) = parents.choose(&mut rng).expect("validated context");
                let kind = *[
                    MutationKind::SubtreeReplacement,
                    MutationKind::ConstantJitter,
                    MutationKind::OperatorSwap,
                ]
                .choose(&mut rng)
                .expect("non-empty");
                let (child, applied) = mutate(parent, kind, &mut rng, temperature, hint);
                let reasoning = format!("offline mutation of {id}: {}", applied.describe());
                push(&mut out, &child, reasoning, vec![id.clone()]);
            }
            GenerationOp::Crossover => {
                let picks: Vec<&(String, Expr)> = parents.choose_multiple(&mut rng, 2).collect();
                let ((ida, a), (idb, b)) = (picks[0], picks[1]);
                let (ca, cb) = crossover(a, b, &mut rng);
                let ids = vec![ida.clone(), idb.clone()];
                push(
                    &mut out,
                    &ca,
                    format!("offline crossover of {ida} and {idb}"),
                    ids.clone(),
                );
                if out.len() < req.count {
                    push(&mut out, &cb, format!("offline crossover of {idb} and {ida}"), ids);
                }
            }
        }
    }
    Ok(out)
}
