//! Preference learning over generation actions.
//!
//! The policy is a softmax over a small discrete space of generation actions
//! (operator, context size, temperature, feature hint). Preference pairs come
//! from fitness rankings; the policy is trained with the standard DPO loss
//!
//! ```text
//! L = −mean log σ( λ · [ (log p_θ(a₊) − log p_ref(a₊)) − (log p_θ(a₋) − log p_ref(a₋)) ] )
//! ```
//!
//! against a frozen reference copy of the initial logits.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitness::{rank_order, EvaluatedCandidate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionOp {
    Mutation,
    Crossover,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Temperature {
    Low,
    Mid,
    High,
}

impl Temperature {
    pub fn value(self) -> f64 {
        match self {
            Temperature::Low => 0.2,
            Temperature::Mid => 0.7,
            Temperature::High => 1.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureHint {
    Weights,
    Activations,
    Depth,
    Mixed,
}

impl FeatureHint {
    pub fn guidance(self) -> &'static str {
        match self {
            FeatureHint::Weights => "Focus on weight statistics (w_*).",
            FeatureHint::Activations => "Focus on activation statistics (a_*).",
            FeatureHint::Depth => "Focus on the layer's position (depth, total_layers).",
            FeatureHint::Mixed => "Combine weight, activation and position statistics.",
        }
    }
}

const OPS: [ActionOp; 2] = [ActionOp::Mutation, ActionOp::Crossover];
const CONTEXT_SIZES: [usize; 3] = [1, 2, 4];
const TEMPERATURES: [Temperature; 3] = [Temperature::Low, Temperature::Mid, Temperature::High];
const HINTS: [FeatureHint; 4] = [
    FeatureHint::Weights,
    FeatureHint::Activations,
    FeatureHint::Depth,
    FeatureHint::Mixed,
];

pub const NUM_ACTIONS: usize = OPS.len() * CONTEXT_SIZES.len() * TEMPERATURES.len() * HINTS.len();

/// One point of the discrete generation-action space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Action {
    pub op: ActionOp,
    pub context_size: usize,
    pub temperature: Temperature,
    pub feature_hint: FeatureHint,
}

impl Action {
    pub fn id(&self) -> usize {
        let op = OPS.iter().position(|o| *o == self.op).expect("known op");
        let k = CONTEXT_SIZES
            .iter()
            .position(|k| *k == self.context_size)
            .expect("known context size");
        let t = TEMPERATURES
            .iter()
            .position(|t| *t == self.temperature)
            .expect("known temperature");
        let h = HINTS.iter().position(|h| *h == self.feature_hint).expect("known hint");
        ((op * CONTEXT_SIZES.len() + k) * TEMPERATURES.len() + t) * HINTS.len() + h
    }

    pub fn from_id(id: usize) -> Option<Action> {
        if id >= NUM_ACTIONS {
            return None;
        }
        let h = id % HINTS.len();
        let t = (id / HINTS.len()) % TEMPERATURES.len();
        let k = (id / (HINTS.len() * TEMPERATURES.len())) % CONTEXT_SIZES.len();
        let op = id / (HINTS.len() * TEMPERATURES.len() * CONTEXT_SIZES.len());
        Some(Action {
            op: OPS[op],
            context_size: CONTEXT_SIZES[k],
            temperature: TEMPERATURES[t],
            feature_hint: HINTS[h],
        })
    }

    pub fn all() -> impl Iterator<Item = Action> {
        (0..NUM_ACTIONS).map(|i| Action::from_id(i).expect("in range"))
    }
}

pub const DEFAULT_LAMBDA: f64 = 0.5;
pub const DEFAULT_ETA: f64 = 0.1;
pub const DEFAULT_STEPS: usize = 25;
const MAX_HALVINGS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub theta: Vec<f64>,
    theta_ref: Vec<f64>,
    pub lambda: f64,
    pub eta: f64,
}

impl PolicyParams {
    /// Uniform policy; the reference is frozen at these logits.
    pub fn uniform(lambda: f64, eta: f64) -> Self {
        Self::with_reference(vec![0.0; NUM_ACTIONS], lambda, eta)
    }

    pub fn with_reference(theta: Vec<f64>, lambda: f64, eta: f64) -> Self {
        PolicyParams {
            theta_ref: theta.clone(),
            theta,
            lambda,
            eta,
        }
    }

    pub fn theta_ref(&self) -> &[f64] {
        &self.theta_ref
    }

    pub fn probabilities(&self) -> Vec<f64> {
        log_softmax(&self.theta).into_iter().map(f64::exp).collect()
    }
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    logits.iter().map(|v| v - lse).collect()
}

/// `−log σ(x)`, stable for large |x|.
fn neg_log_sigmoid(x: f64) -> f64 {
    (-x).max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub preferred: (String, usize),
    pub dispreferred: (String, usize),
    pub phi_gap: f64,
}

impl PreferencePair {
    pub fn new(preferred_action: usize, dispreferred_action: usize) -> Self {
        PreferencePair {
            preferred: (String::new(), preferred_action),
            dispreferred: (String::new(), dispreferred_action),
            phi_gap: f64::INFINITY,
        }
    }
}

/// Pairs from a fitness ranking: adjacent ranks first, then the best against
/// the others from the worst upward, skipping equal-φ pairs and duplicates.
/// Candidates without a recorded generation action cannot be attributed to
/// the policy and are ignored.
pub fn build_preference_pairs(evaluated: &[EvaluatedCandidate], max_pairs: usize) -> Vec<PreferencePair> {
    let mut ranked: Vec<&EvaluatedCandidate> = evaluated.iter().filter(|e| e.candidate.action.is_some()).collect();
    ranked.sort_by(|a, b| rank_order(a, b));
    if ranked.len() < 2 {
        return Vec::new();
    }
    let mut seen = std::collections::HashSet::new();
    let mut pairs = Vec::new();
    let mut push = |i: usize, j: usize, pairs: &mut Vec<PreferencePair>| {
        let (a, b) = (ranked[i], ranked[j]);
        if pairs.len() >= max_pairs || !(a.phi > b.phi) || !a.phi.is_finite() || !seen.insert((i, j)) {
            return;
        }
        pairs.push(PreferencePair {
            preferred: (a.candidate.id.clone(), a.candidate.action.expect("filtered")),
            dispreferred: (b.candidate.id.clone(), b.candidate.action.expect("filtered")),
            phi_gap: a.phi - b.phi,
        });
    };
    for i in 0..ranked.len() - 1 {
        push(i, i + 1, &mut pairs);
    }
    for j in (1..ranked.len()).rev() {
        push(0, j, &mut pairs);
    }
    pairs
}

fn check_pairs(params: &PolicyParams, pairs: &[PreferencePair]) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::Empty("preference pairs"));
    }
    if !(params.lambda > 0.0) {
        return Err(Error::Precondition(format!(
            "lambda {} must be positive",
            params.lambda
        )));
    }
    let n = params.theta.len();
    if params.theta_ref.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: params.theta_ref.len(),
        });
    }
    if let Some(p) = pairs.iter().find(|p| p.preferred.1 >= n || p.dispreferred.1 >= n) {
        return Err(Error::Precondition(format!(
            "pair references action {} outside 0..{n}",
            p.preferred.1.max(p.dispreferred.1)
        )));
    }
    Ok(())
}

fn margins(params: &PolicyParams, theta: &[f64], pairs: &[PreferencePair]) -> Vec<f64> {
    let lp = log_softmax(theta);
    let lr = log_softmax(&params.theta_ref);
    pairs
        .iter()
        .map(|p| {
            let (w, l) = (p.preferred.1, p.dispreferred.1);
            params.lambda * ((lp[w] - lr[w]) - (lp[l] - lr[l]))
        })
        .collect()
}

fn loss_at(params: &PolicyParams, theta: &[f64], pairs: &[PreferencePair]) -> f64 {
    let z = margins(params, theta, pairs);
    z.iter().map(|&v| neg_log_sigmoid(v)).sum::<f64>() / pairs.len() as f64
}

pub fn dpo_loss(params: &PolicyParams, pairs: &[PreferencePair]) -> Result<f64> {
    check_pairs(params, pairs)?;
    Ok(loss_at(params, &params.theta, pairs))
}

/// Analytic `∂L/∂θ`. The softmax normalizer cancels inside each pair, so
/// every pair contributes `−λ·σ(−z)/n` on `a₊` and the opposite on `a₋`.
pub fn dpo_grad(params: &PolicyParams, pairs: &[PreferencePair]) -> Result<Vec<f64>> {
    check_pairs(params, pairs)?;
    Ok(grad_at(params, &params.theta, pairs))
}

fn grad_at(params: &PolicyParams, theta: &[f64], pairs: &[PreferencePair]) -> Vec<f64> {
    let z = margins(params, theta, pairs);
    let n = pairs.len() as f64;
    let mut g = vec![0.0; theta.len()];
    for (p, &zi) in pairs.iter().zip(&z) {
        let c = params.lambda * sigmoid(-zi) / n;
        g[p.preferred.1] -= c;
        g[p.dispreferred.1] += c;
    }
    g
}

/// Mean of `log p(a₊) − log p(a₋)` under the current logits.
pub fn mean_margin(params: &PolicyParams, pairs: &[PreferencePair]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let lp = log_softmax(&params.theta);
    pairs
        .iter()
        .map(|p| lp[p.preferred.1] - lp[p.dispreferred.1])
        .sum::<f64>()
        / pairs.len() as f64
}

/// `steps` gradient-descent steps with backtracking. A step is accepted only
/// if it does not increase the loss or decrease the mean margin; otherwise the
/// step size halves, up to five times, before the step is skipped.
pub fn dpo_update(params: &PolicyParams, pairs: &[PreferencePair], steps: usize) -> Result<PolicyParams> {
    if steps == 0 {
        return Err(Error::Precondition("dpo_update needs at least one step".into()));
    }
    if pairs.is_empty() {
        return Ok(params.clone());
    }
    check_pairs(params, pairs)?;
    let mut out = params.clone();
    for _ in 0..steps {
        let loss = loss_at(&out, &out.theta, pairs);
        let margin = mean_margin(&out, pairs);
        let grad = grad_at(&out, &out.theta, pairs);
        let mut eta = out.eta;
        for _ in 0..=MAX_HALVINGS {
            let trial: Vec<f64> = out.theta.iter().zip(&grad).map(|(t, g)| t - eta * g).collect();
            let candidate = PolicyParams {
                theta: trial,
                ..out.clone()
            };
            if loss_at(&out, &candidate.theta, pairs) <= loss && mean_margin(&candidate, pairs) >= margin {
                out.theta = candidate.theta;
                break;
            }
            eta /= 2.0;
        }
    }
    Ok(out)
}

pub fn sample_action<R: Rng + ?Sized>(params: &PolicyParams, rng: &mut R) -> Action {
    let dist = WeightedIndex::new(params.probabilities()).expect("softmax weights are valid");
    Action::from_id(dist.sample(rng)).expect("index within action space")
}
