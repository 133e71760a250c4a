//! Rank correlation, the fitness function and candidate evaluation.
//!
//! Fitness is `φ = α·ρ_sens + (1−α)·Acc_quant`, where `ρ_sens` is the
//! Spearman correlation between a proxy's per-layer scores and the measured
//! per-layer quantization error. Candidates that break the contract (bad
//! expression, invalid assignment) get `φ = −∞` instead of aborting the run.

use std::cmp::Ordering;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::allocator::{allocate, validate_assignment, AllocationRequest};
use crate::dsl::{compute_layer_stats, evaluate, Evaluation, Expr, LayerStats, ProxyCandidate};
use crate::error::{Error, Result};
use crate::quantsim::{
    calibrate_activation_ranges, layer_quant_errors, quantized_accuracy, BitAssignment, BitMenus, CalibRanges,
};
use crate::smallnet::{Dataset, LayerMeta, Model};

pub const DEFAULT_ALPHA: f64 = 0.1;
pub const DEFAULT_PROBE_BITS: u32 = 2;
pub const SENTINEL: f64 = f64::NEG_INFINITY;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub value: f64,
    /// Set when either input is constant; `value` is then 0.
    pub degenerate: bool,
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::TooShort {
            needed: 2,
            got: x.len(),
        });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("correlation input".into()));
    }
    Ok(())
}

/// Fractional (average) ranks, 1-based.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].partial_cmp(&x[b]).unwrap_or(Ordering::Equal));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Correlation {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Correlation {
            value: 0.0,
            degenerate: true,
        };
    }
    Correlation {
        value: (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0),
        degenerate: false,
    }
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<Correlation> {
    check_pair(x, y)?;
    Ok(pearson(&average_ranks(x), &average_ranks(y)))
}

/// Kendall's τ-b (tie-corrected).
pub fn kendall(x: &[f64], y: &[f64]) -> Result<Correlation> {
    check_pair(x, y)?;
    let n = x.len();
    let (mut s, mut pairs_x, mut pairs_y) = (0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = sign(x[i] - x[j]);
            let dy = sign(y[i] - y[j]);
            s += dx * dy;
            pairs_x += dx.abs();
            pairs_y += dy.abs();
        }
    }
    if pairs_x == 0 || pairs_y == 0 {
        return Ok(Correlation {
            value: 0.0,
            degenerate: true,
        });
    }
    Ok(Correlation {
        value: (s as f64 / ((pairs_x * pairs_y) as f64).sqrt()).clamp(-1.0, 1.0),
        degenerate: false,
    })
}

fn sign(v: f64) -> i64 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

pub fn fitness(alpha: f64, rho_sens: f64, acc_quant: f64) -> f64 {
    alpha * rho_sens + (1.0 - alpha) * acc_quant
}

/// Serializes the `−∞` sentinel as the string `"-inf"`.
pub mod phi_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str("-inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) if s == "-inf" => Ok(f64::NEG_INFINITY),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("invalid fitness `{s}`"))),
        }
    }
}

/// [`phi_serde`] for a sequence of fitness values.
pub mod phi_seq {
    use serde::ser::SerializeSeq;
    use serde::{Deserialize, Deserializer, Serializer};

    #[derive(serde::Serialize, Deserialize)]
    struct Phi(#[serde(with = "super::phi_serde")] f64);

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(v.len()))?;
        for x in v {
            seq.serialize_element(&Phi(*x))?;
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Ok(Vec::<Phi>::deserialize(d)?.into_iter().map(|p| p.0).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatedCandidate {
    pub candidate: ProxyCandidate,
    pub rho_sens: Option<f64>,
    pub acc_quant: Option<f64>,
    #[serde(with = "phi_serde")]
    pub phi: f64,
    pub assignment: Option<BitAssignment>,
    pub warnings: Vec<String>,
    pub violation: Option<String>,
    pub eval_wall_time_ms: f64,
}

impl EvaluatedCandidate {
    pub fn is_sentinel(&self) -> bool {
        self.phi == SENTINEL
    }

    pub fn generation_action(&self) -> Option<usize> {
        self.candidate.action
    }
}

/// Orders by φ descending, then newer birth generation, then larger sequence
/// number. Total and deterministic.
pub fn rank_order(a: &EvaluatedCandidate, b: &EvaluatedCandidate) -> Ordering {
    b.phi
        .partial_cmp(&a.phi)
        .unwrap_or(Ordering::Equal)
        .then(b.candidate.birth_generation.cmp(&a.candidate.birth_generation))
        .then(b.candidate.seq.cmp(&a.candidate.seq))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitnessConfig {
    pub target_compression: f64,
    pub alpha: f64,
    pub probe_bits: u32,
    pub activation_bits: u32,
    pub menus: BitMenus,
}

impl Default for FitnessConfig {
    fn default() -> Self {
        FitnessConfig {
            target_compression: 0.8,
            alpha: DEFAULT_ALPHA,
            probe_bits: DEFAULT_PROBE_BITS,
            activation_bits: 8,
            menus: BitMenus::default(),
        }
    }
}

/// Result of running the allocation and accuracy pipeline on a score vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreOutcome {
    pub rho_sens: f64,
    pub degenerate: bool,
    pub assignment: Option<BitAssignment>,
    pub acc_quant: Option<f64>,
    #[serde(with = "phi_serde")]
    pub phi: f64,
    pub violation: Option<String>,
}

/// Everything a fitness evaluation needs, computed once per model.
#[derive(Debug, Clone)]
pub struct FitnessContext {
    pub model: Model,
    pub calib: Dataset,
    pub eval_data: Dataset,
    pub inventory: Vec<LayerMeta>,
    pub ranges: CalibRanges,
    pub stats: Vec<LayerStats>,
    /// Measured per-layer sensitivity at `config.probe_bits`.
    pub layer_errors: Vec<f64>,
    pub config: FitnessConfig,
}

impl FitnessContext {
    pub fn new(model: Model, calib: Dataset, eval_data: Dataset, config: FitnessConfig) -> Result<Self> {
        calib.check_compatible(&model)?;
        eval_data.check_compatible(&model)?;
        if eval_data.is_empty() {
            return Err(Error::Empty("evaluation set"));
        }
        if !(0.0..=1.0).contains(&config.alpha) {
            return Err(Error::Precondition(format!("alpha {} outside [0, 1]", config.alpha)));
        }
        if config.probe_bits < 2 {
            return Err(Error::InvalidBits(config.probe_bits));
        }
        config.menus.validate()?;
        let inventory = model.layer_inventory();
        if inventory.len() < 2 {
            return Err(Error::TooShort {
                needed: 2,
                got: inventory.len(),
            });
        }
        let ranges = calibrate_activation_ranges(&model, &calib)?;
        let stats = compute_layer_stats(&model, &calib)?;
        let layer_errors = layer_quant_errors(&model, config.probe_bits, &calib)?;
        Ok(FitnessContext {
            model,
            calib,
            eval_data,
            inventory,
            ranges,
            stats,
            layer_errors,
            config,
        })
    }

    pub fn score(&self, expr: &Expr) -> Evaluation {
        evaluate(expr, &self.stats)
    }

    /// Correlation, allocation, quantized accuracy and φ for given scores.
    pub fn evaluate_scores(&self, scores: &[f64]) -> Result<ScoreOutcome> {
        let corr = spearman(scores, &self.layer_errors)?;
        let cfg = &self.config;
        let request = AllocationRequest {
            scores: scores.to_vec(),
            target_compression: cfg.target_compression,
            menus: cfg.menus.clone(),
            activation_bits: cfg.activation_bits,
        };
        let sentinel = |violation: String, assignment: Option<BitAssignment>| ScoreOutcome {
            rho_sens: corr.value,
            degenerate: corr.degenerate,
            assignment,
            acc_quant: None,
            phi: SENTINEL,
            violation: Some(violation),
        };
        let assignment = match allocate(&request, &self.inventory) {
            Ok(a) => a,
            Err(e @ (Error::Infeasible { .. } | Error::NonFinite(_))) => return Ok(sentinel(e.to_string(), None)),
            Err(e) => return Err(e),
        };
        let report = validate_assignment(&assignment, &self.inventory, &cfg.menus, cfg.target_compression);
        if !report.is_empty() {
            let text = report.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ");
            return Ok(sentinel(text, Some(assignment)));
        }
        let acc = quantized_accuracy(&self.model, &assignment, &self.ranges, &self.eval_data)?;
        Ok(ScoreOutcome {
            rho_sens: corr.value,
            degenerate: corr.degenerate,
            assignment: Some(assignment),
            acc_quant: Some(acc),
            phi: fitness(cfg.alpha, corr.value, acc),
            violation: None,
        })
    }

    /// Full pipeline for one candidate. Method-level failures become the
    /// `−∞` sentinel; only infrastructure failures return `Err`.
    pub fn evaluate_candidate(&self, candidate: ProxyCandidate) -> Result<EvaluatedCandidate> {
        let start = Instant::now();
        let expr = match candidate.parse_expr() {
            Ok(e) => e,
            Err(e) => {
                return Ok(EvaluatedCandidate {
                    candidate,
                    rho_sens: None,
                    acc_quant: None,
                    phi: SENTINEL,
                    assignment: None,
                    warnings: Vec::new(),
                    violation: Some(format!("expression rejected: {e}")),
                    eval_wall_time_ms: elapsed_ms(start),
                })
            }
        };
        let evaluation = self.score(&expr);
        let mut warnings: Vec<String> = evaluation
            .warned_layers()
            .into_iter()
            .map(|d| format!("layer {d}: numeric guard applied"))
            .collect();
        let outcome = self.evaluate_scores(&evaluation.scores)?;
        if outcome.degenerate {
            warnings.push("constant scores: rho_sens defined as 0".into());
        }
        Ok(EvaluatedCandidate {
            candidate,
            rho_sens: Some(outcome.rho_sens),
            acc_quant: outcome.acc_quant,
            phi: outcome.phi,
            assignment: outcome.assignment,
            warnings,
            violation: outcome.violation,
            eval_wall_time_ms: elapsed_ms(start),
        })
    }
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

fn novelty_tokens(expr: &str) -> Vec<String> {
    let canonical = crate::dsl::parse(expr)
        .map(|e| e.to_canonical())
        .unwrap_or_else(|_| expr.to_string());
    canonical
        .split(|c: char| c.is_whitespace() || c == '(' || c == ')')
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Minimum token-level edit distance between `expr` and any population
/// member, over canonical token streams with parentheses dropped.
/// An empty population yields `f64::MAX`.
pub fn novelty<'a>(expr: &str, population: impl IntoIterator<Item = &'a str>) -> f64 {
    let tokens = novelty_tokens(expr);
    population
        .into_iter()
        .map(|other| levenshtein(&tokens, &novelty_tokens(other)) as f64)
        .fold(f64::MAX, f64::min)
}
