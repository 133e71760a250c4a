//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use serde_json::Value;

/// Definitional average rank: 1 + #smaller + (#equal − 1) / 2.
pub fn rank_oracle(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&xi| {
            let smaller = x.iter().filter(|&&v| v < xi).count() as f64;
            let equal = x.iter().filter(|&&v| v == xi).count() as f64;
            1.0 + smaller + (equal - 1.0) / 2.0
        })
        .collect()
}

fn pearson_oracle(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        0.0
    } else {
        cov / (vx.sqrt() * vy.sqrt())
    }
}

pub fn spearman_oracle(x: &[f64], y: &[f64]) -> f64 {
    pearson_oracle(&rank_oracle(x), &rank_oracle(y))
}

/// τ-b from concordant/discordant counts and tie groups.
pub fn kendall_oracle(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let (mut nc, mut nd, mut tx, mut ty) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        for j in 0..i {
            let a = (x[i] - x[j]) * (y[i] - y[j]);
            if a > 0.0 {
                nc += 1.0;
            } else if a < 0.0 {
                nd += 1.0;
            }
            if x[i] == x[j] {
                tx += 1.0;
            }
            if y[i] == y[j] {
                ty += 1.0;
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as f64;
    let denom = ((n0 - tx) * (n0 - ty)).sqrt();
    if denom == 0.0 {
        0.0
    } else {
        (nc - nd) / denom
    }
}

/// Forward pass of a flatten/dense/relu network read straight from JSON.
/// Returns every layer's output for one sample.
pub fn mlp_forward_oracle(model_json: &str, input: &[f64]) -> Vec<Vec<f64>> {
    let doc: Value = serde_json::from_str(model_json).unwrap();
    let mut x = input.to_vec();
    let mut outputs = Vec::new();
    for layer in doc["layers"].as_array().unwrap() {
        match layer["kind"].as_str().unwrap() {
            "flatten" => {}
            "relu" => x.iter_mut().for_each(|v| *v = v.max(0.0)),
            "dense" => {
                let nin = layer["in_features"].as_u64().unwrap() as usize;
                let nout = layer["out_features"].as_u64().unwrap() as usize;
                let w: Vec<f64> = layer["weights"]
                    .as_array()
                    .unwrap()
                    .iter()
                    .map(|v| v.as_f64().unwrap())
                    .collect();
                let b: Vec<f64> = match layer.get("bias") {
                    Some(Value::Array(a)) => a.iter().map(|v| v.as_f64().unwrap()).collect(),
                    _ => vec![0.0; nout],
                };
                let mut y = vec![0.0; nout];
                for o in 0..nout {
                    let mut acc = b[o];
                    for i in 0..nin {
                        acc += w[o * nin + i] * x[i];
                    }
                    y[o] = acc;
                }
                x = y;
            }
            other => panic!("oracle does not handle {other}"),
        }
        outputs.push(x.clone());
    }
    outputs
}

pub fn dataset_inputs(json: &str) -> Vec<(Vec<f64>, usize)> {
    let doc: Value = serde_json::from_str(json).unwrap();
    doc["samples"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| {
            let x = s["input"]
                .as_array()
                .unwrap()
                .iter()
                .map(|v| v.as_f64().unwrap())
                .collect();
            (x, s["label"].as_u64().unwrap() as usize)
        })
        .collect()
}

/// Weights of every dense layer, in order.
pub fn dense_weights(model_json: &str) -> Vec<Vec<f64>> {
    let doc: Value = serde_json::from_str(model_json).unwrap();
    doc["layers"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|l| l["kind"] == "dense")
        .map(|l| {
            l["weights"]
                .as_array()
                .unwrap()
                .iter()
                .map(|v| v.as_f64().unwrap())
                .collect()
        })
        .collect()
}

/// Central finite-difference gradient.
pub fn finite_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        g[i] = (up - down) / (2.0 * h);
    }
    g
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / norm.max(1e-12)
}

/// Synthetic evaluated candidate with the given φ.
pub fn evaluated(
    seq: u64,
    phi: f64,
    generation: usize,
    action: Option<usize>,
) -> mpq_proxy::fitness::EvaluatedCandidate {
    use mpq_proxy::dsl::{parse, CandidateOrigin, ProxyCandidate};
    let mut candidate = ProxyCandidate::new(seq, "", &parse("w_l2").unwrap(), CandidateOrigin::Init);
    candidate.birth_generation = generation;
    candidate.action = action;
    mpq_proxy::fitness::EvaluatedCandidate {
        candidate,
        rho_sens: phi.is_finite().then_some(0.0),
        acc_quant: phi.is_finite().then_some(phi),
        phi,
        assignment: None,
        warnings: Vec::new(),
        violation: None,
        eval_wall_time_ms: 0.0,
    }
}
