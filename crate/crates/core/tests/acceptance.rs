//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test --test acceptance`. Exits non-zero if any criterion
//! fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use common::*;
use mpq_proxy::allocator::{allocate, max_compression, validate_assignment, AllocationRequest};
use mpq_proxy::baselines::random_scores;
use mpq_proxy::cli::run_cli;
use mpq_proxy::dpo::{dpo_grad, dpo_loss, dpo_update, mean_margin, PolicyParams, PreferencePair, NUM_ACTIONS};
use mpq_proxy::dsl::{builtin_tap, compute_layer_stats, evaluate, parse, TAP_SOURCE};
use mpq_proxy::error::Error;
use mpq_proxy::evolve::{run_with_context, GeneratorMode, LogRecord, RunConfig};
use mpq_proxy::fitness::{kendall, spearman, FitnessContext};
use mpq_proxy::fixtures;
use mpq_proxy::generator::{
    generate_offline, ContextEntry, GenerationEvent, GenerationOp, GenerationRequest, LlmEndpointConfig,
    MockChatServer, MockReply,
};
use mpq_proxy::quantsim::{
    calibrate_activation_ranges, layer_quant_errors, quantize_tensor, quantized_accuracy, step_size, BitAssignment,
    BitMenus, QuantMode,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn correlation() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.random_range(2..=20);
        // Small integer ranges force ties.
        let span = rng.random_range(2..10);
        let x: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..span))).collect();
        let y: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..span))).collect();
        let ds = (spearman(&x, &y).unwrap().value - spearman_oracle(&x, &y)).abs();
        let dk = (kendall(&x, &y).unwrap().value - kendall_oracle(&x, &y)).abs();
        worst = worst.max(ds).max(dk);
    }
    let elapsed = start.elapsed();
    ensure(worst <= 1e-12, || format!("max |delta| {worst:e}"))?;
    ensure(elapsed < Duration::from_secs(5), || format!("took {elapsed:?}"))?;
    Ok(format!("200 pairs, max |delta| {worst:e}, {elapsed:.2?}"))
}

fn quantizer() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut checked = 0usize;
    for t in 0..100 {
        let n = rng.random_range(1..256);
        let scale = 10f64.powf(rng.random_range(-3.0..3.0));
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0) * scale).collect();
        let (min, max) = v
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        for bits in [2, 4, 8, 16] {
            for mode in [QuantMode::Symmetric, QuantMode::Affine { min, max }] {
                let q = quantize_tensor(&v, bits, mode).map_err(|e| e.to_string())?;
                let s = step_size(&v, bits, mode);
                for (a, b) in v.iter().zip(&q) {
                    ensure((a - b).abs() <= s / 2.0 + 1e-12, || {
                        format!(
                            "tensor {t}, {bits} bits, {mode:?}: error {} > {}",
                            (a - b).abs(),
                            s / 2.0
                        )
                    })?;
                }
                let qq = quantize_tensor(&q, bits, mode).map_err(|e| e.to_string())?;
                ensure(qq == q, || format!("tensor {t}, {bits} bits, {mode:?}: not idempotent"))?;
                checked += n;
            }
        }
    }
    Ok(format!("100 tensors x bits {{2,4,8,16}} x 2 modes, {checked} elements"))
}

fn dsl_round_trip() -> Check {
    let mut exprs = Vec::new();
    for seed in 0..200u64 {
        exprs.extend(generate_offline(&GenerationRequest::init(2, seed)).unwrap());
    }
    let context: Vec<ContextEntry> = exprs
        .iter()
        .take(40)
        .map(|c| ContextEntry::new(c.id.clone(), c.expr.clone(), 0.5))
        .collect();
    for (i, op) in [GenerationOp::Mutation, GenerationOp::Crossover]
        .into_iter()
        .enumerate()
    {
        let req = GenerationRequest {
            op,
            context: context.clone(),
            count: 50,
            action: None,
            seed: 99 + i as u64,
            generation: 1,
            first_seq: 1000,
        };
        exprs.extend(generate_offline(&req).unwrap());
    }
    for c in &exprs {
        let e = parse(&c.expr).map_err(|err| format!("{}: {err}", c.expr))?;
        let printed = e.to_canonical();
        let back = parse(&printed).map_err(|err| format!("{printed}: {err}"))?;
        ensure(back == e && back.to_canonical() == printed, || {
            format!("round trip changed {printed}")
        })?;
    }
    let tap = parse(TAP_SOURCE).unwrap();
    let mut max_delta: f64 = 0.0;
    for model in [fixtures::cnn(), fixtures::mlp()] {
        let stats = compute_layer_stats(&model, &fixtures::calib16()).unwrap();
        let dsl = evaluate(&tap, &stats).scores;
        for (a, b) in dsl.iter().zip(builtin_tap(&stats)) {
            max_delta = max_delta.max((a - b).abs());
        }
    }
    ensure(max_delta == 0.0, || format!("TAP max |delta| {max_delta:e}"))?;
    Ok(format!("{} expressions, TAP max |delta| 0", exprs.len()))
}

fn dpo() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let random_pairs = |rng: &mut ChaCha8Rng| -> Vec<PreferencePair> {
        let n = rng.random_range(1..16);
        (0..n)
            .map(|_| {
                let a = rng.random_range(0..NUM_ACTIONS);
                let b = (a + rng.random_range(1..NUM_ACTIONS)) % NUM_ACTIONS;
                PreferencePair::new(a, b)
            })
            .collect()
    };
    let reference = PolicyParams::uniform(0.5, 0.1);
    let pairs = random_pairs(&mut rng);
    let l0 = dpo_loss(&reference, &pairs).unwrap();
    ensure((l0 - std::f64::consts::LN_2).abs() <= 1e-12, || {
        format!("loss at reference {l0}")
    })?;

    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let pairs = random_pairs(&mut rng);
        let mut params = reference.clone();
        params.theta = (0..NUM_ACTIONS).map(|_| rng.random_range(-2.0..2.0)).collect();
        let f = |t: &[f64]| {
            let mut p = params.clone();
            p.theta = t.to_vec();
            dpo_loss(&p, &pairs).unwrap()
        };
        let numeric = finite_difference(f, &params.theta, 1e-6);
        worst = worst.max(relative_error(&dpo_grad(&params, &pairs).unwrap(), &numeric));
    }
    ensure(worst <= 1e-5, || format!("gradient relative error {worst:e}"))?;

    let pairs = random_pairs(&mut rng);
    let mut params = reference.clone();
    let start_margin = mean_margin(&params, &pairs);
    for step in 0..50 {
        let next = dpo_update(&params, &pairs, 1).unwrap();
        let (m0, m1) = (mean_margin(&params, &pairs), mean_margin(&next, &pairs));
        ensure(m1 >= m0, || format!("margin fell at step {step}: {m0} -> {m1}"))?;
        params = next;
    }
    let end_margin = mean_margin(&params, &pairs);
    ensure(end_margin > start_margin, || "margin did not increase".into())?;
    Ok(format!(
        "loss(ref) = ln 2, grad rel err {worst:.1e}, margin {start_margin:.3} -> {end_margin:.3} over 50 steps"
    ))
}

fn allocation() -> Check {
    let inv = fixtures::cnn().layer_inventory();
    let menus = BitMenus::default();
    let ceiling = max_compression(&inv, &menus).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for k in 0..200 {
        let scores: Vec<f64> = (0..inv.len())
            .map(|_| f64::from(rng.random_range(0..8u8)) / 7.0)
            .collect();
        let zeta = rng.random_range(0.0..ceiling);
        let a =
            allocate(&AllocationRequest::new(scores.clone(), zeta), &inv).map_err(|e| format!("instance {k}: {e}"))?;
        let report = validate_assignment(&a, &inv, &menus, zeta);
        ensure(report.is_empty(), || format!("instance {k}: {report:?}"))?;
        for i in 0..inv.len() {
            for j in 0..inv.len() {
                let same = inv[i].layer_class == inv[j].layer_class;
                ensure(
                    !(same && scores[i] > scores[j] && a.weight_bits[i] < a.weight_bits[j]),
                    || format!("instance {k}: layers {} and {} not score-monotone", i + 1, j + 1),
                )?;
            }
        }
    }
    let over = (ceiling + 1.0) / 2.0;
    match allocate(&AllocationRequest::new(vec![1.0; inv.len()], over), &inv) {
        Err(Error::Infeasible { .. }) => {}
        other => return Err(format!("target {over} gave {other:?}")),
    }
    Ok(format!(
        "200 instances feasible and monotone, zeta {over:.3} infeasible"
    ))
}

fn sensitivity() -> Check {
    let calib = fixtures::calib16();
    let eval = fixtures::eval64();
    let mut parts = Vec::new();
    for model in [fixtures::cnn(), fixtures::mlp()] {
        let e2 = layer_quant_errors(&model, 2, &calib).unwrap();
        let e8 = layer_quant_errors(&model, 8, &calib).unwrap();
        for (d, (a, b)) in e2.iter().zip(&e8).enumerate() {
            ensure(a >= b, || {
                format!("{} layer {}: err(2) {a} < err(8) {b}", model.name(), d + 1)
            })?;
        }
        let ranges = calibrate_activation_ranges(&model, &calib).unwrap();
        let layers = model.num_parameterized();
        let acc = |b| quantized_accuracy(&model, &BitAssignment::uniform(layers, b, b), &ranges, &eval).unwrap();
        let (a2, a8) = (acc(2), acc(8));
        ensure(a8 >= a2, || format!("{}: acc(8) {a8} < acc(2) {a2}", model.name()))?;
        parts.push(format!("{} acc 2b {a2:.3} / 8b {a8:.3}", model.name()));
    }
    Ok(parts.join(", "))
}

fn discovery() -> Check {
    let start = Instant::now();
    let base = RunConfig::new("fixture", "calib16", "eval64");
    let ctx = FitnessContext::new(
        fixtures::cnn(),
        fixtures::calib16(),
        fixtures::eval64(),
        base.fitness_config(),
    )
    .map_err(|e| e.to_string())?;
    let depth = ctx
        .evaluate_scores(&ctx.score(&parse("depth").unwrap()).scores)
        .unwrap();
    let mut lines = Vec::new();
    for seed in 0..5u64 {
        let mut cfg = base.clone();
        cfg.seed = seed;
        let r = run_with_context(&cfg, &ctx).map_err(|e| format!("seed {seed}: {e}"))?;
        let s = &r.best_phi_series;
        ensure(s.windows(2).all(|w| w[1] >= w[0]), || {
            format!("seed {seed}: series not monotone {s:?}")
        })?;
        let random = ctx.evaluate_scores(&random_scores(ctx.inventory.len(), seed)).unwrap();
        ensure(r.best.phi >= random.phi, || {
            format!("seed {seed}: best {} < random {}", r.best.phi, random.phi)
        })?;
        let rho = r.best.rho_sens.unwrap_or(f64::NEG_INFINITY);
        ensure(rho >= depth.rho_sens, || {
            format!("seed {seed}: rho {rho} < depth rho {}", depth.rho_sens)
        })?;
        lines.push(format!("{:.4}", r.best.phi));
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(120), || format!("took {elapsed:?}"))?;
    Ok(format!("best phi per seed [{}], {elapsed:.1?}", lines.join(", ")))
}

fn contract_violation() -> Check {
    let server = MockChatServer::start(vec![
        MockReply::Content("A valid proxy.\n```\nw_l2 * a_std\n```".into()),
        MockReply::Content("Sorry, I cannot produce an expression.".into()),
        MockReply::Content("Activation spread.\n```\na_std / (depth + 1)\n```".into()),
    ])
    .map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::new("fixture", "calib16", "eval64");
    cfg.population_size = 4;
    cfg.generations = 1;
    cfg.mode = GeneratorMode::Llm;
    let mut endpoint = LlmEndpointConfig::new(server.base_url(), "mock-model");
    endpoint.retry_backoff_ms = 0;
    endpoint.max_in_flight = 1;
    cfg.endpoint = Some(endpoint);
    cfg.run_dir = Some(dir.path().to_path_buf());
    let ctx = FitnessContext::new(
        fixtures::cnn(),
        fixtures::calib16(),
        fixtures::eval64(),
        cfg.fitness_config(),
    )
    .map_err(|e| e.to_string())?;
    run_with_context(&cfg, &ctx).map_err(|e| format!("run aborted: {e}"))?;
    ensure(!dir.path().join("PARTIAL").exists(), || {
        "run left PARTIAL marker".into()
    })?;
    let mut recorded = 0;
    for t in 0..=cfg.generations {
        let text =
            std::fs::read_to_string(dir.path().join(format!("generations/{t}.log"))).map_err(|e| e.to_string())?;
        for line in text.lines() {
            let record: LogRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
            if matches!(
                record,
                LogRecord::Event {
                    event: GenerationEvent::Retry { .. } | GenerationEvent::Drop { .. },
                    ..
                }
            ) {
                recorded += 1;
            }
        }
    }
    ensure(recorded >= 1, || "no retry or drop record".into())?;
    Ok(format!("run completed, {recorded} retry/drop record(s), 0 aborts"))
}

fn efficiency() -> Check {
    let model = fixtures::cnn();
    let calib = fixtures::calib16();
    let tap = parse(TAP_SOURCE).unwrap();
    let start = Instant::now();
    let stats = compute_layer_stats(&model, &calib).map_err(|e| e.to_string())?;
    let scores = evaluate(&tap, &stats).scores;
    let scoring = start.elapsed();
    let inv = model.layer_inventory();
    let start = Instant::now();
    allocate(&AllocationRequest::new(scores, 0.8), &inv).map_err(|e| e.to_string())?;
    let allocation = start.elapsed();
    let limit = Duration::from_millis(500);
    ensure(scoring < limit, || format!("scoring took {scoring:?}"))?;
    ensure(allocation < limit, || format!("allocation took {allocation:?}"))?;
    Ok(format!("scoring {scoring:.2?}, allocation {allocation:.2?}"))
}

fn machine_discover(config: &Path, run_dir: &Path) -> Result<String, String> {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let args = [
        "mpq-proxy",
        "--format",
        "machine",
        "--seed",
        "5",
        "--run-dir",
        &run_dir.display().to_string(),
        "discover",
        "--config",
        &config.display().to_string(),
        "--offline",
    ];
    let code = run_cli(args, &mut out, &mut err);
    ensure(code == 0, || format!("exit {code}: {}", String::from_utf8_lossy(&err)))?;
    Ok(String::from_utf8(out).unwrap())
}

fn logs_without_timings(dir: &Path) -> Vec<serde_json::Value> {
    let mut out = Vec::new();
    for t in 0.. {
        let Ok(text) = std::fs::read_to_string(dir.join(format!("generations/{t}.log"))) else {
            break;
        };
        for line in text.lines() {
            let mut v: serde_json::Value = serde_json::from_str(line).unwrap();
            if let Some(obj) = v.as_object_mut() {
                obj.remove("eval_wall_time_ms");
            }
            out.push(v);
        }
    }
    out
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.json");
    let cfg = serde_json::json!({"model": "fixture", "calib": "calib16", "eval_data": "eval64", "generations": 3});
    std::fs::write(&config, cfg.to_string()).unwrap();
    let a = machine_discover(&config, &dir.path().join("a"))?;
    let b = machine_discover(&config, &dir.path().join("b"))?;
    ensure(a == b, || "machine output differs between runs".into())?;
    let (la, lb) = (
        logs_without_timings(&dir.path().join("a")),
        logs_without_timings(&dir.path().join("b")),
    );
    ensure(!la.is_empty() && la == lb, || {
        "generation logs differ between runs".into()
    })?;
    Ok(format!(
        "{} output lines and {} log records identical",
        a.lines().count(),
        la.len()
    ))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("correlation oracle", correlation),
        ("quantizer bounds", quantizer),
        ("dsl round trip", dsl_round_trip),
        ("dpo loss and gradient", dpo),
        ("allocation feasibility", allocation),
        ("sensitivity sanity", sensitivity),
        ("desk discovery", discovery),
        ("generator contract violation", contract_violation),
        ("efficiency", efficiency),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
