use std::fs;
use std::path::Path;

use mpq_proxy::error::Error;
use mpq_proxy::evolve::{run_with_context, GeneratorMode, LogRecord, RunConfig};
use mpq_proxy::fitness::{EvaluatedCandidate, FitnessContext};
use mpq_proxy::fixtures;
use mpq_proxy::generator::{GenerationEvent, LlmEndpointConfig, MockChatServer, MockReply};

const VALID: &str = "Energy of the weights scaled by activation spread.\n```\nw_l2 * a_std\n```";

fn context() -> FitnessContext {
    let cfg = RunConfig::new("fixture", "calib16", "eval64");
    FitnessContext::new(
        fixtures::cnn(),
        fixtures::calib16(),
        fixtures::eval64(),
        cfg.fitness_config(),
    )
    .unwrap()
}

fn config(seed: u64) -> RunConfig {
    let mut cfg = RunConfig::new("fixture", "calib16", "eval64");
    cfg.population_size = 4;
    cfg.generations = 2;
    cfg.seed = seed;
    cfg.jobs = Some(2);
    cfg
}

fn endpoint(url: String) -> LlmEndpointConfig {
    let mut e = LlmEndpointConfig::new(url, "mock-model");
    e.retry_backoff_ms = 0;
    e.timeout_secs = 5.0;
    e.max_in_flight = 1;
    e
}

fn read_logs(dir: &Path) -> Vec<LogRecord> {
    let mut records = Vec::new();
    let mut t = 0;
    while let Ok(text) = fs::read_to_string(dir.join("generations").join(format!("{t}.log"))) {
        records.extend(text.lines().map(|l| serde_json::from_str::<LogRecord>(l).unwrap()));
        t += 1;
    }
    records
}

fn without_timings(mut c: EvaluatedCandidate) -> EvaluatedCandidate {
    c.eval_wall_time_ms = 0.0;
    c
}

#[test]
fn offline_runs_are_deterministic() {
    let ctx = context();
    let a = run_with_context(&config(7), &ctx).unwrap();
    let b = run_with_context(&config(7), &ctx).unwrap();
    assert_eq!(a.best_phi_series, b.best_phi_series);
    assert_eq!(without_timings(a.best.clone()), without_timings(b.best.clone()));
    assert_eq!(a.policy, b.policy);
    let ids = |r: &mpq_proxy::evolve::RunResult| {
        r.final_population
            .iter()
            .map(|e| e.candidate.expr.clone())
            .collect::<Vec<_>>()
    };
    assert_eq!(ids(&a), ids(&b));
}

#[test]
fn series_is_elitist() {
    let ctx = context();
    for seed in 0..3 {
        let r = run_with_context(&config(seed), &ctx).unwrap();
        assert_eq!(r.best_phi_series.len(), 3);
        assert!(
            r.best_phi_series.windows(2).all(|w| w[1] >= w[0]),
            "{:?}",
            r.best_phi_series
        );
        assert_eq!(*r.best_phi_series.last().unwrap(), r.best.phi);
    }
}

#[test]
fn zero_offspring_keeps_initial_population() {
    let ctx = context();
    let mut cfg = config(1);
    cfg.generations = 1;
    cfg.candidates_per_generation = Some(0);
    let r = run_with_context(&cfg, &ctx).unwrap();
    assert_eq!(r.candidates_evaluated, cfg.population_size);
    assert_eq!(r.best_phi_series[0], r.best_phi_series[1]);
}

#[test]
fn fallback_mode_survives_dead_endpoint() {
    let ctx = context();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(2);
    cfg.mode = GeneratorMode::LlmWithFallback;
    cfg.endpoint = Some(endpoint("http://127.0.0.1:9/v1".into()));
    cfg.run_dir = Some(dir.path().to_path_buf());
    let r = run_with_context(&cfg, &ctx).unwrap();
    assert_eq!(r.fallback_generations, vec![0, 1, 2]);
    let fallbacks = read_logs(dir.path())
        .into_iter()
        .filter(|r| {
            matches!(
                r,
                LogRecord::Event {
                    event: GenerationEvent::Fallback { .. },
                    ..
                }
            )
        })
        .count();
    assert!(fallbacks >= 3);

    cfg.mode = GeneratorMode::Llm;
    cfg.run_dir = None;
    assert!(matches!(run_with_context(&cfg, &ctx), Err(Error::Endpoint(_))));
}

#[test]
fn malformed_reply_is_retried_and_logged() {
    let ctx = context();
    let dir = tempfile::tempdir().unwrap();
    let server = MockChatServer::start(vec![
        MockReply::Content(VALID.into()),
        MockReply::Content("no code block here".into()),
        MockReply::Content(VALID.into()),
    ])
    .unwrap();
    let mut cfg = config(4);
    cfg.generations = 1;
    cfg.mode = GeneratorMode::Llm;
    cfg.endpoint = Some(endpoint(server.base_url()));
    cfg.run_dir = Some(dir.path().to_path_buf());
    let r = run_with_context(&cfg, &ctx).unwrap();
    assert!(r.best.phi.is_finite());
    assert!(!dir.path().join("PARTIAL").exists());
    let retries = read_logs(dir.path())
        .into_iter()
        .filter(|r| {
            matches!(
                r,
                LogRecord::Event {
                    event: GenerationEvent::Retry { .. } | GenerationEvent::Drop { .. },
                    ..
                }
            )
        })
        .count();
    assert!(retries >= 1);
}
