mod common;

use common::*;
use mpq_proxy::allocator::{allocate, max_compression, validate_assignment, AllocationRequest};
use mpq_proxy::dpo::{dpo_grad, dpo_loss, dpo_update, mean_margin, PolicyParams, PreferencePair, NUM_ACTIONS};
use mpq_proxy::dsl::{parse, MAX_DEPTH};
use mpq_proxy::error::Error;
use mpq_proxy::evolve::{select_survivors, update_context_library, ContextLibrary};
use mpq_proxy::fitness::{kendall, rank_order, spearman};
use mpq_proxy::generator::{crossover, mutate, random_tree, MutationKind};
use mpq_proxy::quantsim::{quantize_tensor, step_size, BitMenus, QuantMode};
use mpq_proxy::smallnet::{LayerClass, LayerMeta};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tensor() -> impl Strategy<Value = Vec<f64>> {
    (1usize..64, -4.0f64..4.0).prop_flat_map(|(n, exp)| {
        let scale = 10f64.powf(exp);
        prop::collection::vec(-1.0f64..1.0, n).prop_map(move |v| v.into_iter().map(|x| x * scale).collect())
    })
}

fn inventory() -> impl Strategy<Value = Vec<LayerMeta>> {
    prop::collection::vec((any::<bool>(), 1usize..5000, 1usize..100_000), 2..8).prop_map(|layers| {
        layers
            .into_iter()
            .enumerate()
            .map(|(i, (conv, params, macs))| LayerMeta {
                depth: i + 1,
                position: 2 * i,
                layer_class: if conv { LayerClass::Conv } else { LayerClass::Linear },
                param_count: params,
                mac_count: macs,
            })
            .collect()
    })
}

fn extremes(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn symmetric_quantizer_error_and_idempotence(v in tensor(), bits in 2u32..17) {
        let q = quantize_tensor(&v, bits, QuantMode::Symmetric).unwrap();
        let s = step_size(&v, bits, QuantMode::Symmetric);
        for (a, b) in v.iter().zip(&q) {
            prop_assert!((a - b).abs() <= s / 2.0 + 1e-12);
        }
        prop_assert_eq!(quantize_tensor(&q, bits, QuantMode::Symmetric).unwrap(), q);
    }

    #[test]
    fn affine_quantizer_error_and_idempotence(v in tensor(), bits in 2u32..17) {
        let (min, max) = extremes(&v);
        let mode = QuantMode::Affine { min, max };
        let q = quantize_tensor(&v, bits, mode).unwrap();
        let s = step_size(&v, bits, mode);
        for (a, b) in v.iter().zip(&q) {
            prop_assert!((a - b).abs() <= s / 2.0 + 1e-12);
        }
        prop_assert_eq!(quantize_tensor(&q, bits, mode).unwrap(), q);
    }

    #[test]
    fn full_precision_is_identity(v in tensor()) {
        prop_assert_eq!(quantize_tensor(&v, 32, QuantMode::Symmetric).unwrap(), v);
    }

    #[test]
    fn dsl_round_trip(seed in any::<u64>(), depth in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = random_tree(&mut rng, depth, None);
        let text = e.to_canonical();
        let back = parse(&text).unwrap();
        prop_assert_eq!(&back, &e);
        prop_assert_eq!(back.to_canonical(), text);
    }

    #[test]
    fn variation_respects_depth_limit(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_tree(&mut rng, 6, None);
        let b = random_tree(&mut rng, 6, None);
        for kind in [MutationKind::SubtreeReplacement, MutationKind::ConstantJitter, MutationKind::OperatorSwap] {
            let (child, _) = mutate(&a, kind, &mut rng, None, None);
            prop_assert!(child.depth() <= MAX_DEPTH && child.references_feature());
        }
        let (x, y) = crossover(&a, &b, &mut rng);
        prop_assert!(x.depth() <= MAX_DEPTH && y.depth() <= MAX_DEPTH);
        prop_assert!(x.references_feature() && y.references_feature());
    }

    #[test]
    fn allocation_is_feasible_and_monotone(inv in inventory(), seed in any::<u64>(), frac in 0.0f64..1.0) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scores: Vec<f64> = (0..inv.len()).map(|_| f64::from(rng.random_range(0u8..6))).collect();
        let menus = BitMenus::default();
        let zeta = frac * max_compression(&inv, &menus).unwrap();
        let a = allocate(&AllocationRequest::new(scores.clone(), zeta), &inv).unwrap();
        prop_assert!(validate_assignment(&a, &inv, &menus, zeta).is_empty());
        for i in 0..inv.len() {
            for j in 0..inv.len() {
                if inv[i].layer_class == inv[j].layer_class && scores[i] > scores[j] {
                    prop_assert!(a.weight_bits[i] >= a.weight_bits[j]);
                }
            }
        }
    }

    #[test]
    fn infeasible_targets_are_reported(inv in inventory(), extra in 1e-6f64..0.05) {
        let zeta = max_compression(&inv, &BitMenus::default()).unwrap() + extra;
        prop_assume!(zeta < 1.0);
        let err = allocate(&AllocationRequest::new(vec![1.0; inv.len()], zeta), &inv).unwrap_err();
        let is_infeasible = matches!(err, Error::Infeasible { .. });
        prop_assert!(is_infeasible);
    }

    #[test]
    fn correlation_properties(pairs in prop::collection::vec((-50i32..50, -50i32..50), 2..30)) {
        let x: Vec<f64> = pairs.iter().map(|p| f64::from(p.0)).collect();
        let y: Vec<f64> = pairs.iter().map(|p| f64::from(p.1)).collect();
        let s = spearman(&x, &y).unwrap().value;
        let k = kendall(&x, &y).unwrap().value;
        prop_assert!((-1.0..=1.0).contains(&s) && (-1.0..=1.0).contains(&k));
        prop_assert!((s - spearman(&y, &x).unwrap().value).abs() <= 1e-12);
        prop_assert!((k - kendall(&y, &x).unwrap().value).abs() <= 1e-12);
        let fx: Vec<f64> = x.iter().map(|v| v * v * v + v).collect();
        prop_assert!((s - spearman(&fx, &y).unwrap().value).abs() <= 1e-12);
        prop_assert!((k - kendall(&fx, &y).unwrap().value).abs() <= 1e-12);
        prop_assert!((s - spearman_oracle(&x, &y)).abs() <= 1e-12);
        prop_assert!((k - kendall_oracle(&x, &y)).abs() <= 1e-12);
    }

    #[test]
    fn dpo_gradient_and_monotone_update(
        theta in prop::collection::vec(-2.0f64..2.0, NUM_ACTIONS),
        raw in prop::collection::vec((0..NUM_ACTIONS, 0..NUM_ACTIONS), 1..20),
    ) {
        let pairs: Vec<PreferencePair> = raw.iter().filter(|p| p.0 != p.1).map(|&(a, b)| PreferencePair::new(a, b)).collect();
        prop_assume!(!pairs.is_empty());
        let reference = PolicyParams::uniform(0.5, 0.1);
        prop_assert!((dpo_loss(&reference, &pairs).unwrap() - std::f64::consts::LN_2).abs() <= 1e-12);

        let mut params = reference.clone();
        params.theta = theta;
        let sum: f64 = params.probabilities().iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-12);
        let f = |t: &[f64]| {
            let mut p = params.clone();
            p.theta = t.to_vec();
            dpo_loss(&p, &pairs).unwrap()
        };
        let numeric = finite_difference(f, &params.theta, 1e-6);
        let analytic = dpo_grad(&params, &pairs).unwrap();
        prop_assert!(relative_error(&analytic, &numeric) <= 1e-5);

        let mut current = params;
        for _ in 0..10 {
            let next = dpo_update(&current, &pairs, 1).unwrap();
            prop_assert!(mean_margin(&next, &pairs) >= mean_margin(&current, &pairs));
            prop_assert!(dpo_loss(&next, &pairs).unwrap() <= dpo_loss(&current, &pairs).unwrap());
            current = next;
        }
    }

    #[test]
    fn survivors_keep_the_best(phis in prop::collection::vec(prop_oneof![0.0f64..1.0, Just(f64::NEG_INFINITY)], 1..40), n in 1usize..20) {
        let pool: Vec<_> = phis.iter().enumerate().map(|(i, &p)| evaluated(i as u64, p, i % 3, None)).collect();
        let survivors = select_survivors(&pool, n);
        prop_assert_eq!(survivors.len(), n.min(pool.len()));
        prop_assert!(survivors.windows(2).all(|w| rank_order(&w[0], &w[1]).is_le()));
        let best = phis.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(survivors[0].phi, best);
        let finite = phis.iter().filter(|p| p.is_finite()).count();
        prop_assert!(survivors.iter().take(finite.min(n)).all(|s| s.phi.is_finite()));
    }

    #[test]
    fn library_size_tracks_seen_candidates(batches in prop::collection::vec(prop::collection::vec(prop_oneof![0.0f64..1.0, Just(f64::NEG_INFINITY)], 0..15), 1..6), capacity in 1usize..8) {
        let mut lib = ContextLibrary::new(capacity);
        let mut seq = 0u64;
        let mut finite = 0usize;
        for batch in batches {
            let cands: Vec<_> = batch.iter().map(|&p| { seq += 1; evaluated(seq, p, 0, None) }).collect();
            finite += batch.iter().filter(|p| p.is_finite()).count();
            lib = update_context_library(&lib, &cands);
            prop_assert_eq!(lib.seen, finite);
            let want = if finite == 0 { 0 } else { finite.div_ceil(10).min(capacity) };
            prop_assert_eq!(lib.entries.len(), want);
            prop_assert!(lib.entries.iter().all(|e| e.phi.is_finite()));
        }
    }
}

#[test]
fn uniform_policy_samples_every_action_evenly() {
    use mpq_proxy::dpo::sample_action;
    let params = PolicyParams::uniform(0.5, 0.1);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let n = 72_000;
    let mut counts = vec![0usize; NUM_ACTIONS];
    for _ in 0..n {
        counts[sample_action(&params, &mut rng).id()] += 1;
    }
    let p = 1.0 / NUM_ACTIONS as f64;
    let sigma = (n as f64 * p * (1.0 - p)).sqrt();
    let expected = n as f64 * p;
    // 3σ per cell over 72 cells: allow a couple of excursions.
    let outliers = counts.iter().filter(|&&c| (c as f64 - expected).abs() > 3.0 * sigma).count();
    assert!(outliers <= 2, "{counts:?}");
    assert!(counts.iter().all(|&c| (c as f64 - expected).abs() <= 5.0 * sigma));
}

#[test]
fn saturated_logit_dominates_sampling() {
    use mpq_proxy::dpo::sample_action;
    let mut params = PolicyParams::uniform(0.5, 0.1);
    params.theta[17] = 20.0;
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let hits = (0..1000).filter(|_| sample_action(&params, &mut rng).id() == 17).count();
    assert!(hits >= 999, "{hits}");
    let probs = params.probabilities();
    assert!(probs.iter().all(|p| p.is_finite()) && (probs.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
}
