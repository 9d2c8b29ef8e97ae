//! Randomized invariant checks across the library: anything that must hold
//! for *every* input, not just the hand-picked cases in the unit tests.

use std::collections::BTreeSet;

use proptest::prelude::*;

use seqfail::data::{contains_subsequence, label_oracle, Dataset, RuleSpec, Session, Vocab};
use seqfail::extract::{perturb, PerturbMode};
use seqfail::io::{read_dataset, read_model, render_dataset, render_model, SavedModel};
use seqfail::linalg::{affine, sigmoid, Matrix};
use seqfail::mine::rule_stats;
use seqfail::model::{init_params, HyperParams, LstmType};
use seqfail::rng::Rng;
use seqfail::tune::{expected_improvement, gp_fit, KernelConfig};

fn fbc_rules() -> RuleSpec {
    RuleSpec::new(vec![vec![6, 2, 3]], BTreeSet::from([5])).unwrap()
}

proptest! {
    #[test]
    fn prng_streams_replay_exactly(seed: u64) {
        let mut a = Rng::new(seed);
        let mut b = Rng::new(seed);
        for _ in 0..64 {
            prop_assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn prng_uniforms_stay_in_unit_interval(seed: u64) {
        let mut rng = Rng::new(seed);
        for _ in 0..256 {
            let u = rng.next_uniform();
            prop_assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn prng_below_respects_bound(seed: u64, n in 1usize..5_000) {
        let mut rng = Rng::new(seed);
        for _ in 0..128 {
            prop_assert!(rng.next_below(n) < n);
        }
    }

    #[test]
    fn prng_shuffle_permutes(seed: u64, len in 0usize..64) {
        let mut rng = Rng::new(seed);
        let mut v: Vec<usize> = (0..len).collect();
        rng.shuffle(&mut v);
        let mut sorted = v.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..len).collect::<Vec<_>>());
    }

    #[test]
    fn sigmoid_complements_sum_to_one(x in -30.0f64..30.0) {
        prop_assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn affine_is_linear_in_its_input(seed: u64, rows in 1usize..5, cols in 1usize..5) {
        let mut rng = Rng::new(seed);
        let w = Matrix::uniform(rows, cols, -1.0, 1.0, &mut rng);
        let b = vec![0.0; rows];
        let x: Vec<f64> = (0..cols).map(|_| rng.next_uniform() - 0.5).collect();
        let y: Vec<f64> = (0..cols).map(|_| rng.next_uniform() - 0.5).collect();
        let sum: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
        let fx = affine(&w, &x, &b).unwrap();
        let fy = affine(&w, &y, &b).unwrap();
        let fsum = affine(&w, &sum, &b).unwrap();
        for i in 0..rows {
            prop_assert!((fsum[i] - fx[i] - fy[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn subsequence_survives_insertions(
        seq in prop::collection::vec(1u32..8, 0..12),
        pattern in prop::collection::vec(1u32..8, 0..4),
        at in 0usize..13,
        extra in 1u32..8,
    ) {
        prop_assume!(contains_subsequence(&seq, &pattern));
        let mut grown = seq.clone();
        grown.insert(at.min(seq.len()), extra);
        prop_assert!(contains_subsequence(&grown, &pattern));
    }

    #[test]
    fn oracle_never_fails_with_a_blocker_present(
        seq in prop::collection::vec(1u32..9, 1..16),
    ) {
        let rules = fbc_rules();
        if seq.contains(&5) {
            prop_assert!(!label_oracle(&seq, &rules));
        } else {
            prop_assert_eq!(
                label_oracle(&seq, &rules),
                contains_subsequence(&seq, &[6, 2, 3])
            );
        }
    }

    #[test]
    fn void_probes_shrink_zero_probes_preserve_length(
        seq in prop::collection::vec(1u32..6, 1..12),
        k_frac in 0.0f64..1.0,
    ) {
        let k = ((seq.len() as f64 * k_frac) as usize).min(seq.len() - 1);
        let none = BTreeSet::new();
        let voided = perturb(&seq, k, &none, PerturbMode::VoidInsert).unwrap();
        let zeroed = perturb(&seq, k, &none, PerturbMode::ZeroInsert).unwrap();
        let dups = seq[..=k].iter().filter(|&&e| e == seq[k]).count();
        prop_assert_eq!(voided.len(), seq.len() - dups);
        prop_assert_eq!(zeroed.len(), seq.len());
        // Zeroing touches exactly the duplicates up to k.
        for (j, (&a, &b)) in seq.iter().zip(&zeroed).enumerate() {
            if j <= k && a == seq[k] {
                prop_assert_eq!(b, 0);
            } else {
                prop_assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn rule_support_is_anti_monotone(
        records in prop::collection::vec(
            (prop::collection::vec(1u32..5, 1..8), any::<bool>()),
            1..24,
        ),
        pattern in prop::collection::vec(1u32..5, 1..3),
        ext in 1u32..5,
    ) {
        let ds = Dataset {
            vocab: Vocab::letters(4).unwrap(),
            sessions: records
                .into_iter()
                .map(|(events, label)| Session::new(events, label))
                .collect(),
            rules: None,
        };
        let sup = |p: &[u32]| {
            rule_stats(&ds, p).unwrap().map_or(0.0, |r| r.support)
        };
        let mut extended = pattern.clone();
        extended.push(ext);
        prop_assert!(sup(&extended) <= sup(&pattern) + 1e-12);
    }
}

proptest! {
    // The cases below each fit a model or run linear algebra on matrices, so
    // keep the count moderate.
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn expected_improvement_is_never_negative(
        seed: u64,
        n in 1usize..6,
        best in -1.0f64..1.0,
        q in 0.0f64..1.0,
    ) {
        let mut rng = Rng::new(seed);
        let points: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.next_uniform()]).collect();
        let values: Vec<f64> = (0..n).map(|_| rng.next_uniform() * 2.0 - 1.0).collect();
        let gp = gp_fit(&points, &values, &KernelConfig::default()).unwrap();
        let ei = expected_improvement(&gp, &[q], best).unwrap();
        prop_assert!(ei.is_finite());
        prop_assert!(ei >= 0.0);
    }

    #[test]
    fn dataset_text_round_trips(
        n_names in 1usize..8,
        records in prop::collection::vec(
            (prop::collection::vec(0usize..8, 1..10), any::<bool>()),
            1..16,
        ),
    ) {
        let vocab = Vocab::letters(n_names).unwrap();
        let sessions: Vec<Session> = records
            .into_iter()
            .map(|(raw, label)| {
                let events = raw
                    .into_iter()
                    .map(|r| (r % n_names) as u32 + 1)
                    .collect();
                Session::new(events, label)
            })
            .collect();
        let ds = Dataset { vocab, sessions, rules: None };
        let text = render_dataset(&ds);
        let back = read_dataset(text.as_bytes(), "prop").unwrap();
        prop_assert_eq!(back, ds);
    }

    #[test]
    fn model_text_round_trips_bit_exactly(seed: u64, bidirectional: bool) {
        let hp = HyperParams {
            embedding_size: 2,
            lstm_size: 3,
            lstm_type: if bidirectional {
                LstmType::Bidirectional
            } else {
                LstmType::Standard
            },
            seed,
            ..HyperParams::default()
        };
        let mut rng = Rng::new(seed);
        let params = init_params(&hp, 4, &mut rng).unwrap();
        let model = SavedModel {
            hp,
            vocab: Vocab::letters(4).unwrap(),
            params,
        };
        let text = render_model(&model);
        let back = read_model(text.as_bytes(), "prop").unwrap();
        prop_assert_eq!(back, model);
    }
}
