use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use visdep_core::dependence::DependenceProfile;
use visdep_core::reweight::{apply_eos_floor, normalize_weights, training_weights};
use visdep_core::{LossMode, ReweightConfig, WeightVector};

#[test]
fn weights_sum_to_length_on_random_vectors() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..10_000 {
        let n = rng.random_range(1..=2048);
        let tau = rng.random_range(0.0..=4.0);
        let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..=1.0)).collect();
        let w = normalize_weights(&raw, tau).unwrap();
        assert_eq!(w.seq_len(), n);
        let rel = (w.sum() - n as f64).abs() / n as f64;
        assert!(rel <= 1e-9, "n={n} tau={tau} sum={}", w.sum());
    }
}

#[test]
fn zero_temperature_is_exactly_vanilla() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..200 {
        let n = rng.random_range(1..=300);
        let raw: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let w = normalize_weights(&raw, 0.0).unwrap();
        assert!(w.weights().iter().all(|&x| x == 1.0));
    }
}

#[test]
fn two_token_example() {
    let w = normalize_weights(&[1.0, 0.0], 0.5).unwrap();
    let e = 0.5f64.exp();
    assert!((w.weights()[0] - 2.0 * e / (e + 1.0)).abs() < 1e-12);
    assert!((w.weights()[1] - 2.0 / (e + 1.0)).abs() < 1e-12);
    assert!((w.weights()[0] - 1.2449).abs() < 1e-4);
    assert!((w.weights()[1] - 0.7551).abs() < 1e-4);
}

#[test]
fn eos_floor_only_raises() {
    let w = WeightVector::from_weights(vec![1.4, 0.6]).unwrap();
    assert_eq!(apply_eos_floor(w, Some(1)).unwrap().weights(), &[1.4, 1.0]);
    let w = WeightVector::from_weights(vec![0.6, 1.4]).unwrap();
    assert_eq!(apply_eos_floor(w, Some(1)).unwrap().weights(), &[0.6, 1.4]);
    let w = WeightVector::from_weights(vec![0.6, 1.4]).unwrap();
    assert!(apply_eos_floor(w, Some(2)).is_err());
}

#[test]
fn negative_emphasis_after_activation() {
    let p = DependenceProfile::from_values("s", vec![0.9, 0.0, -0.9, 0.1]).unwrap();
    let cfg = ReweightConfig::with_mode(LossMode::EmphasizeNegative);
    let before = training_weights(&p, &cfg, 0.3, None).unwrap();
    assert!(before.weights().iter().all(|&w| w == 1.0));
    let after = training_weights(&p, &cfg, 0.6, None).unwrap();
    let w = after.weights();
    assert!(w[2] > 1.0);
    assert!(w[0] < 1.0 && w[1] < 1.0 && w[3] < 1.0);
}

fn raw_vec() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..=1.0, 1..200)
}

proptest! {
    #[test]
    fn order_is_preserved(raw in raw_vec(), tau in 0.01f64..4.0) {
        let w = normalize_weights(&raw, tau).unwrap();
        for i in 0..raw.len() {
            for j in 0..raw.len() {
                if raw[i] > raw[j] {
                    prop_assert!(w.weights()[i] >= w.weights()[j]);
                }
                if raw[i] == raw[j] {
                    prop_assert_eq!(w.weights()[i], w.weights()[j]);
                }
            }
        }
    }

    #[test]
    fn raising_one_raw_value_raises_its_weight(raw in raw_vec(), tau in 0.01f64..4.0, k in any::<prop::sample::Index>(), bump in 0.01f64..1.0) {
        let i = k.index(raw.len());
        let mut raised = raw.clone();
        raised[i] += bump;
        let a = normalize_weights(&raw, tau).unwrap();
        let b = normalize_weights(&raised, tau).unwrap();
        if raw.len() > 1 {
            prop_assert!(b.weights()[i] > a.weights()[i]);
        } else {
            prop_assert_eq!(b.weights()[i], 1.0);
        }
    }

    #[test]
    fn floored_sum_stays_within_one_of_length(raw in raw_vec(), tau in 0.0f64..4.0) {
        let n = raw.len();
        let w = apply_eos_floor(normalize_weights(&raw, tau).unwrap(), Some(n - 1)).unwrap();
        prop_assert!(w.sum() >= n as f64 - 1e-9);
        prop_assert!(w.sum() <= n as f64 + 1.0);
        prop_assert!(w.weights()[n - 1] >= 1.0);
    }
}
