use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use visdep_core::model::params::BLOCK_NAMES;
use visdep_core::model::{sequence_loss, ModelConfig, ModelParams};
use visdep_core::synth::{BOS, EOS};
use visdep_core::WeightVector;

const EPS: f64 = 1e-4;
const REL_TOL: f64 = 1e-4;
// Central differences carry roughly eps^2 truncation plus round-off of
// order 1e-16 / eps, so entries whose gradient is itself ~1e-10 cannot be
// judged relatively.
const ABS_FLOOR: f64 = 1e-9;

fn loss_only(p: &ModelParams, c: &[f64], seq: &[u32], w: &WeightVector) -> f64 {
    sequence_loss(p, c, seq, w).unwrap().0
}

fn instance(seed: u64) -> (ModelParams, Vec<f64>, Vec<u32>, WeightVector) {
    let cfg = ModelConfig { vocab_size: 9, cond_dim: 4, d_emb: 3, d_hid: 5 };
    let mut p = ModelParams::init(cfg, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Non-zero biases so every block has a generic gradient.
    for b in p.blocks_mut() {
        for x in b.data.iter_mut() {
            *x += rng.random_range(-0.3..0.3);
        }
    }
    let c: Vec<f64> = (0..cfg.cond_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut seq = vec![BOS];
    for _ in 0..4 {
        seq.push(rng.random_range(2..cfg.vocab_size as u32));
    }
    seq.push(EOS);
    let w = WeightVector::from_weights((0..5).map(|_| rng.random_range(0.2..2.0)).collect()).unwrap();
    (p, c, seq, w)
}

#[test]
fn analytic_gradients_match_central_differences() {
    for seed in [1, 2, 3, 4] {
        let (p, c, seq, w) = instance(seed);
        assert_eq!(seq.len() - 1, 5);
        let (_, grad) = sequence_loss(&p, &c, &seq, &w).unwrap();
        for (bi, name) in BLOCK_NAMES.iter().enumerate() {
            let n = p.blocks()[bi].data.len();
            let mut worst: f64 = 0.0;
            for k in 0..n {
                let mut plus = p.clone();
                plus.blocks_mut()[bi].data[k] += EPS;
                let mut minus = p.clone();
                minus.blocks_mut()[bi].data[k] -= EPS;
                let numeric = (loss_only(&plus, &c, &seq, &w) - loss_only(&minus, &c, &seq, &w)) / (2.0 * EPS);
                let analytic = grad.blocks()[bi].data[k];
                let diff = (analytic - numeric).abs();
                if diff > ABS_FLOOR {
                    let rel = diff / analytic.abs().max(numeric.abs());
                    worst = worst.max(rel);
                    assert!(
                        rel < REL_TOL,
                        "seed {seed} block {name}[{k}]: analytic {analytic} numeric {numeric} rel {rel}"
                    );
                }
            }
            assert!(worst < REL_TOL);
        }
    }
}

#[test]
fn every_block_receives_gradient() {
    let (p, c, seq, w) = instance(9);
    let (_, grad) = sequence_loss(&p, &c, &seq, &w).unwrap();
    for (name, b) in BLOCK_NAMES.iter().zip(grad.blocks()) {
        assert!(b.data.iter().any(|x| x.abs() > 1e-8), "block {name} has no gradient");
    }
}

#[test]
fn gradient_is_linear_in_weights() {
    let (p, c, seq, _) = instance(5);
    let a = WeightVector::from_weights(vec![1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
    let b = WeightVector::from_weights(vec![0.0, 1.0, 1.0, 1.0, 1.0]).unwrap();
    let (la, ga) = sequence_loss(&p, &c, &seq, &a).unwrap();
    let (lb, gb) = sequence_loss(&p, &c, &seq, &b).unwrap();
    let (l, g) = sequence_loss(&p, &c, &seq, &WeightVector::ones(5)).unwrap();
    assert!((la + lb - l).abs() < 1e-12);
    let mut sum = ga.clone();
    sum.add_scaled(1.0, &gb);
    sum.add_scaled(-1.0, &g);
    assert!(sum.sq_norm().sqrt() < 1e-12);
}
