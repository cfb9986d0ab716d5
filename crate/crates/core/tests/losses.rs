use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uses_core::losses::{permutations, si_snr, LossConfig, MultiResL1, CAP_DB};
use uses_core::numerics::{grad_check, grad_check_coords};
use uses_core::{Tape, Tensor, Var};

fn noise(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn small_loss() -> MultiResL1 {
    MultiResL1::new(LossConfig {
        mr_windows: vec![16, 24, 32],
        ..LossConfig::default()
    })
    .unwrap()
}

fn loss_value(loss: &MultiResL1, est: &[f64], reference: &[f64]) -> f64 {
    let mut t = Tape::no_grad();
    let e = t.constant(Tensor::new(vec![est.len()], est.to_vec()).unwrap());
    let r = t.constant(Tensor::new(vec![reference.len()], reference.to_vec()).unwrap());
    let out = loss.loss(&mut t, e, r).unwrap();
    t.value(out.loss).item()
}

#[test]
fn si_snr_gradient_both_inputs() {
    let points = [
        Tensor::new(vec![300], noise(300, 1)).unwrap(),
        Tensor::new(vec![300], noise(300, 2)).unwrap(),
    ];
    let coords = vec![(0..300).step_by(7).collect::<Vec<_>>(); 2];
    let report = grad_check_coords(|t: &mut Tape<f64>, v: &[Var]| t.si_snr(v[0], v[1]), &points, 1e-6, &coords).unwrap();
    assert!(report.max_rel_error < 1e-5, "{report:?}");
}

#[test]
fn capped_si_snr_has_zero_gradient() {
    let r = Tensor::new(vec![50], noise(50, 3)).unwrap();
    let mut t = Tape::new();
    let e = t.param(r.clone());
    let rv = t.constant(r);
    let s = t.si_snr(e, rv).unwrap();
    assert_eq!(t.value(s).item(), CAP_DB);
    let g = t.backward(s).unwrap();
    assert!(g.get(e).unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn multires_gradient() {
    let loss = small_loss();
    let reference = Tensor::new(vec![200], noise(200, 4)).unwrap();
    let f = |t: &mut Tape<f64>, e: Var| {
        let r = t.constant(reference.clone());
        Ok(loss.loss(t, e, r)?.loss)
    };
    let err = grad_check(f, &Tensor::new(vec![200], noise(200, 5)).unwrap(), 1e-6).unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn multires_gradient_default_windows() {
    let loss = MultiResL1::new(LossConfig::default()).unwrap();
    let reference = Tensor::new(vec![2048], noise(2048, 6)).unwrap();
    let f = |t: &mut Tape<f64>, v: &[Var]| {
        let r = t.constant(reference.clone());
        Ok(loss.loss(t, v[0], r)?.loss)
    };
    let coords = vec![(0..2048).step_by(97).collect()];
    let point = [Tensor::new(vec![2048], noise(2048, 7)).unwrap()];
    let report = grad_check_coords(f, &point, 1e-6, &coords).unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn pit_gradient_and_single_source() {
    let points = [
        Tensor::new(vec![2, 120], noise(240, 8)).unwrap(),
        Tensor::new(vec![2, 120], noise(240, 9)).unwrap(),
    ];
    let coords = vec![(0..240).step_by(11).collect::<Vec<_>>(); 2];
    let f = |t: &mut Tape<f64>, v: &[Var]| Ok(t.pit_si_snr_loss(v[0], v[1])?.0);
    let report = grad_check_coords(f, &points, 1e-6, &coords).unwrap();
    assert!(report.max_rel_error < 1e-5, "{report:?}");

    let e = noise(100, 10);
    let r = noise(100, 11);
    let mut t = Tape::new();
    let ev = t.constant(Tensor::new(vec![1, 100], e.clone()).unwrap());
    let rv = t.constant(Tensor::new(vec![1, 100], r.clone()).unwrap());
    let (loss, perm) = t.pit_si_snr_loss(ev, rv).unwrap();
    assert_eq!(perm, vec![0]);
    assert!((t.value(loss).item() + si_snr(&e, &r).unwrap()).abs() < 1e-12);
}

/// Brute force over every assignment using the plain metric.
fn pit_oracle(ests: &[Vec<f64>], refs: &[Vec<f64>]) -> f64 {
    let s = ests.len();
    permutations(s)
        .iter()
        .map(|p| -(0..s).map(|i| si_snr(&ests[i], &refs[p[i]]).unwrap()).sum::<f64>() / s as f64)
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn pit_matches_exhaustive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for s in 1..=3 {
        for trial in 0..5 {
            let len = 64;
            let refs: Vec<Vec<f64>> = (0..s).map(|i| noise(len, 100 * s as u64 + 10 * trial + i as u64)).collect();
            // estimates are noisy mixtures leaning toward a shuffled reference
            let ests: Vec<Vec<f64>> = (0..s)
                .map(|i| {
                    let j = (i + trial as usize) % s;
                    refs[j].iter().map(|v| v + rng.gen_range(-0.8..0.8)).collect()
                })
                .collect();
            let mut t = Tape::new();
            let ev = t.constant(Tensor::new(vec![s, len], ests.concat()).unwrap());
            let rv = t.constant(Tensor::new(vec![s, len], refs.concat()).unwrap());
            let (loss, perm) = t.pit_si_snr_loss(ev, rv).unwrap();
            let oracle = pit_oracle(&ests, &refs);
            assert!((t.value(loss).item() - oracle).abs() < 1e-10);
            let direct = -(0..s).map(|i| si_snr(&ests[i], &refs[perm[i]]).unwrap()).sum::<f64>() / s as f64;
            assert!((direct - oracle).abs() < 1e-10);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn multires_is_scale_invariant_and_nonnegative(seed in 0u64..1000, beta in 0.01f64..100.0) {
        let loss = small_loss();
        let e = noise(96, seed);
        let r = noise(96, seed + 5000);
        let base = loss_value(&loss, &e, &r);
        let scaled: Vec<f64> = e.iter().map(|v| v * beta).collect();
        prop_assert!(base >= 0.0);
        prop_assert!((loss_value(&loss, &scaled, &r) - base).abs() <= 1e-9 * base.max(1.0));
    }

    #[test]
    fn si_snr_ignores_positive_scaling(seed in 0u64..1000, beta in 0.01f64..100.0) {
        let e = noise(64, seed);
        let r = noise(64, seed + 1);
        let scaled: Vec<f64> = e.iter().map(|v| v * beta).collect();
        prop_assert!((si_snr(&scaled, &r).unwrap() - si_snr(&e, &r).unwrap()).abs() < 1e-9);
    }
}
