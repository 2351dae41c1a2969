mod common;

use passk_lab::experiments::commands::random_case;
use passk_lab::objectives::{alpha, gap, grad_j1_exact, grad_jk_exact, jk_from_j1};
use passk_lab::{make_bandit, TrajectorySet};
use proptest::prelude::*;

fn correct_tokens(set: &TrajectorySet) -> Vec<Vec<usize>> {
    set.iter().map(|y| y.tokens().to_vec()).collect()
}

#[test]
fn gradient_of_jk_is_alpha_times_gradient_of_j1() {
    for index in 0..100 {
        let (policy, verifier, k) = random_case(7, index, &[2, 4, 8, 16]).unwrap();
        let (v, t) = (policy.shape().vocab(), policy.shape().horizon());
        let correct = correct_tokens(verifier.correct_set());
        let x = policy.params().as_slice();
        let gk = grad_jk_exact(&policy, &verifier, k).unwrap();
        let oracle = common::analytic_grad_jk(v, t, x, &correct, k);
        let err = common::componentwise_rel_err(gk.as_slice(), &oracle, 1e-6);
        assert!(err < 1e-10, "case {index}: componentwise {err}");

        let (j1, _) = common::masses(v, t, x, &correct);
        let g1 = grad_j1_exact(&policy, &verifier).unwrap();
        let scaled: Vec<f64> = g1.iter().map(|g| common::alpha(j1, k) * g).collect();
        assert!(
            common::componentwise_rel_err(gk.as_slice(), &scaled, 1e-6) < 1e-10,
            "case {index}"
        );
    }
}

#[test]
fn grad_jk_matches_finite_differences_on_fifty_cases() {
    for index in 0..50 {
        let (policy, verifier, k) = random_case(11, index, &[2, 4, 8, 16]).unwrap();
        let (v, t) = (policy.shape().vocab(), policy.shape().horizon());
        let correct = correct_tokens(verifier.correct_set());
        let fd = common::fd_grad_jk(v, t, policy.params().as_slice(), &correct, k, 1e-5);
        let gk = grad_jk_exact(&policy, &verifier, k).unwrap();
        let constant = correct.is_empty() || correct.len() == policy.shape().space_size().unwrap();
        assert!(
            common::grads_agree(gk.as_slice(), &fd, 1e-6, constant),
            "case {index}: {}",
            common::rel_err(gk.as_slice(), &fd)
        );
    }
}

#[test]
fn saturation_drives_the_gradient_to_zero() {
    let env = make_bandit(10, &[0], None).unwrap();
    for k in [2usize, 4, 8, 16] {
        let threshold = 1.0 - (1e-3 / k as f64).powf(1.0 / (k as f64 - 1.0));
        let mut last = f64::INFINITY;
        for j1 in [0.5, 0.9, 0.99, 0.999, 0.9999] {
            let e = env.with_correct_mass(j1).unwrap();
            let n1 = grad_j1_exact(&e.policy, &e.verifier).unwrap().norm();
            let nk = grad_jk_exact(&e.policy, &e.verifier, k).unwrap().norm();
            assert!(nk < last);
            last = nk;
            if j1 > threshold {
                assert!(nk / n1 < 1e-3, "k={k} j1={j1}");
            }
        }
    }
}

proptest! {
    #[test]
    fn alpha_lies_in_zero_k_and_decreases(j1 in 0.0f64..=1.0, step in 0.0f64..0.5, k in 1usize..=64) {
        let a = alpha(j1, k).unwrap();
        prop_assert!((0.0..=k as f64).contains(&a));
        let j2 = (j1 + step).min(1.0);
        if k >= 2 {
            prop_assert!(alpha(j2, k).unwrap() <= a);
        }
    }

    #[test]
    fn gap_is_jk_minus_j1(p in 0.0f64..=1.0, k in 1usize..=64) {
        let direct = jk_from_j1(p, k).unwrap() - p;
        prop_assert!((gap(p, k).unwrap() - direct).abs() <= 1e-15);
        prop_assert!(gap(p, k).unwrap() >= 0.0);
    }

    #[test]
    fn jk_matches_repeated_multiplication(j1 in 0.0f64..=1.0, k in 1usize..=64) {
        prop_assert!((jk_from_j1(j1, k).unwrap() - common::jk(j1, k)).abs() <= 4.0 * f64::EPSILON);
        let a = alpha(j1, k).unwrap();
        prop_assert!((a - common::alpha(j1, k)).abs() <= 4.0 * f64::EPSILON * k as f64);
    }
}

#[test]
fn gap_identity_on_a_dense_grid() {
    for k in [1usize, 2, 3, 4, 8, 16, 64] {
        for i in 0..=10_000 {
            let p = i as f64 / 10_000.0;
            let err = (gap(p, k).unwrap() - (jk_from_j1(p, k).unwrap() - p)).abs();
            assert!(err <= 1e-15, "p={p} k={k} err={err}");
        }
    }
}
