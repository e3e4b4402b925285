use csnet_core::tensor::{Array, Graph};
use csnet_core::topk::{build_cost, hard_topk, sinkhorn, soft_indicator, TopkConfig};
use proptest::prelude::*;

fn omega(scores: &[f64], k: usize, cfg: &TopkConfig) -> (Vec<f64>, bool) {
    let g = Graph::new();
    let plan = sinkhorn(build_cost(g.constant(Array::from_vec(scores.to_vec()))).unwrap(), k, cfg).unwrap();
    let converged = plan.converged;
    (soft_indicator(&plan).unwrap().value().data().to_vec(), converged)
}

fn cfg(epsilon: f64) -> TopkConfig {
    TopkConfig {
        epsilon,
        max_iters: 2000,
        tol: 1e-9,
    }
}

fn scores_and_k() -> impl Strategy<Value = (Vec<f64>, usize)> {
    (3usize..40).prop_flat_map(|n| (prop::collection::vec(-5.0f64..5.0, n), 1..n))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn indicator_sums_to_k_and_stays_in_unit_range((s, k) in scores_and_k(), eps in 0.01f64..1.0) {
        let (om, converged) = omega(&s, k, &cfg(eps));
        prop_assume!(converged);
        let total: f64 = om.iter().sum();
        prop_assert!((total - k as f64).abs() < 1e-6, "sum {total}, k {k}");
        // rows hold 1/n to within tol, so each weight to within n·tol
        let slack = s.len() as f64 * 1e-9;
        prop_assert!(om.iter().all(|&w| (-slack..=1.0 + slack).contains(&w)));
    }

    #[test]
    fn indicator_is_monotone_in_score((s, k) in scores_and_k(), eps in 0.01f64..1.0) {
        let (om, _) = omega(&s, k, &cfg(eps));
        for i in 0..s.len() {
            for j in 0..s.len() {
                if s[i] > s[j] {
                    prop_assert!(om[i] >= om[j] - 1e-12, "s {} > {} but omega {} < {}", s[i], s[j], om[i], om[j]);
                }
            }
        }
    }

    #[test]
    fn permuting_scores_permutes_the_indicator((s, k) in scores_and_k(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut perm: Vec<usize> = (0..s.len()).collect();
        perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let permuted: Vec<f64> = perm.iter().map(|&i| s[i]).collect();
        let (om, _) = omega(&s, k, &cfg(0.1));
        let (om_p, _) = omega(&permuted, k, &cfg(0.1));
        for (at, &i) in perm.iter().enumerate() {
            prop_assert!((om_p[at] - om[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn own_score_raises_own_weight((s, k) in scores_and_k(), pick in any::<prop::sample::Index>()) {
        let i = pick.index(s.len());
        let g = Graph::new();
        let scores = g.param(Array::from_vec(s.clone()));
        let plan = sinkhorn(build_cost(scores).unwrap(), k, &cfg(0.1)).unwrap();
        let om = soft_indicator(&plan).unwrap();
        let grads = g.backward(om.gather(0, &[i]).unwrap().sum()).unwrap();
        let d = grads.get(&scores).unwrap().data()[i];
        // saturated weights have derivatives at the solver's noise floor
        prop_assert!(d >= -1e-7, "d omega_{i} / d s_{i} = {d}");
    }

    #[test]
    fn hard_topk_takes_the_largest((s, k) in scores_and_k()) {
        let picked = hard_topk(&s, k).unwrap();
        prop_assert_eq!(picked.len(), k);
        let threshold = picked.iter().map(|&i| s[i]).fold(f64::INFINITY, f64::min);
        let outside = (0..s.len()).filter(|i| !picked.contains(i)).map(|i| s[i]).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(threshold >= outside);
    }
}

#[test]
fn equal_scores_share_the_mass_evenly() {
    for (n, k) in [(8, 2), (16, 4), (64, 8)] {
        let (om, converged) = omega(&vec![0.3; n], k, &cfg(0.05));
        assert!(converged);
        for w in om {
            assert!((w - k as f64 / n as f64).abs() < 1e-9, "n={n} k={k} w={w}");
        }
    }
}

#[test]
fn small_epsilon_approaches_the_hard_indicator() {
    let s = [0.9, 0.1, 0.5, 0.7, 0.3, 0.2];
    let (om, converged) = omega(&s, 3, &cfg(1e-3));
    assert!(converged);
    let hard = [1.0, 0.0, 0.0, 1.0, 0.0, 0.0];
    let mut expect = hard;
    expect[2] = 1.0;
    for (w, e) in om.iter().zip(expect) {
        assert!((w - e).abs() < 1e-6, "{om:?}");
    }
}
