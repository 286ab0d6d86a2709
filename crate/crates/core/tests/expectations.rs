//! Closed-form mean-field expectations against brute-force enumeration.

use diffuco_core::diffusion::{
    and_expected_log_prob, and_log_prob_unnormalized, cnd_expected_log_prob, cnd_log_prob, entropy, mf_log_prob,
    BernoulliField,
};
use diffuco_core::energy::{build_energy, expected_energy, Assignment, EnergyPoly, DEFAULT_A, DEFAULT_B};
use diffuco_core::graph::{gen_er, ProblemKind};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ATOL: f64 = 1e-10;

fn weights(q: &BernoulliField) -> Vec<(Assignment, f64)> {
    let n = q.len();
    (0..1u64 << n)
        .map(|c| {
            let x = Assignment::from_index(c, n);
            let w = mf_log_prob(q, &x).unwrap().exp();
            (x, w)
        })
        .collect()
}

fn random_field(rng: &mut ChaCha8Rng, n: usize) -> BernoulliField {
    let probs = (0..n)
        .map(|_| match rng.gen_range(0..10) {
            0 => 1e-6,
            1 => 1.0 - 1e-6,
            _ => rng.gen_range(0.001..0.999),
        })
        .collect();
    BernoulliField::new(probs).unwrap()
}

fn random_energy(rng: &mut ChaCha8Rng, n: usize) -> EnergyPoly {
    let kind = ProblemKind::ALL[rng.gen_range(0..ProblemKind::ALL.len())];
    let g = gen_er(n, rng.gen_range(0.1..0.9), rng.gen()).unwrap();
    build_energy(kind, &g, DEFAULT_A, DEFAULT_B).unwrap()
}

#[test]
fn closed_forms_match_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..500 {
        let n = rng.gen_range(1..=10);
        let e = random_energy(&mut rng, n);
        let q = random_field(&mut rng, n);
        let ws = weights(&q);

        let oracle: f64 = ws.iter().map(|(x, w)| w * e.value(x).unwrap()).sum();
        let got = expected_energy(&e, &q).unwrap();
        assert!((got - oracle).abs() <= ATOL, "case {case}: energy {got} vs {oracle}");

        let oracle: f64 = ws.iter().map(|(_, w)| if *w > 0.0 { -w * w.ln() } else { 0.0 }).sum();
        let got = entropy(&q);
        assert!((got - oracle).abs() <= ATOL, "case {case}: entropy {got} vs {oracle}");

        let beta_t = rng.gen_range(0.01..0.5);
        let x_t = Assignment::from_index(rng.gen_range(0..1u64 << n), n);
        let oracle: f64 = ws.iter().map(|(x, w)| w * cnd_log_prob(&x_t, x, beta_t).unwrap()).sum();
        let got = cnd_expected_log_prob(&x_t, &q, beta_t).unwrap();
        assert!((got - oracle).abs() <= ATOL, "case {case}: cnd {got} vs {oracle}");

        let beta = rng.gen_range(0.1..10.0);
        let beta_t = if case % 7 == 0 { 0.0 } else { rng.gen_range(0.0..1.0) };
        let oracle: f64 = ws
            .iter()
            .map(|(x, w)| w * and_log_prob_unnormalized(x, &e, beta, beta_t).unwrap())
            .sum();
        let got = and_expected_log_prob(&q, &e, beta, beta_t).unwrap();
        assert!((got - oracle).abs() <= ATOL, "case {case}: and {got} vs {oracle}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn corner_fields_reduce_to_values(seed in any::<u64>(), n in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = random_energy(&mut rng, n);
        let x = Assignment::from_index(rng.gen_range(0..1u64 << n), n);
        let q = BernoulliField::degenerate(&x);
        prop_assert!((expected_energy(&e, &q).unwrap() - e.value(&x).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn entropy_is_bounded(probs in proptest::collection::vec(0.0f64..=1.0, 1..40)) {
        let n = probs.len() as f64;
        let h = entropy(&BernoulliField::new(probs).unwrap());
        prop_assert!(h >= 0.0 && h <= n * std::f64::consts::LN_2 + 1e-12);
    }

    #[test]
    fn energy_gradient_matches_differences(seed in any::<u64>(), n in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = random_energy(&mut rng, n);
        let q: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..0.95)).collect();
        let mut grad = vec![0.0; n];
        e.expected_grad(&q, 1.0, &mut grad);
        for i in 0..n {
            let mut hi = q.clone();
            let mut lo = q.clone();
            hi[i] += 1e-6;
            lo[i] -= 1e-6;
            // the expectation is affine in each coordinate
            let fd = (e.expected(&hi).unwrap() - e.expected(&lo).unwrap()) / 2e-6;
            prop_assert!((fd - grad[i]).abs() < 1e-6 * (1.0 + grad[i].abs()));
        }
    }
}
