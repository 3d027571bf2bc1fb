//! Property suite over random instances: simplex invariants of the belief
//! update, the policy, smoothing, counterfactuals and projection.

mod common;

use common::invariants;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn belief_update_stays_on_the_simplex(seed in any::<u64>()) {
        prop_assert!(invariants::belief_update_violation(seed) < 1e-10);
    }

    #[test]
    fn action_distributions_normalize(seed in any::<u64>()) {
        prop_assert!(invariants::action_distribution_violation(seed) < 1e-10);
    }

    #[test]
    fn smoothing_marginals_are_consistent(seed in any::<u64>()) {
        prop_assert!(invariants::marginalization_violation(seed) < 1e-10);
    }

    #[test]
    fn counterfactuals_form_a_martingale(seed in any::<u64>()) {
        prop_assert!(invariants::counterfactual_violation(seed) < 1e-10);
    }

    #[test]
    fn projection_is_feasible_and_nearest(seed in any::<u64>()) {
        prop_assert!(invariants::projection_violation(seed) < 1e-9);
    }

    #[test]
    fn belief_change_is_a_metric_on_pairs(seed in any::<u64>()) {
        prop_assert!(invariants::belief_change_violation(seed) < 1e-12);
    }

    #[test]
    fn zero_inverse_temperature_is_uniform(n in 2usize..5, a in 2usize..5, x in 0.0f64..1.0) {
        let pol = interpole::BoundaryPolicy::uniform(n, a, 0.0);
        let b: Vec<f64> = (0..n).map(|i| if i == 0 { x } else { (1.0 - x) / (n - 1) as f64 }).collect();
        for p in pol.probs(&b) {
            prop_assert!((p - 1.0 / a as f64).abs() < 1e-12);
        }
    }
}
