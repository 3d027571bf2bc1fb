//! A screening cohort where a known fraction of trajectories conclude before
//! testing and only test afterwards: exactly the belated pattern.

use interpole::iohmm::{Dataset, IohmmParams, Spaces, Trajectory};
use interpole::model::{FreezeMask, ThetaEstimate};
use interpole::policy::BoundaryPolicy;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TEST: usize = 0;
const NONE: usize = 2;

/// States healthy/diseased; actions test, conclude-negative, conclude-positive;
/// observations negative, positive, none. Testing is 95% accurate and the
/// conclusions are uninformative.
pub fn screening_model() -> ThetaEstimate {
    let identity = vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]; 3];
    let transition = (0..2).map(|s| identity.iter().map(|a| a[s].clone()).collect()).collect();
    let silent = vec![vec![0.0, 0.0, 1.0]; 2];
    let observation = vec![vec![vec![0.95, 0.05, 0.0], vec![0.05, 0.95, 0.0]], silent.clone(), silent];
    let params = IohmmParams::new(transition, observation, vec![0.5, 0.5]).unwrap();
    let policy = BoundaryPolicy::new(10.0, vec![vec![0.5, 0.5], vec![1.2, -0.2], vec![-0.2, 1.2]]).unwrap();
    ThetaEstimate::new(params, policy, FreezeMask::none()).unwrap()
}

/// `n` trajectories, each belated with probability `rate`. Returns the data
/// and which trajectories were planted.
pub fn planted_cohort(n: usize, rate: f64, seed: u64) -> (Dataset, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut planted = Vec::with_capacity(n);
    let trajectories = (0..n)
        .map(|_| {
            let belated = rng.random_bool(rate);
            planted.push(belated);
            let diseased = rng.random_bool(0.5);
            let correct = rng.random_bool(0.95);
            let z = if diseased == correct { 1 } else { 0 };
            let conclusion = 1 + z;
            let steps = if belated {
                vec![(1 + rng.random_range(0..2), NONE), (TEST, z), (conclusion, NONE)]
            } else {
                vec![(TEST, z), (conclusion, NONE), (conclusion, NONE)]
            };
            Trajectory::new(steps).with_tag("arm", if belated { "planted" } else { "control" })
        })
        .collect();
    (Dataset::new(Spaces::new(2, 3, 3).unwrap(), trajectories).unwrap(), planted)
}

/// Exact (Clopper-Pearson) two-sided 95% interval for `k` successes in `n`.
pub fn clopper_pearson(k: usize, n: usize) -> (f64, f64) {
    use statrs::distribution::{Beta, ContinuousCDF};
    let (k, n) = (k as f64, n as f64);
    let lower = if k == 0.0 { 0.0 } else { Beta::new(k, n - k + 1.0).unwrap().inverse_cdf(0.025) };
    let upper = if k == n { 1.0 } else { Beta::new(k + 1.0, n - k).unwrap().inverse_cdf(0.975) };
    (lower, upper)
}
