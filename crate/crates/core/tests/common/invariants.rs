//! Probability-simplex invariants, each returning the largest violation
//! found on one randomly drawn instance.

use interpole::audit::{belief_change, counterfactual_updates};
use interpole::iohmm::{belief_update, Belief};
use interpole::learner::{project, project_simplex, RawTheta};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{all_posteriors, interior_row, random_dataset, random_theta};

fn simplex_violation(p: &[f64]) -> f64 {
    let negative = p.iter().map(|x| (-x).max(0.0)).fold(0.0, f64::max);
    negative.max((p.iter().sum::<f64>() - 1.0).abs())
}

fn sizes(rng: &mut ChaCha8Rng) -> (usize, usize, usize) {
    (rng.random_range(2..=4), rng.random_range(2..=4), rng.random_range(2..=4))
}

pub fn belief_update_violation(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (ns, na, nz) = sizes(&mut rng);
    let theta = random_theta(&mut rng, ns, na, nz);
    let b = Belief::new(interior_row(&mut rng, ns)).unwrap();
    let (a, z) = (rng.random_range(0..na), rng.random_range(0..nz));
    simplex_violation(belief_update(&b, a, z, &theta.params).unwrap().probs())
}

pub fn action_distribution_violation(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (ns, na, nz) = sizes(&mut rng);
    let mut theta = random_theta(&mut rng, ns, na, nz);
    theta.policy.eta *= 1.0 + 50.0 * rng.random::<f64>();
    let b = interior_row(&mut rng, ns);
    let probs = theta.policy.probs(&b);
    let logs = theta.policy.log_probs(&b);
    let consistency = probs.iter().zip(&logs).map(|(p, l)| (p - l.exp()).abs()).fold(0.0, f64::max);
    simplex_violation(&probs).max(consistency)
}

/// `Σ_{s'} ξ_t(s,s') = γ_t(s)`, `Σ_s ξ_t(s,s') = γ_{t+1}(s')` and every γ_t on the simplex.
pub fn marginalization_violation(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (ns, na, nz) = sizes(&mut rng);
    let theta = random_theta(&mut rng, ns, na, nz);
    let dataset = random_dataset(&mut rng, ns, na, nz, 4, 8);
    let mut worst: f64 = 0.0;
    for post in all_posteriors(&theta.params, &dataset) {
        for g in &post.gamma {
            worst = worst.max(simplex_violation(g));
        }
        for (t, xi) in post.xi.iter().enumerate() {
            for s in 0..ns {
                let row: f64 = (0..ns).map(|s2| xi[s * ns + s2]).sum();
                let col: f64 = (0..ns).map(|s0| xi[s0 * ns + s]).sum();
                worst = worst.max((row - post.gamma[t][s]).abs()).max((col - post.gamma[t + 1][s]).abs());
            }
        }
    }
    worst
}

/// Probability-weighted counterfactual posteriors average to the predicted
/// belief, their probabilities sum to one, and the factual branch equals
/// the ordinary update.
pub fn counterfactual_violation(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (ns, na, nz) = sizes(&mut rng);
    let theta = random_theta(&mut rng, ns, na, nz);
    let p = &theta.params;
    let b = Belief::new(interior_row(&mut rng, ns)).unwrap();
    let a = rng.random_range(0..na);
    let cfs = counterfactual_updates(&b, a, p).unwrap();
    let mut worst = (cfs.iter().map(|c| c.probability).sum::<f64>() - 1.0).abs();
    let predicted = p.predict(b.probs(), a);
    for s in 0..ns {
        let mixed: f64 = cfs
            .iter()
            .map(|c| c.probability * c.posterior.as_ref().map_or(0.0, |q| q[s]))
            .sum();
        worst = worst.max((mixed - predicted[s]).abs());
    }
    let z = rng.random_range(0..nz);
    let factual = belief_update(&b, a, z, p).unwrap();
    let branch = cfs[z].posterior.as_ref().unwrap();
    for s in 0..ns {
        worst = worst.max((factual[s] - branch[s]).abs());
    }
    worst
}

/// Projection lands on the feasible set and is no farther from the input
/// than random feasible points.
pub fn projection_violation(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=6);
    let v: Vec<f64> = (0..n).map(|_| 3.0 * rng.random::<f64>() - 1.5).collect();
    let p = project_simplex(&v);
    let mut worst = simplex_violation(&p);
    let dist = |q: &[f64]| q.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    for _ in 0..20 {
        let q = interior_row(&mut rng, n);
        worst = worst.max(dist(&p) - dist(&q));
    }

    let theta = random_theta(&mut rng, 3, 3, 2);
    let mut raw = RawTheta::from_theta(&theta);
    raw.transition.iter_mut().chain(raw.observation.iter_mut()).chain(raw.initial.iter_mut()).chain(raw.means.iter_mut().flatten()).for_each(|x| *x += rng.random::<f64>() - 0.5);
    raw.eta = -1.0;
    let projected = project(&raw, &theta).unwrap();
    let pp = &projected.params;
    for row in pp.transition().chunks(3).chain(pp.observation().chunks(2)) {
        worst = worst.max(simplex_violation(row));
    }
    worst = worst.max(simplex_violation(pp.initial().probs())).max(projected.policy.eta.max(0.0) - projected.policy.eta);
    for mu in &projected.policy.means {
        worst = worst.max((mu.iter().sum::<f64>() - 1.0).abs());
    }
    worst.max(0.0)
}

/// Symmetry of the belief-change measure and zero exactly on equal inputs.
pub fn belief_change_violation(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=5);
    let (x, y) = (interior_row(&mut rng, n), interior_row(&mut rng, n));
    let mut worst = (belief_change(&x, &y) - belief_change(&y, &x)).abs();
    worst = worst.max(belief_change(&x, &x));
    if x != y && belief_change(&x, &y) <= 0.0 {
        worst = f64::INFINITY;
    }
    worst
}
