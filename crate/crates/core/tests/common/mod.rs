//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

pub mod fitting;
pub mod invariants;
pub mod oracle;
pub mod planted;

use interpole::gradient::{expected_log_likelihood, grad_q, ThetaGradient};
use interpole::inference::{posteriors, Posteriors};
use interpole::iohmm::{Belief, Dataset, IohmmParams, Spaces, Trajectory};
use interpole::model::{FreezeMask, ThetaEstimate};
use interpole::policy::BoundaryPolicy;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Random distribution bounded away from the simplex boundary.
pub fn interior_row(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| 0.2 + rng.random::<f64>()).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|x| x / total).collect()
}

pub fn random_theta(rng: &mut ChaCha8Rng, ns: usize, na: usize, nz: usize) -> ThetaEstimate {
    let transition = (0..ns * na).flat_map(|_| interior_row(rng, ns)).collect();
    let observation = (0..na * ns).flat_map(|_| interior_row(rng, nz)).collect();
    let initial = Belief::new(interior_row(rng, ns)).unwrap();
    let params = IohmmParams::from_flat(ns, na, nz, transition, observation, initial).unwrap();
    let eta = 0.5 + 4.0 * rng.random::<f64>();
    let means = (0..na)
        .map(|_| {
            let raw: Vec<f64> = (0..ns).map(|_| rng.random::<f64>() * 2.0 - 0.5).collect();
            let excess = (raw.iter().sum::<f64>() - 1.0) / ns as f64;
            raw.iter().map(|x| x - excess).collect()
        })
        .collect();
    ThetaEstimate::new(params, BoundaryPolicy::new(eta, means).unwrap(), FreezeMask::none()).unwrap()
}

pub fn random_trajectory(rng: &mut ChaCha8Rng, na: usize, nz: usize, len: usize, terminal: bool) -> Trajectory {
    let steps = (0..len).map(|_| (rng.random_range(0..na), rng.random_range(0..nz))).collect();
    if terminal {
        Trajectory::terminal(steps)
    } else {
        Trajectory::new(steps)
    }
}

pub fn random_dataset(rng: &mut ChaCha8Rng, ns: usize, na: usize, nz: usize, n: usize, max_len: usize) -> Dataset {
    let trajectories = (0..n)
        .map(|_| {
            let len = rng.random_range(1..=max_len);
            let terminal = len > 1 && rng.random_bool(0.5);
            random_trajectory(rng, na, nz, len, terminal)
        })
        .collect();
    Dataset::new(Spaces::new(ns, na, nz).unwrap(), trajectories).unwrap()
}

pub fn all_posteriors(params: &IohmmParams, ds: &Dataset) -> Vec<Posteriors> {
    ds.trajectories.iter().map(|t| posteriors(t, params).unwrap()).collect()
}

/// Parameter blocks as plain vectors, for perturbation.
#[derive(Clone, Debug)]
pub struct Flat {
    pub t: Vec<f64>,
    pub o: Vec<f64>,
    pub b1: Vec<f64>,
    pub eta: f64,
    pub mu: Vec<Vec<f64>>,
}

impl Flat {
    pub fn of(theta: &ThetaEstimate) -> Self {
        Flat {
            t: theta.params.transition().to_vec(),
            o: theta.params.observation().to_vec(),
            b1: theta.params.initial().probs().to_vec(),
            eta: theta.policy.eta,
            mu: theta.policy.means.clone(),
        }
    }

    pub fn build(&self, like: &ThetaEstimate) -> ThetaEstimate {
        let p = &like.params;
        let params = IohmmParams::from_flat(
            p.n_states(),
            p.n_actions(),
            p.n_observations(),
            self.t.clone(),
            self.o.clone(),
            Belief::new(self.b1.clone()).unwrap(),
        )
        .unwrap();
        ThetaEstimate::new(params, BoundaryPolicy::new(self.eta, self.mu.clone()).unwrap(), like.frozen).unwrap()
    }
}

/// One tangent coordinate: block, row start, row width and index in row.
#[derive(Clone, Copy, Debug)]
pub enum Coord {
    T(usize, usize, usize),
    O(usize, usize, usize),
    B1(usize),
    Eta,
    Mu(usize, usize),
}

/// Moves `x` along `e_k − (1/n)·1` within one row, which keeps the row sum.
fn nudge_row(row: &mut [f64], k: usize, h: f64) {
    let n = row.len() as f64;
    for (i, v) in row.iter_mut().enumerate() {
        *v += if i == k { h * (1.0 - 1.0 / n) } else { -h / n };
    }
}

pub fn perturb(flat: &Flat, c: Coord, h: f64) -> Flat {
    let mut f = flat.clone();
    match c {
        Coord::T(start, width, k) => nudge_row(&mut f.t[start..start + width], k, h),
        Coord::O(start, width, k) => nudge_row(&mut f.o[start..start + width], k, h),
        Coord::B1(k) => nudge_row(&mut f.b1, k, h),
        Coord::Eta => f.eta += h,
        Coord::Mu(a, k) => nudge_row(&mut f.mu[a], k, h),
    }
    f
}

/// Analytic directional derivative of the tangent-projected gradient.
pub fn analytic(g: &ThetaGradient, c: Coord) -> f64 {
    let dir = |row: &[f64], k: usize| {
        let mean = row.iter().sum::<f64>() / row.len() as f64;
        row[k] - mean
    };
    match c {
        Coord::T(start, width, k) => dir(&g.d_transition[start..start + width], k),
        Coord::O(start, width, k) => dir(&g.d_observation[start..start + width], k),
        Coord::B1(k) => dir(&g.d_initial, k),
        Coord::Eta => g.d_eta,
        Coord::Mu(a, k) => dir(&g.d_means[a], k),
    }
}

pub fn coords(theta: &ThetaEstimate) -> Vec<Coord> {
    let p = &theta.params;
    let (ns, na, nz) = (p.n_states(), p.n_actions(), p.n_observations());
    let mut out = Vec::new();
    let f = theta.frozen;
    if !f.transition {
        for r in 0..ns * na {
            out.extend((0..ns).map(|k| Coord::T(r * ns, ns, k)));
        }
    }
    if !f.observation {
        for r in 0..na * ns {
            out.extend((0..nz).map(|k| Coord::O(r * nz, nz, k)));
        }
    }
    if !f.initial {
        out.extend((0..ns).map(Coord::B1));
    }
    if !f.eta {
        out.push(Coord::Eta);
    }
    if !f.means {
        for a in 0..na {
            out.extend((0..ns).map(|k| Coord::Mu(a, k)));
        }
    }
    out
}

/// Largest violation of `|analytic − numeric| ≤ max(rel·max(|a|,|n|), abs)`
/// over every unfrozen tangent coordinate, as a ratio to the allowance.
pub fn fd_check(theta: &ThetaEstimate, posts: &[Posteriors], ds: &Dataset, rel: f64, abs: f64) -> (f64, String) {
    let g = grad_q(theta, posts, ds).unwrap();
    let base = Flat::of(theta);
    let h = 1e-5;
    let mut worst = (0.0, String::new());
    for c in coords(theta) {
        let up = expected_log_likelihood(&perturb(&base, c, h).build(theta), posts, ds).unwrap();
        let dn = expected_log_likelihood(&perturb(&base, c, -h).build(theta), posts, ds).unwrap();
        let up2 = expected_log_likelihood(&perturb(&base, c, 2.0 * h).build(theta), posts, ds).unwrap();
        let dn2 = expected_log_likelihood(&perturb(&base, c, -2.0 * h).build(theta), posts, ds).unwrap();
        // fourth-order central difference
        let numeric = (8.0 * (up - dn) - (up2 - dn2)) / (12.0 * h);
        let exact = analytic(&g, c);
        let allowance = (rel * exact.abs().max(numeric.abs())).max(abs);
        let ratio = (exact - numeric).abs() / allowance;
        if ratio > worst.0 {
            worst = (ratio, format!("{c:?}: analytic {exact} numeric {numeric}"));
        }
    }
    worst
}

/// One finite-difference instance: `S ∈ {2, 3}`, `A = 3`, `Z = 2`, `τ ≤ 5`,
/// posteriors taken at either `θ` or an unrelated reference.
pub fn gradient_instance(seed: u64) -> (f64, String) {
    use rand::{Rng, SeedableRng};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ns = if seed % 2 == 0 { 2 } else { 3 };
    let ds = random_dataset(&mut rng, ns, 3, 2, 3, 5);
    let theta = random_theta(&mut rng, ns, 3, 2);
    let reference = if rng.random_bool(0.5) { theta.clone() } else { random_theta(&mut rng, ns, 3, 2) };
    let posts = all_posteriors(&reference.params, &ds);
    fd_check(&theta, &posts, &ds, 1e-5, 1e-8)
}
