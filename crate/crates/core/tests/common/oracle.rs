//! Brute-force references computed by enumerating every hidden state path.

use interpole::iohmm::{Dataset, IohmmParams, Trajectory};
use interpole::learner::Prior;
use interpole::model::ThetaEstimate;
use itertools::Itertools;

/// Joint probability of a state path `s_1 ..= s_{m+1}` and the observations.
fn path_weight(path: &[usize], observed: &[(usize, usize)], p: &IohmmParams) -> f64 {
    let mut w = p.initial()[path[0]];
    for (t, &(a, z)) in observed.iter().enumerate() {
        w *= p.t(path[t], a, path[t + 1]) * p.o(a, path[t + 1], z);
    }
    w
}

fn paths(ns: usize, len: usize) -> impl Iterator<Item = Vec<usize>> {
    (0..len).map(|_| 0..ns).multi_cartesian_product()
}

pub struct BrutePosteriors {
    pub gamma: Vec<Vec<f64>>,
    pub xi: Vec<Vec<f64>>,
    pub log_likelihood: f64,
}

pub fn posteriors(traj: &Trajectory, p: &IohmmParams) -> BrutePosteriors {
    let ns = p.n_states();
    let observed = traj.observed();
    let m = observed.len();
    let mut gamma = vec![vec![0.0; ns]; m + 1];
    let mut xi = vec![vec![0.0; ns * ns]; m];
    let mut total = 0.0;
    for path in paths(ns, m + 1) {
        let w = path_weight(&path, observed, p);
        total += w;
        for t in 0..=m {
            gamma[t][path[t]] += w;
        }
        for t in 0..m {
            xi[t][path[t] * ns + path[t + 1]] += w;
        }
    }
    gamma.iter_mut().flatten().for_each(|g| *g /= total);
    xi.iter_mut().flatten().for_each(|x| *x /= total);
    BrutePosteriors {
        gamma,
        xi,
        log_likelihood: total.ln(),
    }
}

/// Belief filter written out directly: `b'(s') ∝ Σ_s b(s) T(s,a,s') O(a,s',z)`.
pub fn beliefs(traj: &Trajectory, p: &IohmmParams) -> Vec<Vec<f64>> {
    let ns = p.n_states();
    let mut out = vec![p.initial().probs().to_vec()];
    for &(a, z) in traj.observed() {
        let b = out.last().unwrap();
        let raw: Vec<f64> = (0..ns)
            .map(|s2| (0..ns).map(|s| b[s] * p.t(s, a, s2)).sum::<f64>() * p.o(a, s2, z))
            .collect();
        let norm: f64 = raw.iter().sum();
        out.push(raw.iter().map(|x| x / norm).collect());
    }
    out
}

pub fn action_probs(theta: &ThetaEstimate, b: &[f64]) -> Vec<f64> {
    let w: Vec<f64> = theta
        .policy
        .means
        .iter()
        .map(|mu| {
            let d: f64 = mu.iter().zip(b).map(|(m, x)| (m - x) * (m - x)).sum();
            (-theta.policy.eta * d).exp()
        })
        .collect();
    let z: f64 = w.iter().sum();
    w.iter().map(|x| x / z).collect()
}

pub fn action_log_likelihood(theta: &ThetaEstimate, traj: &Trajectory) -> f64 {
    let bs = beliefs(traj, &theta.params);
    traj.steps
        .iter()
        .enumerate()
        .map(|(t, &(a, _))| action_probs(theta, &bs[t])[a].ln())
        .sum()
}

/// `Q(θ; θ̂)`: posterior-weighted complete-data log-likelihood of the
/// dynamics under `θ`, with path weights from `θ̂`, plus the action term.
pub fn q(theta: &ThetaEstimate, theta_hat: &IohmmParams, traj: &Trajectory) -> f64 {
    let p = &theta.params;
    let ns = p.n_states();
    let observed = traj.observed();
    let mut total = 0.0;
    let mut weighted = 0.0;
    for path in paths(ns, observed.len() + 1) {
        let w = path_weight(&path, observed, theta_hat);
        let mut complete = p.initial()[path[0]].ln();
        for (t, &(a, z)) in observed.iter().enumerate() {
            complete += p.t(path[t], a, path[t + 1]).ln() + p.o(a, path[t + 1], z).ln();
        }
        total += w;
        weighted += w * complete;
    }
    weighted / total + action_log_likelihood(theta, traj)
}

pub fn log_posterior(theta: &ThetaEstimate, dataset: &Dataset, prior: &Prior) -> f64 {
    let p = &theta.params;
    let data: f64 = dataset
        .trajectories
        .iter()
        .map(|traj| posteriors(traj, p).log_likelihood + action_log_likelihood(theta, traj))
        .sum();
    let dirichlet = |alpha: f64, values: &[f64]| (alpha - 1.0) * values.iter().map(|v| v.ln()).sum::<f64>();
    let mut log_prior = dirichlet(prior.dirichlet_t, p.transition())
        + dirichlet(prior.dirichlet_o, p.observation())
        + dirichlet(prior.dirichlet_b1, p.initial().probs());
    if let Some((mean, sd)) = prior.eta_log_normal {
        let l = theta.policy.eta.ln();
        log_prior += -0.5 * ((l - mean) / sd).powi(2) - l;
    }
    if let Some(sd) = prior.means_normal_sd {
        let c = 1.0 / p.n_states() as f64;
        log_prior -= theta.policy.means.iter().flatten().map(|m| (m - c).powi(2)).sum::<f64>() / (2.0 * sd * sd);
    }
    data + log_prior
}

/// Largest absolute disagreement between the library and enumeration on one
/// random instance, over γ, ξ, Q and the log posterior.
pub fn worst_error(theta: &ThetaEstimate, theta_hat: &ThetaEstimate, dataset: &Dataset, prior: &Prior) -> f64 {
    let posts = super::all_posteriors(&theta_hat.params, dataset);
    let mut worst: f64 = 0.0;
    let mut q_brute = 0.0;
    for (traj, post) in dataset.trajectories.iter().zip(&posts) {
        let brute = posteriors(traj, &theta_hat.params);
        for (a, b) in post.gamma.iter().flatten().zip(brute.gamma.iter().flatten()) {
            worst = worst.max((a - b).abs());
        }
        for (a, b) in post.xi.iter().flatten().zip(brute.xi.iter().flatten()) {
            worst = worst.max((a - b).abs());
        }
        worst = worst.max((post.log_likelihood - brute.log_likelihood).abs());
        q_brute += q(theta, &theta_hat.params, traj);
    }
    let q_lib = interpole::gradient::expected_log_likelihood(theta, &posts, dataset).unwrap();
    worst = worst.max((q_lib - q_brute).abs());
    let lp_lib = interpole::learner::log_posterior(theta, dataset, prior).unwrap();
    worst.max((lp_lib - log_posterior(theta, dataset, prior)).abs())
}
