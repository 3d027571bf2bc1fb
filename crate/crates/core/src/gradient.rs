//! Expected complete-data log-likelihood `Q(θ; θ̂)` and its analytic gradient.
//!
//! `Q` splits into observation terms, which are weighted by the smoothed
//! marginals `γ`, `ξ` computed under `θ̂`, and action terms `log π(a_t|b_t)`,
//! where `b_t` is the belief computed under `θ` itself. The action terms make
//! `T`, `O` and `b1` enter through the whole belief recursion; their gradient
//! is accumulated with one reverse sweep per trajectory (backpropagation
//! through time), carrying the adjoint `λ_t = ∂(Σ_{t'≥t} log π)/∂b_t`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::inference::Posteriors;
use crate::iohmm::{Belief, Dataset, IohmmParams, Trajectory, ZERO_LIKELIHOOD};
use crate::model::{FreezeMask, ThetaEstimate};
use crate::policy::BoundaryPolicy;

/// Floor applied to parameter entries in ratio terms of the gradient.
pub const PARAM_FLOOR: f64 = 1e-12;

/// Partial derivatives of `Q` with the same layout as the parameter blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaGradient {
    pub d_transition: Vec<f64>,
    pub d_observation: Vec<f64>,
    pub d_initial: Vec<f64>,
    pub d_eta: f64,
    pub d_means: Vec<Vec<f64>>,
}

impl ThetaGradient {
    pub fn zeros(theta: &ThetaEstimate) -> Self {
        let p = &theta.params;
        ThetaGradient {
            d_transition: vec![0.0; p.transition().len()],
            d_observation: vec![0.0; p.observation().len()],
            d_initial: vec![0.0; p.n_states()],
            d_eta: 0.0,
            d_means: vec![vec![0.0; p.n_states()]; p.n_actions()],
        }
    }

    pub fn add(&mut self, other: &ThetaGradient) {
        let add = |x: &mut [f64], y: &[f64]| x.iter_mut().zip(y).for_each(|(a, b)| *a += b);
        add(&mut self.d_transition, &other.d_transition);
        add(&mut self.d_observation, &other.d_observation);
        add(&mut self.d_initial, &other.d_initial);
        self.d_eta += other.d_eta;
        for (m, o) in self.d_means.iter_mut().zip(&other.d_means) {
            add(m, o);
        }
    }

    pub fn zero_frozen(&mut self, frozen: FreezeMask) {
        if frozen.transition {
            self.d_transition.iter_mut().for_each(|x| *x = 0.0);
        }
        if frozen.observation {
            self.d_observation.iter_mut().for_each(|x| *x = 0.0);
        }
        if frozen.initial {
            self.d_initial.iter_mut().for_each(|x| *x = 0.0);
        }
        if frozen.eta {
            self.d_eta = 0.0;
        }
        if frozen.means {
            self.d_means.iter_mut().flatten().for_each(|x| *x = 0.0);
        }
    }

    /// Removes the component normal to each sum-to-one constraint, so every
    /// row of `T`, `O`, `b1` and every mean vector has gradient summing to 0.
    pub fn project_tangent(&mut self, n_states: usize, n_observations: usize) {
        fn center(row: &mut [f64]) {
            let mean = row.iter().sum::<f64>() / row.len() as f64;
            row.iter_mut().for_each(|x| *x -= mean);
        }
        self.d_transition.chunks_mut(n_states).for_each(center);
        self.d_observation.chunks_mut(n_observations).for_each(center);
        center(&mut self.d_initial);
        self.d_means.iter_mut().for_each(|m| center(m));
    }

    pub fn is_finite(&self) -> std::result::Result<(), &'static str> {
        let ok = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !ok(&self.d_transition) {
            return Err("transition");
        }
        if !ok(&self.d_observation) {
            return Err("observation");
        }
        if !ok(&self.d_initial) {
            return Err("initial");
        }
        if !self.d_eta.is_finite() {
            return Err("eta");
        }
        if !self.d_means.iter().all(|m| ok(m)) {
            return Err("means");
        }
        Ok(())
    }
}

/// Beliefs `b_1 ..= b_{m+1}` as raw vectors with the normalizer of each step.
pub(crate) struct BeliefRun {
    pub beliefs: Vec<Vec<f64>>,
    pub norms: Vec<f64>,
}

pub(crate) fn belief_run(traj: &Trajectory, params: &IohmmParams) -> Result<BeliefRun> {
    let observed = traj.observed();
    let n = params.n_states();
    let mut beliefs = Vec::with_capacity(observed.len() + 1);
    let mut norms = Vec::with_capacity(observed.len());
    beliefs.push(params.initial().probs().to_vec());
    for (t, &(a, z)) in observed.iter().enumerate() {
        let mut next = vec![0.0; n];
        let total = params.update_weights(&beliefs[t], a, z, &mut next);
        if total <= ZERO_LIKELIHOOD || !total.is_finite() {
            return Err(Error::ZeroLikelihood {
                step: t,
                action: a,
                observation: z,
            });
        }
        next.iter_mut().for_each(|x| *x /= total);
        norms.push(total);
        beliefs.push(next);
    }
    Ok(BeliefRun { beliefs, norms })
}

fn xlogy(weight: f64, p: f64, block: &'static str) -> Result<f64> {
    if weight == 0.0 {
        return Ok(0.0);
    }
    if p <= 0.0 {
        return Err(Error::NonFiniteValue {
            block,
            detail: format!("log(0) with posterior weight {weight}"),
        });
    }
    Ok(weight * p.ln())
}

fn check_posteriors(posteriors: &[Posteriors], dataset: &Dataset) -> Result<()> {
    if posteriors.len() != dataset.len() {
        return Err(Error::DimensionMismatch {
            what: "posteriors per trajectory",
            expected: dataset.len(),
            got: posteriors.len(),
        });
    }
    for (i, (post, traj)) in posteriors.iter().zip(&dataset.trajectories).enumerate() {
        let m = traj.observed().len();
        if post.gamma.len() != m + 1 || post.xi.len() != m {
            return Err(Error::DimensionMismatch {
                what: "posterior length",
                expected: m + 1,
                got: post.gamma.len(),
            }
            .in_trajectory(i));
        }
    }
    Ok(())
}

/// Sum of `log π(a_t|b_t)` over the actions of one trajectory.
pub(crate) fn action_log_likelihood(traj: &Trajectory, beliefs: &[Vec<f64>], policy: &BoundaryPolicy) -> f64 {
    traj.actions()
        .enumerate()
        .map(|(t, a)| policy.log_probs(&beliefs[t])[a])
        .sum()
}

fn trajectory_q(theta: &ThetaEstimate, post: &Posteriors, traj: &Trajectory) -> Result<f64> {
    let params = &theta.params;
    let n = params.n_states();
    let run = belief_run(traj, params)?;
    let mut q = action_log_likelihood(traj, &run.beliefs, &theta.policy);
    for s in 0..n {
        q += xlogy(post.gamma[0][s], params.initial()[s], "initial")?;
    }
    for (t, &(a, z)) in traj.observed().iter().enumerate() {
        for s in 0..n {
            for s2 in 0..n {
                q += xlogy(post.xi[t][s * n + s2], params.t(s, a, s2), "transition")?;
            }
        }
        for s2 in 0..n {
            q += xlogy(post.gamma[t + 1][s2], params.o(a, s2, z), "observation")?;
        }
    }
    Ok(q)
}

/// `Q(θ; θ̂)` where `posteriors` were computed under `θ̂`, one per trajectory.
pub fn expected_log_likelihood(theta: &ThetaEstimate, posteriors: &[Posteriors], dataset: &Dataset) -> Result<f64> {
    check_posteriors(posteriors, dataset)?;
    let parts: Vec<Result<f64>> = dataset
        .trajectories
        .par_iter()
        .zip(posteriors.par_iter())
        .enumerate()
        .map(|(i, (traj, post))| trajectory_q(theta, post, traj).map_err(|e| e.in_trajectory(i)))
        .collect();
    let mut total = 0.0;
    for part in parts {
        total += part?;
    }
    Ok(total)
}

/// Per-step Jacobians `∇_{b_t} b_{t+1}` (row `i`, column `j` is
/// `∂b_{t+1}(i)/∂b_t(j)`), one per observed step.
pub fn belief_jacobians(beliefs: &[Belief], traj: &Trajectory, params: &IohmmParams) -> Result<Vec<Vec<Vec<f64>>>> {
    let observed = traj.observed();
    if beliefs.len() != observed.len() + 1 {
        return Err(Error::DimensionMismatch {
            what: "belief path",
            expected: observed.len() + 1,
            got: beliefs.len(),
        });
    }
    let n = params.n_states();
    let mut out = Vec::with_capacity(observed.len());
    let mut buf = vec![0.0; n];
    for (t, &(a, z)) in observed.iter().enumerate() {
        let b = beliefs[t].probs();
        let norm = params.update_weights(b, a, z, &mut buf);
        if norm <= ZERO_LIKELIHOOD || !norm.is_finite() {
            return Err(Error::ZeroLikelihood {
                step: t,
                action: a,
                observation: z,
            });
        }
        let next: Vec<f64> = buf.iter().map(|x| x / norm).collect();
        out.push(step_jacobian(b, &next, norm, a, z, params));
    }
    Ok(out)
}

fn step_jacobian(_b: &[f64], next: &[f64], norm: f64, a: usize, z: usize, params: &IohmmParams) -> Vec<Vec<f64>> {
    let n = params.n_states();
    // c_j = Σ_x' T(x'|j,a) O(z|a,x')
    let c: Vec<f64> = (0..n)
        .map(|j| (0..n).map(|x| params.t(j, a, x) * params.o(a, x, z)).sum())
        .collect();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| (params.t(j, a, i) * params.o(a, i, z) - next[i] * c[j]) / norm)
                .collect()
        })
        .collect()
}

/// Matrix product `∇_{b_from} b_to` of the step Jacobians; identity when
/// `from == to`.
pub fn jacobian_product(jacobians: &[Vec<Vec<f64>>], from: usize, to: usize) -> Vec<Vec<f64>> {
    let n = jacobians.first().map_or(0, Vec::len);
    let mut acc: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for jac in &jacobians[from..to] {
        // acc <- jac · acc
        acc = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| (0..n).map(|k| jac[i][k] * acc[k][j]).sum())
                    .collect()
            })
            .collect();
    }
    acc
}

fn trajectory_grad(theta: &ThetaEstimate, post: &Posteriors, traj: &Trajectory) -> Result<ThetaGradient> {
    let params = &theta.params;
    let policy = &theta.policy;
    let n = params.n_states();
    let na = params.n_actions();
    let nz = params.n_observations();
    let mut grad = ThetaGradient::zeros(theta);
    let run = belief_run(traj, params)?;
    let observed = traj.observed();
    let m = observed.len();

    // observation-likelihood terms
    for s in 0..n {
        grad.d_initial[s] += post.gamma[0][s] / params.initial()[s].max(PARAM_FLOOR);
    }
    for (t, &(a, z)) in observed.iter().enumerate() {
        for s in 0..n {
            for s2 in 0..n {
                let w = post.xi[t][s * n + s2];
                if w != 0.0 {
                    grad.d_transition[(s * na + a) * n + s2] += w / params.t(s, a, s2).max(PARAM_FLOOR);
                }
            }
        }
        for s2 in 0..n {
            let w = post.gamma[t + 1][s2];
            if w != 0.0 {
                grad.d_observation[(a * n + s2) * nz + z] += w / params.o(a, s2, z).max(PARAM_FLOOR);
            }
        }
    }

    // action-likelihood terms: direct partials in η and μ, and ∇_b log π
    let mut adjoint: Vec<Vec<f64>> = vec![vec![0.0; n]; m + 1];
    for (t, a_t) in traj.actions().enumerate() {
        let b = &run.beliefs[t];
        let probs = policy.probs(b);
        let dist = policy.sq_distances(b);
        let expected: f64 = probs.iter().zip(&dist).map(|(p, d)| p * d).sum();
        grad.d_eta += expected - dist[a_t];
        for (a, (mu, p)) in policy.means.iter().zip(&probs).enumerate() {
            let indicator = if a == a_t { 1.0 } else { 0.0 };
            let scale = 2.0 * policy.eta * (indicator - p);
            for s in 0..n {
                grad.d_means[a][s] += scale * (b[s] - mu[s]);
            }
        }
        adjoint[t] = policy.grad_log_prob_belief(b, a_t);
    }

    // reverse sweep: λ_t = g_t + λ_{t+1} ∇_{b_t} b_{t+1}
    for t in (0..m).rev() {
        let (a, z) = observed[t];
        let b = &run.beliefs[t];
        let next = &run.beliefs[t + 1];
        let lam = &adjoint[t + 1];
        let lam_dot_next: f64 = lam.iter().zip(next).map(|(l, x)| l * x).sum();
        // w(s') = (λ(s') - λ·b_{t+1}) / N
        let w: Vec<f64> = lam.iter().map(|l| (l - lam_dot_next) / run.norms[t]).collect();
        let predicted = params.predict(b, a);
        let mut back = vec![0.0; n];
        for s2 in 0..n {
            let o = params.o(a, s2, z);
            grad.d_observation[(a * n + s2) * nz + z] += predicted[s2] * w[s2];
            for s in 0..n {
                grad.d_transition[(s * na + a) * n + s2] += b[s] * o * w[s2];
                back[s] += params.t(s, a, s2) * o * w[s2];
            }
        }
        for (dst, v) in adjoint[t].iter_mut().zip(back) {
            *dst += v;
        }
    }
    for s in 0..n {
        grad.d_initial[s] += adjoint[0][s];
    }
    Ok(grad)
}

/// Gradient of `Q(θ; θ̂)` with respect to every block of `θ`, with frozen
/// blocks set to zero. Per-trajectory contributions are summed in index order.
pub fn grad_q(theta: &ThetaEstimate, posteriors: &[Posteriors], dataset: &Dataset) -> Result<ThetaGradient> {
    check_posteriors(posteriors, dataset)?;
    let parts: Vec<Result<ThetaGradient>> = dataset
        .trajectories
        .par_iter()
        .zip(posteriors.par_iter())
        .enumerate()
        .map(|(i, (traj, post))| trajectory_grad(theta, post, traj).map_err(|e| e.in_trajectory(i)))
        .collect();
    let mut total = ThetaGradient::zeros(theta);
    for part in parts {
        total.add(&part?);
    }
    total.zero_frozen(theta.frozen);
    if let Err(block) = total.is_finite() {
        return Err(Error::NonFiniteValue {
            block,
            detail: "gradient entry is not finite".into(),
        });
    }
    Ok(total)
}

/// Action-likelihood gradient of one trajectory through `T`, `O` and `b1`,
/// evaluated as the explicit double sum over `t' < t` of
/// `∇_{b_t} log π · ∇_{b_{t'+1}} b_t · ∇_θ b_{t'+1}` with materialized
/// Jacobian products. Quadratic in trajectory length; kept as a reference for
/// the reverse sweep in [`grad_q`].
pub fn action_gradient_reference(theta: &ThetaEstimate, traj: &Trajectory) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let params = &theta.params;
    let n = params.n_states();
    let na = params.n_actions();
    let nz = params.n_observations();
    let run = belief_run(traj, params)?;
    let beliefs: Vec<Belief> = run
        .beliefs
        .iter()
        .map(|b| Belief::from_weights(b.clone()))
        .collect::<Result<_>>()?;
    let jacobians = belief_jacobians(&beliefs, traj, params)?;
    let observed = traj.observed();
    let mut d_t = vec![0.0; params.transition().len()];
    let mut d_o = vec![0.0; params.observation().len()];
    let mut d_b1 = vec![0.0; n];

    for (t, a_t) in traj.actions().enumerate() {
        let g = theta.policy.grad_log_prob_belief(&run.beliefs[t], a_t);
        let row_times = |mat: &Vec<Vec<f64>>| -> Vec<f64> {
            (0..n).map(|j| (0..n).map(|i| g[i] * mat[i][j]).sum()).collect()
        };
        let to_b1 = row_times(&jacobian_product(&jacobians, 0, t));
        for s in 0..n {
            d_b1[s] += to_b1[s];
        }
        for tp in 0..t {
            let v = row_times(&jacobian_product(&jacobians, tp + 1, t));
            let (a, z) = observed[tp];
            let b = &run.beliefs[tp];
            let next = &run.beliefs[tp + 1];
            let norm = run.norms[tp];
            for s in 0..n {
                for s2 in 0..n {
                    // ∂b_{t'+1}(i)/∂T(s2|s,a) = (1{i=s2} b(s) O(z|a,s2) - b_{t'+1}(i) b(s) O(z|a,s2)) / N
                    let common = b[s] * params.o(a, s2, z) / norm;
                    let mut acc = 0.0;
                    for i in 0..n {
                        let indicator = if i == s2 { 1.0 } else { 0.0 };
                        acc += v[i] * (indicator - next[i]) * common;
                    }
                    d_t[(s * na + a) * n + s2] += acc;
                }
            }
            for s2 in 0..n {
                let p: f64 = (0..n).map(|x| b[x] * params.t(x, a, s2)).sum();
                let mut acc = 0.0;
                for i in 0..n {
                    let indicator = if i == s2 { 1.0 } else { 0.0 };
                    acc += v[i] * (indicator - next[i]) * p / norm;
                }
                d_o[(a * n + s2) * nz + z] += acc;
            }
        }
    }
    Ok((d_t, d_o, d_b1))
}
