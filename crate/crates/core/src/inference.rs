//! Forward-backward smoothing over hidden state paths.
//!
//! Messages are normalized per step and the normalizers kept in log form, so
//! long trajectories do not underflow. Action likelihoods are deterministic
//! given the observed history and drop out of every proportionality here.

use crate::error::{Error, Result};
use crate::iohmm::{IohmmParams, Trajectory, ZERO_LIKELIHOOD};

/// Forward messages `α_1 ..= α_{m+1}`, each normalized to sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardMessages {
    pub alpha: Vec<Vec<f64>>,
    /// `log` of the normalizer applied at each step.
    pub log_scales: Vec<f64>,
}

impl ForwardMessages {
    /// Observation log-likelihood `log Pr(z_1..z_m | a_1..a_m)`.
    pub fn log_likelihood(&self) -> f64 {
        self.log_scales.iter().sum()
    }
}

/// Backward messages `β_1 ..= β_{m+1}`; `β_{m+1}` is all ones and the others
/// are normalized to sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct BackwardMessages {
    pub beta: Vec<Vec<f64>>,
    pub log_scales: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Messages {
    pub forward: ForwardMessages,
    pub backward: BackwardMessages,
}

/// Posterior marginals given a whole trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Posteriors {
    /// `γ_t(s)` for `t = 1 ..= m+1`.
    pub gamma: Vec<Vec<f64>>,
    /// `ξ_t(s, s')` for `t = 1 ..= m`, flat `[s * S + s']`.
    pub xi: Vec<Vec<f64>>,
    /// Observation log-likelihood under the parameters used.
    pub log_likelihood: f64,
}

impl Posteriors {
    pub fn n_states(&self) -> usize {
        self.gamma[0].len()
    }
}

fn underflow(step: usize, a: usize, z: usize) -> Error {
    Error::ZeroLikelihood {
        step,
        action: a,
        observation: z,
    }
}

pub fn forward_messages(traj: &Trajectory, params: &IohmmParams) -> Result<ForwardMessages> {
    params.validate_trajectory(traj)?;
    let observed = traj.observed();
    let n = params.n_states();
    let mut alpha = Vec::with_capacity(observed.len() + 1);
    let mut log_scales = Vec::with_capacity(observed.len());
    alpha.push(params.initial().probs().to_vec());
    for (t, &(a, z)) in observed.iter().enumerate() {
        let mut next = vec![0.0; n];
        let total = params.update_weights(&alpha[t], a, z, &mut next);
        if total <= ZERO_LIKELIHOOD || !total.is_finite() {
            return Err(underflow(t, a, z));
        }
        next.iter_mut().for_each(|x| *x /= total);
        log_scales.push(total.ln());
        alpha.push(next);
    }
    Ok(ForwardMessages { alpha, log_scales })
}

pub fn backward_messages(traj: &Trajectory, params: &IohmmParams) -> Result<BackwardMessages> {
    params.validate_trajectory(traj)?;
    let observed = traj.observed();
    let n = params.n_states();
    let m = observed.len();
    let mut beta = vec![vec![0.0; n]; m + 1];
    let mut log_scales = vec![0.0; m];
    beta[m] = vec![1.0; n];
    for t in (0..m).rev() {
        let (a, z) = observed[t];
        // weighted[s'] = O(z|a,s') β_{t+1}(s')
        let weighted: Vec<f64> = (0..n).map(|s2| params.o(a, s2, z) * beta[t + 1][s2]).collect();
        let mut total = 0.0;
        for s in 0..n {
            let v: f64 = params
                .transition_row(s, a)
                .iter()
                .zip(&weighted)
                .map(|(tr, w)| tr * w)
                .sum();
            beta[t][s] = v;
            total += v;
        }
        if total <= ZERO_LIKELIHOOD || !total.is_finite() {
            return Err(underflow(t, a, z));
        }
        beta[t].iter_mut().for_each(|x| *x /= total);
        log_scales[t] = total.ln();
    }
    Ok(BackwardMessages { beta, log_scales })
}

pub fn messages(traj: &Trajectory, params: &IohmmParams) -> Result<Messages> {
    Ok(Messages {
        forward: forward_messages(traj, params)?,
        backward: backward_messages(traj, params)?,
    })
}

/// `γ_t(s) ∝ α_t(s) β_t(s)`.
pub fn state_marginals(msgs: &Messages) -> Vec<Vec<f64>> {
    msgs.forward
        .alpha
        .iter()
        .zip(&msgs.backward.beta)
        .map(|(a, b)| {
            let mut g: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
            let total: f64 = g.iter().sum();
            g.iter_mut().for_each(|x| *x /= total);
            g
        })
        .collect()
}

/// `ξ_t(s,s') ∝ α_t(s) T(s'|s,a_t) O(z_t|a_t,s') β_{t+1}(s')`.
pub fn transition_marginals(msgs: &Messages, traj: &Trajectory, params: &IohmmParams) -> Vec<Vec<f64>> {
    let n = params.n_states();
    traj.observed()
        .iter()
        .enumerate()
        .map(|(t, &(a, z))| {
            let alpha = &msgs.forward.alpha[t];
            let beta = &msgs.backward.beta[t + 1];
            let mut xi = vec![0.0; n * n];
            let mut total = 0.0;
            for s in 0..n {
                if alpha[s] == 0.0 {
                    continue;
                }
                for s2 in 0..n {
                    let v = alpha[s] * params.t(s, a, s2) * params.o(a, s2, z) * beta[s2];
                    xi[s * n + s2] = v;
                    total += v;
                }
            }
            xi.iter_mut().for_each(|x| *x /= total);
            xi
        })
        .collect()
}

/// Runs both passes and returns `γ`, `ξ` and the observation log-likelihood.
pub fn posteriors(traj: &Trajectory, params: &IohmmParams) -> Result<Posteriors> {
    let msgs = messages(traj, params)?;
    Ok(Posteriors {
        gamma: state_marginals(&msgs),
        xi: transition_marginals(&msgs, traj, params),
        log_likelihood: msgs.forward.log_likelihood(),
    })
}
