//! Decision-boundary policy over the belief simplex.
//!
//! Each action `a` owns a mean vector `μ_a` on the hyperplane `Σ_s μ_a(s) = 1`
//! (components may be negative). Actions are chosen by a softmax of negative
//! scaled squared distances:
//!
//!   π(a|b) = exp(-η‖b - μ_a‖²) / Σ_a' exp(-η‖b - μ_a'‖²)
//!
//! so the boundary between two actions is the set of beliefs equidistant
//! from their means.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::iohmm::{Belief, SIMPLEX_TOL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolicyRaw")]
pub struct BoundaryPolicy {
    pub eta: f64,
    pub means: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct PolicyRaw {
    eta: f64,
    means: Vec<Vec<f64>>,
}

impl TryFrom<PolicyRaw> for BoundaryPolicy {
    type Error = Error;
    fn try_from(raw: PolicyRaw) -> Result<Self> {
        BoundaryPolicy::new(raw.eta, raw.means)
    }
}

impl BoundaryPolicy {
    pub fn new(eta: f64, means: Vec<Vec<f64>>) -> Result<Self> {
        let policy = BoundaryPolicy { eta, means };
        policy.validate()?;
        Ok(policy)
    }

    /// Every mean at the uniform belief; with any `eta` the policy is uniform.
    pub fn uniform(n_states: usize, n_actions: usize, eta: f64) -> Self {
        BoundaryPolicy {
            eta,
            means: vec![vec![1.0 / n_states as f64; n_states]; n_actions],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.eta.is_finite() || self.eta < 0.0 {
            return Err(Error::invalid("eta", format!("{} must be finite and >= 0", self.eta)));
        }
        let n_states = self.means.first().map_or(0, Vec::len);
        if self.means.is_empty() || n_states == 0 {
            return Err(Error::invalid("means", "need at least one action and one state"));
        }
        for (a, mean) in self.means.iter().enumerate() {
            if mean.len() != n_states {
                return Err(Error::DimensionMismatch {
                    what: "mean vector",
                    expected: n_states,
                    got: mean.len(),
                });
            }
            if mean.iter().any(|m| !m.is_finite()) {
                return Err(Error::invalid("means", format!("action {a} has a non-finite component")));
            }
            let total: f64 = mean.iter().sum();
            if (total - 1.0).abs() > SIMPLEX_TOL {
                return Err(Error::invalid(
                    "means",
                    format!("action {a} components sum to {total}, not 1"),
                ));
            }
        }
        Ok(())
    }

    pub fn n_actions(&self) -> usize {
        self.means.len()
    }

    pub fn n_states(&self) -> usize {
        self.means[0].len()
    }

    /// `‖b - μ_a‖²` for every action.
    pub fn sq_distances(&self, b: &[f64]) -> Vec<f64> {
        self.means.iter().map(|mu| sq_dist(b, mu)).collect()
    }

    /// Action probabilities at `b`, max-subtracted before exponentiation.
    pub fn probs(&self, b: &[f64]) -> Vec<f64> {
        let logits: Vec<f64> = self.sq_distances(b).iter().map(|d| -self.eta * d).collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut p: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= total);
        p
    }

    pub fn log_probs(&self, b: &[f64]) -> Vec<f64> {
        let logits: Vec<f64> = self.sq_distances(b).iter().map(|d| -self.eta * d).collect();
        let lse = log_sum_exp(&logits);
        logits.iter().map(|l| l - lse).collect()
    }

    /// Action whose mean is nearest to `b`; lowest index on ties.
    pub fn modal_action(&self, b: &[f64]) -> usize {
        let d = self.sq_distances(b);
        let mut best = 0;
        for (a, x) in d.iter().enumerate() {
            if *x < d[best] {
                best = a;
            }
        }
        best
    }

    /// `∇_b log π(a|b) = -2η(b - μ_a) + 2η Σ_a' π(a'|b)(b - μ_a')`.
    pub fn grad_log_prob_belief(&self, b: &[f64], a: usize) -> Vec<f64> {
        let p = self.probs(b);
        let mut g = vec![0.0; b.len()];
        for (j, gj) in g.iter_mut().enumerate() {
            let mut expected = 0.0;
            for (pa, mu) in p.iter().zip(&self.means) {
                expected += pa * (b[j] - mu[j]);
            }
            *gj = -2.0 * self.eta * (b[j] - self.means[a][j]) + 2.0 * self.eta * expected;
        }
        g
    }
}

pub(crate) fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// A distribution over actions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionDistribution {
    pub probs: Vec<f64>,
}

impl ActionDistribution {
    pub fn mode(&self) -> usize {
        crate::iohmm::argmax(&self.probs)
    }
}

pub fn action_distribution(b: &Belief, pol: &BoundaryPolicy) -> ActionDistribution {
    ActionDistribution {
        probs: pol.probs(b.probs()),
    }
}

pub fn log_prob(b: &Belief, a: usize, pol: &BoundaryPolicy) -> f64 {
    pol.log_probs(b.probs())[a]
}

/// The set `{b : normal · b = offset}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperplane {
    pub normal: Vec<f64>,
    pub offset: f64,
}

impl Hyperplane {
    /// Position `p ∈ [0, 1]` where the edge `(1-p) e_i + p e_j` of the simplex
    /// meets the hyperplane, if it does.
    pub fn edge_crossing(&self, i: usize, j: usize) -> Option<f64> {
        let (ni, nj) = (self.normal[i], self.normal[j]);
        if (nj - ni).abs() < 1e-300 {
            return None;
        }
        let p = (self.offset - ni) / (nj - ni);
        (-1e-12..=1.0 + 1e-12).contains(&p).then(|| p.clamp(0.0, 1.0))
    }

    /// Signed side of a point: positive means closer to the second action.
    pub fn side(&self, b: &[f64]) -> f64 {
        self.normal.iter().zip(b).map(|(n, x)| n * x).sum::<f64>() - self.offset
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Boundary {
    Hyperplane(Hyperplane),
    /// Coincident means: every belief is equidistant.
    Degenerate,
}

/// Boundary between two actions: `2(μ2 - μ1)·b = ‖μ2‖² - ‖μ1‖²`.
pub fn decision_boundary(pol: &BoundaryPolicy, a1: usize, a2: usize) -> Result<Boundary> {
    for a in [a1, a2] {
        if a >= pol.n_actions() {
            return Err(Error::IndexOutOfRange {
                what: "action",
                index: a,
                size: pol.n_actions(),
            });
        }
    }
    if a1 == a2 {
        return Err(Error::invalid("decision boundary", "actions must differ"));
    }
    let (m1, m2) = (&pol.means[a1], &pol.means[a2]);
    if m1 == m2 {
        return Ok(Boundary::Degenerate);
    }
    let normal = m1.iter().zip(m2).map(|(x, y)| 2.0 * (y - x)).collect();
    let norm2 = |m: &[f64]| m.iter().map(|x| x * x).sum::<f64>();
    Ok(Boundary::Hyperplane(Hyperplane {
        normal,
        offset: norm2(m2) - norm2(m1),
    }))
}
