//! MAP estimation of decision dynamics and decision boundaries.
//!
//! Each outer iteration runs an E-step (forward-backward under the current
//! estimate) and a single projected adaptive-moment ascent step on
//! `Q(θ; θ̂) + log Pr(θ)`. A step is accepted only if it strictly increases
//! that objective; otherwise it is halved, up to ten times. Fitting stops once
//! `patience` consecutive iterations fail to gain more than
//! `improvement_tolerance`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradient::{self, action_log_likelihood, belief_run, ThetaGradient, PARAM_FLOOR};
use crate::inference::{self, Posteriors};
use crate::iohmm::{Belief, Dataset, IohmmParams, Spaces};
use crate::model::{FreezeMask, ThetaEstimate};
use crate::policy::BoundaryPolicy;

/// Conjugate-style prior over `θ`. Dirichlet concentrations apply to every
/// row of the corresponding table; a concentration of 1 is flat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prior {
    pub dirichlet_t: f64,
    pub dirichlet_o: f64,
    pub dirichlet_b1: f64,
    /// `(mean, sd)` of `ln η`.
    pub eta_log_normal: Option<(f64, f64)>,
    /// Standard deviation of an isotropic normal on mean components, centred
    /// at the uniform belief.
    pub means_normal_sd: Option<f64>,
}

impl Default for Prior {
    fn default() -> Self {
        Prior {
            dirichlet_t: 1.0,
            dirichlet_o: 1.0,
            dirichlet_b1: 1.0,
            eta_log_normal: None,
            means_normal_sd: None,
        }
    }
}

impl Prior {
    pub fn validate(&self) -> Result<()> {
        for (what, c) in [
            ("dirichlet_t", self.dirichlet_t),
            ("dirichlet_o", self.dirichlet_o),
            ("dirichlet_b1", self.dirichlet_b1),
        ] {
            if !c.is_finite() || c < 0.0 {
                return Err(Error::invalid("prior", format!("{what} must be >= 0, got {c}")));
            }
        }
        if let Some((mean, sd)) = self.eta_log_normal {
            if !mean.is_finite() || !(sd > 0.0) {
                return Err(Error::invalid("prior", "eta log-normal needs finite mean and sd > 0"));
            }
        }
        if let Some(sd) = self.means_normal_sd {
            if !(sd > 0.0) {
                return Err(Error::invalid("prior", "means sd must be > 0"));
            }
        }
        Ok(())
    }

    /// Log density up to a θ-independent constant.
    pub fn log_density(&self, theta: &ThetaEstimate) -> f64 {
        let p = &theta.params;
        let mut total = 0.0;
        let mut dirichlet = |conc: f64, values: &[f64]| {
            if conc != 1.0 {
                total += values
                    .iter()
                    .map(|v| if conc - 1.0 == 0.0 { 0.0 } else { (conc - 1.0) * v.ln() })
                    .sum::<f64>();
            }
        };
        dirichlet(self.dirichlet_t, p.transition());
        dirichlet(self.dirichlet_o, p.observation());
        dirichlet(self.dirichlet_b1, p.initial().probs());
        if let Some((mean, sd)) = self.eta_log_normal {
            let eta = theta.policy.eta;
            total += if eta > 0.0 {
                let z = (eta.ln() - mean) / sd;
                -0.5 * z * z - eta.ln()
            } else {
                f64::NEG_INFINITY
            };
        }
        if let Some(sd) = self.means_normal_sd {
            let centre = 1.0 / p.n_states() as f64;
            total -= theta
                .policy
                .means
                .iter()
                .flatten()
                .map(|m| (m - centre) * (m - centre))
                .sum::<f64>()
                / (2.0 * sd * sd);
        }
        total
    }

    pub fn gradient(&self, theta: &ThetaEstimate) -> ThetaGradient {
        let p = &theta.params;
        let mut g = ThetaGradient::zeros(theta);
        let fill = |conc: f64, values: &[f64], out: &mut [f64]| {
            if conc != 1.0 {
                for (o, v) in out.iter_mut().zip(values) {
                    *o = (conc - 1.0) / v.max(PARAM_FLOOR);
                }
            }
        };
        fill(self.dirichlet_t, p.transition(), &mut g.d_transition);
        fill(self.dirichlet_o, p.observation(), &mut g.d_observation);
        fill(self.dirichlet_b1, p.initial().probs(), &mut g.d_initial);
        if let Some((mean, sd)) = self.eta_log_normal {
            let eta = theta.policy.eta.max(PARAM_FLOOR);
            g.d_eta = -(eta.ln() - mean) / (sd * sd * eta) - 1.0 / eta;
        }
        if let Some(sd) = self.means_normal_sd {
            let centre = 1.0 / p.n_states() as f64;
            for (gm, m) in g.d_means.iter_mut().zip(&theta.policy.means) {
                for (x, v) in gm.iter_mut().zip(m) {
                    *x = -(v - centre) / (sd * sd);
                }
            }
        }
        g
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub learning_rate: f64,
    pub max_iterations: usize,
    pub patience: usize,
    pub seed: u64,
    pub improvement_tolerance: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            learning_rate: 1e-3,
            max_iterations: 20_000,
            patience: 100,
            seed: 0,
            improvement_tolerance: 1e-8,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("fit config", "learning_rate must be positive"));
        }
        if self.patience == 0 {
            return Err(Error::invalid("fit config", "patience must be positive"));
        }
        if !(self.improvement_tolerance >= 0.0) {
            return Err(Error::invalid("fit config", "improvement_tolerance must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub estimate: ThetaEstimate,
    /// Log posterior of the initial estimate followed by every accepted iterate.
    pub log_posterior_trace: Vec<f64>,
    pub iterations_run: usize,
    pub accepted_steps: usize,
    pub converged: bool,
    pub seed: u64,
    /// Closed-form EM iterations of the dynamics stage (two-stage fits only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage_one_iterations: Option<usize>,
}

impl FitReport {
    pub fn final_log_posterior(&self) -> f64 {
        *self.log_posterior_trace.last().expect("trace holds the initial value")
    }
}

/// Unconstrained parameter values, before projection.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTheta {
    pub transition: Vec<f64>,
    pub observation: Vec<f64>,
    pub initial: Vec<f64>,
    pub eta: f64,
    pub means: Vec<Vec<f64>>,
}

impl RawTheta {
    pub fn from_theta(theta: &ThetaEstimate) -> Self {
        RawTheta {
            transition: theta.params.transition().to_vec(),
            observation: theta.params.observation().to_vec(),
            initial: theta.params.initial().probs().to_vec(),
            eta: theta.policy.eta,
            means: theta.policy.means.clone(),
        }
    }

    fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::new();
        v.extend_from_slice(&self.transition);
        v.extend_from_slice(&self.observation);
        v.extend_from_slice(&self.initial);
        v.push(self.eta);
        self.means.iter().for_each(|m| v.extend_from_slice(m));
        v
    }

    fn unflatten_like(&self, flat: &[f64]) -> Self {
        let mut it = flat.iter().copied();
        let mut take = |n: usize| -> Vec<f64> { it.by_ref().take(n).collect() };
        let transition = take(self.transition.len());
        let observation = take(self.observation.len());
        let initial = take(self.initial.len());
        let eta = take(1)[0];
        let means = self.means.iter().map(|m| take(m.len())).collect();
        RawTheta {
            transition,
            observation,
            initial,
            eta,
            means,
        }
    }
}

fn flatten_gradient(g: &ThetaGradient) -> Vec<f64> {
    let mut v = Vec::new();
    v.extend_from_slice(&g.d_transition);
    v.extend_from_slice(&g.d_observation);
    v.extend_from_slice(&g.d_initial);
    v.push(g.d_eta);
    g.d_means.iter().for_each(|m| v.extend_from_slice(m));
    v
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite entries"));
    let mut cumulative = 0.0;
    let mut shift = 0.0;
    for (k, u) in sorted.iter().enumerate() {
        cumulative += u;
        let candidate = (cumulative - 1.0) / (k + 1) as f64;
        if u - candidate > 0.0 {
            shift = candidate;
        }
    }
    let mut out: Vec<f64> = v.iter().map(|x| (x - shift).max(0.0)).collect();
    // exact renormalization absorbs rounding in the shift
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= total);
    out
}

fn project_hyperplane(v: &[f64]) -> Vec<f64> {
    let excess = (v.iter().sum::<f64>() - 1.0) / v.len() as f64;
    v.iter().map(|x| x - excess).collect()
}

/// Maps raw values back to the feasible set; blocks frozen in `reference`
/// are restored from it.
pub fn project(raw: &RawTheta, reference: &ThetaEstimate) -> Result<ThetaEstimate> {
    let finite = raw.flatten().iter().all(|x| x.is_finite());
    if !finite {
        return Err(Error::NonFiniteValue {
            block: "projection",
            detail: "raw parameters contain non-finite entries".into(),
        });
    }
    let p = &reference.params;
    let frozen = reference.frozen;
    let rows = |values: &[f64], width: usize| -> Vec<f64> {
        values.chunks(width).flat_map(project_simplex).collect()
    };
    let transition = if frozen.transition {
        p.transition().to_vec()
    } else {
        rows(&raw.transition, p.n_states())
    };
    let observation = if frozen.observation {
        p.observation().to_vec()
    } else {
        rows(&raw.observation, p.n_observations())
    };
    let initial = if frozen.initial {
        p.initial().probs().to_vec()
    } else {
        project_simplex(&raw.initial)
    };
    let eta = if frozen.eta { reference.policy.eta } else { raw.eta.max(0.0) };
    let means = if frozen.means {
        reference.policy.means.clone()
    } else {
        raw.means.iter().map(|m| project_hyperplane(m)).collect()
    };
    ThetaEstimate::new(
        p.replace(transition, observation, initial)?,
        BoundaryPolicy::new(eta, means)?,
        frozen,
    )
}

/// E-step: smoothed marginals for every trajectory.
pub fn e_step(params: &IohmmParams, dataset: &Dataset) -> Result<Vec<Posteriors>> {
    dataset
        .trajectories
        .par_iter()
        .enumerate()
        .map(|(i, traj)| inference::posteriors(traj, params).map_err(|e| e.in_trajectory(i)))
        .collect()
}

/// Data log-likelihood `log Pr(D|θ)`: observation likelihood by forward
/// scaling plus action log-likelihoods.
pub fn log_likelihood(theta: &ThetaEstimate, dataset: &Dataset) -> Result<f64> {
    let parts: Vec<Result<f64>> = dataset
        .trajectories
        .par_iter()
        .enumerate()
        .map(|(i, traj)| {
            let run = belief_run(traj, &theta.params).map_err(|e| e.in_trajectory(i))?;
            let obs: f64 = run.norms.iter().map(|n| n.ln()).sum();
            Ok(obs + action_log_likelihood(traj, &run.beliefs, &theta.policy))
        })
        .collect();
    let mut total = 0.0;
    for part in parts {
        total += part?;
    }
    Ok(total)
}

/// `log Pr(D|θ) + log Pr(θ)` up to the evidence constant.
pub fn log_posterior(theta: &ThetaEstimate, dataset: &Dataset, prior: &Prior) -> Result<f64> {
    Ok(log_likelihood(theta, dataset)? + prior.log_density(theta))
}

/// Values fixed at initialization instead of being drawn.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KnownValues {
    pub transition: Option<Vec<f64>>,
    pub observation: Option<Vec<f64>>,
    pub initial: Option<Vec<f64>>,
    pub eta: Option<f64>,
    pub means: Option<Vec<Vec<f64>>>,
}

impl KnownValues {
    /// Takes every block marked in `mask` from `params` and `policy`.
    pub fn from_truth(params: &IohmmParams, policy: &BoundaryPolicy, mask: FreezeMask) -> Self {
        KnownValues {
            transition: mask.transition.then(|| params.transition().to_vec()),
            observation: mask.observation.then(|| params.observation().to_vec()),
            initial: mask.initial.then(|| params.initial().probs().to_vec()),
            eta: mask.eta.then_some(policy.eta),
            means: mask.means.then(|| policy.means.clone()),
        }
    }
}

fn dirichlet_rows(rng: &mut ChaCha8Rng, rows: usize, width: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * width);
    for _ in 0..rows {
        let draws: Vec<f64> = (0..width).map(|_| Exp1.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        out.extend(draws.iter().map(|d| d / total));
    }
    out
}

/// Random initial estimate: rows uniform on the simplex, means at the
/// uniform belief with `N(0, 0.001²)` jitter renormalized to sum to one.
pub fn init_random(spaces: &Spaces, seed: u64, frozen: FreezeMask, known: &KnownValues) -> Result<ThetaEstimate> {
    let (ns, na, nz) = (spaces.n_states, spaces.n_actions, spaces.n_observations);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let transition = dirichlet_rows(&mut rng, ns * na, ns);
    let observation = dirichlet_rows(&mut rng, na * ns, nz);
    let initial = dirichlet_rows(&mut rng, 1, ns);
    let jitter = Normal::new(0.0, 1e-3).expect("valid normal");
    let means: Vec<Vec<f64>> = (0..na)
        .map(|_| {
            let raw: Vec<f64> = (0..ns).map(|_| 1.0 / ns as f64 + jitter.sample(&mut rng)).collect();
            let total: f64 = raw.iter().sum();
            raw.iter().map(|x| x / total).collect()
        })
        .collect();
    let params = IohmmParams::from_flat(
        ns,
        na,
        nz,
        known.transition.clone().unwrap_or(transition),
        known.observation.clone().unwrap_or(observation),
        Belief::new(known.initial.clone().unwrap_or(initial))?,
    )?
    .with_labels(spaces.labels.clone());
    let policy = BoundaryPolicy::new(known.eta.unwrap_or(1.0), known.means.clone().unwrap_or(means))?;
    ThetaEstimate::new(params, policy, frozen)
}

/// Replaces unfrozen means with the average belief (under `theta`'s own
/// dynamics) at which each action was taken. Actions never taken keep their
/// current mean.
pub fn centroid_means(theta: &ThetaEstimate, dataset: &Dataset) -> Result<ThetaEstimate> {
    if theta.frozen.means {
        return Ok(theta.clone());
    }
    let ns = theta.params.n_states();
    let mut sums = vec![vec![0.0; ns]; theta.params.n_actions()];
    let mut counts = vec![0usize; theta.params.n_actions()];
    for (i, traj) in dataset.trajectories.iter().enumerate() {
        let run = belief_run(traj, &theta.params).map_err(|e| e.in_trajectory(i))?;
        for (t, a) in traj.actions().enumerate() {
            counts[a] += 1;
            for (acc, b) in sums[a].iter_mut().zip(&run.beliefs[t]) {
                *acc += b;
            }
        }
    }
    let means = sums
        .into_iter()
        .zip(&counts)
        .zip(&theta.policy.means)
        .map(|((sum, &count), old)| {
            if count == 0 {
                old.clone()
            } else {
                sum.iter().map(|x| x / count as f64).collect()
            }
        })
        .collect();
    ThetaEstimate::new(
        theta.params.clone(),
        BoundaryPolicy::new(theta.policy.eta, means)?,
        theta.frozen,
    )
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// Updates the moments with `g` and returns the bias-corrected direction.
    fn direction(&mut self, g: &[f64]) -> Vec<f64> {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        self.m
            .iter_mut()
            .zip(self.v.iter_mut())
            .zip(g)
            .map(|((m, v), g)| {
                *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
                *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
                (*m / c1) / ((*v / c2).sqrt() + Self::EPS)
            })
            .collect()
    }
}

const MAX_HALVINGS: usize = 10;

fn surrogate(theta: &ThetaEstimate, posts: &[Posteriors], dataset: &Dataset, prior: &Prior) -> Option<f64> {
    let q = gradient::expected_log_likelihood(theta, posts, dataset).ok()?;
    let value = q + prior.log_density(theta);
    value.is_finite().then_some(value)
}

/// Joint MAP fit of every unfrozen block.
pub fn fit(dataset: &Dataset, init: &ThetaEstimate, prior: &Prior, config: &FitConfig) -> Result<FitReport> {
    dataset.validate()?;
    init.validate()?;
    prior.validate()?;
    config.validate()?;
    let mut theta = project(&RawTheta::from_theta(init), init)?;
    let mut current = log_posterior(&theta, dataset, prior)?;
    let mut trace = vec![current];
    let mut report = FitReport {
        estimate: theta.clone(),
        log_posterior_trace: Vec::new(),
        iterations_run: 0,
        accepted_steps: 0,
        converged: false,
        seed: config.seed,
        stage_one_iterations: None,
    };
    if theta.frozen.all_frozen() || config.max_iterations == 0 {
        report.converged = theta.frozen.all_frozen();
        report.log_posterior_trace = trace;
        return Ok(report);
    }

    let mut adam = Adam::new(RawTheta::from_theta(&theta).flatten().len());
    let mut best = (current, theta.clone());
    let mut stale = 0;
    for iteration in 1..=config.max_iterations {
        report.iterations_run = iteration;
        let posts = e_step(&theta.params, dataset)?;
        let base = surrogate(&theta, &posts, dataset, prior).ok_or_else(|| Error::NonFiniteValue {
            block: "objective",
            detail: format!("expected log-posterior is not finite at iteration {iteration}"),
        })?;
        let mut grad = gradient::grad_q(&theta, &posts, dataset).map_err(|e| match e.root() {
            Error::NonFiniteValue { block, detail } => Error::NonFiniteValue {
                block,
                detail: format!("iteration {iteration}: {detail}"),
            },
            _ => e,
        })?;
        let mut prior_grad = prior.gradient(&theta);
        prior_grad.zero_frozen(theta.frozen);
        grad.add(&prior_grad);
        grad.project_tangent(theta.params.n_states(), theta.params.n_observations());
        if let Err(block) = grad.is_finite() {
            return Err(Error::NonFiniteValue {
                block,
                detail: format!("iteration {iteration}: gradient is not finite"),
            });
        }

        let direction = adam.direction(&flatten_gradient(&grad));
        let raw = RawTheta::from_theta(&theta);
        let start = raw.flatten();
        let mut step = config.learning_rate;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let moved: Vec<f64> = start.iter().zip(&direction).map(|(x, d)| x + step * d).collect();
            let candidate = project(&raw.unflatten_like(&moved), &theta)?;
            if let Some(value) = surrogate(&candidate, &posts, dataset, prior) {
                if value > base {
                    accepted = Some((candidate, value - base));
                    break;
                }
            }
            step *= 0.5;
        }

        match accepted {
            Some((candidate, gain)) => {
                theta = candidate;
                current = log_posterior(&theta, dataset, prior)?;
                trace.push(current);
                if current > best.0 {
                    best = (current, theta.clone());
                }
                report.accepted_steps += 1;
                if gain > config.improvement_tolerance {
                    stale = 0;
                } else {
                    stale += 1;
                }
            }
            None => stale += 1,
        }
        if stale >= config.patience {
            report.converged = true;
            break;
        }
    }
    report.estimate = best.1;
    report.log_posterior_trace = trace;
    Ok(report)
}

fn normalize_or_keep(counts: &[f64], fallback: &[f64]) -> Vec<f64> {
    let total: f64 = counts.iter().sum();
    if total > 0.0 && total.is_finite() {
        counts.iter().map(|c| c / total).collect()
    } else {
        fallback.to_vec()
    }
}

/// One closed-form EM update of the unfrozen dynamics blocks using only the
/// observation likelihood, with Dirichlet pseudo-counts from `prior`.
pub fn baum_welch_step(theta: &ThetaEstimate, posts: &[Posteriors], dataset: &Dataset, prior: &Prior) -> Result<ThetaEstimate> {
    let p = &theta.params;
    let (ns, na, nz) = (p.n_states(), p.n_actions(), p.n_observations());
    let mut t_counts = vec![0.0; ns * na * ns];
    let mut o_counts = vec![0.0; na * ns * nz];
    let mut b_counts = vec![0.0; ns];
    for (traj, post) in dataset.trajectories.iter().zip(posts) {
        for s in 0..ns {
            b_counts[s] += post.gamma[0][s];
        }
        for (t, &(a, z)) in traj.observed().iter().enumerate() {
            for s in 0..ns {
                for s2 in 0..ns {
                    t_counts[(s * na + a) * ns + s2] += post.xi[t][s * ns + s2];
                }
            }
            for s2 in 0..ns {
                o_counts[(a * ns + s2) * nz + z] += post.gamma[t + 1][s2];
            }
        }
    }
    let pseudo = |counts: &mut [f64], conc: f64| {
        counts.iter_mut().for_each(|c| *c = (*c + conc - 1.0).max(0.0));
    };
    pseudo(&mut t_counts, prior.dirichlet_t);
    pseudo(&mut o_counts, prior.dirichlet_o);
    pseudo(&mut b_counts, prior.dirichlet_b1);
    let rows = |counts: &[f64], old: &[f64], width: usize| -> Vec<f64> {
        counts
            .chunks(width)
            .zip(old.chunks(width))
            .flat_map(|(c, o)| normalize_or_keep(c, o))
            .collect()
    };
    let frozen = theta.frozen;
    let transition = if frozen.transition {
        p.transition().to_vec()
    } else {
        rows(&t_counts, p.transition(), ns)
    };
    let observation = if frozen.observation {
        p.observation().to_vec()
    } else {
        rows(&o_counts, p.observation(), nz)
    };
    let initial = if frozen.initial {
        p.initial().probs().to_vec()
    } else {
        normalize_or_keep(&b_counts, p.initial().probs())
    };
    ThetaEstimate::new(p.replace(transition, observation, initial)?, theta.policy.clone(), frozen)
}

fn observation_log_posterior(theta: &ThetaEstimate, posts: &[Posteriors], prior: &Prior) -> f64 {
    let obs: f64 = posts.iter().map(|p| p.log_likelihood).sum();
    let mut dyn_prior = prior.clone();
    dyn_prior.eta_log_normal = None;
    dyn_prior.means_normal_sd = None;
    obs + dyn_prior.log_density(theta)
}

/// Runs closed-form EM on the unfrozen dynamics blocks until the observation
/// log-posterior stops improving.
fn dynamics_em(dataset: &Dataset, init: &ThetaEstimate, prior: &Prior, config: &FitConfig) -> Result<(ThetaEstimate, usize)> {
    let mut theta = init.clone();
    let mut posts = e_step(&theta.params, dataset)?;
    let mut objective = observation_log_posterior(&theta, &posts, prior);
    let mut iterations = 0;
    let mut stale = 0;
    while iterations < config.max_iterations {
        iterations += 1;
        let next = baum_welch_step(&theta, &posts, dataset, prior)?;
        let next_posts = e_step(&next.params, dataset)?;
        let next_objective = observation_log_posterior(&next, &next_posts, prior);
        if !next_objective.is_finite() {
            return Err(Error::NonFiniteValue {
                block: "observation likelihood",
                detail: format!("closed-form EM iteration {iterations}"),
            });
        }
        let gain = next_objective - objective;
        theta = next;
        posts = next_posts;
        objective = next_objective;
        if gain > config.improvement_tolerance {
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience.min(10) {
                break;
            }
        }
    }
    Ok((theta, iterations))
}

/// Data-driven starting point: unfrozen dynamics from closed-form EM on the
/// observation likelihood, then unfrozen means at the action centroids of
/// the resulting beliefs.
pub fn warm_start(dataset: &Dataset, init: &ThetaEstimate, prior: &Prior, config: &FitConfig) -> Result<ThetaEstimate> {
    dataset.validate()?;
    init.validate()?;
    let (theta, _) = dynamics_em(dataset, &project(&RawTheta::from_theta(init), init)?, prior, config)?;
    centroid_means(&theta, dataset)
}

/// Two-stage baseline: estimate the dynamics from observation likelihoods
/// alone by closed-form EM, then fit the policy with the dynamics frozen.
pub fn two_stage_fit(dataset: &Dataset, init: &ThetaEstimate, prior: &Prior, config: &FitConfig) -> Result<FitReport> {
    dataset.validate()?;
    init.validate()?;
    prior.validate()?;
    config.validate()?;
    let (theta, stage_one) = dynamics_em(dataset, &project(&RawTheta::from_theta(init), init)?, prior, config)?;
    let original = init.frozen;
    let stage_two_init = theta.with_frozen(original.union(FreezeMask::dynamics()));
    let mut report = fit(dataset, &stage_two_init, prior, config)?;
    report.estimate.frozen = original;
    report.stage_one_iterations = Some(stage_one);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::iohmm::Trajectory;

    #[test]
    fn simplex_projection_examples() {
        let p = project_simplex(&[0.5, 0.7]);
        assert!((p[0] - 0.4).abs() < 1e-12 && (p[1] - 0.6).abs() < 1e-12);
        let q = project_simplex(&[0.2, 0.3, 0.5]);
        assert!((q[0] - 0.2).abs() < 1e-12 && (q[2] - 0.5).abs() < 1e-12);
        let r = project_simplex(&[2.0, -1.0, 0.0]);
        assert_eq!(r, vec![1.0, 0.0, 0.0]);
        assert_eq!(project_hyperplane(&[0.8, 0.8]), vec![0.5, 0.5]);
    }

    fn small_theta() -> ThetaEstimate {
        let spaces = Spaces::new(2, 2, 2).unwrap();
        init_random(&spaces, 3, FreezeMask::none(), &KnownValues::default()).unwrap()
    }

    #[test]
    fn projection_is_idempotent_on_feasible_input() {
        let th = small_theta();
        let again = project(&RawTheta::from_theta(&th), &th).unwrap();
        let (a, b) = (RawTheta::from_theta(&th).flatten(), RawTheta::from_theta(&again).flatten());
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_restores_frozen_blocks() {
        let th = small_theta().with_frozen("O,means".parse().unwrap());
        let mut raw = RawTheta::from_theta(&th);
        raw.observation.iter_mut().for_each(|x| *x += 0.3);
        raw.means[0][0] += 5.0;
        raw.eta = -2.0;
        let out = project(&raw, &th).unwrap();
        assert_eq!(out.params.observation(), th.params.observation());
        assert_eq!(out.policy.means, th.policy.means);
        assert_eq!(out.policy.eta, 0.0);
    }

    #[test]
    fn init_is_seeded() {
        let spaces = Spaces::new(3, 2, 4).unwrap();
        let a = init_random(&spaces, 9, FreezeMask::none(), &KnownValues::default()).unwrap();
        let b = init_random(&spaces, 9, FreezeMask::none(), &KnownValues::default()).unwrap();
        let c = init_random(&spaces, 10, FreezeMask::none(), &KnownValues::default()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.policy.eta, 1.0);
        for m in a.policy.means.iter().flatten() {
            assert!((m - 1.0 / 3.0).abs() < 0.01);
        }
    }

    #[test]
    fn init_rows_are_uniform_on_average() {
        let spaces = Spaces::new(3, 1, 2).unwrap();
        let mut mean = [0.0; 3];
        let n = 10_000;
        for seed in 0..n {
            let th = init_random(&spaces, seed, FreezeMask::none(), &KnownValues::default()).unwrap();
            for (m, t) in mean.iter_mut().zip(th.params.transition_row(0, 0)) {
                *m += t / n as f64;
            }
        }
        for m in mean {
            assert!((m - 1.0 / 3.0).abs() < 0.01, "{m}");
        }
    }

    fn tiny_dataset() -> Dataset {
        Dataset::new(
            Spaces::new(2, 2, 2).unwrap(),
            vec![
                Trajectory::new(vec![(0, 1), (0, 1), (1, 0)]),
                Trajectory::new(vec![(0, 0), (1, 1)]),
                Trajectory::new(vec![(1, 1), (0, 0), (0, 1), (1, 0)]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn zero_iterations_returns_projected_init() {
        let th = small_theta();
        let config = FitConfig {
            max_iterations: 0,
            ..FitConfig::default()
        };
        let report = fit(&tiny_dataset(), &th, &Prior::default(), &config).unwrap();
        assert_eq!(report.iterations_run, 0);
        assert_eq!(report.log_posterior_trace.len(), 1);
        let (a, b) = (RawTheta::from_theta(&th).flatten(), RawTheta::from_theta(&report.estimate).flatten());
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn all_frozen_takes_no_steps() {
        let th = small_theta().with_frozen(FreezeMask::all());
        let report = fit(&tiny_dataset(), &th, &Prior::default(), &FitConfig::default()).unwrap();
        assert_eq!(report.accepted_steps, 0);
        assert_eq!(report.estimate, th);
    }

    #[test]
    fn trace_is_monotone_and_gains() {
        let th = small_theta();
        let config = FitConfig {
            learning_rate: 0.01,
            max_iterations: 300,
            ..FitConfig::default()
        };
        let report = fit(&tiny_dataset(), &th, &Prior::default(), &config).unwrap();
        let trace = &report.log_posterior_trace;
        assert!(trace.windows(2).all(|w| w[1] >= w[0] - 1e-8));
        assert!(trace.last().unwrap() > &trace[0]);
    }

    #[test]
    fn flat_prior_has_zero_log_density() {
        let th = small_theta();
        assert_eq!(Prior::default().log_density(&th), 0.0);
        let ds = tiny_dataset();
        assert_eq!(
            log_posterior(&th, &ds, &Prior::default()).unwrap(),
            log_likelihood(&th, &ds).unwrap()
        );
    }

    #[test]
    fn prior_gradient_matches_differences() {
        let th = small_theta();
        let prior = Prior {
            dirichlet_t: 2.0,
            dirichlet_o: 1.5,
            dirichlet_b1: 3.0,
            eta_log_normal: Some((0.5, 0.7)),
            means_normal_sd: Some(0.4),
        };
        let g = prior.gradient(&th);
        let h = 1e-6;
        let mut raw = RawTheta::from_theta(&th);
        raw.eta += h;
        let up = prior.log_density(&project(&raw, &th).unwrap());
        raw.eta -= 2.0 * h;
        let dn = prior.log_density(&project(&raw, &th).unwrap());
        assert!(((up - dn) / (2.0 * h) - g.d_eta).abs() < 1e-6);
    }
}
