//! Decision dynamics: the input-output HMM `(S, A, Z, T, O, b1)` and the
//! recursive subjective belief update
//!
//!   b_{t+1}(s') ∝ Σ_s b_t(s) T(s'|s,a_t) O(z_t|a_t,s')
//!
//! Tensors are stored flat, row-major, in the index orders `T[s][a][s']` and
//! `O[a][s'][z]`, which is also the order used on disk.

use std::collections::{BTreeMap, HashSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on row sums of probability tables and beliefs.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Normalizers at or below this value are treated as an impossible observation.
pub const ZERO_LIKELIHOOD: f64 = 1e-300;

/// Optional display names for states, actions and observations.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Labels {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub states: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub actions: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub observations: Vec<String>,
}

impl Labels {
    pub fn new(states: &[&str], actions: &[&str], observations: &[&str]) -> Self {
        let own = |v: &[&str]| v.iter().map(|s| s.to_string()).collect();
        Labels {
            states: own(states),
            actions: own(actions),
            observations: own(observations),
        }
    }
}

/// Cardinalities of the state, action and observation sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpacesRaw")]
pub struct Spaces {
    pub n_states: usize,
    pub n_actions: usize,
    pub n_observations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Labels>,
}

#[derive(Deserialize)]
struct SpacesRaw {
    n_states: usize,
    n_actions: usize,
    n_observations: usize,
    #[serde(default)]
    labels: Option<Labels>,
}

impl TryFrom<SpacesRaw> for Spaces {
    type Error = Error;

    fn try_from(raw: SpacesRaw) -> Result<Self> {
        let spaces = Spaces {
            n_states: raw.n_states,
            n_actions: raw.n_actions,
            n_observations: raw.n_observations,
            labels: raw.labels,
        };
        spaces.validate()?;
        Ok(spaces)
    }
}

impl Spaces {
    pub fn new(n_states: usize, n_actions: usize, n_observations: usize) -> Result<Self> {
        let spaces = Spaces {
            n_states,
            n_actions,
            n_observations,
            labels: None,
        };
        spaces.validate()?;
        Ok(spaces)
    }

    pub fn with_labels(mut self, labels: Labels) -> Result<Self> {
        self.labels = Some(labels);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        for (what, n) in [
            ("state count", self.n_states),
            ("action count", self.n_actions),
            ("observation count", self.n_observations),
        ] {
            if n == 0 {
                return Err(Error::invalid(what, "must be at least 1"));
            }
        }
        if let Some(labels) = &self.labels {
            for (what, names, n) in [
                ("state labels", &labels.states, self.n_states),
                ("action labels", &labels.actions, self.n_actions),
                ("observation labels", &labels.observations, self.n_observations),
            ] {
                if names.is_empty() {
                    continue;
                }
                if names.len() != n {
                    return Err(Error::DimensionMismatch {
                        what,
                        expected: n,
                        got: names.len(),
                    });
                }
                let unique: HashSet<&String> = names.iter().collect();
                if unique.len() != names.len() {
                    return Err(Error::invalid(what, "labels must be unique"));
                }
            }
        }
        Ok(())
    }

    pub fn check_state(&self, s: usize) -> Result<()> {
        check_index("state", s, self.n_states)
    }

    pub fn check_action(&self, a: usize) -> Result<()> {
        check_index("action", a, self.n_actions)
    }

    pub fn check_observation(&self, z: usize) -> Result<()> {
        check_index("observation", z, self.n_observations)
    }

    /// Index of a labelled action, if labels are present.
    pub fn action_index(&self, name: &str) -> Option<usize> {
        self.labels
            .as_ref()?
            .actions
            .iter()
            .position(|l| l == name)
    }

    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.labels.as_ref()?.states.iter().position(|l| l == name)
    }
}

fn check_index(what: &'static str, index: usize, size: usize) -> Result<()> {
    if index < size {
        Ok(())
    } else {
        Err(Error::IndexOutOfRange { what, index, size })
    }
}

/// A probability distribution over states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Belief(Vec<f64>);

impl Belief {
    /// Builds a belief from probabilities summing to one (within `SIMPLEX_TOL`),
    /// then renormalizes.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        check_distribution("belief", &probs)?;
        Ok(Self::normalized(probs))
    }

    /// Normalizes any nonnegative vector with positive mass.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::invalid("belief", "empty"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("belief", "weights must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::invalid("belief", "weights have zero mass"));
        }
        Ok(Self::normalized(weights))
    }

    pub fn uniform(n: usize) -> Self {
        Belief(vec![1.0 / n as f64; n])
    }

    pub fn point_mass(n: usize, s: usize) -> Self {
        let mut p = vec![0.0; n];
        p[s] = 1.0;
        Belief(p)
    }

    fn normalized(mut probs: Vec<f64>) -> Self {
        for p in probs.iter_mut() {
            if *p < 0.0 {
                *p = 0.0;
            }
        }
        let total: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= total);
        Belief(probs)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Index of the largest component (lowest index on ties).
    pub fn mode(&self) -> usize {
        argmax(&self.0)
    }
}

impl std::ops::Index<usize> for Belief {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl TryFrom<Vec<f64>> for Belief {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Belief::new(v)
    }
}

impl From<Belief> for Vec<f64> {
    fn from(b: Belief) -> Vec<f64> {
        b.0
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn check_distribution(what: &'static str, row: &[f64]) -> Result<()> {
    if row.is_empty() {
        return Err(Error::invalid(what, "empty distribution"));
    }
    if let Some(p) = row
        .iter()
        .find(|p| !p.is_finite() || **p < 0.0 || **p > 1.0 + SIMPLEX_TOL)
    {
        return Err(Error::invalid(what, format!("entry {p} outside [0, 1]")));
    }
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::invalid(what, format!("entries sum to {total}, not 1")));
    }
    Ok(())
}

/// Transition tensor `T[s][a][s']`, observation tensor `O[a][s'][z]` and initial belief.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ParamsFile", into = "ParamsFile")]
pub struct IohmmParams {
    n_states: usize,
    n_actions: usize,
    n_observations: usize,
    transition: Vec<f64>,
    observation: Vec<f64>,
    initial: Belief,
    labels: Option<Labels>,
}

impl IohmmParams {
    /// Builds parameters from nested tables indexed `[s][a][s']` and `[a][s'][z]`.
    pub fn new(
        transition: Vec<Vec<Vec<f64>>>,
        observation: Vec<Vec<Vec<f64>>>,
        initial: Vec<f64>,
    ) -> Result<Self> {
        let n_states = initial.len();
        let n_actions = observation.len();
        let n_observations = observation
            .first()
            .and_then(|rows| rows.first())
            .map_or(0, Vec::len);
        if transition.len() != n_states {
            return Err(Error::DimensionMismatch {
                what: "transition states",
                expected: n_states,
                got: transition.len(),
            });
        }
        let mut t = Vec::with_capacity(n_states * n_actions * n_states);
        for per_action in &transition {
            if per_action.len() != n_actions {
                return Err(Error::DimensionMismatch {
                    what: "transition actions",
                    expected: n_actions,
                    got: per_action.len(),
                });
            }
            for row in per_action {
                if row.len() != n_states {
                    return Err(Error::DimensionMismatch {
                        what: "transition row",
                        expected: n_states,
                        got: row.len(),
                    });
                }
                t.extend_from_slice(row);
            }
        }
        let mut o = Vec::with_capacity(n_actions * n_states * n_observations);
        for per_state in &observation {
            if per_state.len() != n_states {
                return Err(Error::DimensionMismatch {
                    what: "observation states",
                    expected: n_states,
                    got: per_state.len(),
                });
            }
            for row in per_state {
                if row.len() != n_observations {
                    return Err(Error::DimensionMismatch {
                        what: "observation row",
                        expected: n_observations,
                        got: row.len(),
                    });
                }
                o.extend_from_slice(row);
            }
        }
        Self::from_flat(
            n_states,
            n_actions,
            n_observations,
            t,
            o,
            Belief::new(initial)?,
        )
    }

    /// Builds parameters from flat row-major buffers.
    pub fn from_flat(
        n_states: usize,
        n_actions: usize,
        n_observations: usize,
        transition: Vec<f64>,
        observation: Vec<f64>,
        initial: Belief,
    ) -> Result<Self> {
        Spaces::new(n_states, n_actions, n_observations)?;
        if transition.len() != n_states * n_actions * n_states {
            return Err(Error::DimensionMismatch {
                what: "transition tensor",
                expected: n_states * n_actions * n_states,
                got: transition.len(),
            });
        }
        if observation.len() != n_actions * n_states * n_observations {
            return Err(Error::DimensionMismatch {
                what: "observation tensor",
                expected: n_actions * n_states * n_observations,
                got: observation.len(),
            });
        }
        if initial.len() != n_states {
            return Err(Error::DimensionMismatch {
                what: "initial belief",
                expected: n_states,
                got: initial.len(),
            });
        }
        for row in transition.chunks(n_states) {
            check_distribution("transition row", row)?;
        }
        for row in observation.chunks(n_observations) {
            check_distribution("observation row", row)?;
        }
        Ok(IohmmParams {
            n_states,
            n_actions,
            n_observations,
            transition,
            observation,
            initial,
            labels: None,
        })
    }

    /// Identity transitions, uniform observations, uniform initial belief.
    pub fn uninformative(spaces: &Spaces) -> Self {
        let (s, a, z) = (spaces.n_states, spaces.n_actions, spaces.n_observations);
        let mut t = vec![0.0; s * a * s];
        for from in 0..s {
            for act in 0..a {
                t[(from * a + act) * s + from] = 1.0;
            }
        }
        IohmmParams {
            n_states: s,
            n_actions: a,
            n_observations: z,
            transition: t,
            observation: vec![1.0 / z as f64; a * s * z],
            initial: Belief::uniform(s),
            labels: spaces.labels.clone(),
        }
    }

    pub fn with_labels(mut self, labels: Option<Labels>) -> Self {
        self.labels = labels;
        self
    }

    pub fn spaces(&self) -> Spaces {
        Spaces {
            n_states: self.n_states,
            n_actions: self.n_actions,
            n_observations: self.n_observations,
            labels: self.labels.clone(),
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_observations(&self) -> usize {
        self.n_observations
    }

    /// `T(s'|s,a)`.
    #[inline]
    pub fn t(&self, s: usize, a: usize, s_next: usize) -> f64 {
        self.transition[(s * self.n_actions + a) * self.n_states + s_next]
    }

    /// `O(z|a,s')`.
    #[inline]
    pub fn o(&self, a: usize, s_next: usize, z: usize) -> f64 {
        self.observation[(a * self.n_states + s_next) * self.n_observations + z]
    }

    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    pub fn observation_row(&self, a: usize, s_next: usize) -> &[f64] {
        let start = (a * self.n_states + s_next) * self.n_observations;
        &self.observation[start..start + self.n_observations]
    }

    pub fn transition(&self) -> &[f64] {
        &self.transition
    }

    pub fn observation(&self) -> &[f64] {
        &self.observation
    }

    pub fn initial(&self) -> &Belief {
        &self.initial
    }

    pub fn labels(&self) -> Option<&Labels> {
        self.labels.as_ref()
    }

    /// Replaces the flat tensors and initial belief, revalidating.
    pub fn replace(&self, transition: Vec<f64>, observation: Vec<f64>, initial: Vec<f64>) -> Result<Self> {
        let mut next = Self::from_flat(
            self.n_states,
            self.n_actions,
            self.n_observations,
            transition,
            observation,
            Belief::new(initial)?,
        )?;
        next.labels = self.labels.clone();
        Ok(next)
    }

    /// Sets a single observation entry and renormalizes the rest of the row
    /// proportionally.
    pub fn with_observation_entry(&self, a: usize, s_next: usize, z: usize, value: f64) -> Result<Self> {
        let mut obs = self.observation.clone();
        let start = (a * self.n_states + s_next) * self.n_observations;
        let row = &mut obs[start..start + self.n_observations];
        let rest: f64 = row.iter().enumerate().filter(|(k, _)| *k != z).map(|(_, p)| p).sum();
        for (k, p) in row.iter_mut().enumerate() {
            if k == z {
                *p = value;
            } else if rest > 0.0 {
                *p *= (1.0 - value) / rest;
            } else {
                *p = (1.0 - value) / (self.n_observations - 1) as f64;
            }
        }
        self.replace(self.transition.clone(), obs, self.initial.0.clone())
    }

    /// Predicted next-state marginal `Σ_s b(s) T(·|s,a)`.
    pub fn predict(&self, b: &[f64], a: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n_states];
        for (s, bs) in b.iter().enumerate() {
            if *bs == 0.0 {
                continue;
            }
            for (o, t) in out.iter_mut().zip(self.transition_row(s, a)) {
                *o += bs * t;
            }
        }
        out
    }

    /// `Pr(z|b,a) = Σ_{s,s'} b(s) T(s'|s,a) O(z|a,s')` for every z.
    pub fn observation_probs(&self, b: &[f64], a: usize) -> Vec<f64> {
        let predicted = self.predict(b, a);
        let mut out = vec![0.0; self.n_observations];
        for (s_next, p) in predicted.iter().enumerate() {
            for (o, q) in out.iter_mut().zip(self.observation_row(a, s_next)) {
                *o += p * q;
            }
        }
        out
    }

    /// Unnormalized update into `out`; returns the normalizer.
    pub(crate) fn update_weights(&self, b: &[f64], a: usize, z: usize, out: &mut [f64]) -> f64 {
        out.iter_mut().for_each(|x| *x = 0.0);
        for (s, bs) in b.iter().enumerate() {
            if *bs == 0.0 {
                continue;
            }
            for (o, t) in out.iter_mut().zip(self.transition_row(s, a)) {
                *o += bs * t;
            }
        }
        let mut total = 0.0;
        for (s_next, o) in out.iter_mut().enumerate() {
            *o *= self.o(a, s_next, z);
            total += *o;
        }
        total
    }

    pub fn validate_trajectory(&self, traj: &Trajectory) -> Result<()> {
        self.spaces().validate_trajectory(traj)
    }

    /// Applies a state relabelling: new state `i` is old state `perm[i]`.
    pub fn permute_states(&self, perm: &[usize]) -> Result<Self> {
        let (ns, na, nz) = (self.n_states, self.n_actions, self.n_observations);
        let mut t = vec![0.0; ns * na * ns];
        let mut o = vec![0.0; na * ns * nz];
        for s in 0..ns {
            for a in 0..na {
                for s2 in 0..ns {
                    t[(s * na + a) * ns + s2] = self.t(perm[s], a, perm[s2]);
                }
            }
        }
        for a in 0..na {
            for s2 in 0..ns {
                for z in 0..nz {
                    o[(a * ns + s2) * nz + z] = self.o(a, perm[s2], z);
                }
            }
        }
        let initial = perm.iter().map(|&p| self.initial[p]).collect();
        self.replace(t, o, initial)
    }
}

#[derive(Serialize, Deserialize)]
struct ParamsFile {
    n_states: usize,
    n_actions: usize,
    n_observations: usize,
    transition: Vec<Vec<Vec<f64>>>,
    observation: Vec<Vec<Vec<f64>>>,
    initial: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Labels>,
}

impl TryFrom<ParamsFile> for IohmmParams {
    type Error = Error;
    fn try_from(f: ParamsFile) -> Result<Self> {
        let params = IohmmParams::new(f.transition, f.observation, f.initial)?;
        for (what, expected, got) in [
            ("n_states", f.n_states, params.n_states),
            ("n_actions", f.n_actions, params.n_actions),
            ("n_observations", f.n_observations, params.n_observations),
        ] {
            if expected != got {
                return Err(Error::DimensionMismatch { what, expected, got });
            }
        }
        let spaces = params.spaces();
        let spaces = match f.labels {
            Some(l) => spaces.with_labels(l)?,
            None => spaces,
        };
        Ok(params.with_labels(spaces.labels))
    }
}

impl From<IohmmParams> for ParamsFile {
    fn from(p: IohmmParams) -> Self {
        let (ns, na, nz) = (p.n_states, p.n_actions, p.n_observations);
        let transition = (0..ns)
            .map(|s| (0..na).map(|a| p.transition_row(s, a).to_vec()).collect())
            .collect();
        let observation = (0..na)
            .map(|a| (0..ns).map(|s2| p.observation_row(a, s2).to_vec()).collect())
            .collect();
        ParamsFile {
            n_states: ns,
            n_actions: na,
            n_observations: nz,
            transition,
            observation,
            initial: p.initial.0.clone(),
            labels: p.labels.clone(),
        }
    }
}

/// One demonstration: the `(action, observation)` pairs in order.
///
/// A `terminal` trajectory ended with a stop action; its last observation is a
/// placeholder and takes no part in any likelihood.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<(usize, usize)>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub terminal: bool,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub tags: BTreeMap<String, String>,
}

impl Trajectory {
    pub fn new(steps: Vec<(usize, usize)>) -> Self {
        Trajectory {
            steps,
            terminal: false,
            tags: BTreeMap::new(),
        }
    }

    pub fn terminal(steps: Vec<(usize, usize)>) -> Self {
        Trajectory {
            steps,
            terminal: true,
            tags: BTreeMap::new(),
        }
    }

    pub fn with_tag(mut self, key: &str, value: &str) -> Self {
        self.tags.insert(key.to_string(), value.to_string());
        self
    }

    /// Number of actions taken (τ).
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Steps whose observation is real data.
    pub fn observed(&self) -> &[(usize, usize)] {
        let n = self.steps.len() - usize::from(self.terminal && !self.steps.is_empty());
        &self.steps[..n]
    }

    pub fn actions(&self) -> impl Iterator<Item = usize> + '_ {
        self.steps.iter().map(|(a, _)| *a)
    }
}

impl Spaces {
    pub fn validate_trajectory(&self, traj: &Trajectory) -> Result<()> {
        if traj.steps.is_empty() {
            return Err(Error::invalid("trajectory", "must contain at least one step"));
        }
        for &(a, z) in &traj.steps {
            self.check_action(a)?;
            self.check_observation(z)?;
        }
        Ok(())
    }
}

/// A collection of demonstrations over shared spaces.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spaces: Spaces,
    pub trajectories: Vec<Trajectory>,
    /// Actions that end a trajectory.
    pub stop_actions: Vec<usize>,
    /// Horizon cap the data was generated or collected under, if known.
    pub horizon: Option<usize>,
}

/// Longest trajectory accepted from data files.
pub const MAX_TRAJECTORY_LEN: usize = 1000;

impl Dataset {
    pub fn new(spaces: Spaces, trajectories: Vec<Trajectory>) -> Result<Self> {
        let ds = Dataset {
            spaces,
            trajectories,
            stop_actions: Vec::new(),
            horizon: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn with_stop_actions(mut self, stop_actions: Vec<usize>) -> Result<Self> {
        self.stop_actions = stop_actions;
        self.validate()?;
        Ok(self)
    }

    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.horizon = Some(horizon);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.spaces.validate()?;
        if self.trajectories.is_empty() {
            return Err(Error::invalid("dataset", "must contain at least one trajectory"));
        }
        for &a in &self.stop_actions {
            self.spaces.check_action(a)?;
        }
        for (i, traj) in self.trajectories.iter().enumerate() {
            self.spaces
                .validate_trajectory(traj)
                .map_err(|e| e.in_trajectory(i))?;
            if traj.len() > MAX_TRAJECTORY_LEN {
                return Err(Error::invalid(
                    "trajectory",
                    format!("length {} exceeds the cap of {MAX_TRAJECTORY_LEN}", traj.len()),
                )
                .in_trajectory(i));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Horizon used where a stopping rule needs a cap: the declared horizon or
    /// the longest trajectory.
    pub fn horizon_cap(&self) -> usize {
        self.horizon
            .unwrap_or_else(|| self.trajectories.iter().map(Trajectory::len).max().unwrap_or(0))
    }
}

/// One-step Bayesian belief update.
pub fn belief_update(b: &Belief, a: usize, z: usize, params: &IohmmParams) -> Result<Belief> {
    params.spaces().check_action(a)?;
    params.spaces().check_observation(z)?;
    if b.len() != params.n_states() {
        return Err(Error::DimensionMismatch {
            what: "belief",
            expected: params.n_states(),
            got: b.len(),
        });
    }
    let mut out = vec![0.0; params.n_states()];
    let total = params.update_weights(b.probs(), a, z, &mut out);
    if total <= ZERO_LIKELIHOOD || !total.is_finite() {
        return Err(Error::ZeroLikelihood {
            step: 0,
            action: a,
            observation: z,
        });
    }
    out.iter_mut().for_each(|x| *x /= total);
    Ok(Belief::normalized(out))
}

/// Beliefs along a trajectory with the per-step observation log-likelihoods.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefPath {
    /// `b_1 ..= b_{m+1}` for `m` observed steps.
    pub beliefs: Vec<Belief>,
    /// `log Pr(z_t | b_t, a_t)` for each observed step.
    pub log_likelihoods: Vec<f64>,
}

impl BeliefPath {
    pub fn log_likelihood(&self) -> f64 {
        self.log_likelihoods.iter().sum()
    }
}

/// Folds [`belief_update`] over the observed steps of `traj`.
pub fn belief_trajectory(traj: &Trajectory, params: &IohmmParams) -> Result<BeliefPath> {
    params.validate_trajectory(traj)?;
    let observed = traj.observed();
    let mut beliefs = Vec::with_capacity(observed.len() + 1);
    let mut log_likelihoods = Vec::with_capacity(observed.len());
    beliefs.push(params.initial().clone());
    let mut buf = vec![0.0; params.n_states()];
    for (t, &(a, z)) in observed.iter().enumerate() {
        let total = params.update_weights(beliefs[t].probs(), a, z, &mut buf);
        if total <= ZERO_LIKELIHOOD || !total.is_finite() {
            return Err(Error::ZeroLikelihood {
                step: t,
                action: a,
                observation: z,
            });
        }
        log_likelihoods.push(total.ln());
        beliefs.push(Belief::normalized(buf.iter().map(|x| x / total).collect()));
    }
    Ok(BeliefPath {
        beliefs,
        log_likelihoods,
    })
}

/// Draws an index from a discrete distribution by inversion.
pub(crate) fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // u landed in the rounding gap at the top; return the last supported index
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(probs.len() - 1)
}

/// Samples `s' ~ T(·|s,a)` and then `z ~ O(·|a,s')`.
pub fn sample_step<R: Rng + ?Sized>(
    s: usize,
    a: usize,
    params: &IohmmParams,
    rng: &mut R,
) -> Result<(usize, usize)> {
    let spaces = params.spaces();
    spaces.check_state(s)?;
    spaces.check_action(a)?;
    let s_next = sample_categorical(params.transition_row(s, a), rng);
    let z = sample_categorical(params.observation_row(a, s_next), rng);
    Ok((s_next, z))
}
