//! Reference decision environments and a behavior simulator.
//!
//! An environment separates the world (`true_params`) from the agent's
//! subjective decision dynamics (`agent_params`). Hidden states and
//! observations are drawn from the world while the agent filters with its own
//! parameters and acts through its boundary policy.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::iohmm::{sample_categorical, sample_step, Belief, Dataset, IohmmParams, Labels, Trajectory};
use crate::policy::BoundaryPolicy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentSpec {
    pub name: String,
    pub true_params: IohmmParams,
    pub agent_params: IohmmParams,
    pub behavior: BoundaryPolicy,
    #[serde(default)]
    pub stop_actions: Vec<usize>,
    pub max_horizon: usize,
}

impl EnvironmentSpec {
    pub fn validate(&self) -> Result<()> {
        let spaces = self.true_params.spaces();
        let agent = self.agent_params.spaces();
        if (spaces.n_states, spaces.n_actions, spaces.n_observations)
            != (agent.n_states, agent.n_actions, agent.n_observations)
        {
            return Err(Error::invalid("environment", "agent and true parameters differ in shape"));
        }
        if self.behavior.n_states() != spaces.n_states || self.behavior.n_actions() != spaces.n_actions {
            return Err(Error::invalid("environment", "behavior policy does not match the spaces"));
        }
        self.behavior.validate()?;
        for &a in &self.stop_actions {
            spaces.check_action(a)?;
        }
        if self.max_horizon == 0 {
            return Err(Error::invalid("environment", "max_horizon must be at least 1"));
        }
        Ok(())
    }

    pub fn is_biased(&self) -> bool {
        self.true_params != self.agent_params
    }
}

/// Per-trajectory evaluation-only quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryTruth {
    /// Hidden states `s_1 ..= s_{m+1}`.
    pub states: Vec<usize>,
    /// Agent beliefs `b_1 ..= b_{m+1}`.
    pub beliefs: Vec<Vec<f64>>,
    /// Behavior distribution over actions at each of the τ decisions.
    pub action_probs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub trajectories: Vec<TrajectoryTruth>,
}

fn diag_labels() -> Labels {
    Labels::new(&["s-", "s+"], &["a=", "a-", "a+"], &["z-", "z+"])
}

fn diag_params(o_minus_given_plus: f64) -> IohmmParams {
    let identity = [vec![1.0, 0.0], vec![0.0, 1.0]];
    let transition = vec![vec![identity[0].clone(); 3], vec![identity[1].clone(); 3]];
    let observation = vec![
        vec![vec![0.6, 0.4], vec![o_minus_given_plus, 1.0 - o_minus_given_plus]],
        vec![vec![0.5, 0.5]; 2],
        vec![vec![0.5, 0.5]; 2],
    ];
    IohmmParams::new(transition, observation, vec![0.5, 0.5])
        .expect("static parameters are valid")
        .with_labels(Some(diag_labels()))
}

fn diag_policy() -> BoundaryPolicy {
    BoundaryPolicy::new(10.0, vec![vec![0.5, 0.5], vec![1.3, -0.3], vec![-0.3, 1.3]]).expect("static policy is valid")
}

/// Two-state diagnosis: keep testing (`a=`) or declare negative/positive.
pub fn make_diag() -> EnvironmentSpec {
    let params = diag_params(0.4);
    EnvironmentSpec {
        name: "diag".into(),
        true_params: params.clone(),
        agent_params: params,
        behavior: diag_policy(),
        stop_actions: vec![1, 2],
        max_horizon: 50,
    }
}

/// DIAG with an agent that overrates negative tests in positive patients.
pub fn make_bias() -> EnvironmentSpec {
    EnvironmentSpec {
        name: "bias".into(),
        agent_params: diag_params(0.2),
        ..make_diag()
    }
}

const ADNI_MRI: [&str; 4] = ["not-ordered", "low", "average", "high"];
const ADNI_CDR: [&str; 3] = ["normal", "questionable", "impaired"];

/// Index of the observation pairing an MRI outcome with a CDR-SB category.
pub fn adni_observation(mri: usize, cdr: usize) -> usize {
    mri * ADNI_CDR.len() + cdr
}

fn dirichlet<R: rand::Rng>(alpha: &[f64], rng: &mut R) -> Vec<f64> {
    let draws: Vec<f64> = alpha
        .iter()
        .map(|&k| Gamma::new(k, 1.0).expect("positive shape").sample(rng))
        .collect();
    let total: f64 = draws.iter().sum();
    draws.iter().map(|d| d / total).collect()
}

/// Synthetic Alzheimer's-style monitoring: normal, MCI, dementia; per visit
/// the clinician orders an MRI or not and observes MRI outcome and CDR-SB.
pub fn make_adni_like(seed: u64) -> EnvironmentSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (ns, na) = (3, 2);
    let nz = ADNI_MRI.len() * ADNI_CDR.len();

    let mut transition = vec![vec![vec![0.0; ns]; na]; ns];
    for s in 0..ns - 1 {
        let progress = 0.05 + 0.1 * rand::Rng::random::<f64>(&mut rng);
        for row in transition[s].iter_mut() {
            row[s] = 1.0 - progress;
            row[s + 1] = progress;
        }
    }
    for row in transition[ns - 1].iter_mut() {
        row[ns - 1] = 1.0;
    }

    // CDR-SB leans to the category matching the state; MRI volume likewise
    let cdr: Vec<Vec<f64>> = (0..ns)
        .map(|s| {
            let alpha: Vec<f64> = (0..ADNI_CDR.len()).map(|c| if c == s { 8.0 } else { 2.0 }).collect();
            dirichlet(&alpha, &mut rng)
        })
        .collect();
    let mri: Vec<Vec<f64>> = (0..ns)
        .map(|s| {
            // state 0 -> high volume, state 2 -> low volume
            let favored = 3 - s;
            let alpha: Vec<f64> = (1..ADNI_MRI.len()).map(|m| if m == favored { 12.0 } else { 2.0 }).collect();
            dirichlet(&alpha, &mut rng)
        })
        .collect();
    let observation: Vec<Vec<Vec<f64>>> = (0..na)
        .map(|a| {
            (0..ns)
                .map(|s| {
                    let mut row = vec![0.0; nz];
                    for (c, pc) in cdr[s].iter().enumerate() {
                        if a == 0 {
                            row[adni_observation(0, c)] = *pc;
                        } else {
                            for (m, pm) in mri[s].iter().enumerate() {
                                row[adni_observation(m + 1, c)] = pc * pm;
                            }
                        }
                    }
                    row
                })
                .collect()
        })
        .collect();
    let initial = dirichlet(&[12.0, 6.0, 2.0], &mut rng);

    let observations: Vec<String> = ADNI_MRI
        .iter()
        .flat_map(|m| ADNI_CDR.iter().map(move |c| format!("{m}/{c}")))
        .collect();
    let obs_refs: Vec<&str> = observations.iter().map(String::as_str).collect();
    let labels = Labels::new(&["NL", "MCI", "dementia"], &["no-mri", "mri"], &obs_refs);
    let params = IohmmParams::new(transition, observation, initial)
        .expect("constructed rows are distributions")
        .with_labels(Some(labels));
    // MRIs are ordered when the belief leans to MCI
    let behavior = BoundaryPolicy::new(1.0, vec![vec![1.5, -1.0, 0.5], vec![-0.5, 2.0, -0.5]]).expect("valid policy");
    EnvironmentSpec {
        name: "adni-like".into(),
        true_params: params.clone(),
        agent_params: params,
        behavior,
        stop_actions: Vec::new(),
        max_horizon: 6,
    }
}

/// The tree-shaped diagnostic workflow: test for the disease, then for its
/// sub-type, then stop with a diagnosis.
pub fn make_decision_tree_example() -> EnvironmentSpec {
    const INI: usize = 0;
    const HLT: usize = 1;
    const DIS: usize = 2;
    const DSA: usize = 3;
    const DSB: usize = 4;
    const TST_DIS: usize = 0;
    const TST_TYP: usize = 1;
    let (ns, na, nz) = (5, 5, 5);
    let mut transition = vec![vec![vec![0.0; ns]; na]; ns];
    for (s, rows) in transition.iter_mut().enumerate() {
        for row in rows.iter_mut() {
            row[s] = 1.0;
        }
    }
    transition[INI][TST_DIS] = vec![0.0, 0.7, 0.3, 0.0, 0.0];
    transition[DIS][TST_TYP] = vec![0.0, 0.0, 0.0, 0.6, 0.4];

    // observations: none, neg, pos, typ-a, typ-b
    let mut observation = vec![vec![vec![0.0; nz]; ns]; na];
    for (a, rows) in observation.iter_mut().enumerate() {
        for (s, row) in rows.iter_mut().enumerate() {
            let z = match (a, s) {
                (TST_DIS, HLT) => 1,
                (TST_DIS, DIS) => 2,
                (TST_TYP, DSA) => 3,
                (TST_TYP, DSB) => 4,
                _ => 0,
            };
            row[z] = 1.0;
        }
    }
    let labels = Labels::new(
        &["ini", "hlt", "dis", "dsa", "dsb"],
        &["tst-dis", "tst-typ", "stp-hlt", "stp-dsa", "stp-dsb"],
        &["none", "neg", "pos", "typ-a", "typ-b"],
    );
    let params = IohmmParams::new(transition, observation, vec![1.0, 0.0, 0.0, 0.0, 0.0])
        .expect("constructed rows are distributions")
        .with_labels(Some(labels));
    let corner = |s: usize| (0..ns).map(|i| if i == s { 1.0 } else { 0.0 }).collect::<Vec<f64>>();
    let behavior = BoundaryPolicy::new(10.0, vec![corner(INI), corner(DIS), corner(HLT), corner(DSA), corner(DSB)])
        .expect("valid policy");
    EnvironmentSpec {
        name: "tree".into(),
        true_params: params.clone(),
        agent_params: params,
        behavior,
        stop_actions: vec![2, 3, 4],
        max_horizon: 10,
    }
}

/// Looks up a built-in environment by name; `seed` only affects `adni-like`.
pub fn by_name(name: &str, seed: u64) -> Result<EnvironmentSpec> {
    match name {
        "diag" => Ok(make_diag()),
        "bias" => Ok(make_bias()),
        "adni-like" | "adni" => Ok(make_adni_like(seed)),
        "tree" | "decision-tree" => Ok(make_decision_tree_example()),
        other => Err(Error::UnknownEnvironment(other.to_string())),
    }
}

fn simulate_one(env: &EnvironmentSpec, rng: &mut ChaCha8Rng) -> Result<(Trajectory, TrajectoryTruth)> {
    let mut state = sample_categorical(env.true_params.initial().probs(), rng);
    let mut belief = env.agent_params.initial().clone();
    let mut steps = Vec::new();
    let mut truth = TrajectoryTruth {
        states: vec![state],
        beliefs: vec![belief.probs().to_vec()],
        action_probs: Vec::new(),
    };
    let mut terminal = false;
    while steps.len() < env.max_horizon {
        let probs = env.behavior.probs(belief.probs());
        let action = sample_categorical(&probs, rng);
        truth.action_probs.push(probs);
        if env.stop_actions.contains(&action) {
            steps.push((action, 0));
            terminal = true;
            break;
        }
        let (next, z) = sample_step(state, action, &env.true_params, rng)?;
        belief = crate::iohmm::belief_update(&belief, action, z, &env.agent_params)?;
        steps.push((action, z));
        state = next;
        truth.states.push(state);
        truth.beliefs.push(belief.probs().to_vec());
    }
    let traj = if terminal { Trajectory::terminal(steps) } else { Trajectory::new(steps) };
    Ok((traj, truth))
}

/// Simulates `n` demonstrations; trajectory `i` uses seed `seed + i`.
pub fn generate_dataset(env: &EnvironmentSpec, n: usize, seed: u64) -> Result<(Dataset, GroundTruth)> {
    if n == 0 {
        return Err(Error::invalid("generate_dataset", "n must be at least 1"));
    }
    env.validate()?;
    let results: Vec<Result<(Trajectory, TrajectoryTruth)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
            simulate_one(env, &mut rng).map_err(|e| e.in_trajectory(i))
        })
        .collect();
    let mut trajectories = Vec::with_capacity(n);
    let mut truths = Vec::with_capacity(n);
    for (i, r) in results.into_iter().enumerate() {
        let (mut traj, truth) = r?;
        if env.name == "adni-like" {
            traj = traj.with_tag("baseline", if truth.states[0] == 0 { "normal" } else { "impaired" });
            traj = traj.with_tag("sex", if i % 2 == 0 { "female" } else { "male" });
        }
        trajectories.push(traj);
        truths.push(truth);
    }
    let dataset = Dataset::new(env.true_params.spaces(), trajectories)?
        .with_stop_actions(env.stop_actions.clone())?
        .with_horizon(env.max_horizon);
    Ok((dataset, GroundTruth { trajectories: truths }))
}

/// Beliefs along a trajectory under parameters other than the agent's.
pub fn filter_beliefs(traj: &Trajectory, params: &IohmmParams) -> Result<Vec<Vec<f64>>> {
    Ok(crate::iohmm::belief_trajectory(traj, params)?
        .beliefs
        .into_iter()
        .map(Belief::into_vec)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::iohmm::belief_update;
    use crate::policy::{decision_boundary, Boundary};

    #[test]
    fn diag_shape_and_boundary() {
        let env = make_diag();
        env.validate().unwrap();
        assert_eq!(env.true_params.initial().probs(), &[0.5, 0.5]);
        match decision_boundary(&env.behavior, 0, 2).unwrap() {
            Boundary::Hyperplane(h) => {
                let p = h.edge_crossing(0, 1).unwrap();
                assert!((p - 0.9).abs() < 1e-12);
            }
            Boundary::Degenerate => panic!("expected a hyperplane"),
        }
        assert!(!env.is_biased());
    }

    #[test]
    fn bias_agent_and_world() {
        let env = make_bias();
        assert_eq!(env.agent_params.o(0, 1, 0), 0.2);
        assert_eq!(env.true_params.o(0, 1, 0), 0.4);
        let mut agent = Belief::uniform(2);
        let mut world = Belief::uniform(2);
        for _ in 0..2 {
            agent = belief_update(&agent, 0, 0, &env.agent_params).unwrap();
            world = belief_update(&world, 0, 0, &env.true_params).unwrap();
        }
        assert!((agent[1] - 0.10).abs() < 1e-12);
        assert!((world[1] - 4.0 / 13.0).abs() < 1e-12);
    }

    #[test]
    fn adni_structure() {
        let env = make_adni_like(5);
        env.validate().unwrap();
        assert_eq!(env.true_params.n_observations(), 12);
        for s in 0..3 {
            let not_ordered: f64 = (0..3).map(|c| env.true_params.o(0, s, adni_observation(0, c))).sum();
            assert!((not_ordered - 1.0).abs() < 1e-12);
            let ordered: f64 = (0..3).map(|c| env.true_params.o(1, s, adni_observation(0, c))).sum();
            assert_eq!(ordered, 0.0);
        }
        assert_eq!(make_adni_like(5), env);
        assert_ne!(make_adni_like(6), env);
    }

    #[test]
    fn tree_reachability_and_risk() {
        let env = make_decision_tree_example();
        env.validate().unwrap();
        let p = &env.true_params;
        assert_eq!(p.initial().probs()[0], 1.0);
        let predicted = p.predict(p.initial().probs(), 0);
        for (s, v) in predicted.iter().enumerate() {
            assert!(*v == 0.0 || s == 1 || s == 2);
        }
        for z in 0..5 {
            let probs = p.observation_probs(p.initial().probs(), 0);
            if probs[z] == 0.0 {
                continue;
            }
            let b2 = belief_update(p.initial(), 0, z, p).unwrap();
            let weights: Vec<f64> = (0..5).map(|s| p.t(0, 0, s) * p.o(0, s, z)).collect();
            let total: f64 = weights.iter().sum();
            assert!((b2[2] - weights[2] / total).abs() < 1e-12);
        }
    }

    #[test]
    fn generation_is_reproducible_and_capped() {
        let env = make_diag();
        let (a, ta) = generate_dataset(&env, 50, 7).unwrap();
        let (b, tb) = generate_dataset(&env, 50, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        for (traj, truth) in a.trajectories.iter().zip(&ta.trajectories) {
            assert!(traj.len() <= 50);
            assert!(traj.terminal || traj.len() == 50);
            assert_eq!(truth.action_probs.len(), traj.len());
            assert_eq!(truth.beliefs.len(), traj.observed().len() + 1);
            assert_eq!(truth.states.len(), truth.beliefs.len());
        }
        assert!(generate_dataset(&env, 0, 7).is_err());
    }

    #[test]
    fn unbiased_truth_matches_filter() {
        let env = make_diag();
        let (ds, truth) = generate_dataset(&env, 30, 11).unwrap();
        for (traj, t) in ds.trajectories.iter().zip(&truth.trajectories) {
            let filtered = filter_beliefs(traj, &env.true_params).unwrap();
            for (x, y) in filtered.iter().flatten().zip(t.beliefs.iter().flatten()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn biased_truth_differs_after_negative_test() {
        let env = make_bias();
        let (ds, truth) = generate_dataset(&env, 100, 3).unwrap();
        for (traj, t) in ds.trajectories.iter().zip(&truth.trajectories) {
            if !traj.observed().iter().any(|&(a, z)| a == 0 && z == 0) {
                continue;
            }
            let filtered = filter_beliefs(traj, &env.true_params).unwrap();
            assert_ne!(filtered.last().unwrap(), t.beliefs.last().unwrap());
            let diff = filtered
                .iter()
                .zip(&t.beliefs)
                .any(|(x, y)| (x[1] - y[1]).abs() > 1e-9);
            assert!(diff);
        }
    }

    #[test]
    fn diag_positive_patients_mostly_declared_positive() {
        let env = make_diag();
        let (ds, truth) = generate_dataset(&env, 2000, 21).unwrap();
        let (mut hits, mut total) = (0, 0);
        for (traj, t) in ds.trajectories.iter().zip(&truth.trajectories) {
            if t.states[0] == 1 {
                total += 1;
                if traj.steps.last().unwrap().0 == 2 {
                    hits += 1;
                }
            }
        }
        assert!(hits as f64 / total as f64 > 0.8, "{hits}/{total}");
    }
}
