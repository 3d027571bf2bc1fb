//! Accuracy metrics comparing a learned model against ground truth or
//! held-out behavior.
//!
//! KL-based mismatches are summed over the steps of each trajectory and
//! averaged over trajectories. A support violation yields `+∞`.

use itertools::Itertools;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envs::GroundTruth;
use crate::error::{Error, Result};
use crate::iohmm::{belief_trajectory, Dataset, Trajectory};
use crate::model::ThetaEstimate;

/// `KL(p ‖ q)` in nats with `0·log 0 = 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&pi, &qi)| {
            if pi == 0.0 {
                0.0
            } else if qi == 0.0 {
                f64::INFINITY
            } else {
                pi * (pi / qi).ln()
            }
        })
        .sum::<f64>()
        .max(0.0)
}

fn check_pairs(what: &'static str, truth: &[Vec<Vec<f64>>], est: &[Vec<Vec<f64>>]) -> Result<()> {
    if truth.len() != est.len() {
        return Err(Error::DimensionMismatch {
            what,
            expected: truth.len(),
            got: est.len(),
        });
    }
    for (i, (a, b)) in truth.iter().zip(est).enumerate() {
        if a.len() != b.len() {
            return Err(Error::DimensionMismatch {
                what,
                expected: a.len(),
                got: b.len(),
            }
            .in_trajectory(i));
        }
    }
    Ok(())
}

/// `Σ_t KL(truth_t ‖ est_t)` for each trajectory.
pub fn per_trajectory_kl(truth: &[Vec<Vec<f64>>], est: &[Vec<Vec<f64>>]) -> Result<Vec<f64>> {
    check_pairs("distribution sequence", truth, est)?;
    Ok(truth
        .iter()
        .zip(est)
        .map(|(a, b)| a.iter().zip(b).map(|(p, q)| kl_divergence(p, q)).sum())
        .collect())
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Mean over trajectories of `Σ_t KL(b_t ‖ b̂_t)`.
pub fn belief_mismatch(true_beliefs: &[Vec<Vec<f64>>], est_beliefs: &[Vec<Vec<f64>>]) -> Result<f64> {
    Ok(mean(&per_trajectory_kl(true_beliefs, est_beliefs)?))
}

/// Mean over trajectories of `Σ_t KL(π_b(·|b_t) ‖ π̂(·|b̂_t))`.
pub fn policy_mismatch(true_dists: &[Vec<Vec<f64>>], est_dists: &[Vec<Vec<f64>>]) -> Result<f64> {
    Ok(mean(&per_trajectory_kl(true_dists, est_dists)?))
}

/// Beliefs under the model for every trajectory.
pub fn model_beliefs(dataset: &Dataset, model: &ThetaEstimate) -> Result<Vec<Vec<Vec<f64>>>> {
    dataset
        .trajectories
        .par_iter()
        .enumerate()
        .map(|(i, traj)| {
            belief_trajectory(traj, &model.params)
                .map(|path| path.beliefs.into_iter().map(|b| b.into_vec()).collect())
                .map_err(|e| e.in_trajectory(i))
        })
        .collect()
}

/// Action distributions of the model at its own beliefs, one per decision.
pub fn model_action_dists(beliefs: &[Vec<Vec<f64>>], dataset: &Dataset, model: &ThetaEstimate) -> Vec<Vec<Vec<f64>>> {
    dataset
        .trajectories
        .iter()
        .zip(beliefs)
        .map(|(traj, bs)| bs.iter().take(traj.len()).map(|b| model.policy.probs(b)).collect())
        .collect()
}

/// Step at which greedy replay first selects a stop action, or `cap` if it
/// never does within the demonstration.
fn replay_stop(traj: &Trajectory, beliefs: &[Vec<f64>], model: &ThetaEstimate, stop_actions: &[usize], cap: usize) -> usize {
    for (t, b) in beliefs.iter().take(traj.len()).enumerate() {
        if stop_actions.contains(&model.policy.modal_action(b)) {
            return t + 1;
        }
    }
    cap
}

/// `|τ_demo − τ_model|` per trajectory under greedy modal replay on the
/// demonstration's own observations.
pub fn stopping_time_errors(dataset: &Dataset, model: &ThetaEstimate, stop_actions: &[usize]) -> Result<Vec<f64>> {
    let beliefs = model_beliefs(dataset, model)?;
    let cap = dataset.horizon_cap();
    Ok(dataset
        .trajectories
        .iter()
        .zip(&beliefs)
        .map(|(traj, bs)| {
            let stop = replay_stop(traj, bs, model, stop_actions, cap);
            (traj.len() as f64 - stop as f64).abs()
        })
        .collect())
}

/// Mean stopping-time error. With no stop actions the model never stops, so
/// every trajectory contributes `cap − τ`.
pub fn stopping_time_error(dataset: &Dataset, model: &ThetaEstimate, stop_actions: &[usize]) -> Result<f64> {
    Ok(mean(&stopping_time_errors(dataset, model, stop_actions)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionMatching {
    pub brier: f64,
    /// Absent when only one class occurs.
    pub auroc: Option<f64>,
    /// Absent when there are no positives.
    pub auprc: Option<f64>,
}

pub fn brier_score(predicted: &[f64], labels: &[bool]) -> f64 {
    predicted
        .iter()
        .zip(labels)
        .map(|(p, &y)| {
            let d = p - if y { 1.0 } else { 0.0 };
            d * d
        })
        .sum::<f64>()
        / predicted.len() as f64
}

/// Rank-statistic AUROC with midranks for tied scores.
pub fn auroc(predicted: &[f64], labels: &[bool]) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&y| y).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let order: Vec<usize> = (0..predicted.len())
        .sorted_by(|&i, &j| predicted[i].total_cmp(&predicted[j]))
        .collect();
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && predicted[order[end + 1]] == predicted[order[start]] {
            end += 1;
        }
        let midrank = (start + end) as f64 / 2.0 + 1.0;
        rank_sum += order[start..=end].iter().filter(|&&i| labels[i]).count() as f64 * midrank;
        start = end + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

/// Area under the precision-recall curve by step interpolation
/// (average precision), tied scores entering as one threshold.
pub fn auprc(predicted: &[f64], labels: &[bool]) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&y| y).count();
    if n_pos == 0 {
        return None;
    }
    let order: Vec<usize> = (0..predicted.len())
        .sorted_by(|&i, &j| predicted[j].total_cmp(&predicted[i]))
        .collect();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && predicted[order[end + 1]] == predicted[order[start]] {
            end += 1;
        }
        for &i in &order[start..=end] {
            if labels[i] {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        let recall = tp as f64 / n_pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
        start = end + 1;
    }
    Some(area)
}

pub fn action_matching(predicted: &[f64], labels: &[bool]) -> Result<ActionMatching> {
    if predicted.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            what: "action predictions",
            expected: labels.len(),
            got: predicted.len(),
        });
    }
    if predicted.is_empty() {
        return Err(Error::invalid("action predictions", "no decisions to score"));
    }
    Ok(ActionMatching {
        brier: brier_score(predicted, labels),
        auroc: auroc(predicted, labels),
        auprc: auprc(predicted, labels),
    })
}

/// The action scored as the positive class: action 1 in binary settings,
/// otherwise the lowest-index action that does not stop the trajectory.
pub fn default_positive_action(dataset: &Dataset) -> usize {
    if dataset.spaces.n_actions == 2 {
        return 1;
    }
    (0..dataset.spaces.n_actions)
        .find(|a| !dataset.stop_actions.contains(a))
        .unwrap_or(0)
}

/// Relabeling of the model's states (new `i` = old `perm[i]`) that minimizes
/// belief mismatch against ground truth.
pub fn best_state_permutation(dataset: &Dataset, truth: &GroundTruth, model: &ThetaEstimate) -> Result<Vec<usize>> {
    let n = model.params.n_states();
    let truth_beliefs: Vec<Vec<Vec<f64>>> = truth.trajectories.iter().map(|t| t.beliefs.clone()).collect();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for perm in (0..n).permutations(n) {
        let candidate = model.permute_states(&perm)?;
        let score = match model_beliefs(dataset, &candidate) {
            Ok(beliefs) => belief_mismatch(&truth_beliefs, &beliefs)?,
            Err(_) => f64::INFINITY,
        };
        if best.as_ref().is_none_or(|(s, _)| score < *s) {
            best = Some((score, perm));
        }
    }
    Ok(best.expect("at least one permutation").1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEval {
    #[serde(default, skip_serializing_if = "Option::is_none", with = "extended_float::option")]
    pub belief_mismatch: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "extended_float::option")]
    pub policy_mismatch: Option<f64>,
    pub stopping_time_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(default, skip_serializing_if = "Option::is_none", with = "extended_float::option")]
    pub belief_mismatch: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "extended_float::option")]
    pub policy_mismatch: Option<f64>,
    pub stopping_time_error: f64,
    pub brier: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auroc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auprc: Option<f64>,
    /// Brier score of predicting the empirical positive rate at every step.
    pub brier_constant_rate: f64,
    pub positive_action: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_permutation: Option<Vec<usize>>,
    pub per_trajectory: Vec<TrajectoryEval>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub positive_action: Option<usize>,
    /// Relabel model states to best match ground-truth beliefs first.
    pub align_states: bool,
}

fn optional_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl EvalReport {
    pub const CSV_HEADER: [&'static str; 7] = [
        "belief_mismatch",
        "policy_mismatch",
        "stopping_time_error",
        "brier",
        "auroc",
        "auprc",
        "brier_constant_rate",
    ];

    pub fn csv_row(&self) -> [String; 7] {
        [
            optional_cell(self.belief_mismatch),
            optional_cell(self.policy_mismatch),
            self.stopping_time_error.to_string(),
            self.brier.to_string(),
            optional_cell(self.auroc),
            optional_cell(self.auprc),
            self.brier_constant_rate.to_string(),
        ]
    }

    /// Header plus one data row.
    pub fn to_csv(&self) -> Result<String> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::invalid("csv", e.to_string());
        writer.write_record(Self::CSV_HEADER).map_err(io)?;
        writer.write_record(self.csv_row()).map_err(io)?;
        let bytes = writer.into_inner().map_err(|e| Error::invalid("csv", e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Scores `model` on `dataset`; belief and policy mismatch need `truth`.
pub fn evaluate(dataset: &Dataset, model: &ThetaEstimate, truth: Option<&GroundTruth>, options: &EvalOptions) -> Result<EvalReport> {
    dataset.validate()?;
    model.validate()?;
    if let Some(t) = truth {
        if t.trajectories.len() != dataset.len() {
            return Err(Error::DimensionMismatch {
                what: "ground truth trajectories",
                expected: dataset.len(),
                got: t.trajectories.len(),
            });
        }
    }
    let permutation = match truth {
        Some(t) if options.align_states => Some(best_state_permutation(dataset, t, model)?),
        _ => None,
    };
    let model = match &permutation {
        Some(p) => model.permute_states(p)?,
        None => model.clone(),
    };
    let beliefs = model_beliefs(dataset, &model)?;
    let dists = model_action_dists(&beliefs, dataset, &model);

    let (belief_kl, policy_kl) = match truth {
        Some(t) => {
            let tb: Vec<Vec<Vec<f64>>> = t.trajectories.iter().map(|x| x.beliefs.clone()).collect();
            let tp: Vec<Vec<Vec<f64>>> = t.trajectories.iter().map(|x| x.action_probs.clone()).collect();
            (Some(per_trajectory_kl(&tb, &beliefs)?), Some(per_trajectory_kl(&tp, &dists)?))
        }
        None => (None, None),
    };
    let stopping = stopping_time_errors(dataset, &model, &dataset.stop_actions)?;

    let positive = options.positive_action.unwrap_or_else(|| default_positive_action(dataset));
    dataset.spaces.check_action(positive)?;
    let mut predicted = Vec::new();
    let mut labels = Vec::new();
    for (traj, ds) in dataset.trajectories.iter().zip(&dists) {
        for (&(a, _), d) in traj.steps.iter().zip(ds) {
            predicted.push(d[positive]);
            labels.push(a == positive);
        }
    }
    let matching = action_matching(&predicted, &labels)?;
    let rate = labels.iter().filter(|&&y| y).count() as f64 / labels.len() as f64;
    let brier_constant_rate = brier_score(&vec![rate; labels.len()], &labels);

    let per_trajectory = (0..dataset.len())
        .map(|i| TrajectoryEval {
            belief_mismatch: belief_kl.as_ref().map(|v| v[i]),
            policy_mismatch: policy_kl.as_ref().map(|v| v[i]),
            stopping_time_error: stopping[i],
        })
        .collect();
    Ok(EvalReport {
        belief_mismatch: belief_kl.as_deref().map(mean),
        policy_mismatch: policy_kl.as_deref().map(mean),
        stopping_time_error: mean(&stopping),
        brier: matching.brier,
        auroc: matching.auroc,
        auprc: matching.auprc,
        brier_constant_rate,
        positive_action: positive,
        state_permutation: permutation,
        per_trajectory,
    })
}

/// JSON has no infinity; infinite values travel as the strings `"inf"` and
/// `"-inf"`.
pub mod extended_float {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Number(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Number(x) => Ok(x),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(serde::de::Error::custom(format!("not a number: {other}"))),
            },
        }
    }

    pub mod option {
        use serde::{Deserialize, Deserializer, Serializer};

        pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
            match v {
                Some(x) => super::serialize(x, s),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
            #[derive(Deserialize)]
            struct Wrapper(#[serde(with = "super")] f64);
            Ok(Option::<Wrapper>::deserialize(d)?.map(|w| w.0))
        }
    }
}
