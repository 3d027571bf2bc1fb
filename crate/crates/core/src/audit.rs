//! Post-hoc audits of demonstrated behavior under a learned model:
//! counterfactual belief updates, belated diagnoses, uninformative tests and
//! per-cohort frequencies.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::iohmm::{belief_trajectory, belief_update, Belief, Dataset, IohmmParams, Trajectory};
use crate::metrics::default_positive_action;
use crate::model::ThetaEstimate;

/// Slack on the informativeness threshold so that exact ties count as
/// "below" it.
const THRESHOLD_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AuditCriteria {
    /// Belief mass on one state that counts as a near-certain diagnosis.
    pub boundary_confidence: f64,
    /// Multiplier on the standard deviation of factual belief changes.
    pub informativeness_fraction: f64,
    /// The test action; defaults to the dataset's positive action.
    pub test_action: Option<usize>,
}

impl Default for AuditCriteria {
    fn default() -> Self {
        AuditCriteria {
            boundary_confidence: 0.9,
            informativeness_fraction: 0.5,
            test_action: None,
        }
    }
}

impl AuditCriteria {
    pub fn validate(&self) -> Result<()> {
        if !(self.boundary_confidence > 0.0 && self.boundary_confidence <= 1.0) {
            return Err(Error::invalid("audit criteria", "boundary_confidence must be in (0, 1]"));
        }
        if !(self.informativeness_fraction > 0.0) || !self.informativeness_fraction.is_finite() {
            return Err(Error::invalid("audit criteria", "informativeness_fraction must be positive"));
        }
        Ok(())
    }

    fn test_action_for(&self, dataset: &Dataset) -> usize {
        self.test_action.unwrap_or_else(|| default_positive_action(dataset))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterfactual {
    pub observation: usize,
    pub probability: f64,
    /// Absent when the observation is impossible.
    pub posterior: Option<Belief>,
}

/// Every posterior the update could have produced, with its probability.
pub fn counterfactual_updates(b: &Belief, a: usize, params: &IohmmParams) -> Result<Vec<Counterfactual>> {
    params.spaces().check_action(a)?;
    let probs = params.observation_probs(b.probs(), a);
    probs
        .iter()
        .enumerate()
        .map(|(z, &p)| {
            let posterior = if p > 0.0 { Some(belief_update(b, a, z, params)?) } else { None };
            Ok(Counterfactual {
                observation: z,
                probability: p,
                posterior,
            })
        })
        .collect()
}

/// Euclidean distance between beliefs.
pub fn belief_change(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BelatedEvidence {
    /// Step (0-based) where the test was recommended but not taken.
    pub skipped_step: usize,
    /// Later test step whose outcome made the belief near-certain.
    pub certain_step: usize,
}

/// Finds a skipped recommended test followed by a later test that leads to
/// near-certainty.
pub fn detect_belated(traj: &Trajectory, model: &ThetaEstimate, criteria: &AuditCriteria, test_action: usize) -> Result<Option<BelatedEvidence>> {
    let beliefs = belief_trajectory(traj, &model.params)?.beliefs;
    let observed = traj.observed().len();
    let mut first_skip = None;
    for (t, &(a, _)) in traj.steps.iter().enumerate() {
        if let Some(skipped) = first_skip {
            let certain = a == test_action
                && t < observed
                && beliefs[t + 1].probs().iter().any(|&p| p >= criteria.boundary_confidence);
            if certain {
                return Ok(Some(BelatedEvidence {
                    skipped_step: skipped,
                    certain_step: t,
                }));
            }
        }
        if first_skip.is_none() && a != test_action && model.policy.modal_action(beliefs[t].probs()) == test_action {
            first_skip = Some(t);
        }
    }
    Ok(None)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestChange {
    pub step: usize,
    pub factual: f64,
    /// Largest change over every possible outcome.
    pub counterfactual_max: f64,
}

/// Factual and best-case counterfactual belief changes at each test step.
pub fn test_changes(traj: &Trajectory, model: &ThetaEstimate, test_action: usize) -> Result<Vec<TestChange>> {
    let beliefs = belief_trajectory(traj, &model.params)?.beliefs;
    let mut out = Vec::new();
    for (t, &(a, _)) in traj.observed().iter().enumerate() {
        if a != test_action {
            continue;
        }
        let factual = belief_change(beliefs[t].probs(), beliefs[t + 1].probs());
        let counterfactual_max = counterfactual_updates(&beliefs[t], a, &model.params)?
            .iter()
            .filter_map(|c| c.posterior.as_ref())
            .map(|post| belief_change(beliefs[t].probs(), post.probs()))
            .fold(0.0, f64::max);
        out.push(TestChange {
            step: t,
            factual,
            counterfactual_max,
        });
    }
    Ok(out)
}

/// `mean − fraction·sd` of factual changes over all test steps, with the
/// sample standard deviation; `None` with fewer than two test steps.
pub fn informativeness_threshold(changes: &[TestChange], criteria: &AuditCriteria) -> Option<f64> {
    let n = changes.len();
    if n < 2 {
        return None;
    }
    let mean = changes.iter().map(|c| c.factual).sum::<f64>() / n as f64;
    let var = changes.iter().map(|c| (c.factual - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Some(mean - criteria.informativeness_fraction * var.sqrt())
}

/// Test steps whose factual and counterfactual changes both fall at or below
/// the threshold.
pub fn detect_uninformative(changes: &[TestChange], threshold: Option<f64>) -> Vec<usize> {
    let Some(limit) = threshold else {
        return Vec::new();
    };
    changes
        .iter()
        .filter(|c| c.factual <= limit + THRESHOLD_SLACK && c.counterfactual_max <= limit + THRESHOLD_SLACK)
        .map(|c| c.step)
        .collect()
}

/// Selects trajectories whose tag `key` equals `value`; `All` keeps everyone.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum CohortPredicate {
    All,
    Tag { key: String, value: String },
}

impl CohortPredicate {
    pub fn name(&self) -> String {
        match self {
            CohortPredicate::All => "all".into(),
            CohortPredicate::Tag { key, value } => format!("{key}={value}"),
        }
    }

    pub fn matches(&self, traj: &Trajectory) -> bool {
        match self {
            CohortPredicate::All => true,
            CohortPredicate::Tag { key, value } => traj.tags.get(key) == Some(value),
        }
    }
}

impl std::str::FromStr for CohortPredicate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "all" {
            return Ok(CohortPredicate::All);
        }
        match s.split_once('=') {
            Some((k, v)) if !k.is_empty() => Ok(CohortPredicate::Tag {
                key: k.to_string(),
                value: v.to_string(),
            }),
            _ => Err(Error::invalid("cohort predicate", format!("expected key=value, got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryAudit {
    pub belated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub belated_evidence: Option<BelatedEvidence>,
    pub test_steps: usize,
    pub uninformative_steps: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortRow {
    pub cohort: String,
    pub trajectories: usize,
    pub belated: usize,
    pub belated_frequency: f64,
    pub test_steps: usize,
    pub uninformative: usize,
    pub uninformative_frequency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub criteria: AuditCriteria,
    pub test_action: usize,
    pub threshold: Option<f64>,
    pub trajectories: Vec<TrajectoryAudit>,
    pub cohort_rows: Vec<CohortRow>,
}

impl AuditReport {
    pub fn to_csv(&self) -> Result<String> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        for row in &self.cohort_rows {
            writer.serialize(row).map_err(|e| Error::invalid("csv", e.to_string()))?;
        }
        let bytes = writer.into_inner().map_err(|e| Error::invalid("csv", e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

fn frequency(count: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        count as f64 / total as f64
    }
}

/// Frequencies of belated trajectories and uninformative tests per cohort.
pub fn cohort_summary(dataset: &Dataset, audits: &[TrajectoryAudit], predicates: &[CohortPredicate]) -> Vec<CohortRow> {
    predicates
        .iter()
        .map(|pred| {
            let members: Vec<&TrajectoryAudit> = dataset
                .trajectories
                .iter()
                .zip(audits)
                .filter(|(traj, _)| pred.matches(traj))
                .map(|(_, a)| a)
                .collect();
            let belated = members.iter().filter(|a| a.belated).count();
            let test_steps = members.iter().map(|a| a.test_steps).sum();
            let uninformative = members.iter().map(|a| a.uninformative_steps.len()).sum();
            CohortRow {
                cohort: pred.name(),
                trajectories: members.len(),
                belated,
                belated_frequency: frequency(belated, members.len()),
                test_steps,
                uninformative,
                uninformative_frequency: frequency(uninformative, test_steps),
            }
        })
        .collect()
}

/// Runs both detectors on every trajectory and tabulates the cohorts; the
/// `All` cohort always comes first.
pub fn audit(dataset: &Dataset, model: &ThetaEstimate, criteria: &AuditCriteria, cohorts: &[CohortPredicate]) -> Result<AuditReport> {
    criteria.validate()?;
    dataset.validate()?;
    model.validate()?;
    let test_action = criteria.test_action_for(dataset);
    dataset.spaces.check_action(test_action)?;
    let per_traj: Vec<(Option<BelatedEvidence>, Vec<TestChange>)> = dataset
        .trajectories
        .par_iter()
        .enumerate()
        .map(|(i, traj)| {
            let belated = detect_belated(traj, model, criteria, test_action).map_err(|e| e.in_trajectory(i))?;
            let changes = test_changes(traj, model, test_action).map_err(|e| e.in_trajectory(i))?;
            Ok((belated, changes))
        })
        .collect::<Result<_>>()?;
    let all_changes: Vec<TestChange> = per_traj.iter().flat_map(|(_, c)| c.iter().copied()).collect();
    let threshold = informativeness_threshold(&all_changes, criteria);
    let trajectories: Vec<TrajectoryAudit> = per_traj
        .iter()
        .map(|(belated, changes)| TrajectoryAudit {
            belated: belated.is_some(),
            belated_evidence: *belated,
            test_steps: changes.len(),
            uninformative_steps: detect_uninformative(changes, threshold),
        })
        .collect();
    let mut predicates = vec![CohortPredicate::All];
    predicates.extend(cohorts.iter().filter(|p| **p != CohortPredicate::All).cloned());
    let cohort_rows = cohort_summary(dataset, &trajectories, &predicates);
    Ok(AuditReport {
        criteria: criteria.clone(),
        test_action,
        threshold,
        trajectories,
        cohort_rows,
    })
}
