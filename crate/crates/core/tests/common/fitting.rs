//! Warm-started fits of the reference environments and the boundary
//! summaries used to judge them.

use interpole::envs::{EnvironmentSpec, GroundTruth};
use interpole::learner::{self, FitConfig, FitReport, KnownValues, Prior};
use interpole::metrics::{evaluate, EvalOptions, EvalReport};
use interpole::policy::{decision_boundary, Boundary};
use interpole::{Dataset, FreezeMask, ThetaEstimate};

pub struct Fitted {
    pub report: FitReport,
    pub eval: EvalReport,
    /// Estimate relabelled to the environment's state order.
    pub aligned: ThetaEstimate,
}

pub fn fit_environment(env: &EnvironmentSpec, data: &Dataset, truth: &GroundTruth, mask: FreezeMask, two_stage: bool) -> Fitted {
    let known = KnownValues::from_truth(&env.agent_params, &env.behavior, mask);
    let prior = Prior::default();
    let config = FitConfig::default();
    let init = learner::init_random(&data.spaces, 1, mask, &known).unwrap();
    let init = learner::warm_start(data, &init, &prior, &config).unwrap();
    let report = if two_stage {
        learner::two_stage_fit(data, &init, &prior, &config).unwrap()
    } else {
        learner::fit(data, &init, &prior, &config).unwrap()
    };
    let options = EvalOptions {
        positive_action: None,
        align_states: true,
    };
    let eval = evaluate(data, &report.estimate, Some(truth), &options).unwrap();
    let aligned = report.estimate.permute_states(eval.state_permutation.as_ref().unwrap()).unwrap();
    Fitted { report, eval, aligned }
}

/// Position along the `s₋ → s₊` edge, as `b(s₊)`, where two actions tie.
pub fn crossing(theta: &ThetaEstimate, a1: usize, a2: usize) -> f64 {
    match decision_boundary(&theta.policy, a1, a2).unwrap() {
        Boundary::Hyperplane(h) => h.edge_crossing(0, 1).unwrap_or(f64::NAN),
        Boundary::Degenerate => f64::NAN,
    }
}

pub fn monotone(trace: &[f64]) -> bool {
    trace.windows(2).all(|w| w[1] >= w[0] - 1e-8)
}
