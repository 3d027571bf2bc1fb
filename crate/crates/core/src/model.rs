//! The full parameter bundle `θ = (T, O, b1, η, {μ_a})` with a freeze mask.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::iohmm::IohmmParams;
use crate::policy::BoundaryPolicy;

/// Parameter blocks excluded from updates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreezeMask {
    #[serde(default)]
    pub transition: bool,
    #[serde(default)]
    pub observation: bool,
    #[serde(default)]
    pub initial: bool,
    #[serde(default)]
    pub eta: bool,
    #[serde(default)]
    pub means: bool,
}

impl FreezeMask {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn all() -> Self {
        FreezeMask {
            transition: true,
            observation: true,
            initial: true,
            eta: true,
            means: true,
        }
    }

    pub fn dynamics() -> Self {
        FreezeMask {
            transition: true,
            observation: true,
            initial: true,
            ..Self::default()
        }
    }

    pub fn union(self, other: FreezeMask) -> Self {
        FreezeMask {
            transition: self.transition || other.transition,
            observation: self.observation || other.observation,
            initial: self.initial || other.initial,
            eta: self.eta || other.eta,
            means: self.means || other.means,
        }
    }

    pub fn all_frozen(&self) -> bool {
        self.transition && self.observation && self.initial && self.eta && self.means
    }
}

impl FromStr for FreezeMask {
    type Err = Error;

    /// Comma-separated block names, e.g. `"T,eta"` or `"transition,b1"`.
    fn from_str(s: &str) -> Result<Self> {
        let mut mask = FreezeMask::none();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part.to_ascii_lowercase().as_str() {
                "t" | "transition" => mask.transition = true,
                "o" | "observation" => mask.observation = true,
                "b1" | "initial" => mask.initial = true,
                "eta" => mask.eta = true,
                "mu" | "means" => mask.means = true,
                other => return Err(Error::invalid("freeze mask", format!("unknown block {other:?}"))),
            }
        }
        Ok(mask)
    }
}

impl fmt::Display for FreezeMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = [
            (self.transition, "T"),
            (self.observation, "O"),
            (self.initial, "b1"),
            (self.eta, "eta"),
            (self.means, "means"),
        ]
        .iter()
        .filter(|(on, _)| *on)
        .map(|(_, n)| *n)
        .collect();
        write!(f, "{}", names.join(","))
    }
}

/// Decision dynamics plus decision boundaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaEstimate {
    pub params: IohmmParams,
    pub policy: BoundaryPolicy,
    #[serde(default)]
    pub frozen: FreezeMask,
}

impl ThetaEstimate {
    pub fn new(params: IohmmParams, policy: BoundaryPolicy, frozen: FreezeMask) -> Result<Self> {
        let theta = ThetaEstimate {
            params,
            policy,
            frozen,
        };
        theta.validate()?;
        Ok(theta)
    }

    pub fn validate(&self) -> Result<()> {
        self.policy.validate()?;
        if self.policy.n_states() != self.params.n_states() {
            return Err(Error::DimensionMismatch {
                what: "policy mean length",
                expected: self.params.n_states(),
                got: self.policy.n_states(),
            });
        }
        if self.policy.n_actions() != self.params.n_actions() {
            return Err(Error::DimensionMismatch {
                what: "policy action count",
                expected: self.params.n_actions(),
                got: self.policy.n_actions(),
            });
        }
        Ok(())
    }

    pub fn with_frozen(mut self, frozen: FreezeMask) -> Self {
        self.frozen = frozen;
        self
    }

    /// Relabels states (new `i` = old `perm[i]`) in dynamics and mean vectors.
    /// The data likelihood is unchanged.
    pub fn permute_states(&self, perm: &[usize]) -> Result<Self> {
        let params = self.params.permute_states(perm)?;
        let means = self
            .policy
            .means
            .iter()
            .map(|m| perm.iter().map(|&p| m[p]).collect())
            .collect();
        ThetaEstimate::new(params, BoundaryPolicy::new(self.policy.eta, means)?, self.frozen)
    }
}
