//! Interpretable policy learning from offline demonstrations.
//!
//! An agent is modelled as filtering its observations through subjective
//! decision dynamics (an input-output HMM) and then acting by a softmax over
//! distances to per-action mean vectors on the belief simplex. [`learner::fit`]
//! jointly estimates both parts by an EM-style MAP procedure; [`metrics`] and
//! [`audit`] evaluate and interrogate the result.

pub mod audit;
pub mod envs;
pub mod error;
pub mod gradient;
pub mod inference;
pub mod io;
pub mod iohmm;
pub mod learner;
pub mod metrics;
pub mod model;
pub mod plot;
pub mod policy;

pub use error::{Error, Result};
pub use iohmm::{Belief, Dataset, IohmmParams, Spaces, Trajectory};
pub use learner::{FitConfig, FitReport, Prior};
pub use model::{FreezeMask, ThetaEstimate};
pub use policy::BoundaryPolicy;
