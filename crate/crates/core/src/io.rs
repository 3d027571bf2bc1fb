//! File formats: JSON Lines datasets with a header line, ground-truth
//! sidecars and model files.
//!
//! A dataset file starts with a header object holding the spaces, stop
//! actions and horizon, followed by one trajectory object per line:
//!
//! ```text
//! {"spaces":{"n_states":2,"n_actions":3,"n_observations":2},"stop_actions":[1,2],"horizon":50}
//! {"steps":[[0,1],[0,1],[2,0]],"terminal":true}
//! ```
//!
//! The ground-truth sidecar has one object per trajectory, keyed by the
//! 1-based line number of that trajectory in the dataset file.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::envs::{GroundTruth, TrajectoryTruth};
use crate::error::{Error, Result};
use crate::iohmm::{Dataset, IohmmParams, Spaces, Trajectory};
use crate::model::{FreezeMask, ThetaEstimate};
use crate::policy::BoundaryPolicy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DatasetHeader {
    spaces: Spaces,
    #[serde(default)]
    stop_actions: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    horizon: Option<usize>,
}

fn format_error(line: usize, e: impl std::fmt::Display) -> Error {
    Error::Format {
        line,
        detail: e.to_string(),
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("in-memory values serialize")
}

pub fn dataset_to_jsonl(dataset: &Dataset) -> String {
    let header = DatasetHeader {
        spaces: dataset.spaces.clone(),
        stop_actions: dataset.stop_actions.clone(),
        horizon: dataset.horizon,
    };
    let mut out = to_json(&header);
    out.push('\n');
    for traj in &dataset.trajectories {
        out.push_str(&to_json(traj));
        out.push('\n');
    }
    out
}

pub fn dataset_from_jsonl(text: &str) -> Result<Dataset> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or_else(|| format_error(1, "empty dataset file"))?;
    let header: DatasetHeader = serde_json::from_str(first).map_err(|e| format_error(1, e))?;
    let trajectories = lines
        .map(|(i, line)| serde_json::from_str::<Trajectory>(line).map_err(|e| format_error(i + 1, e)))
        .collect::<Result<Vec<_>>>()?;
    let mut dataset = Dataset::new(header.spaces, trajectories)?.with_stop_actions(header.stop_actions)?;
    if let Some(h) = header.horizon {
        dataset = dataset.with_horizon(h);
    }
    Ok(dataset)
}

#[derive(Serialize, Deserialize)]
struct TruthLine {
    line: usize,
    #[serde(flatten)]
    truth: TrajectoryTruth,
}

/// One object per trajectory; `line` is the trajectory's line in the dataset
/// file (the header is line 1).
pub fn ground_truth_to_jsonl(truth: &GroundTruth) -> String {
    let mut out = String::new();
    for (i, t) in truth.trajectories.iter().enumerate() {
        out.push_str(&to_json(&TruthLine {
            line: i + 2,
            truth: t.clone(),
        }));
        out.push('\n');
    }
    out
}

pub fn ground_truth_from_jsonl(text: &str) -> Result<GroundTruth> {
    let mut rows: Vec<TruthLine> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| format_error(i + 1, e)))
        .collect::<Result<_>>()?;
    rows.sort_by_key(|r| r.line);
    for (i, r) in rows.iter().enumerate() {
        if r.line != i + 2 {
            return Err(format_error(i + 1, format!("expected dataset line {}, found {}", i + 2, r.line)));
        }
    }
    Ok(GroundTruth {
        trajectories: rows.into_iter().map(|r| r.truth).collect(),
    })
}

/// A fitted (or initial) model with the seed that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub params: IohmmParams,
    pub policy: BoundaryPolicy,
    #[serde(default)]
    pub frozen: FreezeMask,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl ModelFile {
    pub fn new(theta: &ThetaEstimate, seed: Option<u64>) -> Self {
        ModelFile {
            params: theta.params.clone(),
            policy: theta.policy.clone(),
            frozen: theta.frozen,
            seed,
        }
    }

    pub fn theta(&self) -> Result<ThetaEstimate> {
        ThetaEstimate::new(self.params.clone(), self.policy.clone(), self.frozen)
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        detail: e.to_string(),
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::Io {
            path: parent.display().to_string(),
            detail: e.to_string(),
        })?;
    }
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.display().to_string(),
        detail: e.to_string(),
    })
}

/// Reads a JSON document, reporting the path on failure.
pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Error::Io {
        path: path.display().to_string(),
        detail: e.to_string(),
    })
}

/// Pretty-printed JSON with a trailing newline.
pub fn to_pretty_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("in-memory values serialize");
    s.push('\n');
    s
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    dataset_from_jsonl(&read_text(path)?).map_err(|e| match e {
        Error::Format { line, detail } => Error::Io {
            path: path.display().to_string(),
            detail: format!("line {line}: {detail}"),
        },
        other => other,
    })
}

pub fn load_ground_truth(path: &Path) -> Result<GroundTruth> {
    ground_truth_from_jsonl(&read_text(path)?)
}

pub fn load_model(path: &Path) -> Result<ModelFile> {
    let file: ModelFile = read_json(path)?;
    file.theta()?;
    Ok(file)
}
