//! Plot-ready coordinates of beliefs, decision boundaries and mean vectors.
//!
//! Two-state beliefs map to the segment `x = b(s_1)`, `y = 0`. Three-state
//! beliefs map to the triangle with state 0 at `(0, 0)`, state 1 at `(1, 0)`
//! and state 2 at `(1/2, √3/2)`. Mean vectors use the same affine map and
//! may fall outside the simplex.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::iohmm::{belief_trajectory, Dataset};
use crate::model::ThetaEstimate;
use crate::policy::{decision_boundary, Boundary};

/// Planar coordinates of a point on the hyperplane `Σ b = 1`.
pub fn simplex_coords(b: &[f64]) -> Result<(f64, f64)> {
    match b.len() {
        2 => Ok((b[1], 0.0)),
        3 => Ok((b[1] + 0.5 * b[2], 3f64.sqrt() / 2.0 * b[2])),
        n => Err(Error::UnsupportedDimension(n)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RowKind {
    Belief,
    Boundary,
    Mean,
}

/// One CSV row. Beliefs and means fill `x0, y0`; boundaries are segments
/// from `(x0, y0)` to `(x1, y1)` (a single point when there are two states).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlotRow {
    pub kind: RowKind,
    pub trajectory: Option<usize>,
    pub step: Option<usize>,
    pub action: Option<usize>,
    pub other_action: Option<usize>,
    pub x0: f64,
    pub y0: f64,
    pub x1: Option<f64>,
    pub y1: Option<f64>,
}

fn point_on_edge(n: usize, i: usize, j: usize, p: f64) -> Vec<f64> {
    let mut b = vec![0.0; n];
    b[i] = 1.0 - p;
    b[j] = p;
    b
}

/// Portion of the pairwise boundary between `a1` and `a2` inside the simplex.
pub fn boundary_segment(model: &ThetaEstimate, a1: usize, a2: usize) -> Result<Option<[(f64, f64); 2]>> {
    let n = model.params.n_states();
    if n != 2 && n != 3 {
        return Err(Error::UnsupportedDimension(n));
    }
    let Boundary::Hyperplane(h) = decision_boundary(&model.policy, a1, a2)? else {
        return Ok(None);
    };
    let mut points: Vec<(f64, f64)> = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if let Some(p) = h.edge_crossing(i, j) {
                let xy = simplex_coords(&point_on_edge(n, i, j, p))?;
                let duplicate = points
                    .iter()
                    .any(|q| (q.0 - xy.0).abs() < 1e-12 && (q.1 - xy.1).abs() < 1e-12);
                if !duplicate {
                    points.push(xy);
                }
            }
        }
    }
    Ok(match points.as_slice() {
        [] => None,
        [p] => Some([*p, *p]),
        [p, q, ..] => Some([*p, *q]),
    })
}

/// Every belief along every trajectory, every pairwise boundary and every
/// mean vector.
pub fn plot_rows(model: &ThetaEstimate, dataset: &Dataset) -> Result<Vec<PlotRow>> {
    let n = model.params.n_states();
    if n != 2 && n != 3 {
        return Err(Error::UnsupportedDimension(n));
    }
    let mut rows = Vec::new();
    for (i, traj) in dataset.trajectories.iter().enumerate() {
        let path = belief_trajectory(traj, &model.params).map_err(|e| e.in_trajectory(i))?;
        for (t, b) in path.beliefs.iter().enumerate() {
            let (x, y) = simplex_coords(b.probs())?;
            rows.push(PlotRow {
                kind: RowKind::Belief,
                trajectory: Some(i),
                step: Some(t),
                action: traj.steps.get(t).map(|s| s.0),
                other_action: None,
                x0: x,
                y0: y,
                x1: None,
                y1: None,
            });
        }
    }
    let na = model.params.n_actions();
    for a1 in 0..na {
        for a2 in a1 + 1..na {
            if let Some([p, q]) = boundary_segment(model, a1, a2)? {
                rows.push(PlotRow {
                    kind: RowKind::Boundary,
                    trajectory: None,
                    step: None,
                    action: Some(a1),
                    other_action: Some(a2),
                    x0: p.0,
                    y0: p.1,
                    x1: Some(q.0),
                    y1: Some(q.1),
                });
            }
        }
    }
    for (a, mu) in model.policy.means.iter().enumerate() {
        let (x, y) = simplex_coords(mu)?;
        rows.push(PlotRow {
            kind: RowKind::Mean,
            trajectory: None,
            step: None,
            action: Some(a),
            other_action: None,
            x0: x,
            y0: y,
            x1: None,
            y1: None,
        });
    }
    Ok(rows)
}

pub fn plot_csv(model: &ThetaEstimate, dataset: &Dataset) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in plot_rows(model, dataset)? {
        writer.serialize(row).map_err(|e| Error::invalid("csv", e.to_string()))?;
    }
    let bytes = writer.into_inner().map_err(|e| Error::invalid("csv", e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
