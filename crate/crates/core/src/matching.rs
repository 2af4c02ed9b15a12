//! Exact minimum-cost bipartite assignment between ground-truth moments and
//! predicted spans.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::span::{span_giou, MomentSpan};

/// Optimal assignment, pairs as `(prediction, ground truth)` sorted by
/// prediction index.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub pairs: Vec<(usize, usize)>,
    pub total_cost: f64,
}

impl MatchResult {
    pub fn is_matched(&self, pred: usize) -> bool {
        self.pairs.iter().any(|&(p, _)| p == pred)
    }
}

/// Solves the rectangular assignment problem for `rows ≤ cols`, returning the
/// column assigned to each row. Shortest augmenting paths with potentials.
pub fn hungarian(cost: &[Vec<f64>]) -> Result<Vec<usize>> {
    let n = cost.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let m = cost[0].len();
    if cost.iter().any(|r| r.len() != m) {
        return Err(Error::Shape {
            op: "hungarian",
            lhs: vec![n, m],
            rhs: cost.iter().map(Vec::len).collect(),
        });
    }
    if n > m {
        return Err(Error::data(format!("cannot assign {n} ground-truth moments to {m} predictions")));
    }
    if cost.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("hungarian cost matrix".into()));
    }
    // 1-based arrays; column 0 is the virtual source.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=m {
        if owner[j] != 0 {
            assign[owner[j] - 1] = j - 1;
        }
    }
    Ok(assign)
}

/// Sum of `cost[r][cols[r]]` in row order.
pub fn assignment_cost(cost: &[Vec<f64>], cols: &[usize]) -> f64 {
    cols.iter().enumerate().map(|(r, &c)| cost[r][c]).sum()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostWeights {
    pub cls: f64,
    pub l1: f64,
    pub iou: f64,
}

/// `cost[j][i]` for ground truth `j`, prediction `i`:
/// `−w_cls·fg_i + w_l1·‖m̂_i − m_j‖₁ + w_iou·(1 − gIoU(m̂_i, m_j))`.
pub fn cost_matrix(spans: &[MomentSpan], fg_prob: &[f64], gt: &[MomentSpan], w: &CostWeights) -> Vec<Vec<f64>> {
    gt.iter()
        .map(|g| {
            spans
                .iter()
                .zip(fg_prob)
                .map(|(p, &fg)| {
                    let l1 = (p.start - g.start).abs() + (p.end - g.end).abs();
                    -w.cls * fg + w.l1 * l1 + w.iou * (1.0 - span_giou(p, g))
                })
                .collect()
        })
        .collect()
}

pub fn match_from_cost(cost: &[Vec<f64>]) -> Result<MatchResult> {
    let cols = hungarian(cost)?;
    let total_cost = assignment_cost(cost, &cols);
    let mut pairs: Vec<(usize, usize)> = cols.iter().enumerate().map(|(g, &p)| (p, g)).collect();
    pairs.sort_unstable();
    Ok(MatchResult { pairs, total_cost })
}

pub fn hungarian_match(spans: &[MomentSpan], fg_prob: &[f64], gt: &[MomentSpan], w: &CostWeights) -> Result<MatchResult> {
    if gt.len() > spans.len() {
        return Err(Error::data(format!(
            "{} ground-truth moments exceed {} moment queries",
            gt.len(),
            spans.len()
        )));
    }
    match_from_cost(&cost_matrix(spans, fg_prob, gt, w))
}
