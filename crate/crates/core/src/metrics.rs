//! Shape-preservation metrics between a sampled cloud and its input:
//! Chamfer distance and the exact Earth Mover's Distance.

use crate::error::{Error, Result};
use crate::pointcloud::{dist2, PointCloud};

/// Mean nearest-neighbour squared distance from `a` to `b` plus the same
/// from `b` to `a`. Brute force, accumulated in f64.
pub fn chamfer(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("chamfer distance of an empty cloud"));
    }
    let one_way = |from: &PointCloud, to: &PointCloud| -> f64 {
        let total: f64 = from
            .points
            .iter()
            .map(|p| to.points.iter().map(|q| dist2(p, q)).fold(f64::INFINITY, f64::min))
            .sum();
        total / from.len() as f64
    };
    Ok(one_way(a, b) + one_way(b, a))
}

/// Optimal one-to-one assignment of sampled points into input points.
#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    /// `assignment[j]` is the input index matched to sampled point `j`.
    pub assignment: Vec<usize>,
    /// Squared distance of each matched pair.
    pub pair_costs: Vec<f64>,
    /// `Σ pair_costs / |sampled|`.
    pub cost: f64,
}

/// Earth Mover's Distance with squared Euclidean ground cost.
///
/// Solves the rectangular assignment problem (every sampled point matched
/// to a distinct input point) exactly and returns the mean matched cost.
pub fn emd(sampled: &PointCloud, input: &PointCloud) -> Result<(f64, Matching)> {
    let (k, n) = (sampled.len(), input.len());
    if k == 0 {
        return Err(Error::invalid("EMD of an empty sampled cloud"));
    }
    if k > n {
        return Err(Error::invalid(format!(
            "EMD needs |sampled| <= |input|, got {k} > {n}"
        )));
    }
    let mut cost = Vec::with_capacity(k * n);
    for p in &sampled.points {
        cost.extend(input.points.iter().map(|q| dist2(p, q)));
    }
    let assignment = min_cost_assignment(&cost, k, n)?;
    let pair_costs: Vec<f64> = assignment
        .iter()
        .enumerate()
        .map(|(j, &i)| cost[j * n + i])
        .collect();
    let total = pair_costs.iter().sum::<f64>() / k as f64;
    Ok((
        total,
        Matching {
            assignment,
            pair_costs,
            cost: total,
        },
    ))
}

/// `∂/∂gate_j` of `Σ_j gate_j·‖p_j − φ(j)‖² / |sampled|` with the matching
/// held fixed.
pub fn emd_grad_wrt_weights(matching: &Matching, gates: &[f64]) -> Result<Vec<f64>> {
    if gates.len() != matching.pair_costs.len() {
        return Err(Error::invalid(format!(
            "{} gates for {} matched points",
            gates.len(),
            matching.pair_costs.len()
        )));
    }
    let k = gates.len() as f64;
    Ok(matching.pair_costs.iter().map(|d| d / k).collect())
}

/// Minimum-cost assignment of `rows` to distinct `cols` (`rows <= cols`) on
/// a dense row-major cost matrix, by shortest augmenting paths with dual
/// potentials. O(rows²·cols).
pub fn min_cost_assignment(cost: &[f64], rows: usize, cols: usize) -> Result<Vec<usize>> {
    if rows > cols {
        return Err(Error::invalid("assignment needs rows <= cols"));
    }
    if cost.len() != rows * cols {
        return Err(Error::invalid("cost matrix size does not match its extents"));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("assignment cost".into()));
    }
    // 1-based with a virtual column 0, as in the classic formulation.
    let mut u = vec![0.0f64; rows + 1];
    let mut v = vec![0.0f64; cols + 1];
    let mut owner = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];
    for row in 1..=rows {
        owner[0] = row;
        let mut col0 = 0;
        let mut min_slack = vec![f64::INFINITY; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[col0] = true;
            let r = owner[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0;
            for c in 1..=cols {
                if used[c] {
                    continue;
                }
                let slack = cost[(r - 1) * cols + (c - 1)] - u[r] - v[c];
                if slack < min_slack[c] {
                    min_slack[c] = slack;
                    way[c] = col0;
                }
                if min_slack[c] < delta {
                    delta = min_slack[c];
                    col1 = c;
                }
            }
            for c in 0..=cols {
                if used[c] {
                    u[owner[c]] += delta;
                    v[c] -= delta;
                } else {
                    min_slack[c] -= delta;
                }
            }
            col0 = col1;
            if owner[col0] == 0 {
                break;
            }
        }
        loop {
            let prev = way[col0];
            owner[col0] = owner[prev];
            col0 = prev;
            if col0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; rows];
    for c in 1..=cols {
        if owner[c] != 0 {
            assignment[owner[c] - 1] = c - 1;
        }
    }
    Ok(assignment)
}
