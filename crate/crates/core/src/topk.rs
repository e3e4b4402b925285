//! Differentiable Top-k through entropy-regularized optimal transport.
//!
//! `n` scores are transported onto two anchors (selected / not selected)
//! with marginals `μ = 1/n` and `ν = [k/n, (n−k)/n]`. The smoothed
//! indicator is `n` times the mass each score sends to the selected anchor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pointcloud::PointCloud;
use crate::sampling::SampleResult;
use crate::tensor::{Array, Element, ReduceKind, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TopkConfig {
    pub epsilon: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for TopkConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.01,
            max_iters: 200,
            tol: 1e-6,
        }
    }
}

impl TopkConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be at least 1"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid(format!("tol must be positive, got {}", self.tol)));
        }
        Ok(())
    }
}

/// Entropic transport plan between `n` scores and the two anchors.
#[derive(Debug, Clone, Copy)]
pub struct TransportPlan<'g, T: Element> {
    /// `n × 2`.
    pub gamma: Tensor<'g, T>,
    pub k: usize,
    pub iterations_used: usize,
    pub converged: bool,
    /// Largest row-marginal violation after the final iteration (the column
    /// marginal is met exactly by the last update).
    pub violation: f64,
}

impl<T: Element> TransportPlan<'_, T> {
    pub fn n(&self) -> usize {
        self.gamma.shape()[0]
    }

    pub fn mu(&self) -> Vec<f64> {
        vec![1.0 / self.n() as f64; self.n()]
    }

    pub fn nu(&self) -> [f64; 2] {
        let n = self.n() as f64;
        [self.k as f64 / n, (n - self.k as f64) / n]
    }
}

/// `n × 2` cost: min-max normalised scores `ŝ` against the anchors 1 and 0,
/// `C[i] = [(ŝᵢ − 1)², ŝᵢ²]`. A constant score vector maps to `ŝ = 0.5`.
pub fn build_cost<'g, T: Element>(scores: Tensor<'g, T>) -> Result<Tensor<'g, T>> {
    let shape = scores.shape();
    if shape.len() != 1 {
        return Err(Error::invalid(format!("scores must be a vector, got shape {shape:?}")));
    }
    let n = shape[0];
    if n < 2 {
        return Err(Error::invalid(format!("need at least 2 scores, got {n}")));
    }
    if !scores.value().all_finite() {
        return Err(Error::NonFinite("scores".into()));
    }
    let graph = scores.graph();
    let hi = scores.reduce(ReduceKind::Max, 0)?;
    let lo = scores.neg().reduce(ReduceKind::Max, 0)?.neg();
    let range = hi.sub(lo)?;
    let normalized = if range.item() > T::zero() {
        scores
            .sub(lo.replicate(0, n)?)?
            .div(range.replicate(0, n)?)?
    } else {
        graph.constant(Array::full(&[n], T::lit(0.5)))
    };
    let to_selected = normalized.add_scalar(-T::one()).square()?.reshape(&[n, 1])?;
    let to_rest = normalized.square()?.reshape(&[n, 1])?;
    Tensor::concat(&[to_selected, to_rest], 1)
}

/// Log-domain Sinkhorn on an `n × 2` cost, every iteration recorded on the
/// graph.
///
/// ε is annealed from 1 down to `cfg.epsilon`, halving per stage with the
/// potentials carried over; intermediate stages stop at `tol` or after a
/// share of the remaining budget (at least [`STAGE_ITERS`]). The final
/// stage stops at `tol` or when the total count reaches `max_iters`, which
/// is reported through `converged`.
pub fn sinkhorn<'g, T: Element>(cost: Tensor<'g, T>, k: usize, cfg: &TopkConfig) -> Result<TransportPlan<'g, T>> {
    cfg.validate()?;
    let shape = cost.shape();
    if shape.len() != 2 || shape[1] != 2 {
        return Err(Error::invalid(format!("cost must be n x 2, got {shape:?}")));
    }
    let n = shape[0];
    if k == 0 || k >= n {
        return Err(Error::invalid(format!("Top-k needs 1 <= k < n, got k={k}, n={n}")));
    }
    if !cost.value().all_finite() {
        return Err(Error::NonFinite("transport cost".into()));
    }
    let graph = cost.graph();
    let nf = n as f64;
    let log_mu = graph.constant(Array::full(&[n], T::lit(-nf.ln())));
    let log_nu = graph.constant(Array::from_vec(vec![
        T::lit((k as f64 / nf).ln()),
        T::lit(((n - k) as f64 / nf).ln()),
    ]));
    let schedule = epsilon_schedule(cfg.epsilon);
    let last_stage = schedule.len() - 1;

    let mut g = graph.constant(Array::zeros(&[2]));
    let mut log_gamma = cost;
    let mut iterations_used = 0;
    let mut violation = f64::INFINITY;
    let mut prev_eps = schedule[0];
    for (stage, &eps) in schedule.iter().enumerate() {
        if stage > 0 {
            // potentials live in units of 1/ε
            g = g.scalar_mul(T::lit(prev_eps / eps));
        }
        prev_eps = eps;
        let log_kernel = cost.scalar_mul(T::lit(-1.0 / eps));
        let remaining = cfg.max_iters - iterations_used;
        let budget = if stage == last_stage {
            remaining
        } else {
            let stages_left = schedule.len() - stage;
            STAGE_ITERS
                .max(remaining / (2 * stages_left))
                .min(remaining.saturating_sub(1))
        };
        for _ in 0..budget {
            iterations_used += 1;
            let f = log_mu.sub(log_kernel.add(g.replicate(0, n)?)?.log_sum_exp(1)?)?;
            let with_f = log_kernel.add(f.replicate(1, 2)?)?;
            g = log_nu.sub(with_f.log_sum_exp(0)?)?;
            log_gamma = with_f.add(g.replicate(0, n)?)?;
            violation = row_violation(&log_gamma.value(), nf);
            if violation <= cfg.tol {
                break;
            }
        }
    }
    Ok(TransportPlan {
        gamma: log_gamma.exp(),
        k,
        iterations_used,
        converged: violation <= cfg.tol,
        violation,
    })
}

/// Floor on the iterations an intermediate ε may spend before moving on.
const STAGE_ITERS: usize = 10;
const SCHEDULE_START: f64 = 1.0;
const SCHEDULE_DECAY: f64 = 0.5;

/// ε-scaling: geometric decay from the cost scale (costs lie in `[0, 1]`)
/// down to the target, which is always the last entry.
fn epsilon_schedule(target: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut eps = SCHEDULE_START;
    while eps > target {
        out.push(eps);
        eps *= SCHEDULE_DECAY;
    }
    out.push(target);
    out
}

fn row_violation<T: Element>(log_gamma: &Array<T>, n: f64) -> f64 {
    log_gamma
        .data()
        .chunks(2)
        .map(|row| {
            let s: f64 = row.iter().map(|v| v.to_f64().unwrap_or(f64::NAN).exp()).sum();
            (s - 1.0 / n).abs()
        })
        .fold(0.0, f64::max)
}

/// `Ω^ε = n · Γ[:, 0]`.
pub fn soft_indicator<'g, T: Element>(plan: &TransportPlan<'g, T>) -> Result<Tensor<'g, T>> {
    let n = plan.n();
    Ok(plan
        .gamma
        .gather(1, &[0])?
        .reshape(&[n])?
        .scalar_mul(T::lit(n as f64)))
}

/// Indices of the `k` largest scores, by descending score then ascending
/// index.
pub fn hard_topk<T: Element>(scores: &[T], k: usize) -> Result<Vec<usize>> {
    let n = scores.len();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("k={k} must lie in 1..={n}")));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("scores".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite").then(a.cmp(&b)));
    order.truncate(k);
    Ok(order)
}

/// Output of [`straight_through_select`].
#[derive(Debug, Clone)]
pub struct Selection<'g, T: Element> {
    pub result: SampleResult,
    /// Length `k`, forward value 1, backward into `Ω^ε` at the selected
    /// indices.
    pub gates: Tensor<'g, T>,
    pub omega: Tensor<'g, T>,
    pub iterations_used: usize,
    pub converged: bool,
}

/// Hard Top-k subset of `cloud` by `scores`, with straight-through gates
/// that route gradients into the smoothed indicator.
pub fn straight_through_select<'g, T: Element>(
    cloud: &PointCloud,
    scores: Tensor<'g, T>,
    k: usize,
    cfg: &TopkConfig,
) -> Result<Selection<'g, T>> {
    if scores.shape() != [cloud.len()] {
        return Err(Error::invalid(format!(
            "{} scores for a cloud of {} points",
            scores.shape().iter().product::<usize>(),
            cloud.len()
        )));
    }
    let indices = hard_topk(scores.value().data(), k)?;
    let plan = sinkhorn(build_cost(scores)?, k, cfg)?;
    let omega = soft_indicator(&plan)?;
    let gates = omega
        .gather(0, &indices)?
        .straight_through(Array::full(&[k], T::one()))?;
    Ok(Selection {
        result: SampleResult::from_indices(cloud, indices, "csnet")?,
        gates,
        omega,
        iterations_used: plan.iterations_used,
        converged: plan.converged,
    })
}
