use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::{check_k, fps, SampleResult, Sampler};
use crate::error::Result;
use crate::pointcloud::{dist2, PointCloud};

const BISECTION_ROUNDS: usize = 20;

/// Dart throwing over input indices: walk `order`, accepting a point when
/// it is at least `radius` from everything accepted so far.
pub fn dart_throw(cloud: &PointCloud, order: &[usize], radius: f64) -> Vec<usize> {
    let r2 = radius * radius;
    let mut accepted: Vec<usize> = Vec::new();
    for &i in order {
        let p = &cloud.points[i];
        if accepted.iter().all(|&j| dist2(p, &cloud.points[j]) >= r2) {
            accepted.push(i);
        }
    }
    accepted
}

#[derive(Debug, Clone)]
pub struct PoissonOutcome {
    pub result: SampleResult,
    /// Exclusion radius used, or `None` when the search fell back to FPS.
    pub radius: Option<f64>,
}

/// Poisson-disk subset of size `k`.
///
/// The radius is bisected over `[0, diameter]` (at most 20 rounds) until
/// dart throwing accepts between `k` and `1.2·k` points; the first `k`
/// accepted are kept. If no such radius is found the result comes from FPS
/// and is tagged `poisson:fps-fallback`.
pub fn poisson_disk(cloud: &PointCloud, k: usize, rng: &mut ChaCha8Rng) -> Result<PoissonOutcome> {
    check_k(cloud, k)?;
    let mut order: Vec<usize> = (0..cloud.len()).collect();
    order.shuffle(rng);
    let in_band = |count: usize| count >= k && count * 5 <= k * 6;

    let finish = |mut accepted: Vec<usize>, radius: f64| -> Result<PoissonOutcome> {
        accepted.truncate(k);
        Ok(PoissonOutcome {
            result: SampleResult::from_indices(cloud, accepted, "poisson")?,
            radius: Some(radius),
        })
    };

    if in_band(cloud.len()) {
        return finish(order, 0.0);
    }
    let (mut lo, mut hi) = (0.0, cloud.diameter());
    for _ in 0..BISECTION_ROUNDS {
        let mid = 0.5 * (lo + hi);
        let accepted = dart_throw(cloud, &order, mid);
        if accepted.len() < k {
            hi = mid;
        } else if in_band(accepted.len()) {
            return finish(accepted, mid);
        } else {
            lo = mid;
        }
    }
    let mut result = fps(cloud, k, 0)?;
    result.method_tag = "poisson:fps-fallback".to_string();
    Ok(PoissonOutcome { result, radius: None })
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PoissonSampler;

impl Sampler for PoissonSampler {
    fn name(&self) -> &str {
        "poisson"
    }

    fn sample(&self, cloud: &PointCloud, k: usize, rng: &mut ChaCha8Rng) -> Result<SampleResult> {
        poisson_disk(cloud, k, rng).map(|o| o.result)
    }
}
