use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::{check_k, SampleResult, Sampler};
use crate::error::Result;
use crate::pointcloud::PointCloud;

/// Uniform `k`-subset without replacement: a seeded partial shuffle of the
/// index list, keeping the first `k`.
pub fn random_sample(cloud: &PointCloud, k: usize, rng: &mut ChaCha8Rng) -> Result<SampleResult> {
    check_k(cloud, k)?;
    let mut order: Vec<usize> = (0..cloud.len()).collect();
    let (chosen, _) = order.partial_shuffle(rng, k);
    let chosen = chosen.to_vec();
    SampleResult::from_indices(cloud, chosen, "random")
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RandomSampler;

impl Sampler for RandomSampler {
    fn name(&self) -> &str {
        "random"
    }

    fn sample(&self, cloud: &PointCloud, k: usize, rng: &mut ChaCha8Rng) -> Result<SampleResult> {
        random_sample(cloud, k, rng)
    }
}
