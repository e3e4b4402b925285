//! Point samplers behind a common [`Sampler`] trait, selectable by name
//! through a [`SamplerRegistry`].

mod fps;
mod poisson;
mod random;

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

pub use fps::{fps, FpsSampler};
pub use poisson::{dart_throw, poisson_disk, PoissonOutcome, PoissonSampler};
pub use random::{random_sample, RandomSampler};

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::pointcloud::PointCloud;

/// A duplicate-free subset of an input cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleResult {
    /// Distinct input indices in selection order.
    pub indices: Vec<usize>,
    /// `input.points[indices[j]]` for every `j`.
    pub sampled: PointCloud,
    pub method_tag: String,
}

impl SampleResult {
    pub fn from_indices(input: &PointCloud, indices: Vec<usize>, method_tag: impl Into<String>) -> Result<Self> {
        let n = input.len();
        let mut seen = vec![false; n];
        for &i in &indices {
            if i >= n {
                return Err(Error::invalid(format!("index {i} out of range for {n} points")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::invalid(format!("duplicate index {i} in selection")));
            }
        }
        if indices.is_empty() {
            return Err(Error::invalid("empty selection"));
        }
        Ok(Self {
            sampled: input.select(&indices),
            indices,
            method_tag: method_tag.into(),
        })
    }

    pub fn k(&self) -> usize {
        self.indices.len()
    }

    /// Re-checks the subset invariants against `input`.
    pub fn verify(&self, input: &PointCloud) -> Result<()> {
        let again = Self::from_indices(input, self.indices.clone(), self.method_tag.clone())?;
        let bit_exact = again
            .sampled
            .points
            .iter()
            .zip(&self.sampled.points)
            .all(|(a, b)| a.map(f32::to_bits) == b.map(f32::to_bits));
        if !bit_exact || again.sampled.len() != self.sampled.len() {
            return Err(Error::invalid("sampled rows differ from input rows"));
        }
        Ok(())
    }
}

pub(crate) fn check_k(cloud: &PointCloud, k: usize) -> Result<()> {
    if k == 0 || k > cloud.len() {
        return Err(Error::invalid(format!(
            "sample size k={k} must lie in 1..={}",
            cloud.len()
        )));
    }
    Ok(())
}

/// A point sampling strategy.
pub trait Sampler {
    fn name(&self) -> &str;

    /// Selects `k` distinct points of `cloud`. Deterministic given the RNG
    /// state; strategies that need no randomness ignore it.
    fn sample(&self, cloud: &PointCloud, k: usize, rng: &mut ChaCha8Rng) -> Result<SampleResult>;
}

impl fmt::Debug for dyn Sampler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Sampler({})", self.name())
    }
}

/// Construction-time options shared by every factory.
#[derive(Debug, Clone, Default)]
pub struct SamplerOptions {
    pub fps_start_index: usize,
    /// Required by learned samplers.
    pub checkpoint: Option<PathBuf>,
}

pub type SamplerFactory = Box<dyn Fn(&SamplerOptions) -> Result<Box<dyn Sampler>> + Send + Sync>;

/// Name → factory table.
pub struct SamplerRegistry {
    factories: BTreeMap<String, SamplerFactory>,
}

impl fmt::Debug for SamplerRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.factories.keys()).finish()
    }
}

impl Default for SamplerRegistry {
    fn default() -> Self {
        Self::with_builtin()
    }
}

impl SamplerRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    /// `random`, `fps`, `poisson` and `csnet`.
    pub fn with_builtin() -> Self {
        let mut reg = Self::empty();
        reg.register("random", |_| Ok(Box::new(RandomSampler)));
        reg.register("fps", |o| {
            Ok(Box::new(FpsSampler {
                start_index: o.fps_start_index,
            }))
        });
        reg.register("poisson", |_| Ok(Box::new(PoissonSampler)));
        reg.register("csnet", |o| {
            let path = o
                .checkpoint
                .as_ref()
                .ok_or_else(|| Error::invalid("method 'csnet' requires a checkpoint (--ckpt)"))?;
            Ok(Box::new(crate::csnet::CsNetSampler::from_checkpoint(path)?))
        });
        reg
    }

    pub fn register<F>(&mut self, name: &str, factory: F)
    where
        F: Fn(&SamplerOptions) -> Result<Box<dyn Sampler>> + Send + Sync + 'static,
    {
        self.factories.insert(name.to_string(), Box::new(factory));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factories.contains_key(name)
    }

    pub fn create(&self, name: &str, options: &SamplerOptions) -> Result<Box<dyn Sampler>> {
        let factory = self.factories.get(name).ok_or_else(|| {
            let known: Vec<&str> = self.names().collect();
            Error::invalid(format!("unknown sampling method '{name}' (known: {})", known.join(", ")))
        })?;
        factory(options)
    }
}
