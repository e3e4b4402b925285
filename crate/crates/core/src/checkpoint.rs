//! Binary checkpoint: named f32 tensors followed by a JSON config block.
//!
//! ```text
//! "CSNET\x01"  u32 format_version  u32 record_count
//! record*:     u32 name_len  name  u32 rank  u32 dim*rank  f32*prod(dims)
//! u32 config_len  config JSON
//! ```
//! All integers and floats little-endian.

use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::csnet::{CsNetHyper, CsNetModel};
use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Array;
use crate::train::{ClassifierModel, Pipeline, TrainConfig};

pub const MAGIC: &[u8; 6] = b"CSNET\x01";
pub const FORMAT_VERSION: u32 = 1;

/// Exact position of a ChaCha8 stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// `u128` as a decimal string.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        use rand::SeedableRng;
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::Checkpoint(format!("bad rng word position '{}'", self.word_pos)))?;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Present when the checkpoint holds a learned sampler.
    pub csnet: Option<CsNetHyper>,
    pub num_classes: usize,
    pub class_names: Vec<String>,
    pub train_config: TrainConfig,
    pub rng: RngState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Array<f32>)>,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn from_pipeline(
        pipeline: &Pipeline,
        train_config: &TrainConfig,
        class_names: &[String],
        rng: &ChaCha8Rng,
    ) -> Self {
        let mut tensors = Vec::new();
        let mut push = |store: &ParamStore<f32>| {
            tensors.extend(store.names().iter().cloned().zip(store.values().iter().cloned()));
        };
        if let Some(m) = &pipeline.csnet {
            push(&m.params);
        }
        push(&pipeline.classifier.params);
        Self {
            tensors,
            meta: CheckpointMeta {
                csnet: pipeline.csnet.as_ref().map(|m| m.hyper),
                num_classes: pipeline.classifier.num_classes,
                class_names: class_names.to_vec(),
                train_config: train_config.clone(),
                rng: RngState::capture(rng),
            },
        }
    }

    fn fill(&self, store: &mut ParamStore<f32>) -> Result<()> {
        let mut loaded = ParamStore::new();
        for name in store.names() {
            let (_, value) = self
                .tensors
                .iter()
                .find(|(n, _)| n == name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor '{name}'")))?;
            loaded.add(name.clone(), value.clone());
        }
        store.load_from(&loaded)
    }

    pub fn csnet(&self) -> Result<CsNetModel<f32>> {
        let hyper = self
            .meta
            .csnet
            .ok_or_else(|| Error::Checkpoint("checkpoint holds no sampler model".into()))?;
        let mut model = CsNetModel::new(hyper, 0)?;
        self.fill(&mut model.params)?;
        Ok(model)
    }

    pub fn classifier(&self) -> Result<ClassifierModel<f32>> {
        let mut model = ClassifierModel::new(self.meta.num_classes, 0)?;
        self.fill(&mut model.params)?;
        Ok(model)
    }

    pub fn pipeline(&self) -> Result<Pipeline> {
        let cfg = &self.meta.train_config;
        Ok(Pipeline {
            source: cfg.source.clone(),
            k: cfg.k,
            seed: cfg.seed,
            csnet: self.meta.csnet.map(|_| self.csnet()).transpose()?,
            classifier: self.classifier()?,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, FORMAT_VERSION);
        put_u32(&mut out, len_u32(self.tensors.len())?);
        for (name, value) in &self.tensors {
            put_u32(&mut out, len_u32(name.len())?);
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, len_u32(value.rank())?);
            for &d in value.shape() {
                put_u32(&mut out, len_u32(d)?);
            }
            for x in value.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        let config = serde_json::to_vec(&self.meta).map_err(|e| Error::Checkpoint(e.to_string()))?;
        put_u32(&mut out, len_u32(config.len())?);
        out.extend_from_slice(&config);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version} (this build reads {FORMAT_VERSION})"
            )));
        }
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Checkpoint(format!("tensor '{name}' is too large")))?;
            let raw = r.take(numel.checked_mul(4).ok_or_else(|| Error::Checkpoint("overflow".into()))?)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push((name, Array::new(shape, data)?));
        }
        let config_len = r.u32()? as usize;
        let meta = serde_json::from_slice(r.take(config_len)?)
            .map_err(|e| Error::Checkpoint(format!("config block: {e}")))?;
        if r.at != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.at)));
        }
        Ok(Self { tensors, meta })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_bytes(&bytes)
    }
}

fn len_u32(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Checkpoint(format!("length {n} does not fit in u32")))
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("file is truncated".into()))?;
        let out = &self.bytes[self.at..end];
        self.at = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::SubsetSource;
    use rand::{RngCore, SeedableRng};

    fn small_pipeline() -> (Pipeline, TrainConfig) {
        let cfg = TrainConfig {
            hyper: CsNetHyper {
                g: 4,
                c: 8,
                ..CsNetHyper::default()
            },
            ..TrainConfig::default()
        };
        let pipeline = Pipeline {
            source: SubsetSource::Csnet,
            k: cfg.k,
            seed: 0,
            csnet: Some(CsNetModel::new(cfg.hyper, 5).unwrap()),
            classifier: ClassifierModel::new(3, 6).unwrap(),
        };
        (pipeline, cfg)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (pipeline, cfg) = small_pipeline();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        rng.next_u64();
        let names = vec!["a".to_string(), "b".into(), "c".into()];
        let ckpt = Checkpoint::from_pipeline(&pipeline, &cfg, &names, &rng);
        let back = Checkpoint::from_bytes(&ckpt.to_bytes().unwrap()).unwrap();
        assert_eq!(back, ckpt);
        let restored = back.pipeline().unwrap();
        assert_eq!(restored.csnet.unwrap().params, pipeline.csnet.unwrap().params);
        assert_eq!(restored.classifier.params, pipeline.classifier.params);
        let mut again = back.meta.rng.restore().unwrap();
        assert_eq!(again.next_u64(), rng.clone().next_u64());
    }

    #[test]
    fn rejects_bad_headers_and_truncation() {
        let (pipeline, cfg) = small_pipeline();
        let rng = ChaCha8Rng::seed_from_u64(0);
        let bytes = Checkpoint::from_pipeline(&pipeline, &cfg, &[], &rng).to_bytes().unwrap();
        let mut wrong_version = bytes.clone();
        wrong_version[6] = 2;
        let err = Checkpoint::from_bytes(&wrong_version).unwrap_err().to_string();
        assert!(err.contains("version 2"), "{err}");
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(Checkpoint::from_bytes(b"NOTCSNET").is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }
}
