//! The contribution-based sampler: local feature embedding, a cascade of
//! attention blocks, per-point contribution scores, and Top-k selection.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics;
use crate::nn::{Bound, Mlp, ParamId, ParamStore};
use crate::pointcloud::{dist2, PointCloud};
use crate::sampling::{check_k, SampleResult, Sampler};
use crate::tensor::{Array, Element, Graph, ReduceKind, Tensor};
use crate::topk::{hard_topk, straight_through_select, Selection, TopkConfig};

pub const CASCADE_DEPTH: usize = 3;
const SCORE_WIDTHS: [usize; 4] = [128, 64, 32, 1];

/// How each cascade block mixes its input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AttentionKind {
    /// `γ(f_in − f_sa) + f_in`
    #[default]
    Oa,
    /// `γ(f_sa) + f_in`
    Sa,
    /// `γ(f_in) + f_in`, no attention weights at all.
    Mlp,
}

impl AttentionKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Oa => "oa",
            Self::Sa => "sa",
            Self::Mlp => "mlp",
        }
    }
}

impl fmt::Display for AttentionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttentionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oa" => Ok(Self::Oa),
            "sa" => Ok(Self::Sa),
            "mlp" => Ok(Self::Mlp),
            _ => Err(Error::invalid(format!("unknown attention kind '{s}' (oa, sa, mlp)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CsNetHyper {
    /// Neighbours per local group, the point itself included.
    pub g: usize,
    /// Feature width.
    pub c: usize,
    pub attention: AttentionKind,
    pub topk: TopkConfig,
}

impl Default for CsNetHyper {
    fn default() -> Self {
        Self {
            g: 32,
            c: 64,
            attention: AttentionKind::Oa,
            topk: TopkConfig::default(),
        }
    }
}

impl CsNetHyper {
    pub fn validate(&self) -> Result<()> {
        if self.g == 0 || self.c == 0 {
            return Err(Error::invalid(format!("g and c must be positive, got g={}, c={}", self.g, self.c)));
        }
        self.topk.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionBlock {
    /// `W_query`, `W_key`, `W_value`; absent for [`AttentionKind::Mlp`].
    pub qkv: Option<[ParamId; 3]>,
    pub gamma: Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsNetModel<T: Element> {
    pub hyper: CsNetHyper,
    pub params: ParamStore<T>,
    pub embed: Mlp,
    pub fuse: Mlp,
    pub blocks: Vec<AttentionBlock>,
    pub rho: Mlp,
    pub head: Mlp,
}

/// Intermediate tensors of one forward pass.
#[derive(Debug, Clone)]
pub struct ActivationRecord<'g, T: Element> {
    /// `n × g × 3` neighbour offsets.
    pub f_group: Array<T>,
    /// `n × g × c`
    pub f_combine: Tensor<'g, T>,
    /// `n × c`
    pub f_pointwise: Tensor<'g, T>,
    /// One `n × c` per block; empty for [`AttentionKind::Mlp`].
    pub f_sa: Vec<Tensor<'g, T>>,
    /// One `n × c` per block.
    pub f_oa: Vec<Tensor<'g, T>>,
    /// `n × 3c`
    pub f_concat: Tensor<'g, T>,
    /// `n`
    pub s_con: Tensor<'g, T>,
}

impl<T: Element> CsNetModel<T> {
    pub fn new(hyper: CsNetHyper, seed: u64) -> Result<Self> {
        hyper.validate()?;
        let c = hyper.c;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let embed = Mlp::new(&mut params, &mut rng, "csnet.embed", &[6, c, c], true);
        let fuse = Mlp::new(&mut params, &mut rng, "csnet.fuse", &[2 * c, c], true);
        let blocks = (0..CASCADE_DEPTH)
            .map(|b| {
                let qkv = (hyper.attention != AttentionKind::Mlp).then(|| {
                    ["query", "key", "value"].map(|w| {
                        params.add(
                            format!("csnet.block{b}.w_{w}"),
                            crate::nn::xavier_uniform(&mut rng, c, c),
                        )
                    })
                });
                let gamma = Mlp::new(&mut params, &mut rng, &format!("csnet.block{b}.gamma"), &[c, c, c], false);
                AttentionBlock { qkv, gamma }
            })
            .collect();
        let rho = Mlp::new(&mut params, &mut rng, "csnet.rho", &[3 * c, SCORE_WIDTHS[0]], true);
        let head = Mlp::new(&mut params, &mut rng, "csnet.head", &SCORE_WIDTHS, false);
        Ok(Self {
            hyper,
            params,
            embed,
            fuse,
            blocks,
            rho,
            head,
        })
    }

    pub fn cast<U: Element>(&self) -> CsNetModel<U> {
        CsNetModel {
            hyper: self.hyper,
            params: self.params.cast(),
            embed: self.embed.clone(),
            fuse: self.fuse.clone(),
            blocks: self.blocks.clone(),
            rho: self.rho.clone(),
            head: self.head.clone(),
        }
    }

    /// Shared MLP over `[offset, own coordinates]` rows, max and mean
    /// pooling over neighbours, then the fusion MLP.
    pub fn feature_embed<'g>(
        &self,
        p: &Bound<'g, T>,
        cloud: &PointCloud,
    ) -> Result<(Array<T>, Tensor<'g, T>, Tensor<'g, T>)> {
        let (n, g, c) = (cloud.len(), self.hyper.g, self.hyper.c);
        let graph = p.leaves()[0].graph();
        let f_group = grouping_layer::<T>(cloud, g)?;
        let mut rows = Vec::with_capacity(n * g * 6);
        for (i, point) in cloud.points.iter().enumerate() {
            for j in 0..g {
                let at = (i * g + j) * 3;
                rows.extend_from_slice(&f_group.data()[at..at + 3]);
                rows.extend(point.iter().map(|&x| T::lit(x as f64)));
            }
        }
        let input = graph.constant(Array::new(vec![n * g, 6], rows)?);
        let f_combine = self.embed.forward(p, input)?.reshape(&[n, g, c])?;
        let pooled = Tensor::concat(
            &[f_combine.reduce(ReduceKind::Max, 1)?, f_combine.reduce(ReduceKind::Mean, 1)?],
            1,
        )?;
        let f_pointwise = self.fuse.forward(p, pooled)?;
        Ok((f_group, f_combine, f_pointwise))
    }

    /// `softmax(Q·Kᵀ / √c)·V` over keys.
    pub fn self_attention<'g>(
        &self,
        p: &Bound<'g, T>,
        block: &AttentionBlock,
        f_in: Tensor<'g, T>,
    ) -> Result<Option<Tensor<'g, T>>> {
        let Some([wq, wk, wv]) = block.qkv else {
            return Ok(None);
        };
        let q = f_in.matmul(p.get(wq))?;
        let k = f_in.matmul(p.get(wk))?;
        let v = f_in.matmul(p.get(wv))?;
        let logits = q.matmul_t(k, false, true)?;
        let attn = logits.softmax(1, T::lit((self.hyper.c as f64).sqrt()))?;
        Ok(Some(attn.matmul(v)?))
    }

    /// One residual block of the cascade: returns `(f_sa, f_out)`.
    pub fn attention_block<'g>(
        &self,
        p: &Bound<'g, T>,
        block: &AttentionBlock,
        f_in: Tensor<'g, T>,
    ) -> Result<(Option<Tensor<'g, T>>, Tensor<'g, T>)> {
        let f_sa = self.self_attention(p, block, f_in)?;
        let gamma_in = match (self.hyper.attention, f_sa) {
            (AttentionKind::Oa, Some(sa)) => f_in.sub(sa)?,
            (AttentionKind::Sa, Some(sa)) => sa,
            (AttentionKind::Mlp, None) => f_in,
            _ => return Err(Error::invalid("attention weights do not match the attention kind")),
        };
        let f_out = block.gamma.forward(p, gamma_in)?.add(f_in)?;
        Ok((f_sa, f_out))
    }

    /// Three chained blocks, outputs concatenated along features.
    pub fn cascade<'g>(
        &self,
        p: &Bound<'g, T>,
        f_pointwise: Tensor<'g, T>,
    ) -> Result<(Vec<Tensor<'g, T>>, Vec<Tensor<'g, T>>, Tensor<'g, T>)> {
        let mut f_sa = Vec::new();
        let mut f_oa = Vec::new();
        let mut x = f_pointwise;
        for block in &self.blocks {
            let (sa, out) = self.attention_block(p, block, x)?;
            f_sa.extend(sa);
            f_oa.push(out);
            x = out;
        }
        let f_concat = Tensor::concat(&f_oa, 1)?;
        Ok((f_sa, f_oa, f_concat))
    }

    /// `ρ` then the fully connected pyramid down to one score per point.
    pub fn score<'g>(&self, p: &Bound<'g, T>, f_concat: Tensor<'g, T>) -> Result<Tensor<'g, T>> {
        let n = f_concat.shape()[0];
        let h = self.rho.forward(p, f_concat)?;
        self.head.forward(p, h)?.reshape(&[n])
    }

    /// Contribution scores for every point of `cloud`.
    pub fn scores<'g>(&self, p: &Bound<'g, T>, cloud: &PointCloud) -> Result<ActivationRecord<'g, T>> {
        let (f_group, f_combine, f_pointwise) = self.feature_embed(p, cloud)?;
        let (f_sa, f_oa, f_concat) = self.cascade(p, f_pointwise)?;
        let s_con = self.score(p, f_concat)?;
        Ok(ActivationRecord {
            f_group,
            f_combine,
            f_pointwise,
            f_sa,
            f_oa,
            f_concat,
            s_con,
        })
    }

    /// Scores, hard Top-k subset and straight-through gates.
    pub fn forward_sample<'g>(
        &self,
        p: &Bound<'g, T>,
        cloud: &PointCloud,
        k: usize,
    ) -> Result<(Selection<'g, T>, ActivationRecord<'g, T>)> {
        if k == 0 || k >= cloud.len() {
            return Err(Error::invalid(format!(
                "sample size k={k} must lie in 1..{}",
                cloud.len()
            )));
        }
        let record = self.scores(p, cloud)?;
        let selection = straight_through_select(cloud, record.s_con, k, &self.hyper.topk)?;
        Ok((selection, record))
    }

    /// Inference-time subset: the `k` highest raw scores.
    pub fn select(&self, cloud: &PointCloud, k: usize) -> Result<SampleResult> {
        check_k(cloud, k)?;
        let graph = Graph::new();
        let p = self.params.bind_frozen(&graph);
        let record = self.scores(&p, cloud)?;
        let indices = hard_topk(record.s_con.value().data(), k)?;
        SampleResult::from_indices(cloud, indices, "csnet")
    }
}

/// Indices of each point's `g` nearest neighbours, flattened `n × g`. The
/// point itself is neighbour 0; the rest follow by distance, then index.
pub fn knn_indices(cloud: &PointCloud, g: usize) -> Result<Vec<usize>> {
    let n = cloud.len();
    if g == 0 || g > n {
        return Err(Error::invalid(format!("group size g={g} must lie in 1..={n}")));
    }
    let mut out = Vec::with_capacity(n * g);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n);
    for (i, p) in cloud.points.iter().enumerate() {
        cand.clear();
        cand.extend(
            cloud
                .points
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(j, q)| (dist2(p, q), j)),
        );
        let by_dist = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        let rest = g - 1;
        if rest > 0 && rest < cand.len() {
            cand.select_nth_unstable_by(rest - 1, by_dist);
        }
        cand[..rest].sort_unstable_by(by_dist);
        out.push(i);
        out.extend(cand[..rest].iter().map(|&(_, j)| j));
    }
    Ok(out)
}

/// `n × g × 3` offsets `p_neighbour − p_i`.
pub fn grouping_layer<T: Element>(cloud: &PointCloud, g: usize) -> Result<Array<T>> {
    let n = cloud.len();
    let idx = knn_indices(cloud, g)?;
    let mut data = Vec::with_capacity(n * g * 3);
    for (slot, &j) in idx.iter().enumerate() {
        let (a, b) = (&cloud.points[slot / g], &cloud.points[j]);
        data.extend((0..3).map(|d| T::lit(b[d] as f64 - a[d] as f64)));
    }
    Array::new(vec![n, g, 3], data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum LossVariant {
    #[default]
    #[serde(rename = "emd")]
    Emd,
    #[serde(rename = "cd")]
    Cd,
    #[serde(rename = "cd_emd")]
    CdEmd,
}

impl LossVariant {
    pub fn name(self) -> &'static str {
        match self {
            Self::Emd => "emd",
            Self::Cd => "cd",
            Self::CdEmd => "cd_emd",
        }
    }
}

impl fmt::Display for LossVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "emd" => Ok(Self::Emd),
            "cd" => Ok(Self::Cd),
            "cd_emd" => Ok(Self::CdEmd),
            _ => Err(Error::invalid(format!("unknown loss variant '{s}' (emd, cd, cd_emd)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub alpha: f64,
    pub beta: f64,
    pub variant: LossVariant,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            variant: LossVariant::Emd,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |w: f64| w >= 0.0 && w.is_finite();
        if !ok(self.alpha) || !ok(self.beta) {
            return Err(Error::invalid(format!(
                "loss weights must be finite and non-negative, got alpha={}, beta={}",
                self.alpha, self.beta
            )));
        }
        if self.alpha == 0.0 && self.beta == 0.0 {
            return Err(Error::invalid("alpha and beta cannot both be zero"));
        }
        Ok(())
    }
}

/// `Σ_j gate_j·‖p_j − φ(j)‖² / k` with the optimal matching `φ` frozen.
pub fn gated_emd<'g, T: Element>(gates: Tensor<'g, T>, result: &SampleResult, cloud: &PointCloud) -> Result<Tensor<'g, T>> {
    let (_, matching) = metrics::emd(&result.sampled, cloud)?;
    let k = result.k() as f64;
    let weights: Vec<T> = matching.pair_costs.iter().map(|&d| T::lit(d / k)).collect();
    weighted_gates(gates, weights)
}

/// Chamfer distance with each nearest-neighbour term scaled by the gate of
/// the sampled point involved; assignments frozen.
pub fn gated_chamfer<'g, T: Element>(gates: Tensor<'g, T>, result: &SampleResult, cloud: &PointCloud) -> Result<Tensor<'g, T>> {
    let sampled = &result.sampled.points;
    let (n, k) = (cloud.len() as f64, sampled.len() as f64);
    let mut weights = vec![0.0f64; sampled.len()];
    for x in &cloud.points {
        let (j, d) = nearest(x, sampled);
        weights[j] += d / n;
    }
    for (j, p) in sampled.iter().enumerate() {
        weights[j] += nearest(p, &cloud.points).1 / k;
    }
    weighted_gates(gates, weights.into_iter().map(T::lit).collect())
}

fn nearest(x: &[f32; 3], among: &[[f32; 3]]) -> (usize, f64) {
    among
        .iter()
        .enumerate()
        .map(|(j, q)| (j, dist2(x, q)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

fn weighted_gates<'g, T: Element>(gates: Tensor<'g, T>, weights: Vec<T>) -> Result<Tensor<'g, T>> {
    let w = gates.graph().constant(Array::from_vec(weights));
    Ok(gates.mul(w)?.sum())
}

/// `α·L_shape + β·task_loss`, `L_shape` chosen by the variant.
pub fn joint_loss<'g, T: Element>(
    selection: &Selection<'g, T>,
    cloud: &PointCloud,
    task_loss: Option<Tensor<'g, T>>,
    cfg: &LossConfig,
) -> Result<Tensor<'g, T>> {
    cfg.validate()?;
    let gates = selection.gates;
    let result = &selection.result;
    let shape = match cfg.variant {
        LossVariant::Emd => gated_emd(gates, result, cloud)?,
        LossVariant::Cd => gated_chamfer(gates, result, cloud)?,
        LossVariant::CdEmd => gated_chamfer(gates, result, cloud)?.add(gated_emd(gates, result, cloud)?)?,
    };
    let mut total = shape.scalar_mul(T::lit(cfg.alpha));
    if cfg.beta != 0.0 {
        let task = task_loss.ok_or_else(|| Error::invalid("beta > 0 needs a task loss"))?;
        total = total.add(task.scalar_mul(T::lit(cfg.beta)))?;
    }
    Ok(total)
}

/// Sampled coordinates scaled row-wise by the gates, `k × 3`: the task
/// network's input.
pub fn gated_points<'g, T: Element>(selection: &Selection<'g, T>) -> Result<Tensor<'g, T>> {
    let k = selection.result.k();
    let coords: Vec<T> = selection
        .result
        .sampled
        .points
        .iter()
        .flat_map(|p| p.iter().map(|&x| T::lit(x as f64)))
        .collect();
    let coords = selection.gates.graph().constant(Array::new(vec![k, 3], coords)?);
    selection.gates.reshape(&[k, 1])?.replicate(1, 3)?.reshape(&[k, 3])?.mul(coords)
}

/// A trained model behind the [`Sampler`] trait.
#[derive(Debug, Clone)]
pub struct CsNetSampler {
    pub model: CsNetModel<f32>,
}

impl CsNetSampler {
    pub fn new(model: CsNetModel<f32>) -> Self {
        Self { model }
    }

    pub fn from_checkpoint(path: &Path) -> Result<Self> {
        let ckpt = crate::checkpoint::Checkpoint::load(path)?;
        Ok(Self::new(ckpt.csnet()?))
    }
}

impl Sampler for CsNetSampler {
    fn name(&self) -> &str {
        "csnet"
    }

    fn sample(&self, cloud: &PointCloud, k: usize, _rng: &mut ChaCha8Rng) -> Result<SampleResult> {
        self.model.select(cloud, k)
    }
}
