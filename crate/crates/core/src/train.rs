//! The task classifier and the joint training / evaluation loops.

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::csnet::{gated_points, joint_loss, CsNetHyper, CsNetModel, LossConfig};
use crate::error::{Error, Result};
use crate::nn::{accumulate, scale, Adam, AdamConfig, Bound, Mlp, ParamStore};
use crate::pointcloud::{augment, Augmentation, PointCloud, Sample};
use crate::sampling::{Sampler, SamplerOptions, SamplerRegistry};
use crate::tensor::{Array, Element, Graph, ReduceKind, Tensor};

/// Per-point MLP, global max pool, fully connected head.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel<T: Element> {
    pub num_classes: usize,
    pub params: ParamStore<T>,
    pub point_mlp: Mlp,
    pub head: Mlp,
}

impl<T: Element> ClassifierModel<T> {
    pub fn new(num_classes: usize, seed: u64) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::invalid(format!("need at least 2 classes, got {num_classes}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let point_mlp = Mlp::new(&mut params, &mut rng, "classifier.point", &[3, 64, 128], true);
        let head = Mlp::new(&mut params, &mut rng, "classifier.head", &[128, 64, num_classes], false);
        Ok(Self {
            num_classes,
            params,
            point_mlp,
            head,
        })
    }

    pub fn cast<U: Element>(&self) -> ClassifierModel<U> {
        ClassifierModel {
            num_classes: self.num_classes,
            params: self.params.cast(),
            point_mlp: self.point_mlp.clone(),
            head: self.head.clone(),
        }
    }

    /// Logits for an `m × 3` point tensor.
    pub fn forward<'g>(&self, p: &Bound<'g, T>, points: Tensor<'g, T>) -> Result<Tensor<'g, T>> {
        let shape = points.shape();
        if shape.len() != 2 || shape[1] != 3 || shape[0] == 0 {
            return Err(Error::invalid(format!("classifier input must be m x 3, got {shape:?}")));
        }
        let features = self.point_mlp.forward(p, points)?;
        let global = features.reduce(ReduceKind::Max, 0)?.reshape(&[1, 128])?;
        self.head.forward(p, global)?.reshape(&[self.num_classes])
    }

    pub fn predict(&self, cloud: &PointCloud) -> Result<usize> {
        let graph = Graph::new();
        let p = self.params.bind_frozen(&graph);
        let logits = self.forward(&p, points_tensor(&graph, cloud)?)?;
        Ok(argmax(logits.value().data()))
    }
}

pub fn points_tensor<'g, T: Element>(graph: &'g Graph<T>, cloud: &PointCloud) -> Result<Tensor<'g, T>> {
    let data = cloud.points.iter().flatten().map(|&x| T::lit(x as f64)).collect();
    Ok(graph.constant(Array::new(vec![cloud.len(), 3], data)?))
}

/// First index of the largest value.
pub fn argmax<T: Element>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// `log Σ exp(logits) − logits[label]`.
pub fn cross_entropy<'g, T: Element>(logits: Tensor<'g, T>, label: usize) -> Result<Tensor<'g, T>> {
    let shape = logits.shape();
    if shape.len() != 1 {
        return Err(Error::invalid(format!("logits must be a vector, got {shape:?}")));
    }
    if label >= shape[0] {
        return Err(Error::invalid(format!("label {label} out of range for {} classes", shape[0])));
    }
    logits.log_sum_exp(0)?.sub(logits.gather(0, &[label])?.sum())
}

/// Which subset the classifier sees during training and evaluation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "method")]
pub enum SubsetSource {
    /// The learned sampler, trained jointly.
    Csnet,
    /// A fixed sampler from the registry (`random`, `fps`, `poisson`).
    Baseline(String),
    /// No sampling: the classifier sees every point.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub k: usize,
    pub loss: LossConfig,
    pub hyper: CsNetHyper,
    pub source: SubsetSource,
    pub augment: bool,
    pub checkpoint_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 8,
            learning_rate: 1e-3,
            seed: 0,
            k: 64,
            loss: LossConfig::default(),
            hyper: CsNetHyper::default(),
            source: SubsetSource::Csnet,
            augment: true,
            checkpoint_path: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        self.loss.validate()?;
        self.hyper.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
    /// Training steps whose Sinkhorn solve hit the iteration cap.
    pub unconverged_solves: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
}

impl TrainReport {
    pub fn final_test_accuracy(&self) -> Option<f64> {
        self.epochs.last().and_then(|e| e.test_accuracy)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub correct: usize,
    pub total: usize,
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<usize>>,
}

impl EvalReport {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }
}

/// Sampler (if any) and classifier, as trained together.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub source: SubsetSource,
    pub k: usize,
    /// Seeds baseline samplers at evaluation time.
    pub seed: u64,
    pub csnet: Option<CsNetModel<f32>>,
    pub classifier: ClassifierModel<f32>,
}

impl Pipeline {
    /// The classifier's input for `cloud`; `id` keys the RNG of random
    /// baselines so evaluation consumes no shared state.
    pub fn subset(&self, cloud: &PointCloud, id: usize) -> Result<PointCloud> {
        match &self.source {
            SubsetSource::Full => Ok(cloud.clone()),
            SubsetSource::Csnet => {
                let model = self
                    .csnet
                    .as_ref()
                    .ok_or_else(|| Error::invalid("pipeline has no sampler model"))?;
                Ok(model.select(cloud, self.k)?.sampled)
            }
            SubsetSource::Baseline(name) => {
                let sampler = baseline(name)?;
                let mut rng = eval_rng(self.seed, id);
                Ok(sampler.sample(cloud, self.k, &mut rng)?.sampled)
            }
        }
    }

    pub fn predict(&self, cloud: &PointCloud, id: usize) -> Result<usize> {
        self.classifier.predict(&self.subset(cloud, id)?)
    }

    /// Accuracy and confusion counts; no augmentation.
    pub fn evaluate(&self, samples: &[Sample]) -> Result<EvalReport> {
        if samples.is_empty() {
            return Err(Error::invalid("cannot evaluate an empty split"));
        }
        let c = self.classifier.num_classes;
        let mut confusion = vec![vec![0usize; c]; c];
        let mut correct = 0;
        for s in samples {
            let label = s
                .cloud
                .label
                .ok_or_else(|| Error::invalid(format!("cloud {} has no label", s.id)))?;
            if label >= c {
                return Err(Error::invalid(format!("label {label} out of range for {c} classes")));
            }
            let pred = self.predict(&s.cloud, s.id)?;
            confusion[label][pred] += 1;
            correct += usize::from(pred == label);
        }
        Ok(EvalReport {
            correct,
            total: samples.len(),
            confusion,
        })
    }
}

fn baseline(name: &str) -> Result<Box<dyn Sampler>> {
    if name == "csnet" {
        return Err(Error::invalid("'csnet' is not a baseline sampler"));
    }
    SamplerRegistry::with_builtin().create(name, &SamplerOptions::default())
}

fn eval_rng(seed: u64, id: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id as u64 + 1);
    rng
}

/// Owns both models, their optimizers and the training RNG.
#[derive(Debug)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub pipeline: Pipeline,
    csnet_opt: Option<Adam<f32>>,
    classifier_opt: Adam<f32>,
    pub rng: ChaCha8Rng,
    baseline: Option<Box<dyn Sampler>>,
}

struct StepOutcome {
    loss: f64,
    correct: bool,
    converged: bool,
    csnet_grads: Option<Vec<Array<f32>>>,
    classifier_grads: Vec<Array<f32>>,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, num_classes: usize) -> Result<Self> {
        cfg.validate()?;
        let mut seeds = ChaCha8Rng::seed_from_u64(cfg.seed);
        let (csnet_seed, classifier_seed, train_seed): (u64, u64, u64) = (seeds.gen(), seeds.gen(), seeds.gen());
        let csnet = match cfg.source {
            SubsetSource::Csnet => Some(CsNetModel::new(cfg.hyper, csnet_seed)?),
            _ => None,
        };
        let baseline = match &cfg.source {
            SubsetSource::Baseline(name) => Some(baseline(name)?),
            _ => None,
        };
        let classifier = ClassifierModel::new(num_classes, classifier_seed)?;
        let adam = AdamConfig {
            lr: cfg.learning_rate,
            ..AdamConfig::default()
        };
        Ok(Self {
            csnet_opt: csnet.as_ref().map(|m| Adam::new(&m.params, adam)),
            classifier_opt: Adam::new(&classifier.params, adam),
            pipeline: Pipeline {
                source: cfg.source.clone(),
                k: cfg.k,
                seed: cfg.seed,
                csnet,
                classifier,
            },
            rng: ChaCha8Rng::seed_from_u64(train_seed),
            baseline,
            cfg,
        })
    }

    fn step(&mut self, sample: &Sample) -> Result<StepOutcome> {
        let label = sample
            .cloud
            .label
            .ok_or_else(|| Error::invalid(format!("cloud {} has no label", sample.id)))?;
        let cloud = if self.cfg.augment {
            augment(&sample.cloud, &mut self.rng, &Augmentation::default())?
        } else {
            sample.cloud.clone()
        };
        let graph = Graph::<f32>::new();
        let clf = &self.pipeline.classifier;
        let clf_p = clf.params.bind(&graph);
        let mut converged = true;
        let (loss, logits, csnet_p) = match &self.pipeline.source {
            SubsetSource::Csnet => {
                let model = self.pipeline.csnet.as_ref().expect("csnet source has a model");
                let p = model.params.bind(&graph);
                let (selection, _) = model.forward_sample(&p, &cloud, self.cfg.k)?;
                converged = selection.converged;
                let logits = clf.forward(&clf_p, gated_points(&selection)?)?;
                let task = cross_entropy(logits, label)?;
                (joint_loss(&selection, &cloud, Some(task), &self.cfg.loss)?, logits, Some(p))
            }
            SubsetSource::Baseline(_) => {
                let sampler = self.baseline.as_ref().expect("baseline source has a sampler");
                let subset = sampler.sample(&cloud, self.cfg.k, &mut self.rng)?.sampled;
                let logits = clf.forward(&clf_p, points_tensor(&graph, &subset)?)?;
                (cross_entropy(logits, label)?, logits, None)
            }
            SubsetSource::Full => {
                let logits = clf.forward(&clf_p, points_tensor(&graph, &cloud)?)?;
                (cross_entropy(logits, label)?, logits, None)
            }
        };
        let loss_value = loss.item() as f64;
        if !loss_value.is_finite() {
            return Err(Error::NonFinite(format!("training loss on cloud {}", sample.id)));
        }
        let grads = graph.backward(loss)?;
        Ok(StepOutcome {
            loss: loss_value,
            correct: argmax(logits.value().data()) == label,
            converged,
            csnet_grads: csnet_p.map(|p| p.collect(&grads)),
            classifier_grads: clf_p.collect(&grads),
        })
    }

    /// One pass over `train` in seeded shuffled order, one optimizer step
    /// per batch with gradients averaged over the batch.
    pub fn run_epoch(&mut self, train: &[Sample], epoch: usize) -> Result<EpochStats> {
        if train.is_empty() {
            return Err(Error::invalid("cannot train on an empty split"));
        }
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut self.rng);
        let (mut loss_sum, mut correct, mut unconverged) = (0.0, 0usize, 0usize);
        for batch in order.chunks(self.cfg.batch_size) {
            let mut csnet_acc = self.pipeline.csnet.as_ref().map(|m| m.params.zeros_like());
            let mut clf_acc = self.pipeline.classifier.params.zeros_like();
            for &i in batch {
                let out = self.step(&train[i])?;
                loss_sum += out.loss;
                correct += usize::from(out.correct);
                unconverged += usize::from(!out.converged);
                if let (Some(acc), Some(g)) = (csnet_acc.as_mut(), out.csnet_grads.as_ref()) {
                    accumulate(acc, g);
                }
                accumulate(&mut clf_acc, &out.classifier_grads);
            }
            let inv = 1.0 / batch.len() as f64;
            scale(&mut clf_acc, inv);
            self.classifier_opt.step(&mut self.pipeline.classifier.params, &clf_acc)?;
            if let (Some(mut acc), Some(opt), Some(model)) =
                (csnet_acc, self.csnet_opt.as_mut(), self.pipeline.csnet.as_mut())
            {
                scale(&mut acc, inv);
                opt.step(&mut model.params, &acc)?;
            }
        }
        Ok(EpochStats {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_accuracy: correct as f64 / train.len() as f64,
            test_accuracy: None,
            unconverged_solves: unconverged,
        })
    }

    /// Both models, the configuration and the training RNG position.
    pub fn checkpoint(&self, class_names: &[String]) -> Checkpoint {
        Checkpoint::from_pipeline(&self.pipeline, &self.cfg, class_names, &self.rng)
    }

    /// Trains for `cfg.epochs`, evaluating on `test` after every epoch when
    /// it is non-empty. `on_epoch` sees each epoch's statistics as they
    /// arrive.
    pub fn fit(
        &mut self,
        train: &[Sample],
        test: &[Sample],
        mut on_epoch: impl FnMut(&EpochStats),
    ) -> Result<TrainReport> {
        let mut epochs = Vec::with_capacity(self.cfg.epochs);
        for epoch in 1..=self.cfg.epochs {
            let mut stats = self.run_epoch(train, epoch)?;
            if !test.is_empty() {
                stats.test_accuracy = Some(self.pipeline.evaluate(test)?.accuracy());
            }
            on_epoch(&stats);
            epochs.push(stats);
        }
        Ok(TrainReport { epochs })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_cost_ln_classes() {
        let g = Graph::<f64>::new();
        let logits = g.constant(Array::from_vec(vec![0.3; 8]));
        let ce = cross_entropy(logits, 5).unwrap().item();
        assert!((ce - 8f64.ln()).abs() < 1e-12);
        assert!(cross_entropy(logits, 8).is_err());
    }

    #[test]
    fn loss_falls_as_the_margin_grows() {
        let g = Graph::<f64>::new();
        let mut last = f64::INFINITY;
        for margin in [0.0, 1.0, 5.0, 20.0, 100.0, 1000.0] {
            let logits = g.constant(Array::from_vec(vec![0.0, margin, 0.0]));
            let ce = cross_entropy(logits, 1).unwrap().item();
            assert!(ce < last || ce == 0.0);
            last = ce;
        }
        assert!(last < 1e-12);
    }

    #[test]
    fn classifier_is_permutation_invariant() {
        let clf = ClassifierModel::<f64>::new(4, 3).unwrap();
        let pts: Vec<[f32; 3]> = (0..10).map(|i| [i as f32 * 0.1, (i * i) as f32 * 0.01, -0.2]).collect();
        let mut rev = pts.clone();
        rev.reverse();
        let logits = |pts: Vec<[f32; 3]>| {
            let g = Graph::new();
            let p = clf.params.bind_frozen(&g);
            let cloud = PointCloud::new(pts).unwrap();
            let out = clf.forward(&p, points_tensor(&g, &cloud).unwrap()).unwrap();
            out.value().data().to_vec()
        };
        let (a, b) = (logits(pts), logits(rev));
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        assert_eq!(logits(vec![[0.5, 0.5, 0.5]]).len(), 4);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { epochs: 0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { learning_rate: -1.0, ..TrainConfig::default() }.validate().is_err());
    }
}
