//! Verification suites: finite-difference gradient checks and brute-force
//! oracles, all in f64. Each check reduces to one nonnegative "worst"
//! figure that must stay strictly below a tolerance.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::csnet::{gated_points, joint_loss, knn_indices, AttentionKind, CsNetHyper, CsNetModel, LossConfig, LossVariant};
use crate::error::Result;
use crate::metrics::{emd, emd_grad_wrt_weights};
use crate::nn::{Bound, ParamStore};
use crate::pointcloud::{dist2, Point, PointCloud};
use crate::sampling::{fps, SampleResult};
use crate::tensor::{finite_diff_check, finite_diff_check_surrogate, Array, Graph, ReduceKind, Tensor};
use crate::topk::{build_cost, hard_topk, sinkhorn, soft_indicator, Selection, TopkConfig};
use crate::train::{cross_entropy, ClassifierModel};

/// What a check measured.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub worst: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub worst: f64,
    pub tol: f64,
    pub passed: bool,
    pub detail: String,
}

pub type CheckFn = Box<dyn Fn() -> Result<Measurement>>;

/// A named check with its default tolerance.
pub struct Check {
    pub name: String,
    pub tol: f64,
    pub run: CheckFn,
}

impl Check {
    pub fn new(name: impl Into<String>, tol: f64, run: impl Fn() -> Result<Measurement> + 'static) -> Self {
        Self {
            name: name.into(),
            tol,
            run: Box::new(run),
        }
    }

    /// Runs the check against `tol`, or its own tolerance when `None`. An
    /// error counts as a failure.
    pub fn evaluate(&self, tol: Option<f64>) -> CheckOutcome {
        let tol = tol.unwrap_or(self.tol);
        match (self.run)() {
            Ok(m) => CheckOutcome {
                name: self.name.clone(),
                worst: m.worst,
                tol,
                passed: m.worst < tol,
                detail: m.detail,
            },
            Err(e) => CheckOutcome {
                name: self.name.clone(),
                worst: f64::INFINITY,
                tol,
                passed: false,
                detail: format!("error: {e}"),
            },
        }
    }
}

impl std::fmt::Debug for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Check({}, tol={:e})", self.name, self.tol)
    }
}

/// Everything `gradcheck` runs by default.
pub fn default_checks() -> Vec<Check> {
    let mut checks = vec![
        Check::new("tensor_ops", 1e-4, || op_suite(5, 7)),
        Check::new("sinkhorn_dgamma_dcost", 1e-4, || sinkhorn_gradient(5, 11)),
        Check::new("cross_entropy", 1e-5, || cross_entropy_gradient(10, 13)),
        Check::new("emd_gate_gradient", 1e-6, || emd_gate_gradient(20, 17)),
    ];
    for variant in [LossVariant::Emd, LossVariant::Cd, LossVariant::CdEmd] {
        checks.push(Check::new(format!("pipeline_{variant}"), 1e-3, move || {
            pipeline_gradient(&PipelineCase::small(variant, 1))
        }));
    }
    checks.push(Check::new("pipeline_joint_task", 1e-3, || {
        pipeline_gradient(&PipelineCase::small(LossVariant::Cd, 1).with_task())
    }));
    checks.extend([
        Check::new("emd_vs_injections", 1e-12, || emd_injection_oracle(200, 19)),
        Check::new("hard_topk_vs_sort", 0.5, || hard_topk_sort_oracle(1000, 23)),
        Check::new("soft_topk_vs_sort", 0.5, || soft_topk_equivalence(100, 1e-4, 1000, 29)),
        Check::new("sinkhorn_marginals", 1e-6, || sinkhorn_feasibility(50, 31).map(|f| f.measurement())),
        Check::new("fps_optimality", 0.5, || fps_optimality(50, 256, 64, 37)),
        Check::new("knn_vs_sort", 0.5, || knn_oracle(100, 64, 8, 41)),
        Check::new("subset_guarantee", 0.5, || subset_guarantee(100, 128, 43)),
    ]);
    checks
}

pub fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
    let points = (0..n)
        .map(|_| [0; 3].map(|_: i32| rng.gen_range(-1.0f32..1.0)))
        .collect();
    PointCloud::new(points).expect("finite")
}

/// `n` points made of `⌈n/2⌉` random locations, each present twice (one
/// singleton when `n` is odd), shuffled.
pub fn duplicated_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
    let base = random_cloud(rng, n.div_ceil(2));
    let mut points: Vec<Point> = base.points.iter().flat_map(|p| [*p, *p]).take(n).collect();
    points.shuffle(rng);
    PointCloud::new(points).expect("finite")
}

/// Scores whose sorted neighbours differ by at least `gap`, in random order.
pub fn gapped_scores(rng: &mut ChaCha8Rng, n: usize, gap: f64) -> Vec<f64> {
    let mut base: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
    base.sort_by(f64::total_cmp);
    let mut s: Vec<f64> = base.iter().enumerate().map(|(i, v)| v + i as f64 * gap).collect();
    s.shuffle(rng);
    s
}

fn random_array(rng: &mut ChaCha8Rng, shape: &[usize]) -> Array<f64> {
    let len = shape.iter().product();
    Array::new(shape.to_vec(), (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("sized")
}

fn apply_op<'g>(name: &str, xs: &[Tensor<'g, f64>]) -> Result<Tensor<'g, f64>> {
    Ok(match name {
        "add" => xs[0].add(xs[1])?,
        "add_row" => xs[0].add_row(xs[1])?,
        "sub" => xs[0].sub(xs[1])?,
        "mul" => xs[0].mul(xs[1])?,
        "div" => xs[0].div(xs[1])?,
        "scalar" => xs[0].scalar_mul(-1.7).add_scalar(0.3),
        "relu" => xs[0].relu(),
        "exp" => xs[0].exp(),
        "ln" => xs[0].ln(),
        "square" => xs[0].square()?,
        "matmul" => xs[0].matmul(xs[1])?,
        "matmul_tt" => xs[0].matmul_t(xs[1], true, true)?,
        "transpose" => xs[0].transpose()?,
        "softmax0" => xs[0].softmax(0, 1.3)?,
        "softmax1" => xs[0].softmax(1, 0.5)?,
        "lse" => xs[0].log_sum_exp(1)?,
        "max" => xs[0].reduce(ReduceKind::Max, 1)?,
        "mean" => xs[0].reduce(ReduceKind::Mean, 2)?,
        "sum_axis" => xs[0].reduce(ReduceKind::Sum, 0)?,
        "concat" => Tensor::concat(xs, 1)?,
        "replicate" => xs[0].replicate(1, 3)?,
        "gather" => xs[0].gather(0, &[3, 1, 1])?,
        "reshape" => xs[0].reshape(&[6, 2])?,
        other => return Err(crate::Error::invalid(format!("unknown op '{other}'"))),
    })
}

const OPS: &[(&str, &[&[usize]])] = &[
    ("add", &[&[3, 4], &[3, 4]]),
    ("add_row", &[&[3, 4], &[4]]),
    ("sub", &[&[3, 4], &[3, 4]]),
    ("mul", &[&[3, 4], &[3, 4]]),
    ("div", &[&[3, 4], &[3, 4]]),
    ("scalar", &[&[5]]),
    ("relu", &[&[6]]),
    ("exp", &[&[6]]),
    ("ln", &[&[6]]),
    ("square", &[&[6]]),
    ("matmul", &[&[3, 4], &[4, 2]]),
    ("matmul_tt", &[&[4, 3], &[2, 4]]),
    ("transpose", &[&[3, 2]]),
    ("softmax0", &[&[3, 4]]),
    ("softmax1", &[&[3, 4]]),
    ("lse", &[&[3, 4, 2]]),
    ("max", &[&[3, 4, 2]]),
    ("mean", &[&[3, 4, 2]]),
    ("sum_axis", &[&[3, 4]]),
    ("concat", &[&[2, 3], &[2, 1]]),
    ("replicate", &[&[2, 3]]),
    ("gather", &[&[4, 3]]),
    ("reshape", &[&[3, 4]]),
];

/// Every differentiable op, `trials` random inputs each, contracted with
/// random weights.
pub fn op_suite(trials: usize, seed: u64) -> Result<Measurement> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = (0.0f64, "");
    for &(name, shapes) in OPS {
        for _ in 0..trials {
            let mut inputs: Vec<_> = shapes.iter().map(|s| random_array(&mut rng, s)).collect();
            match name {
                "ln" => inputs[0] = inputs[0].map(|v| v.abs() + 0.5),
                "div" => inputs[1] = inputs[1].map(|v| v.signum() * (v.abs() + 0.5)),
                _ => {}
            }
            let out_shape = {
                let g = Graph::new();
                let xs: Vec<_> = inputs.iter().map(|x| g.constant(x.clone())).collect();
                apply_op(name, &xs)?.shape()
            };
            let weights = random_array(&mut rng, &out_shape);
            let report = finite_diff_check(
                |g, xs| apply_op(name, xs)?.mul(g.constant(weights.clone())).map(|t| t.sum()),
                &inputs,
                1e-5,
                f64::INFINITY,
            )?;
            if report.max_rel_err >= worst.0 {
                worst = (report.max_rel_err, name);
            }
        }
    }
    Ok(Measurement {
        worst: worst.0,
        detail: format!("{} ops x {trials} trials, worst op '{}'", OPS.len(), worst.1),
    })
}

/// `∂(Σ W⊙Γ)/∂C` at ε = 0.1 with a fixed iteration count.
pub fn sinkhorn_gradient(trials: usize, seed: u64) -> Result<Measurement> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = fixed_iterations(0.1, 60);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let n = rng.gen_range(4..=10);
        let k = rng.gen_range(1..n);
        let cost = random_array(&mut rng, &[n, 2]).map(|v| v.abs());
        let w = random_array(&mut rng, &[n, 2]);
        let report = finite_diff_check(
            |g, xs| {
                let plan = sinkhorn(xs[0], k, &cfg)?;
                Ok(plan.gamma.mul(g.constant(w.clone()))?.sum())
            },
            &[cost],
            1e-6,
            f64::INFINITY,
        )?;
        worst = worst.max(report.max_rel_err);
    }
    Ok(Measurement {
        worst,
        detail: format!("{trials} random costs, eps=0.1"),
    })
}

/// A Top-k configuration that always runs exactly `iters` iterations, so
/// the unrolled solver is a smooth function of its input.
pub fn fixed_iterations(epsilon: f64, iters: usize) -> TopkConfig {
    TopkConfig {
        epsilon,
        max_iters: iters,
        tol: f64::MIN_POSITIVE,
    }
}

pub fn cross_entropy_gradient(trials: usize, seed: u64) -> Result<Measurement> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let classes = rng.gen_range(2..=10);
        let label = rng.gen_range(0..classes);
        let logits = random_array(&mut rng, &[classes]).map(|v| 3.0 * v);
        let report = finite_diff_check(|_, xs| cross_entropy(xs[0], label), &[logits], 1e-5, f64::INFINITY)?;
        worst = worst.max(report.max_rel_err);
    }
    Ok(Measurement {
        worst,
        detail: format!("{trials} random logit vectors"),
    })
}

/// [`emd_grad_wrt_weights`] against central differences of the gated cost
/// with the matching held fixed.
pub fn emd_gate_gradient(trials: usize, seed: u64) -> Result<Measurement> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let n = rng.gen_range(2..=12);
        let k = rng.gen_range(1..=n);
        let input = random_cloud(&mut rng, n);
        let sampled = random_cloud(&mut rng, k);
        let (_, matching) = emd(&sampled, &input)?;
        let gates: Vec<f64> = (0..k).map(|_| rng.gen_range(0.5..1.5)).collect();
        let analytic = emd_grad_wrt_weights(&matching, &gates)?;
        let f = |g: &[f64]| -> f64 {
            g.iter().zip(&matching.pair_costs).map(|(w, d)| w * d).sum::<f64>() / k as f64
        };
        let h = 1e-6;
        for j in 0..k {
            let (mut up, mut down) = (gates.clone(), gates.clone());
            up[j] += h;
            down[j] -= h;
            let numeric = (f(&up) - f(&down)) / (2.0 * h);
            let err = (analytic[j] - numeric).abs() / analytic[j].abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(err);
        }
    }
    Ok(Measurement {
        worst,
        detail: format!("{trials} random instances"),
    })
}

/// One configuration of the end-to-end gradient check.
#[derive(Debug, Clone)]
pub struct PipelineCase {
    pub n: usize,
    pub k: usize,
    pub hyper: CsNetHyper,
    pub loss: LossConfig,
    /// Adds a classifier and its cross-entropy as the task loss.
    pub with_task: bool,
    pub seed: u64,
}

impl PipelineCase {
    /// `n = 32, g = 4, c = 8, k = 8`, ε = 0.1 with a fixed 50 iterations.
    pub fn small(variant: LossVariant, seed: u64) -> Self {
        Self {
            n: 32,
            k: 8,
            hyper: CsNetHyper {
                g: 4,
                c: 8,
                attention: AttentionKind::Oa,
                topk: fixed_iterations(0.1, 50),
            },
            loss: LossConfig {
                alpha: 1.0,
                beta: 0.0,
                variant,
            },
            with_task: false,
            seed,
        }
    }

    /// Adds the classifier's cross-entropy with weight 1.
    pub fn with_task(mut self) -> Self {
        self.with_task = true;
        self.loss.beta = 1.0;
        self
    }
}

/// Loss of the whole sampler (embedding, cascade, scoring, Sinkhorn,
/// straight-through gates, shape loss and optionally the task loss)
/// differentiated with respect to every parameter.
///
/// The gates' forward value is 1 regardless of the parameters, so central
/// differences are taken of the function backward() actually
/// differentiates: the same loss with the selection frozen at the
/// unperturbed indices and gates `1 + Ω(θ) − Ω(θ₀)` at those indices.
pub fn pipeline_gradient(case: &PipelineCase) -> Result<Measurement> {
    let mut rng = ChaCha8Rng::seed_from_u64(case.seed);
    let cloud = random_cloud(&mut rng, case.n);
    let mut model = CsNetModel::<f64>::new(case.hyper, rng.gen())?;
    let mut classifier = ClassifierModel::<f64>::new(4, rng.gen())?;
    jitter_biases(&mut model.params, &mut rng);
    jitter_biases(&mut classifier.params, &mut rng);
    let label = rng.gen_range(0..4);
    let split = model.params.len();
    let mut inputs = model.params.values().to_vec();
    if case.with_task {
        inputs.extend_from_slice(classifier.params.values());
    }
    let (indices, omega0) = {
        let g = Graph::new();
        let p = model.params.bind_frozen(&g);
        let (selection, _) = model.forward_sample(&p, &cloud, case.k)?;
        let omega0 = selection.omega.value().data().to_vec();
        (selection.result.indices, omega0)
    };
    let anchor: Array<f64> = Array::from_vec(indices.iter().map(|&i| 1.0 - omega0[i]).collect());
    let task = case.with_task.then_some((&classifier, label));
    let report = finite_diff_check_surrogate(
        |_, xs| {
            let p = Bound::from_leaves(xs[..split].to_vec());
            let (selection, _) = model.forward_sample(&p, &cloud, case.k)?;
            if selection.result.indices != indices {
                return Err(crate::Error::invalid("selection changed between runs"));
            }
            pipeline_tail(xs, &selection, split, task, &cloud, &case.loss)
        },
        |g, xs| {
            let p = Bound::from_leaves(xs[..split].to_vec());
            let record = model.scores(&p, &cloud)?;
            let plan = sinkhorn(build_cost(record.s_con)?, case.k, &case.hyper.topk)?;
            let omega = soft_indicator(&plan)?;
            let selection = Selection {
                result: SampleResult::from_indices(&cloud, indices.clone(), "csnet")?,
                gates: omega.gather(0, &indices)?.add(g.constant(anchor.clone()))?,
                omega,
                iterations_used: plan.iterations_used,
                converged: plan.converged,
            };
            pipeline_tail(xs, &selection, split, task, &cloud, &case.loss)
        },
        &inputs,
        1e-5,
        f64::INFINITY,
    )?;
    let names: Vec<&String> = model.params.names().iter().chain(classifier.params.names()).collect();
    Ok(Measurement {
        worst: report.max_rel_err,
        detail: format!(
            "{} coordinates, worst at {}[{}] (backward {:.3e}, central difference {:.3e})",
            report.coordinates, names[report.worst.0], report.worst.1, report.worst_pair.0, report.worst_pair.1
        ),
    })
}

/// Zero biases put every all-inactive hidden row exactly on the next
/// ReLU's kink; random biases move the check to a generic point.
fn jitter_biases(params: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) {
    let biases: Vec<usize> = (0..params.len()).filter(|&i| params.names()[i].ends_with("bias")).collect();
    for i in biases {
        for v in params.values_mut()[i].data_mut() {
            *v = rng.gen_range(-0.1..0.1);
        }
    }
}

fn pipeline_tail<'g>(
    xs: &[Tensor<'g, f64>],
    selection: &Selection<'g, f64>,
    split: usize,
    task: Option<(&ClassifierModel<f64>, usize)>,
    cloud: &PointCloud,
    loss: &LossConfig,
) -> Result<Tensor<'g, f64>> {
    let task_loss = match task {
        Some((classifier, label)) => {
            let q = Bound::from_leaves(xs[split..].to_vec());
            let logits = classifier.forward(&q, gated_points(selection)?)?;
            Some(cross_entropy(logits, label)?)
        }
        None => None,
    };
    joint_loss(selection, cloud, task_loss, loss)
}

/// Exact minimum over all injections of `k` sampled points into `n` inputs.
pub fn brute_force_emd(sampled: &PointCloud, input: &PointCloud) -> f64 {
    fn go(j: usize, used: &mut [bool], acc: f64, cost: &[Vec<f64>], best: &mut f64) {
        if j == cost.len() {
            *best = best.min(acc);
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                go(j + 1, used, acc + cost[j][i], cost, best);
                used[i] = false;
            }
        }
    }
    let cost: Vec<Vec<f64>> = sampled
        .points
        .iter()
        .map(|p| input.points.iter().map(|q| dist2(p, q)).collect())
        .collect();
    let mut best = f64::INFINITY;
    go(0, &mut vec![false; input.len()], 0.0, &cost, &mut best);
    best / sampled.len() as f64
}

/// Exact EMD against enumeration, `|sampled| ≤ 5`, `|input| ≤ 7`. Worst is
/// the largest absolute cost difference.
pub fn emd_injection_oracle(instances: usize, seed: u64) -> Result<Measurement> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let n = rng.gen_range(1..=7);
        let k = rng.gen_range(1..=n.min(5));
        let input = random_cloud(&mut rng, n);
        let sampled = random_cloud(&mut rng, k);
        let (cost, _) = emd(&sampled, &input)?;
        worst = worst.max((cost - brute_force_emd(&sampled, &input)).abs());
    }
    Ok(Measurement {
        worst,
        detail: format!("{instances} instances, max |hungarian - enumeration|"),
    })
}

/// [`hard_topk`] against a full sort; worst is the mismatch count.
pub fn hard_topk_sort_oracle(trials: usize, seed: u64) -> Result<Measurement> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = 0usize;
    for _ in 0..trials {
        let n = rng.gen_range(1..=200);
        let k = rng.gen_range(1..=n);
        let scores: Vec<f64> = (0..n).map(|_| (rng.gen_range(0..50) as f64) / 7.0).collect();
        let mut pairs: Vec<(f64, usize)> = scores.iter().copied().zip(0..).collect();
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let expect: Vec<usize> = pairs[..k].iter().map(|p| p.1).collect();
        if hard_topk(&scores, k)? != expect {
            mismatches += 1;
        }
    }
    Ok(Measurement {
        worst: mismatches as f64,
        detail: format!("{mismatches} mismatches over {trials} vectors"),
    })
}

/// The `k` largest entries of `Ω^ε` against the `k` largest scores, on
/// vectors with pairwise gaps of at least 1e-3. Worst is the mismatch
/// count.
pub fn soft_topk_equivalence(trials: usize, epsilon: f64, max_iters: usize, seed: u64) -> Result<Measurement> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = TopkConfig {
        epsilon,
        max_iters,
        tol: 1e-6,
    };
    let (mut mismatches, mut unconverged) = (0usize, 0usize);
    for _ in 0..trials {
        let n = rng.gen_range(16..=256);
        let k = rng.gen_range(1..n);
        let scores = gapped_scores(&mut rng, n, 1e-3);
        let g = Graph::new();
        let plan = sinkhorn(build_cost(g.constant(Array::from_vec(scores.clone())))?, k, &cfg)?;
        let omega = soft_indicator(&plan)?.value();
        let mut by_omega = hard_topk(omega.data(), k)?;
        let mut by_score = hard_topk(&scores, k)?;
        by_omega.sort_unstable();
        by_score.sort_unstable();
        if !plan.converged {
            unconverged += 1;
        }
        if by_omega != by_score {
            mismatches += 1;
        }
    }
    Ok(Measurement {
        worst: mismatches as f64,
        detail: format!("{mismatches} mismatches over {trials} vectors ({unconverged} unconverged), eps={epsilon:e}"),
    })
}

/// Marginal errors of converged plans, recomputed from `Γ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Feasibility {
    pub solves: usize,
    pub converged: usize,
    pub worst_row: f64,
    pub worst_col: f64,
}

impl Feasibility {
    pub fn measurement(&self) -> Measurement {
        Measurement {
            worst: self.worst_row.max(self.worst_col),
            detail: format!(
                "{}/{} converged; worst row error {:.2e}, column error {:.2e}",
                self.converged, self.solves, self.worst_row, self.worst_col
            ),
        }
    }
}

/// Random score vectors with `n ∈ 16..=512` and `k ∈ {n/2, n/4, n/8}` at
/// ε = 0.01.
pub fn sinkhorn_feasibility(trials: usize, seed: u64) -> Result<Feasibility> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = TopkConfig {
        epsilon: 0.01,
        max_iters: 2000,
        tol: 1e-7,
    };
    let mut out = Feasibility {
        solves: 0,
        converged: 0,
        worst_row: 0.0,
        worst_col: 0.0,
    };
    for _ in 0..trials {
        let n = rng.gen_range(16..=512);
        let k = n / [2, 4, 8][rng.gen_range(0..3)];
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let g = Graph::new();
        let plan = sinkhorn(build_cost(g.constant(Array::from_vec(scores)))?, k, &cfg)?;
        out.solves += 1;
        if !plan.converged {
            continue;
        }
        out.converged += 1;
        let gamma = plan.gamma.value();
        let mut col = [0.0f64; 2];
        for row in gamma.data().chunks(2) {
            out.worst_row = out.worst_row.max((row[0] + row[1] - 1.0 / n as f64).abs());
            col[0] += row[0];
            col[1] += row[1];
        }
        let nu = plan.nu();
        out.worst_col = out.worst_col.max((col[0] - nu[0]).abs()).max((col[1] - nu[1]).abs());
    }
    Ok(out)
}

/// Re-derives every FPS pick from scratch: the pick must attain the
/// largest distance to the already selected points. Worst is the
/// violation count.
pub fn fps_optimality(clouds: usize, max_n: usize, max_k: usize, seed: u64) -> Result<Measurement> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0usize;
    for _ in 0..clouds {
        let n = rng.gen_range(2..=max_n);
        let k = rng.gen_range(2..=max_k.min(n));
        let cloud = if rng.gen_bool(0.2) {
            duplicated_cloud(&mut rng, n)
        } else {
            random_cloud(&mut rng, n)
        };
        let start = rng.gen_range(0..n);
        let picked = fps(&cloud, k, start)?.indices;
        for step in 1..k {
            let chosen = &picked[..step];
            let gap = |i: usize| {
                chosen
                    .iter()
                    .map(|&s| dist2(&cloud.points[i], &cloud.points[s]))
                    .fold(f64::INFINITY, f64::min)
            };
            let best = (0..n)
                .filter(|i| !chosen.contains(i))
                .map(gap)
                .fold(f64::NEG_INFINITY, f64::max);
            if gap(picked[step]) < best {
                violations += 1;
            }
        }
    }
    Ok(Measurement {
        worst: violations as f64,
        detail: format!("{violations} violations over {clouds} clouds"),
    })
}

/// Sampler selections on random and duplicate-coordinate clouds, taken
/// through both the training forward pass and inference. Every selection
/// must hold `k` distinct indices whose rows are bit-exact input copies.
/// Worst is the violation count.
pub fn subset_guarantee(trials: usize, max_n: usize, seed: u64) -> Result<Measurement> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hyper = CsNetHyper {
        g: 8,
        c: 16,
        ..CsNetHyper::default()
    };
    let mut violations = 0usize;
    let mut duplicated = 0usize;
    for trial in 0..trials {
        let n = rng.gen_range(hyper.g..=max_n);
        let k = rng.gen_range(1..n);
        let cloud = if trial % 2 == 1 {
            duplicated += 1;
            duplicated_cloud(&mut rng, n)
        } else {
            random_cloud(&mut rng, n)
        };
        let model = CsNetModel::<f32>::new(hyper, rng.gen())?;
        let graph = Graph::new();
        let p = model.params.bind_frozen(&graph);
        let (selection, _) = model.forward_sample(&p, &cloud, k)?;
        for result in [selection.result, model.select(&cloud, k)?] {
            if result.k() != k || result.verify(&cloud).is_err() {
                violations += 1;
            }
        }
    }
    Ok(Measurement {
        worst: violations as f64,
        detail: format!("{violations} violations over {trials} clouds ({duplicated} with duplicates)"),
    })
}

/// Neighbour sets of [`knn_indices`] against a full sort per point.
pub fn knn_oracle(clouds: usize, n: usize, g: usize, seed: u64) -> Result<Measurement> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = 0usize;
    for _ in 0..clouds {
        let cloud = random_cloud(&mut rng, n);
        let got = knn_indices(&cloud, g)?;
        for (i, p) in cloud.points.iter().enumerate() {
            let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            order.sort_by(|&a, &b| dist2(p, &cloud.points[a]).total_cmp(&dist2(p, &cloud.points[b])));
            let mut expect: Vec<usize> = order[..g - 1].to_vec();
            expect.sort_unstable();
            let mut have = got[i * g + 1..(i + 1) * g].to_vec();
            have.sort_unstable();
            if got[i * g] != i || have != expect {
                mismatches += 1;
            }
        }
    }
    Ok(Measurement {
        worst: mismatches as f64,
        detail: format!("{mismatches} mismatched neighbourhoods over {clouds} clouds"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_suite_passes() {
        for check in default_checks().into_iter().filter(|c| !c.name.starts_with("pipeline")) {
            let out = check.evaluate(None);
            assert!(out.passed, "{out:?}");
        }
    }

    #[test]
    fn zero_tolerance_fails_every_check() {
        for check in default_checks().into_iter().filter(|c| !c.name.starts_with("pipeline")) {
            assert!(!check.evaluate(Some(0.0)).passed, "{}", check.name);
        }
    }

    #[test]
    fn errors_count_as_failures() {
        let check = Check::new("broken", 1.0, || Err(crate::Error::invalid("nope")));
        let out = check.evaluate(None);
        assert!(!out.passed && out.detail.contains("nope"));
    }

    #[test]
    fn brute_force_emd_examples() {
        let a = PointCloud::new(vec![[0.0, 0.0, 0.0]]).unwrap();
        let b = PointCloud::new(vec![[1.0, 0.0, 0.0], [5.0, 0.0, 0.0]]).unwrap();
        assert_eq!(brute_force_emd(&a, &b), 1.0);
    }

    #[test]
    fn gapped_scores_keep_their_gap() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = gapped_scores(&mut rng, 300, 1e-3);
        s.sort_by(f64::total_cmp);
        assert!(s.windows(2).all(|w| w[1] - w[0] >= 1e-3 - 1e-12));
    }
}
