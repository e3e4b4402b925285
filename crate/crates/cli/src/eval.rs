//! Shape-preservation report: one CSV row per (method, k, cloud) plus a
//! mean row per (method, k).

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use clap::ValueEnum;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use csnet_core::metrics::{chamfer, emd};
use csnet_core::pointcloud::{Dataset, Sample};
use csnet_core::sampling::{Sampler, SamplerOptions, SamplerRegistry};

use crate::{check_parent, invalid, CmdResult, EvalArgs, Failure};

pub const EVAL_HEADER: &str = "method,k,cloud_id,cd,emd";
pub const PASSTHROUGH: &str = "passthrough";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    Cd,
    Emd,
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub data: PathBuf,
    pub methods: Vec<String>,
    pub k: Vec<usize>,
    pub metrics: Vec<Metric>,
    pub report: PathBuf,
    pub ckpt: Option<PathBuf>,
    pub passthrough: bool,
}

impl From<EvalArgs> for EvalOptions {
    fn from(a: EvalArgs) -> Self {
        Self {
            data: a.data,
            methods: a.methods,
            k: a.k,
            metrics: a.metrics,
            report: a.report,
            ckpt: a.ckpt,
            passthrough: a.passthrough,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub method: String,
    pub k: usize,
    pub cloud_id: usize,
    pub cd: Option<f64>,
    pub emd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub method: String,
    pub k: usize,
    pub clouds: usize,
    pub cd: Option<f64>,
    pub emd: Option<f64>,
}

/// Scores every method at every `k` on every sample, in the order given.
/// Random strategies draw from a stream keyed by the cloud id, so rows do
/// not depend on which other clouds or methods are evaluated.
pub fn evaluate_rows(
    samples: &[Sample],
    methods: &[String],
    ks: &[usize],
    metrics: &[Metric],
    ckpt: Option<&PathBuf>,
    passthrough: bool,
) -> Result<Vec<EvalRow>, Failure> {
    if samples.is_empty() {
        return Err(invalid("no clouds to evaluate"));
    }
    if metrics.is_empty() {
        return Err(invalid("--metrics must name cd, emd or both"));
    }
    let want = |m: Metric| metrics.contains(&m);
    let score = |sampled: &csnet_core::pointcloud::PointCloud, input| -> Result<(Option<f64>, Option<f64>), Failure> {
        let cd = want(Metric::Cd).then(|| chamfer(sampled, input)).transpose()?;
        let e = want(Metric::Emd).then(|| emd(sampled, input).map(|r| r.0)).transpose()?;
        Ok((cd, e))
    };
    let mut rows = Vec::new();
    if passthrough {
        for s in samples {
            let (cd, emd) = score(&s.cloud, &s.cloud)?;
            rows.push(EvalRow {
                method: PASSTHROUGH.into(),
                k: s.cloud.len(),
                cloud_id: s.id,
                cd,
                emd,
            });
        }
        return Ok(rows);
    }
    if methods.is_empty() || ks.is_empty() {
        return Err(invalid("--methods and --k must be non-empty"));
    }
    let registry = SamplerRegistry::with_builtin();
    let options = SamplerOptions {
        fps_start_index: 0,
        checkpoint: ckpt.cloned(),
    };
    let samplers: Vec<Box<dyn Sampler>> = methods
        .iter()
        .map(|m| registry.create(m, &options))
        .collect::<csnet_core::Result<_>>()?;
    let min_n = samples.iter().map(|s| s.cloud.len()).min().unwrap_or(0);
    if let Some(&bad) = ks.iter().find(|&&k| k == 0 || k > min_n) {
        return Err(invalid(format!("--k {bad} must lie in 1..={min_n} (smallest cloud)")));
    }
    for sampler in &samplers {
        for &k in ks {
            for s in samples {
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                rng.set_stream(s.id as u64 + 1);
                let result = sampler.sample(&s.cloud, k, &mut rng)?;
                let (cd, emd) = score(&result.sampled, &s.cloud)?;
                rows.push(EvalRow {
                    method: sampler.name().to_string(),
                    k,
                    cloud_id: s.id,
                    cd,
                    emd,
                });
            }
        }
    }
    Ok(rows)
}

/// Per-(method, k) means, in first-appearance order.
pub fn summarize(rows: &[EvalRow]) -> Vec<EvalSummary> {
    let mut out: Vec<EvalSummary> = Vec::new();
    let mut sums: Vec<(f64, f64)> = Vec::new();
    for r in rows {
        let at = match out.iter().position(|s| s.method == r.method && s.k == r.k) {
            Some(i) => i,
            None => {
                out.push(EvalSummary {
                    method: r.method.clone(),
                    k: r.k,
                    clouds: 0,
                    cd: r.cd.map(|_| 0.0),
                    emd: r.emd.map(|_| 0.0),
                });
                sums.push((0.0, 0.0));
                out.len() - 1
            }
        };
        out[at].clouds += 1;
        sums[at].0 += r.cd.unwrap_or(0.0);
        sums[at].1 += r.emd.unwrap_or(0.0);
    }
    for (s, (cd, e)) in out.iter_mut().zip(sums) {
        let n = s.clouds as f64;
        s.cd = s.cd.map(|_| cd / n);
        s.emd = s.emd.map(|_| e / n);
    }
    out
}

fn field(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

pub fn render(rows: &[EvalRow]) -> String {
    let mut out = String::from(EVAL_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{}", r.method, r.k, r.cloud_id, field(r.cd), field(r.emd));
    }
    for s in summarize(rows) {
        let _ = writeln!(out, "{},{},mean,{},{}", s.method, s.k, field(s.cd), field(s.emd));
    }
    out
}

/// Evaluates the test split of `opts.data` and writes the report.
pub fn cmd_eval(opts: &EvalOptions) -> CmdResult {
    check_parent(&opts.report, "--report")?;
    if opts.methods.iter().any(|m| m == "csnet") && opts.ckpt.is_none() && !opts.passthrough {
        return Err(invalid("method 'csnet' requires --ckpt"));
    }
    let ds = Dataset::load(&opts.data)?;
    let rows = evaluate_rows(
        &ds.test,
        &opts.methods,
        &opts.k,
        &opts.metrics,
        opts.ckpt.as_ref(),
        opts.passthrough,
    )?;
    fs::write(&opts.report, render(&rows))
        .map_err(|e| Failure::Runtime(format!("{}: {e}", opts.report.display())))?;
    eprintln!("wrote {} rows to {}", rows.len(), opts.report.display());
    Ok(())
}
