//! Wall-clock timing of every sampler over cloud sizes and ratios.

use std::fmt::Write as _;
use std::fs;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use csnet_core::checkpoint::Checkpoint;
use csnet_core::csnet::{CsNetHyper, CsNetModel, CsNetSampler};
use csnet_core::pointcloud::{normalize_unit_sphere, PointCloud, ShapeClass};
use csnet_core::sampling::{Sampler, SamplerOptions, SamplerRegistry};

use crate::{check_parent, invalid, BenchArgs, CmdResult, Failure};

pub const BENCH_HEADER: &str = "method,n,ratio,k,repeats,median_ms";
pub const BENCH_METHODS: [&str; 4] = ["random", "fps", "poisson", "csnet"];

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub method: String,
    pub n: usize,
    pub ratio: usize,
    pub k: usize,
    pub repeats: usize,
    pub median_ms: f64,
}

/// A seeded torus surface of `n` points in the unit sphere.
pub fn bench_cloud(n: usize) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
    let points = (0..n)
        .map(|_| ShapeClass::Torus.sample_surface(&mut rng).map(|x| x as f32))
        .collect();
    normalize_unit_sphere(&PointCloud::new(points).expect("finite surface samples"))
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        (values[m - 1] + values[m]) / 2.0
    }
}

/// Median of `repeats` timed calls of `sampler` on each `(n, ratio)`.
pub fn time_sampler(
    sampler: &dyn Sampler,
    points: &[usize],
    ratios: &[usize],
    repeats: usize,
) -> Result<Vec<BenchRow>, Failure> {
    let mut rows = Vec::new();
    for &n in points {
        let cloud = bench_cloud(n);
        for &ratio in ratios {
            let k = n / ratio;
            let mut times = Vec::with_capacity(repeats);
            for r in 0..repeats {
                let mut rng = ChaCha8Rng::seed_from_u64(r as u64);
                let start = Instant::now();
                let out = sampler.sample(&cloud, k, &mut rng)?;
                times.push(start.elapsed().as_secs_f64() * 1e3);
                std::hint::black_box(out);
            }
            rows.push(BenchRow {
                method: sampler.name().to_string(),
                n,
                ratio,
                k,
                repeats,
                median_ms: median(&mut times),
            });
        }
    }
    Ok(rows)
}

pub fn validate(points: &[usize], ratios: &[usize], repeats: usize, min_n: usize) -> CmdResult {
    if points.is_empty() || ratios.is_empty() {
        return Err(invalid("--points and --ratios must be non-empty"));
    }
    if repeats == 0 {
        return Err(invalid("--repeats must be at least 1"));
    }
    if let Some(&r) = ratios.iter().find(|&&r| r < 2) {
        return Err(invalid(format!("--ratios must be at least 2, got {r}")));
    }
    if let Some(&n) = points.iter().find(|&&n| n < min_n) {
        return Err(invalid(format!("--points {n} is below the smallest supported size {min_n}")));
    }
    if let Some(&n) = points.iter().find(|&&n| ratios.iter().any(|&r| n / r == 0)) {
        return Err(invalid(format!("--points {n} leaves no point at the largest ratio")));
    }
    Ok(())
}

pub fn render(rows: &[BenchRow]) -> String {
    let mut out = String::from(BENCH_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{:.4}",
            r.method, r.n, r.ratio, r.k, r.repeats, r.median_ms
        );
    }
    out
}

pub fn cmd_bench(a: &BenchArgs) -> CmdResult {
    check_parent(&a.report, "--report")?;
    let model = match &a.ckpt {
        Some(path) => Checkpoint::load(path)?.csnet()?,
        None => CsNetModel::new(CsNetHyper::default(), 0)?,
    };
    validate(&a.points, &a.ratios, a.repeats, model.hyper.g.max(2))?;
    let registry = SamplerRegistry::with_builtin();
    let mut rows = Vec::new();
    for method in BENCH_METHODS {
        let sampler: Box<dyn Sampler> = if method == "csnet" {
            Box::new(CsNetSampler::new(model.clone()))
        } else {
            registry.create(method, &SamplerOptions::default())?
        };
        rows.extend(time_sampler(sampler.as_ref(), &a.points, &a.ratios, a.repeats)?);
        eprintln!("timed {method}");
    }
    fs::write(&a.report, render(&rows)).map_err(|e| Failure::Runtime(format!("{}: {e}", a.report.display())))?;
    eprintln!("wrote {} rows to {}", rows.len(), a.report.display());
    Ok(())
}
