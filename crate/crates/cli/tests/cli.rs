use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use csnet_cli::eval::{EVAL_HEADER, PASSTHROUGH};
use csnet_cli::gradcheck::run_checks;
use csnet_cli::bench::BENCH_HEADER;
use csnet_cli::{EXIT_FAILURE, EXIT_INVALID, EXIT_OK};
use csnet_core::tensor::{finite_diff_check, Array};
use csnet_core::verify::{Check, Measurement};

fn csnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_csnet")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// A small dataset and a one-epoch sampler checkpoint.
fn trained(dir: &Path) -> (String, String) {
    let data = dir.join("data");
    let ckpt = dir.join("model.ckpt");
    let out = csnet(&["gen", "--out", p(&data), "--classes", "3", "--per-class", "5", "--points", "48"]);
    assert_eq!(code(&out), EXIT_OK, "{}", String::from_utf8_lossy(&out.stderr));
    let out = csnet(&[
        "train", "--data", p(&data), "--ckpt", p(&ckpt), "--k", "12", "--epochs", "1", "--group", "4", "--width",
        "8",
    ]);
    assert_eq!(code(&out), EXIT_OK, "{}", String::from_utf8_lossy(&out.stderr));
    (p(&data).to_string(), p(&ckpt).to_string())
}

#[test]
fn exit_codes() {
    assert_eq!(code(&csnet(&[])), EXIT_INVALID);
    assert_eq!(code(&csnet(&["--help"])), EXIT_OK);
    assert_eq!(code(&csnet(&["frobnicate"])), EXIT_INVALID);
    assert_eq!(code(&csnet(&["gradcheck", "--tol", "-1"])), EXIT_INVALID);
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    let report = dir.path().join("r.csv");
    let out = csnet(&["eval", "--data", p(&missing), "--report", p(&report)]);
    assert_eq!(code(&out), EXIT_FAILURE);
    let out = csnet(&["eval", "--data", p(&missing), "--methods", "csnet", "--report", p(&report)]);
    assert_eq!(code(&out), EXIT_INVALID);
    let out = csnet(&["bench", "--points", "64", "--ratios", "1", "--report", p(&report)]);
    assert_eq!(code(&out), EXIT_INVALID);
    let out = csnet(&["eval", "--data", p(&missing), "--report", p(&dir.path().join("no/such/dir.csv"))]);
    assert_ne!(code(&out), EXIT_OK);
}

#[test]
fn gen_train_eval_sample_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (data, ckpt) = trained(dir.path());

    let report = dir.path().join("eval.csv");
    let args = [
        "eval", "--data", &data, "--methods", "random,fps,poisson,csnet", "--k", "12,24", "--ckpt", &ckpt, "--report",
        p(&report),
    ];
    assert_eq!(code(&csnet(&args)), EXIT_OK);
    let text = fs::read_to_string(&report).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], EVAL_HEADER);
    // 3 classes x 1 test cloud, 4 methods, 2 sizes, plus 8 mean rows
    assert_eq!(lines.len(), 1 + 4 * 2 * 3 + 8);
    for row in &lines[1..] {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields.len(), 5, "{row}");
        let cd: f64 = fields[3].parse().unwrap();
        let emd: f64 = fields[4].parse().unwrap();
        assert!(cd >= 0.0 && emd == 0.0, "{row}");
    }
    assert_eq!(code(&csnet(&args)), EXIT_OK);
    assert_eq!(fs::read_to_string(&report).unwrap(), text, "reports must be byte-identical");

    let pass = dir.path().join("pass.csv");
    let out = csnet(&["eval", "--data", &data, "--passthrough", "--report", p(&pass)]);
    assert_eq!(code(&out), EXIT_OK);
    let text = fs::read_to_string(&pass).unwrap();
    for row in text.lines().skip(1) {
        assert!(row.starts_with(PASSTHROUGH), "{row}");
        assert!(row.ends_with(",0e0,0e0"), "{row}");
    }

    let cloud = dir.path().join("cloud.xyz");
    let points: String = (0..40).map(|i| format!("{} {} {}\n", i as f32 / 40.0, (i * 7 % 13) as f32, 0.5)).collect();
    fs::write(&cloud, points).unwrap();
    for method in ["random", "fps", "poisson", "csnet"] {
        let out_path = dir.path().join(format!("{method}.xyz"));
        let out = csnet(&[
            "sample", "--method", method, "--k", "10", "--in", p(&cloud), "--out", p(&out_path), "--ckpt", &ckpt,
        ]);
        assert_eq!(code(&out), EXIT_OK, "{method}: {}", String::from_utf8_lossy(&out.stderr));
        assert_eq!(fs::read_to_string(&out_path).unwrap().lines().count(), 10);
    }
    let out = csnet(&["sample", "--method", "csnet", "--k", "10", "--in", p(&cloud), "--out", p(&cloud)]);
    assert_eq!(code(&out), EXIT_INVALID);
    let out = csnet(&["sample", "--method", "fps", "--k", "0", "--in", p(&cloud), "--out", p(&cloud)]);
    assert_eq!(code(&out), EXIT_INVALID);
}

#[test]
fn bench_writes_one_row_per_method_size_and_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("bench.csv");
    let out = csnet(&["bench", "--points", "64,128", "--ratios", "2,4", "--repeats", "1", "--report", p(&report)]);
    assert_eq!(code(&out), EXIT_OK, "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&report).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], BENCH_HEADER);
    assert_eq!(lines.len(), 1 + 4 * 2 * 2);
    for row in &lines[1..] {
        let f: Vec<&str> = row.split(',').collect();
        let (n, ratio, k): (usize, usize, usize) = (f[1].parse().unwrap(), f[2].parse().unwrap(), f[3].parse().unwrap());
        assert_eq!(k, n / ratio);
        assert!(f[5].parse::<f64>().unwrap() >= 0.0);
    }
}

#[test]
fn train_rejects_bad_arguments() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = trained(dir.path());
    let ckpt = dir.path().join("other.ckpt");
    for extra in [["--k", "0"], ["--k", "48"], ["--epochs", "0"], ["--eps", "0"]] {
        let mut args = vec!["train", "--data", &data, "--ckpt", p(&ckpt), "--group", "4", "--width", "8"];
        args.extend(extra);
        assert_eq!(code(&csnet(&args)), EXIT_INVALID, "{extra:?}");
    }
    assert!(!ckpt.exists());
}

/// `x²` whose recorded backward returns `3x` instead of `2x`.
fn corrupted_square() -> Check {
    Check::new("corrupted_square", 1e-4, || {
        let report = finite_diff_check(
            |g, xs| {
                let x = xs[0];
                let value = x.value().map(|v| v * v);
                let y = g.custom(&[x], value, Box::new(|parents, _, grad| {
                    let d = parents[0].data().iter().zip(grad.data()).map(|(x, g)| 3.0 * x * g).collect();
                    vec![Array::new(parents[0].shape().to_vec(), d).unwrap()]
                }));
                Ok(y.sum())
            },
            &[Array::from_vec(vec![0.5, -1.5, 2.0])],
            1e-6,
            f64::INFINITY,
        )?;
        Ok(Measurement {
            worst: report.max_rel_err,
            detail: "deliberately wrong backward".into(),
        })
    })
}

#[test]
fn gradcheck_names_a_corrupted_backward() {
    let healthy = Check::new("healthy", 1e-4, || Ok(Measurement { worst: 0.0, detail: String::new() }));
    let mut log = Vec::new();
    let err = run_checks(&[healthy, corrupted_square()], None, &mut log).unwrap_err();
    assert_eq!(err.exit_code(), EXIT_FAILURE);
    assert!(err.to_string().contains("corrupted_square"));
    assert!(!err.to_string().contains("healthy"));
    let log = String::from_utf8(log).unwrap();
    assert!(log.lines().any(|l| l.starts_with("FAIL") && l.contains("corrupted_square")), "{log}");
    assert!(log.lines().any(|l| l.starts_with("ok") && l.contains("healthy")), "{log}");
}

#[test]
fn zero_tolerance_fails_even_exact_checks() {
    let exact = Check::new("exact", 1e-4, || Ok(Measurement { worst: 0.0, detail: String::new() }));
    let mut log = Vec::new();
    assert!(run_checks(std::slice::from_ref(&exact), None, &mut log).is_ok());
    assert!(run_checks(&[exact], Some(0.0), &mut log).is_err());
}
