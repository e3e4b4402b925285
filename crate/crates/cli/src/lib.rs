//! `csnet` command line: dataset generation, training, sampling, reports
//! and the verification suite.

pub mod bench;
pub mod eval;
pub mod gradcheck;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use csnet_core::csnet::{AttentionKind, CsNetHyper, LossConfig, LossVariant};
use csnet_core::pointcloud::{read_cloud, write_cloud, CloudFormat, Dataset, DatasetSpec, DEFAULT_CLASSES};
use csnet_core::sampling::{SamplerOptions, SamplerRegistry};
use csnet_core::topk::TopkConfig;
use csnet_core::train::{SubsetSource, TrainConfig, Trainer};
use csnet_core::Error;

pub use eval::{EvalOptions, Metric};

/// Exit status for a successful command.
pub const EXIT_OK: i32 = 0;
/// Bad flags or arguments; nothing was written.
pub const EXIT_INVALID: i32 = 1;
/// The command started and failed.
pub const EXIT_FAILURE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "csnet", version, about = "Learned point cloud simplification", arg_required_else_help = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic labelled dataset.
    Gen(GenArgs),
    /// Train the sampler jointly with the classifier.
    Train(TrainArgs),
    /// Downsample one cloud file.
    Sample(SampleArgs),
    /// Per-cloud Chamfer / EMD report for several samplers.
    Eval(EvalArgs),
    /// Median wall time per sampler, cloud size and ratio.
    Bench(BenchArgs),
    /// Run the finite-difference and oracle checks.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub classes: usize,
    #[arg(long = "per-class", default_value_t = 150)]
    pub per_class: usize,
    #[arg(long, default_value_t = 256)]
    pub points: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.01)]
    pub noise: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub k: usize,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    /// Entropic regularisation of the Top-k transport problem.
    #[arg(long, default_value_t = 0.01)]
    pub eps: f64,
    #[arg(long, value_enum, default_value_t = LossArg::Emd)]
    pub loss: LossArg,
    #[arg(long, value_enum, default_value_t = AttnArg::Oa)]
    pub attn: AttnArg,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Neighbours per point.
    #[arg(long, default_value_t = 32)]
    pub group: usize,
    /// Feature width.
    #[arg(long, default_value_t = 64)]
    pub width: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    Emd,
    Cd,
    #[value(name = "cd_emd")]
    CdEmd,
}

impl From<LossArg> for LossVariant {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Emd => Self::Emd,
            LossArg::Cd => Self::Cd,
            LossArg::CdEmd => Self::CdEmd,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AttnArg {
    Oa,
    Sa,
    Mlp,
}

impl From<AttnArg> for AttentionKind {
    fn from(a: AttnArg) -> Self {
        match a {
            AttnArg::Oa => Self::Oa,
            AttnArg::Sa => Self::Sa,
            AttnArg::Mlp => Self::Mlp,
        }
    }
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long, value_parser = ["random", "fps", "poisson", "csnet"])]
    pub method: String,
    #[arg(long)]
    pub k: usize,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long = "start-index", default_value_t = 0)]
    pub start_index: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "random,fps,poisson")]
    pub methods: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "64")]
    pub k: Vec<usize>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "cd,emd")]
    pub metrics: Vec<Metric>,
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Score every cloud against itself (k = n) to calibrate the metrics.
    #[arg(long)]
    pub passthrough: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "1024,2048,4096")]
    pub points: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "2,4,8")]
    pub ratios: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Overrides every check's own tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
}

/// Why a command stopped.
#[derive(Debug)]
pub enum Failure {
    Invalid(String),
    Runtime(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Invalid(_) => EXIT_INVALID,
            Self::Runtime(_) => EXIT_FAILURE,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Invalid(m) => write!(f, "invalid arguments: {m}"),
            Self::Runtime(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for Failure {}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(m) => Self::Invalid(m),
            other => Self::Runtime(other.to_string()),
        }
    }
}

pub type CmdResult = std::result::Result<(), Failure>;

pub fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Invalid(msg.into())
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit status. Diagnostics go to standard error.
pub fn run<I, A>(argv: I) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_INVALID,
            };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("csnet: {f}");
            f.exit_code()
        }
    }
}

pub fn dispatch(command: Command) -> CmdResult {
    match command {
        Command::Gen(a) => cmd_gen(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Sample(a) => cmd_sample(&a),
        Command::Eval(a) => eval::cmd_eval(&a.into()),
        Command::Bench(a) => bench::cmd_bench(&a),
        Command::Gradcheck(a) => gradcheck::cmd_gradcheck(a.tol),
    }
}

/// Fails early when `path` could not be created because its directory is
/// missing.
pub fn check_parent(path: &Path, flag: &str) -> CmdResult {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => Err(invalid(format!(
            "{flag}: directory '{}' does not exist",
            dir.display()
        ))),
        _ => Ok(()),
    }
}

pub fn cmd_gen(a: &GenArgs) -> CmdResult {
    if a.classes < 2 || a.classes > DEFAULT_CLASSES.len() {
        return Err(invalid(format!(
            "--classes must lie in 2..={}, got {}",
            DEFAULT_CLASSES.len(),
            a.classes
        )));
    }
    let spec = DatasetSpec {
        class_names: DEFAULT_CLASSES[..a.classes].iter().map(|c| c.name().to_string()).collect(),
        per_class: a.per_class,
        points_per_cloud: a.points,
        seed: a.seed,
        noise_sigma: a.noise,
    };
    spec.classes()?;
    if a.per_class < 2 || a.points == 0 || !(a.noise >= 0.0 && a.noise.is_finite()) {
        return Err(invalid("--per-class must be at least 2, --points at least 1 and --noise finite and >= 0"));
    }
    let ds = Dataset::generate(&spec)?;
    ds.save(&a.out, Some(&spec))?;
    eprintln!(
        "wrote {} train / {} test clouds of {} points to {}",
        ds.train.len(),
        ds.test.len(),
        a.points,
        a.out.display()
    );
    Ok(())
}

pub fn train_config(a: &TrainArgs) -> TrainConfig {
    TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch,
        learning_rate: a.lr,
        seed: a.seed,
        k: a.k,
        loss: LossConfig {
            alpha: a.alpha,
            beta: a.beta,
            variant: a.loss.into(),
        },
        hyper: CsNetHyper {
            g: a.group,
            c: a.width,
            attention: a.attn.into(),
            topk: TopkConfig {
                epsilon: a.eps,
                ..TopkConfig::default()
            },
        },
        source: SubsetSource::Csnet,
        augment: true,
        checkpoint_path: Some(a.ckpt.clone()),
    }
}

pub fn cmd_train(a: &TrainArgs) -> CmdResult {
    let cfg = train_config(a);
    cfg.validate()?;
    check_parent(&a.ckpt, "--ckpt")?;
    let ds = Dataset::load(&a.data)?;
    if let Some(small) = ds.train.iter().chain(&ds.test).find(|s| s.cloud.len() <= a.k.max(a.group - 1)) {
        return Err(invalid(format!(
            "cloud {} has {} points; --k and --group need more",
            small.id,
            small.cloud.len()
        )));
    }
    let mut trainer = Trainer::new(cfg, ds.num_classes())?;
    trainer.fit(&ds.train, &ds.test, |e| {
        eprintln!(
            "epoch {:>3}  loss {:.4}  train acc {:.4}  test acc {}  unconverged {}",
            e.epoch,
            e.train_loss,
            e.train_accuracy,
            e.test_accuracy.map_or("-".into(), |a| format!("{a:.4}")),
            e.unconverged_solves
        )
    })?;
    trainer.checkpoint(&ds.class_names).save(&a.ckpt)?;
    eprintln!("saved {}", a.ckpt.display());
    Ok(())
}

pub fn cmd_sample(a: &SampleArgs) -> CmdResult {
    if a.k == 0 {
        return Err(invalid("--k must be at least 1"));
    }
    let in_format = CloudFormat::from_path(&a.input)?;
    let out_format = CloudFormat::from_path(&a.out)?;
    if out_format == CloudFormat::Off {
        return Err(invalid("--out: OFF output is not supported (use .xyz or .ply)"));
    }
    check_parent(&a.out, "--out")?;
    let options = SamplerOptions {
        fps_start_index: a.start_index,
        checkpoint: a.ckpt.clone(),
    };
    let sampler = SamplerRegistry::with_builtin().create(&a.method, &options)?;
    let cloud = read_cloud(&a.input, in_format)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let result = sampler.sample(&cloud, a.k, &mut rng)?;
    write_cloud(&result.sampled, &a.out, out_format)?;
    eprintln!(
        "{}: kept {} of {} points -> {}",
        result.method_tag,
        result.k(),
        cloud.len(),
        a.out.display()
    );
    Ok(())
}
