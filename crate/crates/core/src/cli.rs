//! The `pointdream` command line.
//!
//! Exit codes: 0 on success, 2 for usage, validation and I/O problems, 3 when
//! training or dreaming produces non-finite numbers. Every output file is
//! written to a temporary sibling and renamed into place.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::classifier::{
    evaluate, load_checkpoint, save_checkpoint, train_with, Checkpoint, ClassifierError,
    ModelConfig, TrainConfig,
};
use crate::dreamer::{add_run, deepdream_naive, DreamConfig, DreamError, UnionMode};
use crate::geometry::{normalize_unit_sphere, PointCloud};
use crate::io::{parse_off, parse_ply, parse_xyz, sample_surface, write_ply, write_xyz};
use crate::metrics::{compare_runs, Comparison, DEFAULT_EPS};
use crate::synthgen::{build_dataset, DatasetSpec, Sample, ShapeKind};

pub const MANIFEST_FORMAT: &str = "pointdream-dataset";
pub const MANIFEST_VERSION: u32 = 1;
pub const DEFAULT_OFF_POINTS: usize = 1024;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, unreadable or unwritable files, malformed inputs.
    Usage(String),
    /// NaN or infinity during training or dreaming.
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Numeric(m) => m,
        }
    }
}

fn usage(m: impl std::fmt::Display) -> CliError {
    CliError::Usage(m.to_string())
}

impl From<ClassifierError> for CliError {
    fn from(e: ClassifierError) -> Self {
        match e {
            ClassifierError::NonFiniteLoss { .. } => CliError::Numeric(e.to_string()),
            other => usage(other),
        }
    }
}

impl From<DreamError> for CliError {
    fn from(e: DreamError) -> Self {
        match e {
            DreamError::NonFinite { .. } => CliError::Numeric(e.to_string()),
            other => usage(other),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "pointdream",
    version,
    about = "Amalgamated DeepDream for point clouds"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic primitive dataset as XYZ files plus manifest.json.
    GenData(GenDataArgs),
    /// Train the classifier on a generated dataset.
    Train(TrainArgs),
    /// Report accuracy and the confusion matrix on one split.
    Evaluate(EvaluateArgs),
    /// Naive DeepDream: plain gradient ascent on a class logit.
    Dream(DreamArgs),
    /// Amalgamated DeepDream.
    Add(DreamArgs),
    /// Compare a naive and an ADD output against their input.
    Metrics(MetricsArgs),
    /// Convert between OFF, XYZ and PLY; meshes are surface-sampled.
    Convert(ConvertArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub per_class: usize,
    #[arg(long, default_value_t = 1024)]
    pub points: usize,
    #[arg(long, default_value_t = 0.01)]
    pub jitter: f64,
    #[arg(long, default_value_t = 0.8)]
    pub train_frac: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum, default_value_t = Split::Test)]
    pub split: Split,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum UnionArg {
    Original,
    Previous,
}

#[derive(Debug, Args)]
pub struct DreamArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// XYZ, PLY or OFF; OFF meshes are surface-sampled to --points.
    #[arg(long)]
    pub input: PathBuf,
    /// Class name as stored in the checkpoint.
    #[arg(long)]
    pub target: String,
    #[arg(long, default_value_t = 0.05)]
    pub gamma: f64,
    #[arg(long, default_value_t = 50)]
    pub iters: usize,
    /// Downsample every K iterations (0 = never) [default: 5].
    #[arg(long)]
    pub period: Option<usize>,
    /// Downsampling target [default: 4 x input count].
    #[arg(long)]
    pub max_points: Option<usize>,
    /// Amalgamation partner [default: original].
    #[arg(long, value_enum)]
    pub union: Option<UnionArg>,
    #[arg(long, default_value_t = 0)]
    pub snapshot_every: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Surface samples for OFF inputs [default: 1024].
    #[arg(long)]
    pub points: Option<usize>,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub naive: PathBuf,
    #[arg(long)]
    pub add: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub target: String,
    #[arg(long, default_value_t = DEFAULT_EPS)]
    pub eps: f64,
    /// Report path; printed to standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory.
    pub path: String,
    pub label: usize,
    pub class: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub spec: DatasetSpec,
    pub labels: Vec<String>,
    pub files: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn read(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join("manifest.json");
        let bytes =
            fs::read(&path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
        let m: Manifest = serde_json::from_slice(&bytes)
            .map_err(|e| usage(format!("malformed manifest {}: {e}", path.display())))?;
        if m.format != MANIFEST_FORMAT || m.version != MANIFEST_VERSION {
            return Err(usage(format!(
                "{}: expected {MANIFEST_FORMAT} version {MANIFEST_VERSION}",
                path.display()
            )));
        }
        if let Some(e) = m.files.iter().find(|e| e.label >= m.labels.len()) {
            return Err(usage(format!("{}: label {} out of range", e.path, e.label)));
        }
        Ok(m)
    }

    pub fn load_split(&self, dir: &Path, split: Split) -> Result<Vec<Sample<f32>>, CliError> {
        self.files
            .iter()
            .filter(|e| e.split == split)
            .enumerate()
            .map(|(index, e)| {
                let cloud = read_cloud(&dir.join(&e.path))?;
                Ok(Sample {
                    cloud,
                    label: e.label,
                    index,
                })
            })
            .collect()
    }
}

/// Writes `bytes` to a temporary file next to `path`, then renames it over
/// `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let fail = |e: std::io::Error| usage(format!("cannot write {}: {e}", path.display()));
    let name = path
        .file_name()
        .ok_or_else(|| usage(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".{}.tmp", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let result = fs::File::create(&tmp)
        .and_then(|mut f| f.write_all(bytes).and_then(|_| f.sync_all()))
        .and_then(|_| fs::rename(&tmp, path));
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(fail(e));
    }
    Ok(())
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase()
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))
}

/// Reads an XYZ or PLY point cloud.
pub fn read_cloud(path: &Path) -> Result<PointCloud<f32>, CliError> {
    let text = read_text(path)?;
    let parsed = match extension(path).as_str() {
        "xyz" => parse_xyz(&text),
        "ply" => parse_ply(&text),
        other => {
            return Err(usage(format!(
                "{}: unsupported point cloud extension {other:?}",
                path.display()
            )))
        }
    };
    parsed.map_err(|e| usage(format!("{}: {e}", path.display())))
}

/// Reads a cloud, surface-sampling OFF meshes.
fn read_input(
    path: &Path,
    points: Option<usize>,
    seed: u64,
    err: &mut dyn Write,
) -> Result<PointCloud<f32>, CliError> {
    if extension(path) != "off" {
        return read_cloud(path);
    }
    let n = points.unwrap_or_else(|| {
        let _ = writeln!(
            err,
            "note: --points not given, sampling {DEFAULT_OFF_POINTS} points from the mesh"
        );
        DEFAULT_OFF_POINTS
    });
    let mesh = parse_off::<f32>(&read_text(path)?)
        .map_err(|e| usage(format!("{}: {e}", path.display())))?;
    sample_surface(&mesh, n, seed).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn write_cloud(path: &Path, pc: &PointCloud<f32>) -> Result<(), CliError> {
    let text = match extension(path).as_str() {
        "xyz" => write_xyz(pc),
        "ply" => write_ply(pc),
        other => {
            return Err(usage(format!(
                "{}: unsupported output extension {other:?}",
                path.display()
            )))
        }
    };
    write_atomic(path, text.as_bytes())
}

fn read_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    let bytes =
        fs::read(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    load_checkpoint(&bytes).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn resolve_target(ck: &Checkpoint, name: &str) -> Result<usize, CliError> {
    ck.class_index(name).ok_or_else(|| {
        usage(format!(
            "unknown target {name:?}; valid targets: {}",
            ck.labels.join(", ")
        ))
    })
}

/// Path of the snapshot taken at `iter` for output `out`.
pub fn snapshot_path(out: &Path, iter: usize) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    out.with_file_name(format!("{stem}_iter{iter:04}.ply"))
}

fn gen_data(a: &GenDataArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let spec = DatasetSpec {
        per_class: a.per_class,
        points: a.points,
        jitter: a.jitter,
        train_frac: a.train_frac,
        seed: a.seed,
    };
    spec.validate().map_err(usage)?;
    let data = build_dataset::<f32>(&spec).map_err(usage)?;
    let mut files = Vec::with_capacity(data.train.len() + data.test.len());
    for (split, samples) in [(Split::Train, &data.train), (Split::Test, &data.test)] {
        let dir = a.out.join(split.name());
        fs::create_dir_all(&dir)
            .map_err(|e| usage(format!("cannot create {}: {e}", dir.display())))?;
        for s in samples {
            let class = ShapeKind::from_label(s.label)
                .expect("generated label")
                .name();
            let rel = format!("{}/{class}_{:04}.xyz", split.name(), s.index);
            write_atomic(&a.out.join(&rel), write_xyz(&s.cloud).as_bytes())?;
            files.push(ManifestEntry {
                path: rel,
                label: s.label,
                class: class.into(),
                split,
            });
        }
    }
    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        version: MANIFEST_VERSION,
        spec,
        labels: ShapeKind::label_names(),
        files,
    };
    let mut json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    json.push(b'\n');
    write_atomic(&a.out.join("manifest.json"), &json)?;
    let _ = writeln!(
        out,
        "wrote {} train and {} test clouds to {}",
        data.train.len(),
        data.test.len(),
        a.out.display()
    );
    Ok(())
}

fn train_cmd(a: &TrainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let train_cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch,
        learning_rate: a.lr,
        seed: a.seed,
        ..TrainConfig::default()
    };
    train_cfg.validate()?;
    let manifest = Manifest::read(&a.data)?;
    let samples = manifest.load_split(&a.data, Split::Train)?;
    let model_cfg = ModelConfig {
        seed: a.seed,
        ..ModelConfig::with_classes(manifest.labels.len())
    };
    let _ = writeln!(out, "epoch,loss,train_acc");
    let (model, _) = train_with(&samples, &model_cfg, &train_cfg, |s| {
        let _ = writeln!(out, "{},{:.6},{:.6}", s.epoch + 1, s.loss, s.train_acc);
    })?;
    let bytes = save_checkpoint(&model, &manifest.labels).map_err(usage)?;
    write_atomic(&a.out, &bytes)
}

fn evaluate_cmd(a: &EvaluateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let ck = read_checkpoint(&a.model)?;
    let manifest = Manifest::read(&a.data)?;
    if manifest.labels.len() != ck.labels.len() {
        return Err(usage(
            "dataset and checkpoint disagree on the number of classes",
        ));
    }
    let samples = manifest.load_split(&a.data, a.split)?;
    let eval = evaluate(&ck.model, &samples)?;
    let _ = writeln!(
        out,
        "{}",
        serde_json::to_string_pretty(&eval).expect("serializable")
    );
    Ok(())
}

fn dream_cmd(
    a: &DreamArgs,
    amalgamate: bool,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<(), CliError> {
    let ck = read_checkpoint(&a.model)?;
    let target = resolve_target(&ck, &a.target)?;
    let raw = read_input(&a.input, a.points, a.seed, err)?;
    let x =
        normalize_unit_sphere(&raw).map_err(|e| usage(format!("{}: {e}", a.input.display())))?;
    let defaults = DreamConfig::new(target);
    let cfg = DreamConfig {
        gamma: a.gamma,
        iters: a.iters,
        period: a.period.unwrap_or(defaults.period),
        max_points: a.max_points,
        union: match a.union {
            Some(UnionArg::Previous) => UnionMode::WithPrevious,
            _ => UnionMode::WithOriginal,
        },
        seed: a.seed,
        snapshot_every: a.snapshot_every,
        ..defaults
    };
    let (result, trace) = if amalgamate {
        add_run(&ck.model, &x, &cfg)?
    } else {
        let given = [
            ("--period", a.period.is_some()),
            ("--max-points", a.max_points.is_some()),
            ("--union", a.union.is_some()),
        ];
        for (flag, _) in given.iter().filter(|g| g.1) {
            let _ = writeln!(err, "note: {flag} has no effect on naive dreaming");
        }
        deepdream_naive(&ck.model, &x, &cfg)?
    };
    write_cloud(&a.out, &result)?;
    if let Some(path) = &a.trace {
        write_atomic(path, trace.to_csv().as_bytes())?;
    }
    for s in &trace.snapshots {
        write_atomic(
            &snapshot_path(&a.out, s.iter),
            write_ply(&s.cloud).as_bytes(),
        )?;
    }
    let _ = writeln!(
        out,
        "{}: {} points, {} logit {} -> {}, probability {} -> {}",
        if amalgamate { "add" } else { "dream" },
        result.count(),
        ck.labels[target],
        trace.initial_logit,
        trace.final_logit(),
        trace.initial_prob,
        trace.final_prob()
    );
    Ok(())
}

fn metrics_cmd(a: &MetricsArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let ck = read_checkpoint(&a.model)?;
    let target = resolve_target(&ck, &a.target)?;
    if !(a.eps.is_finite() && a.eps > 0.0) {
        return Err(usage(format!("--eps must be positive, got {}", a.eps)));
    }
    let raw = read_input(&a.input, a.points, a.seed, err)?;
    let input =
        normalize_unit_sphere(&raw).map_err(|e| usage(format!("{}: {e}", a.input.display())))?;
    let naive = read_cloud(&a.naive)?;
    let add = read_cloud(&a.add)?;
    let (rn, ra, verdict) =
        compare_runs(&input, &naive, &add, &ck.model, target, a.eps).map_err(usage)?;
    let report = Comparison {
        target: ck.labels[target].clone(),
        eps: a.eps,
        naive: rn,
        add: ra,
        verdict,
    };
    let mut json = serde_json::to_vec_pretty(&report).expect("serializable");
    json.push(b'\n');
    match &a.out {
        Some(path) => {
            write_atomic(path, &json)?;
            let _ = writeln!(out, "verdict: {}", verdict.as_str());
        }
        None => {
            let _ = out.write_all(&json);
        }
    }
    Ok(())
}

fn convert_cmd(a: &ConvertArgs, err: &mut dyn Write) -> Result<(), CliError> {
    let ext = extension(&a.out);
    if ext != "xyz" && ext != "ply" {
        return Err(usage(format!(
            "{}: output must be .xyz or .ply",
            a.out.display()
        )));
    }
    if !matches!(extension(&a.input).as_str(), "off" | "xyz" | "ply") {
        return Err(usage(format!(
            "{}: input must be .off, .xyz or .ply",
            a.input.display()
        )));
    }
    let pc = read_input(&a.input, a.points, a.seed, err)?;
    write_cloud(&a.out, &pc)
}

pub fn execute(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::GenData(a) => gen_data(a, out),
        Command::Train(a) => train_cmd(a, out),
        Command::Evaluate(a) => evaluate_cmd(a, out),
        Command::Dream(a) => dream_cmd(a, false, out, err),
        Command::Add(a) => dream_cmd(a, true, out, err),
        Command::Metrics(a) => metrics_cmd(a, out, err),
        Command::Convert(a) => convert_cmd(a, err),
    }
}

/// Parses `args` (program name first), runs the command and returns the exit
/// code.
pub fn run<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = err.write_all(text.as_bytes());
                return 2;
            }
            let _ = out.write_all(text.as_bytes());
            return 0;
        }
    };
    match execute(&cli, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message());
            e.exit_code()
        }
    }
}
