//! Command-line front end.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 verification failure.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::downstream::{self, Cohort, DownstreamError};
use crate::features::{feature_record, FeatureError, FeatureRecord};
use crate::loss::{self, gradcheck, CountMode, LossConfig, LossError};
use crate::metrics::{self, BootstrapConfig, MetricsError};
use crate::raster_io::{self, Class, LabelMap, Palette, ProbMap, RasterError, NUM_CLASSES};
use crate::synth::{self, ScenarioSpec, SynthError};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const DEFAULT_SEED: u64 = 7;
pub const DEFAULT_LAMBDA: f64 = 0.5;
/// Largest map side accepted by `gradcheck`.
pub const GRADCHECK_MAX_SIZE: usize = 64;
/// Relative gradient error above which `gradcheck` fails.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("pairing error: {0}")]
    Pairing(String),
    #[error("verification failed: {0}")]
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) | CliError::Pairing(_) => 3,
            CliError::Verification(_) => 4,
        }
    }
}

macro_rules! data_error {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Data(e.to_string())
            }
        }
    )*};
}
data_error!(RasterError, MetricsError, FeatureError, csv::Error, std::io::Error);

impl From<LossError> for CliError {
    fn from(e: LossError) -> Self {
        match e {
            LossError::BadConfig(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::BadSpec(_) | SynthError::UnreachableRho { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<DownstreamError> for CliError {
    fn from(e: DownstreamError) -> Self {
        match e {
            DownstreamError::BadSize(_) | DownstreamError::BadEffect(_) | DownstreamError::BadFraction(_) => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "vafo",
    version,
    about = "Vascular features, VAFO-Loss, and evaluation metrics for A/V segmentation maps"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Vessel density, fractal dimension, and tortuosity per image and class.
    Features(FeaturesArgs),
    /// VAFO-Loss of a prediction against a ground-truth label map.
    Loss(LossArgs),
    /// F1, IoU, MSE (x100) per class plus the weighted row, and the Betti error.
    Metrics(MetricsArgs),
    /// ICC(2,1) agreement between predicted and ground-truth feature tables.
    Agree(AgreeArgs),
    /// Draw an intra-segment misclassification scenario and measure feature errors.
    Simulate(SimulateArgs),
    /// Logistic-regression evaluation of a single-feature cohort.
    Downstream(DownstreamArgs),
    /// Compare analytic and finite-difference loss gradients on a random map.
    Gradcheck(GradcheckArgs),
    /// Mean loss over paired directories for a list of λ values.
    Sweep(SweepArgs),
    /// Segmentation scores, Betti error, and features of both maps in one table.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Clone, Args)]
pub struct PaletteArg {
    /// Label colours as "r,g,b;r,g,b;r,g,b;r,g,b" for background, artery, vein, uncertain.
    #[arg(long, value_parser = Palette::parse, default_value = "0,0,0;255,0,0;0,0,255;0,255,0")]
    pub palette: Palette,
}

#[derive(Debug, Clone, Args)]
pub struct SeedArg {
    /// Random seed.
    #[arg(long, env = "VAFO_SEED", default_value_t = DEFAULT_SEED)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    /// Label PNGs, or directories of label PNGs.
    #[arg(long, required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "artery,vein")]
    pub classes: Vec<Class>,
    /// Output CSV (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub palette: PaletteArg,
}

#[derive(Debug, Args)]
pub struct LossOptions {
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    pub lambda: f64,
    /// Classes averaged in the box-count term.
    #[arg(long, value_delimiter = ',', default_value = "artery,vein")]
    pub classes: Vec<Class>,
    /// Fail when a class has no ground-truth pixels instead of skipping it.
    #[arg(long)]
    pub strict_empty: bool,
    /// β of a log-sum-exp tile maximum instead of the hard maximum.
    #[arg(long)]
    pub sharpness: Option<f64>,
    /// Count boxes on the argmax map of the prediction (no gradient through the box term).
    #[arg(long)]
    pub hard_counts: bool,
}

impl LossOptions {
    fn config(&self, lambda: f64) -> Result<LossConfig, CliError> {
        let cfg = LossConfig {
            lambda,
            sharpness: self.sharpness,
            classes: self.classes.clone(),
            strict_empty: self.strict_empty,
            count_mode: if self.hard_counts {
                CountMode::Hardened
            } else {
                CountMode::Soft
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct LossArgs {
    /// Prediction: VAFP probability map, or a label PNG (one-hot encoded).
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth label PNG.
    #[arg(long)]
    pub gt: PathBuf,
    /// Write the gradient with respect to the prediction as VAFP.
    #[arg(long)]
    pub grad: Option<PathBuf>,
    #[command(flatten)]
    pub loss: LossOptions,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub palette: PaletteArg,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Predicted label PNG (or VAFP, hardened by argmax).
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// Average the Betti error over N×N patches instead of the whole map.
    #[arg(long)]
    pub patch: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub palette: PaletteArg,
}

#[derive(Debug, Args)]
pub struct AgreeArgs {
    /// Feature CSV of the predictions.
    #[arg(long)]
    pub pred_features: PathBuf,
    /// Feature CSV of the ground truth.
    #[arg(long)]
    pub gt_features: PathBuf,
    /// vessel_density, fractal_dimension, or mean_tortuosity.
    #[arg(long)]
    pub feature: String,
    #[arg(long)]
    pub class: Class,
    #[command(flatten)]
    pub seed: SeedArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Arc-length ratio arc(A2)/arc(A1).
    #[arg(long, default_value_t = 1.0)]
    pub rho: f64,
    /// Vessel width in pixels.
    #[arg(long, default_value_t = 3.0)]
    pub width: f64,
    #[arg(long, default_value_t = 512)]
    pub canvas: usize,
    /// Chord of each sub-segment in pixels.
    #[arg(long, default_value_t = 160.0)]
    pub chord: f64,
    /// Subtended angle of the shorter sub-segment, in radians.
    #[arg(long, default_value_t = 0.0)]
    pub curvature: f64,
    #[command(flatten)]
    pub seed: SeedArg,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub palette: PaletteArg,
}

#[derive(Debug, Args)]
#[command(args_conflicts_with_subcommands = true)]
pub struct DownstreamArgs {
    #[command(subcommand)]
    pub action: Option<DownstreamAction>,
    /// Cohort CSV with columns subject_id, feature, label.
    #[arg(long)]
    pub cohort: Option<PathBuf>,
    #[arg(long, default_value_t = 0.6)]
    pub train_frac: f64,
    /// Bootstrap resamples for the AUC intervals.
    #[arg(long, default_value_t = 1000)]
    pub bootstrap: usize,
    #[command(flatten)]
    pub seed: SeedArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum DownstreamAction {
    /// Write a balanced two-Gaussian cohort.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 1548)]
    pub n: usize,
    /// Mean shift of the cases.
    #[arg(long, default_value_t = 0.742)]
    pub d: f64,
    #[command(flatten)]
    pub seed: SeedArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Side of the random square map (at most 64).
    #[arg(long, default_value_t = 16)]
    pub size: usize,
    #[arg(long, default_value_t = gradcheck::STEP)]
    pub step: f64,
    #[command(flatten)]
    pub loss: LossOptions,
    #[command(flatten)]
    pub seed: SeedArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Directory of predictions (VAFP or label PNG), paired with ground truth by file stem.
    #[arg(long)]
    pub pred_dir: PathBuf,
    /// Directory of ground-truth label PNGs.
    #[arg(long)]
    pub gt_dir: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.5,1")]
    pub lambdas: Vec<f64>,
    #[command(flatten)]
    pub loss: LossOptions,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub palette: PaletteArg,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "artery,vein")]
    pub classes: Vec<Class>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub palette: PaletteArg,
}

/// Runs a parsed command, writing CSV to `stdout` unless an output path is given.
pub fn run(cli: &Cli, stdout: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::Features(a) => cmd_features(a, stdout),
        Command::Loss(a) => cmd_loss(a, stdout),
        Command::Metrics(a) => cmd_metrics(a, stdout),
        Command::Agree(a) => cmd_agree(a, stdout),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Downstream(a) => cmd_downstream(a, stdout),
        Command::Gradcheck(a) => cmd_gradcheck(a, stdout),
        Command::Sweep(a) => cmd_sweep(a, stdout),
        Command::Pipeline(a) => cmd_pipeline(a, stdout),
    }
}

fn require_file(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("no such file: {}", path.display())))
    }
}

fn require_dir(path: &Path) -> Result<(), CliError> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("no such directory: {}", path.display())))
    }
}

fn require_classes(classes: &[Class]) -> Result<(), CliError> {
    if classes.is_empty() || classes.contains(&Class::Background) {
        return Err(CliError::Usage(
            "classes must be a non-empty set of vessel classes".into(),
        ));
    }
    Ok(())
}

/// CSV writer that starts with the version comment line.
fn csv_sink<'a>(out: Option<&Path>, stdout: &'a mut dyn Write) -> Result<csv::Writer<Box<dyn Write + 'a>>, CliError> {
    let mut sink: Box<dyn Write + 'a> = match out {
        Some(path) => Box::new(BufWriter::new(File::create(path)?)),
        None => Box::new(stdout),
    };
    writeln!(sink, "# vafo-version {VERSION}")?;
    Ok(csv::Writer::from_writer(sink))
}

fn finish(mut w: csv::Writer<Box<dyn Write + '_>>) -> Result<(), CliError> {
    w.flush()?;
    Ok(())
}

fn num(v: f64) -> String {
    v.to_string()
}

fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn has_extension(path: &Path, ext: &str) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case(ext))
}

fn is_vafp(path: &Path) -> bool {
    has_extension(path, "vafp")
}

fn load_labels(path: &Path, palette: &Palette) -> Result<LabelMap, CliError> {
    if is_vafp(path) {
        Ok(raster_io::harden(&raster_io::load_probmap(path)?))
    } else {
        Ok(raster_io::load_label_png_with(path, palette)?)
    }
}

fn load_prediction(path: &Path, palette: &Palette) -> Result<ProbMap, CliError> {
    if is_vafp(path) {
        Ok(raster_io::load_probmap(path)?)
    } else {
        Ok(raster_io::one_hot(&raster_io::load_label_png_with(path, palette)?))
    }
}

/// Files in `dir` with one of `exts`, keyed by stem.
fn files_by_stem(dir: &Path, exts: &[&str]) -> Result<BTreeMap<String, PathBuf>, CliError> {
    let mut files = BTreeMap::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_file() && exts.iter().any(|e| has_extension(&path, e)) {
            if let Some(previous) = files.insert(stem(&path), path.clone()) {
                return Err(CliError::Pairing(format!(
                    "{} and {} share a stem",
                    previous.display(),
                    path.display()
                )));
            }
        }
    }
    Ok(files)
}

/// Records for every requested class; `None` where the class is absent.
fn class_features(map: &LabelMap, classes: &[Class]) -> Result<Vec<(Class, Option<FeatureRecord>)>, CliError> {
    classes
        .iter()
        .map(|&class| {
            if map.count(class) == 0 {
                return Ok((class, None));
            }
            Ok((class, Some(feature_record(map, class)?)))
        })
        .collect()
}

fn cmd_features(a: &FeaturesArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    require_classes(&a.classes)?;
    let mut images = BTreeMap::new();
    for input in &a.input {
        if input.is_dir() {
            images.extend(files_by_stem(input, &["png"])?);
        } else {
            require_file(input)?;
            images.insert(stem(input), input.clone());
        }
    }
    let mut w = csv_sink(a.out.as_deref(), stdout)?;
    w.write_record([
        "image_id",
        "class",
        "vessel_density",
        "fractal_dimension",
        "mean_tortuosity",
        "n_branches",
    ])?;
    for (id, path) in &images {
        let map = raster_io::load_label_png_with(path, &a.palette.palette)?;
        for (class, record) in class_features(&map, &a.classes)? {
            let row = match record {
                Some(r) => [
                    id.clone(),
                    class.to_string(),
                    num(r.vessel_density),
                    num(r.fractal_dimension),
                    opt_num(r.mean_tortuosity),
                    r.n_branches.to_string(),
                ],
                None => [
                    id.clone(),
                    class.to_string(),
                    num(0.0),
                    String::new(),
                    String::new(),
                    "0".into(),
                ],
            };
            w.write_record(&row)?;
        }
    }
    finish(w)
}

fn cmd_loss(a: &LossArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    require_file(&a.pred)?;
    require_file(&a.gt)?;
    let cfg = a.loss.config(a.loss.lambda)?;
    let pred = load_prediction(&a.pred, &a.palette.palette)?;
    let gt = raster_io::load_label_png_with(&a.gt, &a.palette.palette)?;
    let value = if a.grad.is_some() {
        loss::vafo_loss(&pred, &gt, &cfg)?
    } else {
        loss::vafo_loss_value(&pred, &gt, &cfg)?
    };
    if let (Some(path), Some(grad)) = (&a.grad, &value.gradient) {
        raster_io::save_planes(pred.height(), pred.width(), NUM_CLASSES, grad, path)?;
    }
    let mut w = csv_sink(a.out.as_deref(), stdout)?;
    w.write_record(["total", "loss_v_ce", "loss_b"])?;
    w.write_record([num(value.total), num(value.loss_v), num(value.loss_b)])?;
    finish(w)
}

fn cmd_metrics(a: &MetricsArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    require_file(&a.pred)?;
    require_file(&a.gt)?;
    if a.patch == Some(0) {
        return Err(CliError::Usage("patch size must be positive".into()));
    }
    let pred = load_labels(&a.pred, &a.palette.palette)?;
    let gt = load_labels(&a.gt, &a.palette.palette)?;
    let scores = metrics::seg_scores(&pred, &gt)?;
    let betti = match a.patch {
        Some(p) => metrics::betti_error_patched(&pred, &gt, p)?,
        None => metrics::betti_error(&pred, &gt)?,
    };
    let mut w = csv_sink(a.out.as_deref(), stdout)?;
    w.write_record(["class", "f1", "iou", "mse_x100", "betti_error"])?;
    for c in &scores.per_class {
        w.write_record([
            c.class.to_string(),
            num(c.f1),
            num(c.iou),
            num(100.0 * c.mse),
            String::new(),
        ])?;
    }
    match scores.weighted {
        Some(agg) => w.write_record([
            "weighted".to_string(),
            num(agg.f1),
            num(agg.iou),
            num(100.0 * agg.mse),
            num(betti),
        ])?,
        None => w.write_record([
            "weighted".to_string(),
            String::new(),
            String::new(),
            String::new(),
            num(betti),
        ])?,
    }
    finish(w)
}

const FEATURE_COLUMNS: [&str; 3] = ["vessel_density", "fractal_dimension", "mean_tortuosity"];

/// image_id → value of `feature` for `class`, rows with an empty value skipped.
fn read_feature_column(path: &Path, feature: &str, class: Class) -> Result<BTreeMap<String, f64>, CliError> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let headers = reader.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Data(format!("{} has no '{name}' column", path.display())))
    };
    let (id_col, class_col, value_col) = (column("image_id")?, column("class")?, column(feature)?);
    let mut values = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let row_class: Class = record[class_col].parse().map_err(CliError::Data)?;
        if row_class != class || record[value_col].is_empty() {
            continue;
        }
        let v: f64 = record[value_col]
            .parse()
            .map_err(|_| CliError::Data(format!("bad {feature} value '{}'", &record[value_col])))?;
        values.insert(record[id_col].to_string(), v);
    }
    Ok(values)
}

fn cmd_agree(a: &AgreeArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    require_file(&a.pred_features)?;
    require_file(&a.gt_features)?;
    if !FEATURE_COLUMNS.contains(&a.feature.as_str()) {
        return Err(CliError::Usage(format!(
            "feature must be one of {}, got '{}'",
            FEATURE_COLUMNS.join(", "),
            a.feature
        )));
    }
    let pred = read_feature_column(&a.pred_features, &a.feature, a.class)?;
    let gt = read_feature_column(&a.gt_features, &a.feature, a.class)?;
    let pairs: Vec<(f64, f64)> = pred.iter().filter_map(|(id, &p)| gt.get(id).map(|&g| (p, g))).collect();
    if pairs.is_empty() {
        return Err(CliError::Pairing("no image_id has a value in both tables".into()));
    }
    let r = metrics::icc(&pairs, a.seed.seed)?;
    let mut w = csv_sink(a.out.as_deref(), stdout)?;
    w.write_record(["feature", "class", "subjects", "icc", "ci_low", "ci_high"])?;
    w.write_record([
        a.feature.clone(),
        a.class.to_string(),
        r.subjects.to_string(),
        num(r.icc),
        num(r.ci_low),
        num(r.ci_high),
    ])?;
    finish(w)
}

fn cmd_simulate(a: &SimulateArgs) -> Result<(), CliError> {
    let spec = ScenarioSpec {
        rho: a.rho,
        width: a.width,
        chord: a.chord,
        curvature: a.curvature,
        canvas: a.canvas,
        seed: a.seed.seed,
    };
    spec.validate()?;
    let pair = synth::generate_scenario(&spec)?;
    let measured = synth::empirical_errors(&pair)?;
    let predicted = synth::predicted_errors(a.rho);
    std::fs::create_dir_all(&a.out_dir)?;
    raster_io::save_label_png_with(&pair.truth, a.out_dir.join("truth.png"), &a.palette.palette)?;
    raster_io::save_label_png_with(&pair.corrupted, a.out_dir.join("corrupted.png"), &a.palette.palette)?;

    let mut sink = Vec::new();
    let mut w = csv_sink(None, &mut sink)?;
    w.write_record(["quantity", "predicted", "empirical", "abs_diff"])?;
    let rows = [
        ("tortuosity", predicted.tortuosity, measured.errors.tortuosity),
        ("density", predicted.density, measured.errors.density),
        ("box_count", predicted.box_count, measured.errors.box_count),
    ];
    for (name, p, e) in rows {
        w.write_record([name.to_string(), num(p), num(e), num((p - e).abs())])?;
    }
    for &(eps, e) in &measured.box_count_by_scale {
        let p = predicted.box_count;
        w.write_record([format!("box_count_eps{eps}"), num(p), num(e), num((p - e).abs())])?;
    }
    finish(w)?;
    std::fs::write(a.out_dir.join("errors.csv"), sink)?;
    Ok(())
}

fn cmd_downstream(a: &DownstreamArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    if let Some(DownstreamAction::Synth(s)) = &a.action {
        let cohort = downstream::synth_cohort(s.n, s.d, s.seed.seed)?;
        let mut file = BufWriter::new(File::create(&s.out)?);
        writeln!(file, "# vafo-version {VERSION}")?;
        cohort.write_csv(&mut file)?;
        file.flush()?;
        return Ok(());
    }
    let path = a
        .cohort
        .as_deref()
        .ok_or_else(|| CliError::Usage("--cohort is required unless the synth subcommand is used".into()))?;
    require_file(path)?;
    if a.bootstrap == 0 {
        return Err(CliError::Usage("bootstrap resamples must be positive".into()));
    }
    let cohort = Cohort::read_csv(path)?;
    let bootstrap = BootstrapConfig {
        resamples: a.bootstrap,
        seed: a.seed.seed,
        ..BootstrapConfig::default()
    };
    let r = downstream::evaluate_split(&cohort, a.train_frac, &bootstrap, a.seed.seed)?;
    let mut w = csv_sink(a.out.as_deref(), stdout)?;
    w.write_record([
        "n_train",
        "n_test",
        "weight",
        "intercept",
        "converged",
        "separable",
        "auc_roc",
        "auc_roc_ci_low",
        "auc_roc_ci_high",
        "auc_pr",
        "auc_pr_ci_low",
        "auc_pr_ci_high",
    ])?;
    w.write_record([
        r.n_train.to_string(),
        r.n_test.to_string(),
        num(r.model.weight),
        num(r.model.intercept),
        r.model.converged.to_string(),
        r.model.separable.to_string(),
        num(r.auc.roc),
        num(r.roc_ci.0),
        num(r.roc_ci.1),
        num(r.auc.pr),
        num(r.pr_ci.0),
        num(r.pr_ci.1),
    ])?;
    finish(w)
}

fn cmd_gradcheck(a: &GradcheckArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    if !(2..=GRADCHECK_MAX_SIZE).contains(&a.size) {
        return Err(CliError::Usage(format!(
            "size must be between 2 and {GRADCHECK_MAX_SIZE}, got {}",
            a.size
        )));
    }
    if !(a.step.is_finite() && a.step > 0.0) {
        return Err(CliError::Usage(format!("step must be positive, got {}", a.step)));
    }
    let cfg = a.loss.config(a.loss.lambda)?;
    let (s, t) = gradcheck::random_pair(a.size, a.size, a.seed.seed);
    let report = gradcheck::check(&s, &t, &cfg, a.step)?;
    let mut w = csv_sink(a.out.as_deref(), stdout)?;
    w.write_record([
        "seed",
        "size",
        "checked",
        "excluded",
        "ce_rel_err",
        "loss_b_rel_err",
        "total_rel_err",
    ])?;
    w.write_record([
        a.seed.seed.to_string(),
        a.size.to_string(),
        report.checked.to_string(),
        report.excluded.to_string(),
        num(report.ce),
        num(report.loss_b),
        num(report.total),
    ])?;
    finish(w)?;
    if report.max() > GRADCHECK_TOLERANCE {
        return Err(CliError::Verification(format!(
            "max relative gradient error {} exceeds {GRADCHECK_TOLERANCE}",
            report.max()
        )));
    }
    Ok(())
}

fn cmd_sweep(a: &SweepArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    require_dir(&a.pred_dir)?;
    require_dir(&a.gt_dir)?;
    if a.lambdas.is_empty() {
        return Err(CliError::Usage("at least one lambda is required".into()));
    }
    let configs = a
        .lambdas
        .iter()
        .map(|&l| a.loss.config(l))
        .collect::<Result<Vec<_>, _>>()?;
    let preds = files_by_stem(&a.pred_dir, &["vafp", "png"])?;
    let gts = files_by_stem(&a.gt_dir, &["png"])?;
    if preds.is_empty() && gts.is_empty() {
        return Err(CliError::Pairing("no prediction or ground-truth files found".into()));
    }
    let unmatched: Vec<&String> = preds
        .keys()
        .filter(|k| !gts.contains_key(*k))
        .chain(gts.keys().filter(|k| !preds.contains_key(*k)))
        .collect();
    if !unmatched.is_empty() {
        let names: Vec<&str> = unmatched.iter().map(|s| s.as_str()).collect();
        return Err(CliError::Pairing(format!("unmatched stems: {}", names.join(", "))));
    }

    let mut sums = vec![(0.0, 0.0, 0.0); configs.len()];
    for (stem, pred_path) in &preds {
        let pred = load_prediction(pred_path, &a.palette.palette)?;
        let gt = raster_io::load_label_png_with(&gts[stem], &a.palette.palette)?;
        for (sum, cfg) in sums.iter_mut().zip(&configs) {
            let v = loss::vafo_loss_value(&pred, &gt, cfg)?;
            sum.0 += v.total;
            sum.1 += v.loss_v;
            sum.2 += v.loss_b;
        }
    }
    let n = preds.len() as f64;
    let mut w = csv_sink(a.out.as_deref(), stdout)?;
    w.write_record([
        "lambda",
        "pairs",
        "mean_total",
        "mean_loss_v_ce",
        "mean_loss_b",
        "loss_b_share",
    ])?;
    for (&(total, ce, lb), &lambda) in sums.iter().zip(&a.lambdas) {
        let (total, ce, lb) = (total / n, ce / n, lb / n);
        let share = if total > 0.0 { lambda * lb / total } else { 0.0 };
        w.write_record([
            num(lambda),
            preds.len().to_string(),
            num(total),
            num(ce),
            num(lb),
            num(share),
        ])?;
    }
    finish(w)
}

fn cmd_pipeline(a: &PipelineArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    require_file(&a.pred)?;
    require_file(&a.gt)?;
    require_classes(&a.classes)?;
    let pred = load_labels(&a.pred, &a.palette.palette)?;
    let gt = load_labels(&a.gt, &a.palette.palette)?;
    let scores = metrics::seg_scores(&pred, &gt)?;
    let betti = metrics::betti_error(&pred, &gt)?;

    let mut w = csv_sink(a.out.as_deref(), stdout)?;
    w.write_record(["scope", "class", "metric", "value"])?;
    let mut row =
        |scope: &str, class: &str, metric: &str, value: String| w.write_record([scope, class, metric, value.as_str()]);
    for c in &scores.per_class {
        let class = c.class.to_string();
        row("segmentation", &class, "f1", num(c.f1))?;
        row("segmentation", &class, "iou", num(c.iou))?;
        row("segmentation", &class, "mse_x100", num(100.0 * c.mse))?;
    }
    if let Some(agg) = scores.weighted {
        row("segmentation", "weighted", "f1", num(agg.f1))?;
        row("segmentation", "weighted", "iou", num(agg.iou))?;
        row("segmentation", "weighted", "mse_x100", num(100.0 * agg.mse))?;
    }
    row("topology", "artery_vein", "betti_error", num(betti))?;
    for (scope, map) in [("features_pred", &pred), ("features_gt", &gt)] {
        for (class, record) in class_features(map, &a.classes)? {
            let class = class.to_string();
            match record {
                Some(r) => {
                    row(scope, &class, "vessel_density", num(r.vessel_density))?;
                    row(scope, &class, "fractal_dimension", num(r.fractal_dimension))?;
                    row(scope, &class, "mean_tortuosity", opt_num(r.mean_tortuosity))?;
                    row(scope, &class, "n_branches", r.n_branches.to_string())?;
                }
                None => {
                    row(scope, &class, "vessel_density", num(0.0))?;
                    row(scope, &class, "n_branches", "0".into())?;
                }
            }
        }
    }
    finish(w)
}
