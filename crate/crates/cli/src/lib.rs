//! `thermoface` subcommands.
//!
//! Each subcommand is a plain function taking its parsed arguments and a
//! [`Context`] (config file + seed), so the binary and the tests drive the
//! same code. Options come from three places, highest priority first:
//! command-line flags, the `--config` file, built-in defaults.
//!
//! Config file layout (every key optional):
//!
//! ```text
//! seed=7
//! [detector]
//! kind=blob                  # replay | blob | external:<command>
//! intensity_threshold=200
//! min_blob_area=64
//! max_aspect_ratio=2.5
//! confidence_threshold=0.25
//! nms_iou_threshold=0.45
//! response_timeout_ms=2000
//! [pipeline]
//! min_bbox_area=100
//! decimals=1
//! fever_threshold_c=38.0
//! overlay=true
//! [calibrate]
//! folds=5
//! ceiling_c=38.0
//! ```

use std::collections::{BTreeMap, HashMap};
use std::error::Error as StdError;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use clap::{ArgAction, Args, Parser, Subcommand};
use thiserror::Error;

use thermoface::annotations::{denormalize, serialize_yolo, NormBBox, PixelBBox};
use thermoface::detectors::{build_detector, DetectorConfig, DetectorKind};
use thermoface::deteval::{coco_thresholds, map_over_thresholds};
use thermoface::frameio::{
    bgr_to_grayscale, horizontal_flip, list_frames, load_frame, pair_frames_with_labels, resize,
    DatasetItem, FrameError, ThermalFrame,
};
use thermoface::keyval::{Document, Section};
use thermoface::pipeline::{extract_max_pixel, run_stream, PipelineConfig, StreamOutputs, StreamSummary};
use thermoface::synthscene::{generate, generate_calibration_set, CalibrationDistribution, SequenceSpec};
use thermoface::thermoreg::{
    grid_search, read_calibration_csv, screen_candidates, select_model, write_calibration_csv, CrossValReport,
    GuardOutcome, ModelGrid, RegressionError, SelectedModel, DEFAULT_CEILING_C,
};
use thermoface::EvalReport;

pub const HFLIP_SUFFIX: &str = "_hf";
pub const TRUTH_HEADER: &str = "frame,face,x1,y1,x2,y2,temperature_c,peak_pixel";

type BoxError = Box<dyn StdError + Send + Sync>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{context}: {source}")]
    Data {
        context: String,
        #[source]
        source: BoxError,
    },
    #[error("{context}: {source}")]
    Runtime {
        context: String,
        #[source]
        source: BoxError,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data { .. } => 3,
            CliError::Runtime { .. } => 4,
        }
    }
}

fn data<E: Into<BoxError>>(context: impl Into<String>) -> impl FnOnce(E) -> CliError {
    let context = context.into();
    move |e| CliError::Data {
        context,
        source: e.into(),
    }
}

fn runtime<E: Into<BoxError>>(context: impl Into<String>) -> impl FnOnce(E) -> CliError {
    let context = context.into();
    move |e| CliError::Runtime {
        context,
        source: e.into(),
    }
}

#[derive(Debug, Parser)]
#[command(name = "thermoface", version, about = "Thermal face detection and temperature estimation")]
pub struct Cli {
    /// Config file with `[section]` key=value options.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every stochastic step.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// More log output (-v, -vv).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Derive a dataset: resize, mirror-augment, combine.
    Prepare(PrepareArgs),
    /// Fit, cross-validate, guard and persist a pixel→temperature model.
    Calibrate(CalibrateArgs),
    /// Score a detector against a labelled dataset.
    EvalDetector(EvalArgs),
    /// Run the monitoring loop over a frame sequence.
    Run(RunArgs),
    /// Render a synthetic dataset from a scene spec.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Args)]
pub struct PrepareArgs {
    /// Source dataset (`images/` + `labels/`).
    pub src: PathBuf,
    /// Output dataset directory; must not exist or be empty.
    pub out: PathBuf,
    /// Resize every frame, e.g. `640x640`.
    #[arg(long, value_parser = parse_dims)]
    pub resize: Option<(u32, u32)>,
    /// Add a mirrored copy of every item with a `_hf` stem suffix.
    #[arg(long)]
    pub augment_hflip: bool,
    /// Further datasets to merge in.
    #[arg(long, num_args = 1..)]
    pub combine: Vec<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct CalibrateArgs {
    /// CSV with header `max_pixel,temperature_c`.
    pub samples: PathBuf,
    /// Grid file (`[grid]` section); replaces the default grids.
    #[arg(long)]
    pub grids: Option<PathBuf>,
    #[arg(long)]
    pub folds: Option<usize>,
    /// Healthy-population dataset, or a file of max-pixel values, to screen
    /// candidates against the ceiling.
    #[arg(long)]
    pub guard_set: Option<PathBuf>,
    /// Plausibility ceiling in °C.
    #[arg(long)]
    pub ceiling: Option<f64>,
    /// Model document to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the ranking report here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct DetectorArgs {
    /// `replay`, `blob`, or `external:<command line>`.
    #[arg(long)]
    pub detector: Option<String>,
    #[arg(long)]
    pub blob_threshold: Option<u8>,
    #[arg(long)]
    pub min_blob_area: Option<u64>,
    #[arg(long)]
    pub max_aspect: Option<f64>,
    #[arg(long)]
    pub conf_threshold: Option<f64>,
    #[arg(long)]
    pub nms_iou: Option<f64>,
    #[arg(long)]
    pub timeout_ms: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Labelled dataset (`images/` + `labels/`).
    pub dataset: PathBuf,
    #[command(flatten)]
    pub detector: DetectorArgs,
    /// Directory for `eval.csv` and `eval.txt`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Dataset name in the CSV row; defaults to the directory name.
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct PipelineArgs {
    #[arg(long)]
    pub min_bbox_area: Option<u64>,
    #[arg(long)]
    pub decimals: Option<usize>,
    #[arg(long)]
    pub fever_threshold: Option<f64>,
    #[arg(long)]
    pub no_overlay: bool,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Directory of PGM/PPM frames, or `-` to read frame paths from stdin.
    pub frames: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub detector: DetectorArgs,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    /// Label directory for the replay detector.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Directory for annotated `out_NNNNNN.ppm` frames.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Reading log CSV.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Scene spec file.
    pub spec: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn parse_dims(s: &str) -> Result<(u32, u32), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WxH, got `{s}`"))?;
    let w: u32 = w.trim().parse().map_err(|_| format!("bad width in `{s}`"))?;
    let h: u32 = h.trim().parse().map_err(|_| format!("bad height in `{s}`"))?;
    if w == 0 || h == 0 {
        return Err(format!("dimensions must be positive, got `{s}`"));
    }
    Ok((w, h))
}

/// Config file and global flags shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct Context {
    pub config: Document,
    pub seed: u64,
}

impl Context {
    pub fn from_cli(cli: &Cli) -> Result<Self, CliError> {
        let config = match &cli.config {
            Some(p) => Document::load(p).map_err(data(format!("config {}", p.display())))?,
            None => Document::default(),
        };
        let file_seed = setting::<u64>(&config, "", "seed")?;
        Ok(Self {
            seed: cli.seed.or(file_seed).unwrap_or(0),
            config,
        })
    }

    fn get<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<T>, CliError> {
        setting(&self.config, section, key)
    }
}

fn setting<T: FromStr>(doc: &Document, section: &str, key: &str) -> Result<Option<T>, CliError> {
    match doc.section(section) {
        Some(s) => s
            .parse(key)
            .map_err(|e| CliError::Usage(format!("config [{section}] {key}: {e}"))),
        None => Ok(None),
    }
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

pub fn parse_detector_spec(s: &str) -> Result<(DetectorKind, Option<String>), CliError> {
    match s {
        "replay" => Ok((DetectorKind::Replay, None)),
        "blob" => Ok((DetectorKind::Blob, None)),
        _ => match s.strip_prefix("external:") {
            Some(cmd) if !cmd.trim().is_empty() => Ok((DetectorKind::External, Some(cmd.to_string()))),
            _ => Err(CliError::Usage(format!(
                "unknown detector `{s}` (replay | blob | external:<command>)"
            ))),
        },
    }
}

impl DetectorArgs {
    pub fn resolve(&self, ctx: &Context) -> Result<DetectorConfig, CliError> {
        let mut cfg = DetectorConfig::default();
        let spec = match &self.detector {
            Some(s) => Some(s.clone()),
            None => ctx.get::<String>("detector", "kind")?,
        };
        if let Some(spec) = spec {
            let (kind, cmd) = parse_detector_spec(&spec)?;
            cfg.kind = kind;
            cfg.external_command = cmd;
        }
        let sec = "detector";
        if let Some(v) = self.blob_threshold.or(ctx.get(sec, "intensity_threshold")?) {
            cfg.blob.intensity_threshold = v;
        }
        if let Some(v) = self.min_blob_area.or(ctx.get(sec, "min_blob_area")?) {
            cfg.blob.min_blob_area = v;
        }
        if let Some(v) = self.max_aspect.or(ctx.get(sec, "max_aspect_ratio")?) {
            cfg.blob.max_aspect_ratio = v;
        }
        if let Some(v) = self.conf_threshold.or(ctx.get(sec, "confidence_threshold")?) {
            cfg.confidence_threshold = v;
        }
        if let Some(v) = self.nms_iou.or(ctx.get(sec, "nms_iou_threshold")?) {
            cfg.nms_iou_threshold = v;
        }
        if let Some(v) = self.timeout_ms.or(ctx.get(sec, "response_timeout_ms")?) {
            cfg.response_timeout = Duration::from_millis(v);
        }
        cfg.validate().map_err(usage)?;
        Ok(cfg)
    }
}

impl PipelineArgs {
    pub fn resolve(&self, ctx: &Context, detector: DetectorConfig) -> Result<PipelineConfig, CliError> {
        let mut cfg = PipelineConfig {
            detector,
            ..PipelineConfig::default()
        };
        let sec = "pipeline";
        if let Some(v) = self.min_bbox_area.or(ctx.get(sec, "min_bbox_area")?) {
            cfg.min_bbox_area = v;
        }
        if let Some(v) = self.decimals.or(ctx.get(sec, "decimals")?) {
            cfg.decimals = v;
        }
        if let Some(v) = self.fever_threshold.or(ctx.get(sec, "fever_threshold_c")?) {
            cfg.fever_threshold_c = v;
        }
        cfg.overlay = !self.no_overlay && ctx.get(sec, "overlay")?.unwrap_or(true);
        cfg.validate().map_err(usage)?;
        Ok(cfg)
    }
}

// ---------------------------------------------------------------------------
// atomic output

/// Writes a file via a temp file in the same directory and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(parent)?;
    let mut tmp = tempfile::NamedTempFile::new_in(parent)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// A directory filled under a temporary name and renamed into place on
/// [`StagedDir::commit`]; dropped uncommitted, it is removed.
struct StagedDir {
    tmp: tempfile::TempDir,
    target: PathBuf,
}

impl StagedDir {
    fn new(target: &Path) -> Result<Self, CliError> {
        if target.exists() {
            let mut entries = fs::read_dir(target).map_err(runtime(format!("{}", target.display())))?;
            if entries.next().is_some() {
                return Err(CliError::Usage(format!(
                    "output directory {} is not empty",
                    target.display()
                )));
            }
        }
        let parent = match target.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent).map_err(runtime(format!("{}", parent.display())))?;
        let tmp = tempfile::Builder::new()
            .prefix(".thermoface-stage-")
            .tempdir_in(&parent)
            .map_err(runtime("staging directory"))?;
        Ok(Self {
            tmp,
            target: target.to_path_buf(),
        })
    }

    fn path(&self) -> &Path {
        self.tmp.path()
    }

    fn write(&self, rel: impl AsRef<Path>, bytes: &[u8]) -> Result<(), CliError> {
        let p = self.tmp.path().join(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).map_err(runtime(format!("{}", parent.display())))?;
        }
        fs::write(&p, bytes).map_err(runtime(format!("{}", p.display())))
    }

    fn commit(self) -> Result<(), CliError> {
        let ctx = format!("{}", self.target.display());
        if self.target.exists() {
            fs::remove_dir(&self.target).map_err(runtime(ctx.clone()))?;
        }
        let staged = self.tmp.keep();
        fs::rename(&staged, &self.target).map_err(|e| {
            let _ = fs::remove_dir_all(&staged);
            runtime(ctx)(e)
        })
    }
}

// ---------------------------------------------------------------------------
// datasets

pub fn images_dir(dataset: &Path) -> PathBuf {
    dataset.join("images")
}

pub fn labels_dir(dataset: &Path) -> PathBuf {
    dataset.join("labels")
}

pub fn load_dataset(dir: &Path) -> Result<Vec<DatasetItem>, CliError> {
    pair_frames_with_labels(&images_dir(dir), &labels_dir(dir)).map_err(data(format!("dataset {}", dir.display())))
}

fn gray(frame: &ThermalFrame) -> Result<ThermalFrame, FrameError> {
    if frame.channels == 3 {
        bgr_to_grayscale(frame)
    } else {
        Ok(frame.clone())
    }
}

fn pixel_boxes(item: &DatasetItem) -> Result<Vec<PixelBBox>, CliError> {
    let f = &item.frame;
    item.labels
        .iter()
        .map(|l| denormalize(&l.bbox, f.width, f.height))
        .collect::<Result<_, _>>()
        .map_err(data(format!("labels of {}", f.source_id)))
}

fn stage_item(stage: &StagedDir, stem: &str, item: &DatasetItem) -> Result<(), CliError> {
    let frame = &item.frame;
    stage.write(
        Path::new("images").join(format!("{stem}.{}", frame.pnm_extension())),
        &frame.to_pnm(),
    )?;
    let boxes: Vec<NormBBox> = item.labels.iter().map(|l| l.bbox).collect();
    stage.write(Path::new("labels").join(format!("{stem}.txt")), serialize_yolo(&boxes).as_bytes())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrepareSummary {
    pub items: usize,
    pub augmented: usize,
    pub out: PathBuf,
}

pub fn cmd_prepare(args: &PrepareArgs, _ctx: &Context) -> Result<PrepareSummary, CliError> {
    let mut items: BTreeMap<String, DatasetItem> = BTreeMap::new();
    for src in std::iter::once(&args.src).chain(&args.combine) {
        for mut item in load_dataset(src)? {
            if let Some((w, h)) = args.resize {
                item.frame = resize(&item.frame, w, h).map_err(data(format!("resizing {}", item.frame.source_id)))?;
            }
            let stem = item.frame.source_id.clone();
            if items.insert(stem.clone(), item).is_some() {
                return Err(CliError::Data {
                    context: format!("combining {}", src.display()),
                    source: format!("stem `{stem}` appears in more than one dataset").into(),
                });
            }
        }
    }
    let mut augmented = 0;
    if args.augment_hflip {
        let flipped: Vec<(String, DatasetItem)> = items
            .iter()
            .map(|(stem, item)| (format!("{stem}{HFLIP_SUFFIX}"), horizontal_flip(item)))
            .collect();
        for (stem, item) in flipped {
            if items.insert(stem.clone(), item).is_some() {
                return Err(CliError::Data {
                    context: "augmenting".into(),
                    source: format!("mirrored stem `{stem}` collides with an existing item").into(),
                });
            }
            augmented += 1;
        }
    }
    let stage = StagedDir::new(&args.out)?;
    fs::create_dir_all(stage.path().join("images")).map_err(runtime("staging images"))?;
    fs::create_dir_all(stage.path().join("labels")).map_err(runtime("staging labels"))?;
    for (stem, item) in &items {
        stage_item(&stage, stem, item)?;
    }
    stage.commit()?;
    log::info!("prepared {} items ({} mirrored) in {}", items.len(), augmented, args.out.display());
    Ok(PrepareSummary {
        items: items.len(),
        augmented,
        out: args.out.clone(),
    })
}

// ---------------------------------------------------------------------------
// calibrate

/// Reads a `[grid]` section. Kinds without a key are not searched.
///
/// ```text
/// [grid]
/// linear=true
/// ridge_lambda=0,0.1,1
/// lasso_lambda=0.01
/// elastic_net_lambda=0.1
/// elastic_net_mix=0.5
/// knn_k=1,3
/// tree_max_depth=2,3
/// tree_min_samples_leaf=1
/// ```
pub fn parse_grid(text: &str) -> Result<ModelGrid<f64>, CliError> {
    let doc = Document::parse(text).map_err(usage)?;
    let s: &Section = doc
        .section("grid")
        .ok_or_else(|| CliError::Usage("grid file has no [grid] section".into()))?;
    let list = |k: &str| s.parse_list::<f64>(k).map(Option::unwrap_or_default).map_err(usage);
    let ulist = |k: &str| s.parse_list::<usize>(k).map(Option::unwrap_or_default).map_err(usage);
    let grid = ModelGrid {
        linear: s.parse("linear").map_err(usage)?.unwrap_or(false),
        ridge_lambda: list("ridge_lambda")?,
        lasso_lambda: list("lasso_lambda")?,
        elastic_net_lambda: list("elastic_net_lambda")?,
        elastic_net_mix: list("elastic_net_mix")?,
        knn_k: ulist("knn_k")?,
        tree_max_depth: ulist("tree_max_depth")?,
        tree_min_samples_leaf: ulist("tree_min_samples_leaf")?,
    };
    if grid.points().is_empty() {
        return Err(CliError::Usage("grid file selects no grid points".into()));
    }
    Ok(grid)
}

/// Screening pixels: the grayscale max pixel of every labelled face in a
/// dataset directory, or the first column of a text file (one value per
/// line, optional header).
pub fn load_screening_pixels(path: &Path) -> Result<Vec<f64>, CliError> {
    let ctx = format!("guard set {}", path.display());
    if path.is_dir() {
        let mut out = Vec::new();
        for item in load_dataset(path)? {
            let g = gray(&item.frame).map_err(data(ctx.clone()))?;
            for b in pixel_boxes(&item)? {
                out.push(f64::from(extract_max_pixel(&g, &b).map_err(data(ctx.clone()))?));
            }
        }
        return Ok(out);
    }
    let text = fs::read_to_string(path).map_err(data(ctx.clone()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let field = line.split(',').next().unwrap_or("").trim();
        if field.is_empty() {
            continue;
        }
        match field.parse::<f64>() {
            Ok(v) if (0.0..=255.0).contains(&v) => out.push(v),
            Ok(v) => return Err(data(ctx)(format!("line {}: pixel {v} not in [0,255]", i + 1))),
            Err(_) if i == 0 => {}
            Err(_) => return Err(data(ctx)(format!("line {}: `{field}` is not a number", i + 1))),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct CalibrateOutcome {
    pub selected: SelectedModel<f64>,
    pub report: CrossValReport<f64>,
    pub text: String,
}

pub fn cmd_calibrate(args: &CalibrateArgs, ctx: &Context) -> Result<CalibrateOutcome, CliError> {
    let k_folds = args.folds.or(ctx.get("calibrate", "folds")?).unwrap_or(5);
    if k_folds < 2 {
        return Err(CliError::Usage(format!("--folds must be at least 2, got {k_folds}")));
    }
    let ceiling = args
        .ceiling
        .or(ctx.get("calibrate", "ceiling_c")?)
        .unwrap_or(DEFAULT_CEILING_C);
    if !ceiling.is_finite() {
        return Err(CliError::Usage(format!("--ceiling must be finite, got {ceiling}")));
    }
    let grid = match &args.grids {
        Some(p) => parse_grid(&fs::read_to_string(p).map_err(data(format!("grid file {}", p.display())))?)?,
        None => ModelGrid::default(),
    };
    let samples = read_calibration_csv::<f64>(&args.samples).map_err(data(format!("{}", args.samples.display())))?;
    if k_folds > samples.len() {
        return Err(CliError::Usage(format!(
            "--folds {k_folds} exceeds the {} calibration samples",
            samples.len()
        )));
    }
    let screening = args.guard_set.as_deref().map(load_screening_pixels).transpose()?;
    if screening.as_ref().is_some_and(|s| s.is_empty()) {
        return Err(data("guard set")(RegressionError::EmptyScreening));
    }

    let report = grid_search(&samples, &grid, k_folds, ctx.seed).map_err(data("cross-validation"))?;
    let candidates =
        screen_candidates(&report, &samples, screening.as_deref(), ceiling).map_err(data("refitting candidates"))?;
    let selected = select_model(&candidates, &samples, k_folds, ctx.seed).map_err(data("model selection"))?;
    write_atomic(&args.out, selected.to_document().as_bytes()).map_err(runtime(format!("{}", args.out.display())))?;

    let mut text = String::new();
    writeln!(text, "{}", report.full_table()).unwrap();
    writeln!(text, "best per model:").unwrap();
    text.push_str(&report.summary_table());
    writeln!(text).unwrap();
    for c in candidates.iter().filter(|c| !c.guard.passed()) {
        if let GuardOutcome::Checked(v) = &c.guard {
            let (p, t) = v.offending[0];
            writeln!(
                text,
                "guard rejected rank {} {}: predicts {t:.2} °C at pixel {p} (ceiling {} °C, {} offending)",
                c.rank + 1,
                c.entry.spec,
                v.ceiling_c,
                v.offending.len()
            )
            .unwrap();
        }
    }
    let (b0, b1) = selected.model.coefficients().unwrap_or((f64::NAN, f64::NAN));
    writeln!(
        text,
        "selected: {} (rank {}) cv_mse={:.6} cv_r2={} guard={}",
        selected.model.spec,
        selected.rank + 1,
        selected.cv.mean_mse,
        selected.cv.mean_r2.map_or("n/a".into(), |v| format!("{v:.6}")),
        match &selected.guard {
            GuardOutcome::Skipped => "skipped",
            GuardOutcome::Checked(_) => "passed",
        }
    )
    .unwrap();
    if b0.is_finite() {
        writeln!(text, "coefficients: intercept={b0} slope={b1}").unwrap();
    }
    writeln!(text, "model written to {}", args.out.display()).unwrap();
    if let Some(p) = &args.report {
        write_atomic(p, text.as_bytes()).map_err(runtime(format!("{}", p.display())))?;
    }
    Ok(CalibrateOutcome {
        selected,
        report,
        text,
    })
}

// ---------------------------------------------------------------------------
// eval-detector

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub dataset: String,
    pub report: EvalReport,
}

impl EvalOutcome {
    pub fn csv(&self) -> String {
        format!("{}\n{}\n", EvalReport::CSV_HEADER, self.report.csv_row(&self.dataset))
    }
}

fn replay_labels(items: &[DatasetItem]) -> HashMap<String, Vec<thermoface::annotations::GroundTruthLabel>> {
    items
        .iter()
        .map(|i| (i.frame.source_id.clone(), i.labels.clone()))
        .collect()
}

pub fn cmd_eval_detector(args: &EvalArgs, ctx: &Context) -> Result<EvalOutcome, CliError> {
    let cfg = args.detector.resolve(ctx)?;
    let items = load_dataset(&args.dataset)?;
    let labels = (cfg.kind == DetectorKind::Replay).then(|| replay_labels(&items));
    let mut detector = build_detector::<f64>(&cfg, labels).map_err(runtime("starting detector"))?;
    let mut dets = Vec::with_capacity(items.len());
    let mut gts = Vec::with_capacity(items.len());
    for item in &items {
        let g = gray(&item.frame).map_err(data(format!("frame {}", item.frame.source_id)))?;
        dets.push(
            detector
                .detect(&g)
                .map_err(runtime(format!("detecting on {}", item.frame.source_id)))?,
        );
        gts.push(pixel_boxes(item)?);
    }
    let report = map_over_thresholds(&dets, &gts, &coco_thresholds(), cfg.confidence_threshold)
        .map_err(runtime("evaluation"))?;
    let dataset = args.name.clone().unwrap_or_else(|| {
        args.dataset
            .canonicalize()
            .unwrap_or_else(|_| args.dataset.clone())
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into())
    });
    let outcome = EvalOutcome { dataset, report };
    if let Some(dir) = &args.out {
        write_atomic(&dir.join("eval.csv"), outcome.csv().as_bytes()).map_err(runtime(format!("{}", dir.display())))?;
        write_atomic(&dir.join("eval.txt"), outcome.report.to_key_values().as_bytes())
            .map_err(runtime(format!("{}", dir.display())))?;
    }
    Ok(outcome)
}

// ---------------------------------------------------------------------------
// run

fn frame_paths(source: &Path) -> Result<Vec<(String, PathBuf)>, CliError> {
    if source == Path::new("-") {
        let stdin = io::stdin();
        let mut out = Vec::new();
        for line in stdin.lock().lines() {
            let line = line.map_err(runtime("reading stdin"))?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let p = PathBuf::from(line);
            let stem = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            out.push((stem, p));
        }
        return Ok(out);
    }
    list_frames(source).map_err(data(format!("frames {}", source.display())))
}

pub fn cmd_run(args: &RunArgs, ctx: &Context) -> Result<StreamSummary, CliError> {
    let selected =
        SelectedModel::<f64>::load(&args.model).map_err(data(format!("model {}", args.model.display())))?;
    let dcfg = args.detector.resolve(ctx)?;
    let cfg = args.pipeline.resolve(ctx, dcfg)?;
    let labels = match (cfg.detector.kind, &args.labels) {
        (DetectorKind::Replay, Some(dir)) => {
            let mut map = HashMap::new();
            for entry in fs::read_dir(dir).map_err(data(format!("labels {}", dir.display())))? {
                let p = entry.map_err(data(format!("labels {}", dir.display())))?.path();
                if p.extension().is_some_and(|e| e == "txt") {
                    let stem = p.file_stem().unwrap().to_string_lossy().into_owned();
                    let l = thermoface::frameio::read_label_file(&p).map_err(data(format!("{}", p.display())))?;
                    map.insert(stem, l);
                }
            }
            Some(map)
        }
        (DetectorKind::Replay, None) => {
            return Err(CliError::Usage("the replay detector needs --labels".into()));
        }
        _ => None,
    };
    let paths = frame_paths(&args.frames)?;
    let mut detector = build_detector::<f64>(&cfg.detector, labels).map_err(runtime("starting detector"))?;

    let mut log_file = match &args.log {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(parent).map_err(runtime(format!("{}", parent.display())))?;
            }
            Some(BufWriter::new(
                fs::File::create(p).map_err(runtime(format!("log {}", p.display())))?,
            ))
        }
        None => None,
    };
    let outputs = StreamOutputs {
        log: log_file.as_mut().map(|w| w as &mut dyn Write),
        frames_dir: args.out.clone(),
    };
    let source = paths
        .into_iter()
        .enumerate()
        .map(|(i, (stem, path))| load_frame(&path, None).map(|f| f.with_meta(i as u64, stem)));
    let summary = run_stream(source, &cfg, detector.as_mut(), &selected.model, outputs, |_| {})
        .map_err(runtime("monitoring stream"))?;
    Ok(summary)
}

// ---------------------------------------------------------------------------
// synth

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthSummary {
    pub frames: usize,
    pub faces: usize,
    pub calibration_samples: usize,
    pub out: PathBuf,
}

pub fn cmd_synth(args: &SynthArgs, ctx: &Context) -> Result<SynthSummary, CliError> {
    let text = fs::read_to_string(&args.spec).map_err(data(format!("scene spec {}", args.spec.display())))?;
    let mut spec = SequenceSpec::parse(&text).map_err(data(format!("scene spec {}", args.spec.display())))?;
    if ctx.seed != 0 {
        spec.base.seed = ctx.seed;
    }
    let stage = StagedDir::new(&args.out)?;
    fs::create_dir_all(stage.path().join("images")).map_err(runtime("staging images"))?;
    fs::create_dir_all(stage.path().join("labels")).map_err(runtime("staging labels"))?;
    let mut truth = String::from(TRUTH_HEADER);
    truth.push('\n');
    let mut faces = 0;
    for i in 0..spec.frames {
        let scene = spec
            .frame_spec(i)
            .and_then(|s| generate(&s))
            .map_err(data(format!("frame {i}")))?;
        let stem = format!("frame_{i:06}");
        let item = DatasetItem {
            frame: scene.frame,
            labels: scene.labels,
        };
        stage_item(&stage, &stem, &item)?;
        for (j, ((b, t), peak)) in scene.boxes.iter().zip(&scene.temperatures).zip(&scene.peaks).enumerate() {
            writeln!(truth, "{i},{j},{},{},{},{},{t},{peak}", b.x1, b.y1, b.x2, b.y2).unwrap();
        }
        faces += scene.boxes.len();
    }
    stage.write("truth.csv", truth.as_bytes())?;
    let mut calibration_samples = 0;
    if let Some(n) = spec.calibration_samples {
        let samples = generate_calibration_set(n, spec.base.law, &CalibrationDistribution::default(), spec.base.seed)
            .map_err(data("calibration set"))?;
        stage.write("calibration.csv", write_calibration_csv(&samples).as_bytes())?;
        calibration_samples = n;
    }
    stage.commit()?;
    Ok(SynthSummary {
        frames: spec.frames,
        faces,
        calibration_samples,
        out: args.out.clone(),
    })
}

/// Runs the parsed command line and returns what to print on stdout.
pub fn execute(cli: &Cli) -> Result<String, CliError> {
    let ctx = Context::from_cli(cli)?;
    Ok(match &cli.command {
        Command::Prepare(a) => {
            let s = cmd_prepare(a, &ctx)?;
            format!("items={}\naugmented={}\nout={}\n", s.items, s.augmented, s.out.display())
        }
        Command::Calibrate(a) => cmd_calibrate(a, &ctx)?.text,
        Command::EvalDetector(a) => {
            let o = cmd_eval_detector(a, &ctx)?;
            format!("{}\n{}", o.csv(), o.report.to_key_values())
        }
        Command::Run(a) => cmd_run(a, &ctx)?.to_key_values(),
        Command::Synth(a) => {
            let s = cmd_synth(a, &ctx)?;
            format!(
                "frames={}\nfaces={}\ncalibration_samples={}\nout={}\n",
                s.frames,
                s.faces,
                s.calibration_samples,
                s.out.display()
            )
        }
    })
}
