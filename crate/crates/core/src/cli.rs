//! Command-line front end.
//!
//! Every command resolves its flags into a [`RunManifest`] and then executes
//! the manifest, so `replay` can re-run any earlier output from the manifest
//! embedded in it. Exit codes: 0 success, 1 unreadable input or write
//! failure, 2 parse or validation error, 3 alignment failure (outputs for the
//! aligned prefix are still written).

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::align::{align_sequence, to_canonical, AlignConfig, AlignError, AlignmentResult};
use crate::annotate::{
    extrapolate_missing, format_annotations, parse_annotations, parse_flags, AnnotateError,
    CurvePoint, Trajectory,
};
use crate::ecc::WarpModel;
use crate::io::{self, IoError};
use crate::pipeline::{default_curve_grid, run_qa, PipelineError, QaOutput, QaSettings};
use crate::smooth::{SmoothError, SmoothMethod, SmootherSpec};
use crate::synth::{
    evaluate, generate, GroundTruth, GroundTruthScenario, PipelineOutput, ScenarioConfig,
    SynthError,
};

pub const TOOL: &str = "trajaudit";

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Invalid(String),
    #[error("alignment failed at frame {0}; outputs cover the aligned prefix")]
    AlignmentFailed(usize),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) | CliError::Input(_) => 1,
            CliError::Invalid(_) => 2,
            CliError::AlignmentFailed(_) => 3,
        }
    }
}

impl From<AlignError> for CliError {
    fn from(e: AlignError) -> Self {
        match e {
            AlignError::TooFewFrames(_) | AlignError::FrameSizeMismatch { .. } => {
                CliError::Input(e.to_string())
            }
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

impl From<AnnotateError> for CliError {
    fn from(e: AnnotateError) -> Self {
        CliError::Invalid(e.to_string())
    }
}

impl From<SmoothError> for CliError {
    fn from(e: SmoothError) -> Self {
        CliError::Invalid(e.to_string())
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        CliError::Invalid(e.to_string())
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Align(e) => e.into(),
            PipelineError::Smooth(e) => e.into(),
            PipelineError::Annotate(e) => e.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CommandKind {
    Align,
    Qa,
    Correct,
    Extrapolate,
    Synth,
    Run,
    Report,
}

/// Everything needed to reproduce one output directory. The output
/// directory itself is not recorded, and timings are left out under
/// `--deterministic`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: CommandKind,
    pub inputs: BTreeMap<String, PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub align: Option<AlignConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qa: Option<QaSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ScenarioConfig>,
    pub deterministic: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<BTreeMap<String, f64>>,
}

impl RunManifest {
    pub fn new(command: CommandKind, deterministic: bool) -> Self {
        Self {
            tool: TOOL.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command,
            inputs: BTreeMap::new(),
            align: None,
            qa: None,
            scenario: None,
            deterministic,
            timings: None,
        }
    }

    fn input(&self, key: &str) -> Result<&Path, CliError> {
        self.inputs
            .get(key)
            .map(PathBuf::as_path)
            .ok_or_else(|| CliError::Invalid(format!("manifest lacks input {key:?}")))
    }

    fn timed<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        if !self.deterministic {
            self.timings
                .get_or_insert_with(BTreeMap::new)
                .insert(stage.to_string(), start.elapsed().as_secs_f64());
        }
        out
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "trajaudit",
    version,
    about = "Audit and correct bounding-box annotations of video sequences"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Register every frame to frame 0 and map annotation centers there.
    Align {
        #[arg(long)]
        frames: PathBuf,
        #[command(flatten)]
        ann: AnnotationArgs,
        #[command(flatten)]
        align: AlignArgs,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Smooth, flag annotations farther than tau from the smoothed path, and
    /// emit the success curve and trajectory plot.
    Qa {
        #[command(flatten)]
        qa: QaArgs,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Re-center flagged boxes on the smoothed path.
    Correct {
        #[command(flatten)]
        qa: QaArgs,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Fill frames without annotation from the smoothed path.
    Extrapolate {
        #[arg(long)]
        alignment: PathBuf,
        #[command(flatten)]
        ann: AnnotationArgs,
        #[command(flatten)]
        smoother: SmootherArgs,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Render a synthetic scenario with ground truth.
    Synth {
        /// Scenario configuration (JSON).
        #[arg(
            long,
            conflicts_with = "reference",
            required_unless_present = "reference"
        )]
        config: Option<PathBuf>,
        /// Use the built-in reference scenario.
        #[arg(long)]
        reference: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Align, check and correct whole sequences. Each sequence directory holds
    /// `frames/` and `annotations.txt`, optionally `absent.txt` and
    /// `groundtruth.json`; results go to `<out>/<sequence name>/`.
    Run {
        #[arg(required = true)]
        sequences: Vec<PathBuf>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[command(flatten)]
        align: AlignArgs,
        #[command(flatten)]
        smoother: SmootherArgs,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Aggregate `run`/`correct` output directories into one table.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Re-execute the manifest embedded in an earlier output.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Output directory; must not hold any input.
    #[arg(long)]
    pub out: PathBuf,
    /// Omit timings and timestamps so reruns are byte-identical.
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Debug, Clone, Args)]
pub struct AnnotationArgs {
    /// One `x,y,w,h` box per frame.
    #[arg(long)]
    pub annotations: PathBuf,
    /// Optional per-frame 0/1 absence flags.
    #[arg(long)]
    pub absent: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct AlignArgs {
    #[arg(long, default_value_t = 20)]
    pub keypoint_threshold: usize,
    /// Seed for robust estimation.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub ransac_threshold: Option<f64>,
    #[arg(long)]
    pub min_rho: Option<f64>,
    #[arg(long)]
    pub ecc_model: Option<WarpModel>,
    /// Relative growth of the previous box used as ECC template.
    #[arg(long)]
    pub ecc_inflation: Option<f64>,
    /// Keep keypoint matches on the annotated object in the estimate.
    #[arg(long)]
    pub no_object_mask: bool,
}

impl AlignArgs {
    pub fn config(&self) -> AlignConfig {
        let mut c = AlignConfig {
            keypoint_threshold: self.keypoint_threshold,
            ..AlignConfig::default()
        };
        if let Some(s) = self.seed {
            c.ransac.seed = s;
        }
        if let Some(t) = self.ransac_threshold {
            c.ransac.inlier_threshold = t;
        }
        if let Some(r) = self.min_rho {
            c.ecc.min_rho = r;
        }
        if let Some(m) = self.ecc_model {
            c.ecc.model = m;
        }
        if let Some(f) = self.ecc_inflation {
            c.ecc_template_inflation = f;
        }
        if self.no_object_mask {
            c.object_mask_inflation = None;
        }
        c
    }
}

#[derive(Debug, Clone, Args)]
pub struct SmootherArgs {
    /// movmean, gaussian, sg or lowess.
    #[arg(long)]
    pub smoother: Option<SmoothMethod>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub order: Option<usize>,
    #[arg(long)]
    pub fraction: Option<f64>,
    #[arg(long, default_value_t = 100.0, allow_negative_numbers = true)]
    pub tau: f64,
    /// Success-curve thresholds; 1..=50 when omitted.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', default_value = "30,20,10,5")]
    pub tau_grid: Vec<f64>,
}

impl SmootherArgs {
    pub fn settings(&self, default_method: SmoothMethod) -> QaSettings {
        let mut spec = SmootherSpec::new(self.smoother.unwrap_or(default_method));
        if let Some(w) = self.window {
            spec.window = w;
        }
        if let Some(s) = self.sigma {
            spec.sigma = s;
        }
        if let Some(o) = self.order {
            spec.poly_order = o;
        }
        if let Some(f) = self.fraction {
            spec.fraction = f;
        }
        QaSettings {
            smoother: spec,
            tau: self.tau,
            curve_grid: self.grid.clone().unwrap_or_else(default_curve_grid),
            tau_grid: self.tau_grid.clone(),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct QaArgs {
    /// Alignment JSON written by `align`.
    #[arg(long)]
    pub alignment: PathBuf,
    #[command(flatten)]
    pub ann: AnnotationArgs,
    /// Ground truth JSON of a synthetic scenario; adds precision and recall.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[command(flatten)]
    pub smoother: SmootherArgs,
}

/// Parses `args` (program name first), runs the command and maps the outcome
/// to an exit code. Messages go to stderr.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run_command(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{TOOL}: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn add_annotations(m: &mut RunManifest, ann: &AnnotationArgs) {
    m.inputs
        .insert("annotations".into(), ann.annotations.clone());
    if let Some(a) = &ann.absent {
        m.inputs.insert("absent".into(), a.clone());
    }
}

pub fn run_command(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Align {
            frames,
            ann,
            align,
            out,
        } => {
            let mut m = RunManifest::new(CommandKind::Align, out.deterministic);
            m.inputs.insert("frames".into(), frames);
            add_annotations(&mut m, &ann);
            m.align = Some(align.config());
            execute(&mut m, &out.out)
        }
        Command::Qa { qa, out } => dispatch_qa(CommandKind::Qa, qa, out),
        Command::Correct { qa, out } => dispatch_qa(CommandKind::Correct, qa, out),
        Command::Extrapolate {
            alignment,
            ann,
            smoother,
            out,
        } => {
            let mut m = RunManifest::new(CommandKind::Extrapolate, out.deterministic);
            m.inputs.insert("alignment".into(), alignment);
            add_annotations(&mut m, &ann);
            m.qa = Some(smoother.settings(SmoothMethod::SavitzkyGolay));
            execute(&mut m, &out.out)
        }
        Command::Synth {
            config,
            reference,
            seed,
            out,
        } => {
            let mut cfg = match (&config, reference) {
                (Some(p), _) => serde_json::from_str::<ScenarioConfig>(&io::read_text(p)?)
                    .map_err(|e| CliError::Invalid(format!("{}: {e}", p.display())))?,
                (None, _) => ScenarioConfig::reference(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let mut m = RunManifest::new(CommandKind::Synth, out.deterministic);
            if let Some(p) = config {
                m.inputs.insert("config".into(), p);
            }
            m.scenario = Some(cfg);
            execute(&mut m, &out.out)
        }
        Command::Run {
            sequences,
            jobs,
            align,
            smoother,
            out,
        } => run_sequences(&sequences, jobs, &align, &smoother, &out),
        Command::Report { inputs, out } => {
            let mut m = RunManifest::new(CommandKind::Report, out.deterministic);
            for (i, p) in inputs.into_iter().enumerate() {
                m.inputs.insert(format!("run{i:04}"), p);
            }
            execute(&mut m, &out.out)
        }
        Command::Replay { manifest, out } => {
            let doc = read_json(&manifest)?;
            let inner = doc.get("manifest").cloned().unwrap_or(doc);
            let mut m: RunManifest = serde_json::from_value(inner)
                .map_err(|e| CliError::Invalid(format!("{}: {e}", manifest.display())))?;
            m.timings = None;
            execute(&mut m, &out)
        }
    }
}

fn dispatch_qa(kind: CommandKind, qa: QaArgs, out: OutputArgs) -> Result<(), CliError> {
    let mut m = RunManifest::new(kind, out.deterministic);
    m.inputs.insert("alignment".into(), qa.alignment);
    add_annotations(&mut m, &qa.ann);
    if let Some(t) = qa.truth {
        m.inputs.insert("truth".into(), t);
    }
    m.qa = Some(qa.smoother.settings(SmoothMethod::Lowess));
    execute(&mut m, &out.out)
}

/// Resolves the flags of `run` into one manifest per sequence and executes
/// them on a pool of `jobs` workers.
fn run_sequences(
    sequences: &[PathBuf],
    jobs: usize,
    align: &AlignArgs,
    smoother: &SmootherArgs,
    out: &OutputArgs,
) -> Result<(), CliError> {
    if jobs == 0 {
        return Err(CliError::Invalid("--jobs must be >= 1".into()));
    }
    let mut names = std::collections::BTreeSet::new();
    let mut work = Vec::new();
    for seq in sequences {
        let name = seq
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .ok_or_else(|| {
                CliError::Invalid(format!("{}: not a sequence directory", seq.display()))
            })?;
        if !names.insert(name.clone()) {
            return Err(CliError::Invalid(format!(
                "duplicate sequence name {name:?}"
            )));
        }
        let mut m = RunManifest::new(CommandKind::Run, out.deterministic);
        m.inputs.insert("frames".into(), seq.join("frames"));
        m.inputs
            .insert("annotations".into(), seq.join("annotations.txt"));
        for (key, file) in [("absent", "absent.txt"), ("truth", "groundtruth.json")] {
            if seq.join(file).is_file() {
                m.inputs.insert(key.into(), seq.join(file));
            }
        }
        m.align = Some(align.config());
        m.qa = Some(smoother.settings(SmoothMethod::Lowess));
        work.push((m, out.out.join(name)));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Invalid(e.to_string()))?;
    let results: Vec<Result<(), CliError>> = pool.install(|| {
        work.into_par_iter()
            .map(|(mut m, dir)| execute(&mut m, &dir))
            .collect()
    });
    // the first failure becomes the exit status, the rest are only reported
    let mut first = None;
    for (seq, r) in sequences.iter().zip(results) {
        match (r, &first) {
            (Err(e), None) => first = Some(e),
            (Err(e), Some(_)) => eprintln!("{TOOL}: {}: {e}", seq.display()),
            _ => {}
        }
    }
    first.map_or(Ok(()), Err)
}

/// Runs a resolved manifest, writing into `out`.
pub fn execute(m: &mut RunManifest, out: &Path) -> Result<(), CliError> {
    guard_output(out, &m.inputs)?;
    match m.command {
        CommandKind::Align => exec_align(m, out),
        CommandKind::Qa | CommandKind::Correct => exec_qa(m, out),
        CommandKind::Extrapolate => exec_extrapolate(m, out),
        CommandKind::Synth => exec_synth(m, out),
        CommandKind::Run => exec_run(m, out),
        CommandKind::Report => exec_report(m, out),
    }
}

/// Refuses output directories that hold an input file or are an input
/// directory.
fn guard_output(out: &Path, inputs: &BTreeMap<String, PathBuf>) -> Result<(), CliError> {
    let Ok(out_c) = fs::canonicalize(out) else {
        return Ok(());
    };
    for p in inputs.values() {
        let Ok(pc) = fs::canonicalize(p) else {
            continue;
        };
        let home = if pc.is_dir() {
            Some(pc.as_path())
        } else {
            pc.parent()
        };
        if home == Some(out_c.as_path()) {
            return Err(CliError::Invalid(format!(
                "output directory {} holds input {}; choose a distinct directory",
                out.display(),
                p.display()
            )));
        }
    }
    Ok(())
}

fn read_json(path: &Path) -> Result<Value, CliError> {
    serde_json::from_str(&io::read_text(path)?)
        .map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

fn read_doc<T: serde::de::DeserializeOwned>(path: &Path, key: &str) -> Result<T, CliError> {
    let mut doc = read_json(path)?;
    let v = match doc.get_mut(key) {
        Some(v) => v.take(),
        None => doc,
    };
    serde_json::from_value(v).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

fn load_trajectory(m: &RunManifest) -> Result<Trajectory, CliError> {
    let traj = parse_annotations(&io::read_text(m.input("annotations")?)?)?;
    match m.inputs.get("absent") {
        Some(p) => Ok(traj.with_absent(parse_flags(&io::read_text(p)?)?)?),
        None => Ok(traj),
    }
}

fn qa_settings(m: &RunManifest) -> Result<QaSettings, CliError> {
    let qa = m.qa.clone().unwrap_or_default();
    if !(qa.tau > 0.0 && qa.tau.is_finite()) {
        return Err(CliError::Invalid(format!(
            "tau must be > 0, got {}",
            qa.tau
        )));
    }
    if let Some(t) = qa
        .tau_grid
        .iter()
        .chain(&qa.curve_grid)
        .find(|t| !(**t > 0.0 && t.is_finite()))
    {
        return Err(CliError::Invalid(format!(
            "thresholds must be > 0, got {t}"
        )));
    }
    qa.smoother.validate()?;
    Ok(qa)
}

fn write_doc(path: &Path, m: &RunManifest, body: Value) -> Result<(), CliError> {
    let mut doc = serde_json::Map::new();
    doc.insert(
        "manifest".into(),
        serde_json::to_value(m).map_err(IoError::from)?,
    );
    if let Value::Object(fields) = body {
        doc.extend(fields);
    }
    io::write_json(path, &Value::Object(doc))?;
    Ok(())
}

fn timestamp(m: &RunManifest) -> Option<String> {
    (!m.deterministic)
        .then(|| chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true))
}

fn exec_align(m: &mut RunManifest, out: &Path) -> Result<(), CliError> {
    let cfg = m.align.clone().unwrap_or_default();
    let dir = m.input("frames")?.to_path_buf();
    let frames = m.timed("load", || io::load_frames(&dir))?;
    let traj = load_trajectory(m)?;
    let alignment = m.timed("align", || align_sequence(&frames, &traj, &cfg))?;
    write_alignment(m, out, &alignment, &traj)?;
    alignment
        .failed_at
        .map_or(Ok(()), |f| Err(CliError::AlignmentFailed(f)))
}

fn write_alignment(
    m: &RunManifest,
    out: &Path,
    alignment: &AlignmentResult,
    traj: &Trajectory,
) -> Result<(), CliError> {
    let canonical = to_canonical(alignment, traj)?;
    let points_csv = io::points_csv(&canonical.points)?;
    io::write_bytes(&out.join("canonical.csv"), points_csv.as_bytes())?;
    write_doc(
        &out.join("alignment.json"),
        m,
        json!({ "alignment": alignment }),
    )
}

fn load_truth(
    m: &RunManifest,
    noisy: &Trajectory,
) -> Result<Option<GroundTruthScenario>, CliError> {
    let Some(p) = m.inputs.get("truth") else {
        return Ok(None);
    };
    let truth: GroundTruth = read_doc(p, "truth")?;
    Ok(Some(GroundTruthScenario {
        frames: Vec::new(),
        truth,
        noisy: noisy.clone(),
    }))
}

/// Flags, success curve, smoothed path and plot.
fn write_report(
    m: &RunManifest,
    out: &Path,
    qa: &QaSettings,
    res: &QaOutput,
) -> Result<(), CliError> {
    let flagged_frames = res.report.flagged_frames();
    let qa_doc = json!({
        "smoother": qa.smoother,
        "tau": qa.tau,
        "evaluated": res.report.evaluated,
        "flagged_count": res.report.flagged_count,
        "flagged_frames": flagged_frames,
        "distances": res.report.distances,
        "curve": res.curve,
    });
    write_doc(&out.join("report.json"), m, qa_doc)?;
    io::write_bytes(
        &out.join("curve.csv"),
        io::curve_csv(&res.curve)?.as_bytes(),
    )?;
    let smoothed_csv = io::canonical_csv(&res.canonical, &res.smoothed)?;
    io::write_bytes(&out.join("smoothed.csv"), smoothed_csv.as_bytes())?;
    let svg = io::trajectory_svg(
        &res.canonical,
        &res.smoothed,
        &res.report.flagged,
        &format!("{} smoothing, tau = {}", qa.smoother.method.name(), qa.tau),
        timestamp(m).as_deref(),
    );
    io::write_bytes(&out.join("trajectory.svg"), svg.as_bytes())?;
    Ok(())
}

/// Corrected annotations and the replaced-fraction sweep.
fn write_correction(m: &RunManifest, out: &Path, res: &QaOutput) -> Result<(), CliError> {
    let c = &res.correction;
    let replaced_frames: Vec<usize> = (0..c.replaced_mask.len())
        .filter(|&i| c.replaced_mask[i])
        .collect();
    write_doc(
        &out.join("correction.json"),
        m,
        json!({
            "tau": c.threshold,
            "evaluated": c.evaluated,
            "replaced_count": c.replaced_count,
            "replaced_fraction": c.replaced_fraction,
            "replaced_frames": replaced_frames,
            "replaced": res.replaced,
        }),
    )?;
    io::write_bytes(
        &out.join("corrected.txt"),
        format_annotations(&c.corrected).as_bytes(),
    )?;
    io::write_bytes(
        &out.join("replaced.csv"),
        io::replaced_csv(&res.replaced)?.as_bytes(),
    )?;
    Ok(())
}

/// Scores the run against synthetic ground truth when one was given.
fn write_metrics(
    m: &RunManifest,
    out: &Path,
    alignment: &AlignmentResult,
    res: &QaOutput,
    truth: Option<&GroundTruthScenario>,
) -> Result<(), CliError> {
    let c = &res.correction;
    if let Some(scenario) = truth {
        let metrics = evaluate(
            scenario,
            &PipelineOutput {
                alignment,
                smoothed: &res.reprojected,
                corrected: &c.corrected,
                flagged: &res.report.flagged,
                timings: m.timings.clone().unwrap_or_default(),
            },
        )?;
        write_doc(&out.join("metrics.json"), m, json!({ "metrics": metrics }))?;
    }
    Ok(())
}

fn exec_qa(m: &mut RunManifest, out: &Path) -> Result<(), CliError> {
    let qa = qa_settings(m)?;
    let alignment: AlignmentResult = read_doc(m.input("alignment")?, "alignment")?;
    let traj = load_trajectory(m)?;
    let truth = load_truth(m, &traj)?;
    let res = m.timed("qa", || run_qa(&alignment, &traj, &qa))?;
    if m.command == CommandKind::Correct {
        write_correction(m, out, &res)?;
    } else {
        write_report(m, out, &qa, &res)?;
    }
    write_metrics(m, out, &alignment, &res, truth.as_ref())?;
    write_doc(&out.join("manifest.json"), m, json!({}))
}

fn exec_run(m: &mut RunManifest, out: &Path) -> Result<(), CliError> {
    let qa = qa_settings(m)?;
    let cfg = m.align.clone().unwrap_or_default();
    let dir = m.input("frames")?.to_path_buf();
    let frames = m.timed("load", || io::load_frames(&dir))?;
    let traj = load_trajectory(m)?;
    let truth = load_truth(m, &traj)?;
    let alignment = m.timed("align", || align_sequence(&frames, &traj, &cfg))?;
    let res = m.timed("qa", || run_qa(&alignment, &traj, &qa))?;
    write_alignment(m, out, &alignment, &traj)?;
    write_report(m, out, &qa, &res)?;
    write_correction(m, out, &res)?;
    write_metrics(m, out, &alignment, &res, truth.as_ref())?;
    write_doc(&out.join("manifest.json"), m, json!({}))?;
    alignment
        .failed_at
        .map_or(Ok(()), |f| Err(CliError::AlignmentFailed(f)))
}

fn exec_extrapolate(m: &mut RunManifest, out: &Path) -> Result<(), CliError> {
    let qa = qa_settings(m)?;
    let alignment: AlignmentResult = read_doc(m.input("alignment")?, "alignment")?;
    let traj = load_trajectory(m)?;
    let filled = m.timed("extrapolate", || {
        extrapolate_missing(&traj, &alignment, &qa.smoother)
    })?;
    let added: Vec<usize> = (0..traj.len())
        .filter(|&i| traj.boxes[i].is_none() && filled.boxes[i].is_some())
        .collect();
    let missing: Vec<usize> = (0..filled.len())
        .filter(|&i| filled.boxes[i].is_none())
        .collect();
    io::write_bytes(
        &out.join("filled.txt"),
        format_annotations(&filled).as_bytes(),
    )?;
    write_doc(
        &out.join("extrapolate.json"),
        m,
        json!({
            "smoother": qa.smoother,
            "filled_frames": added,
            "still_missing": missing,
        }),
    )
}

fn exec_synth(m: &mut RunManifest, out: &Path) -> Result<(), CliError> {
    let cfg = m
        .scenario
        .clone()
        .ok_or_else(|| CliError::Invalid("manifest lacks a scenario".into()))?;
    let scenario = m.timed("generate", || generate(&cfg))?;
    io::export_scenario(out, &scenario)?;
    write_doc(&out.join("manifest.json"), m, json!({}))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct ReportRow {
    smoother: SmootherSpec,
    sequences: Vec<PathBuf>,
    tau_grid: Vec<f64>,
    replaced_fraction: Vec<f64>,
    mean_curve: Vec<CurvePoint>,
}

/// Groups runs by smoother and averages their replaced-fraction rows and
/// success curves.
fn exec_report(m: &mut RunManifest, out: &Path) -> Result<(), CliError> {
    let mut groups: BTreeMap<String, ReportRow> = BTreeMap::new();
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for dir in m.inputs.values() {
        let correction = read_json(&dir.join("correction.json"))?;
        let report = read_json(&dir.join("report.json"))?;
        let bad = |what: &str| CliError::Invalid(format!("{}: malformed {what}", dir.display()));
        let spec: SmootherSpec =
            serde_json::from_value(report["smoother"].clone()).map_err(|_| bad("report.json"))?;
        let replaced: Vec<crate::annotate::ReplacedStat> =
            serde_json::from_value(correction["replaced"].clone())
                .map_err(|_| bad("correction.json"))?;
        let curve: Vec<CurvePoint> =
            serde_json::from_value(report["curve"].clone()).map_err(|_| bad("report.json"))?;
        let key = serde_json::to_string(&spec).map_err(IoError::from)?;
        let tau_grid: Vec<f64> = replaced.iter().map(|r| r.threshold).collect();
        let row = groups.entry(key.clone()).or_insert_with(|| ReportRow {
            smoother: spec.clone(),
            sequences: Vec::new(),
            tau_grid: tau_grid.clone(),
            replaced_fraction: vec![0.0; tau_grid.len()],
            mean_curve: curve
                .iter()
                .map(|p| CurvePoint {
                    threshold: p.threshold,
                    rate: 0.0,
                })
                .collect(),
        });
        let same_curve = row.mean_curve.len() == curve.len()
            && row
                .mean_curve
                .iter()
                .zip(&curve)
                .all(|(a, b)| a.threshold == b.threshold);
        if row.tau_grid != tau_grid || !same_curve {
            return Err(CliError::Invalid(format!(
                "{}: thresholds differ from other runs with the same smoother",
                dir.display()
            )));
        }
        row.sequences.push(dir.clone());
        for (acc, r) in row.replaced_fraction.iter_mut().zip(&replaced) {
            *acc += r.replaced_fraction;
        }
        for (acc, p) in row.mean_curve.iter_mut().zip(&curve) {
            // an empty sequence reports NaN; it counts as zero success
            acc.rate += if p.rate.is_nan() { 0.0 } else { p.rate };
        }
        *counts.entry(key).or_default() += 1;
    }
    let rows: Vec<ReportRow> = groups
        .into_iter()
        .map(|(key, mut row)| {
            let n = counts[&key] as f64;
            row.replaced_fraction.iter_mut().for_each(|v| *v /= n);
            row.mean_curve.iter_mut().for_each(|p| p.rate /= n);
            row
        })
        .collect();

    let mut table = csv::Writer::from_writer(Vec::new());
    let mut curves = csv::Writer::from_writer(Vec::new());
    table
        .write_record(["smoother", "sequences", "tau", "replaced_fraction"])
        .map_err(IoError::from)?;
    curves
        .write_record(["smoother", "threshold", "mean_rate"])
        .map_err(IoError::from)?;
    for row in &rows {
        let name = row.smoother.method.name();
        for (t, v) in row.tau_grid.iter().zip(&row.replaced_fraction) {
            table
                .write_record([
                    name.to_string(),
                    row.sequences.len().to_string(),
                    t.to_string(),
                    v.to_string(),
                ])
                .map_err(IoError::from)?;
        }
        for p in &row.mean_curve {
            curves
                .write_record([
                    name.to_string(),
                    p.threshold.to_string(),
                    p.rate.to_string(),
                ])
                .map_err(IoError::from)?;
        }
    }
    let finish = |w: csv::Writer<Vec<u8>>| -> Result<Vec<u8>, CliError> {
        w.into_inner()
            .map_err(|e| CliError::Io(IoError::Csv(e.into_error().into())))
    };
    io::write_bytes(&out.join("summary.csv"), &finish(table)?)?;
    io::write_bytes(&out.join("curves.csv"), &finish(curves)?)?;
    write_doc(&out.join("summary.json"), m, json!({ "rows": rows }))
}
