//! Command-line front end: `synth`, `train`, `eval`, `infer`, `bench`,
//! `overlay` and `selfcheck`.
//!
//! Settings are layered as built-in defaults, then an optional TOML config
//! file, then flags. Every command takes its randomness from `--seed`
//! (or `STEREOPOSE_SEED`). Failures print one line to stderr,
//! `error: kind=<Kind> exit=<code> message="..."`, and exit with 1 (usage),
//! 2 (data) or 3 (numeric).

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::diffnet::{build_network, NetConfig, Network, ParamStore, Variant};
use crate::error::{Error, Result};
use crate::estimator::{Estimator, ViewMode};
use crate::geometry::{uvd_to_xyz_point, JointSetUvd, StereoRig, Uvd};
use crate::protocol::{
    bench_fps, eval_frame, eval_track, make_sequences, train_joint, train_stage_2d, train_stage_3d, EvalConfig,
    EvalReport, OraclePredictor, Predictor, Protocol, SequenceConfig, Stage, TrackConfig, TrainConfig,
};
use crate::roi::{denormalize, init_from_joints, preprocess_pair, CropInit, ImageBuffer};
use crate::synthdata::{
    read_dataset, read_ppm, write_dataset, write_ppm, Backgrounds, SceneLimits, StereoSample, SynthConfig, PARENTS, RIG_FILE,
};

pub mod selfcheck;

#[derive(Debug, Parser)]
#[command(name = "stereopose", version, about = "3D hand pose estimation from rectified stereo pairs")]
pub struct Cli {
    /// Seed for every random choice
    #[arg(long, global = true, env = "STEREOPOSE_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; 1 keeps outputs bit-identical run to run
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// TOML file with [net], [train], [eval], [synth] and [sequences] tables
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic stereo dataset
    Synth(SynthArgs),
    /// Train one stage (or both losses jointly) and write a checkpoint
    Train(TrainArgs),
    /// Evaluate a checkpoint under the frame or track protocol
    Eval(EvalArgs),
    /// Estimate 3D joints for one stereo pair
    Infer(InferArgs),
    /// Time inference and count multiply-accumulates per variant
    Bench(BenchArgs),
    /// Draw ground truth and predictions over both views
    Overlay(OverlayArgs),
    /// Run the built-in numerical checks
    Selfcheck,
}

/// Architecture and view selectors shared by model-loading commands.
#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Architecture variant: D2S4, D4S4, D2S8 or D4S8
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Views seen by the disparity head: stereo or mono
    #[arg(long)]
    pub views: Option<ViewMode>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output dataset directory
    #[arg(long)]
    pub out: PathBuf,
    /// Number of independent samples
    #[arg(long, conflicts_with = "sequences")]
    pub count: Option<usize>,
    /// Id of the first sample
    #[arg(long)]
    pub first_id: Option<u64>,
    /// Rig file (`key = value`); the default rig otherwise
    #[arg(long)]
    pub rig: Option<PathBuf>,
    /// Directory of background pairs `<name>_l.ppm` / `<name>_r.ppm`
    #[arg(long)]
    pub backgrounds: Option<PathBuf>,
    /// Render this many random-walk sequences instead of independent samples
    #[arg(long)]
    pub sequences: Option<usize>,
    /// Frames per sequence
    #[arg(long, requires = "sequences")]
    pub length: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training stage: 2d (heatmaps) or 3d (disparity head, trunk frozen)
    #[arg(long, required_unless_present = "joint", conflicts_with = "joint")]
    pub stage: Option<Stage>,
    /// Optimize both losses together instead of one stage
    #[arg(long)]
    pub joint: bool,
    /// Protocol the model is trained for: frame or track
    #[arg(long)]
    pub protocol: Option<Protocol>,
    /// Training dataset directory
    #[arg(long)]
    pub data: PathBuf,
    /// Validation dataset directory
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Checkpoint to start from (required for --stage 3d)
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Output checkpoint path
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Passes over the training set
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Initial RMSprop learning rate
    #[arg(long)]
    pub lr: Option<f64>,
    /// Samples per optimizer step
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Stop after this many optimizer steps
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Also write the epoch log here
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Evaluation protocol: frame or track
    #[arg(long)]
    pub protocol: Protocol,
    /// Dataset directory; for track, consecutive ids form sequences
    #[arg(long)]
    pub data: PathBuf,
    /// Trained checkpoint
    #[arg(long, required_unless_present = "oracle")]
    pub checkpoint: Option<PathBuf>,
    /// Echo the ground truth instead of running a network
    #[arg(long, conflicts_with = "checkpoint")]
    pub oracle: bool,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Frames per sequence for track (default: the whole dataset is one sequence)
    #[arg(long)]
    pub length: Option<usize>,
    /// Start every sequence from its exact ground-truth box
    #[arg(long)]
    pub no_perturb: bool,
    /// Also write the text report here
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Write per-frame records `frame_id,mean_err_mm,j0_err,...` here
    #[arg(long)]
    pub records: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Left image (binary PPM)
    #[arg(long)]
    pub left: PathBuf,
    /// Right image (binary PPM)
    #[arg(long)]
    pub right: PathBuf,
    /// Trained checkpoint
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Annotation file to build the crop from (with --id)
    #[arg(long, requires = "id", conflicts_with = "init")]
    pub gt: Option<PathBuf>,
    /// Sample id inside --gt
    #[arg(long)]
    pub id: Option<u64>,
    /// Explicit crop `u0,v0,w0,h0,d0`
    #[arg(long, required_unless_present = "gt")]
    pub init: Option<String>,
    /// Rig file; defaults to rig.cfg next to --gt
    #[arg(long)]
    pub rig: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Comma-separated variants
    #[arg(long, value_delimiter = ',', default_value = "D2S4,D4S4,D2S8,D4S8")]
    pub variants: Vec<Variant>,
    /// Comma-separated view modes
    #[arg(long, value_delimiter = ',', default_value = "mono,stereo")]
    pub views: Vec<ViewMode>,
    /// Square network input size
    #[arg(long)]
    pub size: Option<usize>,
    /// Timed runs per row
    #[arg(long, default_value_t = 20)]
    pub repetitions: usize,
    /// Untimed warm-up runs per row
    #[arg(long, default_value_t = 5)]
    pub burn_in: usize,
}

#[derive(Debug, Args)]
pub struct OverlayArgs {
    /// Dataset directory holding the sample
    #[arg(long)]
    pub data: PathBuf,
    /// Sample id
    #[arg(long)]
    pub id: u64,
    /// Predict with this checkpoint
    #[arg(long, required_unless_present = "predictions", conflicts_with = "predictions")]
    pub checkpoint: Option<PathBuf>,
    /// Or draw the `j,u,v,d,...` records printed by `infer`
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Output directory for `<id>_l_overlay.ppm` and `<id>_r_overlay.ppm`
    #[arg(long)]
    pub out: PathBuf,
}

/// Settings read from the config file; every table is optional.
#[derive(Debug, Clone, Default, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub net: NetConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub synth: SynthSection,
    pub sequences: SequenceConfig,
}

#[derive(Debug, Clone, Default, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub count: Option<usize>,
    pub first_id: Option<u64>,
    pub limits: SceneLimits,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {}", path.display(), e.message())))
    }
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidConfig(_) | Error::IllegalAugmentation(_) => 1,
        Error::CorruptDataset { .. }
        | Error::CorruptCheckpoint(_)
        | Error::Io { .. }
        | Error::InvalidRig(_)
        | Error::HandOutOfFrustum { .. }
        | Error::ShapeMismatch { .. }
        | Error::DegenerateBox => 2,
        Error::NonPositiveDisparity { .. }
        | Error::NonPositiveDepth { .. }
        | Error::EmptyHeatmap { .. }
        | Error::UnnormalizedTarget { .. }
        | Error::FrozenViolation(_)
        | Error::Numeric(_) => 3,
    }
}

/// The one-line error report.
pub fn error_line(kind: &str, code: i32, message: &str) -> String {
    format!("error: kind={kind} exit={code} message={message:?}")
}

/// Parses `args`, runs the command and returns the process exit code.
/// Standard output receives the command's primary output.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let first = e.to_string().lines().next().unwrap_or("").trim_start_matches("error: ").to_string();
            eprintln!("{}", error_line("Usage", 1, &first));
            return 1;
        }
    };
    let mut out = std::io::stdout().lock();
    match execute(&cli, &mut out) {
        Ok(code) => code,
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("{}", error_line(e.kind(), code, &e.to_string()));
            code
        }
    }
}

/// Runs a parsed command on a dedicated worker pool, writing primary output
/// to `out`. Returns the exit code for commands that report pass/fail.
pub fn execute(cli: &Cli, out: &mut dyn std::io::Write) -> Result<i32> {
    if cli.threads == 0 {
        return Err(Error::InvalidConfig("--threads must be at least 1".into()));
    }
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start {} worker threads: {e}", cli.threads)))?;
    let (text, code) = pool.install(|| {
        let mut text = String::new();
        let code = match &cli.command {
            Command::Synth(a) => cmd_synth(cli.seed, &file, a, &mut text).map(|_| 0),
            Command::Train(a) => cmd_train(cli.seed, &file, a, &mut text).map(|_| 0),
            Command::Eval(a) => cmd_eval(cli.seed, &file, a, &mut text).map(|_| 0),
            Command::Infer(a) => cmd_infer(&file, a, &mut text).map(|_| 0),
            Command::Bench(a) => cmd_bench(cli.seed, &file, a, &mut text).map(|_| 0),
            Command::Overlay(a) => cmd_overlay(&file, a, &mut text).map(|_| 0),
            Command::Selfcheck => {
                let report = selfcheck::run(cli.seed);
                text += &report.to_text();
                Ok(if report.all_passed() { 0 } else { 3 })
            }
        };
        (text, code)
    });
    let written = out.write_all(text.as_bytes()).and_then(|_| out.flush());
    let code = code?;
    written.map_err(|e| Error::io("<stdout>", e))?;
    Ok(code)
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn net_config(file: &FileConfig, model: &ModelArgs) -> Result<NetConfig> {
    let mut cfg = file.net;
    if let Some(v) = model.variant {
        cfg = cfg.with_variant(v);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_model(file: &FileConfig, model: &ModelArgs, checkpoint: &Path) -> Result<Estimator> {
    let cfg = net_config(file, model)?;
    let bytes = std::fs::read(checkpoint).map_err(|e| Error::io(checkpoint, e))?;
    let store = ParamStore::load_checkpoint(&bytes)?;
    let net = Network::bind(&cfg, &store)?;
    Ok(Estimator::new(net, store, model.views.unwrap_or(file.train.views)))
}

fn load_backgrounds(dir: &Path, rig: &StereoRig) -> Result<Vec<(ImageBuffer, ImageBuffer)>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut lefts: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with("_l.ppm")))
        .collect();
    lefts.sort();
    let mut pairs = Vec::with_capacity(lefts.len());
    for l in lefts {
        let name = l.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let r = l.with_file_name(name.replace("_l.ppm", "_r.ppm"));
        let (li, ri) = (read_ppm(&l)?, read_ppm(&r)?);
        for (img, p) in [(&li, &l), (&ri, &r)] {
            if img.width() != rig.width || img.height() != rig.height {
                return Err(Error::InvalidConfig(format!(
                    "background {} is {}x{}, rig is {}x{}",
                    p.display(),
                    img.width(),
                    img.height(),
                    rig.width,
                    rig.height
                )));
            }
        }
        pairs.push((li, ri));
    }
    if pairs.is_empty() {
        return Err(Error::InvalidConfig(format!("no `*_l.ppm` backgrounds in {}", dir.display())));
    }
    Ok(pairs)
}

fn cmd_synth(seed: u64, file: &FileConfig, a: &SynthArgs, out: &mut String) -> Result<()> {
    let rig = match &a.rig {
        Some(p) => StereoRig::load(p)?,
        None => StereoRig::default(),
    };
    let backgrounds = match &a.backgrounds {
        Some(dir) => Backgrounds::Pairs(load_backgrounds(dir, &rig)?),
        None => Backgrounds::Procedural,
    };
    let synth = SynthConfig {
        count: a.count.or(file.synth.count).unwrap_or(SynthConfig::default().count),
        seed,
        first_id: a.first_id.or(file.synth.first_id).unwrap_or(0),
        rig,
        limits: file.synth.limits.clone(),
        backgrounds,
        ..SynthConfig::default()
    };
    let samples = match a.sequences {
        Some(n) => {
            let cfg = SequenceConfig {
                sequences: n,
                length: a.length.unwrap_or(file.sequences.length),
                seed,
                ..file.sequences
            };
            make_sequences(&synth, &cfg)?.into_iter().flatten().collect()
        }
        None => synth.generate()?,
    };
    write_dataset(&samples, &a.out)?;
    let _ = writeln!(out, "wrote {} samples to {}", samples.len(), a.out.display());
    Ok(())
}

fn cmd_train(seed: u64, file: &FileConfig, a: &TrainArgs, out: &mut String) -> Result<()> {
    let net_cfg = net_config(file, &a.model)?;
    let mut cfg = file.train.clone();
    cfg.seed = seed;
    if let Some(p) = a.protocol {
        cfg.protocol = p;
    }
    if let Some(v) = a.model.views {
        cfg.views = v;
    }
    cfg.epochs = a.epochs.unwrap_or(cfg.epochs);
    cfg.lr = a.lr.unwrap_or(cfg.lr);
    cfg.batch_size = a.batch_size.unwrap_or(cfg.batch_size);
    cfg.max_steps = a.max_steps.or(cfg.max_steps);
    cfg.validate()?;
    if a.stage == Some(Stage::Stage3D) && a.init.is_none() {
        return Err(Error::InvalidConfig("--stage 3d needs --init with a stage-2d checkpoint".into()));
    }
    let train_set = read_dataset(&a.data)?;
    let val = match &a.val {
        Some(p) => read_dataset(p)?,
        None => Vec::new(),
    };
    let (mut store, net) = match &a.init {
        Some(p) => {
            let bytes = std::fs::read(p).map_err(|e| Error::io(p, e))?;
            let store = ParamStore::load_checkpoint(&bytes)?;
            let net = Network::bind(&net_cfg, &store)?;
            (store, net)
        }
        None => build_network::<f32>(&net_cfg, seed)?,
    };
    let log = match (a.joint, a.stage) {
        (true, _) => train_joint(&net, &mut store, &train_set, &val, &cfg)?,
        (false, Some(Stage::Stage2D)) => train_stage_2d(&net, &mut store, &train_set, &val, &cfg)?,
        (false, Some(Stage::Stage3D)) => train_stage_3d(&net, &mut store, &train_set, &val, &cfg)?,
        (false, None) => unreachable!("clap requires --stage or --joint"),
    };
    write_file(&a.out, &store.save_checkpoint())?;
    let text = log.to_text();
    if let Some(p) = &a.log {
        write_file(p, text.as_bytes())?;
    }
    *out += &text;
    let _ = writeln!(out, "# checkpoint {}", a.out.display());
    Ok(())
}

fn cmd_eval(seed: u64, file: &FileConfig, a: &EvalArgs, out: &mut String) -> Result<()> {
    let data = read_dataset(&a.data)?;
    let oracle;
    let model;
    let predictor: &dyn Predictor = if a.oracle {
        let cfg = net_config(file, &a.model)?;
        oracle = OraclePredictor {
            net_w: cfg.net_w,
            net_h: cfg.net_h,
        };
        &oracle
    } else {
        let path = a.checkpoint.as_deref().expect("clap requires --checkpoint without --oracle");
        model = load_model(file, &a.model, path)?;
        &model
    };
    let report: EvalReport = match a.protocol {
        Protocol::Frame => eval_frame(&data, predictor, &file.eval)?,
        Protocol::Track => {
            let length = a.length.unwrap_or(data.len()).max(1);
            let sequences: Vec<Vec<StereoSample>> = data.chunks(length).map(|c| c.to_vec()).collect();
            let cfg = TrackConfig {
                eval: file.eval,
                perturb_first: !a.no_perturb,
                seed,
            };
            eval_track(&sequences, predictor, &cfg)?
        }
    };
    let text = report.to_text();
    if let Some(p) = &a.report {
        write_file(p, text.as_bytes())?;
    }
    if let Some(p) = &a.records {
        write_file(p, report.to_records().as_bytes())?;
    }
    *out += &text;
    Ok(())
}

fn parse_init(s: &str) -> Result<CropInit> {
    let vals: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::InvalidConfig(format!("--init expects five numbers u0,v0,w0,h0,d0, got `{s}`")))?;
    match vals[..] {
        [u0, v0, w0, h0, d0] if w0 > 0.0 && h0 > 0.0 && d0 > 0.0 => Ok(CropInit::new(u0, v0, w0, h0, d0)),
        [_, _, _, _, _] => Err(Error::InvalidConfig("--init needs w0 > 0, h0 > 0 and d0 > 0".into())),
        _ => Err(Error::InvalidConfig(format!("--init expects five numbers u0,v0,w0,h0,d0, got `{s}`"))),
    }
}

/// Labels of one sample from an annotation file.
fn read_annotation(path: &Path, id: u64) -> Result<JointSetUvd> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut joints = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::corrupt(Some(id), format!("{}: malformed row {}", path.display(), n + 1));
        if f.len() != 5 {
            return Err(bad());
        }
        if f[0].trim().parse::<u64>().map_err(|_| bad())? != id {
            continue;
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
        joints.push(Uvd::new(num(f[2])?, num(f[3])?, num(f[4])?));
    }
    if joints.is_empty() {
        return Err(Error::corrupt(Some(id), format!("no rows for this id in {}", path.display())));
    }
    Ok(JointSetUvd(joints))
}

/// Runs the full chain on one pair and returns the global prediction.
fn infer_pair(est: &Estimator, left: &ImageBuffer, right: &ImageBuffer, init: &CropInit) -> Result<JointSetUvd> {
    let cfg = est.config();
    let (l, r) = preprocess_pair(left, right, init, cfg.net_w, cfg.net_h);
    let pred = est.forward(&l, &r)?.prediction.labels;
    Ok(denormalize(&pred, init, cfg.net_w, cfg.net_h))
}

fn cmd_infer(file: &FileConfig, a: &InferArgs, out: &mut String) -> Result<()> {
    let est = load_model(file, &a.model, &a.checkpoint)?;
    let (left, right) = (read_ppm(&a.left)?, read_ppm(&a.right)?);
    let init = match (&a.gt, &a.init) {
        (Some(gt), _) => init_from_joints(&read_annotation(gt, a.id.expect("clap requires --id"))?, file.eval.margin)?,
        (None, Some(s)) => parse_init(s)?,
        (None, None) => unreachable!("clap requires --gt or --init"),
    };
    let rig_path = match (&a.rig, &a.gt) {
        (Some(p), _) => p.clone(),
        (None, Some(gt)) => gt.with_file_name(RIG_FILE),
        (None, None) => return Err(Error::InvalidConfig("--rig is required with --init".into())),
    };
    let rig = StereoRig::load(&rig_path)?;
    let pred = infer_pair(&est, &left, &right, &init)?;
    *out += "j,u,v,d,x,y,z\n";
    for (j, p) in pred.iter().enumerate() {
        if !(p.d > 0.0) {
            return Err(Error::NonPositiveDisparity { joint: j });
        }
        let x = uvd_to_xyz_point(&rig, *p);
        let _ = writeln!(out, "{j},{},{},{},{},{},{}", p.u, p.v, p.d, x.x, x.y, x.z);
    }
    Ok(())
}

fn cmd_bench(seed: u64, file: &FileConfig, a: &BenchArgs, out: &mut String) -> Result<()> {
    let mut base = file.net;
    if let Some(s) = a.size {
        base.net_w = s;
        base.net_h = s;
    }
    for v in &a.variants {
        base.with_variant(*v).validate()?;
    }
    let table = bench_fps(&base, &a.variants, &a.views, a.repetitions, a.burn_in, seed)?;
    *out += &table.to_text();
    Ok(())
}

/// Predictions printed by `infer`: `j,u,v,d[,x,y,z]` after a header.
fn read_predictions(path: &Path) -> Result<Vec<Uvd>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<f64> = l
                .split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::InvalidConfig(format!("malformed prediction row `{l}`")))?;
            if f.len() < 4 {
                return Err(Error::InvalidConfig(format!("malformed prediction row `{l}`")));
            }
            Ok(Uvd::new(f[1], f[2], f[3]))
        })
        .collect()
}

const GT_COLOR: [f32; 3] = [1.0, 0.0, 0.0];
const PRED_COLOR: [f32; 3] = [0.0, 1.0, 0.0];

fn draw_line(img: &mut ImageBuffer, a: (f64, f64), b: (f64, f64), rgb: [f32; 3]) {
    let steps = ((b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil() as usize).max(1);
    for k in 0..=steps {
        let t = k as f64 / steps as f64;
        plot(img, a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1), rgb);
    }
}

fn plot(img: &mut ImageBuffer, x: f64, y: f64, rgb: [f32; 3]) {
    let (x, y) = (x.round(), y.round());
    if x >= 0.0 && y >= 0.0 && (x as usize) < img.width() && (y as usize) < img.height() {
        img.set_pixel(x as usize, y as usize, rgb);
    }
}

fn draw_dot(img: &mut ImageBuffer, x: f64, y: f64, rgb: [f32; 3]) {
    for dy in -1..=1 {
        for dx in -1..=1 {
            plot(img, x + dx as f64, y + dy as f64, rgb);
        }
    }
}

/// Skeleton lines and joint dots of `points` (one per joint) in `rgb`.
pub fn draw_skeleton(img: &mut ImageBuffer, points: &[(f64, f64)], rgb: [f32; 3]) {
    let dim = [rgb[0] * 0.6, rgb[1] * 0.6, rgb[2] * 0.6];
    for (j, parent) in PARENTS.iter().enumerate().take(points.len()) {
        if let Some(p) = parent.filter(|p| *p < points.len()) {
            draw_line(img, points[p], points[j], dim);
        }
    }
    for &(x, y) in points {
        draw_dot(img, x, y, rgb);
    }
}

/// Both views with ground truth (red) and prediction (green) drawn on top.
pub fn overlay_pair(sample: &StereoSample, prediction: &[Uvd]) -> (ImageBuffer, ImageBuffer) {
    let (mut l, mut r) = (sample.left.clone(), sample.right.clone());
    for (joints, rgb) in [(&sample.gt.0[..], GT_COLOR), (prediction, PRED_COLOR)] {
        let left: Vec<(f64, f64)> = joints.iter().map(|p| (p.u, p.v)).collect();
        let right: Vec<(f64, f64)> = joints.iter().map(|p| (p.u - p.d, p.v)).collect();
        draw_skeleton(&mut l, &left, rgb);
        draw_skeleton(&mut r, &right, rgb);
    }
    (l, r)
}

fn cmd_overlay(file: &FileConfig, a: &OverlayArgs, out: &mut String) -> Result<()> {
    let data = read_dataset(&a.data)?;
    let sample = data
        .iter()
        .find(|s| s.id == a.id)
        .ok_or_else(|| Error::corrupt(Some(a.id), format!("no such sample in {}", a.data.display())))?;
    let prediction = match (&a.checkpoint, &a.predictions) {
        (Some(ckpt), _) => {
            let est = load_model(file, &a.model, ckpt)?;
            let init = init_from_joints(&sample.gt, file.eval.margin)?;
            infer_pair(&est, &sample.left, &sample.right, &init)?.0
        }
        (None, Some(p)) => read_predictions(p)?,
        (None, None) => unreachable!("clap requires --checkpoint or --predictions"),
    };
    let (l, r) = overlay_pair(sample, &prediction);
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    for (img, side) in [(&l, 'l'), (&r, 'r')] {
        let path = a.out.join(format!("{:06}_{side}_overlay.ppm", a.id));
        write_ppm(&path, img)?;
        let _ = writeln!(out, "{}", path.display());
    }
    Ok(())
}
