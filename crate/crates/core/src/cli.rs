//! The `elda` command-line tool: `bg-build`, `track`, `eval` and `synth`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::background::{self, load_gray};
use crate::bench::{self, SyntheticSpec, Trajectory};
use crate::tracker::{BoundingBox, SearchArea, Tracker, TrackerConfig};

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "bmp", "pgm", "ppm"];
/// Ground-truth file name inside a sequence directory.
pub const GT_FILE: &str = "groundtruth_rect.txt";
/// Frame subdirectory inside a sequence directory, when present.
pub const FRAME_DIR: &str = "img";

#[derive(Debug, Parser)]
#[command(name = "elda", version, about = "Exemplar-LDA visual object tracker")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the offline background model from a directory of natural images.
    BgBuild(BgBuildArgs),
    /// Track one object through a directory of frames.
    Track(TrackArgs),
    /// Score a result file against ground truth.
    Eval(EvalArgs),
    /// Render a synthetic sequence with exact ground truth.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct BgBuildArgs {
    /// Directory of images (searched recursively).
    #[arg(long)]
    pub images: PathBuf,
    /// Output model file.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of random patches to harvest.
    #[arg(long, default_value_t = 100_000)]
    pub num_patches: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AreaArg {
    Disc,
    Square,
}

/// Options for `track`. Every option may also be given in `--config` as
/// `key = value` (option name with `_` for `-`); flags override the file.
#[derive(Debug, Args, Default)]
pub struct TrackArgs {
    /// Flat key=value configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Sequence directory: frames directly inside it or in its `img/` subdirectory.
    #[arg(long)]
    pub sequence: Option<PathBuf>,
    /// Ground truth, one `x,y,w,h` line per frame [default: <sequence>/groundtruth_rect.txt if present].
    #[arg(long)]
    pub groundtruth: Option<PathBuf>,
    /// Initial box `x,y,w,h` [default: the ground-truth line of the start frame].
    #[arg(long)]
    pub init_box: Option<String>,
    /// Offline background model file (from `bg-build`).
    #[arg(long)]
    pub background: Option<PathBuf>,
    /// Result file to write.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Optional per-frame error table (needs ground truth).
    #[arg(long)]
    pub per_frame: Option<PathBuf>,
    /// First frame to track, 1-based [default: 1].
    #[arg(long)]
    pub start_frame: Option<usize>,
    /// Detection radius R_d in pixels [default: 30].
    #[arg(long)]
    pub detect_radius: Option<f64>,
    /// Detection area shape [default: disc].
    #[arg(long, value_enum)]
    pub search_area: Option<AreaArg>,
    /// Inner radius of the negative ring (exclusive) [default: 5].
    #[arg(long)]
    pub ring_inner: Option<f64>,
    /// Outer radius of the negative ring (inclusive) [default: 30].
    #[arg(long)]
    pub ring_outer: Option<f64>,
    /// Online negatives per frame [default: 64].
    #[arg(long)]
    pub negatives_per_frame: Option<usize>,
    /// Candidate lattice stride in pixels [default: 2].
    #[arg(long)]
    pub search_stride: Option<usize>,
    /// Short-term window TM in frames [default: 500].
    #[arg(long)]
    pub window: Option<usize>,
    /// Frames between short-term admissions [default: 1].
    #[arg(long)]
    pub admission_interval: Option<usize>,
    /// Ridge on Σ [default: max(1e-4·trace(Σ)/d, 1e-8)].
    #[arg(long)]
    pub reg: Option<f64>,
    /// Scale on the effective count of each online negative batch [default: 1].
    #[arg(long)]
    pub online_weight_multiplier: Option<f64>,
    /// Seed for negative sampling [default: 0].
    #[arg(long)]
    pub rng_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Result file (`frame,x,y,w,h,score` lines, or `x,y,w,h` lines).
    #[arg(long)]
    pub results: PathBuf,
    #[arg(long)]
    pub groundtruth: PathBuf,
    /// Optional per-frame error table.
    #[arg(long)]
    pub per_frame: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MotionArg {
    Static,
    Linear,
    Lissajous,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output sequence directory (frames go to `img/`).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    #[arg(long, default_value_t = 320)]
    pub frame_width: usize,
    #[arg(long, default_value_t = 240)]
    pub frame_height: usize,
    #[arg(long, default_value_t = 40.0)]
    pub object_width: f64,
    #[arg(long, default_value_t = 40.0)]
    pub object_height: f64,
    #[arg(long, value_enum, default_value_t = MotionArg::Lissajous)]
    pub motion: MotionArg,
    /// Start centre `cx,cy` for static/linear motion [default: frame centre].
    #[arg(long)]
    pub start: Option<String>,
    /// Per-frame velocity `vx,vy` for linear motion.
    #[arg(long, default_value = "1,0")]
    pub velocity: String,
    /// Peak speed in px/frame for Lissajous motion.
    #[arg(long, default_value_t = 3.0)]
    pub speed: f64,
    /// Background noise standard deviation.
    #[arg(long, default_value_t = 0.02)]
    pub noise: f64,
    #[arg(long, default_value_t = 0.5)]
    pub background_level: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::BgBuild(a) => cmd_bg_build(&a),
        Command::Track(a) => cmd_track(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Synth(a) => cmd_synth(&a),
    }
}

fn is_image(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

fn collect_images(dir: &Path, recursive: bool, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))?;
    for entry in entries {
        let path = entry.with_context(|| format!("reading {}", dir.display()))?.path();
        if path.is_dir() {
            if recursive {
                collect_images(&path, true, out)?;
            }
        } else if is_image(&path) {
            out.push(path);
        }
    }
    Ok(())
}

/// Image files of `dir` in lexicographic order.
pub fn list_images(dir: &Path, recursive: bool) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    collect_images(dir, recursive, &mut out)?;
    out.sort();
    Ok(out)
}

/// Frames of a sequence: `dir/img/*` if that exists, else `dir/*`.
pub fn list_frames(sequence: &Path) -> Result<Vec<PathBuf>> {
    let sub = sequence.join(FRAME_DIR);
    let dir = if sub.is_dir() { sub } else { sequence.to_path_buf() };
    let frames = list_images(&dir, false)?;
    if frames.is_empty() {
        bail!("no frames found in {}", dir.display());
    }
    Ok(frames)
}

pub fn cmd_bg_build(a: &BgBuildArgs) -> Result<()> {
    let images = list_images(&a.images, true)?;
    if images.is_empty() {
        bail!("no images found in {}", a.images.display());
    }
    let model = background::build_offline(&images, a.num_patches, a.seed)?;
    background::save_model(&model, &a.out)?;
    println!(
        "wrote {} (d={}, n={}, from {} images)",
        a.out.display(),
        model.dim(),
        model.count(),
        images.len()
    );
    Ok(())
}

fn parse_pair(s: &str) -> Result<(f64, f64)> {
    let v = parse_list(s, 2)?;
    Ok((v[0], v[1]))
}

fn parse_list(s: &str, n: usize) -> Result<Vec<f64>> {
    let v = s
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|f| !f.is_empty())
        .map(|f| f.parse::<f64>().map_err(|_| anyhow!("not a number: {f:?}")))
        .collect::<Result<Vec<_>>>()?;
    if v.len() != n {
        bail!("expected {n} comma-separated numbers, got {s:?}");
    }
    Ok(v)
}

pub fn parse_box_arg(s: &str) -> Result<BoundingBox> {
    let v = parse_list(s, 4)?;
    Ok(BoundingBox::new(v[0], v[1], v[2], v[3])?)
}

/// Reads `key = value` lines; `#` starts a comment.
pub fn parse_config_file(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("config line {}: expected key = value", i + 1))?;
        out.insert(k.trim().replace('-', "_"), v.trim().to_string());
    }
    Ok(out)
}

/// Fully resolved `track` settings.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub tracker: TrackerConfig,
    pub sequence: PathBuf,
    pub groundtruth: Option<PathBuf>,
    pub init_box: Option<BoundingBox>,
    pub background: PathBuf,
    pub output: PathBuf,
    pub per_frame: Option<PathBuf>,
    pub start_frame: usize,
}

fn take<T: std::str::FromStr>(file: &mut BTreeMap<String, String>, key: &str) -> Result<Option<T>> {
    match file.remove(key) {
        None => Ok(None),
        Some(v) => v
            .parse::<T>()
            .map(Some)
            .map_err(|_| anyhow!("config key {key}: cannot parse {v:?}")),
    }
}

/// Defaults, then the config file, then explicit flags.
pub fn resolve_run_config(a: &TrackArgs) -> Result<RunConfig> {
    let mut file = match &a.config {
        Some(p) => parse_config_file(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
        None => BTreeMap::new(),
    };
    let mut t = TrackerConfig::default();
    macro_rules! field {
        ($name:ident) => {
            if let Some(v) = a.$name.clone().or(take(&mut file, stringify!($name))?) {
                t.$name = v;
            }
        };
    }
    field!(detect_radius);
    field!(ring_inner);
    field!(ring_outer);
    field!(negatives_per_frame);
    field!(search_stride);
    field!(window);
    field!(admission_interval);
    field!(online_weight_multiplier);
    field!(rng_seed);
    if let Some(r) = a.reg.or(take(&mut file, "reg")?) {
        t.reg = Some(r);
    }
    let area = match a.search_area {
        Some(v) => Some(v),
        None => match file.remove("search_area").as_deref() {
            None => None,
            Some("disc") => Some(AreaArg::Disc),
            Some("square") => Some(AreaArg::Square),
            Some(other) => bail!("config key search_area: expected disc or square, got {other:?}"),
        },
    };
    if let Some(area) = area {
        t.search_area = match area {
            AreaArg::Disc => SearchArea::Disc,
            AreaArg::Square => SearchArea::Square,
        };
    }
    t.validate()?;

    let path = |flag: &Option<PathBuf>, file: &mut BTreeMap<String, String>, key: &str| {
        flag.clone().or_else(|| file.remove(key).map(PathBuf::from))
    };
    let sequence = path(&a.sequence, &mut file, "sequence").ok_or_else(|| anyhow!("--sequence is required"))?;
    let background = path(&a.background, &mut file, "background").ok_or_else(|| anyhow!("--background is required"))?;
    let output = path(&a.output, &mut file, "output").ok_or_else(|| anyhow!("--output is required"))?;
    let per_frame = path(&a.per_frame, &mut file, "per_frame");
    let groundtruth = path(&a.groundtruth, &mut file, "groundtruth").or_else(|| {
        let p = sequence.join(GT_FILE);
        p.is_file().then_some(p)
    });
    let init_box = match a.init_box.clone().or_else(|| file.remove("init_box")) {
        Some(s) => Some(parse_box_arg(&s).context("init_box")?),
        None => None,
    };
    let start_frame = a.start_frame.or(take(&mut file, "start_frame")?).unwrap_or(1);
    if start_frame < 1 {
        bail!("start_frame is 1-based");
    }
    if let Some(k) = file.keys().next() {
        bail!("unknown config key {k:?}");
    }
    Ok(RunConfig {
        tracker: t,
        sequence,
        groundtruth,
        init_box,
        background,
        output,
        per_frame,
        start_frame,
    })
}

pub fn cmd_track(a: &TrackArgs) -> Result<()> {
    let rc = resolve_run_config(a)?;
    let frames = list_frames(&rc.sequence)?;
    let gt = match &rc.groundtruth {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let gt = bench::parse_ground_truth(&text).with_context(|| p.display().to_string())?;
            if gt.len() != frames.len() {
                bail!(
                    "{} has {} boxes but the sequence has {} frames",
                    p.display(),
                    gt.len(),
                    frames.len()
                );
            }
            Some(gt)
        }
        None => None,
    };
    if rc.start_frame > frames.len() {
        bail!("start_frame {} is past the last frame ({})", rc.start_frame, frames.len());
    }
    let init_box = match (rc.init_box, &gt) {
        (Some(b), _) => b,
        (None, Some(gt)) => gt[rc.start_frame - 1],
        (None, None) => bail!("need --init-box or ground truth"),
    };
    let offline = background::load_model(&rc.background)?;

    let first = rc.start_frame - 1;
    let frame1 = load_gray(&frames[first])?;
    let (mut tracker, r1) = Tracker::init(&frame1, init_box, &offline, rc.tracker.clone())?;
    let mut results = vec![bench::TrackResult { frame: rc.start_frame, ..r1 }];
    for (i, path) in frames.iter().enumerate().skip(first + 1) {
        let frame = load_gray(path)?;
        let r = tracker
            .track(&frame)
            .with_context(|| format!("tracking {}", path.display()))?;
        results.push(bench::TrackResult { frame: i + 1, ..r });
    }
    fs::write(&rc.output, bench::format_results(&results))
        .with_context(|| format!("writing {}", rc.output.display()))?;

    if let Some(gt) = gt {
        let (rs, gs) = bench::align(&results, &gt)?;
        let rep = bench::report(&rs, &gs)?;
        print!("{}", rep.summary_csv());
        if let Some(p) = &rc.per_frame {
            fs::write(p, rep.per_frame_csv(rc.start_frame)).with_context(|| format!("writing {}", p.display()))?;
        }
    }
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let rtext = fs::read_to_string(&a.results).with_context(|| format!("reading {}", a.results.display()))?;
    let results = bench::parse_results(&rtext).with_context(|| a.results.display().to_string())?;
    let gtext = fs::read_to_string(&a.groundtruth).with_context(|| format!("reading {}", a.groundtruth.display()))?;
    let gt = bench::parse_ground_truth(&gtext).with_context(|| a.groundtruth.display().to_string())?;
    let (rs, gs) = bench::align(&results, &gt)?;
    let rep = bench::report(&rs, &gs)?;
    print!("{}", rep.summary_csv());
    if let Some(p) = &a.per_frame {
        let first = results.first().map(|r| r.frame).unwrap_or(1);
        fs::write(p, rep.per_frame_csv(first)).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

pub fn synth_spec(a: &SynthArgs) -> Result<SyntheticSpec> {
    let frame_size = (a.frame_width, a.frame_height);
    let object_size = (a.object_width, a.object_height);
    let default_start = (a.frame_width as f64 / 2.0, a.frame_height as f64 / 2.0);
    let start = a.start.as_deref().map(parse_pair).transpose()?.unwrap_or(default_start);
    let trajectory = match a.motion {
        MotionArg::Static => Trajectory::Static { center: start },
        MotionArg::Linear => Trajectory::Linear {
            start,
            velocity: parse_pair(&a.velocity)?,
        },
        MotionArg::Lissajous => bench::bounded_speed_lissajous(frame_size, object_size, a.speed, 2.0),
    };
    Ok(SyntheticSpec {
        texture_seed: a.seed,
        noise_seed: a.seed.wrapping_add(0x9e37_79b9),
        trajectory,
        noise: a.noise,
        background_level: a.background_level,
        frame_size,
        object_size,
        count: a.count,
    })
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let spec = synth_spec(a)?;
    let (frames, gt) = bench::make_synthetic_sequence(&spec)?;
    let img_dir = a.out.join(FRAME_DIR);
    fs::create_dir_all(&img_dir).with_context(|| format!("creating {}", img_dir.display()))?;
    let digits = frames.len().to_string().len().max(4);
    for (i, f) in frames.iter().enumerate() {
        let p = img_dir.join(format!("{:0digits$}.png", i + 1));
        f.to_luma8()
            .save(&p)
            .with_context(|| format!("writing {}", p.display()))?;
    }
    let gt_path = a.out.join(GT_FILE);
    fs::write(&gt_path, bench::format_ground_truth(&gt)).with_context(|| format!("writing {}", gt_path.display()))?;
    println!("wrote {} frames and {}", frames.len(), gt_path.display());
    Ok(())
}
