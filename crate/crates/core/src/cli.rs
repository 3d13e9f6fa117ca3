//! The `lvic` command line.
//!
//! Every subcommand prints one JSON object on stdout and human-readable
//! progress on stderr. Errors exit with status 1. Output files are written to
//! a temporary file and renamed into place.

use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{LvicError, Result};
use crate::fusion::{FusionParams, DEFAULT_EMBED_DIM};
use crate::geometry::CameraRig;
use crate::imagery::{DepthMap, FeatureMap, DEFAULT_FEATURE_DIM, DEFAULT_STRIDE};
use crate::io::{self, Embeddings, IoLimits};
use crate::painter::{PaintLayout, PaintOptions, PaintedCloud, Painter, PointCloud};
use crate::synth::{
    depth_file, feature_file, generate_scene, run_experiment, write_scene, NoiseLevel,
    SceneConfig, SYNTH_CHANNELS,
};

#[derive(Debug, Parser)]
#[command(name = "lvic", version, about = "Depth-aware LiDAR point painting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Paint a raw point cloud from per-camera depth and feature maps.
    Paint(PaintArgs),
    /// Generate a synthetic scene and write it as a painting fixture.
    Synth(SynthArgs),
    /// Run the calibration-noise experiment and write a CSV report.
    Experiment(ExperimentArgs),
    /// Embed a painted cloud with the fusion network.
    Embed(EmbedArgs),
    /// Check that files decode cleanly and report their dimensions.
    Validate(ValidateArgs),
    /// Time a full painting run and hash its output.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ThreadArgs {
    /// Worker threads (defaults to available parallelism).
    #[arg(long, env = "LVIC_THREADS")]
    pub threads: Option<NonZeroUsize>,
}

impl ThreadArgs {
    fn options(&self) -> PaintOptions {
        PaintOptions {
            threads: self.threads.map(NonZeroUsize::get),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct FixtureArgs {
    /// Raw little-endian f32 point cloud, `channels` values per point.
    #[arg(long)]
    pub cloud: PathBuf,
    /// Values per point in the raw cloud (x, y, z first).
    #[arg(long, default_value_t = SYNTH_CHANNELS, value_parser = channel_count)]
    pub channels: usize,
    /// Calibration JSON.
    #[arg(long)]
    pub calib: PathBuf,
    /// Directory holding `camera_<id>.lvdm` depth maps.
    #[arg(long)]
    pub depth_dir: PathBuf,
    /// Directory holding `camera_<id>.lvfm` feature maps.
    #[arg(long)]
    pub feat_dir: PathBuf,
    /// Texture feature dimension expected in every feature map.
    #[arg(long, default_value_t = DEFAULT_FEATURE_DIM, value_parser = positive)]
    pub dim: usize,
    /// Feature-map stride expected in every feature map.
    #[arg(long, default_value_t = DEFAULT_STRIDE, value_parser = positive)]
    pub stride: usize,
}

#[derive(Debug, Args)]
pub struct PaintArgs {
    #[command(flatten)]
    pub fixture: FixtureArgs,
    /// Output painted cloud (LVPC).
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub threads: ThreadArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SceneArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Number of LiDAR points.
    #[arg(long, default_value_t = 50_000, value_parser = positive)]
    pub points: usize,
    #[arg(long, default_value_t = 6, value_parser = positive)]
    pub cameras: usize,
    #[arg(long, default_value_t = 1600, value_parser = clap::value_parser!(u32).range(1..))]
    pub width: u32,
    #[arg(long, default_value_t = 900, value_parser = clap::value_parser!(u32).range(1..))]
    pub height: u32,
    #[arg(long, default_value_t = DEFAULT_FEATURE_DIM, value_parser = positive)]
    pub dim: usize,
    #[arg(long, default_value_t = DEFAULT_STRIDE, value_parser = positive)]
    pub stride: usize,
}

impl SceneArgs {
    fn config(&self) -> SceneConfig {
        SceneConfig {
            seed: self.seed,
            n_points: self.points,
            n_cameras: self.cameras,
            width: self.width,
            height: self.height,
            feature_dim: self.dim,
            stride: self.stride,
            ..SceneConfig::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub scene: SceneArgs,
    /// Output directory for cloud.bin, calib.json, depth/ and feat/.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[command(flatten)]
    pub scene: SceneArgs,
    /// Comma-separated noise levels, each `rot_deg` or `rot_deg:trans_m`.
    #[arg(long, default_value = "0,0.5,1,2", value_parser = parse_noise)]
    pub noise: NoiseSchedule,
    /// |delta_z| above this (metres) counts as an exceedance.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Output CSV report.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    /// Painted cloud (LVPC) to embed.
    #[arg(long)]
    pub painted: PathBuf,
    /// Fusion weights (LVFW). Without it, weights are initialised from `--seed`.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, default_value_t = 0, conflicts_with = "weights")]
    pub seed: u64,
    /// Embedding size for freshly initialised weights.
    #[arg(long, default_value_t = DEFAULT_EMBED_DIM, value_parser = positive, conflicts_with = "weights")]
    pub embed_dim: usize,
    /// Also write the initialised weights here.
    #[arg(long, conflicts_with = "weights")]
    pub save_weights: Option<PathBuf>,
    /// Output embeddings (LVEM).
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub threads: ThreadArgs,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Headered artifacts, calibration JSON, or raw clouds (with --channels).
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
    /// Treat files without a known header as raw clouds with this many channels.
    #[arg(long, value_parser = channel_count)]
    pub channels: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Existing fixture directory as written by `lvic synth`.
    #[arg(long, conflicts_with_all = ["points", "seed"])]
    pub fixture: Option<PathBuf>,
    /// Points in the generated benchmark scene.
    #[arg(long, default_value_t = 1_000_000, value_parser = positive)]
    pub points: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Optional painted output (LVPC).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub threads: ThreadArgs,
}

fn channel_count(s: &str) -> std::result::Result<usize, String> {
    match s.parse::<usize>() {
        Ok(c) if c >= 3 => Ok(c),
        Ok(c) => Err(format!("{c} channels is too few; x, y and z are required")),
        Err(e) => Err(e.to_string()),
    }
}

fn positive(s: &str) -> std::result::Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(v) => Ok(v),
        Err(e) => Err(e.to_string()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule(pub Vec<NoiseLevel>);

/// Parses `0,0.5,1,2` or `0:0,1:0.05`.
pub fn parse_noise(s: &str) -> std::result::Result<NoiseSchedule, String> {
    let levels = s
        .split(',')
        .map(|item| {
            let item = item.trim();
            let (rot, trans) = item.split_once(':').unwrap_or((item, "0"));
            let num = |x: &str| {
                x.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite() && *v >= 0.0)
                    .ok_or_else(|| format!("bad noise level {item:?}: expected non-negative numbers"))
            };
            Ok(NoiseLevel {
                rot_deg: num(rot)?,
                trans_m: num(trans)?,
            })
        })
        .collect::<std::result::Result<Vec<_>, String>>()?;
    if levels.len() < 2 {
        return Err("the noise schedule needs at least two levels".into());
    }
    if !levels.iter().any(|l| l.rot_deg == 0.0 && l.trans_m == 0.0) {
        return Err("the noise schedule must include the zero level".into());
    }
    Ok(NoiseSchedule(levels))
}

/// Parses arguments, runs the command and maps the outcome to an exit code.
pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::FAILURE
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&cli.command) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

pub fn run(command: &Command) -> Result<Value> {
    match command {
        Command::Paint(a) => cmd_paint(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Experiment(a) => cmd_experiment(a),
        Command::Embed(a) => cmd_embed(a),
        Command::Validate(a) => cmd_validate(a),
        Command::Bench(a) => cmd_bench(a),
    }
}

struct Fixture {
    cloud: PointCloud,
    rig: CameraRig,
    depths: Vec<DepthMap>,
    features: Vec<FeatureMap>,
}

/// Loads the calibration, then every camera's maps, then the cloud. Feature
/// dimensions are checked against the flags as soon as each map is read.
fn load_fixture(a: &FixtureArgs) -> Result<Fixture> {
    let rig = io::read_calibration(&a.calib)?;
    let mut depths = Vec::with_capacity(rig.len());
    let mut features = Vec::with_capacity(rig.len());
    for cam in rig.cameras() {
        let id = cam.id;
        let depth = io::read_depth(&depth_file(&a.depth_dir, id)).map_err(|e| e.in_camera(id))?;
        let feat = io::read_features(&feature_file(&a.feat_dir, id)).map_err(|e| e.in_camera(id))?;
        if feat.dim() != a.dim {
            return Err(LvicError::Config(format!(
                "feature map has d={} but --dim is {}",
                feat.dim(),
                a.dim
            ))
            .in_camera(id));
        }
        if feat.stride() != a.stride {
            return Err(LvicError::Config(format!(
                "feature map has stride {} but --stride is {}",
                feat.stride(),
                a.stride
            ))
            .in_camera(id));
        }
        depths.push(depth);
        features.push(feat);
    }
    let cloud = io::read_cloud(&a.cloud, a.channels)?;
    Ok(Fixture {
        cloud,
        rig,
        depths,
        features,
    })
}

fn paint_summary(p: &PaintedCloud, n_cameras: usize) -> Value {
    let n = p.len();
    let painted = p.painted_count();
    json!({
        "n": n,
        "painted": painted,
        "painted_fraction": if n == 0 { 0.0 } else { painted as f64 / n as f64 },
        "per_camera": p.per_camera_counts(n_cameras),
    })
}

fn cmd_paint(a: &PaintArgs) -> Result<Value> {
    let fx = load_fixture(&a.fixture)?;
    let layout = PaintLayout::new(a.fixture.dim);
    let painted = Painter::new(&fx.rig, &fx.depths, &fx.features, layout)?
        .paint_cloud(&fx.cloud, a.threads.options())?;
    io::write_painted(&a.out, &painted)?;
    let mut summary = paint_summary(&painted, fx.rig.len());
    summary["out"] = json!(a.out);
    eprintln!(
        "painted {} of {} points -> {}",
        painted.painted_count(),
        painted.len(),
        a.out.display()
    );
    Ok(summary)
}

fn cmd_synth(a: &SynthArgs) -> Result<Value> {
    let cfg = a.scene.config();
    cfg.validate()?;
    let scene = generate_scene(&cfg)?;
    write_scene(&scene, &a.out)?;
    eprintln!(
        "wrote {} points and {} cameras to {}",
        scene.cloud.len(),
        scene.rig.len(),
        a.out.display()
    );
    Ok(json!({
        "out": a.out,
        "seed": cfg.seed,
        "n_points": scene.cloud.len(),
        "channels": scene.cloud.channels(),
        "n_cameras": scene.rig.len(),
        "width": cfg.width,
        "height": cfg.height,
        "dim": cfg.feature_dim,
        "stride": cfg.stride,
    }))
}

fn cmd_experiment(a: &ExperimentArgs) -> Result<Value> {
    let cfg = SceneConfig {
        noise: a.noise.0.clone(),
        threshold: a.threshold,
        ..a.scene.config()
    };
    cfg.validate()?;
    let scene = generate_scene(&cfg)?;
    let report = run_experiment(&cfg, &scene)?;
    io::write_atomic(&a.out, report.to_csv().as_bytes())?;
    eprint!("{}", report.to_csv());
    Ok(json!({
        "out": a.out,
        "seed": report.seed,
        "threshold": report.threshold,
        "strictly_increasing": report.strictly_increasing(),
        "rows": report.rows,
    }))
}

fn cmd_embed(a: &EmbedArgs) -> Result<Value> {
    let painted = io::read_painted(&a.painted)?;
    let d = painted.layout().texture_dim;
    let params = match &a.weights {
        Some(path) => {
            let p = io::read_weights(path)?;
            if p.texture_dim != d {
                return Err(LvicError::Config(format!(
                    "weights expect d={} but the painted cloud has d={d}",
                    p.texture_dim
                ))
                .in_file(path));
            }
            p
        }
        None => {
            // round to the stored precision so a reload embeds identically
            let p = FusionParams::init(d, a.embed_dim, a.seed);
            let flat: Vec<f64> = p.flatten().iter().map(|&x| x as f32 as f64).collect();
            p.unflatten(&flat)?
        }
    };
    if let Some(path) = &a.save_weights {
        io::write_weights(path, &params)?;
    }
    let values = match a.threads.options().threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| LvicError::Config(format!("thread pool: {e}")))?
            .install(|| params.embed_cloud(&painted))?,
        None => params.embed_cloud(&painted)?,
    };
    let emb = Embeddings {
        embed_dim: params.embed_dim,
        values,
    };
    io::write_embeddings(&a.out, &emb)?;
    eprintln!("embedded {} points into e={} -> {}", emb.len(), emb.embed_dim, a.out.display());
    Ok(json!({ "out": a.out, "n": emb.len(), "e": emb.embed_dim }))
}

fn validate_file(path: &Path, channels: Option<usize>) -> Result<Value> {
    let bytes = io::read_bytes(path, IoLimits::default())?;
    if io::FileKind::detect(&bytes).is_some() {
        let s = io::validate_bytes(&bytes, IoLimits::default()).map_err(|e| e.in_file(path))?;
        let dims: serde_json::Map<String, Value> =
            s.dims.iter().map(|(k, v)| (k.to_string(), json!(v))).collect();
        return Ok(json!({ "path": path, "kind": s.kind, "dims": dims }));
    }
    if bytes.first() == Some(&b'{') {
        let text = std::str::from_utf8(&bytes)
            .map_err(|e| LvicError::format("calibration", e.to_string()).in_file(path))?;
        let rig = io::parse_calibration(text).map_err(|e| e.in_file(path))?;
        return Ok(json!({ "path": path, "kind": "calibration", "dims": { "cameras": rig.len() } }));
    }
    match channels {
        Some(c) => {
            let cloud = io::decode_cloud(&bytes, c).map_err(|e| e.in_file(path))?;
            Ok(json!({ "path": path, "kind": "cloud", "dims": { "n": cloud.len(), "c": c } }))
        }
        None => Err(LvicError::format(
            "magic",
            "no known header; pass --channels to validate a raw point cloud",
        )
        .in_file(path)),
    }
}

fn cmd_validate(a: &ValidateArgs) -> Result<Value> {
    let files = a
        .files
        .iter()
        .map(|p| {
            let v = validate_file(p, a.channels)?;
            eprintln!("ok  {} ({})", p.display(), v["kind"].as_str().unwrap_or("?"));
            Ok(v)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(json!({ "files": files }))
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn cmd_bench(a: &BenchArgs) -> Result<Value> {
    let t = Instant::now();
    let (fx, source) = match &a.fixture {
        Some(dir) => {
            let args = FixtureArgs {
                cloud: dir.join("cloud.bin"),
                channels: SYNTH_CHANNELS,
                calib: dir.join("calib.json"),
                depth_dir: dir.join("depth"),
                feat_dir: dir.join("feat"),
                dim: DEFAULT_FEATURE_DIM,
                stride: DEFAULT_STRIDE,
            };
            (load_fixture(&args)?, "fixture")
        }
        None => {
            let cfg = SceneConfig {
                seed: a.seed,
                n_points: a.points,
                ..SceneConfig::default()
            };
            let s = generate_scene(&cfg)?;
            let fx = Fixture {
                cloud: s.cloud,
                rig: s.rig,
                depths: s.depths,
                features: s.features,
            };
            (fx, "synthetic")
        }
    };
    let load_ms = ms(t);

    let layout = PaintLayout::new(fx.features.first().map_or(DEFAULT_FEATURE_DIM, |f| f.dim()));
    let t = Instant::now();
    let painted = Painter::new(&fx.rig, &fx.depths, &fx.features, layout)?
        .paint_cloud(&fx.cloud, a.threads.options())?;
    let paint_secs = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let bytes = io::encode_painted(&painted)?;
    let hash = hex::encode(Sha256::digest(&bytes));
    let hash_ms = ms(t);

    let t = Instant::now();
    if let Some(out) = &a.out {
        io::write_atomic(out, &bytes)?;
    }
    let write_ms = ms(t);

    let n = painted.len();
    let points_per_sec = if paint_secs > 0.0 { n as f64 / paint_secs } else { f64::INFINITY };
    eprintln!(
        "painted {n} points with {} cameras in {:.1} ms ({:.0} points/s)",
        fx.rig.len(),
        paint_secs * 1e3,
        points_per_sec
    );
    let mut summary = paint_summary(&painted, fx.rig.len());
    summary["source"] = json!(source);
    summary["cameras"] = json!(fx.rig.len());
    summary["threads"] = json!(a
        .threads
        .threads
        .map_or_else(rayon::current_num_threads, NonZeroUsize::get));
    summary["points_per_sec"] = json!(points_per_sec);
    summary["timings_ms"] = json!({
        "load": load_ms,
        "paint": paint_secs * 1e3,
        "hash": hash_ms,
        "write": write_ms,
    });
    summary["sha256"] = json!(hash);
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn noise_schedule_parsing() {
        let s = parse_noise("0, 0.5,1:0.1").unwrap();
        assert_eq!(
            s.0,
            vec![
                NoiseLevel { rot_deg: 0.0, trans_m: 0.0 },
                NoiseLevel { rot_deg: 0.5, trans_m: 0.0 },
                NoiseLevel { rot_deg: 1.0, trans_m: 0.1 },
            ]
        );
        assert!(parse_noise("1,2").is_err());
        assert!(parse_noise("0").is_err());
        assert!(parse_noise("0,-1").is_err());
        assert!(parse_noise("0,abc").is_err());
    }

    #[test]
    fn zero_dim_is_rejected() {
        let r = Cli::try_parse_from([
            "lvic", "paint", "--cloud", "c", "--calib", "k", "--depth-dir", "d", "--feat-dir", "f",
            "--out", "o", "--dim", "0",
        ]);
        assert!(r.is_err());
    }

    #[test]
    fn contradictory_embed_flags_are_rejected() {
        let r = Cli::try_parse_from([
            "lvic", "embed", "--painted", "p", "--weights", "w", "--seed", "3", "--out", "o",
        ]);
        assert!(r.is_err());
    }
}
