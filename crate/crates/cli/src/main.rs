//! `gsavatar`: synthetic scenes, two-stage avatar fitting, rendering,
//! reenactment, and frame metrics.
//!
//! Subcommands read their inputs read-only and confine writes to the
//! directory given with `--out`. Failures come back as a single
//! `error: ...` line on stderr and a nonzero exit code. Runs are
//! deterministic for a fixed seed; `GSAVATAR_WORKERS` picks the
//! rasterizer worker count without affecting results. All other knobs
//! live in the TOML config printed by `--print-config`.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use nalgebra::Vector3;
use rand::Rng;

use gsavatar_core::avatar::assemble_avatar;
use gsavatar_core::control::expression_displacements;
use gsavatar_core::geometry::{extract_surface, icp_align, IcpConfig};
use gsavatar_core::io::{
    load_avatar, load_frame_png, load_scene, make_synthetic_scene, save_avatar, save_frame_png,
    save_mesh, save_scene, PipelineConfig, SyntheticSpec,
};
use gsavatar_core::math::{seeded_rng, Quat};
use gsavatar_core::render::{rasterize, SplatInputs};
use gsavatar_core::train::{fit_stage1, fit_stage2, psnr, ssim, Stage1Problem, Stage2Problem};
use gsavatar_core::{FitTrace, GaussianSet, ResidualFieldBank, SdfGrid};

#[derive(Parser)]
#[command(
    name = "gsavatar",
    version,
    about = "Gaussian head avatars: synthesize scenes, fit, render, reenact, compare",
    arg_required_else_help = true
)]
struct Cli {
    /// Print the default configuration as TOML and exit.
    #[arg(long)]
    print_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a deterministic synthetic scene plus its ground-truth avatar.
    MakeScene(MakeSceneArgs),
    /// Fit the signed-distance lattice to the masked frames of a scene.
    FitGeometry(FitGeometryArgs),
    /// Fit a Gaussian avatar to the frames of a scene.
    FitAvatar(FitAvatarArgs),
    /// Render an avatar under a scene's cameras and per-frame drivers.
    Render(RenderArgs),
    /// Drive an avatar with the camera and driver track of another scene.
    Reenact(ReenactArgs),
    /// PSNR and SSIM between equally named PNG frames of two directories.
    Metrics(MetricsArgs),
    /// Per-frame control selection and split candidacy; writes nothing.
    SplitReport(SplitReportArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML configuration; missing keys take their defaults.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Print the effective configuration as TOML and exit without running.
    #[arg(long)]
    print_config: bool,
}

impl ConfigArgs {
    /// `None` means the configuration was printed and the run should stop.
    fn resolve(&self) -> Result<Option<PipelineConfig>> {
        let config = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        config.validate()?;
        if self.print_config {
            print_toml(&config)?;
            return Ok(None);
        }
        Ok(Some(config))
    }
}

#[derive(Args)]
struct MakeSceneArgs {
    /// Output directory for the scene.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Ground-truth geometry: "sphere" or "blendshape-head".
    #[arg(long, default_value = "sphere")]
    shape: String,
    /// Number of ground-truth Gaussians.
    #[arg(long, default_value_t = 200)]
    n: usize,
    /// Number of camera viewpoints.
    #[arg(long, default_value_t = 4)]
    views: usize,
    /// Number of frames; defaults to one per view.
    #[arg(long)]
    frames: Option<usize>,
    /// Frame width in pixels.
    #[arg(long, default_value_t = 64)]
    width: usize,
    /// Frame height in pixels.
    #[arg(long, default_value_t = 64)]
    height: usize,
    /// Expression-code dimension of the synthetic track.
    #[arg(long, default_value_t = 4)]
    expression_dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct FitGeometryArgs {
    /// Scene directory; every frame needs a mask.
    #[arg(long, value_name = "DIR")]
    scene: PathBuf,
    /// Output directory for mesh.obj and the fit trace.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Lattice resolution per axis.
    #[arg(long, default_value_t = 16)]
    resolution: usize,
    /// Skip the rigid pre-alignment of the prior mesh.
    #[arg(long)]
    no_align: bool,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct FitAvatarArgs {
    /// Scene directory.
    #[arg(long, value_name = "DIR")]
    scene: PathBuf,
    /// Output directory for avatar.json and the fit trace.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Starting avatar; a fresh spherical initialization otherwise.
    #[arg(long, value_name = "FILE")]
    init: Option<PathBuf>,
    /// Gaussian count for the fresh initialization.
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct RenderArgs {
    /// Avatar file to render.
    #[arg(long, value_name = "FILE")]
    avatar: PathBuf,
    /// Scene directory providing cameras and per-frame drivers.
    #[arg(long, value_name = "DIR")]
    scene: PathBuf,
    /// Output directory for the rendered PNG frames.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct ReenactArgs {
    /// Avatar file to drive.
    #[arg(long, value_name = "FILE")]
    avatar: PathBuf,
    /// Scene directory whose cameras and driver track steer the avatar.
    #[arg(long, value_name = "DIR")]
    track: PathBuf,
    /// Output directory for the rendered PNG frames.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct MetricsArgs {
    /// First directory of PNG frames.
    #[arg(long, value_name = "DIR")]
    a: PathBuf,
    /// Second directory of PNG frames.
    #[arg(long, value_name = "DIR")]
    b: PathBuf,
}

#[derive(Args)]
struct SplitReportArgs {
    /// Avatar file to inspect.
    #[arg(long, value_name = "FILE")]
    avatar: PathBuf,
    /// Scene directory providing the driver track.
    #[arg(long, value_name = "DIR")]
    scene: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    init_workers()?;
    if cli.print_config {
        return print_toml(&PipelineConfig::default());
    }
    let Some(command) = cli.command else {
        bail!("a subcommand is required; see --help");
    };
    match command {
        Command::MakeScene(args) => make_scene(args),
        Command::FitGeometry(args) => fit_geometry(args),
        Command::FitAvatar(args) => fit_avatar(args),
        Command::Render(args) => {
            let Some(config) = args.config.resolve()? else {
                return Ok(());
            };
            render_track(&args.avatar, &args.scene, &args.out, &config)
        }
        Command::Reenact(args) => {
            let Some(config) = args.config.resolve()? else {
                return Ok(());
            };
            render_track(&args.avatar, &args.track, &args.out, &config)
        }
        Command::Metrics(args) => metrics(args),
        Command::SplitReport(args) => split_report(args),
    }
}

/// Caps the rasterizer worker pool from `GSAVATAR_WORKERS`; the default
/// pool sizes itself to the machine.
fn init_workers() -> Result<()> {
    let Ok(text) = std::env::var("GSAVATAR_WORKERS") else {
        return Ok(());
    };
    let workers: usize = text
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .with_context(|| format!("GSAVATAR_WORKERS must be a positive integer, got {text:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build_global()
        .context("initializing the worker pool")
}

fn print_toml(config: &PipelineConfig) -> Result<()> {
    let text = config.to_toml_string()?;
    print!("{text}");
    if !text.ends_with('\n') {
        println!();
    }
    Ok(())
}

fn make_scene(args: MakeSceneArgs) -> Result<()> {
    let mut spec = SyntheticSpec::new(args.shape.parse()?, args.n, args.views, args.seed);
    spec.width = args.width;
    spec.height = args.height;
    spec.expression_dim = args.expression_dim;
    if let Some(frames) = args.frames {
        spec.frames = frames;
    }
    let (bundle, truth) = make_synthetic_scene(&spec)?;
    save_scene(&bundle, &args.out)?;
    save_avatar(&truth.gaussians, &truth.bank, &args.out.join("truth.avatar.json"))?;
    println!(
        "wrote {} frames at {}x{} and a {}-gaussian truth avatar to {}",
        bundle.frames.len(),
        spec.width,
        spec.height,
        truth.gaussians.len(),
        args.out.display()
    );
    Ok(())
}

fn fit_geometry(args: FitGeometryArgs) -> Result<()> {
    let Some(config) = args.config.resolve()? else {
        return Ok(());
    };
    let bundle = load_scene(&args.scene)?;
    let views = bundle.stage1_views()?;
    let half = Vector3::repeat(0.6);
    let grid = SdfGrid::from_fn(args.resolution, -half, half, 3, |p| p.norm() - 0.3)?;
    let prior = match (&bundle.prior_mesh, args.no_align) {
        (Some(mesh), false) => {
            let target = extract_surface(&grid);
            let (transform, rms) = icp_align(mesh, &target, &IcpConfig::default())?;
            let mut aligned = mesh.clone();
            for vertex in &mut aligned.vertices {
                *vertex = transform.apply_point(*vertex);
            }
            println!("pre-aligned prior mesh to the initial surface, rms {rms:.6}");
            Some(aligned)
        }
        (mesh, _) => mesh.clone(),
    };
    let mut problem = Stage1Problem {
        grid,
        prior,
        views,
        landmarks: bundle.landmarks.clone(),
        background: bundle.background,
    };
    let (mesh, trace) = fit_stage1(&mut problem, &config.stage1, &config.optim)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    save_mesh(&mesh, &args.out.join("mesh.obj"))?;
    trace.write_csv(&args.out.join("trace.csv"))?;
    trace.write_json(&args.out.join("trace.json"))?;
    print_fit_summary("geometry", &trace);
    println!(
        "wrote a mesh with {} vertices, {} triangles to {}",
        mesh.vertices.len(),
        mesh.triangles.len(),
        args.out.display()
    );
    Ok(())
}

fn fit_avatar(args: FitAvatarArgs) -> Result<()> {
    let Some(config) = args.config.resolve()? else {
        return Ok(());
    };
    let bundle = load_scene(&args.scene)?;
    let (gaussians, bank) = match &args.init {
        Some(path) => load_avatar(path)?,
        None => fresh_avatar(args.n, bundle.feature_dim, bundle.expression_dim, config.optim.seed)?,
    };
    if bank.d_exp() != bundle.expression_dim {
        bail!(
            "avatar drives {}-dim expressions, the scene provides {}-dim",
            bank.d_exp(),
            bundle.expression_dim
        );
    }
    let mut problem = Stage2Problem {
        gaussians,
        bank,
        control: config.control.clone(),
        views: bundle.stage2_views(),
        background: bundle.background,
    };
    let trace = fit_stage2(&mut problem, &config.stage2, &config.optim)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    save_avatar(&problem.gaussians, &problem.bank, &args.out.join("avatar.json"))?;
    trace.write_csv(&args.out.join("trace.csv"))?;
    trace.write_json(&args.out.join("trace.json"))?;
    print_fit_summary("avatar", &trace);
    println!(
        "wrote an avatar with {} gaussians to {}",
        problem.gaussians.len(),
        args.out.display()
    );
    Ok(())
}

/// Evenly spread Gaussians on a sphere of radius 0.25, with small random
/// features, isotropic scales, and zero residual fields.
fn fresh_avatar(
    n: usize,
    d_f: usize,
    d_exp: usize,
    seed: u64,
) -> Result<(GaussianSet, ResidualFieldBank)> {
    if n == 0 {
        bail!("--n must be at least 1");
    }
    let mut rng = seeded_rng(seed);
    let golden = std::f64::consts::PI * (3.0 - 5.0_f64.sqrt());
    let mut positions = Vec::with_capacity(n);
    for i in 0..n {
        let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
        let ring = (1.0 - y * y).max(0.0).sqrt();
        let angle = golden * i as f64;
        positions.push(Vector3::new(ring * angle.cos(), y, ring * angle.sin()) * 0.25);
    }
    let features = (0..n * d_f).map(|_| rng.random_range(-0.1..0.1)).collect();
    let set = GaussianSet {
        positions,
        features,
        d_f,
        rotations: vec![Quat::IDENTITY; n],
        scale_logs: vec![Vector3::repeat(0.04_f64.ln()); n],
        opacity_logits: vec![0.0; n],
    };
    Ok((set, ResidualFieldBank::zeros_linear(n, d_f, d_exp)))
}

fn render_track(avatar: &Path, scene: &Path, out: &Path, config: &PipelineConfig) -> Result<()> {
    let (gaussians, bank) = load_avatar(avatar)?;
    let bundle = load_scene(scene)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for (index, frame) in bundle.frames.iter().enumerate() {
        let assembled = assemble_avatar(
            &gaussians,
            &frame.expression,
            &frame.pose,
            &frame.head,
            &bank,
            &config.control,
        )?;
        let (image, _) = rasterize(SplatInputs::from(&assembled), &frame.camera, bundle.background)?;
        save_frame_png(&image, &out.join(format!("{index:04}.png")))?;
    }
    println!("rendered {} frames to {}", bundle.frames.len(), out.display());
    Ok(())
}

fn metrics(args: MetricsArgs) -> Result<()> {
    let names_a = png_names(&args.a)?;
    let names_b = png_names(&args.b)?;
    if let Some(name) = names_a.symmetric_difference(&names_b).next() {
        let side = if names_a.contains(name) { &args.a } else { &args.b };
        bail!("frame {name} exists only in {}", side.display());
    }
    if names_a.is_empty() {
        bail!("no .png frames in {}", args.a.display());
    }
    println!("{:<14} {:>9} {:>9}", "frame", "psnr_db", "ssim");
    let mut psnr_sum = 0.0;
    let mut ssim_sum = 0.0;
    for name in &names_a {
        let frame_a = load_frame_png(&args.a.join(name))?;
        let frame_b = load_frame_png(&args.b.join(name))?;
        let p = psnr(&frame_a, &frame_b)?;
        let s = ssim(&frame_a, &frame_b)?;
        println!("{name:<14} {p:>9.4} {s:>9.6}");
        psnr_sum += p;
        ssim_sum += s;
    }
    let count = names_a.len() as f64;
    println!(
        "{:<14} {:>9.4} {:>9.6}",
        "average",
        psnr_sum / count,
        ssim_sum / count
    );
    Ok(())
}

fn split_report(args: SplitReportArgs) -> Result<()> {
    let Some(config) = args.config.resolve()? else {
        return Ok(());
    };
    let (gaussians, bank) = load_avatar(&args.avatar)?;
    let bundle = load_scene(&args.scene)?;
    println!(
        "{:<6} {:>9} {:>11} {:>9} {:>7} {:>10}",
        "frame", "controls", "candidates", "children", "total", "max_delta"
    );
    for (index, frame) in bundle.frames.iter().enumerate() {
        let displacements =
            expression_displacements(&gaussians.positions, &frame.expression, &bank)?;
        let magnitudes: Vec<f64> = displacements.iter().map(|d| d.norm()).collect();
        let max_delta = magnitudes.iter().fold(0.0_f64, |a, &b| a.max(b));
        let candidates = magnitudes
            .iter()
            .filter(|&&m| m > config.control.tau_split)
            .count();
        let assembled = assemble_avatar(
            &gaussians,
            &frame.expression,
            &frame.pose,
            &frame.head,
            &bank,
            &config.control,
        )?;
        println!(
            "{index:<6} {:>9} {candidates:>11} {:>9} {:>7} {max_delta:>10.5}",
            assembled.control_indices.len(),
            assembled.split.children.len(),
            assembled.positions.len()
        );
    }
    Ok(())
}

fn print_fit_summary(what: &str, trace: &FitTrace) {
    if let Some(reason) = &trace.aborted {
        println!("{what} fit aborted early: {reason}");
    }
    let Some(last) = trace.rows.last() else {
        println!("{what} fit ran zero iterations");
        return;
    };
    let psnr_note = last
        .psnr
        .map(|p| format!(", psnr {p:.2} dB"))
        .unwrap_or_default();
    println!(
        "{what} fit: {} iterations, {:.1}s, final loss {:.6}{psnr_note}",
        trace.rows.len(),
        trace.wall_seconds,
        last.losses.total
    );
}

fn png_names(dir: &Path) -> Result<BTreeSet<String>> {
    let entries = fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))?;
    let mut names = BTreeSet::new();
    for entry in entries {
        let entry = entry?;
        if !entry.file_type()?.is_file() {
            continue;
        }
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.ends_with(".png") {
            names.insert(name);
        }
    }
    Ok(names)
}
