//! Command-line driver for photometric-stereo depth reconstruction.
//!
//! Five subcommands cover the full pipeline: `synth` renders a ground-truth
//! scene to images, `classic` runs the pointwise baseline plus normal
//! integration, `refine` minimizes the global reprojection energy with the
//! inertial proximal solver, `eval` scores a reconstruction against ground
//! truth, and `diag` exposes the numerical machinery (gradient checks,
//! Lipschitz bounds, descent traces).
//!
//! Exit codes: 0 on success, 1 on input errors (missing or malformed files,
//! bad flags, invalid configuration), 2 on solver failures.

mod formats;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use formats::RunManifest;
use relief::bounds::{empirical_lipschitz, lipschitz_report, GradientCaps};
use relief::classic::{estimate_normals_albedo, integrate_normals};
use relief::energy::{EnergyContext, GradientMode};
use relief::ipiano::{alternating_solve, ipiano_inner, SolverConfig};
use relief::metrics::{mean_angular_error, mean_reprojection_error, reprojection_error_map};
use relief::oracle::{central_difference_grad, dense_frozen_gradient, dense_full_gradient, ORACLE_MAX_PIXELS};
use relief::render::{add_gaussian_noise, normals_from_depth, render_lambertian};
use relief::scene::{cone_lights, make_scene, AlbedoSpec, SceneKind, SceneParams};
use relief::{
    build_gradient_operator, AlbedoMap, DepthMap, Grid, ImageStack, LightMatrix, NormalField,
    PixelMask,
};

#[derive(Parser)]
#[command(
    name = "relief",
    version,
    about = "Depth reconstruction from photometric stereo by global energy minimization"
)]
struct Cli {
    /// Worker threads for the per-pixel loops; 0 keeps the library default.
    /// Results are bit-identical for every thread count.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic scene: images, ground-truth depth/normals/albedo.
    Synth(SynthArgs),
    /// Pointwise photometric stereo plus least-squares normal integration.
    Classic(ClassicArgs),
    /// Inertial proximal refinement of depth and albedo.
    Refine(RefineArgs),
    /// Score an estimate against ground-truth normals.
    Eval(EvalArgs),
    /// Numerical diagnostics: gradient checks, Lipschitz bounds, descent.
    Diag(DiagArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum SceneKindArg {
    Plane,
    GaussianBump,
    SphereCap,
}

impl From<SceneKindArg> for SceneKind {
    fn from(kind: SceneKindArg) -> SceneKind {
        match kind {
            SceneKindArg::Plane => SceneKind::Plane,
            SceneKindArg::GaussianBump => SceneKind::GaussianBump,
            SceneKindArg::SphereCap => SceneKind::SphereCap,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum GradientArg {
    Approx,
    Exact,
}

impl From<GradientArg> for GradientMode {
    fn from(mode: GradientArg) -> GradientMode {
        match mode {
            GradientArg::Approx => GradientMode::Approx,
            GradientArg::Exact => GradientMode::Exact,
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Surface shape.
    #[arg(long, value_enum)]
    scene_kind: SceneKindArg,
    /// Grid size: "32" for square or "48x32" for width x height.
    #[arg(long)]
    size: String,
    /// CSV of light directions, one "sx,sy,sz" row per image.
    #[arg(long)]
    lights_file: PathBuf,
    /// Albedo pattern: "constant:V" or "twotone:LOW,HIGH,TILE".
    #[arg(long, default_value = "constant:0.9")]
    albedo_spec: String,
    /// Standard deviation of additive Gaussian intensity noise.
    #[arg(long, default_value_t = 0.0)]
    noise_sigma: f64,
    /// Noise seed; identical seeds give byte-identical outputs.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ClassicArgs {
    /// Directory whose .pgm files form the stack (lexicographic order).
    #[arg(long)]
    images_dir: PathBuf,
    #[arg(long)]
    lights_file: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct RefineArgs {
    #[arg(long)]
    images_dir: PathBuf,
    #[arg(long)]
    lights_file: PathBuf,
    /// Initial depth (PFM); also the anchor of the Tikhonov term.
    #[arg(long)]
    init_depth: PathBuf,
    /// Initial albedo (PFM).
    #[arg(long)]
    init_albedo: PathBuf,
    /// Solver config as flat JSON; missing keys take the defaults.
    #[arg(long)]
    config_file: Option<PathBuf>,
    /// Override the config's gradient mode.
    #[arg(long, value_enum)]
    gradient: Option<GradientArg>,
    /// PGM mask; pixels stored as 0 are excluded from the data term.
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Estimated normals (3-channel PFM).
    #[arg(long, conflicts_with = "est_depth")]
    est_normals: Option<PathBuf>,
    /// Estimated depth (PFM); converted to normals for scoring.
    #[arg(long)]
    est_depth: Option<PathBuf>,
    /// Ground-truth normals (3-channel PFM).
    #[arg(long)]
    gt_normals: PathBuf,
    /// Optional JSON report path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// With --lights-file and --albedo (and --est-depth): also report the
    /// mean reprojection error of the estimate against these images.
    #[arg(long, requires = "lights_file", requires = "albedo", requires = "est_depth")]
    images_dir: Option<PathBuf>,
    #[arg(long, requires = "images_dir")]
    lights_file: Option<PathBuf>,
    /// Albedo (PFM) used when re-rendering for the reprojection error.
    #[arg(long, requires = "images_dir")]
    albedo: Option<PathBuf>,
}

#[derive(Args)]
struct DiagArgs {
    #[command(subcommand)]
    which: DiagCommand,
}

#[derive(Subcommand)]
enum DiagCommand {
    /// Compare the analytic gradients against finite differences and, on
    /// small grids, against the dense matrix-calculus assembly.
    Gradcheck(GradcheckArgs),
    /// Print the analytic Lipschitz constants and an empirical probe of
    /// sampled difference quotients.
    Bounds(BoundsArgs),
    /// Run one inner loop and print the ⟨q, ∇f⟩ series that monitors whether
    /// the approximate gradient still points downhill.
    Descent(DescentArgs),
}

#[derive(Args)]
struct GradcheckArgs {
    /// Square grid side length.
    #[arg(long, default_value_t = 8)]
    size: usize,
    /// Number of lights on a 35° cone.
    #[arg(long, default_value_t = 4)]
    num_lights: usize,
    #[arg(long, default_value_t = 0.01)]
    noise_sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-6)]
    fd_step: f64,
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long, default_value_t = 16)]
    size: usize,
    #[arg(long, default_value_t = 8)]
    num_lights: usize,
    #[arg(long, value_enum, default_value_t = SceneKindArg::SphereCap)]
    scene_kind: SceneKindArg,
    #[arg(long, default_value = "constant:0.9")]
    albedo_spec: String,
    #[arg(long, default_value_t = 0.01)]
    noise_sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Slope caps = factor × the largest ground-truth slope.
    #[arg(long, default_value_t = 1.5)]
    cap_factor: f64,
    /// Random depth pairs for the empirical quotient probe.
    #[arg(long, default_value_t = 200)]
    pairs: usize,
}

#[derive(Args)]
struct DescentArgs {
    #[arg(long, default_value_t = 16)]
    size: usize,
    #[arg(long, default_value_t = 8)]
    num_lights: usize,
    #[arg(long, value_enum, default_value_t = SceneKindArg::SphereCap)]
    scene_kind: SceneKindArg,
    #[arg(long, default_value_t = 0.01)]
    noise_sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = GradientArg::Approx)]
    gradient: GradientArg,
    /// Inner iterations to run.
    #[arg(long, default_value_t = 30)]
    inner: usize,
    /// Start from the classic baseline or from ground truth.
    #[arg(long, value_enum, default_value_t = InitArg::Classic)]
    init: InitArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitArg {
    Classic,
    Gt,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = u8::from(e.use_stderr());
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(e) = configure_threads(cli.threads) {
        eprintln!("error: {e:#}");
        return ExitCode::from(1);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code_for(&e)
        }
    }
}

/// 1 for malformed input, 2 for solver failures, per the library's own
/// classification when the failure originates there.
fn exit_code_for(e: &anyhow::Error) -> ExitCode {
    for cause in e.chain() {
        if let Some(lib) = cause.downcast_ref::<relief::Error>() {
            return ExitCode::from(if lib.is_input_error() { 1 } else { 2 });
        }
    }
    ExitCode::from(1)
}

#[cfg(feature = "parallel")]
fn configure_threads(threads: usize) -> Result<()> {
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("configuring the thread pool")?;
    }
    Ok(())
}

#[cfg(not(feature = "parallel"))]
fn configure_threads(threads: usize) -> Result<()> {
    if threads > 0 {
        eprintln!("warning: built without the parallel feature; --threads has no effect");
    }
    Ok(())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(args) => cmd_synth(args),
        Command::Classic(args) => cmd_classic(args),
        Command::Refine(args) => cmd_refine(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Diag(args) => match args.which {
            DiagCommand::Gradcheck(a) => diag_gradcheck(a),
            DiagCommand::Bounds(a) => diag_bounds(a),
            DiagCommand::Descent(a) => diag_descent(a),
        },
    }
}

/// "32" → 32×32, "48x32" → width 48, height 32.
fn parse_size(text: &str) -> Result<(usize, usize)> {
    let parse_side = |s: &str| -> Result<usize> {
        let v: usize = s.parse().with_context(|| format!("bad size component {s:?}"))?;
        ensure!(v > 0, "size components must be positive");
        Ok(v)
    };
    match text.split_once('x') {
        Some((w, h)) => Ok((parse_side(w)?, parse_side(h)?)),
        None => {
            let side = parse_side(text)?;
            Ok((side, side))
        }
    }
}

/// "constant:V" or "twotone:LOW,HIGH,TILE".
fn parse_albedo_spec(text: &str) -> Result<AlbedoSpec> {
    let (kind, rest) = text
        .split_once(':')
        .with_context(|| format!("albedo spec {text:?} needs the form kind:params"))?;
    match kind {
        "constant" => {
            let v: f64 = rest.parse().with_context(|| format!("bad albedo value {rest:?}"))?;
            Ok(AlbedoSpec::Constant(v))
        }
        "twotone" => {
            let parts: Vec<&str> = rest.split(',').collect();
            ensure!(parts.len() == 3, "twotone needs LOW,HIGH,TILE, found {rest:?}");
            let low: f64 = parts[0].parse().with_context(|| format!("bad low {:?}", parts[0]))?;
            let high: f64 = parts[1].parse().with_context(|| format!("bad high {:?}", parts[1]))?;
            let tile: usize =
                parts[2].parse().with_context(|| format!("bad tile {:?}", parts[2]))?;
            Ok(AlbedoSpec::TwoTone { low, high, tile })
        }
        other => bail!("unknown albedo spec kind {other:?} (use constant or twotone)"),
    }
}

fn load_lights(path: &Path) -> Result<LightMatrix> {
    let rows = formats::read_lights_csv(path)?;
    Ok(LightMatrix::new(rows)?)
}

fn load_scalar_pfm(path: &Path, grid: Grid, what: &str) -> Result<Vec<f64>> {
    let (w, h, data) = formats::read_pfm(path)?.scalar()?;
    ensure!(
        (w, h) == (grid.width(), grid.height()),
        "{what} is {w}×{h} but the images are {}×{}",
        grid.width(),
        grid.height()
    );
    Ok(data)
}

fn scene_kind_name(kind: SceneKindArg) -> &'static str {
    match kind {
        SceneKindArg::Plane => "plane",
        SceneKindArg::GaussianBump => "gaussian-bump",
        SceneKindArg::SphereCap => "sphere-cap",
    }
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let (width, height) = parse_size(&args.size)?;
    ensure!(
        args.noise_sigma.is_finite() && args.noise_sigma >= 0.0,
        "noise sigma must be finite and >= 0"
    );
    let grid = Grid::new(width, height)?;
    let lights = load_lights(&args.lights_file)?;
    let albedo = parse_albedo_spec(&args.albedo_spec)?;
    let params = SceneParams::default_for(args.scene_kind.into()).with_albedo(albedo);
    let scene = make_scene(grid, &params)?;
    let op = build_gradient_operator(grid);

    let render_start = Instant::now();
    let clean = render_lambertian(&scene.depth, &scene.albedo, &lights, &op, false);
    let images = if args.noise_sigma > 0.0 {
        add_gaussian_noise(&clean, args.noise_sigma, args.seed)
    } else {
        clean
    };
    let render_time = render_start.elapsed();

    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    let mut manifest = RunManifest::new("synth");
    manifest.seed = Some(args.seed);
    manifest.config = serde_json::json!({
        "scene_kind": scene_kind_name(args.scene_kind),
        "width": width,
        "height": height,
        "albedo_spec": args.albedo_spec,
        "noise_sigma": args.noise_sigma,
    });
    manifest.input("lights", &args.lights_file);
    manifest.timing("render", render_time);

    let write_start = Instant::now();
    for i in 0..images.m() {
        let name = format!("img_{i:03}.pgm");
        let path = args.out_dir.join(&name);
        formats::write_pgm16(&path, width, height, &images.image_plane(i))?;
        manifest.output(&name, &path);
    }
    let depth_path = args.out_dir.join("depth_gt.pfm");
    formats::write_pfm_scalar(&depth_path, width, height, &scene.depth.z)?;
    manifest.output("depth_gt", &depth_path);
    let normals_path = args.out_dir.join("normals_gt.pfm");
    formats::write_pfm_normals(&normals_path, &normals_from_depth(&scene.depth, &op))?;
    manifest.output("normals_gt", &normals_path);
    let albedo_path = args.out_dir.join("albedo_gt.pfm");
    formats::write_pfm_scalar(&albedo_path, width, height, &scene.albedo.rho)?;
    manifest.output("albedo_gt", &albedo_path);
    let lights_copy = args.out_dir.join("lights.csv");
    fs::copy(&args.lights_file, &lights_copy)
        .with_context(|| format!("copying lights to {}", lights_copy.display()))?;
    manifest.output("lights", &lights_copy);
    manifest.timing("write", write_start.elapsed());

    let manifest_path = args.out_dir.join("manifest.json");
    formats::write_manifest(&manifest_path, &manifest)?;
    println!(
        "synth: wrote {} {width}×{height} images and ground truth to {}",
        images.m(),
        args.out_dir.display()
    );
    Ok(())
}

fn cmd_classic(args: ClassicArgs) -> Result<()> {
    let read_start = Instant::now();
    let (grid, images, image_names) = formats::read_image_stack(&args.images_dir)?;
    let lights = load_lights(&args.lights_file)?;
    let read_time = read_start.elapsed();

    let solve_start = Instant::now();
    let pointwise = estimate_normals_albedo(&images, &lights)?;
    let op = build_gradient_operator(grid);
    let z0 = integrate_normals(&pointwise.normals, &op)?;
    let solve_time = solve_start.elapsed();

    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    let mut manifest = RunManifest::new("classic");
    manifest.config = serde_json::json!({
        "images": image_names,
        "num_lights": lights.m(),
    });
    manifest.input("images_dir", &args.images_dir);
    manifest.input("lights", &args.lights_file);
    manifest.timing("read", read_time);
    manifest.timing("solve", solve_time);

    let (w, h) = (grid.width(), grid.height());
    let z0_path = args.out_dir.join("z0.pfm");
    formats::write_pfm_scalar(&z0_path, w, h, &z0.z)?;
    manifest.output("z0", &z0_path);
    let albedo_path = args.out_dir.join("albedo.pfm");
    formats::write_pfm_scalar(&albedo_path, w, h, &pointwise.albedo.rho)?;
    manifest.output("albedo", &albedo_path);
    let normals_path = args.out_dir.join("normals.pfm");
    formats::write_pfm_normals(&normals_path, &pointwise.normals)?;
    manifest.output("normals", &normals_path);
    let residual_path = args.out_dir.join("residual.pfm");
    formats::write_pfm_scalar(&residual_path, w, h, &pointwise.residual)?;
    manifest.output("residual", &residual_path);

    let manifest_path = args.out_dir.join("manifest.json");
    formats::write_manifest(&manifest_path, &manifest)?;
    println!(
        "classic: {} images, {w}×{h}; wrote depth, albedo, normals, residual to {}",
        images.m(),
        args.out_dir.display()
    );
    Ok(())
}

fn cmd_refine(args: RefineArgs) -> Result<()> {
    let read_start = Instant::now();
    let (grid, images, _) = formats::read_image_stack(&args.images_dir)?;
    let lights = load_lights(&args.lights_file)?;
    let z_init = DepthMap::new(grid, load_scalar_pfm(&args.init_depth, grid, "initial depth")?)?;
    let rho_init =
        AlbedoMap::new(grid, load_scalar_pfm(&args.init_albedo, grid, "initial albedo")?)?;
    let mut config = match &args.config_file {
        Some(path) => formats::read_config(path)?,
        None => SolverConfig::default(),
    };
    if let Some(mode) = args.gradient {
        config.gradient_mode = mode.into();
    }
    let mask = match &args.mask {
        Some(path) => {
            let (w, h, data) = formats::read_pgm16(path)?;
            ensure!(
                (w, h) == (grid.width(), grid.height()),
                "mask is {w}×{h} but the images are {}×{}",
                grid.width(),
                grid.height()
            );
            Some(PixelMask::new(grid, data.iter().map(|&v| v > 0.0).collect())?)
        }
        None => None,
    };
    let read_time = read_start.elapsed();

    let solve_start = Instant::now();
    let result = alternating_solve(&images, &lights, &z_init, &rho_init, &config, mask.as_ref())?;
    let solve_time = solve_start.elapsed();

    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    let mut manifest = RunManifest::new("refine");
    manifest.config = serde_json::to_value(&config)?;
    manifest.input("images_dir", &args.images_dir);
    manifest.input("lights", &args.lights_file);
    manifest.input("init_depth", &args.init_depth);
    manifest.input("init_albedo", &args.init_albedo);
    if let Some(path) = &args.config_file {
        manifest.input("config", path);
    }
    if let Some(path) = &args.mask {
        manifest.input("mask", path);
    }
    manifest.timing("read", read_time);
    manifest.timing("solve", solve_time);

    let write_start = Instant::now();
    let (w, h) = (grid.width(), grid.height());
    let op = build_gradient_operator(grid);
    let depth_path = args.out_dir.join("depth.pfm");
    formats::write_pfm_scalar(&depth_path, w, h, &result.depth.z)?;
    manifest.output("depth", &depth_path);
    let albedo_path = args.out_dir.join("albedo.pfm");
    formats::write_pfm_scalar(&albedo_path, w, h, &result.albedo.rho)?;
    manifest.output("albedo", &albedo_path);
    let normals_path = args.out_dir.join("normals.pfm");
    formats::write_pfm_normals(&normals_path, &normals_from_depth(&result.depth, &op))?;
    manifest.output("normals", &normals_path);

    let ctx = EnergyContext::new(
        &images,
        &lights,
        op,
        &result.albedo.rho,
        config.lambda,
        &z_init.z,
        mask.as_ref(),
    )?;
    let error_map = reprojection_error_map(&ctx, &result.depth.z);
    let error_path = args.out_dir.join("reprojection_error.pfm");
    formats::write_pfm_scalar(&error_path, w, h, &error_map)?;
    manifest.output("reprojection_error", &error_path);

    let trace_path = args.out_dir.join("trace.csv");
    formats::write_trace_csv(&trace_path, &result.trace)?;
    manifest.output("trace", &trace_path);
    manifest.timing("write", write_start.elapsed());

    let manifest_path = args.out_dir.join("manifest.json");
    formats::write_manifest(&manifest_path, &manifest)?;
    println!(
        "refine: {} outer iterations ({}), final objective {:.6e}; solve took {:.2}s",
        result.outer_iters,
        if result.converged { "converged" } else { "iteration cap reached" },
        result.final_objective,
        solve_time.as_secs_f64()
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let (gt_w, gt_h, gt_triples) = formats::read_pfm(&args.gt_normals)?.normals()?;
    let grid = Grid::new(gt_w, gt_h)?;
    let gt = NormalField::new(grid, gt_triples)?;

    let mut est_depth = None;
    let est = match (&args.est_normals, &args.est_depth) {
        (Some(path), None) => {
            let (w, h, triples) = formats::read_pfm(path)?.normals()?;
            ensure!(
                (w, h) == (gt_w, gt_h),
                "estimate is {w}×{h} but ground truth is {gt_w}×{gt_h}"
            );
            NormalField::new(grid, triples)?
        }
        (None, Some(path)) => {
            let depth = DepthMap::new(grid, load_scalar_pfm(path, grid, "estimated depth")?)?;
            let op = build_gradient_operator(grid);
            let normals = normals_from_depth(&depth, &op);
            est_depth = Some(depth);
            normals
        }
        _ => bail!("pass exactly one of --est-normals or --est-depth"),
    };

    let mae = mean_angular_error(&est, &gt);
    println!("mae_degrees = {mae:.8}");

    let mut reprojection = None;
    if let Some(images_dir) = &args.images_dir {
        let depth = est_depth
            .as_ref()
            .context("the reprojection error needs --est-depth, not --est-normals")?;
        let (img_grid, images, _) = formats::read_image_stack(images_dir)?;
        ensure!(
            img_grid == grid,
            "images are {}×{} but ground truth is {gt_w}×{gt_h}",
            img_grid.width(),
            img_grid.height()
        );
        let lights = load_lights(args.lights_file.as_ref().expect("clap enforces the pairing"))?;
        let rho = load_scalar_pfm(args.albedo.as_ref().expect("clap enforces the pairing"), grid, "albedo")?;
        let op = build_gradient_operator(grid);
        let ctx = EnergyContext::new(&images, &lights, op, &rho, 0.0, &depth.z, None)?;
        let mre = mean_reprojection_error(&ctx, &depth.z);
        println!("mean_reprojection_error = {mre:.8e}");
        reprojection = Some(mre);
    }

    if let Some(out) = &args.out {
        let report = serde_json::json!({
            "mae_degrees": mae,
            "mean_reprojection_error": reprojection,
        });
        let mut text = serde_json::to_string_pretty(&report)?;
        text.push('\n');
        fs::write(out, text).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

/// Scene, lights, and noisy images shared by the diag subcommands.
struct DiagScene {
    grid: Grid,
    depth_gt: DepthMap,
    albedo_gt: AlbedoMap,
    lights: LightMatrix,
    images: ImageStack,
}

fn build_diag_scene(
    size: usize,
    num_lights: usize,
    kind: SceneKind,
    albedo: AlbedoSpec,
    noise_sigma: f64,
    seed: u64,
) -> Result<DiagScene> {
    ensure!(noise_sigma.is_finite() && noise_sigma >= 0.0, "noise sigma must be finite and >= 0");
    let grid = Grid::new(size, size)?;
    let scene = make_scene(grid, &SceneParams::default_for(kind).with_albedo(albedo))?;
    let lights = cone_lights(num_lights, 35.0)?;
    let op = build_gradient_operator(grid);
    let clean = render_lambertian(&scene.depth, &scene.albedo, &lights, &op, false);
    let images =
        if noise_sigma > 0.0 { add_gaussian_noise(&clean, noise_sigma, seed) } else { clean };
    Ok(DiagScene { grid, depth_gt: scene.depth, albedo_gt: scene.albedo, lights, images })
}

fn rel_linf(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = a.iter().map(|x| x.abs()).fold(0.0, f64::max);
    diff / scale.max(f64::MIN_POSITIVE)
}

fn diag_gradcheck(args: GradcheckArgs) -> Result<()> {
    let tile = (args.size / 4).max(1);
    let scene = build_diag_scene(
        args.size,
        args.num_lights,
        SceneKind::GaussianBump,
        AlbedoSpec::TwoTone { low: 0.35, high: 0.9, tile },
        args.noise_sigma,
        args.seed,
    )?;
    let n = scene.grid.n();
    // evaluate away from the ground truth so no term degenerates to zero
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let z: Vec<f64> =
        scene.depth_gt.z.iter().map(|&v| v + rng.gen_range(-0.05..0.05)).collect();
    let op = build_gradient_operator(scene.grid);
    let ctx = EnergyContext::new(
        &scene.images,
        &scene.lights,
        op,
        &scene.albedo_gt.rho,
        1e-6,
        &scene.depth_gt.z,
        None,
    )?;

    println!(
        "gradcheck: {0}×{0} grid, {1} lights, noise sigma {2:.1e}, seed {3}",
        args.size, args.num_lights, args.noise_sigma, args.seed
    );
    let exact = ctx.grad_f_exact(&z);
    let fd = central_difference_grad(|w| ctx.eval_f(w), &z, args.fd_step);
    println!(
        "  exact vs central differences (h = {:.1e}):   max relative error {:.3e}",
        args.fd_step,
        rel_linf(&exact, &fd)
    );
    if n <= ORACLE_MAX_PIXELS {
        let dense = dense_full_gradient(&scene.images, &scene.lights, &scene.albedo_gt.rho, &z)?;
        println!(
            "  exact vs dense assembly:                     max relative error {:.3e}",
            rel_linf(&exact, &dense)
        );
        let approx = ctx.grad_f_approx(&z);
        let frozen =
            dense_frozen_gradient(&scene.images, &scene.lights, &scene.albedo_gt.rho, &z)?;
        println!(
            "  approx vs frozen dense assembly:             max relative error {:.3e}",
            rel_linf(&approx, &frozen)
        );
    } else {
        println!("  dense assembly skipped ({n} pixels exceed the {ORACLE_MAX_PIXELS}-pixel oracle guard)");
    }
    Ok(())
}

fn diag_bounds(args: BoundsArgs) -> Result<()> {
    let albedo = parse_albedo_spec(&args.albedo_spec)?;
    let scene = build_diag_scene(
        args.size,
        args.num_lights,
        args.scene_kind.into(),
        albedo,
        args.noise_sigma,
        args.seed,
    )?;
    let op = build_gradient_operator(scene.grid);
    ensure!(args.cap_factor.is_finite() && args.cap_factor > 0.0, "cap factor must be positive");
    let caps = GradientCaps::uniform_from_reference(&op, &scene.depth_gt.z, args.cap_factor)?;
    let report =
        lipschitz_report(&scene.images, &scene.lights, &op, &scene.albedo_gt.rho, &caps)?;

    println!(
        "bounds: {0}×{0} {1}, {2} lights, caps at {3:.2}× the reference slope",
        args.size,
        scene_kind_name(args.scene_kind),
        args.num_lights,
        args.cap_factor
    );
    println!("  ‖S‖ = {:.6e}   ‖S_left‖ = {:.6e}   ‖M‖ = {:.6e}", report.s_norm, report.s_left_norm, report.op_norm);
    println!("  L_A = {:.6e}   L_f = {:.6e}   C_r = {:.6e}", report.l_a, report.l_f, report.c_r);
    println!("  L_q   (frozen-coefficient map) = {:.6e}", report.l_q);
    println!("  L_∇f  (full gradient)          = {:.6e}", report.l_grad_f);

    if args.pairs > 0 {
        let ctx = EnergyContext::new(
            &scene.images,
            &scene.lights,
            op,
            &scene.albedo_gt.rho,
            1e-6,
            &scene.depth_gt.z,
            None,
        )?;
        let emp = empirical_lipschitz(&ctx, &caps, args.pairs, args.seed);
        let ratio = |observed: f64, bound: f64| {
            if bound > 0.0 { observed / bound } else { 0.0 }
        };
        println!("  empirical probe over {} capped pairs:", emp.pairs);
        println!(
            "    max quotient for q:  {:.6e}  ({:.1}% of L_q)",
            emp.max_frozen,
            100.0 * ratio(emp.max_frozen, report.l_q)
        );
        println!(
            "    max quotient for ∇f: {:.6e}  ({:.1}% of L_∇f)",
            emp.max_full,
            100.0 * ratio(emp.max_full, report.l_grad_f)
        );
    }
    Ok(())
}

fn diag_descent(args: DescentArgs) -> Result<()> {
    let scene = build_diag_scene(
        args.size,
        args.num_lights,
        args.scene_kind.into(),
        AlbedoSpec::Constant(0.9),
        args.noise_sigma,
        args.seed,
    )?;
    let op = build_gradient_operator(scene.grid);
    let (z_start, rho) = match args.init {
        InitArg::Gt => (scene.depth_gt.z.clone(), scene.albedo_gt.rho.clone()),
        InitArg::Classic => {
            let pointwise = estimate_normals_albedo(&scene.images, &scene.lights)?;
            let z0 = integrate_normals(&pointwise.normals, &op)?;
            (z0.z, pointwise.albedo.rho)
        }
    };
    let config = SolverConfig {
        gradient_mode: args.gradient.into(),
        inner_max_iters: args.inner,
        trace_descent: true,
        ..SolverConfig::default()
    };
    config.validate()?;
    let ctx = EnergyContext::new(&scene.images, &scene.lights, op, &rho, config.lambda, &z_start, None)?;
    let mut trace = Vec::new();
    let outcome = ipiano_inner(&ctx, &z_start, &config, config.l_init, 0, &mut trace)?;

    println!(
        "descent: {0}×{0} {1}, {2} lights, {3} gradient, init {4}",
        args.size,
        scene_kind_name(args.scene_kind),
        args.num_lights,
        match args.gradient {
            GradientArg::Approx => "approximate",
            GradientArg::Exact => "exact",
        },
        match args.init {
            InitArg::Classic => "classic",
            InitArg::Gt => "ground truth",
        }
    );
    println!("  ell   f_plus_g                 <q, grad_f>             sign");
    let mut negatives = 0usize;
    for row in trace.iter().filter(|r| r.q_dot_gradf.is_some()) {
        let dot = row.q_dot_gradf.unwrap();
        let sign = if dot > 0.0 {
            "+"
        } else if dot < 0.0 {
            negatives += 1;
            "-"
        } else {
            "0"
        };
        println!("  {:<5} {:<24.16e} {:<23.16e} {sign}", row.inner, row.f_plus_g, dot);
    }
    println!(
        "  {} iterations, final objective {:.6e}; {negatives} iterations had <q, grad_f> < 0",
        outcome.iters, outcome.final_objective
    );
    Ok(())
}
