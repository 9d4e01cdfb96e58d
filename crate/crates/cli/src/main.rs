use clap::{Args, Parser, Subcommand};
use photoalign::geometry::{median_depth, se3_transform};
use photoalign::gradcheck::run_gradcheck;
use photoalign::io::{self, KeyValues, RunConfig};
use photoalign::synthbench::{
    generate_scene, run_benchmark, BenchmarkSpec, PerturbationSpec, SceneGeometry, SceneSpec,
    TextureProfile,
};
use photoalign::{align_with_observer, AlignConfig, AlignState, Image, PoseParams};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "photoalign", version, about = "Photometric point cloud to image alignment")]
struct Cli {
    /// Worker threads for the data-parallel loops (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Align a colored point cloud to an image.
    Align(AlignArgs),
    /// Run the synthetic benchmark and write a report.
    Benchmark(BenchmarkArgs),
    /// Check every analytic derivative against finite differences.
    Gradcheck(GradcheckArgs),
    /// Color-difference heatmap of two equally sized images.
    Heatmap(HeatmapArgs),
    /// Write a synthetic scene (cloud, image, intrinsics, true pose).
    Scene(SceneArgs),
}

#[derive(Args, Debug)]
struct AlignArgs {
    #[arg(long)]
    cloud: Option<PathBuf>,
    #[arg(long)]
    image: Option<PathBuf>,
    #[arg(long)]
    intrinsics: Option<PathBuf>,
    /// Initial pose file; identity when omitted.
    #[arg(long)]
    init_pose: Option<PathBuf>,
    /// key=value configuration; flags given here take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set max_iters=200`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    heatmap_interval: Option<usize>,
}

#[derive(Args, Debug)]
struct BenchmarkArgs {
    #[arg(long, default_value_t = 20)]
    trials: usize,
    /// Texture family: smooth, mixed or high_frequency.
    #[arg(long, default_value = "mixed")]
    family: TextureProfile,
    #[arg(long, default_value = "box_room")]
    geometry: SceneGeometry,
    /// Comma-separated modes, `<zo|fo|so>-<a|b>`.
    #[arg(long, default_value = "so-a,fo-a,zo-a")]
    modes: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 256)]
    size: usize,
    #[arg(long, default_value_t = 3.0)]
    depth: f64,
    /// Meters.
    #[arg(long, default_value_t = 0.02)]
    max_translation: f64,
    /// Degrees.
    #[arg(long, default_value_t = 1.0)]
    max_rotation: f64,
    #[arg(long)]
    no_color_effects: bool,
    #[arg(long)]
    max_iters: Option<usize>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    configs: usize,
}

#[derive(Args, Debug)]
struct HeatmapArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SceneArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "mixed")]
    family: TextureProfile,
    #[arg(long, default_value = "box_room")]
    geometry: SceneGeometry,
    #[arg(long, default_value_t = 256)]
    size: usize,
    #[arg(long, default_value_t = 3.0)]
    depth: f64,
    /// Apply simulated sensor color effects to the image with this seed.
    #[arg(long)]
    effects_seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

// The aligner allocates several large per-iteration buffers; the system
// allocator returns them to the OS every time.
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

type CliResult<T> = Result<T, Box<dyn std::error::Error>>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> CliResult<ExitCode> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    match cli.command {
        Command::Align(a) => cmd_align(a),
        Command::Benchmark(b) => cmd_benchmark(b),
        Command::Gradcheck(g) => cmd_gradcheck(g),
        Command::Heatmap(h) => cmd_heatmap(h),
        Command::Scene(s) => cmd_scene(s),
    }
}

fn cmd_align(args: AlignArgs) -> CliResult<ExitCode> {
    let mut rc = RunConfig::default();
    let mut kv = match &args.config {
        Some(p) => KeyValues::load(p)?,
        None => KeyValues::default(),
    };
    let flags = [
        ("cloud", &args.cloud),
        ("image", &args.image),
        ("intrinsics", &args.intrinsics),
        ("init_pose", &args.init_pose),
        ("out", &args.out),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            kv.insert(key, &v.to_string_lossy());
        }
    }
    if let Some(n) = args.heatmap_interval {
        kv.insert("heatmap_interval", &n.to_string());
    }
    for o in &args.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| format!("--set expects KEY=VALUE, got `{o}`"))?;
        kv.insert(k.trim(), v.trim());
    }
    rc.apply(&kv)?;
    rc.validate_for_align()?;

    let pc = io::load_ply(rc.cloud.as_ref().unwrap())?;
    let image = io::load_image(rc.image.as_ref().unwrap())?;
    let k = io::load_intrinsics(rc.intrinsics.as_ref().unwrap())?;
    let theta0 = match &rc.init_pose {
        Some(p) => io::load_pose(p)?,
        None => PoseParams::identity(),
    };
    let mut cfg = rc.align;
    if !rc.lr_translation_set {
        let depth = median_depth(&se3_transform(&theta0, pc.positions()))
            .ok_or("no points in front of the camera at the initial pose")?;
        cfg = AlignConfig {
            lr_translation: 1e-3 * depth,
            ..cfg
        };
    }

    std::fs::create_dir_all(&rc.out)?;
    let mut heatmap_error = None;
    let result = align_with_observer(&pc, &image, &k, &theta0, &cfg, |iter, state| {
        if rc.heatmap_interval > 0 && iter % rc.heatmap_interval == 0 && heatmap_error.is_none() {
            let path = rc.out.join(format!("heatmap_{iter:05}.ppm"));
            if let Err(e) = write_heatmap(&path, &pc, &image, state) {
                heatmap_error = Some(e);
            }
        }
    })?;
    if let Some(e) = heatmap_error {
        return Err(e);
    }

    io::save_pose(rc.out.join("pose.txt"), &result.theta_final)?;
    let mut trace = String::from("iteration,loss,inliers\n");
    for (i, (l, n)) in result.loss_trace.iter().zip(&result.inlier_counts).enumerate() {
        let _ = writeln!(trace, "{i},{l:.12e},{n}");
    }
    std::fs::write(rc.out.join("loss_trace.csv"), trace)?;
    println!(
        "iterations={} converged={} final_loss={:.6e}",
        result.iterations_run,
        result.converged,
        result.loss_trace.last().copied().unwrap_or(f64::NAN)
    );
    Ok(ExitCode::SUCCESS)
}

/// Renders the cloud at the current pose and compares it with the image
/// mapped into cloud color space by the current transform.
fn write_heatmap(
    path: &Path,
    pc: &photoalign::PointCloud,
    image: &Image,
    state: &AlignState,
) -> CliResult<()> {
    let (render, coverage) = io::render_point_cloud(pc, &state.theta, &state.intrinsics)?;
    let mapped = if state.inliers.is_some() {
        let px = image.pixels().iter().map(|c| state.transform.apply(c).0).collect();
        Image::new(image.width(), image.height(), px)?
    } else {
        image.clone()
    };
    let h = io::heatmap_masked(&render, &mapped, Some(&coverage))?;
    io::save_image(path, &h)?;
    Ok(())
}

fn cmd_benchmark(args: BenchmarkArgs) -> CliResult<ExitCode> {
    let mut base = AlignConfig::for_scene_depth(args.depth);
    if let Some(n) = args.max_iters {
        base.max_iters = n;
    }
    let modes = args
        .modes
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|m| io::parse_mode_label(m, &base))
        .collect::<Result<Vec<_>, _>>()?;
    let spec = BenchmarkSpec {
        n_trials: args.trials,
        scene: SceneSpec {
            seed: args.seed,
            texture_profile: args.family,
            geometry: args.geometry,
            image_size: (args.size, args.size),
            scene_depth: args.depth,
        },
        perturb: PerturbationSpec {
            max_translation: args.max_translation,
            max_rotation: args.max_rotation,
            seed: args.seed,
        },
        color_effects: !args.no_color_effects,
        modes,
    };
    let report = run_benchmark(&spec)?;
    report.write_to_dir(&args.out)?;
    for s in &report.summaries {
        println!(
            "{}: median_translation_mm={:.4} median_rotation_deg={:.5} converged={}/{} failed={}",
            s.mode,
            s.median_translation_mm(),
            s.median_rotation_deg(),
            s.converged,
            s.trials,
            s.failures
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(args: GradcheckArgs) -> CliResult<ExitCode> {
    let report = run_gradcheck(args.seed, args.configs)?;
    for c in &report.checks {
        println!("{c}");
    }
    Ok(if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn cmd_heatmap(args: HeatmapArgs) -> CliResult<ExitCode> {
    let a = io::load_image(&args.a)?;
    let b = io::load_image(&args.b)?;
    io::save_image(&args.out, &io::heatmap(&a, &b)?)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_scene(args: SceneArgs) -> CliResult<ExitCode> {
    let scene = generate_scene(&SceneSpec {
        seed: args.seed,
        texture_profile: args.family,
        geometry: args.geometry,
        image_size: (args.size, args.size),
        scene_depth: args.depth,
    })?;
    let image = match args.effects_seed {
        Some(s) => photoalign::synthbench::apply_color_effects(&scene.image, s),
        None => scene.image.clone(),
    };
    std::fs::create_dir_all(&args.out)?;
    io::save_ply_binary(args.out.join("cloud.ply"), &scene.pc)?;
    io::save_image(args.out.join("image.ppm"), &image)?;
    std::fs::write(
        args.out.join("intrinsics.txt"),
        io::keyvalue::format_intrinsics(&scene.intrinsics),
    )?;
    io::save_pose(args.out.join("pose_gt.txt"), &scene.theta_gt)?;
    Ok(ExitCode::SUCCESS)
}
