//! Command-line front end.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 config or
//! input error, 4 I/O error, 5 strategy equivalence failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::attention::{
    attend, attention_map, heatmap_pgm, init_embeddings, init_weights, AttendOptions,
    AttentionWeights,
};
use crate::bench::{
    emit_report, run_bench_synthetic, run_robustness, BenchConfig, DeviationLevel,
    RobustnessConfig, HEIGHT_LEVELS, ROTATION_LEVELS, TRANSLATION_LEVELS,
};
use crate::codec::Reader;
use crate::config::ConfigFile;
use crate::error::{Error, Result};
use crate::gather::{gather, GatherOptions, Strategy};
use crate::grid::KernelSpec;
use crate::lut::{Lut, LUT_MAGIC};
use crate::scene::Scene;
use crate::synthetic::SyntheticPreset;
use crate::tensor::{FeaturePyramid, TENSOR_MAGIC};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_IO: i32 = 4;
pub const EXIT_EQUIVALENCE: i32 = 5;

#[derive(Debug, Parser)]
#[command(
    name = "bevkernel",
    version,
    about = "Kernel-based camera-to-BEV feature transformation"
)]
pub struct Cli {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic surround rig, grid config and random feature pyramid.
    GenSynthetic(GenArgs),
    /// Precompute the BEV → pixel look-up table.
    BuildLut(BuildLutArgs),
    /// Unfold kernel features and run attention to produce BEV features.
    Transform(TransformArgs),
    /// Time the three unfolding strategies.
    Bench(BenchArgs),
    /// Prior stability and kernel coverage under camera deviation.
    Robustness(RobustnessArgs),
    /// Print the header of a GKTL / GKTF / GKTW file.
    Inspect { file: PathBuf },
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 6)]
    pub views: usize,
    #[arg(long, default_value_t = 2)]
    pub scales: usize,
    #[arg(long, default_value_t = 25)]
    pub rows: usize,
    #[arg(long, default_value_t = 25)]
    pub cols: usize,
    #[arg(long, default_value_t = 128)]
    pub channels: usize,
    #[arg(long, default_value = "3x3")]
    pub kernel: KernelSpec,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// Rig, grid and kernel sources shared by several subcommands.
#[derive(Debug, Args, Default)]
pub struct SceneArgs {
    /// Rig config (TOML); may also carry [grid] and [kernel].
    #[arg(long)]
    pub rig: Option<PathBuf>,
    /// Grid config (TOML with [grid], optionally [kernel]).
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// Kernel, e.g. 3x3, 7x3, cross-3x3, 3x3-d2. Overrides config files.
    #[arg(long)]
    pub kernel: Option<KernelSpec>,
}

#[derive(Debug, Args)]
pub struct BuildLutArgs {
    #[command(flatten)]
    pub scene: SceneArgs,
    /// Override the BEV plane height (meters).
    #[arg(long)]
    pub height: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TransformArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub lut: Option<PathBuf>,
    #[arg(long, default_value = "lut")]
    pub strategy: Strategy,
    #[command(flatten)]
    pub scene: SceneArgs,
    /// Attention weights (GKTW); seeded random init when absent.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    pub d_model: usize,
    #[arg(long, default_value_t = 1)]
    pub weight_seed: u64,
    #[arg(long, default_value_t = 2)]
    pub query_seed: u64,
    #[arg(long)]
    pub mask_invalid: bool,
    /// Output BEV tensor (GKTF, 1 view, 1 scale, C = d_model).
    #[arg(long)]
    pub out: PathBuf,
    /// Attention heatmap (binary PGM) of --heatmap-query.
    #[arg(long)]
    pub heatmap: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub heatmap_query: usize,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 6)]
    pub views: usize,
    #[arg(long, default_value_t = 2)]
    pub scales: usize,
    #[arg(long, default_value_t = 25)]
    pub rows: usize,
    #[arg(long, default_value_t = 25)]
    pub cols: usize,
    #[arg(long, default_value_t = 128)]
    pub channels: usize,
    #[arg(long, default_value = "3x3")]
    pub kernel: KernelSpec,
    #[arg(long, default_value = "im2col,sample,lut", value_delimiter = ',')]
    pub strategies: Vec<Strategy>,
    #[arg(long, default_value_t = 10)]
    pub warmup: usize,
    #[arg(long, default_value_t = 200)]
    pub iters: usize,
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RobustnessArgs {
    /// Rig config; the synthetic surround rig is used when absent.
    #[command(flatten)]
    pub scene: SceneArgs,
    #[arg(long, default_value = "3x3,5x5,7x3", value_delimiter = ',')]
    pub kernels: Vec<KernelSpec>,
    /// Translation sigmas (m).
    #[arg(long, value_delimiter = ',')]
    pub sigma_t: Option<Vec<f64>>,
    /// Rotation sigmas (rad).
    #[arg(long, value_delimiter = ',')]
    pub sigma_r: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1000)]
    pub draws: usize,
    /// BEV heights for the LUT-overlap sweep.
    #[arg(long, value_delimiter = ',')]
    pub heights: Option<Vec<f64>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Input problems discovered before any computation: always exit code 3.
fn require_file(path: &Path) -> Result<()> {
    if !path.is_file() {
        return Err(Error::Config(format!(
            "input file {} does not exist",
            path.display()
        )));
    }
    Ok(())
}

fn input_error(e: Error) -> Error {
    match e {
        Error::Io { path, source } => Error::Config(format!("{}: {source}", path.display())),
        Error::Format(f) => Error::Config(f.to_string()),
        other => other,
    }
}

fn load_config(path: &Path) -> Result<ConfigFile> {
    require_file(path)?;
    ConfigFile::load(path).map_err(input_error)
}

impl SceneArgs {
    fn is_empty(&self) -> bool {
        self.rig.is_none() && self.grid.is_none() && self.kernel.is_none()
    }

    fn load(&self) -> Result<Scene> {
        let rig_path = self
            .rig
            .as_ref()
            .ok_or_else(|| Error::Config("--rig is required".into()))?;
        let rig_cfg = load_config(rig_path)?;
        let grid_cfg = self.grid.as_deref().map(load_config).transpose()?;
        let rig = rig_cfg.rig()?;
        let grid = match &grid_cfg {
            Some(g) => g.grid()?,
            None => rig_cfg.grid()?,
        };
        let kernel = match (
            self.kernel,
            grid_cfg.as_ref().and_then(|g| g.kernel),
            rig_cfg.kernel,
        ) {
            (Some(k), _, _) | (None, Some(k), _) | (None, None, Some(k)) => k,
            (None, None, None) => {
                return Err(Error::Config(
                    "kernel: pass --kernel or add a [kernel] table".into(),
                ))
            }
        };
        kernel
            .validate()
            .map_err(|e| Error::Config(format!("kernel: {e}")))?;
        Scene::new(rig, grid, kernel)
    }
}

fn gen_synthetic(args: &GenArgs) -> Result<()> {
    let preset = SyntheticPreset {
        views: args.views,
        scales: args.scales,
        grid_rows: args.rows,
        grid_cols: args.cols,
        channels: args.channels,
        kernel: args.kernel,
        seed: args.seed,
        ..SyntheticPreset::default()
    };
    if [args.views, args.scales, args.rows, args.cols, args.channels].contains(&0) {
        return Err(Error::Config("all dimensions must be positive".into()));
    }
    let scene = preset.scene()?;
    let pyramid = preset.pyramid(&scene.rig)?;
    std::fs::create_dir_all(&args.out_dir).map_err(|e| Error::io(&args.out_dir, e))?;
    ConfigFile::from_rig(&scene.rig).save(args.out_dir.join("rig.toml"))?;
    ConfigFile {
        grid: Some(scene.grid),
        kernel: Some(scene.kernel),
        ..ConfigFile::default()
    }
    .save(args.out_dir.join("grid.toml"))?;
    pyramid.write(args.out_dir.join("features.gktf"))?;
    println!(
        "wrote rig.toml, grid.toml, features.gktf to {} ({} views, strides {:?}, {}x{} grid, C={})",
        args.out_dir.display(),
        scene.rig.num_views(),
        scene.rig.scale_strides(),
        scene.grid.rows,
        scene.grid.cols,
        pyramid.channels()
    );
    Ok(())
}

fn build_lut_cmd(args: &BuildLutArgs) -> Result<()> {
    let scene = args.scene.load()?;
    let lut = crate::lut::build_lut(&scene.rig, &scene.grid, &scene.kernel, args.height)?;
    lut.write(&args.out)?;
    let valid = lut.validity().iter().filter(|v| **v).count();
    println!(
        "{}: {} queries x {} entries, {:.1}% valid, fingerprint {:016x}",
        args.out.display(),
        lut.num_queries(),
        lut.block_len(),
        100.0 * valid as f64 / lut.validity().len() as f64,
        lut.fingerprint()
    );
    Ok(())
}

fn transform_cmd(args: &TransformArgs) -> Result<()> {
    require_file(&args.features)?;
    if let Some(p) = &args.lut {
        require_file(p)?;
    }
    if let Some(p) = &args.weights {
        require_file(p)?;
    }
    let scene = if args.scene.is_empty() {
        None
    } else {
        Some(args.scene.load()?)
    };
    let lut = args
        .lut
        .as_deref()
        .map(Lut::read)
        .transpose()
        .map_err(input_error)?;
    let pyramid = FeaturePyramid::read(&args.features).map_err(input_error)?;
    if let (Some(s), Some(l)) = (&scene, &lut) {
        if s.fingerprint() != l.fingerprint() {
            return Err(Error::Config(
                "LUT fingerprint does not match --rig/--grid/--kernel".into(),
            ));
        }
    }

    let unfolded = match (args.strategy, &scene, &lut) {
        (Strategy::Lut, _, Some(l)) => crate::gather::gather_lut(&pyramid, l)?,
        (Strategy::Lut, _, None) => return Err(Error::Config("--strategy lut needs --lut".into())),
        (s, Some(sc), _) => gather(s, sc, &pyramid, lut.as_ref(), &GatherOptions::default())?,
        (s, None, _) => {
            return Err(Error::Config(format!(
                "--strategy {s} needs --rig (and grid/kernel)"
            )))
        }
    };
    let (rows, cols) = match (&lut, &scene) {
        (Some(l), _) => l.grid_shape(),
        (None, Some(s)) => (s.grid.rows, s.grid.cols),
        (None, None) => unreachable!("one of lut/scene is present"),
    };

    let weights = match &args.weights {
        Some(p) => AttentionWeights::read(p).map_err(input_error)?,
        None => init_weights(pyramid.channels(), args.d_model, args.weight_seed)?,
    };
    let queries = init_embeddings(unfolded.num_queries(), weights.d_model, args.query_seed)?;
    let options = AttendOptions {
        mask_invalid: args.mask_invalid,
    };
    let bev = attend(&queries, &unfolded, &weights, &options)?.with_grid(rows, cols)?;
    bev.write(&args.out)?;
    println!(
        "{}: BEV features {}x{} ({} queries) x d_model {} via {}",
        args.out.display(),
        rows,
        cols,
        bev.num_queries(),
        bev.d_model,
        args.strategy
    );
    if let Some(path) = &args.heatmap {
        let alpha = attention_map(&queries, &unfolded, &weights, &options, args.heatmap_query)?;
        let pgm = heatmap_pgm(
            &alpha,
            unfolded.num_views() * unfolded.num_scales(),
            unfolded.positions_per_kernel(),
            8,
        )?;
        std::fs::write(path, pgm).map_err(|e| Error::io(path, e))?;
        println!(
            "{}: attention heatmap of query {}",
            path.display(),
            args.heatmap_query
        );
    }
    Ok(())
}

fn bench_cmd(args: &BenchArgs, threads: Option<usize>) -> Result<bool> {
    let config = BenchConfig {
        views: args.views,
        scales: args.scales,
        grid_rows: args.rows,
        grid_cols: args.cols,
        channels: args.channels,
        kernel: args.kernel,
        strategies: args.strategies.clone(),
        warmup_iters: args.warmup,
        measured_iters: args.iters,
        repetitions: args.reps,
        workers: threads.unwrap_or(1),
        seed: args.seed,
    };
    config
        .validate()
        .map_err(|e| Error::Config(e.to_string()))?;
    let report = run_bench_synthetic(&config)?;
    println!("# {}", report.scope);
    println!("# {}; workers {}", report.environment, report.workers);
    if let Some(t) = report.lut_build_s {
        println!("# LUT build (offline): {:.3} ms", t * 1e3);
    }
    if !report.is_valid() {
        eprintln!(
            "equivalence check failed: {}",
            report
                .first_difference
                .as_deref()
                .unwrap_or("unknown difference")
        );
    }
    println!(
        "{:<8} {:>12} {:>12} {:>12}",
        "strategy", "median ms", "min ms", "per second"
    );
    for r in &report.rows {
        println!(
            "{:<8} {:>12.3} {:>12.3} {:>12.1}",
            r.strategy,
            r.median_s * 1e3,
            r.min_s * 1e3,
            r.throughput_per_s
        );
    }
    if let Some(out) = &args.out {
        emit_report(&report, out)?;
    }
    Ok(report.is_valid())
}

fn robustness_cmd(args: &RobustnessArgs) -> Result<()> {
    let scene = if args.scene.rig.is_some() {
        // --kernels drives the sweep; the scene kernel only has to be valid
        let scene_args = SceneArgs {
            rig: args.scene.rig.clone(),
            grid: args.scene.grid.clone(),
            kernel: args.scene.kernel.or(args.kernels.first().copied()),
        };
        scene_args.load()?
    } else {
        SyntheticPreset::default().scene()?
    };
    let mut levels: Vec<DeviationLevel> = Vec::new();
    let (st, sr) = match (&args.sigma_t, &args.sigma_r) {
        (None, None) => (TRANSLATION_LEVELS.to_vec(), ROTATION_LEVELS.to_vec()),
        (t, r) => (t.clone().unwrap_or_default(), r.clone().unwrap_or_default()),
    };
    levels.extend(st.into_iter().map(DeviationLevel::translation));
    levels.extend(sr.into_iter().map(DeviationLevel::rotation));
    let config = RobustnessConfig {
        levels,
        kernels: args.kernels.clone(),
        draws: args.draws,
        seed: args.seed,
        heights: args
            .heights
            .clone()
            .unwrap_or_else(|| HEIGHT_LEVELS.to_vec()),
    };
    let report = run_robustness(&scene.rig, &scene.grid, &config).map_err(|e| match e {
        Error::Invalid { .. } => Error::Config(e.to_string()),
        other => other,
    })?;
    println!(
        "{:<12} {:>8} {:<10} {:>10} {:>10} {:>10}",
        "kind", "sigma", "kernel", "unchanged", "coverage", "shift px"
    );
    for r in &report.deviation {
        println!(
            "{:<12} {:>8} {:<10} {:>10.4} {:>10.4} {:>10.3}",
            r.kind.name(),
            r.sigma,
            r.kernel,
            r.unchanged_fraction,
            r.coverage_fraction,
            r.mean_shift_px
        );
    }
    for r in &report.height {
        println!(
            "height z={:<5} {:<10} LUT overlap with z=0: {:.4}",
            r.z, r.kernel, r.overlap_fraction
        );
    }
    if let Some(out) = &args.out {
        emit_report(&report, out)?;
    }
    Ok(())
}

fn inspect_cmd(file: &Path) -> Result<()> {
    require_file(file)?;
    let bytes = std::fs::read(file).map_err(|e| Error::io(file, e))?;
    let magic: [u8; 4] = bytes
        .get(..4)
        .and_then(|m| m.try_into().ok())
        .ok_or_else(|| Error::Config(format!("{}: too short to carry a header", file.display())))?;
    match &magic {
        m if *m == LUT_MAGIC => {
            let lut = Lut::from_bytes(&bytes).map_err(|e| Error::Config(e.to_string()))?;
            let (r, c) = lut.grid_shape();
            println!("GKTL v{}", crate::lut::LUT_VERSION);
            println!("fingerprint {:016x}", lut.fingerprint());
            println!(
                "grid {r}x{c}, views {}, scales {}, positions/kernel {}",
                lut.num_views(),
                lut.num_scales(),
                lut.positions_per_kernel()
            );
            println!("map dims {:?}", lut.map_dims());
        }
        m if *m == TENSOR_MAGIC => {
            let p = FeaturePyramid::from_bytes(&bytes).map_err(|e| Error::Config(e.to_string()))?;
            println!("GKTF v{}", crate::tensor::TENSOR_VERSION);
            println!(
                "views {}, scales {}, channels {}",
                p.num_views(),
                p.num_scales(),
                p.channels()
            );
            println!("map dims {:?}", p.dims());
        }
        m if *m == crate::attention::WEIGHTS_MAGIC => {
            let mut r = Reader::with_header(
                &bytes,
                &crate::attention::WEIGHTS_MAGIC,
                crate::attention::WEIGHTS_VERSION,
            )
            .map_err(|e| Error::Config(e.to_string()))?;
            let c = r.u32().map_err(|e| Error::Config(e.to_string()))?;
            let d = r.u32().map_err(|e| Error::Config(e.to_string()))?;
            println!("GKTW v{}", crate::attention::WEIGHTS_VERSION);
            println!("channels {c}, d_model {d}");
        }
        other => {
            return Err(Error::Config(format!(
                "{}: unknown magic {:?}",
                file.display(),
                String::from_utf8_lossy(other)
            )))
        }
    }
    Ok(())
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } => EXIT_IO,
        Error::Config(_)
        | Error::Invalid { .. }
        | Error::Format(_)
        | Error::ShapeMismatch(_)
        | Error::OutOfRange { .. } => EXIT_CONFIG,
        Error::MemoryCap { .. } | Error::NonFinite { .. } | Error::Internal(_) => EXIT_FAILURE,
    }
}

fn dispatch(cli: &Cli) -> Result<i32> {
    if let Some(n) = cli.threads {
        // Only the first configuration of the global pool takes effect.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }
    match &cli.command {
        Command::GenSynthetic(a) => gen_synthetic(a)?,
        Command::BuildLut(a) => build_lut_cmd(a)?,
        Command::Transform(a) => transform_cmd(a)?,
        Command::Bench(a) => {
            if !bench_cmd(a, cli.threads)? {
                return Ok(EXIT_EQUIVALENCE);
            }
        }
        Command::Robustness(a) => robustness_cmd(a)?,
        Command::Inspect { file } => inspect_cmd(file)?,
    }
    Ok(EXIT_OK)
}

/// Parses `args` (program name first) and runs; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
