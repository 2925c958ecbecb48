//! Strategy benchmark and camera-deviation robustness statistics.
//!
//! The benchmark times the unfolding stage only (the part that differs
//! between strategies); attention and everything after it are excluded.
//! Timings are only accepted after all strategies have produced bit-identical
//! outputs on the benchmark inputs.
//!
//! # CSV schemas
//!
//! Benchmark (`BenchReport::CSV_HEADER`):
//! `strategy,median_s,min_s,throughput_per_s,equivalent,workers,warmup_iters,measured_iters,repetitions`
//!
//! Robustness (`RobustnessReport::CSV_HEADER`):
//! `section,kind,level,kernel,draws,unchanged_fraction,coverage_fraction,mean_shift_px,overlap_fraction`
//! where `section` is `deviation` (kind `translation` or `rotation`, level =
//! sigma in meters or radians, overlap empty) or `height` (kind `height`,
//! level = z in meters, only overlap filled).
//!
//! Each CSV is written with a JSON twin next to it (same stem, `.json`).

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::deviation::{deviate_rig, sample_deviation, DeviationConfig};
use crate::error::{Error, Result};
use crate::gather::{gather_into, GatherOptions, Strategy, UnfoldedFeatures};
use crate::geometry::{project_point, round_pixel, CameraRig, PixelCoord, RoundedPixel};
use crate::grid::{BevGridSpec, KernelSpec};
use crate::lut::{build_lut, Lut};
use crate::scene::Scene;
use crate::synthetic::SyntheticPreset;
use crate::tensor::FeaturePyramid;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub views: usize,
    pub scales: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub channels: usize,
    pub kernel: KernelSpec,
    pub strategies: Vec<Strategy>,
    pub warmup_iters: usize,
    pub measured_iters: usize,
    pub repetitions: usize,
    pub workers: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            views: 6,
            scales: 2,
            grid_rows: 25,
            grid_cols: 25,
            channels: 128,
            kernel: KernelSpec::full(3, 3).expect("3x3 is valid"),
            strategies: Strategy::ALL.to_vec(),
            warmup_iters: 10,
            measured_iters: 200,
            repetitions: 5,
            workers: 1,
            seed: 0,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.views,
            self.scales,
            self.grid_rows,
            self.grid_cols,
            self.channels,
            self.workers,
        ];
        if dims.contains(&0) {
            return Err(Error::invalid(
                "bench config",
                "views, scales, grid, channels and workers must be positive",
            ));
        }
        if self.measured_iters < 1 {
            return Err(Error::invalid(
                "bench config",
                "measured_iters must be >= 1",
            ));
        }
        if self.repetitions < 3 {
            return Err(Error::invalid("bench config", "repetitions must be >= 3"));
        }
        if self.strategies.is_empty() {
            return Err(Error::invalid("bench config", "no strategies selected"));
        }
        self.kernel.validate()
    }

    fn preset(&self) -> SyntheticPreset {
        SyntheticPreset {
            views: self.views,
            scales: self.scales,
            grid_rows: self.grid_rows,
            grid_cols: self.grid_cols,
            channels: self.channels,
            kernel: self.kernel,
            seed: self.seed,
            ..SyntheticPreset::default()
        }
    }

    /// Synthetic surround-view scene and random pyramid matching these dims.
    pub fn instance(&self) -> Result<(Scene, FeaturePyramid)> {
        self.validate()?;
        let preset = self.preset();
        let scene = preset.scene()?;
        let pyramid = preset.pyramid(&scene.rig)?;
        Ok((scene, pyramid))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyTiming {
    pub strategy: String,
    /// Median over repetitions of seconds per transform.
    pub median_s: f64,
    pub min_s: f64,
    /// Transforms per second at the median.
    pub throughput_per_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<StrategyTiming>,
    pub equivalent: bool,
    pub first_difference: Option<String>,
    pub workers: usize,
    pub warmup_iters: usize,
    pub measured_iters: usize,
    pub repetitions: usize,
    pub lut_build_s: Option<f64>,
    pub scope: String,
    pub environment: String,
}

const BENCH_SCOPE: &str = "unfolding stage only (gather); attention, backbone and decoder excluded";

fn environment_note() -> String {
    format!(
        "{}-{}, {} logical cpus, {} build",
        std::env::consts::OS,
        std::env::consts::ARCH,
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1),
        if cfg!(debug_assertions) {
            "debug-assertions"
        } else {
            "release"
        }
    )
}

impl BenchReport {
    pub const CSV_HEADER: [&'static str; 9] = [
        "strategy",
        "median_s",
        "min_s",
        "throughput_per_s",
        "equivalent",
        "workers",
        "warmup_iters",
        "measured_iters",
        "repetitions",
    ];

    /// Valid only when every strategy produced bit-identical outputs.
    pub fn is_valid(&self) -> bool {
        self.equivalent
    }

    pub fn row(&self, strategy: Strategy) -> Option<&StrategyTiming> {
        self.rows.iter().find(|r| r.strategy == strategy.name())
    }

    fn records(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                vec![
                    r.strategy.clone(),
                    r.median_s.to_string(),
                    r.min_s.to_string(),
                    r.throughput_per_s.to_string(),
                    self.equivalent.to_string(),
                    self.workers.to_string(),
                    self.warmup_iters.to_string(),
                    self.measured_iters.to_string(),
                    self.repetitions.to_string(),
                ]
            })
            .collect()
    }

    /// Reads the strategy rows back from CSV text.
    pub fn rows_from_csv(text: &str) -> Result<Vec<StrategyTiming>> {
        read_csv(text, &Self::CSV_HEADER)?
            .into_iter()
            .map(|r| {
                Ok(StrategyTiming {
                    strategy: r[0].clone(),
                    median_s: num(&r[1])?,
                    min_s: num(&r[2])?,
                    throughput_per_s: num(&r[3])?,
                })
            })
            .collect()
    }
}

/// Times every configured strategy on identical inputs.
///
/// Each strategy runs once up front and the outputs are compared bitwise; on
/// any difference the report comes back invalid with no timings. Otherwise
/// every repetition times `measured_iters` back-to-back transforms per
/// strategy (order rotated between repetitions) after `warmup_iters`
/// untimed ones.
pub fn run_bench(
    config: &BenchConfig,
    scene: &Scene,
    pyramid: &FeaturePyramid,
    lut: &Lut,
) -> Result<BenchReport> {
    config.validate()?;
    pyramid.check_rig(&scene.rig)?;
    if lut.fingerprint() != scene.fingerprint() {
        return Err(Error::ShapeMismatch(
            "LUT was built for a different rig/grid/kernel".into(),
        ));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::Internal(format!("thread pool: {e}")))?;
    let options = GatherOptions::default();
    let mut report = BenchReport {
        rows: Vec::new(),
        equivalent: true,
        first_difference: None,
        workers: config.workers,
        warmup_iters: config.warmup_iters,
        measured_iters: config.measured_iters,
        repetitions: config.repetitions,
        lut_build_s: None,
        scope: BENCH_SCOPE.into(),
        environment: environment_note(),
    };

    pool.install(|| -> Result<BenchReport> {
        let fresh = || {
            UnfoldedFeatures::zeros(
                scene.num_queries(),
                scene.rig.num_views(),
                scene.rig.num_scales(),
                pyramid.channels(),
                scene.positions_per_kernel(),
            )
        };
        let mut outputs: Vec<UnfoldedFeatures> = Vec::new();
        for &s in &config.strategies {
            let mut out = fresh();
            gather_into(s, scene, pyramid, Some(lut), &options, &mut out)?;
            outputs.push(out);
        }
        for (s, out) in config.strategies.iter().zip(&outputs).skip(1) {
            if let Some((q, i)) = outputs[0].first_difference(out) {
                report.equivalent = false;
                report.first_difference = Some(format!(
                    "{} vs {}: query {q}, offset {i}",
                    config.strategies[0], s
                ));
                return Ok(report.clone());
            }
        }

        for (&s, out) in config.strategies.iter().zip(outputs.iter_mut()) {
            for _ in 0..config.warmup_iters {
                gather_into(s, scene, pyramid, Some(lut), &options, out)?;
            }
        }
        let n = config.strategies.len();
        let mut samples = vec![Vec::with_capacity(config.repetitions); n];
        for rep in 0..config.repetitions {
            for j in 0..n {
                let k = (j + rep) % n;
                let s = config.strategies[k];
                let start = Instant::now();
                for _ in 0..config.measured_iters {
                    gather_into(s, scene, pyramid, Some(lut), &options, &mut outputs[k])?;
                }
                samples[k].push(start.elapsed().as_secs_f64() / config.measured_iters as f64);
            }
        }
        report.rows = config
            .strategies
            .iter()
            .zip(samples)
            .map(|(s, mut t)| {
                t.sort_by(f64::total_cmp);
                let median = t[t.len() / 2];
                StrategyTiming {
                    strategy: s.name().into(),
                    median_s: median,
                    min_s: t[0],
                    throughput_per_s: 1.0 / median,
                }
            })
            .collect();
        Ok(report.clone())
    })
}

/// Builds the benchmark instance, times the LUT build, then runs the bench.
pub fn run_bench_synthetic(config: &BenchConfig) -> Result<BenchReport> {
    let (scene, pyramid) = config.instance()?;
    let start = Instant::now();
    let lut = scene.build_lut()?;
    let build = start.elapsed().as_secs_f64();
    let mut report = run_bench(config, &scene, &pyramid, &lut)?;
    report.lut_build_s = Some(build);
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LevelKind {
    Translation,
    Rotation,
}

impl LevelKind {
    pub fn name(&self) -> &'static str {
        match self {
            LevelKind::Translation => "translation",
            LevelKind::Rotation => "rotation",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviationLevel {
    pub kind: LevelKind,
    pub sigma: f64,
}

impl DeviationLevel {
    pub fn translation(sigma: f64) -> Self {
        DeviationLevel {
            kind: LevelKind::Translation,
            sigma,
        }
    }

    pub fn rotation(sigma: f64) -> Self {
        DeviationLevel {
            kind: LevelKind::Rotation,
            sigma,
        }
    }

    fn config(&self, seed: u64) -> Result<DeviationConfig> {
        match self.kind {
            LevelKind::Translation => DeviationConfig::new(self.sigma, 0.0, seed),
            LevelKind::Rotation => DeviationConfig::new(0.0, self.sigma, seed),
        }
    }
}

/// Translation levels (m) and rotation levels (rad) of the standard sweep.
pub const TRANSLATION_LEVELS: [f64; 4] = [0.05, 0.1, 0.5, 1.0];
pub const ROTATION_LEVELS: [f64; 4] = [0.005, 0.01, 0.02, 0.05];
pub const HEIGHT_LEVELS: [f64; 4] = [-1.0, 0.0, 1.0, 2.0];

pub fn standard_levels() -> Vec<DeviationLevel> {
    TRANSLATION_LEVELS
        .iter()
        .map(|&s| DeviationLevel::translation(s))
        .chain(ROTATION_LEVELS.iter().map(|&s| DeviationLevel::rotation(s)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessConfig {
    pub levels: Vec<DeviationLevel>,
    pub kernels: Vec<KernelSpec>,
    pub draws: usize,
    pub seed: u64,
    /// Plane heights compared against the z = 0 table; empty skips the sweep.
    pub heights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationRow {
    pub kind: LevelKind,
    pub sigma: f64,
    pub kernel: String,
    pub draws: usize,
    /// Targets whose rounded prior did not move.
    pub unchanged_fraction: f64,
    /// Targets whose undeviated prior lies inside the deviated kernel region.
    pub coverage_fraction: f64,
    /// Mean continuous pixel shift of targets still in front of the camera.
    pub mean_shift_px: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeightRow {
    pub z: f64,
    pub kernel: String,
    /// Fraction of LUT entries identical to the z = 0 table.
    pub overlap_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub deviation: Vec<DeviationRow>,
    pub height: Vec<HeightRow>,
}

impl RobustnessReport {
    pub const CSV_HEADER: [&'static str; 9] = [
        "section",
        "kind",
        "level",
        "kernel",
        "draws",
        "unchanged_fraction",
        "coverage_fraction",
        "mean_shift_px",
        "overlap_fraction",
    ];

    pub fn row(&self, level: &DeviationLevel, kernel: &KernelSpec) -> Option<&DeviationRow> {
        let name = kernel.to_string();
        self.deviation
            .iter()
            .find(|r| r.kind == level.kind && r.sigma == level.sigma && r.kernel == name)
    }

    fn records(&self) -> Vec<Vec<String>> {
        let dev = self.deviation.iter().map(|r| {
            vec![
                "deviation".into(),
                r.kind.name().into(),
                r.sigma.to_string(),
                r.kernel.clone(),
                r.draws.to_string(),
                r.unchanged_fraction.to_string(),
                r.coverage_fraction.to_string(),
                r.mean_shift_px.to_string(),
                String::new(),
            ]
        });
        let height = self.height.iter().map(|r| {
            vec![
                "height".into(),
                "height".into(),
                r.z.to_string(),
                r.kernel.clone(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                r.overlap_fraction.to_string(),
            ]
        });
        dev.chain(height).collect()
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut report = RobustnessReport::default();
        for r in read_csv(text, &Self::CSV_HEADER)? {
            match r[0].as_str() {
                "deviation" => report.deviation.push(DeviationRow {
                    kind: match r[1].as_str() {
                        "translation" => LevelKind::Translation,
                        "rotation" => LevelKind::Rotation,
                        other => {
                            return Err(Error::Config(format!("unknown deviation kind {other:?}")))
                        }
                    },
                    sigma: num(&r[2])?,
                    kernel: r[3].clone(),
                    draws: r[4]
                        .parse()
                        .map_err(|_| Error::Config(format!("bad draws {:?}", r[4])))?,
                    unchanged_fraction: num(&r[5])?,
                    coverage_fraction: num(&r[6])?,
                    mean_shift_px: num(&r[7])?,
                }),
                "height" => report.height.push(HeightRow {
                    z: num(&r[2])?,
                    kernel: r[3].clone(),
                    overlap_fraction: num(&r[8])?,
                }),
                other => return Err(Error::Config(format!("unknown report section {other:?}"))),
            }
        }
        Ok(report)
    }
}

/// Continuous and rounded prior of every (query, view, scale), query-major.
fn priors(rig: &CameraRig, grid: &BevGridSpec) -> Vec<(PixelCoord, RoundedPixel)> {
    (0..grid.num_cells())
        .flat_map(|q| {
            let p = grid.center_unchecked(q / grid.cols, q % grid.cols);
            rig.views()
                .iter()
                .flat_map(move |v| {
                    rig.scale_strides().iter().map(move |&s| {
                        let c = project_point(&p, v, s);
                        (c, round_pixel(&c))
                    })
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

#[derive(Debug, Clone, Default)]
struct DrawStats {
    targets: u64,
    unchanged: u64,
    covered: Vec<u64>,
    shift_sum: f64,
    shift_count: u64,
}

/// Prior stability and kernel coverage under sampled deviations, plus the
/// BEV-height LUT overlap sweep.
///
/// A target is a (query, view, scale) whose undeviated prior is valid and
/// inside its feature map. All kernels at one level see the same draws, so
/// coverage is monotone under kernel containment.
pub fn run_robustness(
    rig: &CameraRig,
    grid: &BevGridSpec,
    config: &RobustnessConfig,
) -> Result<RobustnessReport> {
    grid.validate()?;
    if config.draws < 100 {
        return Err(Error::invalid(
            "robustness config",
            format!("draws must be >= 100, got {}", config.draws),
        ));
    }
    if config.kernels.is_empty() {
        return Err(Error::invalid("robustness config", "no kernels selected"));
    }
    for k in &config.kernels {
        k.validate()?;
    }
    let dims: Vec<(usize, usize)> = rig.feature_sizes();
    let maps = dims.len();
    let base = priors(rig, grid);
    let inside = |i: usize, p: &RoundedPixel| {
        let (h, w) = dims[i % maps];
        p.valid && p.row >= 0 && p.col >= 0 && (p.row as usize) < h && (p.col as usize) < w
    };

    let mut report = RobustnessReport::default();
    for level in &config.levels {
        let dev = level.config(config.seed)?;
        let per_draw = (0..config.draws as u64)
            .into_par_iter()
            .map(|draw| -> Result<DrawStats> {
                let sample = sample_deviation(&dev, rig.num_views(), draw);
                let moved = priors(&deviate_rig(rig, &sample)?, grid);
                let mut st = DrawStats {
                    covered: vec![0; config.kernels.len()],
                    ..Default::default()
                };
                for (i, ((c0, r0), (c1, r1))) in base.iter().zip(&moved).enumerate() {
                    if !inside(i, r0) {
                        continue;
                    }
                    st.targets += 1;
                    if !r1.valid {
                        continue;
                    }
                    st.shift_sum += (c1.u - c0.u).hypot(c1.v - c0.v);
                    st.shift_count += 1;
                    if r1 == r0 {
                        st.unchanged += 1;
                    }
                    for (k, kernel) in config.kernels.iter().enumerate() {
                        if kernel.contains(r0.row - r1.row, r0.col - r1.col) {
                            st.covered[k] += 1;
                        }
                    }
                }
                Ok(st)
            })
            .collect::<Result<Vec<_>>>()?;

        let mut total = DrawStats {
            covered: vec![0; config.kernels.len()],
            ..Default::default()
        };
        for st in &per_draw {
            total.targets += st.targets;
            total.unchanged += st.unchanged;
            total.shift_sum += st.shift_sum;
            total.shift_count += st.shift_count;
            for (a, b) in total.covered.iter_mut().zip(&st.covered) {
                *a += b;
            }
        }
        let frac = |n: u64| {
            if total.targets == 0 {
                1.0
            } else {
                n as f64 / total.targets as f64
            }
        };
        for (k, kernel) in config.kernels.iter().enumerate() {
            report.deviation.push(DeviationRow {
                kind: level.kind,
                sigma: level.sigma,
                kernel: kernel.to_string(),
                draws: config.draws,
                unchanged_fraction: frac(total.unchanged),
                coverage_fraction: frac(total.covered[k]),
                mean_shift_px: if total.shift_count == 0 {
                    0.0
                } else {
                    total.shift_sum / total.shift_count as f64
                },
            });
        }
    }

    for kernel in &config.kernels {
        if config.heights.is_empty() {
            break;
        }
        let reference = build_lut(rig, grid, kernel, Some(0.0))?;
        for &z in &config.heights {
            let lut = build_lut(rig, grid, kernel, Some(z))?;
            report.height.push(HeightRow {
                z,
                kernel: kernel.to_string(),
                overlap_fraction: lut.overlap_fraction(&reference)?,
            });
        }
    }
    Ok(report)
}

fn num(s: &str) -> Result<f64> {
    s.parse()
        .map_err(|_| Error::Config(format!("bad number {s:?} in report")))
}

fn read_csv(text: &str, header: &[&str]) -> Result<Vec<Vec<String>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let got: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Config(format!("report header: {e}")))?
        .iter()
        .map(str::to_owned)
        .collect();
    if got != header {
        return Err(Error::Config(format!(
            "report header {got:?} does not match {header:?}"
        )));
    }
    rdr.records()
        .map(|r| {
            r.map(|rec| rec.iter().map(str::to_owned).collect())
                .map_err(|e| Error::Config(format!("report row: {e}")))
        })
        .collect()
}

fn write_csv(header: &[&str], records: &[Vec<String>]) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in records {
        w.write_record(r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// Reports that can be written as CSV plus a JSON twin.
pub trait Report: Serialize {
    fn csv_header(&self) -> &'static [&'static str];
    fn csv_records(&self) -> Vec<Vec<String>>;

    fn to_csv(&self) -> String {
        String::from_utf8(write_csv(self.csv_header(), &self.csv_records()))
            .expect("csv output is utf-8")
    }
}

impl Report for BenchReport {
    fn csv_header(&self) -> &'static [&'static str] {
        &Self::CSV_HEADER
    }

    fn csv_records(&self) -> Vec<Vec<String>> {
        self.records()
    }
}

impl Report for RobustnessReport {
    fn csv_header(&self) -> &'static [&'static str] {
        &Self::CSV_HEADER
    }

    fn csv_records(&self) -> Vec<Vec<String>> {
        self.records()
    }
}

/// Path of the JSON twin written next to a CSV report.
pub fn json_twin(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes `path` (CSV) and its JSON twin.
pub fn emit_report<R: Report>(report: &R, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, report.to_csv()).map_err(|e| Error::io(path, e))?;
    let twin = json_twin(path);
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::Internal(e.to_string()))?;
    std::fs::write(&twin, json).map_err(|e| Error::io(&twin, e))
}
