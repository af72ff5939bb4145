//! Run configuration, cached fixtures, experiment blocks and report emission.

use std::cell::OnceCell;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::bounds::{
    change_factor, lower_bound_experiment, rdf_transfer_check, sparse_exponent, spread, verify_commutator_two_weight,
    verify_sparse_weighted_bound, verify_t_weighted, weighted_norm, LowerBoundInput, NormReport, Stability,
    STABILITY_FACTOR,
};
use crate::dyadic::{build_bundle, scale_range, verify_dyadic_properties, DyadicSystem, SparseFamily, SystemBundle};
use crate::error::{Error, Result};
use crate::measure::{build_grid, doubling_and_growth, verify_comparison, verify_scaling, GridParams, Metric, WeightedGrid};
use crate::operators::{cz_check, kernel_from_key, BallFamily, DiscreteOperator, KernelModel, DEFAULT_EXPLOSION_CAP};
use crate::reflection::{catalog, dunkl_distance, generate_group, homogeneous_dimension, norm, RootSystem};
use crate::sparse::{
    calibrate_inflation, sparse_family_commutator, sparse_family_t, SparseConstants, SparseContext, Strategy,
    DEFAULT_MAX_DEPTH,
};
use crate::trials::{symbol_from_key, trial_function};
use crate::weights::{
    ap_constant, bmo_norm, default_family, mdnorm_bound, orbit_close, reverse_holder, rubio_de_francia,
    verify_inclusion, verify_wp, weight_from_key, TestFamily, Weight, RH_DEFAULT_CAP,
};

pub const REPORT_FORMAT: &str = "dunkl-sparse-report/1";
pub const CACHE_ENV: &str = "DUNKL_SPARSE_CACHE";

/// Experiment names in dependency order.
pub const EXPERIMENTS: [&str; 14] = [
    "reflection",
    "measure",
    "dyadic",
    "kernel",
    "sparse",
    "commutator",
    "ap",
    "rh",
    "bmo",
    "rdf",
    "weighted",
    "two_weight",
    "lower",
    "rdf_transfer",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightPair {
    pub u: String,
    pub v: String,
    pub p: f64,
    /// Symbols in the weighted BMO space of `(u/v)^{1/p}`.
    pub symbols: Vec<String>,
}

impl Default for WeightPair {
    fn default() -> Self {
        WeightPair {
            u: "const:1".into(),
            v: "const:1".into(),
            p: 2.0,
            symbols: vec!["coord:1".into(), "logd".into()],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LowerConfig {
    /// Defaults to the point at one fifth of every side.
    pub center: Option<Vec<f64>>,
    /// Defaults to a twentieth of the smallest side.
    pub radius: Option<f64>,
    /// One-based shift direction.
    pub axis: Option<usize>,
    /// Defaults to `coord:<axis>`.
    pub symbol: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub root_system: String,
    pub kappa: Vec<f64>,
    /// Per-axis interval; the box is its power.
    pub bounds: [f64; 2],
    pub clip_radius: Option<f64>,
    pub resolution: usize,
    pub delta: f64,
    pub scale_range: Option<[i32; 2]>,
    pub bundle_size: usize,
    pub kernel: String,
    pub strategy: Strategy,
    pub weights: Vec<String>,
    pub symbols: Vec<String>,
    pub p: Vec<f64>,
    pub two_weight: WeightPair,
    pub lower: LowerConfig,
    pub seed: u64,
    pub sparse_trials: usize,
    pub commutator_trials: usize,
    pub weighted_trials: usize,
    pub rdf_trials: usize,
    pub rdf_terms: usize,
    pub rdf_p: f64,
    pub wp_draws: usize,
    pub samples: usize,
    pub batches: usize,
    /// Repeat stability-checked experiments at twice the resolution.
    pub check_resolution: bool,
    pub experiments: Vec<String>,
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            root_system: "trivial".into(),
            kappa: Vec::new(),
            bounds: [-1.0, 1.0],
            clip_radius: None,
            resolution: 256,
            delta: 0.5,
            scale_range: None,
            bundle_size: 3,
            kernel: "riesz:1".into(),
            strategy: Strategy::TopCube,
            weights: vec!["const:1".into(), "dunkl_power:0.25".into(), "dunkl_power:-0.5".into()],
            symbols: vec!["coord:1".into(), "logd".into()],
            p: vec![1.5, 2.0, 3.0],
            two_weight: WeightPair::default(),
            lower: LowerConfig::default(),
            seed: 1,
            sparse_trials: 50,
            commutator_trials: 20,
            weighted_trials: 20,
            rdf_trials: 20,
            rdf_terms: 30,
            rdf_p: 2.0,
            wp_draws: 500,
            samples: 2000,
            batches: 5,
            check_resolution: true,
            experiments: Vec::new(),
            output_dir: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn root_system(&self) -> Result<RootSystem> {
        catalog(&self.root_system, &self.kappa)
    }

    pub fn grid_params(&self, resolution: usize) -> Result<GridParams> {
        let rs = self.root_system()?;
        let mut p = GridParams::cube(rs.dim, self.bounds[0], self.bounds[1], resolution);
        p.clip_radius = self.clip_radius;
        Ok(p)
    }

    /// Checks every key and numeric constraint without building anything.
    pub fn validate(&self) -> Result<()> {
        let rs = self.root_system()?;
        kernel_from_key(&self.kernel, &rs)?;
        for w in self.weights.iter().chain([&self.two_weight.u, &self.two_weight.v]) {
            check_weight_key(w)?;
        }
        for s in self.symbols.iter().chain(&self.two_weight.symbols) {
            symbol_from_key(s)?;
        }
        if let Some(s) = &self.lower.symbol {
            symbol_from_key(s)?;
        }
        for e in &self.experiments {
            if !EXPERIMENTS.contains(&e.as_str()) {
                return Err(Error::UnknownKey(format!("experiment `{e}`")));
            }
        }
        if !(self.bounds[0] < self.bounds[1]) {
            return Err(Error::Parameter("box interval must be increasing".into()));
        }
        if self.resolution < 8 {
            return Err(Error::Parameter("resolution must be at least 8".into()));
        }
        if !(self.delta > 0.0 && self.delta <= 0.5) {
            return Err(Error::Parameter("delta must lie in (0, 1/2]".into()));
        }
        if let Some([lo, hi]) = self.scale_range {
            if lo > hi {
                return Err(Error::Parameter("scale range must be ordered".into()));
            }
        }
        if self.bundle_size == 0 || self.batches == 0 {
            return Err(Error::Parameter("bundle size and batch count must be positive".into()));
        }
        if self.p.iter().chain([&self.two_weight.p, &self.rdf_p]).any(|&p| !(p > 1.0)) {
            return Err(Error::Parameter("every exponent must exceed 1".into()));
        }
        Ok(())
    }

    /// Requested experiments sorted into dependency order.
    pub fn ordered_experiments(&self) -> Vec<&'static str> {
        EXPERIMENTS
            .iter()
            .copied()
            .filter(|e| self.experiments.iter().any(|r| r == e))
            .collect()
    }
}

fn check_weight_key(key: &str) -> Result<()> {
    match key.split_once(':') {
        Some(("const" | "dunkl_power" | "euclid_power", v)) if v.parse::<f64>().is_ok() => Ok(()),
        _ => Err(Error::UnknownKey(key.to_string())),
    }
}

// ---------------------------------------------------------------------------
// Fixtures.

/// Grid, dyadic bundle and the lazily assembled operator data for one resolution.
pub struct Fixture {
    pub resolution: usize,
    pub grid: WeightedGrid,
    pub bundle: SystemBundle,
    pub kernel: KernelModel,
    pub cache_hit: bool,
    seed: u64,
    op: OnceCell<DiscreteOperator>,
    balls: OnceCell<BallFamily>,
    constants: OnceCell<SparseConstants>,
    family: OnceCell<TestFamily>,
}

#[derive(Serialize)]
struct CacheKey<'a> {
    format: &'static str,
    version: &'static str,
    roots: &'a RootSystem,
    params: &'a GridParams,
    delta: f64,
    scales: (i32, i32),
    bundle_size: usize,
    seed: u64,
}

fn lazy<'a, T>(cell: &'a OnceCell<T>, build: impl FnOnce() -> Result<T>) -> Result<&'a T> {
    if let Some(v) = cell.get() {
        return Ok(v);
    }
    let v = build()?;
    Ok(cell.get_or_init(|| v))
}

impl Fixture {
    pub fn build(cfg: &RunConfig, resolution: usize) -> Result<Self> {
        let rs = cfg.root_system()?;
        let params = cfg.grid_params(resolution)?;
        let kernel = kernel_from_key(&cfg.kernel, &rs)?;
        let cache = std::env::var_os(CACHE_ENV).map(PathBuf::from);
        let grid = build_grid(&params, &rs)?;
        let scales = match cfg.scale_range {
            Some([lo, hi]) => (lo, hi),
            None => scale_range(&grid, cfg.delta)?,
        };
        let key = CacheKey {
            format: "fixture/2",
            version: env!("CARGO_PKG_VERSION"),
            roots: &rs,
            params: &params,
            delta: cfg.delta,
            scales,
            bundle_size: cfg.bundle_size,
            seed: cfg.seed,
        };
        let digest = hex::encode(Sha256::digest(serde_json::to_vec(&key)?));
        let cached = cache.as_ref().and_then(|dir| load_bundle(&dir.join(format!("{digest}.bundle.json")), &grid).ok());
        let cache_hit = cached.is_some();
        let bundle = match cached {
            Some(b) => b,
            None => {
                let b = build_bundle(&grid, cfg.delta, scales.0, scales.1, cfg.seed, cfg.bundle_size)?;
                if let Some(dir) = &cache {
                    fs::create_dir_all(dir)?;
                    fs::write(dir.join(format!("{digest}.bundle.json")), serde_json::to_vec(&b.systems)?)?;
                    let mut out = fs::File::create(dir.join(format!("{digest}.grid")))?;
                    grid.write_to(&mut out)?;
                }
                b
            }
        };
        Ok(Fixture {
            resolution,
            grid,
            bundle,
            kernel,
            cache_hit,
            seed: cfg.seed,
            op: OnceCell::new(),
            balls: OnceCell::new(),
            constants: OnceCell::new(),
            family: OnceCell::new(),
        })
    }

    pub fn op(&self) -> Result<&DiscreteOperator> {
        lazy(&self.op, || DiscreteOperator::assemble(&self.grid, &self.kernel, None))
    }

    /// Dunkl ball ladder.
    pub fn balls(&self) -> &BallFamily {
        self.balls.get_or_init(|| BallFamily::ladder(&self.grid, Metric::Dunkl))
    }

    pub fn constants(&self) -> Result<SparseConstants> {
        lazy(&self.constants, || {
            let c0 = calibrate_inflation(&self.grid, &self.bundle, 200, self.seed)?;
            Ok(SparseConstants::new(c0, self.bundle.doubling_constant()))
        })
        .copied()
    }

    /// Orbit balls plus the cubes of the first system.
    pub fn test_family(&self) -> Result<&TestFamily> {
        lazy(&self.family, || default_family(&self.grid, Some(&self.bundle.systems[0]), self.seed))
    }

    pub fn context(&self) -> Result<SparseContext<'_>> {
        Ok(SparseContext {
            grid: &self.grid,
            bundle: &self.bundle,
            op: self.op()?,
            balls: self.balls(),
            constants: self.constants()?,
            max_depth: DEFAULT_MAX_DEPTH,
        })
    }
}

fn load_bundle(path: &Path, grid: &WeightedGrid) -> Result<SystemBundle> {
    let mut systems: Vec<DyadicSystem> = serde_json::from_slice(&fs::read(path)?)?;
    for s in &mut systems {
        s.restore(grid.len())?;
    }
    if systems.is_empty() {
        return Err(Error::Format("empty cached bundle".into()));
    }
    Ok(SystemBundle { systems })
}

// ---------------------------------------------------------------------------
// Report.

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub experiment: String,
    pub case: String,
    pub resolution: usize,
    pub batch: usize,
    pub trial: usize,
    /// Absent when the ratio is not finite.
    pub ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub pass: bool,
    pub error: Option<String>,
    /// Finite constants only; the names of non-finite ones go to `nonfinite`.
    pub constants: BTreeMap<String, f64>,
    pub nonfinite: Vec<String>,
    /// Named sub-checks; `pass` is their conjunction with any unnamed requirement.
    pub checks: BTreeMap<String, bool>,
    pub detail: Value,
    pub rows: Vec<TrialRow>,
}

impl Block {
    fn new(name: &str) -> Self {
        Block {
            name: name.into(),
            pass: true,
            error: None,
            constants: BTreeMap::new(),
            nonfinite: Vec::new(),
            checks: BTreeMap::new(),
            detail: Value::Null,
            rows: Vec::new(),
        }
    }

    fn put(&mut self, name: impl Into<String>, v: f64) {
        let name = name.into();
        if v.is_finite() {
            self.constants.insert(name, v);
        } else {
            self.nonfinite.push(name);
        }
    }

    fn require(&mut self, ok: bool) {
        self.pass &= ok;
    }

    fn check(&mut self, name: impl Into<String>, ok: bool) {
        *self.checks.entry(name.into()).or_insert(true) &= ok;
        self.pass &= ok;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub format: String,
    pub config: RunConfig,
    pub blocks: Vec<Block>,
    pub pass: bool,
    /// Wall-clock seconds per experiment; excluded from [`RunReport::numeric_json`].
    pub wall_seconds: BTreeMap<String, f64>,
}

impl RunReport {
    pub fn empty(config: RunConfig) -> Self {
        RunReport {
            format: REPORT_FORMAT.into(),
            config,
            blocks: Vec::new(),
            pass: true,
            wall_seconds: BTreeMap::new(),
        }
    }

    /// JSON without timings: identical across runs of the same config.
    pub fn numeric_json(&self) -> Result<String> {
        let mut copy = self.clone();
        copy.wall_seconds.clear();
        Ok(serde_json::to_string_pretty(&copy)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn rows(&self) -> impl Iterator<Item = &TrialRow> {
        self.blocks.iter().flat_map(|b| b.rows.iter())
    }

    pub fn block(&self, name: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.name == name)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Csv,
}

/// Writes `report.json` or `trials.csv` (one row per trial) into `dir`.
pub fn emit(report: &RunReport, dir: &Path, format: Format) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    match format {
        Format::Json => {
            let path = dir.join("report.json");
            fs::write(&path, report.to_json()?)?;
            Ok(path)
        }
        Format::Csv => {
            let path = dir.join("trials.csv");
            let mut text = String::from("experiment,case,resolution,batch,trial,ratio\n");
            for r in report.rows() {
                text.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    csv_field(&r.experiment),
                    csv_field(&r.case),
                    r.resolution,
                    r.batch,
                    r.trial,
                    r.ratio.map_or(String::new(), |v| format!("{v:e}"))
                ));
            }
            fs::write(&path, text)?;
            Ok(path)
        }
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

// ---------------------------------------------------------------------------
// Orchestration.

struct Session<'c> {
    cfg: &'c RunConfig,
    base: Option<Fixture>,
    doubled: Option<Fixture>,
    /// Dominating family of the first sparse trial, reused by the weighted block.
    family: Option<SparseFamily>,
}

impl Session<'_> {
    fn base(&mut self) -> Result<&Fixture> {
        if self.base.is_none() {
            self.base = Some(Fixture::build(self.cfg, self.cfg.resolution)?);
        }
        Ok(self.base.as_ref().unwrap())
    }

    /// Base fixture, plus the doubled one when resolution checks are on.
    fn fixtures(&mut self) -> Result<Vec<&Fixture>> {
        self.base()?;
        if self.cfg.check_resolution && self.doubled.is_none() {
            self.doubled = Some(Fixture::build(self.cfg, 2 * self.cfg.resolution)?);
        }
        Ok(self.base.iter().chain(self.doubled.iter().filter(|_| self.cfg.check_resolution)).collect())
    }
}

/// Runs the requested experiments in dependency order. A failing module call
/// marks its block failed and the run moves on.
pub fn run(cfg: &RunConfig) -> Result<RunReport> {
    cfg.validate()?;
    let mut report = RunReport::empty(cfg.clone());
    let mut session = Session {
        cfg,
        base: None,
        doubled: None,
        family: None,
    };
    for name in cfg.ordered_experiments() {
        let start = Instant::now();
        let mut block = Block::new(name);
        if let Err(e) = run_block(&mut session, name, &mut block) {
            block.pass = false;
            block.error = Some(e.to_string());
        }
        report.pass &= block.pass;
        report.wall_seconds.insert(name.into(), start.elapsed().as_secs_f64());
        report.blocks.push(block);
    }
    Ok(report)
}

fn run_block(s: &mut Session, name: &str, block: &mut Block) -> Result<()> {
    match name {
        "reflection" => reflection_block(s.cfg, block),
        "measure" => measure_block(s, block),
        "dyadic" => dyadic_block(s, block),
        "kernel" => kernel_block(s, block),
        "sparse" => sparse_block(s, block),
        "commutator" => commutator_block(s, block),
        "ap" => ap_block(s, block),
        "rh" => rh_block(s, block),
        "bmo" => bmo_block(s, block),
        "rdf" => rdf_block(s, block),
        "weighted" => weighted_block(s, block),
        "two_weight" => two_weight_block(s, block),
        "lower" => lower_block(s, block),
        "rdf_transfer" => rdf_transfer_block(s, block),
        _ => Err(Error::UnknownKey(name.to_string())),
    }
}

fn random_point(rng: &mut ChaCha8Rng, bounds: &[[f64; 2]]) -> Vec<f64> {
    bounds.iter().map(|b| rng.gen_range(b[0]..b[1])).collect()
}

fn reflection_block(cfg: &RunConfig, block: &mut Block) -> Result<()> {
    let rs = cfg.root_system()?;
    rs.validate()?;
    let group = generate_group(&rs)?;
    let bounds = cfg.grid_params(cfg.resolution)?.bounds;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut symmetry, mut triangle, mut dominated): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..cfg.samples {
        let x = random_point(&mut rng, &bounds);
        let y = random_point(&mut rng, &bounds);
        let z = random_point(&mut rng, &bounds);
        let dxy = dunkl_distance(&group, &x, &y);
        symmetry = symmetry.max((dxy - dunkl_distance(&group, &y, &x)).abs());
        triangle = triangle.max(dxy - dunkl_distance(&group, &x, &z) - dunkl_distance(&group, &z, &y));
        let e: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
        dominated = dominated.max(dxy - norm(&e));
    }
    block.put("group_order", group.order() as f64);
    block.put("homogeneous_dimension", homogeneous_dimension(&rs));
    block.put("symmetry_violation", symmetry);
    block.put("triangle_violation", triangle.max(0.0));
    block.put("euclidean_violation", dominated.max(0.0));
    block.require(symmetry <= 1e-9 && triangle <= 1e-9 && dominated <= 1e-9);
    Ok(())
}

fn measure_block(s: &mut Session, block: &mut Block) -> Result<()> {
    let seed = s.cfg.seed;
    let samples = s.cfg.samples.max(200);
    let fx = s.base()?;
    let scaling = verify_scaling(&fx.grid, 200, seed)?;
    let comparison = verify_comparison(&fx.grid, 200, seed)?;
    let doubling = doubling_and_growth(&fx.grid, samples, seed)?;
    block.put("homogeneous_dimension", scaling.homogeneous_dimension);
    block.put("scaling_max_relative_deviation", scaling.max_relative_deviation);
    block.put("comparison_min", comparison.min_ratio);
    block.put("comparison_max", comparison.max_ratio);
    block.put("comparison_spread", comparison.spread);
    block.put("neighbor_min", comparison.neighbor_min);
    block.put("neighbor_max", comparison.neighbor_max);
    block.put("doubling_constant", doubling.doubling_constant);
    block.put("growth_constant", doubling.growth_constant);
    block.put("total_measure", fx.grid.total_measure());
    block.require(block.nonfinite.is_empty() && comparison.min_ratio > 0.0);
    Ok(())
}

fn dyadic_block(s: &mut Session, block: &mut Block) -> Result<()> {
    let mut doubling = Vec::new();
    let mut details = Vec::new();
    for fx in s.fixtures()? {
        let mut worst_inner: f64 = 1.0;
        for (t, system) in fx.bundle.systems.iter().enumerate() {
            let rep = verify_dyadic_properties(system, &fx.grid);
            block.require(rep.all_pass());
            worst_inner = worst_inner.min(rep.inner_constant);
            details.push(json!({"resolution": fx.resolution, "system": t, "report": rep}));
        }
        let cd = fx.bundle.doubling_constant();
        doubling.push(cd);
        block.put(format!("inner_constant@{}", fx.resolution), worst_inner);
        block.put(format!("ctilde_d@{}", fx.resolution), cd);
        block.put(format!("cache_hit@{}", fx.resolution), fx.cache_hit as u8 as f64);
    }
    if let [a, b] = doubling[..] {
        let f = change_factor(a, b);
        block.put("ctilde_d_resolution_factor", f);
        block.require(f <= STABILITY_FACTOR);
    }
    block.detail = Value::Array(details);
    Ok(())
}

fn kernel_block(s: &mut Session, block: &mut Block) -> Result<()> {
    let seed = s.cfg.seed;
    let samples = s.cfg.samples.max(100);
    let mut sizes = Vec::new();
    for fx in s.fixtures()? {
        let rep = cz_check(&fx.kernel, &fx.grid, samples, seed, DEFAULT_EXPLOSION_CAP)?;
        block.require(rep.all_finite() && !rep.exploded);
        let r = fx.resolution;
        for (name, v) in ["size", "smooth_y", "smooth_x", "riesz_size", "riesz_smooth_y", "riesz_smooth_x"]
            .iter()
            .zip(rep.constants())
        {
            block.put(format!("{name}@{r}"), v);
        }
        let norm = fx.op()?.l2_opnorm(100, seed)?;
        block.put(format!("l2_opnorm@{r}"), norm.value);
        sizes.push(rep.constants());
    }
    if let [a, b] = &sizes[..] {
        let f = a.iter().zip(b).map(|(x, y)| change_factor(*x, *y)).fold(1.0, f64::max);
        block.put("resolution_factor", f);
        block.require(f <= STABILITY_FACTOR);
    }
    Ok(())
}

/// Trial `k` of batch `batch`; batches use disjoint seeds.
fn trial_seed(cfg: &RunConfig, batch: usize) -> u64 {
    cfg.seed.wrapping_mul(1_000_003).wrapping_add(batch as u64)
}

/// Per-batch and per-resolution maxima of a ratio table.
struct RatioTable {
    /// `(resolution, batch, trial, ratio)`.
    entries: Vec<(usize, usize, usize, f64)>,
}

impl RatioTable {
    fn stability(&self, base: usize) -> Stability {
        let mut batches: BTreeMap<usize, f64> = BTreeMap::new();
        let mut per_res: BTreeMap<usize, f64> = BTreeMap::new();
        for &(r, b, _, v) in &self.entries {
            if r == base {
                let e = batches.entry(b).or_insert(0.0);
                *e = e.max(v);
            }
            let e = per_res.entry(r).or_insert(0.0);
            *e = e.max(v);
        }
        let maxima: Vec<f64> = per_res.values().copied().collect();
        Stability {
            resolution_factor: (maxima.len() == 2).then(|| change_factor(maxima[0], maxima[1])),
            seed_spread: spread(&batches.values().copied().collect::<Vec<_>>()),
        }
    }

    fn max_at(&self, res: usize) -> f64 {
        self.entries.iter().filter(|e| e.0 == res).map(|e| e.3).fold(0.0, f64::max)
    }

    fn rows(&self, experiment: &str, case: &str) -> Vec<TrialRow> {
        self.entries
            .iter()
            .map(|&(resolution, batch, trial, v)| TrialRow {
                experiment: experiment.into(),
                case: case.into(),
                resolution,
                batch,
                trial,
                ratio: v.is_finite().then_some(v),
            })
            .collect()
    }
}

fn record_stability(block: &mut Block, prefix: &str, table: &RatioTable, base: usize) -> Stability {
    let st = table.stability(base);
    block.put(format!("{prefix}max_ratio"), table.max_at(base));
    block.put(format!("{prefix}seed_spread"), st.seed_spread);
    if let Some(f) = st.resolution_factor {
        block.put(format!("{prefix}resolution_factor"), f);
    }
    block.check(format!("{prefix}stable"), st.stable());
    st
}

fn per_batch(total: usize, batches: usize) -> usize {
    total.div_ceil(batches)
}

fn sparse_block(s: &mut Session, block: &mut Block) -> Result<()> {
    let cfg = s.cfg;
    let per = per_batch(cfg.sparse_trials, cfg.batches);
    let mut table = RatioTable { entries: Vec::new() };
    let mut first_family = None;
    let (mut depth, mut leakage, mut largest_ce, mut violations): (usize, f64, f64, usize) = (0, 0.0, 0.0, 0);
    let fixtures = s.fixtures()?;
    let base = fixtures[0].resolution;
    for fx in &fixtures {
        let ctx = fx.context()?;
        let c = ctx.constants;
        block.put(format!("c0@{}", fx.resolution), c.c0);
        block.put(format!("ctilde0@{}", fx.resolution), c.ctilde0);
        block.put(format!("ctilde_d@{}", fx.resolution), c.ctilde_d);
        for batch in 0..cfg.batches {
            for k in 0..per {
                let f = trial_function(&fx.grid.params.bounds, trial_seed(cfg, batch), k).sample(&fx.grid);
                let rep = sparse_family_t(&ctx, &f, cfg.strategy)?;
                block.check(
                    "valid",
                    rep.stopping_check.ok
                        && rep.stopping_check.min_witness_ratio >= 0.5
                        && rep.family_check.ok
                        && rep.generation_sum_ok
                        && rep.coverage_ok
                        && rep.max_ratio.is_finite(),
                );
                depth = depth.max(rep.depth);
                leakage = leakage.max(rep.leakage);
                largest_ce = largest_ce.max(rep.largest_c_e);
                violations += rep.upper_half_violations;
                table.entries.push((fx.resolution, batch, k, rep.max_ratio));
                if first_family.is_none() {
                    first_family = Some(rep.family.clone());
                }
            }
        }
    }
    block.put("depth", depth as f64);
    block.put("leakage", leakage);
    block.put("largest_c_e", largest_ce);
    block.put("upper_half_violations", violations as f64);
    let st = record_stability(block, "", &table, base);
    block.detail = json!({"kernel": cfg.kernel, "strategy": cfg.strategy, "stability": st});
    block.rows = table.rows("sparse", &cfg.kernel);
    s.family = first_family;
    Ok(())
}

fn commutator_block(s: &mut Session, block: &mut Block) -> Result<()> {
    let cfg = s.cfg;
    let per = per_batch(cfg.commutator_trials, cfg.batches);
    let fixtures = s.fixtures()?;
    let base = fixtures[0].resolution;
    let mut details = Vec::new();
    for key in &cfg.symbols {
        let symbol = symbol_from_key(key)?;
        let mut table = RatioTable { entries: Vec::new() };
        for fx in &fixtures {
            let ctx = fx.context()?;
            let b = symbol.sample(&fx.grid)?;
            for batch in 0..cfg.batches {
                for k in 0..per {
                    let f = trial_function(&fx.grid.params.bounds, trial_seed(cfg, batch), k).sample(&fx.grid);
                    let rep = sparse_family_commutator(&ctx, &b, &f, cfg.strategy)?;
                    block.check(
                        "valid",
                        rep.stopping_check.ok
                            && rep.stopping_check.min_witness_ratio >= 0.5
                            && rep.family_check.ok
                            && rep.generation_sum_ok
                            && rep.coverage_ok
                            && rep.max_ratio.is_finite(),
                    );
                    table.entries.push((fx.resolution, batch, k, rep.max_ratio));
                }
            }
        }
        let st = record_stability(block, &format!("{key}:"), &table, base);
        details.push(json!({"symbol": key, "stability": st}));
        block.rows.extend(table.rows("commutator", key));
    }
    block.detail = Value::Array(details);
    Ok(())
}

fn ap_block(s: &mut Session, block: &mut Block) -> Result<()> {
    let cfg = s.cfg;
    let fx = s.base()?;
    let grid = &fx.grid;
    let family = fx.test_family()?;
    let mut ps = cfg.p.clone();
    ps.sort_by(f64::total_cmp);
    for key in &cfg.weights {
        let u = weight_from_key(key, grid)?;
        for &p in &ps {
            let rep = ap_constant(grid, &u, p, family)?;
            block.put(format!("{key}:A_{p}"), rep.estimate);
            if key.starts_with("const:") {
                block.require((rep.estimate - 1.0).abs() <= 1e-12);
            }
        }
        for (i, &p) in ps.iter().enumerate() {
            for &q in &ps[i + 1..] {
                block.require(verify_inclusion(grid, &u, p, q, family)?.holds);
            }
        }
        // Condition on random orbit-closed subsets of random cubes.
        let p = ps.first().copied().unwrap_or(2.0);
        let ap = ap_constant(grid, &u, p, family)?.estimate;
        let system = &fx.bundle.systems[0];
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut worst: f64 = 0.0;
        let mut draws = 0usize;
        while draws < cfg.wp_draws {
            let level = rng.gen_range(0..system.num_levels());
            let cube = system.cube(level, rng.gen_range(0..system.levels[level].len()));
            let subset: Vec<usize> = cube.members.iter().copied().filter(|_| rng.gen_bool(0.5)).collect();
            let subset = orbit_close(grid, &subset);
            if subset.is_empty() {
                continue;
            }
            let check = verify_wp(grid, &u, p, ap, &cube.members, &subset)?;
            block.require(check.holds);
            if check.rhs > 0.0 {
                worst = worst.max(check.lhs / check.rhs);
            }
            draws += 1;
        }
        block.put(format!("{key}:wp_worst_fraction"), worst);
    }
    block.put("family_size", family.len() as f64);
    Ok(())
}

fn rh_block(s: &mut Session, block: &mut Block) -> Result<()> {
    let cfg = s.cfg;
    let fixtures = s.fixtures()?;
    for key in &cfg.weights {
        let mut constants = Vec::new();
        for fx in &fixtures {
            let u = weight_from_key(key, &fx.grid)?;
            if !u.radial {
                continue;
            }
            let rep = reverse_holder(&fx.grid, &u, fx.test_family()?, RH_DEFAULT_CAP)?;
            block.put(format!("{key}:gamma@{}", fx.resolution), rep.gamma);
            block.put(format!("{key}:C@{}", fx.resolution), rep.constant);
            block.require(rep.gamma >= 1.0 / 256.0 && rep.constant <= RH_DEFAULT_CAP);
            constants.push(rep.constant);
        }
        if let [a, b] = constants[..] {
            let f = change_factor(a, b);
            block.put(format!("{key}:resolution_factor"), f);
            block.require(f <= STABILITY_FACTOR);
        }
    }
    Ok(())
}

fn bmo_block(s: &mut Session, block: &mut Block) -> Result<()> {
    let cfg = s.cfg;
    let fx = s.base()?;
    let family = fx.test_family()?;
    for b_key in &cfg.symbols {
        let b = symbol_from_key(b_key)?.sample(&fx.grid)?;
        for w_key in &cfg.weights {
            let u = weight_from_key(w_key, &fx.grid)?;
            let v = bmo_norm(&fx.grid, &b, &u, family)?;
            block.put(format!("{b_key}|{w_key}"), v);
            block.require(v.is_finite());
        }
    }
    Ok(())
}

fn rdf_block(s: &mut Session, block: &mut Block) -> Result<()> {
    let cfg = s.cfg;
    let fx = s.base()?;
    let q = cfg.rdf_p / (cfg.rdf_p - 1.0);
    let mdnorm = mdnorm_bound(&fx.grid, fx.balls(), q)?;
    block.put("mdnorm", mdnorm);
    let (mut slack, mut ratio): (f64, f64) = (0.0, 0.0);
    for k in 0..cfg.rdf_trials {
        let g = trial_function(&fx.grid.params.bounds, trial_seed(cfg, 0) ^ 0x5eed, k).sample(&fx.grid);
        let rep = rubio_de_francia(&fx.grid, fx.balls(), &g, cfg.rdf_p, mdnorm, cfg.rdf_terms, cfg.seed + k as u64)?;
        block.require(rep.norm_ok && rep.majorant_ok && rep.a1_ok && rep.slack <= 1e-6);
        slack = slack.max(rep.slack);
        if rep.norm_g > 0.0 {
            ratio = ratio.max(rep.norm_phi / rep.norm_g);
        }
        block.rows.push(TrialRow {
            experiment: "rdf".into(),
            case: format!("p={}", cfg.rdf_p),
            resolution: fx.resolution,
            batch: 0,
            trial: k,
            ratio: Some(rep.norm_phi / rep.norm_g),
        });
    }
    block.put("max_slack", slack);
    block.put("max_norm_ratio", ratio);
    block.put("terms", cfg.rdf_terms as f64);
    Ok(())
}

fn trial_inputs(cfg: &RunConfig, fx: &Fixture, batch: usize, count: usize) -> Vec<Vec<f64>> {
    (0..count)
        .map(|k| trial_function(&fx.grid.params.bounds, trial_seed(cfg, batch), k).sample(&fx.grid))
        .collect()
}

fn norm_rows(rep: &NormReport, experiment: &str, case: &str, resolution: usize, batch: usize) -> Vec<TrialRow> {
    rep.ratios
        .iter()
        .enumerate()
        .map(|(k, &v)| TrialRow {
            experiment: experiment.into(),
            case: case.into(),
            resolution,
            batch,
            trial: k,
            ratio: v.is_finite().then_some(v),
        })
        .collect()
}

fn weighted_block(s: &mut Session, block: &mut Block) -> Result<()> {
    let cfg = s.cfg;
    let per = per_batch(cfg.weighted_trials, cfg.batches);
    if s.family.is_none() {
        let fx = s.base()?;
        let f = trial_function(&fx.grid.params.bounds, trial_seed(cfg, 0), 0).sample(&fx.grid);
        let fam = sparse_family_t(&fx.context()?, &f, cfg.strategy)?.family;
        s.family = Some(fam);
    }
    let family = s.family.clone().unwrap_or_default();
    let fixtures = s.fixtures()?;
    let base = fixtures[0].resolution;
    let mut reports = Vec::new();
    for &p in &cfg.p {
        let mut calibrated: f64 = 0.0;
        for key in &cfg.weights {
            let case = format!("{key},p={p}");
            let mut sparse_table = RatioTable { entries: Vec::new() };
            let mut op_table = RatioTable { entries: Vec::new() };
            let mut ap_base = f64::NAN;
            for fx in &fixtures {
                let u = weight_from_key(key, &fx.grid)?;
                let ap = ap_constant(&fx.grid, &u, p, fx.test_family()?)?.estimate;
                if fx.resolution == base {
                    ap_base = ap;
                }
                let ctx = fx.context()?;
                for batch in 0..cfg.batches {
                    let fs = trial_inputs(cfg, fx, batch, per);
                    if fx.resolution == base {
                        let rep = verify_sparse_weighted_bound(&fx.grid, &family, &u, p, ap, &fs)?;
                        block.check("valid", rep.ratios.iter().all(|r| r.is_finite()));
                        for (k, &v) in rep.ratios.iter().enumerate() {
                            sparse_table.entries.push((fx.resolution, batch, k, v));
                        }
                        block.rows.extend(norm_rows(&rep, "sparse_weighted", &case, fx.resolution, batch));
                    }
                    let rep = verify_t_weighted(&ctx, &u, p, &fs)?;
                    block.check("valid", rep.consistent && rep.ratios.iter().all(|r| r.is_finite()));
                    for (k, &v) in rep.ratios.iter().enumerate() {
                        op_table.entries.push((fx.resolution, batch, k, v));
                    }
                    block.rows.extend(norm_rows(&rep, "operator_weighted", &case, fx.resolution, batch));
                }
            }
            block.put(format!("{case}:ap"), ap_base);
            let ss = record_stability(block, &format!("{case}:sparse_"), &sparse_table, base);
            let os = record_stability(block, &format!("{case}:operator_"), &op_table, base);
            let scaled = sparse_table.max_at(base) / ap_base.powf(sparse_exponent(p));
            calibrated = calibrated.max(scaled);
            reports.push(json!({"case": case, "sparse": ss, "operator": os}));
        }
        block.put(format!("p={p}:calibrated_constant"), calibrated);
        block.check("valid", calibrated.is_finite());
    }
    // Unweighted L^2 cross-check against the power-iteration norm.
    if cfg.p.contains(&2.0) {
        let fx = s.base()?;
        let ones = Weight::constant(&fx.grid, 1.0)?;
        let fs: Vec<Vec<f64>> = (0..cfg.batches).flat_map(|b| trial_inputs(cfg, fx, b, per)).collect();
        let max_ratio = fs
            .iter()
            .map(|f| -> Result<f64> {
                let tf = fx.op()?.apply(f);
                Ok(weighted_norm(&fx.grid, &ones.values, 2.0, &tf)? / weighted_norm(&fx.grid, &ones.values, 2.0, f)?)
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        let opnorm = fx.op()?.l2_opnorm(100, cfg.seed)?.value;
        block.put("l2_trial_max_ratio", max_ratio);
        block.put("l2_opnorm", opnorm);
        block.put("l2_gap", opnorm / max_ratio);
        block.check("l2_opnorm", max_ratio * 1.5 >= opnorm);
    }
    block.detail = Value::Array(reports);
    Ok(())
}

fn two_weight_block(s: &mut Session, block: &mut Block) -> Result<()> {
    let cfg = s.cfg;
    let per = per_batch(cfg.commutator_trials, cfg.batches);
    let pair = &cfg.two_weight;
    let fixtures = s.fixtures()?;
    let base = fixtures[0].resolution;
    let mut details = Vec::new();
    for key in &pair.symbols {
        let case = format!("{key},u={},v={},p={}", pair.u, pair.v, pair.p);
        let mut table = RatioTable { entries: Vec::new() };
        for fx in &fixtures {
            let u = weight_from_key(&pair.u, &fx.grid)?;
            let v = weight_from_key(&pair.v, &fx.grid)?;
            let b = symbol_from_key(key)?.sample(&fx.grid)?;
            let ctx = fx.context()?;
            for batch in 0..cfg.batches {
                let fs = trial_inputs(cfg, fx, batch, per);
                let rep = verify_commutator_two_weight(&ctx, &b, key, &u, &v, pair.p, fx.test_family()?, &fs)?;
                block.check("valid", rep.consistent && rep.ratios.iter().all(|r| r.is_finite()));
                if fx.resolution == base && batch == 0 {
                    for (name, v) in &rep.constants {
                        block.put(format!("{case}:{name}"), *v);
                    }
                }
                for (k, &v) in rep.ratios.iter().enumerate() {
                    table.entries.push((fx.resolution, batch, k, v));
                }
                block.rows.extend(norm_rows(&rep, "two_weight", &case, fx.resolution, batch));
            }
        }
        let st = record_stability(block, &format!("{case}:"), &table, base);
        details.push(json!({"case": case, "stability": st}));
    }
    block.detail = Value::Array(details);
    Ok(())
}

fn lower_block(s: &mut Session, block: &mut Block) -> Result<()> {
    let cfg = s.cfg;
    let fx = s.base()?;
    let grid = &fx.grid;
    let bounds = &grid.params.bounds;
    let axis = cfg.lower.axis.unwrap_or(1);
    if axis == 0 || axis > grid.dim() {
        return Err(Error::Parameter(format!("lower bound axis {axis} outside the dimension")));
    }
    let side = bounds.iter().map(|b| b[1] - b[0]).fold(f64::INFINITY, f64::min);
    let center = cfg
        .lower
        .center
        .clone()
        .unwrap_or_else(|| bounds.iter().map(|b| b[0] + 0.2 * (b[1] - b[0])).collect());
    let radius = cfg.lower.radius.unwrap_or(side / 20.0);
    let symbol = cfg.lower.symbol.clone().unwrap_or(format!("coord:{axis}"));
    let b = symbol_from_key(&symbol)?.sample(grid)?;
    let pair = &cfg.two_weight;
    let u = weight_from_key(&pair.u, grid)?;
    let v = weight_from_key(&pair.v, grid)?;
    let ap_v = ap_constant(grid, &v, pair.p, fx.test_family()?)?.estimate;
    let rep = lower_bound_experiment(&LowerBoundInput {
        grid,
        op: fx.op()?,
        kernel: &fx.kernel,
        axis: axis - 1,
        b: &b,
        u: &u,
        v: &v,
        p: pair.p,
        center,
        radius,
        ap_v,
        operator_norm: None,
    })?;
    for l in &rep.links {
        block.put(format!("{}:constant", l.name), l.constant);
        block.require(l.holds);
    }
    block.put("kernel_lower", rep.kernel_lower);
    block.put("operator_norm", rep.operator_norm);
    block.put("ap_v", rep.ap_v);
    block.put("median", rep.median);
    block.require(rep.all_hold);
    block.detail = json!({
        "symbol": symbol,
        "center": rep.center,
        "shifted_center": rep.shifted_center,
        "radius": rep.radius,
        "kernel_sign_constant": rep.kernel_sign_constant,
        "links": rep.links,
    });
    Ok(())
}

fn rdf_transfer_block(s: &mut Session, block: &mut Block) -> Result<()> {
    let cfg = s.cfg;
    let fx = s.base()?;
    let q = cfg.rdf_p / (cfg.rdf_p - 1.0);
    let mdnorm = mdnorm_bound(&fx.grid, fx.balls(), q)?;
    let bounds = &fx.grid.params.bounds;
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..cfg.rdf_trials)
        .map(|k| {
            (
                trial_function(bounds, trial_seed(cfg, 0), k).sample(&fx.grid),
                trial_function(bounds, trial_seed(cfg, 0) ^ 0x5eed, k).sample(&fx.grid),
            )
        })
        .collect();
    let rep = rdf_transfer_check(&fx.grid, fx.op()?, fx.balls(), cfg.rdf_p, mdnorm, cfg.rdf_terms, &pairs, cfg.seed)?;
    block.put("mdnorm", mdnorm);
    block.put("constant", rep.constant);
    block.put("max_a1", rep.trials.iter().map(|t| t.a1).fold(0.0, f64::max));
    block.put("max_slack", rep.trials.iter().map(|t| t.rdf.slack).fold(0.0, f64::max));
    block.require(rep.all_properties && rep.constant.is_finite());
    block.rows = rep
        .trials
        .iter()
        .enumerate()
        .map(|(k, t)| TrialRow {
            experiment: "rdf_transfer".into(),
            case: format!("p={}", cfg.rdf_p),
            resolution: fx.resolution,
            batch: 0,
            trial: k,
            ratio: t.ratio.is_finite().then_some(t.ratio),
        })
        .collect();
    Ok(())
}
