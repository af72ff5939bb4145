//! Exceptional sets, stopping-time selection and the sparse families dominating
//! `T` and `[b, T]`.

use std::collections::{BTreeMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dyadic::{
    containing_cube_of, verify_sparse, CubeRef, DyadicSystem, FamilyCube, SparseCheck, SparseFamily, SystemBundle,
    DEFAULT_INFLATION_CAP,
};
use crate::error::{Error, Result};
use crate::measure::{BallSpec, Metric, WeightedGrid};
use crate::operators::{dilation_constant, local_grand_maximal, orbit_sum, BallFamily, DiscreteOperator};

/// Largest calibration constant tried before giving up.
pub const CE_CAP: f64 = 1099511627776.0; // 2^40
pub const DEFAULT_MAX_DEPTH: usize = 30;
/// Relative threshold below which `|Tf|` is treated as zero for coverage.
pub const COVERAGE_TOLERANCE: f64 = 1e-9;
const REL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseConstants {
    /// Containing-cube inflation bound.
    pub c0: f64,
    /// Dilation factor for the grand maximal cut-offs.
    pub ctilde0: f64,
    /// Parent-over-largest-child measure ratio.
    pub ctilde_d: f64,
}

impl SparseConstants {
    pub fn new(c0: f64, ctilde_d: f64) -> Self {
        SparseConstants {
            c0,
            ctilde0: dilation_constant(c0),
            ctilde_d,
        }
    }
}

/// Largest containing-cube inflation over seeded orbit balls, rounded up.
pub fn calibrate_inflation(grid: &WeightedGrid, bundle: &SystemBundle, samples: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lo = grid.cell_diagonal();
    let hi = grid.diameter(Metric::Dunkl).max(2.0 * lo);
    let mut worst: f64 = 1.0;
    for _ in 0..samples {
        let c = rng.gen_range(0..grid.len());
        let r = (lo.ln() + rng.gen::<f64>() * (hi.ln() - lo.ln())).exp();
        let center = grid.point(c).to_vec();
        let members = grid.ball_members(&BallSpec::new(center.clone(), r, Metric::Dunkl)?);
        let hit = containing_cube_of(grid, bundle, &center, r, &members, DEFAULT_INFLATION_CAP)?;
        worst = worst.max(hit.inflation);
    }
    Ok(worst.ceil())
}

pub struct SparseContext<'a> {
    pub grid: &'a WeightedGrid,
    pub bundle: &'a SystemBundle,
    pub op: &'a DiscreteOperator,
    /// Orbit-ball family used by the grand maximal operators.
    pub balls: &'a BallFamily,
    pub constants: SparseConstants,
    pub max_depth: usize,
}

impl SparseContext<'_> {
    fn members(&self, cube: CubeRef) -> &[usize] {
        &self.bundle.cube(cube).members
    }

    /// `B(P)`: orbit ball at the cube center with twice the side length.
    fn base_ball(&self, cube: CubeRef) -> BallSpec {
        let q = self.bundle.cube(cube);
        BallSpec {
            center: self.grid.point(q.center).to_vec(),
            radius: 2.0 * q.side * (1.0 + REL),
            metric: Metric::Dunkl,
        }
    }

    fn dilate_members(&self, cube: CubeRef) -> Vec<usize> {
        let b = self.base_ball(cube);
        self.grid.ball_members(&BallSpec {
            radius: b.radius * self.constants.ctilde0,
            ..b
        })
    }
}

fn average_abs(grid: &WeightedGrid, f: &[f64], members: &[usize]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for &p in members {
        num += f[p].abs() * grid.weight(p);
        den += grid.weight(p);
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

fn average(grid: &WeightedGrid, f: &[f64], members: &[usize]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for &p in members {
        num += f[p] * grid.weight(p);
        den += grid.weight(p);
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

// ---------------------------------------------------------------------------
// Exceptional sets.

/// Threshold data for one function on one base cube.
#[derive(Clone, Debug)]
struct Part {
    average: f64,
    orbit: Vec<f64>,
    maximal: Vec<f64>,
}

/// Everything needed to evaluate the exceptional set of a base cube at any `C_E`.
#[derive(Clone, Debug)]
pub struct ExceptionalProfile {
    pub base: CubeRef,
    points: Vec<usize>,
    parts: Vec<Part>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExceptionalSet {
    pub base: CubeRef,
    pub c_e: f64,
    /// `|f|` averaged over the dilated base ball (first function).
    pub threshold_average: f64,
    pub orbit_part: Vec<usize>,
    pub maximal_part: Vec<usize>,
    pub points: Vec<usize>,
    pub measure: f64,
}

impl ExceptionalProfile {
    /// Profiles the functions `fs` on the base cube; the first one must not
    /// vanish on the dilated base ball, later ones may.
    pub fn compute(ctx: &SparseContext, fs: &[&[f64]], base: CubeRef) -> Result<Self> {
        let grid = ctx.grid;
        let dilate = ctx.dilate_members(base);
        let ball = ctx.base_ball(base);
        let points = ctx.members(base).to_vec();
        let mut parts = Vec::new();
        for (t, f) in fs.iter().enumerate() {
            let average = average_abs(grid, f, &dilate);
            if average == 0.0 {
                if t == 0 {
                    return Err(Error::Precondition("function vanishes on the dilated base ball".into()));
                }
                continue;
            }
            let orbit_all = orbit_sum(grid, f);
            let maximal_all = local_grand_maximal(ctx.op, grid, ctx.balls, f, ctx.constants.ctilde0, &ball)?;
            parts.push(Part {
                average,
                orbit: points.iter().map(|&p| orbit_all[p]).collect(),
                maximal: points.iter().map(|&p| maximal_all[p]).collect(),
            });
        }
        Ok(ExceptionalProfile { base, points, parts })
    }

    pub fn at(&self, grid: &WeightedGrid, c_e: f64) -> ExceptionalSet {
        let (mut orbit_part, mut maximal_part, mut points) = (Vec::new(), Vec::new(), Vec::new());
        for (k, &p) in self.points.iter().enumerate() {
            let mut o = false;
            let mut m = false;
            for part in &self.parts {
                let level = c_e * part.average;
                o |= part.orbit[k] > level;
                m |= part.maximal[k] > level;
            }
            if o {
                orbit_part.push(p);
            }
            if m {
                maximal_part.push(p);
            }
            if o || m {
                points.push(p);
            }
        }
        ExceptionalSet {
            base: self.base,
            c_e,
            threshold_average: self.parts.first().map_or(0.0, |p| p.average),
            measure: grid.measure_of(&points),
            orbit_part,
            maximal_part,
            points,
        }
    }

    /// Doubling search from 1 for `omega(E) <= omega(base) / (4 C~_d)`.
    pub fn calibrate(&self, grid: &WeightedGrid, base_measure: f64, ctilde_d: f64) -> Result<f64> {
        let bound = base_measure / (4.0 * ctilde_d);
        let mut c_e = 1.0;
        while c_e <= CE_CAP {
            if self.at(grid, c_e).measure <= bound {
                return Ok(c_e);
            }
            c_e *= 2.0;
        }
        Err(Error::Capacity(format!(
            "exceptional set measure bound unreachable below C_E = 2^40 on cube {:?}",
            self.base
        )))
    }
}

pub fn exceptional_set(ctx: &SparseContext, f: &[f64], base: CubeRef, c_e: f64) -> Result<ExceptionalSet> {
    if !(c_e > 0.0) {
        return Err(Error::Parameter("C_E must be positive".into()));
    }
    Ok(ExceptionalProfile::compute(ctx, &[f], base)?.at(ctx.grid, c_e))
}

pub fn calibrate_ce(ctx: &SparseContext, f: &[f64], base: CubeRef) -> Result<f64> {
    let profile = ExceptionalProfile::compute(ctx, &[f], base)?;
    profile.calibrate(ctx.grid, ctx.bundle.cube(base).measure, ctx.constants.ctilde_d)
}

// ---------------------------------------------------------------------------
// Stopping-time selection.

fn e_measure(grid: &WeightedGrid, members: &[usize], in_e: &[bool]) -> f64 {
    members.iter().filter(|&&p| in_e[p]).map(|&p| grid.weight(p)).sum()
}

/// Maximal strict subcubes `P` of the base with `omega(P n E) > omega(P) / (2 C~_d)`,
/// as `(level, index)` pairs in the base's system.
pub fn cz_select(
    system: &DyadicSystem,
    grid: &WeightedGrid,
    in_e: &[bool],
    level: usize,
    index: usize,
    ctilde_d: f64,
) -> Result<Vec<(usize, usize)>> {
    let qualifies = |l: usize, i: usize| {
        let q = system.cube(l, i);
        e_measure(grid, &q.members, in_e) > q.measure / (2.0 * ctilde_d)
    };
    if qualifies(level, index) {
        return Err(Error::Precondition(
            "base cube already exceeds the selection height; recalibrate C_E".into(),
        ));
    }
    let mut out = Vec::new();
    let mut stack: Vec<(usize, usize)> = system
        .cube(level, index)
        .children
        .iter()
        .rev()
        .map(|&c| (level + 1, c))
        .collect();
    while let Some((l, i)) = stack.pop() {
        if qualifies(l, i) {
            out.push((l, i));
        } else {
            let q = system.cube(l, i);
            stack.extend(q.children.iter().rev().map(|&c| (l + 1, c)));
        }
    }
    out.sort_unstable();
    Ok(out)
}

// ---------------------------------------------------------------------------
// Sparse iteration.

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StopCube {
    pub cube: CubeRef,
    pub depth: usize,
    pub measure: f64,
    pub c_e: f64,
    /// `|f|` averaged over the dilated base ball.
    pub dilate_average: f64,
    pub e_measure: f64,
    /// Exceptional mass outside every selected subcube.
    pub leakage: f64,
    /// Total measure of the selected subcubes.
    pub selected_measure: f64,
    /// Selected subcubes with more than half their measure exceptional.
    pub upper_half_violations: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// One claim tree rooted at the top cube of the first system.
    TopCube,
    /// Claim trees over greedy covers of the annuli around the support of `f`.
    Annuli,
}

enum Target<'a> {
    Operator { f: &'a [f64] },
    Commutator { f: &'a [f64], b: &'a [f64] },
}

impl Target<'_> {
    fn f(&self) -> &[f64] {
        match self {
            Target::Operator { f } | Target::Commutator { f, .. } => f,
        }
    }
}

struct Claims {
    stops: Vec<StopCube>,
    family: Vec<FamilyCube>,
    depth: usize,
}

/// Runs the stopping-time recursion from `root`.
fn claim_tree(ctx: &SparseContext, target: &Target, root: CubeRef) -> Result<Claims> {
    let grid = ctx.grid;
    let ctilde_d = ctx.constants.ctilde_d;
    let mut stops = Vec::new();
    let mut family = Vec::new();
    let mut depth = 0;
    let mut queue = vec![(root, 0usize)];
    let mut in_e = vec![false; grid.len()];
    while let Some((cube, d)) = queue.pop() {
        if d > ctx.max_depth {
            return Err(Error::Capacity(format!("sparse iteration exceeded depth {}", ctx.max_depth)));
        }
        let f = target.f();
        let dilate_average = average_abs(grid, f, &ctx.dilate_members(cube));
        if dilate_average == 0.0 {
            continue;
        }
        depth = depth.max(d);
        let profile = match target {
            Target::Operator { f } => ExceptionalProfile::compute(ctx, &[f], cube)?,
            Target::Commutator { f, b } => {
                let h = recentred_product(ctx, cube, b, f)?;
                ExceptionalProfile::compute(ctx, &[f, &h], cube)?
            }
        };
        let q = ctx.bundle.cube(cube);
        let c_e = profile.calibrate(grid, q.measure, ctilde_d)?;
        let e = profile.at(grid, c_e);
        for &p in &e.points {
            in_e[p] = true;
        }
        let sys = &ctx.bundle.systems[cube.system];
        let selected = cz_select(sys, grid, &in_e, cube.level, cube.index, ctilde_d)?;
        let mut covered: HashSet<usize> = HashSet::new();
        let mut selected_measure = 0.0;
        let mut violations = 0;
        for &(l, i) in &selected {
            let p = sys.cube(l, i);
            covered.extend(p.members.iter().copied());
            selected_measure += p.measure;
            if e_measure(grid, &p.members, &in_e) > 0.5 * p.measure * (1.0 + REL) {
                violations += 1;
            }
        }
        let leakage = e.points.iter().filter(|p| !covered.contains(p)).map(|&p| grid.weight(p)).sum();
        for &p in &e.points {
            in_e[p] = false;
        }
        let witness: Vec<usize> = q.members.iter().copied().filter(|p| !covered.contains(p)).collect();
        family.push(FamilyCube {
            cube,
            members: q.members.clone(),
            measure: q.measure,
            witness,
        });
        stops.push(StopCube {
            cube,
            depth: d,
            measure: q.measure,
            c_e,
            dilate_average,
            e_measure: e.measure,
            leakage,
            selected_measure,
            upper_half_violations: violations,
        });
        for &(l, i) in selected.iter().rev() {
            queue.push((
                CubeRef {
                    system: cube.system,
                    level: l,
                    index: i,
                },
                d + 1,
            ));
        }
    }
    Ok(Claims { stops, family, depth })
}

/// `(b - b_R) f` with `R` the cube containing the dilated base ball of `cube`.
fn recentred_product(ctx: &SparseContext, cube: CubeRef, b: &[f64], f: &[f64]) -> Result<Vec<f64>> {
    let r = recube(ctx, cube)?;
    let mean = average(ctx.grid, b, ctx.members(r));
    Ok(b.iter().zip(f).map(|(x, y)| (x - mean) * y).collect())
}

/// Cube holding the dilated base ball `C~_0 B(P)`.
fn recube(ctx: &SparseContext, cube: CubeRef) -> Result<CubeRef> {
    let ball = ctx.base_ball(cube);
    let radius = ball.radius * ctx.constants.ctilde0;
    let members = ctx.dilate_members(cube);
    Ok(containing_cube_of(ctx.grid, ctx.bundle, &ball.center, radius, &members, DEFAULT_INFLATION_CAP)?.cube)
}

/// Gives every cube the members not already claimed by a smaller one.
pub fn assign_witnesses(grid: &WeightedGrid, cubes: Vec<(CubeRef, Vec<usize>)>) -> SparseFamily {
    let mut cubes: Vec<(f64, CubeRef, Vec<usize>)> =
        cubes.into_iter().map(|(c, m)| (grid.measure_of(&m), c, m)).collect();
    cubes.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut claimed = vec![false; grid.len()];
    let mut out = Vec::with_capacity(cubes.len());
    let mut theta: f64 = 1.0;
    for (measure, cube, members) in cubes {
        let witness: Vec<usize> = members.iter().copied().filter(|&p| !claimed[p]).collect();
        for &p in &witness {
            claimed[p] = true;
        }
        if measure > 0.0 {
            theta = theta.min(grid.measure_of(&witness) / measure);
        }
        out.push(FamilyCube {
            cube,
            members,
            measure,
            witness,
        });
    }
    SparseFamily {
        cubes: out,
        theta,
        overlap_bound: 1,
    }
}

/// `sum over Q of |f|_Q 1_Q`.
pub fn sparse_operator(family: &SparseFamily, grid: &WeightedGrid, f: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; grid.len()];
    for q in &family.cubes {
        let a = average_abs(grid, f, &q.members);
        for &p in &q.members {
            out[p] += a;
        }
    }
    out
}

/// `sum over Q of (|f|_Q |b - b_Q| + |(b - b_Q) f|_Q) 1_Q`.
pub fn commutator_sparse_operator(family: &SparseFamily, grid: &WeightedGrid, b: &[f64], f: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; grid.len()];
    for q in &family.cubes {
        let bq = average(grid, b, &q.members);
        let fq = average_abs(grid, f, &q.members);
        let h: Vec<f64> = q.members.iter().map(|&p| (b[p] - bq) * f[p]).collect();
        let hq = {
            let (mut num, mut den) = (0.0, 0.0);
            for (&p, v) in q.members.iter().zip(&h) {
                num += v.abs() * grid.weight(p);
                den += grid.weight(p);
            }
            if den > 0.0 {
                num / den
            } else {
                0.0
            }
        };
        for &p in &q.members {
            out[p] += fq * (b[p] - bq).abs() + hq;
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseDominationReport {
    pub kernel: String,
    pub strategy: Strategy,
    pub constants: SparseConstants,
    pub largest_c_e: f64,
    pub depth: usize,
    pub stops: Vec<StopCube>,
    /// Stopping cubes with witnesses `P` minus the selected subcubes.
    pub stopping: SparseFamily,
    pub stopping_check: SparseCheck,
    /// Cubes holding the dilated base balls; the dominating family.
    pub family: SparseFamily,
    pub family_check: SparseCheck,
    /// Every level satisfies sum of selected measures <= half the parent.
    pub generation_sum_ok: bool,
    pub max_generation_ratio: f64,
    pub leakage: f64,
    pub upper_half_violations: usize,
    /// sup of |Tf| over the dominator where the dominator is positive.
    pub max_ratio: f64,
    /// The same against the claim form `sum over P of |f|_{C~_0 B(P)} 1_P`.
    pub claim_ratio: f64,
    pub coverage_ok: bool,
    pub target_sup: f64,
    /// Covering ball counts per annulus (annuli strategy only).
    pub cover_counts: Vec<usize>,
}

fn empty_report(ctx: &SparseContext, strategy: Strategy) -> SparseDominationReport {
    let family = SparseFamily {
        cubes: Vec::new(),
        theta: 0.5,
        overlap_bound: 1,
    };
    let check = verify_sparse(&family, ctx.grid);
    SparseDominationReport {
        kernel: ctx.op.kernel_key.clone(),
        strategy,
        constants: ctx.constants,
        largest_c_e: 0.0,
        depth: 0,
        stops: Vec::new(),
        stopping: family.clone(),
        stopping_check: check.clone(),
        family,
        family_check: check,
        generation_sum_ok: true,
        max_generation_ratio: 0.0,
        leakage: 0.0,
        upper_half_violations: 0,
        max_ratio: 0.0,
        claim_ratio: 0.0,
        coverage_ok: true,
        target_sup: 0.0,
        cover_counts: Vec::new(),
    }
}

fn ratio_and_coverage(left: &[f64], right: &[f64]) -> Result<(f64, f64)> {
    let sup = left.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut ratio: f64 = 0.0;
    for (i, (&l, &r)) in left.iter().zip(right).enumerate() {
        if r > 0.0 {
            ratio = ratio.max(l.abs() / r);
        } else if l.abs() > COVERAGE_TOLERANCE * sup {
            return Err(Error::Validation(format!(
                "domination coverage fails at grid point {i}: |value| = {} with zero dominator",
                l.abs()
            )));
        }
    }
    Ok((ratio, sup))
}

fn run(ctx: &SparseContext, target: Target, strategy: Strategy) -> Result<SparseDominationReport> {
    let grid = ctx.grid;
    let f = target.f();
    if f.len() != grid.len() {
        return Err(Error::Parameter("function length does not match the grid".into()));
    }
    if f.iter().all(|&v| v == 0.0) {
        return Ok(empty_report(ctx, strategy));
    }
    let (roots, cover_counts) = match strategy {
        Strategy::TopCube => (
            vec![CubeRef {
                system: 0,
                level: 0,
                index: 0,
            }],
            Vec::new(),
        ),
        Strategy::Annuli => annuli_roots(ctx, f)?,
    };
    let mut stops = Vec::new();
    let mut stopping_cubes = Vec::new();
    let mut depth = 0;
    for root in roots {
        let claims = claim_tree(ctx, &target, root)?;
        depth = depth.max(claims.depth);
        stops.extend(claims.stops);
        stopping_cubes.extend(claims.family);
    }
    let mut stopping = SparseFamily {
        cubes: stopping_cubes,
        theta: 0.5,
        overlap_bound: 1,
    };
    if strategy == Strategy::Annuli {
        let mut overlap = vec![0usize; grid.len()];
        for q in &stopping.cubes {
            for &p in &q.witness {
                overlap[p] += 1;
            }
        }
        stopping.overlap_bound = overlap.into_iter().max().unwrap_or(1).max(1);
    }
    let stopping_check = verify_sparse(&stopping, grid);

    // Re-cube the dilated base balls; identical member sets count once.
    let mut seen: BTreeMap<Vec<usize>, CubeRef> = BTreeMap::new();
    for s in &stops {
        let r = recube(ctx, s.cube)?;
        let mut m = ctx.members(r).to_vec();
        m.sort_unstable();
        seen.entry(m).or_insert(r);
    }
    let family = assign_witnesses(grid, seen.into_iter().map(|(m, r)| (r, m)).collect());
    let family_check = verify_sparse(&family, grid);

    let (numerator, dominator) = match target {
        Target::Operator { f } => (ctx.op.apply(f), sparse_operator(&family, grid, f)),
        Target::Commutator { f, b } => (
            crate::operators::commutator(ctx.op, b, f),
            commutator_sparse_operator(&family, grid, b, f),
        ),
    };
    let (max_ratio, target_sup) = ratio_and_coverage(&numerator, &dominator)?;
    let mut claim = vec![0.0; grid.len()];
    for s in &stops {
        for &p in ctx.members(s.cube) {
            claim[p] += s.dilate_average;
        }
    }
    let claim_ratio = numerator
        .iter()
        .zip(&claim)
        .filter(|(_, &c)| c > 0.0)
        .map(|(n, c)| n.abs() / c)
        .fold(0.0, f64::max);

    let max_generation_ratio = stops.iter().map(|s| s.selected_measure / s.measure).fold(0.0, f64::max);
    Ok(SparseDominationReport {
        kernel: ctx.op.kernel_key.clone(),
        strategy,
        constants: ctx.constants,
        largest_c_e: stops.iter().map(|s| s.c_e).fold(0.0, f64::max),
        depth,
        generation_sum_ok: max_generation_ratio <= 0.5 * (1.0 + REL),
        max_generation_ratio,
        leakage: stops.iter().map(|s| s.leakage).sum(),
        upper_half_violations: stops.iter().map(|s| s.upper_half_violations).sum(),
        stops,
        stopping,
        stopping_check,
        family,
        family_check,
        max_ratio,
        claim_ratio,
        coverage_ok: true,
        target_sup,
        cover_counts,
    })
}

/// Sparse family dominating `|Tf|`.
pub fn sparse_family_t(ctx: &SparseContext, f: &[f64], strategy: Strategy) -> Result<SparseDominationReport> {
    run(ctx, Target::Operator { f }, strategy)
}

/// Sparse family dominating `|[b, T] f|`.
pub fn sparse_family_commutator(
    ctx: &SparseContext,
    b: &[f64],
    f: &[f64],
    strategy: Strategy,
) -> Result<SparseDominationReport> {
    if b.len() != ctx.grid.len() || b.iter().any(|v| !v.is_finite()) {
        return Err(Error::Parameter("symbol must be finite on every grid point".into()));
    }
    run(ctx, Target::Commutator { f, b }, strategy)
}

/// Roots for the annuli strategy: greedy orbit-ball covers of
/// `{2^i r <= d(x_c, .) < 2^{i+1} r}` (with the core in the first annulus) by
/// balls of radius `2^{i+2} r / C~_0`, each replaced by its containing cube.
fn annuli_roots(ctx: &SparseContext, f: &[f64]) -> Result<(Vec<CubeRef>, Vec<usize>)> {
    let grid = ctx.grid;
    let support: Vec<usize> = (0..grid.len()).filter(|&p| f[p] != 0.0).collect();
    let (mut center, mut r) = (support[0], f64::INFINITY);
    for &c in &support {
        let reach = support.iter().map(|&p| grid.dunkl(c, p)).fold(0.0, f64::max);
        if reach < r {
            center = c;
            r = reach;
        }
    }
    let r = r + 0.5 * grid.cell_diagonal();
    let diam = grid.diameter(Metric::Dunkl);
    let dist: Vec<f64> = (0..grid.len()).map(|p| grid.dunkl(center, p)).collect();
    let mut roots = Vec::new();
    let mut seen = HashSet::new();
    let mut counts = Vec::new();
    let mut i = 0;
    loop {
        let (inner, outer) = if i == 0 { (0.0, 2.0 * r) } else { ((1u64 << i) as f64 * r, (1u64 << (i + 1)) as f64 * r) };
        if i > 0 && inner > diam {
            break;
        }
        let rho = (1u64 << (i + 2)) as f64 * r / ctx.constants.ctilde0;
        let ring: Vec<usize> = (0..grid.len()).filter(|&p| dist[p] >= inner && dist[p] < outer).collect();
        let mut covered = vec![false; grid.len()];
        let mut count = 0;
        for &p in &ring {
            if covered[p] {
                continue;
            }
            count += 1;
            let x = grid.point(p).to_vec();
            let members = grid.ball_members(&BallSpec::new(x.clone(), rho, Metric::Dunkl)?);
            for &m in &members {
                covered[m] = true;
            }
            let hit = containing_cube_of(grid, ctx.bundle, &x, rho, &members, DEFAULT_INFLATION_CAP)?;
            if seen.insert(hit.cube) {
                roots.push(hit.cube);
            }
        }
        counts.push(count);
        i += 1;
    }
    Ok((roots, counts))
}

// ---------------------------------------------------------------------------
// Oscillation stopping families.

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentReport {
    pub family: SparseFamily,
    pub check: SparseCheck,
    pub added: usize,
    /// Smallest constant in the pointwise oscillation inequality.
    pub constant: f64,
    /// Points with a positive left side and an empty right side.
    pub uncovered: usize,
}

pub const AUGMENT_BUDGET: usize = 200_000;

/// Adds to each cube the maximal subcubes `P` with `avg_P |b - b_Q| > 2 Omega(b, Q)`,
/// recursively, and measures the constant in
/// `|b(x) - b_Q| <= C sum over P in the family inside Q of Omega(b, P) 1_P(x)`.
pub fn augment_family(bundle: &SystemBundle, grid: &WeightedGrid, family: &SparseFamily, b: &[f64]) -> Result<AugmentReport> {
    let mut refs: Vec<CubeRef> = family.cubes.iter().map(|q| q.cube).collect();
    let mut known: HashSet<CubeRef> = refs.iter().copied().collect();
    let original = refs.len();
    let mut stack = refs.clone();
    while let Some(q) = stack.pop() {
        let sys = &bundle.systems[q.system];
        let cube = sys.cube(q.level, q.index);
        let bq = average(grid, b, &cube.members);
        let osc = average_abs(grid, &b.iter().map(|v| v - bq).collect::<Vec<_>>(), &cube.members);
        let mut frontier: Vec<(usize, usize)> = cube.children.iter().map(|&c| (q.level + 1, c)).collect();
        while let Some((l, i)) = frontier.pop() {
            let p = sys.cube(l, i);
            let avg = average_abs(grid, &shifted(b, bq), &p.members);
            if avg > 2.0 * osc {
                let r = CubeRef {
                    system: q.system,
                    level: l,
                    index: i,
                };
                if known.insert(r) {
                    refs.push(r);
                    stack.push(r);
                    if refs.len() > AUGMENT_BUDGET {
                        return Err(Error::Capacity("augmentation exceeded the cube budget".into()));
                    }
                }
            } else {
                frontier.extend(p.children.iter().map(|&c| (l + 1, c)));
            }
        }
    }
    // Deduplicate identical member sets, keeping the first reference.
    let mut by_members: BTreeMap<Vec<usize>, CubeRef> = BTreeMap::new();
    for r in &refs {
        let mut m = bundle.cube(*r).members.clone();
        m.sort_unstable();
        by_members.entry(m).or_insert(*r);
    }
    let cubes: Vec<(CubeRef, Vec<usize>)> = by_members.into_iter().map(|(m, r)| (r, m)).collect();
    let n = grid.len();
    let oscs: Vec<(f64, f64)> = cubes
        .iter()
        .map(|(_, m)| {
            let mean = average(grid, b, m);
            (mean, average_abs(grid, &shifted(b, mean), m))
        })
        .collect();
    let sets: Vec<Vec<bool>> = cubes
        .iter()
        .map(|(_, m)| {
            let mut s = vec![false; n];
            m.iter().for_each(|&p| s[p] = true);
            s
        })
        .collect();
    let mut constant: f64 = 0.0;
    let mut uncovered = 0;
    for (a, (_, qm)) in cubes.iter().enumerate() {
        let mut rhs = vec![0.0; n];
        for (c, (_, pm)) in cubes.iter().enumerate() {
            if pm.len() <= qm.len() && pm.iter().all(|&p| sets[a][p]) {
                for &p in pm {
                    rhs[p] += oscs[c].1;
                }
            }
        }
        for &x in qm {
            let left = (b[x] - oscs[a].0).abs();
            if left <= 1e-12 * (1.0 + oscs[a].0.abs()) {
                continue;
            }
            if rhs[x] > 0.0 {
                constant = constant.max(left / rhs[x]);
            } else {
                uncovered += 1;
            }
        }
    }
    let out = assign_witnesses(grid, cubes);
    let check = verify_sparse(
        &SparseFamily {
            theta: out.theta,
            ..out.clone()
        },
        grid,
    );
    Ok(AugmentReport {
        added: out.cubes.len().saturating_sub(original),
        family: out,
        check,
        constant,
        uncovered,
    })
}

fn shifted(b: &[f64], c: f64) -> Vec<f64> {
    b.iter().map(|v| v - c).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dyadic::build_bundle;
    use crate::measure::{build_grid, GridParams};
    use crate::operators::{make_riesz_model, zero_kernel};
    use crate::reflection::RootSystem;

    fn setup(res: usize) -> (WeightedGrid, SystemBundle) {
        let g = build_grid(&GridParams::cube(1, -1.0, 1.0, res), &RootSystem::trivial(1)).unwrap();
        let (k0, k1) = crate::dyadic::scale_range(&g, 0.5).unwrap();
        let b = build_bundle(&g, 0.5, k0, k1, 3, 2).unwrap();
        (g, b)
    }

    #[test]
    fn cz_select_examples() {
        let (g, b) = setup(64);
        let sys = &b.systems[0];
        let none = vec![false; g.len()];
        assert!(cz_select(sys, &g, &none, 0, 0, 3.0).unwrap().is_empty());
        // One child fully exceptional is selected if small enough.
        let deep = sys.num_levels() - 2;
        let target = sys.cube(deep, 0);
        let mut e = vec![false; g.len()];
        target.members.iter().for_each(|&p| e[p] = true);
        let sel = cz_select(sys, &g, &e, 0, 0, 3.0).unwrap();
        assert!(sel.iter().all(|&(l, i)| l <= deep && sys.cube(l, i).members.contains(&target.members[0])));
        let all = vec![true; g.len()];
        assert!(cz_select(sys, &g, &all, 0, 0, 3.0).is_err());
    }

    #[test]
    fn zero_kernel_and_zero_f() {
        let (g, b) = setup(64);
        let op = DiscreteOperator::assemble(&g, &zero_kernel(&RootSystem::trivial(1)), None).unwrap();
        let balls = BallFamily::ladder(&g, Metric::Dunkl);
        let ctx = SparseContext {
            grid: &g,
            bundle: &b,
            op: &op,
            balls: &balls,
            constants: SparseConstants::new(2.0, b.doubling_constant()),
            max_depth: DEFAULT_MAX_DEPTH,
        };
        let zero = vec![0.0; g.len()];
        let r = sparse_family_t(&ctx, &zero, Strategy::TopCube).unwrap();
        assert!(r.family.is_empty() && r.max_ratio == 0.0);
        let f: Vec<f64> = (0..g.len()).map(|i| if i % 7 == 0 { 1.0 } else { 0.0 }).collect();
        let r = sparse_family_t(&ctx, &f, Strategy::TopCube).unwrap();
        assert!(!r.family.is_empty());
        assert_eq!(r.max_ratio, 0.0);
        assert!(r.stopping_check.ok);
        // f = 1: orbit part alone, any C_E above |G| = 1 works.
        let ones = vec![1.0; g.len()];
        assert_eq!(calibrate_ce(&ctx, &ones, CubeRef { system: 0, level: 0, index: 0 }).unwrap(), 1.0);
    }

    #[test]
    fn hilbert_domination_runs() {
        let (g, b) = setup(128);
        let k = make_riesz_model(&RootSystem::trivial(1), 1).unwrap();
        let op = DiscreteOperator::assemble(&g, &k, None).unwrap();
        let balls = BallFamily::ladder(&g, Metric::Dunkl);
        let ctx = SparseContext {
            grid: &g,
            bundle: &b,
            op: &op,
            balls: &balls,
            constants: SparseConstants::new(3.0, b.doubling_constant()),
            max_depth: DEFAULT_MAX_DEPTH,
        };
        let f: Vec<f64> = (0..g.len()).map(|i| if (50..70).contains(&i) { 1.0 } else { 0.0 }).collect();
        for s in [Strategy::TopCube, Strategy::Annuli] {
            let r = sparse_family_t(&ctx, &f, s).unwrap();
            assert!(r.stopping_check.min_witness_ratio >= 0.5, "{s:?}");
            assert!(r.generation_sum_ok);
            assert!(r.max_ratio.is_finite() && r.max_ratio > 0.0);
            assert!(r.coverage_ok);
        }
        let bsym: Vec<f64> = (0..g.len()).map(|i| g.point(i)[0]).collect();
        let r = sparse_family_commutator(&ctx, &bsym, &f, Strategy::TopCube).unwrap();
        assert!(r.max_ratio.is_finite() && r.stopping_check.ok);
        let aug = augment_family(&b, &g, &r.family, &bsym).unwrap();
        assert!(aug.constant.is_finite());
    }
}
