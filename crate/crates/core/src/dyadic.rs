//! Dyadic cube systems on the orbit space, adjacent-system bundles and
//! sparse-family bookkeeping.
//!
//! Nets are nested coarse to fine: each scale starts from the centers of the
//! scale above and admits further points greedily in a seeded order. Each
//! center picks a parent within `delta^k`, and each point a finest center
//! within `2 delta^k_max`; both keep the outer bound. Among admissible choices
//! the one whose ancestors agree with the most nearby centers wins, then the
//! nearest, then the smaller index.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{construction, Error, Result};
use crate::measure::{BallSpec, Metric, WeightedGrid};
use crate::spatial::SpatialHash;

/// Inner sandwich constant targeted by the construction.
pub const INNER_TARGET: f64 = 1.0 / 6.0;
/// Smallest inner sandwich constant accepted.
pub const INNER_FLOOR: f64 = 1.0 / 24.0;
/// Points closer than `ANCHOR * delta^k` to a scale-k center are steered into its cube.
const ANCHOR: f64 = 0.25;
/// Relative slack on metric comparisons against `delta^k`.
const REL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cube {
    pub scale: i32,
    pub index: usize,
    /// Grid index of the center point.
    pub center: usize,
    pub side: f64,
    pub members: Vec<usize>,
    pub measure: f64,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DyadicSystem {
    pub delta: f64,
    pub k_min: i32,
    pub k_max: i32,
    pub seed: u64,
    /// Seed of the visit order that produced the nets.
    pub order_seed: u64,
    /// `levels[l]` holds the cubes of scale `k_min + l`.
    pub levels: Vec<Vec<Cube>>,
    /// Achieved inner sandwich constant.
    pub inner_constant: f64,
    #[serde(skip)]
    point_cube: Vec<Vec<u32>>,
}

/// Finest and coarsest usable scales for a grid: the finest keeps
/// `delta^k >= 2 * cell diagonal`, the coarsest holds a single cube.
pub fn scale_range(grid: &WeightedGrid, delta: f64) -> Result<(i32, i32)> {
    check_delta(delta)?;
    let floor = 2.0 * grid.cell_diagonal();
    let diam = grid.diameter(Metric::Dunkl);
    let mut k_max = 0i32;
    while delta.powi(k_max) < floor {
        k_max -= 1;
    }
    while delta.powi(k_max + 1) >= floor {
        k_max += 1;
    }
    let mut k_min = k_max;
    while delta.powi(k_min) <= diam {
        k_min -= 1;
    }
    Ok((k_min, k_max))
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta <= 0.5) {
        return Err(Error::Parameter(format!("delta {delta} must lie in (0, 1/2]")));
    }
    Ok(())
}

fn visit_order(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

fn greedy_net(grid: &WeightedGrid, radius: f64, order: &[usize], start: &[usize]) -> Vec<usize> {
    let mut hash = SpatialHash::new(grid.dim(), radius);
    let mut centers = Vec::with_capacity(start.len());
    for &c in start {
        hash.insert_orbit(grid, centers.len() as u32, c);
        centers.push(c);
    }
    for &p in order {
        let mut blocked = false;
        hash.for_each_within(grid.point(p), radius, |_, _| blocked = true);
        if !blocked {
            hash.insert_orbit(grid, centers.len() as u32, p);
            centers.push(p);
        }
    }
    centers.sort_unstable();
    centers
}

/// Greedy maximal `delta^k`-separated set of grid points in the Dunkl metric.
pub fn build_net(grid: &WeightedGrid, delta: f64, k: i32, order_seed: u64) -> Result<Vec<usize>> {
    check_delta(delta)?;
    let radius = delta.powi(k);
    if radius < 2.0 * grid.cell_diagonal() {
        return Err(Error::Parameter(format!(
            "scale {k} (delta^k = {radius}) is finer than twice the cell diagonal"
        )));
    }
    Ok(greedy_net(grid, radius, &visit_order(grid.len(), order_seed), &[]))
}

/// Centers within `radius` of `x` with squared distances, by index. Falls back
/// to the single nearest center when none is in range.
fn candidates(grid: &WeightedGrid, hash: &SpatialHash, radius: f64, centers: &[usize], x: &[f64]) -> Vec<(usize, f64)> {
    let mut pool: Vec<(usize, f64)> = Vec::new();
    hash.for_each_within(x, radius, |id, d2| pool.push((id as usize, d2)));
    pool.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pool.dedup_by_key(|c| c.0);
    if pool.is_empty() {
        let mut best = (usize::MAX, f64::INFINITY);
        for (id, &c) in centers.iter().enumerate() {
            let d = grid.dunkl_to(x, c);
            if d * d < best.1 {
                best = (id, d * d);
            }
        }
        pool.push(best);
    }
    pool
}

/// Candidate agreeing with the most anchors; then nearest; then smallest index.
fn pick(pool: &[(usize, f64)], anchors: &[(usize, u32)], chains: &[Vec<u32>]) -> usize {
    let mut best = (0usize, f64::INFINITY, usize::MAX);
    for &(id, d2) in pool {
        let score = anchors
            .iter()
            .filter(|&&(j, c)| chains[id][j] == c)
            .count();
        if score > best.0 || (score == best.0 && (d2 < best.1 || (d2 == best.1 && id < best.2))) {
            best = (score, d2, id);
        }
    }
    best.2
}

fn center_hash(grid: &WeightedGrid, radius: f64, centers: &[usize]) -> SpatialHash {
    let mut hash = SpatialHash::new(grid.dim(), radius);
    for (id, &c) in centers.iter().enumerate() {
        hash.insert_orbit(grid, id as u32, c);
    }
    hash
}

/// Number of visit orders tried before giving up on the inner sandwich bound.
pub const ORDER_ATTEMPTS: u64 = 16;

/// Builds a system from nested greedy nets. Visit orders are drawn from
/// `seed, seed + 1, ...` until one meets the inner sandwich floor; the order
/// actually used is stored in `order_seed`.
pub fn build_dyadic_system(grid: &WeightedGrid, delta: f64, k_min: i32, k_max: i32, seed: u64) -> Result<DyadicSystem> {
    check_delta(delta)?;
    if k_min > k_max {
        return Err(Error::Parameter(format!("k_min {k_min} exceeds k_max {k_max}")));
    }
    if delta.powi(k_max) < 2.0 * grid.cell_diagonal() {
        return Err(Error::Parameter(format!(
            "finest scale {k_max} is below twice the cell diagonal"
        )));
    }
    let mut last = None;
    for attempt in 0..ORDER_ATTEMPTS {
        let order_seed = seed.wrapping_add(attempt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let order = visit_order(grid.len(), order_seed);
        let mut nets: Vec<Vec<usize>> = Vec::new();
        for k in k_min..=k_max {
            let start = nets.last().cloned().unwrap_or_default();
            nets.push(greedy_net(grid, delta.powi(k), &order, &start));
        }
        match from_nets(grid, delta, k_min, nets, seed) {
            Ok(mut s) => {
                s.order_seed = order_seed;
                return Ok(s);
            }
            Err(e @ Error::Construction { .. }) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

/// Builds the cube system for given per-scale centers, then verifies its properties.
pub fn from_nets(grid: &WeightedGrid, delta: f64, k_min: i32, nets: Vec<Vec<usize>>, seed: u64) -> Result<DyadicSystem> {
    if nets.is_empty() {
        return Err(Error::Parameter("no scales given".into()));
    }
    let nets: Vec<Vec<usize>> = nets
        .into_iter()
        .map(|mut c| {
            c.sort_unstable();
            c.dedup();
            c
        })
        .collect();
    let levels = nets.len();
    let k_max = k_min + levels as i32 - 1;
    let n = grid.len();
    let hashes: Vec<SpatialHash> = (0..levels)
        .map(|l| center_hash(grid, delta.powi(k_min + l as i32), &nets[l]))
        .collect();
    // Centers `x` sits deep inside, one per level up to `upto`.
    let anchors = |x: &[f64], upto: usize| -> Vec<(usize, u32)> {
        let mut out = Vec::new();
        for (j, hash) in hashes.iter().enumerate().take(upto + 1) {
            let mut best = (f64::INFINITY, u32::MAX);
            hash.for_each_within(x, ANCHOR * delta.powi(k_min + j as i32), |id, d2| {
                if d2 < best.0 || (d2 == best.0 && id < best.1) {
                    best = (d2, id);
                }
            });
            if best.1 != u32::MAX {
                out.push((j, best.1));
            }
        }
        out
    };
    // Ancestor chains of the centers, coarsest first.
    let mut chains: Vec<Vec<Vec<u32>>> = vec![(0..nets[0].len() as u32).map(|i| vec![i]).collect()];
    let mut parent_of: Vec<Vec<usize>> = vec![Vec::new(); levels];
    for l in 0..levels - 1 {
        let r = delta.powi(k_min + l as i32);
        let mut parents = Vec::with_capacity(nets[l + 1].len());
        let mut next = Vec::with_capacity(nets[l + 1].len());
        for &z in &nets[l + 1] {
            let parent = match nets[l].binary_search(&z) {
                Ok(same) => same,
                Err(_) => {
                    let x = grid.point(z);
                    let pool = candidates(grid, &hashes[l], r * (1.0 + REL), &nets[l], x);
                    let wanted = anchors(x, l);
                    pick(&pool, &wanted, &chains[l])
                }
            };
            let mut chain = chains[l][parent].clone();
            chain.push(next.len() as u32);
            next.push(chain);
            parents.push(parent);
        }
        parent_of[l + 1] = parents;
        chains.push(next);
    }
    // Points choose among finest centers close enough to keep the outer bound.
    let fine = levels - 1;
    let fine_r = 2.0 * delta.powi(k_max);
    // Anchors are Euclidean, so exact orbit mates copy the choice of their smallest index.
    let exact = grid.has_exact_mirrors();
    let orbit_rep = |p: usize| {
        if !exact {
            return p;
        }
        (0..grid.group.order()).filter_map(|g| grid.mirror(g, p)).fold(p, usize::min)
    };
    let mut finest = vec![u32::MAX; n];
    for p in 0..n {
        let rep = orbit_rep(p);
        if finest[rep] == u32::MAX {
            let x = grid.point(rep);
            let pool = candidates(grid, &hashes[fine], fine_r, &nets[fine], x);
            finest[rep] = pick(&pool, &anchors(x, fine), &chains[fine]) as u32;
        }
        finest[p] = finest[rep];
    }
    let assign: Vec<Vec<u32>> = (0..levels)
        .map(|l| finest.iter().map(|&c| chains[fine][c as usize][l]).collect())
        .collect();
    let mut cube_levels: Vec<Vec<Cube>> = Vec::with_capacity(levels);
    for l in 0..levels {
        let k = k_min + l as i32;
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); nets[l].len()];
        for p in 0..n {
            members[assign[l][p] as usize].push(p);
        }
        let mut cubes = Vec::with_capacity(nets[l].len());
        for (idx, m) in members.into_iter().enumerate() {
            if m.is_empty() {
                return Err(construction(
                    "partition",
                    format!("cube {idx} at scale {k} has no members"),
                ));
            }
            let measure = grid.measure_of(&m);
            if !(measure > 0.0) {
                return Err(construction(
                    "partition",
                    format!("cube {idx} at scale {k} has zero measure"),
                ));
            }
            cubes.push(Cube {
                scale: k,
                index: idx,
                center: nets[l][idx],
                side: delta.powi(k),
                members: m,
                measure,
                parent: None,
                children: Vec::new(),
            });
        }
        cube_levels.push(cubes);
    }
    for l in 1..levels {
        for idx in 0..cube_levels[l].len() {
            let p = parent_of[l][idx];
            cube_levels[l][idx].parent = Some(p);
            cube_levels[l - 1][p].children.push(idx);
        }
    }
    let mut system = DyadicSystem {
        delta,
        k_min,
        k_max,
        seed,
        order_seed: seed,
        levels: cube_levels,
        inner_constant: 0.0,
        point_cube: assign,
    };
    let report = verify_dyadic_properties(&system, grid);
    for (name, check) in [
        ("separation", &report.separation),
        ("cover", &report.cover),
        ("partition", &report.partition),
        ("nesting", &report.nesting),
        ("sandwich", &report.sandwich_outer),
    ] {
        if !check.pass {
            return Err(construction(name, format!("measured {}", check.value)));
        }
    }
    if report.inner_constant < INNER_FLOOR {
        return Err(construction(
            "sandwich",
            format!("inner constant {} below {}", report.inner_constant, INNER_FLOOR),
        ));
    }
    system.inner_constant = report.inner_constant;
    Ok(system)
}

impl DyadicSystem {
    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn finest(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn scale(&self, level: usize) -> i32 {
        self.k_min + level as i32
    }

    pub fn side(&self, level: usize) -> f64 {
        self.delta.powi(self.scale(level))
    }

    pub fn cube(&self, level: usize, index: usize) -> &Cube {
        &self.levels[level][index]
    }

    /// Index of the cube at `level` containing grid point `p`.
    pub fn cube_of(&self, level: usize, p: usize) -> usize {
        self.point_cube[level][p] as usize
    }

    pub fn cube_count(&self) -> usize {
        self.levels.iter().map(|l| l.len()).sum()
    }

    /// Rebuilds the point lookup after deserialization.
    pub fn restore(&mut self, points: usize) -> Result<()> {
        let mut table = vec![vec![u32::MAX; points]; self.levels.len()];
        for (l, cubes) in self.levels.iter().enumerate() {
            for c in cubes {
                for &p in &c.members {
                    if p >= points || table[l][p] != u32::MAX {
                        return Err(Error::Format("cube members do not partition the grid".into()));
                    }
                    table[l][p] = c.index as u32;
                }
            }
            if table[l].iter().any(|&v| v == u32::MAX) {
                return Err(Error::Format("cube members do not cover the grid".into()));
            }
        }
        self.point_cube = table;
        Ok(())
    }

    pub fn to_text(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_text(text: &str, grid: &WeightedGrid) -> Result<Self> {
        let mut s: DyadicSystem = serde_json::from_str(text)?;
        s.restore(grid.len())?;
        Ok(s)
    }

    /// Strict descendants of a cube, coarse to fine.
    pub fn descendants(&self, level: usize, index: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut frontier = vec![(level, index)];
        while let Some((l, i)) = frontier.pop() {
            for &c in &self.levels[l][i].children {
                out.push((l + 1, c));
                frontier.push((l + 1, c));
            }
        }
        out.sort_unstable();
        out
    }

    /// Ancestor of `(level, index)` at `up_level <= level`.
    pub fn ancestor(&self, level: usize, index: usize, up_level: usize) -> usize {
        let mut i = index;
        let mut l = level;
        while l > up_level {
            i = self.levels[l][i].parent.expect("non-root cube has a parent");
            l -= 1;
        }
        i
    }

    /// Empirical doubling constants: parent over largest child, and parent over any child.
    pub fn doubling_constants(&self) -> (f64, f64) {
        let (mut largest, mut any) = (1.0f64, 1.0f64);
        for l in 0..self.finest() {
            for c in &self.levels[l] {
                let kids: Vec<f64> = c
                    .children
                    .iter()
                    .map(|&k| self.levels[l + 1][k].measure)
                    .collect();
                let big = kids.iter().cloned().fold(0.0, f64::max);
                let small = kids.iter().cloned().fold(f64::INFINITY, f64::min);
                largest = largest.max(c.measure / big);
                any = any.max(c.measure / small);
            }
        }
        (largest, any)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropertyCheck {
    pub pass: bool,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DyadicReport {
    pub levels: usize,
    pub cubes_per_level: Vec<usize>,
    /// Smallest center spacing over `delta^k`; must be at least 1.
    pub separation: PropertyCheck,
    /// Largest point-to-nearest-center distance over `delta^k`; at most 1.
    pub cover: PropertyCheck,
    /// Number of points not assigned exactly once at some scale.
    pub partition: PropertyCheck,
    /// Number of child cubes not contained in their parent.
    pub nesting: PropertyCheck,
    /// Largest member distance from the center over `delta^k`; at most 2.
    pub sandwich_outer: PropertyCheck,
    /// Achieved inner sandwich constant, capped at 1.
    pub inner_constant: f64,
    pub inner_target_met: bool,
    pub inner_floor_met: bool,
    /// Parent measure over largest child measure.
    pub doubling_largest_child: f64,
    /// Parent measure over smallest child measure.
    pub doubling_any_child: f64,
}

impl DyadicReport {
    pub fn all_pass(&self) -> bool {
        self.separation.pass
            && self.cover.pass
            && self.partition.pass
            && self.nesting.pass
            && self.sandwich_outer.pass
            && self.inner_floor_met
    }
}

pub fn verify_dyadic_properties(system: &DyadicSystem, grid: &WeightedGrid) -> DyadicReport {
    let n = grid.len();
    let mut separation: f64 = f64::INFINITY;
    let mut cover: f64 = 0.0;
    let mut outer: f64 = 0.0;
    let mut inner: f64 = 1.0;
    let mut partition_bad = 0usize;
    let mut nesting_bad = 0usize;
    for (l, cubes) in system.levels.iter().enumerate() {
        let r = system.side(l);
        let centers: Vec<usize> = cubes.iter().map(|c| c.center).collect();
        let hash = center_hash(grid, r, &centers);
        for (id, &c) in centers.iter().enumerate() {
            hash.for_each_within(grid.point(c), r, |other, d2| {
                if other as usize != id {
                    separation = separation.min(d2.sqrt() / r);
                }
            });
        }
        let mut count = vec![0u32; n];
        for c in cubes {
            for &p in &c.members {
                count[p] += 1;
            }
        }
        partition_bad += count.iter().filter(|&&k| k != 1).count();
        for p in 0..n {
            let mut best = f64::INFINITY;
            hash.for_each_within(grid.point(p), 2.0 * r, |_, d2| best = best.min(d2));
            cover = cover.max(best.sqrt() / r);
            let own = system.point_cube[l][p] as usize;
            hash.for_each_within(grid.point(p), r, |id, d2| {
                if id as usize != own {
                    inner = inner.min(d2.sqrt() / r);
                }
            });
        }
        for c in cubes {
            for &p in &c.members {
                outer = outer.max(grid.dunkl(c.center, p) / r);
            }
            if l > 0 {
                let parent = c.parent.unwrap_or(usize::MAX);
                let inside = parent < system.levels[l - 1].len()
                    && c.members
                        .iter()
                        .all(|&p| system.point_cube[l - 1][p] as usize == parent);
                if !inside {
                    nesting_bad += 1;
                }
            }
        }
    }
    if separation == f64::INFINITY {
        separation = 1.0;
    }
    let (largest, any) = system.doubling_constants();
    DyadicReport {
        levels: system.levels.len(),
        cubes_per_level: system.levels.iter().map(|l| l.len()).collect(),
        separation: PropertyCheck {
            pass: separation >= 1.0 - REL,
            value: separation,
        },
        cover: PropertyCheck {
            pass: cover <= 1.0 + REL,
            value: cover,
        },
        partition: PropertyCheck {
            pass: partition_bad == 0,
            value: partition_bad as f64,
        },
        nesting: PropertyCheck {
            pass: nesting_bad == 0,
            value: nesting_bad as f64,
        },
        sandwich_outer: PropertyCheck {
            pass: outer <= 2.0 * (1.0 + REL),
            value: outer,
        },
        inner_constant: inner,
        inner_target_met: inner >= INNER_TARGET,
        inner_floor_met: inner >= INNER_FLOOR,
        doubling_largest_child: largest,
        doubling_any_child: any,
    }
}

// ---------------------------------------------------------------------------
// Adjacent systems.

#[derive(Clone, Debug)]
pub struct SystemBundle {
    pub systems: Vec<DyadicSystem>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CubeRef {
    pub system: usize,
    pub level: usize,
    pub index: usize,
}

impl SystemBundle {
    pub fn cube(&self, r: CubeRef) -> &Cube {
        self.systems[r.system].cube(r.level, r.index)
    }

    /// Largest parent-over-largest-child ratio across the bundle.
    pub fn doubling_constant(&self) -> f64 {
        self.systems
            .iter()
            .map(|s| s.doubling_constants().0)
            .fold(1.0, f64::max)
    }
}

/// Independent systems with seeds `seed, seed + 1, ...`.
pub fn build_bundle(grid: &WeightedGrid, delta: f64, k_min: i32, k_max: i32, seed: u64, count: usize) -> Result<SystemBundle> {
    if count == 0 {
        return Err(Error::Parameter("bundle needs at least one system".into()));
    }
    let systems = (0..count as u64)
        .map(|t| build_dyadic_system(grid, delta, k_min, k_max, seed.wrapping_add(t)))
        .collect::<Result<Vec<_>>>()?;
    Ok(SystemBundle { systems })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Containment {
    pub cube: CubeRef,
    /// Largest member distance from the ball center over the radius.
    pub inflation: f64,
}

/// Default inflation cap for [`containing_cube`].
pub const DEFAULT_INFLATION_CAP: f64 = 32.0;

/// Smallest cube of each system holding every grid point of the ball; returns
/// the one with least inflation.
pub fn containing_cube(grid: &WeightedGrid, bundle: &SystemBundle, ball: &BallSpec, cap: f64) -> Result<Containment> {
    let members = grid.ball_members(&BallSpec {
        metric: Metric::Dunkl,
        ..ball.clone()
    });
    containing_cube_of(grid, bundle, &ball.center, ball.radius, &members, cap)
}

/// As [`containing_cube`] for an explicit member set.
pub fn containing_cube_of(
    grid: &WeightedGrid,
    bundle: &SystemBundle,
    center: &[f64],
    radius: f64,
    members: &[usize],
    cap: f64,
) -> Result<Containment> {
    if members.is_empty() {
        return Err(Error::Precondition("ball contains no grid points".into()));
    }
    let mut best: Option<Containment> = None;
    for (t, sys) in bundle.systems.iter().enumerate() {
        let mut found = None;
        for level in (0..sys.num_levels()).rev() {
            let first = sys.cube_of(level, members[0]);
            if members.iter().all(|&p| sys.cube_of(level, p) == first) {
                found = Some((level, first));
                break;
            }
        }
        let Some((level, index)) = found else { continue };
        let cube = sys.cube(level, index);
        let reach = cube
            .members
            .iter()
            .map(|&p| grid.dunkl_to(center, p))
            .fold(0.0, f64::max);
        let inflation = reach / radius;
        let cand = Containment {
            cube: CubeRef {
                system: t,
                level,
                index,
            },
            inflation,
        };
        if best.map_or(true, |b| inflation < b.inflation) {
            best = Some(cand);
        }
    }
    match best {
        Some(b) if b.inflation <= cap => Ok(b),
        Some(b) => Err(Error::Capacity(format!(
            "best containing cube has inflation {} above cap {cap}",
            b.inflation
        ))),
        None => Err(Error::Capacity("no system holds the ball in one cube".into())),
    }
}

// ---------------------------------------------------------------------------
// Sparse families.

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyCube {
    pub cube: CubeRef,
    pub members: Vec<usize>,
    pub measure: f64,
    pub witness: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseFamily {
    pub cubes: Vec<FamilyCube>,
    pub theta: f64,
    pub overlap_bound: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseCheck {
    pub ok: bool,
    pub witnesses_inside: bool,
    /// Smallest `omega(E(Q)) / omega(Q)` over the family (1 for an empty family).
    pub min_witness_ratio: f64,
    pub max_overlap: usize,
}

impl SparseFamily {
    pub fn len(&self) -> usize {
        self.cubes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cubes.is_empty()
    }
}

pub fn verify_sparse(family: &SparseFamily, grid: &WeightedGrid) -> SparseCheck {
    let mut overlap = vec![0usize; grid.len()];
    let mut inside = true;
    let mut ratio: f64 = 1.0;
    for q in &family.cubes {
        let set: HashSet<usize> = q.members.iter().copied().collect();
        let mut seen = HashSet::new();
        for &p in &q.witness {
            if !set.contains(&p) {
                inside = false;
            }
            if seen.insert(p) {
                overlap[p] += 1;
            }
        }
        let we: f64 = seen.iter().map(|&p| grid.weight(p)).sum();
        let wq = grid.measure_of(&q.members);
        ratio = ratio.min(if wq > 0.0 { we / wq } else { 0.0 });
    }
    let max_overlap = overlap.into_iter().max().unwrap_or(0);
    SparseCheck {
        ok: inside && ratio >= family.theta * (1.0 - 1e-12) && max_overlap <= family.overlap_bound,
        witnesses_inside: inside,
        min_witness_ratio: ratio,
        max_overlap,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{build_grid, GridParams};
    use crate::reflection::{catalog, RootSystem};

    fn lebesgue(res: usize) -> WeightedGrid {
        build_grid(&GridParams::cube(1, 0.0, 1.0, res), &RootSystem::trivial(1)).unwrap()
    }

    #[test]
    fn net_examples() {
        let g = lebesgue(64);
        let c = build_net(&g, 0.5, 1, 7).unwrap();
        assert!((2..=3).contains(&c.len()));
        for (a, &i) in c.iter().enumerate() {
            for &j in &c[a + 1..] {
                assert!(g.dunkl(i, j) >= 0.5);
            }
        }
        assert!((0..g.len()).all(|p| c.iter().any(|&i| g.dunkl(i, p) <= 0.5)));
        assert_eq!(c, build_net(&g, 0.5, 1, 7).unwrap());
        assert_eq!(build_net(&g, 0.5, -1, 3).unwrap().len(), 1);
        assert!(build_net(&g, 0.5, 6, 3).is_err());
    }

    #[test]
    fn scale_range_examples() {
        let g = lebesgue(256);
        let (k_min, k_max) = scale_range(&g, 0.5).unwrap();
        assert_eq!(k_min, 0);
        assert_eq!(k_max, 7);
        let s = build_dyadic_system(&g, 0.5, k_min, k_max, 1).unwrap();
        assert_eq!(s.levels[0].len(), 1);
    }

    #[test]
    fn orbit_pairs_share_cubes() {
        let a1 = catalog("a1", &[1.0]).unwrap();
        let g = build_grid(&GridParams::cube(1, -1.0, 1.0, 64), &a1).unwrap();
        let (k_min, k_max) = scale_range(&g, 0.5).unwrap();
        for seed in 0..6 {
            let s = build_dyadic_system(&g, 0.5, k_min, k_max, seed).unwrap();
            for l in 0..s.num_levels() {
                for p in 0..g.len() {
                    let m = g.mirror(1 - g.group.identity_index(), p).unwrap();
                    assert_eq!(s.cube_of(l, p), s.cube_of(l, m));
                }
            }
        }
    }

    #[test]
    fn single_scale_is_voronoi() {
        let g = lebesgue(64);
        let s = build_dyadic_system(&g, 0.5, 2, 2, 5).unwrap();
        let centers: Vec<usize> = s.levels[0].iter().map(|c| c.center).collect();
        for p in 0..g.len() {
            let own = g.dunkl(centers[s.cube_of(0, p)], p);
            assert!(centers.iter().all(|&c| g.dunkl(c, p) >= own));
        }
    }

    #[test]
    fn text_round_trip() {
        let g = lebesgue(32);
        let s = build_dyadic_system(&g, 0.5, 0, 3, 2).unwrap();
        let back = DyadicSystem::from_text(&s.to_text().unwrap(), &g).unwrap();
        assert_eq!(back.levels, s.levels);
        for p in 0..g.len() {
            assert_eq!(back.cube_of(3, p), s.cube_of(3, p));
        }
    }

    #[test]
    fn sparse_examples() {
        let g = lebesgue(16);
        let all: Vec<usize> = (0..16).collect();
        let one = SparseFamily {
            cubes: vec![FamilyCube {
                cube: CubeRef { system: 0, level: 0, index: 0 },
                members: all.clone(),
                measure: 1.0,
                witness: all.clone(),
            }],
            theta: 1.0,
            overlap_bound: 1,
        };
        assert!(verify_sparse(&one, &g).ok);
        let mut two = one.clone();
        two.cubes.push(FamilyCube {
            cube: CubeRef { system: 0, level: 1, index: 0 },
            members: (0..8).collect(),
            measure: 0.5,
            witness: (0..8).collect(),
        });
        two.theta = 0.5;
        let check = verify_sparse(&two, &g);
        assert!(!check.ok);
        assert_eq!(check.max_overlap, 2);
    }
}
