//! The Dunkl density, quadrature grids for `h_k(x) dx`, ball measures and
//! empirical checks of scaling, doubling and growth.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reflection::{
    dist, dot, generate_group, homogeneous_dimension, orbit_table, point_index, quantize,
    ReflectionGroup, RootSystem, TOL,
};

/// `h_k(x) = prod |<v, x>|^k(v)`, with `0^0 = 1`.
pub fn density(rs: &RootSystem, x: &[f64]) -> f64 {
    rs.roots
        .iter()
        .filter(|r| r.kappa != 0.0)
        .map(|r| dot(&r.vector, x).abs().powf(r.kappa))
        .product()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Euclidean,
    Dunkl,
}

/// Relative width of the boundary shell excluded from open balls.
pub const BOUNDARY_REL: f64 = 1e-12;

/// Open-ball membership. Ties at the radius count as outside, so rounding in
/// mirrored coordinates cannot split an orbit.
pub fn in_ball(d: f64, r: f64) -> bool {
    d < r * (1.0 - BOUNDARY_REL)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BallSpec {
    pub center: Vec<f64>,
    pub radius: f64,
    pub metric: Metric,
}

impl BallSpec {
    pub fn new(center: Vec<f64>, radius: f64, metric: Metric) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::Parameter(format!("ball radius {radius} must be positive")));
        }
        Ok(BallSpec {
            center,
            radius,
            metric,
        })
    }
}

/// Parameters from which a grid is rebuilt deterministically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridParams {
    pub bounds: Vec<[f64; 2]>,
    pub resolution: usize,
    #[serde(default = "default_subsamples")]
    pub subsamples: usize,
    /// Keep only cells whose centers lie within this distance of the origin.
    #[serde(default)]
    pub clip_radius: Option<f64>,
}

fn default_subsamples() -> usize {
    3
}

impl GridParams {
    pub fn cube(dim: usize, lo: f64, hi: f64, resolution: usize) -> Self {
        GridParams {
            bounds: vec![[lo, hi]; dim],
            resolution,
            subsamples: 3,
            clip_radius: None,
        }
    }
}

/// Cell-centred sample points with weights `w_i ~ integral of h_k over the cell`.
#[derive(Clone, Debug)]
pub struct WeightedGrid {
    pub params: GridParams,
    pub roots: RootSystem,
    pub group: ReflectionGroup,
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
    lattice: Vec<usize>,
    images: Vec<f64>,
    mirror: Vec<u32>,
    exact_mirror: bool,
}

const NO_POINT: u32 = u32::MAX;

fn check_invariant_region(params: &GridParams, group: &ReflectionGroup) -> Result<()> {
    let dim = params.bounds.len();
    if let Some(r) = params.clip_radius {
        if !(r > 0.0) {
            return Err(Error::Validation("clip radius must be positive".into()));
        }
        if params.bounds.iter().all(|b| b[0] <= -r + TOL && b[1] >= r - TOL) {
            return Ok(());
        }
        return Err(Error::Validation(
            "clip disc is not contained in the box".into(),
        ));
    }
    for mask in 0..(1usize << dim) {
        let corner: Vec<f64> = (0..dim)
            .map(|a| params.bounds[a][(mask >> a) & 1])
            .collect();
        for g in 0..group.order() {
            let y = group.apply(g, &corner);
            for a in 0..dim {
                let [lo, hi] = params.bounds[a];
                if y[a] < lo - TOL || y[a] > hi + TOL {
                    return Err(Error::Validation(format!(
                        "box is not invariant under group element {g}: corner {corner:?} maps to {y:?}"
                    )));
                }
            }
        }
    }
    Ok(())
}

pub fn build_grid(params: &GridParams, rs: &RootSystem) -> Result<WeightedGrid> {
    let group = generate_group(rs)?;
    let mut grid = layout(params, rs, group)?;
    grid.weights = cell_weights(&grid);
    Ok(grid)
}

/// Points, orbit tables and mirrors; weights left empty.
fn layout(params: &GridParams, rs: &RootSystem, group: ReflectionGroup) -> Result<WeightedGrid> {
    let dim = rs.dim;
    if params.bounds.len() != dim {
        return Err(Error::Validation(format!(
            "box has {} axes, root system has dimension {dim}",
            params.bounds.len()
        )));
    }
    if params.resolution < 8 {
        return Err(Error::Parameter(format!(
            "resolution {} is below the minimum 8",
            params.resolution
        )));
    }
    if params.subsamples == 0 {
        return Err(Error::Parameter("subsamples must be positive".into()));
    }
    if params.bounds.iter().any(|b| !(b[0] < b[1])) {
        return Err(Error::Validation("box bounds must satisfy lo < hi".into()));
    }
    check_invariant_region(params, &group)?;
    let res = params.resolution;
    let total = res.checked_pow(dim as u32).ok_or_else(|| {
        Error::Capacity("grid size overflows".into())
    })?;
    let mut points = Vec::new();
    let mut lattice = Vec::new();
    let mut p = vec![0.0; dim];
    for lin in 0..total {
        let mut rem = lin;
        for a in (0..dim).rev() {
            let idx = rem % res;
            rem /= res;
            let [lo, hi] = params.bounds[a];
            p[a] = lo + (idx as f64 + 0.5) * (hi - lo) / res as f64;
        }
        if let Some(r) = params.clip_radius {
            if dot(&p, &p).sqrt() > r {
                continue;
            }
        }
        points.extend_from_slice(&p);
        lattice.push(lin);
    }
    let n = lattice.len();
    if n == 0 {
        return Err(Error::Validation("grid has no points".into()));
    }
    let images = orbit_table(&group, &points, dim);
    let mut grid = WeightedGrid {
        params: params.clone(),
        roots: rs.clone(),
        group,
        dim,
        points,
        weights: Vec::new(),
        lattice,
        images,
        mirror: Vec::new(),
        exact_mirror: true,
    };
    grid.build_mirrors();
    Ok(grid)
}

fn cell_weights(grid: &WeightedGrid) -> Vec<f64> {
    let dim = grid.dim;
    let s = grid.params.subsamples;
    let cell = grid.cell_sizes();
    let vol: f64 = cell.iter().product();
    let sub_total = s.pow(dim as u32);
    let mut q = vec![0.0; dim];
    (0..grid.len())
        .map(|i| {
            let x = grid.point(i);
            let mut acc = 0.0;
            for lin in 0..sub_total {
                let mut rem = lin;
                for a in (0..dim).rev() {
                    let t = rem % s;
                    rem /= s;
                    let off = (t as f64 + 0.5) / s as f64 - 0.5;
                    q[a] = x[a] + off * cell[a];
                }
                acc += density(&grid.roots, &q);
            }
            acc / sub_total as f64 * vol
        })
        .collect()
}

impl WeightedGrid {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.lattice.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lattice.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_measure(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Lattice multi-index of point `i`, first axis slowest.
    pub fn lattice_index(&self, i: usize) -> Vec<usize> {
        let res = self.params.resolution;
        let mut rem = self.lattice[i];
        let mut out = vec![0; self.dim];
        for a in (0..self.dim).rev() {
            out[a] = rem % res;
            rem /= res;
        }
        out
    }

    pub fn cell_sizes(&self) -> Vec<f64> {
        self.params
            .bounds
            .iter()
            .map(|b| (b[1] - b[0]) / self.params.resolution as f64)
            .collect()
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_sizes().iter().product()
    }

    pub fn cell_diagonal(&self) -> f64 {
        self.cell_sizes().iter().map(|h| h * h).sum::<f64>().sqrt()
    }

    /// Shortest box side.
    pub fn box_side(&self) -> f64 {
        self.params
            .bounds
            .iter()
            .map(|b| b[1] - b[0])
            .fold(f64::INFINITY, f64::min)
    }

    /// `sigma_g(x_i)`.
    pub fn image(&self, g: usize, i: usize) -> &[f64] {
        let n = self.len();
        &self.images[(g * n + i) * self.dim..(g * n + i + 1) * self.dim]
    }

    pub fn euclidean(&self, i: usize, j: usize) -> f64 {
        dist(self.point(i), self.point(j))
    }

    pub fn dunkl(&self, i: usize, j: usize) -> f64 {
        self.dunkl_to(self.point(i), j)
    }

    /// Dunkl distance from an arbitrary point to grid point `j`.
    pub fn dunkl_to(&self, x: &[f64], j: usize) -> f64 {
        let mut best = f64::INFINITY;
        for g in 0..self.group.order() {
            let y = self.image(g, j);
            let mut s = 0.0;
            for a in 0..self.dim {
                let d = x[a] - y[a];
                s += d * d;
            }
            if s < best {
                best = s;
            }
        }
        best.sqrt()
    }

    pub fn distance(&self, metric: Metric, i: usize, j: usize) -> f64 {
        match metric {
            Metric::Euclidean => self.euclidean(i, j),
            Metric::Dunkl => self.dunkl(i, j),
        }
    }

    pub fn distance_to(&self, metric: Metric, x: &[f64], j: usize) -> f64 {
        match metric {
            Metric::Euclidean => dist(x, self.point(j)),
            Metric::Dunkl => self.dunkl_to(x, j),
        }
    }

    /// Largest pairwise distance. Exact for small grids; larger grids only
    /// compare points on the lattice boundary.
    pub fn diameter(&self, metric: Metric) -> f64 {
        let n = self.len();
        if n <= 4096 {
            let mut best: f64 = 0.0;
            for i in 0..n {
                for j in (i + 1)..n {
                    best = best.max(self.distance(metric, i, j));
                }
            }
            return best;
        }
        let res = self.params.resolution;
        let present: std::collections::HashSet<usize> = self.lattice.iter().copied().collect();
        let ext: Vec<usize> = (0..n)
            .filter(|&i| {
                let li = self.lattice_index(i);
                let mut stride = 1usize;
                for a in (0..self.dim).rev() {
                    let k = li[a];
                    if k == 0
                        || k + 1 == res
                        || !present.contains(&(self.lattice[i] - stride))
                        || !present.contains(&(self.lattice[i] + stride))
                    {
                        return true;
                    }
                    stride *= res;
                }
                false
            })
            .collect();
        let mut best: f64 = 0.0;
        for (a, &i) in ext.iter().enumerate() {
            for &j in &ext[a + 1..] {
                best = best.max(self.distance(metric, i, j));
            }
        }
        best
    }

    fn build_mirrors(&mut self) {
        let n = self.len();
        let res = self.params.resolution;
        let lookup: std::collections::HashMap<usize, usize> = self
            .lattice
            .iter()
            .enumerate()
            .map(|(i, &l)| (l, i))
            .collect();
        let cell = self.cell_sizes();
        let mut mirror = vec![NO_POINT; self.group.order() * n];
        let mut exact = true;
        for g in 0..self.group.order() {
            for i in 0..n {
                let y = self.image(g, i).to_vec();
                let mut lin = 0usize;
                let mut ok = true;
                let mut off = 0.0f64;
                for a in 0..self.dim {
                    let [lo, _] = self.params.bounds[a];
                    let t = (y[a] - lo) / cell[a] - 0.5;
                    let k = t.round();
                    off = off.max((t - k).abs() * cell[a]);
                    if k < 0.0 || k >= res as f64 {
                        ok = false;
                        break;
                    }
                    lin = lin * res + k as usize;
                }
                let hit = if ok { lookup.get(&lin).copied() } else { None };
                match hit {
                    Some(j) => {
                        if off > TOL {
                            exact = false;
                        }
                        mirror[g * n + i] = j as u32;
                    }
                    None => exact = false,
                }
            }
        }
        self.mirror = mirror;
        self.exact_mirror = exact;
    }

    /// Grid point nearest to `sigma_g(x_i)`, if it falls inside the grid.
    pub fn mirror(&self, g: usize, i: usize) -> Option<usize> {
        let m = self.mirror[g * self.len() + i];
        (m != NO_POINT).then_some(m as usize)
    }

    /// True when every `sigma(x_i)` is itself a grid point.
    pub fn has_exact_mirrors(&self) -> bool {
        self.exact_mirror
    }

    pub fn ball_members(&self, ball: &BallSpec) -> Vec<usize> {
        (0..self.len())
            .filter(|&j| in_ball(self.distance_to(ball.metric, &ball.center, j), ball.radius))
            .collect()
    }

    /// Measure of a set of point indices.
    pub fn measure_of(&self, idx: &[usize]) -> f64 {
        idx.iter().map(|&i| self.weights[i]).sum()
    }

    const MAGIC: &'static [u8; 8] = b"DKLGRID\0";
    const VERSION: u32 = 1;

    /// Binary form: magic, version, JSON header, then little-endian f64 weights.
    pub fn write_to(&self, out: &mut impl Write) -> Result<()> {
        #[derive(Serialize)]
        struct Header<'a> {
            params: &'a GridParams,
            roots: &'a RootSystem,
        }
        let header = serde_json::to_vec(&Header {
            params: &self.params,
            roots: &self.roots,
        })?;
        out.write_all(Self::MAGIC)?;
        out.write_all(&Self::VERSION.to_le_bytes())?;
        out.write_all(&(header.len() as u64).to_le_bytes())?;
        out.write_all(&header)?;
        out.write_all(&(self.weights.len() as u64).to_le_bytes())?;
        for w in &self.weights {
            out.write_all(&w.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(input: &mut impl Read) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            params: GridParams,
            roots: RootSystem,
        }
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != Self::MAGIC {
            return Err(Error::Format("not a grid file".into()));
        }
        let mut b4 = [0u8; 4];
        input.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != Self::VERSION {
            return Err(Error::Format(format!("unsupported grid version {version}")));
        }
        let mut b8 = [0u8; 8];
        input.read_exact(&mut b8)?;
        let mut header = vec![0u8; u64::from_le_bytes(b8) as usize];
        input.read_exact(&mut header)?;
        let header: Header = serde_json::from_slice(&header)?;
        header.roots.validate()?;
        let group = generate_group(&header.roots)?;
        let mut grid = layout(&header.params, &header.roots, group)?;
        input.read_exact(&mut b8)?;
        let n = u64::from_le_bytes(b8) as usize;
        if n != grid.len() {
            return Err(Error::Format(format!(
                "weight count {n} does not match grid size {}",
                grid.len()
            )));
        }
        let mut weights = Vec::with_capacity(n);
        for _ in 0..n {
            input.read_exact(&mut b8)?;
            weights.push(f64::from_le_bytes(b8));
        }
        grid.weights = weights;
        Ok(grid)
    }
}

/// Measure of the point set of a ball.
pub fn ball_measure(grid: &WeightedGrid, ball: &BallSpec) -> f64 {
    (0..grid.len())
        .filter(|&j| in_ball(grid.distance_to(ball.metric, &ball.center, j), ball.radius))
        .map(|j| grid.weight(j))
        .sum()
}

// ---------------------------------------------------------------------------
// Continuum ball measure, used where a kernel needs omega(B(x, r)) off the grid.

fn gamma_half(m: u32) -> f64 {
    // Gamma(m / 2) for m >= 1.
    if m % 2 == 0 {
        (1..m / 2).map(|k| k as f64).product()
    } else {
        let mut g = std::f64::consts::PI.sqrt();
        let mut a = 0.5;
        while a + 1e-9 < m as f64 / 2.0 {
            g *= a;
            a += 1.0;
        }
        g
    }
}

/// Integral of `z^alpha` over the Euclidean ball of radius `r` in `R^dim`.
fn ball_moment(alpha: &[u32], r: f64) -> f64 {
    if alpha.iter().any(|a| a % 2 == 1) {
        return 0.0;
    }
    let dim = alpha.len() as u32;
    let total: u32 = alpha.iter().sum();
    let num: f64 = alpha.iter().map(|&a| gamma_half(a + 1)).product();
    2.0 * num / gamma_half(total + dim) * r.powi((total + dim) as i32) / (total + dim) as f64
}

/// Dense polynomial in `dim` variables with per-variable degree at most `deg`.
struct Poly {
    dim: usize,
    deg: usize,
    coef: Vec<f64>,
}

impl Poly {
    fn one(dim: usize, deg: usize) -> Self {
        let mut coef = vec![0.0; (deg + 1).pow(dim as u32)];
        coef[0] = 1.0;
        Poly { dim, deg, coef }
    }

    fn exponents(&self, mut lin: usize) -> Vec<u32> {
        let mut e = vec![0; self.dim];
        for a in (0..self.dim).rev() {
            e[a] = (lin % (self.deg + 1)) as u32;
            lin /= self.deg + 1;
        }
        e
    }

    /// Multiplies by `c + <b, z>`.
    fn mul_linear(&mut self, c: f64, b: &[f64]) {
        let mut out: Vec<f64> = self.coef.iter().map(|v| v * c).collect();
        let base = self.deg + 1;
        for lin in 0..self.coef.len() {
            let v = self.coef[lin];
            if v == 0.0 {
                continue;
            }
            let e = self.exponents(lin);
            for a in 0..self.dim {
                if b[a] == 0.0 || e[a] as usize == self.deg {
                    continue;
                }
                let stride = base.pow((self.dim - 1 - a) as u32);
                out[lin + stride] += v * b[a];
            }
        }
        self.coef = out;
    }
}

/// Exact or quadrature value of `omega(B(x, r))` for the Euclidean ball in the continuum.
pub fn ball_volume(rs: &RootSystem, x: &[f64], r: f64) -> Result<f64> {
    let dim = rs.dim;
    let active: Vec<_> = rs
        .positive_roots()
        .into_iter()
        .filter(|root| root.kappa != 0.0)
        .collect();
    if active.is_empty() {
        let unit = std::f64::consts::PI.powf(dim as f64 / 2.0) / gamma_half(dim as u32 + 2);
        return Ok(unit * r.powi(dim as i32));
    }
    let integral = active
        .iter()
        .all(|root| (root.kappa - root.kappa.round()).abs() < 1e-12);
    if integral {
        // h(x + z) = prod over positive roots of (<v, x> + <v, z>)^(2 k)
        let deg: usize = active.iter().map(|root| 2 * root.kappa.round() as usize).sum();
        let mut poly = Poly::one(dim, deg);
        for root in &active {
            let c = dot(&root.vector, x);
            for _ in 0..(2 * root.kappa.round() as usize) {
                poly.mul_linear(c, &root.vector);
            }
        }
        let mut total = 0.0;
        for lin in 0..poly.coef.len() {
            let v = poly.coef[lin];
            if v != 0.0 {
                total += v * ball_moment(&poly.exponents(lin), r);
            }
        }
        return Ok(total);
    }
    if dim == 1 {
        let gamma: f64 = rs.kappa_total();
        let f = |t: f64| t.signum() * t.abs().powf(gamma + 1.0) / (gamma + 1.0);
        return Ok(2f64.powf(gamma / 2.0) * (f(x[0] + r) - f(x[0] - r)));
    }
    if dim == 2 {
        return Ok(polar_quadrature(rs, x, r));
    }
    Err(Error::Numeric(
        "ball volume for non-integer multiplicities is only available for N <= 2".into(),
    ))
}

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { z } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pm) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = z;
        weights[i] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
    (nodes, weights)
}

fn polar_quadrature(rs: &RootSystem, x: &[f64], r: f64) -> f64 {
    let (gx, gw) = gauss_legendre(12);
    let panels_phi = 48;
    let panels_rho = 6;
    let mut total = 0.0;
    for pa in 0..panels_phi {
        let (a0, a1) = (
            2.0 * std::f64::consts::PI * pa as f64 / panels_phi as f64,
            2.0 * std::f64::consts::PI * (pa + 1) as f64 / panels_phi as f64,
        );
        for (ta, wa) in gx.iter().zip(&gw) {
            let phi = 0.5 * (a0 + a1) + 0.5 * (a1 - a0) * ta;
            let (c, s) = (phi.cos(), phi.sin());
            for pr in 0..panels_rho {
                let (r0, r1) = (r * pr as f64 / panels_rho as f64, r * (pr + 1) as f64 / panels_rho as f64);
                for (tr, wr) in gx.iter().zip(&gw) {
                    let rho = 0.5 * (r0 + r1) + 0.5 * (r1 - r0) * tr;
                    let p = [x[0] + rho * c, x[1] + rho * s];
                    total += wa * wr * 0.25 * (a1 - a0) * (r1 - r0) * rho * density(rs, &p);
                }
            }
        }
    }
    total
}

// ---------------------------------------------------------------------------
// Empirical verification of the measure's geometric properties.

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingSample {
    pub center: Vec<f64>,
    pub radius: f64,
    pub factor: f64,
    pub ratio: f64,
    pub expected: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub homogeneous_dimension: f64,
    pub max_relative_deviation: f64,
    pub samples: Vec<ScalingSample>,
}

/// `omega(B(t x, t r)) / omega(B(x, r))`.
pub fn scaling_ratio(grid: &WeightedGrid, x: &[f64], r: f64, t: f64) -> Result<f64> {
    let small = ball_measure(grid, &BallSpec::new(x.to_vec(), r, Metric::Euclidean)?);
    let tx: Vec<f64> = x.iter().map(|v| v * t).collect();
    let big = ball_measure(grid, &BallSpec::new(tx, t * r, Metric::Euclidean)?);
    if small <= 0.0 {
        return Err(Error::Numeric("ball has zero measure".into()));
    }
    Ok(big / small)
}

fn radius_range(grid: &WeightedGrid) -> (f64, f64) {
    let cell = grid.cell_sizes().iter().cloned().fold(0.0, f64::max);
    (4.0 * cell, grid.box_side() / 8.0)
}

/// Uniform point with the closed ball of radius `margin` inside the box, or `None`.
fn sample_center(grid: &WeightedGrid, rng: &mut ChaCha8Rng, margin: f64) -> Option<Vec<f64>> {
    let mut x = Vec::with_capacity(grid.dim());
    for b in &grid.params.bounds {
        let (lo, hi) = (b[0] + margin, b[1] - margin);
        if lo > hi {
            return None;
        }
        x.push(rng.gen_range(lo..=hi));
    }
    if let Some(c) = grid.params.clip_radius {
        if dot(&x, &x).sqrt() + margin > c {
            return None;
        }
    }
    Some(x)
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (rng.gen_range(lo.ln()..=hi.ln())).exp()
}

pub fn verify_scaling(grid: &WeightedGrid, trials: usize, seed: u64) -> Result<ScalingReport> {
    let big_n = homogeneous_dimension(&grid.roots);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (rmin, rmax) = radius_range(grid);
    let mut samples = Vec::new();
    let mut worst: f64 = 0.0;
    let mut attempts = 0;
    while samples.len() < trials {
        attempts += 1;
        if attempts > 1000 * trials.max(1) {
            return Err(Error::Precondition("cannot place scaled balls in the box".into()));
        }
        let r = log_uniform(&mut rng, rmin, rmax);
        let t = rng.gen_range(1.0..=2.0);
        // t x must keep the scaled ball inside: sample t x directly.
        let Some(tx) = sample_center(grid, &mut rng, t * r) else { continue };
        let x: Vec<f64> = tx.iter().map(|v| v / t).collect();
        let ratio = scaling_ratio(grid, &x, r, t)?;
        let expected = t.powf(big_n);
        worst = worst.max((ratio / expected - 1.0).abs());
        samples.push(ScalingSample {
            center: x,
            radius: r,
            factor: t,
            ratio,
            expected,
        });
    }
    Ok(ScalingReport {
        homogeneous_dimension: big_n,
        max_relative_deviation: worst,
        samples,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub samples: usize,
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub spread: f64,
    /// `omega(B(x,r)) / omega(B(y,r))` over pairs with `|x - y| <= r`.
    pub neighbor_min: f64,
    pub neighbor_max: f64,
}

/// `r^N prod (|<v, x>| + r)^k(v)`.
pub fn comparison_profile(rs: &RootSystem, x: &[f64], r: f64) -> f64 {
    r.powi(rs.dim as i32)
        * rs
            .roots
            .iter()
            .map(|root| (dot(&root.vector, x).abs() + r).powf(root.kappa))
            .product::<f64>()
}

pub fn verify_comparison(grid: &WeightedGrid, samples: usize, seed: u64) -> Result<ComparisonReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (rmin, rmax) = radius_range(grid);
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    let (mut nlo, mut nhi) = (f64::INFINITY, 0.0f64);
    let mut done = 0;
    let mut attempts = 0;
    while done < samples {
        attempts += 1;
        if attempts > 1000 * samples.max(1) {
            return Err(Error::Precondition("cannot place balls in the box".into()));
        }
        let r = log_uniform(&mut rng, rmin, rmax);
        let Some(x) = sample_center(grid, &mut rng, 2.0 * r) else { continue };
        let m = ball_measure(grid, &BallSpec::new(x.clone(), r, Metric::Euclidean)?);
        let q = m / comparison_profile(&grid.roots, &x, r);
        lo = lo.min(q);
        hi = hi.max(q);
        // A neighbour at distance at most r.
        let mut y = x.clone();
        let mut dir: Vec<f64> = (0..grid.dim()).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let len = dot(&dir, &dir).sqrt().max(1e-12);
        let step = rng.gen_range(0.0..=r);
        for (ya, da) in y.iter_mut().zip(dir.iter_mut()) {
            *ya += *da / len * step;
        }
        let my = ball_measure(grid, &BallSpec::new(y, r, Metric::Euclidean)?);
        if my > 0.0 {
            nlo = nlo.min(m / my);
            nhi = nhi.max(m / my);
        }
        done += 1;
    }
    Ok(ComparisonReport {
        samples,
        min_ratio: lo,
        max_ratio: hi,
        spread: hi / lo,
        neighbor_min: nlo,
        neighbor_max: nhi,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoublingReport {
    pub samples: usize,
    /// Largest sampled `omega(B(x, 2r)) / omega(B(x, r))`.
    pub doubling_constant: f64,
    /// Smallest `C` with `C^-1 (r1/r2)^N <= omega(B(x,r1))/omega(B(x,r2)) <= C (r1/r2)^bigN`.
    pub growth_constant: f64,
}

pub fn doubling_and_growth(grid: &WeightedGrid, samples: usize, seed: u64) -> Result<DoublingReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (rmin, rmax) = radius_range(grid);
    let n = grid.dim() as f64;
    let big_n = homogeneous_dimension(&grid.roots);
    let mut cd: f64 = 0.0;
    let mut growth: f64 = 1.0;
    let mut done = 0;
    let mut attempts = 0;
    while done < samples {
        attempts += 1;
        if attempts > 1000 * samples.max(1) {
            return Err(Error::Precondition("cannot place balls in the box".into()));
        }
        let r = log_uniform(&mut rng, rmin, rmax);
        let Some(x) = sample_center(grid, &mut rng, 2.0 * r) else { continue };
        let m1 = ball_measure(grid, &BallSpec::new(x.clone(), r, Metric::Euclidean)?);
        let m2 = ball_measure(grid, &BallSpec::new(x.clone(), 2.0 * r, Metric::Euclidean)?);
        if m1 <= 0.0 {
            return Err(Error::Numeric("sampled ball has zero measure".into()));
        }
        cd = cd.max(m2 / m1);
        let r1 = rng.gen_range(r / 2.0..=r);
        let r2 = rng.gen_range(r1..=2.0 * r);
        let q = ball_measure(grid, &BallSpec::new(x.clone(), r1, Metric::Euclidean)?)
            / ball_measure(grid, &BallSpec::new(x, r2, Metric::Euclidean)?);
        let s = r1 / r2;
        growth = growth.max(s.powf(n) / q).max(q / s.powf(big_n));
        done += 1;
    }
    Ok(DoublingReport {
        samples,
        doubling_constant: cd,
        growth_constant: growth,
    })
}

/// Key used to identify a point set up to the `TOL` lattice.
pub fn point_key(x: &[f64]) -> Vec<i64> {
    quantize(x)
}

/// Map from quantized coordinates to grid index.
pub fn grid_lookup(grid: &WeightedGrid) -> std::collections::HashMap<Vec<i64>, usize> {
    point_index(grid.points(), grid.dim())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reflection::catalog;

    #[test]
    fn density_examples() {
        let z = catalog("a1xa1", &[1.0]).unwrap();
        assert!((density(&z, &[1.0, 2.0]) - 16.0).abs() < 1e-12);
        assert_eq!(density(&RootSystem::trivial(2), &[0.3, 0.1]), 1.0);
        assert_eq!(density(&z, &[0.0, 2.0]), 0.0);
        let zero = catalog("a1", &[0.0]).unwrap();
        assert_eq!(density(&zero, &[0.0]), 1.0);
    }

    #[test]
    fn lebesgue_weights() {
        let g = build_grid(&GridParams::cube(1, -1.0, 1.0, 10), &RootSystem::trivial(1)).unwrap();
        assert!(g.weights().iter().all(|w| (w - 0.2).abs() < 1e-15));
    }

    #[test]
    fn invariance_required() {
        let a1 = catalog("a1", &[1.0]).unwrap();
        assert!(build_grid(&GridParams::cube(1, 0.0, 1.0, 16), &a1).is_err());
        assert!(build_grid(&GridParams::cube(1, 0.0, 1.0, 16), &RootSystem::trivial(1)).is_ok());
        let i3 = catalog("i2:3", &[1.0]).unwrap();
        assert!(build_grid(&GridParams::cube(2, -1.0, 1.0, 16), &i3).is_err());
        let mut p = GridParams::cube(2, -1.0, 1.0, 16);
        p.clip_radius = Some(1.0);
        let g = build_grid(&p, &i3).unwrap();
        assert!(!g.has_exact_mirrors());
        assert!(build_grid(&GridParams::cube(1, -1.0, 1.0, 4), &a1).is_err());
    }

    #[test]
    fn mirrored_weights_match() {
        let z = catalog("a1xa1", &[1.0, 0.5]).unwrap();
        let g = build_grid(&GridParams::cube(2, -1.0, 1.0, 12), &z).unwrap();
        assert!(g.has_exact_mirrors());
        for s in 0..g.group.order() {
            for i in 0..g.len() {
                let j = g.mirror(s, i).unwrap();
                assert!((g.weight(i) - g.weight(j)).abs() <= 1e-12 * g.weight(i).max(1e-300));
            }
        }
    }

    #[test]
    fn ball_volume_matches_closed_forms() {
        let a1 = catalog("a1", &[1.0]).unwrap();
        assert!((ball_volume(&a1, &[0.0], 1.0).unwrap() - 4.0 / 3.0).abs() < 1e-12);
        // Non-integer path in 1-D against the polynomial path at an integer.
        let a1h = catalog("a1", &[0.5]).unwrap();
        let v = ball_volume(&a1h, &[0.3], 0.2).unwrap();
        let direct = {
            let (x, w) = gauss_legendre(40);
            x.iter()
                .zip(&w)
                .map(|(t, wt)| wt * 0.2 * density(&a1h, &[0.3 + 0.2 * t]))
                .sum::<f64>()
        };
        assert!((v - direct).abs() < 1e-6 * direct);
        let t2 = RootSystem::trivial(2);
        assert!((ball_volume(&t2, &[0.0, 0.0], 2.0).unwrap() - 4.0 * std::f64::consts::PI).abs() < 1e-12);
    }

    #[test]
    fn polar_quadrature_agrees_with_polynomial() {
        let z = catalog("a1xa1", &[1.0]).unwrap();
        let exact = ball_volume(&z, &[0.2, -0.4], 0.3).unwrap();
        let quad = polar_quadrature(&z, &[0.2, -0.4], 0.3);
        assert!((exact - quad).abs() < 1e-8 * exact);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(5);
        let v: f64 = x.iter().zip(&w).map(|(t, wt)| wt * t.powi(8)).sum();
        assert!((v - 2.0 / 9.0).abs() < 1e-13);
    }

    #[test]
    fn binary_round_trip() {
        let z = catalog("a1xa1", &[1.0]).unwrap();
        let g = build_grid(&GridParams::cube(2, -1.0, 1.0, 9), &z).unwrap();
        let mut buf = Vec::new();
        g.write_to(&mut buf).unwrap();
        let h = WeightedGrid::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(g.weights(), h.weights());
        assert_eq!(g.points(), h.points());
        assert!(WeightedGrid::read_from(&mut &b"garbage!"[..]).is_err());
    }
}
