//! Kernel models, their discrete realizations on a grid, maximal truncations,
//! maximal functions and commutators.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dyadic::DyadicSystem;
use crate::error::{Error, Result};
use crate::measure::{ball_volume, in_ball, BallSpec, Metric, WeightedGrid};
use crate::reflection::{dist, RootSystem};

// ---------------------------------------------------------------------------
// Kernels.

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelKind {
    /// `(x_j - y_j) / (|x - y| * omega(B(x, |x - y|)))`, axis stored zero-based.
    Riesz { axis: usize },
    Zero,
}

#[derive(Clone, Debug)]
pub struct KernelModel {
    pub kind: KernelKind,
    /// Declared Holder exponent.
    pub holder: f64,
    pub key: String,
    roots: RootSystem,
}

/// Riesz-type model kernel along coordinate `j` (1-based).
pub fn make_riesz_model(rs: &RootSystem, j: usize) -> Result<KernelModel> {
    if j == 0 || j > rs.dim {
        return Err(Error::Parameter(format!(
            "riesz axis {j} outside 1..={}",
            rs.dim
        )));
    }
    Ok(KernelModel {
        kind: KernelKind::Riesz { axis: j - 1 },
        holder: 1.0,
        key: format!("riesz:{j}"),
        roots: rs.clone(),
    })
}

pub fn zero_kernel(rs: &RootSystem) -> KernelModel {
    KernelModel {
        kind: KernelKind::Zero,
        holder: 1.0,
        key: "custom:zero".into(),
        roots: rs.clone(),
    }
}

/// Keys understood by [`kernel_from_key`].
pub fn kernel_keys() -> &'static [&'static str] {
    &["riesz:<j>", "custom:zero"]
}

pub fn kernel_from_key(key: &str, rs: &RootSystem) -> Result<KernelModel> {
    if let Some(j) = key.strip_prefix("riesz:") {
        let j: usize = j
            .parse()
            .map_err(|_| Error::UnknownKey(key.to_string()))?;
        return make_riesz_model(rs, j);
    }
    match key {
        "custom:zero" => Ok(zero_kernel(rs)),
        _ => Err(Error::UnknownKey(key.to_string())),
    }
}

impl KernelModel {
    pub fn roots(&self) -> &RootSystem {
        &self.roots
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.kind, KernelKind::Zero)
    }

    /// Kernel value; `x == y` is an error.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let r = dist(x, y);
        if !(r > 0.0) {
            return Err(Error::Numeric(format!("kernel evaluated on the diagonal at {x:?}")));
        }
        let v = match self.kind {
            KernelKind::Zero => 0.0,
            KernelKind::Riesz { axis } => {
                let vol = ball_volume(&self.roots, x, r)?;
                (x[axis] - y[axis]) / (r * vol)
            }
        };
        if !v.is_finite() {
            return Err(Error::Numeric(format!("kernel not finite at {x:?}, {y:?}")));
        }
        Ok(v)
    }

    fn eval_with_volume(&self, x: &[f64], y: &[f64], r: f64, vol: f64) -> f64 {
        match self.kind {
            KernelKind::Zero => 0.0,
            KernelKind::Riesz { axis } => (x[axis] - y[axis]) / (r * vol),
        }
    }
}

/// Tabulated `r -> omega(B(x, r))` for one point, interpolated linearly in log-log.
struct VolumeProfile {
    log_r0: f64,
    step: f64,
    log_v: Vec<f64>,
}

const PROFILE_NODES: usize = 128;

impl VolumeProfile {
    fn new(rs: &RootSystem, x: &[f64], r_min: f64, r_max: f64) -> Result<Self> {
        let log_r0 = r_min.ln();
        let step = (r_max.ln() - log_r0) / (PROFILE_NODES - 1) as f64;
        let log_v = (0..PROFILE_NODES)
            .map(|k| ball_volume(rs, x, (log_r0 + step * k as f64).exp()).map(f64::ln))
            .collect::<Result<Vec<_>>>()?;
        Ok(VolumeProfile { log_r0, step, log_v })
    }

    fn at(&self, r: f64) -> f64 {
        let t = ((r.ln() - self.log_r0) / self.step).clamp(0.0, (PROFILE_NODES - 1) as f64);
        let k = (t.floor() as usize).min(PROFILE_NODES - 2);
        let a = t - k as f64;
        ((1.0 - a) * self.log_v[k] + a * self.log_v[k + 1]).exp()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CzReport {
    pub kernel: String,
    pub samples: usize,
    pub holder: f64,
    /// sup |K| omega(B(x, d)).
    pub size: f64,
    /// Holder quotient in the second variable.
    pub smooth_y: f64,
    /// Holder quotient in the first variable.
    pub smooth_x: f64,
    /// Riesz-type size with the extra `(d / |x - y|)^eps` factor.
    pub riesz_size: f64,
    pub riesz_smooth_y: f64,
    pub riesz_smooth_x: f64,
    pub explosion_cap: f64,
    pub exploded: bool,
}

impl CzReport {
    pub fn constants(&self) -> [f64; 6] {
        [
            self.size,
            self.smooth_y,
            self.smooth_x,
            self.riesz_size,
            self.riesz_smooth_y,
            self.riesz_smooth_x,
        ]
    }

    pub fn all_finite(&self) -> bool {
        self.constants().iter().all(|c| c.is_finite())
    }
}

pub const DEFAULT_EXPLOSION_CAP: f64 = 1e6;

/// Empirical Calderon-Zygmund constants over seeded grid-point pairs with
/// continuum perturbations of length at most `d(x, y) / 2`.
pub fn cz_check(kernel: &KernelModel, grid: &WeightedGrid, samples: usize, seed: u64, cap: f64) -> Result<CzReport> {
    if samples < 100 {
        return Err(Error::Precondition(format!("cz_check needs at least 100 samples, got {samples}")));
    }
    let eps = kernel.holder;
    let n = grid.len();
    let dim = grid.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = CzReport {
        kernel: kernel.key.clone(),
        samples,
        holder: eps,
        size: 0.0,
        smooth_y: 0.0,
        smooth_x: 0.0,
        riesz_size: 0.0,
        riesz_smooth_y: 0.0,
        riesz_smooth_x: 0.0,
        explosion_cap: cap,
        exploded: false,
    };
    let rs = kernel.roots();
    let mut taken = 0;
    let mut tries = 0;
    while taken < samples {
        tries += 1;
        if tries > 100 * samples {
            return Err(Error::Precondition("could not draw separated sample pairs".into()));
        }
        let (i, j) = (rng.gen_range(0..n), rng.gen_range(0..n));
        let d = grid.dunkl(i, j);
        if !(d > 0.0) {
            continue;
        }
        let (x, y) = (grid.point(i).to_vec(), grid.point(j).to_vec());
        let e = dist(&x, &y);
        let vol = ball_volume(rs, &x, d)?;
        let k = kernel.eval(&x, &y)?;
        let t = (1e-3f64).powf(rng.gen::<f64>()) * d / 2.0;
        let dir = unit(&mut rng, dim);
        let y2: Vec<f64> = y.iter().zip(&dir).map(|(a, b)| a + t * b).collect();
        let x2: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + t * b).collect();
        let ky = kernel.eval(&x, &y2)?;
        let kx = kernel.eval(&x2, &y)?;
        let size = k.abs() * vol;
        let sy = (k - ky).abs() * vol * (d / t).powf(eps);
        let sx = (kx - k).abs() * vol * (d / t).powf(eps);
        let rsize = size * (e / d).powf(eps);
        let rsy = (k - ky).abs() * vol * (e / t).powf(eps);
        let rsx = (kx - k).abs() * vol * (e / t).powf(eps);
        for (slot, v) in [
            (&mut rep.size, size),
            (&mut rep.smooth_y, sy),
            (&mut rep.smooth_x, sx),
            (&mut rep.riesz_size, rsize),
            (&mut rep.riesz_smooth_y, rsy),
            (&mut rep.riesz_smooth_x, rsx),
        ] {
            if !v.is_finite() {
                return Err(Error::Numeric(format!("non-finite constant at pair ({i}, {j})")));
            }
            *slot = slot.max(v);
            if v > cap {
                rep.exploded = true;
            }
        }
        taken += 1;
    }
    Ok(rep)
}

fn unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 1e-3 && n <= 1.0 {
            return v.into_iter().map(|a| a / n).collect();
        }
    }
}

// ---------------------------------------------------------------------------
// Discrete operators.

/// `T_{r_cut}` on a grid: row `i` holds `K(x_i, x_j) w_j` for `d(x_i, x_j) > r_cut`,
/// sorted by distance.
#[derive(Clone, Debug)]
pub struct DiscreteOperator {
    n: usize,
    pub r_cut: f64,
    pub kernel_key: String,
    weights: Vec<f64>,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
    dists: Vec<f64>,
}

impl DiscreteOperator {
    /// Assembles the operator; `r_cut` defaults to one cell diagonal.
    pub fn assemble(grid: &WeightedGrid, kernel: &KernelModel, r_cut: Option<f64>) -> Result<Self> {
        let n = grid.len();
        let r_cut = r_cut.unwrap_or_else(|| grid.cell_diagonal());
        if !(r_cut >= 0.0) {
            return Err(Error::Parameter("r_cut must be nonnegative".into()));
        }
        let rs = kernel.roots();
        let tabulate = matches!(kernel.kind, KernelKind::Riesz { .. })
            && grid.dim() > 1
            && rs.roots.iter().any(|r| r.kappa != 0.0);
        let r_min = 0.25 * grid.cell_sizes().iter().cloned().fold(f64::INFINITY, f64::min);
        let r_max = 1.01 * grid.diameter(Metric::Euclidean).max(r_min * 4.0);
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        let (mut cols, mut vals, mut dists) = (Vec::new(), Vec::new(), Vec::new());
        let mut row: Vec<(f64, u32, f64)> = Vec::with_capacity(n);
        for i in 0..n {
            let x = grid.point(i);
            let profile = if tabulate {
                Some(VolumeProfile::new(rs, x, r_min, r_max)?)
            } else {
                None
            };
            row.clear();
            for j in 0..n {
                let d = grid.dunkl(i, j);
                if !(d > r_cut * (1.0 + 1e-9)) {
                    continue;
                }
                let y = grid.point(j);
                let k = match (&profile, &kernel.kind) {
                    (_, KernelKind::Zero) => 0.0,
                    (Some(p), _) => {
                        let e = dist(x, y);
                        kernel.eval_with_volume(x, y, e, p.at(e))
                    }
                    (None, _) => kernel.eval(x, y)?,
                };
                let a = k * grid.weight(j);
                if !a.is_finite() {
                    return Err(Error::Numeric(format!("matrix entry ({i}, {j}) not finite")));
                }
                row.push((d, j as u32, a));
            }
            row.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            for &(d, j, a) in &row {
                dists.push(d);
                cols.push(j);
                vals.push(a);
            }
            row_ptr.push(cols.len());
        }
        Ok(DiscreteOperator {
            n,
            r_cut,
            kernel_key: kernel.key.clone(),
            weights: grid.weights().to_vec(),
            row_ptr,
            cols,
            vals,
            dists,
        })
    }

    /// Operator from a dense row-major matrix of entries `A_ij` (already
    /// including quadrature weights) and pairwise distances.
    pub fn from_dense(matrix: &[f64], dists: &[f64], weights: &[f64], r_cut: f64) -> Result<Self> {
        let n = weights.len();
        if matrix.len() != n * n || dists.len() != n * n {
            return Err(Error::Parameter("dense operator shape mismatch".into()));
        }
        let mut row_ptr = vec![0];
        let (mut cols, mut vals, mut ds) = (Vec::new(), Vec::new(), Vec::new());
        for i in 0..n {
            let mut row: Vec<(f64, u32, f64)> = (0..n)
                .filter(|&j| dists[i * n + j] > r_cut * (1.0 + 1e-9))
                .map(|j| (dists[i * n + j], j as u32, matrix[i * n + j]))
                .collect();
            row.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            for (d, j, a) in row {
                ds.push(d);
                cols.push(j);
                vals.push(a);
            }
            row_ptr.push(cols.len());
        }
        Ok(DiscreteOperator {
            n,
            r_cut,
            kernel_key: "dense".into(),
            weights: weights.to_vec(),
            row_ptr,
            cols,
            vals,
            dists: ds,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    fn row(&self, i: usize) -> (&[u32], &[f64], &[f64]) {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.cols[a..b], &self.vals[a..b], &self.dists[a..b])
    }

    /// Dense row-major matrix of entries.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.n * self.n];
        for i in 0..self.n {
            let (c, v, _) = self.row(i);
            for (&j, &a) in c.iter().zip(v) {
                m[i * self.n + j as usize] = a;
            }
        }
        m
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| self.apply_at(i, f)).collect()
    }

    pub fn apply_at(&self, i: usize, f: &[f64]) -> f64 {
        let (c, v, _) = self.row(i);
        c.iter().zip(v).map(|(&j, &a)| a * f[j as usize]).sum()
    }

    /// `T_eps f`: only pairs with `d(x_i, x_j) > eps` contribute.
    pub fn apply_truncated(&self, f: &[f64], eps: f64) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let (c, v, d) = self.row(i);
                let start = d.partition_point(|&t| t <= eps);
                c[start..]
                    .iter()
                    .zip(&v[start..])
                    .map(|(&j, &a)| a * f[j as usize])
                    .sum()
            })
            .collect()
    }

    /// Row `i` of `T (f 1_S)` where `keep(j)` decides membership in `S`.
    pub fn apply_at_masked(&self, i: usize, f: &[f64], keep: impl Fn(usize) -> bool) -> f64 {
        let (c, v, _) = self.row(i);
        c.iter()
            .zip(v)
            .filter(|(&j, _)| keep(j as usize))
            .map(|(&j, &a)| a * f[j as usize])
            .sum()
    }

    /// Adjoint in `L^2(omega)`.
    pub fn apply_adjoint(&self, g: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for i in 0..self.n {
            let (c, v, _) = self.row(i);
            let s = self.weights[i] * g[i];
            for (&j, &a) in c.iter().zip(v) {
                out[j as usize] += a * s;
            }
        }
        for (o, &w) in out.iter_mut().zip(&self.weights) {
            *o = if w > 0.0 { *o / w } else { 0.0 };
        }
        out
    }

    /// `T* f = max over the ladder of |T_eps f|`.
    pub fn maximal_truncation(&self, f: &[f64], ladder: &[f64]) -> Result<Vec<f64>> {
        if ladder.is_empty() {
            return Err(Error::Parameter("empty truncation ladder".into()));
        }
        if ladder.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Parameter("truncation ladder must be ascending".into()));
        }
        let mut out = vec![0.0; self.n];
        let mut suffix = Vec::new();
        for (i, o) in out.iter_mut().enumerate() {
            let (c, v, d) = self.row(i);
            suffix.clear();
            suffix.resize(c.len() + 1, 0.0);
            for t in (0..c.len()).rev() {
                suffix[t] = suffix[t + 1] + v[t] * f[c[t] as usize];
            }
            let mut best: f64 = 0.0;
            for &eps in ladder {
                best = best.max(suffix[d.partition_point(|&t| t <= eps)].abs());
            }
            *o = best;
        }
        Ok(out)
    }

    /// Power iteration on `T^* T` in `L^2(omega)`.
    pub fn l2_opnorm(&self, iterations: usize, seed: u64) -> Result<OpNormEstimate> {
        if iterations < 50 {
            return Err(Error::Precondition(format!("l2_opnorm needs at least 50 iterations, got {iterations}")));
        }
        let norm = |f: &[f64]| -> f64 {
            f.iter()
                .zip(&self.weights)
                .map(|(a, w)| a * a * w)
                .sum::<f64>()
                .sqrt()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut f: Vec<f64> = (0..self.n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut history = Vec::with_capacity(iterations);
        let mut best: f64 = 0.0;
        for _ in 0..iterations {
            let nf = norm(&f);
            if nf == 0.0 {
                break;
            }
            f.iter_mut().for_each(|a| *a /= nf);
            let tf = self.apply(&f);
            let est = norm(&tf);
            best = best.max(est);
            history.push(best);
            if est == 0.0 {
                break;
            }
            f = self.apply_adjoint(&tf);
        }
        let relative_change = match history.len() {
            0 | 1 => 0.0,
            k if history[k - 1] > 0.0 => (history[k - 1] - history[k - 2]) / history[k - 1],
            _ => 0.0,
        };
        Ok(OpNormEstimate {
            value: best,
            relative_change,
            history,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpNormEstimate {
    pub value: f64,
    pub relative_change: f64,
    /// Running estimate after each iteration.
    pub history: Vec<f64>,
}

/// `r_cut * 2^m` up to the first value at or beyond the Dunkl diameter.
pub fn default_ladder(grid: &WeightedGrid) -> Vec<f64> {
    let base = grid.cell_diagonal();
    let diam = grid.diameter(Metric::Dunkl);
    let mut out = vec![base];
    while *out.last().unwrap() < diam {
        out.push(out.last().unwrap() * 2.0);
    }
    out
}

pub fn commutator(op: &DiscreteOperator, b: &[f64], f: &[f64]) -> Vec<f64> {
    let tf = op.apply(f);
    let bf: Vec<f64> = b.iter().zip(f).map(|(x, y)| x * y).collect();
    let tbf = op.apply(&bf);
    b.iter()
        .zip(tf.iter().zip(&tbf))
        .map(|(bi, (t1, t2))| bi * t1 - t2)
        .collect()
}

// ---------------------------------------------------------------------------
// Ball families and maximal functions.

/// Balls centered at every grid point with radii `h/2 * 2^m`, `h` the smallest
/// cell side, up to one radius beyond the diameter.
#[derive(Clone, Debug)]
pub struct BallFamily {
    pub metric: Metric,
    pub radii: Vec<f64>,
    n: usize,
    order: Vec<u32>,
    counts: Vec<u32>,
    measures: Vec<f64>,
}

impl BallFamily {
    pub fn ladder(grid: &WeightedGrid, metric: Metric) -> Self {
        let h = grid.cell_sizes().iter().cloned().fold(f64::INFINITY, f64::min);
        let diam = grid.diameter(metric);
        let mut radii = vec![h / 2.0];
        while *radii.last().unwrap() <= diam {
            radii.push(radii.last().unwrap() * 2.0);
        }
        Self::with_radii(grid, metric, radii)
    }

    pub fn with_radii(grid: &WeightedGrid, metric: Metric, radii: Vec<f64>) -> Self {
        let n = grid.len();
        let l = radii.len();
        let mut order = Vec::with_capacity(n * n);
        let mut counts = Vec::with_capacity(n * l);
        let mut measures = Vec::with_capacity(n * l);
        let mut row: Vec<(f64, u32)> = Vec::with_capacity(n);
        for c in 0..n {
            row.clear();
            row.extend((0..n).map(|j| (grid.distance(metric, c, j), j as u32)));
            row.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut t = 0;
            let mut acc = 0.0;
            for &r in &radii {
                while t < n && in_ball(row[t].0, r) {
                    acc += grid.weight(row[t].1 as usize);
                    t += 1;
                }
                counts.push(t as u32);
                measures.push(acc);
            }
            order.extend(row.iter().map(|p| p.1));
        }
        BallFamily {
            metric,
            radii,
            n,
            order,
            counts,
            measures,
        }
    }

    pub fn centers(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.n * self.radii.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Grid points of ball `(c, m)` sorted by distance from `c`.
    pub fn members(&self, c: usize, m: usize) -> &[u32] {
        let k = self.counts[c * self.radii.len() + m] as usize;
        &self.order[c * self.n..c * self.n + k]
    }

    /// All grid points sorted by distance from `c`.
    pub fn sorted_from(&self, c: usize) -> &[u32] {
        &self.order[c * self.n..(c + 1) * self.n]
    }

    pub fn measure(&self, c: usize, m: usize) -> f64 {
        self.measures[c * self.radii.len() + m]
    }

    /// `x -> max over family balls containing x of avg_B |f| v` with the average
    /// taken against `v d omega` (`v = 1` for the plain maximal function).
    fn maximal(&self, grid: &WeightedGrid, f: &[f64], v: Option<&[f64]>) -> Vec<f64> {
        let l = self.radii.len();
        let mut out = vec![0.0f64; self.n];
        let mut avgs = vec![0.0f64; l];
        for c in 0..self.n {
            let order = self.sorted_from(c);
            let mut t = 0;
            let (mut num, mut den) = (0.0, 0.0);
            for m in 0..l {
                let k = self.counts[c * l + m] as usize;
                while t < k {
                    let j = order[t] as usize;
                    let wv = grid.weight(j) * v.map_or(1.0, |v| v[j]);
                    num += f[j].abs() * wv;
                    den += wv;
                    t += 1;
                }
                avgs[m] = if den > 0.0 { num / den } else { 0.0 };
            }
            // Suffix maxima: a point at rank t lies in every ball whose count exceeds t.
            for m in (0..l.saturating_sub(1)).rev() {
                avgs[m] = avgs[m].max(avgs[m + 1]);
            }
            let mut m = 0;
            for (t, &j) in order.iter().enumerate() {
                while m < l && self.counts[c * l + m] as usize <= t {
                    m += 1;
                }
                if m == l {
                    break;
                }
                let o = &mut out[j as usize];
                *o = o.max(avgs[m]);
            }
        }
        out
    }
}

/// Hardy-Littlewood maximal function over a Euclidean family.
pub fn hl_maximal(grid: &WeightedGrid, family: &BallFamily, f: &[f64]) -> Result<Vec<f64>> {
    if family.metric != Metric::Euclidean {
        return Err(Error::Parameter("hl_maximal needs a Euclidean ball family".into()));
    }
    Ok(family.maximal(grid, f, None))
}

/// Maximal function over orbit balls (a Dunkl-metric family).
pub fn dunkl_maximal(grid: &WeightedGrid, family: &BallFamily, f: &[f64]) -> Result<Vec<f64>> {
    if family.metric != Metric::Dunkl {
        return Err(Error::Parameter("dunkl_maximal needs a Dunkl ball family".into()));
    }
    Ok(family.maximal(grid, f, None))
}

/// Maximal function with averages taken against `v d omega`.
pub fn weighted_ball_maximal(grid: &WeightedGrid, family: &BallFamily, v: &[f64], f: &[f64]) -> Vec<f64> {
    family.maximal(grid, f, Some(v))
}

/// Dyadic maximal function with averages against `u d omega`.
pub fn weighted_dyadic_maximal(system: &DyadicSystem, grid: &WeightedGrid, u: &[f64], f: &[f64]) -> Result<Vec<f64>> {
    if u.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::Precondition("weight must be positive".into()));
    }
    let mut out = vec![0.0f64; grid.len()];
    for cubes in &system.levels {
        for q in cubes {
            let (mut num, mut den) = (0.0, 0.0);
            for &p in &q.members {
                let wu = grid.weight(p) * u[p];
                num += f[p].abs() * wu;
                den += wu;
            }
            let avg = if den > 0.0 { num / den } else { 0.0 };
            for &p in &q.members {
                out[p] = out[p].max(avg);
            }
        }
    }
    Ok(out)
}

/// Unweighted dyadic maximal function.
pub fn dyadic_maximal(system: &DyadicSystem, grid: &WeightedGrid, f: &[f64]) -> Vec<f64> {
    weighted_dyadic_maximal(system, grid, &vec![1.0; grid.len()], f).expect("unit weight")
}

// ---------------------------------------------------------------------------
// Grand maximal truncated operators.

/// `C~_0 = 4 (floor(2 C_0) + 1)`.
pub fn dilation_constant(c0: f64) -> f64 {
    4.0 * ((2.0 * c0).floor() + 1.0)
}

/// Global grand maximal truncated operator over a Dunkl ball family.
pub fn grand_maximal(op: &DiscreteOperator, grid: &WeightedGrid, family: &BallFamily, f: &[f64], ctilde0: f64) -> Result<Vec<f64>> {
    grand_maximal_impl(op, grid, family, f, ctilde0, None)
}

/// Local variant: balls inside `base`, and `f` cut to `C~_0 base` minus `C~_0 B`.
/// Zero outside the base.
pub fn local_grand_maximal(
    op: &DiscreteOperator,
    grid: &WeightedGrid,
    family: &BallFamily,
    f: &[f64],
    ctilde0: f64,
    base: &BallSpec,
) -> Result<Vec<f64>> {
    grand_maximal_impl(op, grid, family, f, ctilde0, Some(base))
}

fn grand_maximal_impl(
    op: &DiscreteOperator,
    grid: &WeightedGrid,
    family: &BallFamily,
    f: &[f64],
    ctilde0: f64,
    base: Option<&BallSpec>,
) -> Result<Vec<f64>> {
    if family.metric != Metric::Dunkl {
        return Err(Error::Parameter("grand maximal operators use orbit balls".into()));
    }
    if !(ctilde0 >= 4.0) {
        return Err(Error::Parameter(format!("dilation constant {ctilde0} below 4")));
    }
    let n = grid.len();
    let (inside, g): (Vec<bool>, Vec<f64>) = match base {
        Some(b) => {
            let inside: Vec<bool> = (0..n).map(|j| grid.dunkl_to(&b.center, j) < b.radius).collect();
            let g = (0..n)
                .map(|j| {
                    if grid.dunkl_to(&b.center, j) < ctilde0 * b.radius {
                        f[j]
                    } else {
                        0.0
                    }
                })
                .collect();
            (inside, g)
        }
        None => (vec![true; n], f.to_vec()),
    };
    let support: Vec<usize> = (0..n).filter(|&j| g[j] != 0.0).collect();
    let mut out = vec![0.0f64; n];
    if support.is_empty() {
        return Ok(out);
    }
    let mut from_c = vec![0.0f64; n];
    for c in 0..n {
        if !inside[c] {
            continue;
        }
        for (j, d) in from_c.iter_mut().enumerate() {
            *d = grid.dunkl(c, j);
        }
        let reach = support.iter().map(|&j| from_c[j]).fold(0.0, f64::max);
        // Longest prefix of the sorted order inside the base.
        let order = family.sorted_from(c);
        let inside_len = order.iter().position(|&j| !inside[j as usize]).unwrap_or(n);
        for m in 0..family.radii.len() {
            let members = family.members(c, m);
            if members.len() > inside_len {
                break;
            }
            let cut = ctilde0 * family.radii[m];
            if cut > reach {
                break;
            }
            let mut value: f64 = 0.0;
            for &xi in members {
                let t = op.apply_at_masked(xi as usize, &g, |j| from_c[j] >= cut);
                value = value.max(t.abs());
            }
            for &x in members {
                let o = &mut out[x as usize];
                *o = o.max(value);
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointwiseRatio {
    /// sup of left over right where the right side is positive.
    pub max_ratio: f64,
    /// Points where the left side is positive but the right side vanishes.
    pub uncovered: usize,
}

pub fn pointwise_ratio(left: &[f64], right: &[f64]) -> PointwiseRatio {
    let mut max_ratio: f64 = 0.0;
    let mut uncovered = 0;
    for (&l, &r) in left.iter().zip(right) {
        if r > 0.0 {
            max_ratio = max_ratio.max(l.abs() / r);
        } else if l.abs() > 0.0 {
            uncovered += 1;
        }
    }
    PointwiseRatio { max_ratio, uncovered }
}

/// `sum over sigma of h(sigma(x))` using the grid's mirror table; images that
/// fall outside the grid are skipped.
pub fn orbit_sum(grid: &WeightedGrid, h: &[f64]) -> Vec<f64> {
    (0..grid.len())
        .map(|i| {
            (0..grid.group.order())
                .filter_map(|g| grid.mirror(g, i))
                .map(|j| h[j].abs())
                .sum()
        })
        .collect()
}

/// Pointwise comparison of `M_T f` with `sum_sigma M f o sigma + sum_sigma T* f o sigma`.
pub fn grand_maximal_comparison(
    op: &DiscreteOperator,
    grid: &WeightedGrid,
    dunkl_family: &BallFamily,
    euclid_family: &BallFamily,
    f: &[f64],
    ctilde0: f64,
) -> Result<PointwiseRatio> {
    let mt = grand_maximal(op, grid, dunkl_family, f, ctilde0)?;
    let m = hl_maximal(grid, euclid_family, f)?;
    let ts = op.maximal_truncation(f, &default_ladder(grid))?;
    let rhs: Vec<f64> = orbit_sum(grid, &m)
        .iter()
        .zip(orbit_sum(grid, &ts))
        .map(|(a, b)| a + b)
        .collect();
    Ok(pointwise_ratio(&mt, &rhs))
}
