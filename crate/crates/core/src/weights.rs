//! Muckenhoupt-type constants over orbit balls and cubes, weighted BMO,
//! medians and oscillations, reverse Holder, and the Rubio de Francia iteration.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dyadic::DyadicSystem;
use crate::error::{Error, Result};
use crate::measure::{BallSpec, Metric, WeightedGrid};
use crate::operators::{dunkl_maximal, BallFamily};
use crate::reflection::norm;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Weight {
    pub values: Vec<f64>,
    /// Depends only on the distance to the origin.
    pub radial: bool,
    pub tag: String,
}

impl Weight {
    pub fn new(grid: &WeightedGrid, values: Vec<f64>, radial: bool, tag: impl Into<String>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Parameter("weight length does not match the grid".into()));
        }
        if let Some(i) = values.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Validation(format!("weight not positive at grid point {i}")));
        }
        let w = Weight {
            values,
            radial,
            tag: tag.into(),
        };
        if radial && !w.is_radial_on(grid) {
            return Err(Error::Validation("weight flagged radial but varies on a sphere".into()));
        }
        Ok(w)
    }

    pub fn constant(grid: &WeightedGrid, c: f64) -> Result<Self> {
        Weight::new(grid, vec![c; grid.len()], true, format!("const:{c}"))
    }

    /// Checks constancy on points with equal norm, and on orbit pairs when the
    /// grid has exact mirrors (otherwise a mirror is only the nearest point).
    pub fn is_radial_on(&self, grid: &WeightedGrid) -> bool {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0);
        let pairs = if grid.has_exact_mirrors() { grid.len() } else { 0 };
        for i in 0..pairs {
            for g in 0..grid.group.order() {
                if let Some(j) = grid.mirror(g, i) {
                    if !close(self.values[i], self.values[j]) {
                        return false;
                    }
                }
            }
        }
        let mut bins: BTreeMap<i64, f64> = BTreeMap::new();
        for i in 0..grid.len() {
            let key = (norm(grid.point(i)) * 1e9).round() as i64;
            match bins.get(&key) {
                Some(&v) if !close(v, self.values[i]) => return false,
                Some(_) => {}
                None => {
                    bins.insert(key, self.values[i]);
                }
            }
        }
        true
    }

    pub fn measure_of(&self, grid: &WeightedGrid, members: &[usize]) -> f64 {
        members.iter().map(|&p| self.values[p] * grid.weight(p)).sum()
    }
}

/// `max(|x|, half a cell diagonal)`; the Dunkl distance to the origin equals `|x|`.
fn clamped_radius(grid: &WeightedGrid, i: usize) -> f64 {
    norm(grid.point(i)).max(0.5 * grid.cell_diagonal())
}

/// Weights addressed by key: `const:c`, `dunkl_power:g`, `euclid_power:g`.
/// `rdf:<seed>` weights are built by [`rubio_de_francia`], not from a key.
pub fn weight_from_key(key: &str, grid: &WeightedGrid) -> Result<Weight> {
    let bad = || Error::UnknownKey(key.to_string());
    let (kind, arg) = key.split_once(':').ok_or_else(bad)?;
    let x: f64 = arg.parse().map_err(|_| bad())?;
    match kind {
        "const" => {
            if !(x > 0.0) {
                return Err(Error::Parameter("constant weight must be positive".into()));
            }
            Weight::constant(grid, x)
        }
        "dunkl_power" | "euclid_power" => {
            let values = (0..grid.len()).map(|i| clamped_radius(grid, i).powf(x)).collect();
            Weight::new(grid, values, true, key)
        }
        _ => Err(bad()),
    }
}

// ---------------------------------------------------------------------------
// Test families.

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestFamily {
    pub description: String,
    pub sets: Vec<Vec<usize>>,
    /// Ball radius per set, `None` for cubes.
    pub radii: Vec<Option<f64>>,
}

impl TestFamily {
    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn radius_range(&self) -> Option<(f64, f64)> {
        let r: Vec<f64> = self.radii.iter().flatten().copied().collect();
        if r.is_empty() {
            return None;
        }
        Some((r.iter().cloned().fold(f64::INFINITY, f64::min), r.iter().cloned().fold(0.0, f64::max)))
    }

    pub fn union(mut self, other: TestFamily) -> TestFamily {
        self.description = format!("{} + {}", self.description, other.description);
        self.sets.extend(other.sets);
        self.radii.extend(other.radii);
        self
    }
}

/// Seeded balls with uniform grid-point centers and log-uniform radii between
/// the cell diagonal and the diameter.
pub fn ball_family(grid: &WeightedGrid, metric: Metric, count: usize, seed: u64) -> Result<TestFamily> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lo = grid.cell_diagonal();
    let hi = grid.diameter(metric).max(2.0 * lo);
    let mut sets = Vec::with_capacity(count);
    let mut radii = Vec::with_capacity(count);
    for _ in 0..count {
        let c = rng.gen_range(0..grid.len());
        let r = (lo.ln() + rng.gen::<f64>() * (hi.ln() - lo.ln())).exp();
        sets.push(grid.ball_members(&BallSpec::new(grid.point(c).to_vec(), r, metric)?));
        radii.push(Some(r));
    }
    let name = match metric {
        Metric::Dunkl => "orbit balls",
        Metric::Euclidean => "euclidean balls",
    };
    Ok(TestFamily {
        description: format!("{count} {name}"),
        sets,
        radii,
    })
}

/// Orbit balls around the origin.
pub fn origin_family(grid: &WeightedGrid, radii: &[f64]) -> Result<TestFamily> {
    let zero = vec![0.0; grid.dim()];
    let mut sets = Vec::new();
    for &r in radii {
        let m = grid.ball_members(&BallSpec::new(zero.clone(), r, Metric::Dunkl)?);
        if m.is_empty() {
            return Err(Error::Precondition(format!("origin ball of radius {r} holds no grid point")));
        }
        sets.push(m);
    }
    Ok(TestFamily {
        description: format!("{} origin balls", radii.len()),
        sets,
        radii: radii.iter().map(|&r| Some(r)).collect(),
    })
}

pub fn cube_family(system: &DyadicSystem) -> TestFamily {
    let sets: Vec<Vec<usize>> = system.levels.iter().flatten().map(|q| q.members.clone()).collect();
    TestFamily {
        description: format!("{} dyadic cubes", sets.len()),
        radii: vec![None; sets.len()],
        sets,
    }
}

/// The default family: 500 orbit balls plus every cube of the system.
pub fn default_family(grid: &WeightedGrid, system: Option<&DyadicSystem>, seed: u64) -> Result<TestFamily> {
    let balls = ball_family(grid, Metric::Dunkl, 500, seed)?;
    Ok(match system {
        Some(s) => balls.union(cube_family(s)),
        None => balls,
    })
}

// ---------------------------------------------------------------------------
// A_p.

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApReport {
    pub p: f64,
    pub estimate: f64,
    pub family: String,
    pub family_size: usize,
    pub radius_range: Option<(f64, f64)>,
    /// Index of the set attaining the estimate.
    pub worst: usize,
}

fn ap_value(grid: &WeightedGrid, u: &[f64], p: f64, set: &[usize]) -> Result<f64> {
    let (mut m, mut a, mut b) = (0.0, 0.0, 0.0);
    for &i in set {
        let w = grid.weight(i);
        m += w;
        a += u[i] * w;
        b += u[i].powf(-1.0 / (p - 1.0)) * w;
    }
    if !(m > 0.0) {
        return Err(Error::Precondition("test set with zero measure".into()));
    }
    Ok((a / m) * (b / m).powf(p - 1.0))
}

pub fn ap_constant(grid: &WeightedGrid, u: &Weight, p: f64, family: &TestFamily) -> Result<ApReport> {
    if !(p > 1.0) {
        return Err(Error::Parameter(format!("A_p needs p > 1, got {p}")));
    }
    if family.is_empty() {
        return Err(Error::Precondition("empty test family".into()));
    }
    let mut estimate: f64 = 0.0;
    let mut worst = 0;
    for (k, s) in family.sets.iter().enumerate() {
        let v = ap_value(grid, &u.values, p, s)?;
        if v > estimate {
            estimate = v;
            worst = k;
        }
    }
    Ok(ApReport {
        p,
        estimate,
        family: family.description.clone(),
        family_size: family.len(),
        radius_range: family.radius_range(),
        worst,
    })
}

/// `max over grid points of M u / u` with `M` the orbit-ball maximal function.
pub fn a1_constant(grid: &WeightedGrid, balls: &BallFamily, u: &Weight) -> Result<f64> {
    let m = dunkl_maximal(grid, balls, &u.values)?;
    Ok(m.iter().zip(&u.values).map(|(a, b)| a / b).fold(0.0, f64::max))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WpCheck {
    pub holds: bool,
    /// `(omega(E) / omega(Q))^p`.
    pub lhs: f64,
    /// `[u] u(E) / u(Q)`.
    pub rhs: f64,
}

/// `(omega(E)/omega(Q))^p <= [u] u(E)/u(Q)` for `E` inside `Q`.
pub fn verify_wp(grid: &WeightedGrid, u: &Weight, p: f64, ap: f64, cube: &[usize], subset: &[usize]) -> Result<WpCheck> {
    let inside: std::collections::HashSet<usize> = cube.iter().copied().collect();
    if let Some(&x) = subset.iter().find(|x| !inside.contains(x)) {
        return Err(Error::Format(format!("subset point {x} lies outside the cube")));
    }
    let lhs = (grid.measure_of(subset) / grid.measure_of(cube)).powf(p);
    let rhs = ap * u.measure_of(grid, subset) / u.measure_of(grid, cube);
    Ok(WpCheck {
        holds: lhs <= rhs * (1.0 + 1e-12),
        lhs,
        rhs,
    })
}

/// Closes a point set under the mirror table.
pub fn orbit_close(grid: &WeightedGrid, set: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = set
        .iter()
        .flat_map(|&i| (0..grid.group.order()).filter_map(move |g| grid.mirror(g, i)))
        .chain(set.iter().copied())
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InclusionCheck {
    pub p: f64,
    pub q: f64,
    pub ap: f64,
    pub aq: f64,
    pub holds: bool,
}

pub fn verify_inclusion(grid: &WeightedGrid, u: &Weight, p: f64, q: f64, family: &TestFamily) -> Result<InclusionCheck> {
    if !(1.0 < p && p < q) {
        return Err(Error::Parameter(format!("inclusion needs 1 < p < q, got {p}, {q}")));
    }
    let ap = ap_constant(grid, u, p, family)?.estimate;
    let aq = ap_constant(grid, u, q, family)?.estimate;
    Ok(InclusionCheck {
        p,
        q,
        ap,
        aq,
        holds: aq <= ap * (1.0 + 1e-12),
    })
}

// ---------------------------------------------------------------------------
// Reverse Holder.

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReverseHolderReport {
    pub gamma: f64,
    pub constant: f64,
    pub cap: f64,
    /// Index of the worst set for the chosen exponent.
    pub worst: usize,
    /// `(gamma, C)` for every exponent tried.
    pub ladder: Vec<(f64, f64)>,
}

pub const RH_DEFAULT_CAP: f64 = 10.0;

/// Largest `gamma` in `1/2, 1/4, ..., 1/256` with
/// `(avg u^{1+gamma})^{1/(1+gamma)} <= C avg u` over the family and `C <= cap`.
pub fn reverse_holder(grid: &WeightedGrid, u: &Weight, family: &TestFamily, cap: f64) -> Result<ReverseHolderReport> {
    if !u.radial {
        return Err(Error::Precondition("reverse Holder is checked for radial weights only".into()));
    }
    let mut ladder = Vec::new();
    let mut best: Option<(f64, f64, usize)> = None;
    for k in 1..=8 {
        let gamma = 0.5f64.powi(k);
        let mut c: f64 = 0.0;
        let mut worst = 0;
        for (t, s) in family.sets.iter().enumerate() {
            let (mut m, mut a, mut b) = (0.0, 0.0, 0.0);
            for &i in s {
                let w = grid.weight(i);
                m += w;
                a += u.values[i] * w;
                b += u.values[i].powf(1.0 + gamma) * w;
            }
            if !(m > 0.0) {
                return Err(Error::Precondition("test set with zero measure".into()));
            }
            let v = (b / m).powf(1.0 / (1.0 + gamma)) / (a / m);
            if v > c {
                c = v;
                worst = t;
            }
        }
        ladder.push((gamma, c));
        if best.is_none() && c <= cap {
            best = Some((gamma, c, worst));
        }
    }
    match best {
        Some((gamma, constant, worst)) => Ok(ReverseHolderReport {
            gamma,
            constant,
            cap,
            worst,
            ladder,
        }),
        None => {
            let (g, c) = ladder.iter().cloned().fold((0.0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
            Err(Error::Capacity(format!("no exponent reaches C <= {cap}; best gamma {g} with C = {c}")))
        }
    }
}

// ---------------------------------------------------------------------------
// BMO, medians, oscillations.

fn mean_on(grid: &WeightedGrid, b: &[f64], set: &[usize]) -> f64 {
    let (mut m, mut a) = (0.0, 0.0);
    for &i in set {
        m += grid.weight(i);
        a += b[i] * grid.weight(i);
    }
    a / m
}

/// `sup over the family of u(S)^{-1} integral over S of |b - b_S|`.
pub fn bmo_norm(grid: &WeightedGrid, b: &[f64], u: &Weight, family: &TestFamily) -> Result<f64> {
    if family.is_empty() {
        return Err(Error::Precondition("empty test family".into()));
    }
    let mut best: f64 = 0.0;
    for s in &family.sets {
        if s.is_empty() {
            continue;
        }
        let mean = mean_on(grid, b, s);
        let dev: f64 = s.iter().map(|&i| (b[i] - mean).abs() * grid.weight(i)).sum();
        best = best.max(dev / u.measure_of(grid, s));
    }
    Ok(best)
}

/// Weighted median with the lower value on ties.
pub fn median_value(grid: &WeightedGrid, b: &[f64], region: &[usize]) -> Result<f64> {
    let total = grid.measure_of(region);
    if !(total > 0.0) {
        return Err(Error::Precondition("median over a region of zero measure".into()));
    }
    let mut pts: Vec<usize> = region.to_vec();
    pts.sort_by(|&i, &j| b[i].total_cmp(&b[j]).then(i.cmp(&j)));
    let mut acc = 0.0;
    let mut k = 0;
    while k < pts.len() {
        let v = b[pts[k]];
        while k < pts.len() && b[pts[k]] == v {
            acc += grid.weight(pts[k]);
            k += 1;
        }
        if acc >= 0.5 * total {
            return Ok(v);
        }
    }
    Ok(b[*pts.last().unwrap()])
}

pub fn oscillation(grid: &WeightedGrid, b: &[f64], region: &[usize]) -> Result<f64> {
    let m = grid.measure_of(region);
    if !(m > 0.0) {
        return Err(Error::Precondition("oscillation over a region of zero measure".into()));
    }
    let mean = mean_on(grid, b, region);
    Ok(region.iter().map(|&i| (b[i] - mean).abs() * grid.weight(i)).sum::<f64>() / m)
}

// ---------------------------------------------------------------------------
// Rubio de Francia.

/// Discrete `L^q(omega)` norm.
pub fn lq_norm(grid: &WeightedGrid, q: f64, f: &[f64]) -> f64 {
    f.iter()
        .enumerate()
        .map(|(i, v)| v.abs().powf(q) * grid.weight(i))
        .sum::<f64>()
        .powf(1.0 / q)
}

/// Certified upper bound for the orbit-ball maximal operator on `L^q(omega)`:
/// `(max_y sum_x w_x max over family balls B holding x and y of 1/omega(B))^{1/q}`.
pub fn mdnorm_bound(grid: &WeightedGrid, balls: &BallFamily, q: f64) -> Result<f64> {
    if !(q >= 1.0) {
        return Err(Error::Parameter("q must be at least 1".into()));
    }
    let n = grid.len();
    if n > 2048 {
        return Err(Error::Capacity(format!("certified bound limited to 2048 points, grid has {n}")));
    }
    let l = balls.radii.len();
    // rank[c][x]: smallest ladder index whose ball around c holds x.
    let mut rank = vec![u8::MAX; n * n];
    for c in 0..n {
        let mut prev = 0;
        for m in 0..l {
            let members = balls.members(c, m);
            for &x in &members[prev..] {
                rank[c * n + x as usize] = m as u8;
            }
            prev = members.len();
        }
    }
    let inv: Vec<f64> = (0..n * l)
        .map(|k| {
            let w = balls.measure(k / l, k % l);
            if w > 0.0 {
                1.0 / w
            } else {
                0.0
            }
        })
        .collect();
    let mut worst: f64 = 0.0;
    for y in 0..n {
        let mut total = 0.0;
        for x in 0..n {
            let mut best: f64 = 0.0;
            for c in 0..n {
                let m = rank[c * n + x].max(rank[c * n + y]);
                if (m as usize) < l {
                    best = best.max(inv[c * l + m as usize]);
                }
            }
            total += grid.weight(x) * best;
        }
        worst = worst.max(total);
    }
    Ok(worst.powf(1.0 / q))
}

/// Largest `|| M f ||_q / || f ||_q` over seeded random probes.
pub fn mdnorm_probe(grid: &WeightedGrid, balls: &BallFamily, q: f64, probes: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = grid.len();
    let mut best: f64 = 1.0;
    for t in 0..probes {
        let f: Vec<f64> = if t % 2 == 0 {
            let k = rng.gen_range(0..n);
            (0..n).map(|i| if i == k { 1.0 } else { 0.0 }).collect()
        } else {
            (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
        };
        let mf = dunkl_maximal(grid, balls, &f)?;
        let nf = lq_norm(grid, q, &f);
        if nf > 0.0 {
            best = best.max(lq_norm(grid, q, &mf) / nf);
        }
    }
    Ok(best)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RdfReport {
    pub phi: Weight,
    pub p: f64,
    /// Exponent of the space the iteration runs in (`p'`).
    pub q: f64,
    pub mdnorm: f64,
    pub probe: f64,
    pub terms: usize,
    pub norm_g: f64,
    pub norm_phi: f64,
    /// `sup of M^{terms+1} g / (2 mdnorm)^terms`.
    pub slack: f64,
    pub norm_ok: bool,
    pub majorant_ok: bool,
    pub a1_ok: bool,
    /// `max (M phi - 2 mdnorm phi)` over the grid.
    pub a1_excess: f64,
}

pub const RDF_PROBES: usize = 8;

/// `phi = sum_{k <= terms} M^k g / (2 mdnorm)^k` in `L^{p'}(omega)`.
pub fn rubio_de_francia(
    grid: &WeightedGrid,
    balls: &BallFamily,
    g: &[f64],
    p: f64,
    mdnorm: f64,
    terms: usize,
    seed: u64,
) -> Result<RdfReport> {
    if !(p > 1.0) {
        return Err(Error::Parameter("p must exceed 1".into()));
    }
    if terms < 8 {
        return Err(Error::Parameter("at least 8 terms are required".into()));
    }
    if g.iter().all(|&v| v == 0.0) {
        return Err(Error::Precondition("g vanishes identically".into()));
    }
    let q = p / (p - 1.0);
    let probe = mdnorm_probe(grid, balls, q, RDF_PROBES, seed)?;
    if mdnorm < probe {
        return Err(Error::Parameter(format!("mdnorm {mdnorm} below the probe estimate {probe}")));
    }
    let scale = 2.0 * mdnorm;
    let mut term: Vec<f64> = g.iter().map(|v| v.abs()).collect();
    let mut phi = term.clone();
    let mut factor = 1.0;
    for _ in 0..terms {
        term = dunkl_maximal(grid, balls, &term)?;
        factor /= scale;
        for (a, t) in phi.iter_mut().zip(&term) {
            *a += t * factor;
        }
    }
    let tail = dunkl_maximal(grid, balls, &term)?;
    let slack = tail.iter().cloned().fold(0.0, f64::max) * factor;
    let norm_g = lq_norm(grid, q, g);
    let norm_phi = lq_norm(grid, q, &phi);
    let mphi = dunkl_maximal(grid, balls, &phi)?;
    let a1_excess = mphi
        .iter()
        .zip(&phi)
        .map(|(m, f)| m - scale * f)
        .fold(f64::NEG_INFINITY, f64::max);
    let majorant_ok = g.iter().zip(&phi).all(|(a, b)| a.abs() <= *b);
    let radial = false;
    Ok(RdfReport {
        phi: Weight::new(grid, phi, radial, format!("rdf:{seed}"))?,
        p,
        q,
        mdnorm,
        probe,
        terms,
        norm_g,
        norm_phi,
        slack,
        norm_ok: norm_phi <= 2.0 * norm_g * (1.0 + 1e-12),
        majorant_ok,
        a1_ok: a1_excess <= slack + 1e-12 * scale,
        a1_excess,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{build_grid, GridParams};
    use crate::reflection::{catalog, RootSystem};

    fn line() -> WeightedGrid {
        build_grid(&GridParams::cube(1, -1.0, 1.0, 64), &RootSystem::trivial(1)).unwrap()
    }

    #[test]
    fn constant_weights() {
        let g = line();
        let fam = ball_family(&g, Metric::Dunkl, 50, 1).unwrap();
        for c in [1.0, 3.5] {
            let u = Weight::constant(&g, c).unwrap();
            for p in [1.5, 2.0, 4.0] {
                assert!((ap_constant(&g, &u, p, &fam).unwrap().estimate - 1.0).abs() < 1e-12);
            }
        }
        assert!(ap_constant(&g, &Weight::constant(&g, 1.0).unwrap(), 1.0, &fam).is_err());
    }

    #[test]
    fn median_and_oscillation_examples() {
        let g = line();
        let all: Vec<usize> = (0..g.len()).collect();
        let x: Vec<f64> = all.iter().map(|&i| g.point(i)[0]).collect();
        let m = median_value(&g, &x, &all).unwrap();
        assert!(m.abs() <= 1.0 / 64.0 + 1e-12);
        assert_eq!(median_value(&g, &vec![3.0; 64], &all).unwrap(), 3.0);
        let ind: Vec<f64> = x.iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect();
        assert!((oscillation(&g, &ind, &all).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(oscillation(&g, &vec![2.0; 64], &all).unwrap(), 0.0);
    }

    #[test]
    fn power_weights_are_radial() {
        let g = build_grid(&GridParams::cube(2, -1.0, 1.0, 16), &catalog("a1xa1", &[1.0, 1.0]).unwrap()).unwrap();
        let u = weight_from_key("dunkl_power:1", &g).unwrap();
        assert!(u.radial);
        assert_eq!(u.values, weight_from_key("euclid_power:1", &g).unwrap().values);
        let tilted: Vec<f64> = (0..g.len()).map(|i| 1.0 + g.point(i)[0].abs() * 0.5 + g.point(i)[1].abs()).collect();
        assert!(Weight::new(&g, tilted, true, "t").is_err());
        assert!(weight_from_key("rdf", &g).is_err());
    }

    #[test]
    fn rdf_on_constants() {
        let g = line();
        let balls = BallFamily::ladder(&g, Metric::Dunkl);
        let bound = mdnorm_bound(&g, &balls, 2.0).unwrap();
        assert!(bound >= mdnorm_probe(&g, &balls, 2.0, 8, 1).unwrap());
        let r = rubio_de_francia(&g, &balls, &vec![1.0; g.len()], 2.0, bound, 20, 1).unwrap();
        let expect: f64 = (0..=20).map(|k| (2.0 * bound).powi(-k)).sum();
        assert!(r.phi.values.iter().all(|v| (v - expect).abs() < 1e-12));
        assert!(r.norm_ok && r.majorant_ok && r.a1_ok);
        assert!(rubio_de_francia(&g, &balls, &vec![1.0; g.len()], 2.0, 0.5, 20, 1).is_err());
    }
}
