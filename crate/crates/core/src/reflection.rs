//! Root systems, the reflection groups they generate, orbits and the Dunkl metric.
//!
//! Roots are normalized, `<v, v> = 2`, so a reflection is `x - <v, x> v`.

use std::collections::{HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Equality quantum for points and matrices.
pub const TOL: f64 = 1e-9;
/// Allowed deviation of `<v, v>` from 2.
pub const NORM_TOL: f64 = 1e-12;
/// Default cap on the number of generated group elements.
pub const GROUP_CAP: usize = 1024;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Coordinates snapped to the `TOL` lattice, used as hash keys.
pub fn quantize(v: &[f64]) -> Vec<i64> {
    v.iter().map(|x| (x / TOL).round() as i64).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Root {
    pub vector: Vec<f64>,
    pub kappa: f64,
}

/// A reduced, normalized root system with a multiplicity on each root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RootSystem {
    pub name: String,
    pub dim: usize,
    pub roots: Vec<Root>,
}

impl RootSystem {
    pub fn new(name: impl Into<String>, dim: usize, roots: Vec<Root>) -> Result<Self> {
        let rs = RootSystem {
            name: name.into(),
            dim,
            roots,
        };
        rs.validate()?;
        Ok(rs)
    }

    /// The system with no roots in `R^dim`.
    pub fn trivial(dim: usize) -> Self {
        RootSystem {
            name: format!("trivial{dim}"),
            dim,
            roots: Vec::new(),
        }
    }

    fn find(&self, v: &[f64]) -> Option<usize> {
        self.roots
            .iter()
            .position(|r| r.vector.iter().zip(v).all(|(a, b)| (a - b).abs() <= TOL))
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Validation("dimension must be positive".into()));
        }
        for (i, r) in self.roots.iter().enumerate() {
            if r.vector.len() != self.dim {
                return Err(Error::Validation(format!(
                    "root {i} has length {}, expected {}",
                    r.vector.len(),
                    self.dim
                )));
            }
            let n2 = dot(&r.vector, &r.vector);
            if (n2 - 2.0).abs() > NORM_TOL {
                return Err(Error::Validation(format!(
                    "root {i} has <v,v> = {n2}, expected 2"
                )));
            }
            if !(r.kappa >= 0.0 && r.kappa.is_finite()) {
                return Err(Error::Validation(format!(
                    "root {i} has multiplicity {}",
                    r.kappa
                )));
            }
            if self.roots[..i]
                .iter()
                .any(|s| dist(&s.vector, &r.vector) <= TOL)
            {
                return Err(Error::Validation(format!("root {i} is duplicated")));
            }
        }
        for (i, r) in self.roots.iter().enumerate() {
            let neg: Vec<f64> = r.vector.iter().map(|x| -x).collect();
            match self.find(&neg) {
                Some(j) if (self.roots[j].kappa - r.kappa).abs() <= TOL => {}
                Some(_) => {
                    return Err(Error::Validation(format!(
                        "root {i} and its negative carry different multiplicities"
                    )))
                }
                None => {
                    return Err(Error::Validation(format!(
                        "negative of root {i} is missing"
                    )))
                }
            }
            for (a, s) in self.roots.iter().enumerate() {
                let image = reflect_unchecked(&r.vector, &s.vector);
                match self.find(&image) {
                    Some(b) if (self.roots[b].kappa - s.kappa).abs() <= TOL => {}
                    Some(_) => {
                        return Err(Error::Validation(format!(
                            "multiplicity not invariant: reflection {i} maps root {a} to a root of different kappa"
                        )))
                    }
                    None => {
                        return Err(Error::Validation(format!(
                            "reflection {i} maps root {a} outside the system"
                        )))
                    }
                }
            }
        }
        Ok(())
    }

    /// Sum of multiplicities over all roots.
    pub fn kappa_total(&self) -> f64 {
        self.roots.iter().map(|r| r.kappa).sum()
    }

    /// Roots with a fixed sign convention: first nonzero coordinate positive.
    pub fn positive_roots(&self) -> Vec<&Root> {
        self.roots
            .iter()
            .filter(|r| {
                r.vector
                    .iter()
                    .find(|x| x.abs() > TOL)
                    .map_or(false, |x| *x > 0.0)
            })
            .collect()
    }
}

/// `N + sum of kappa`.
pub fn homogeneous_dimension(rs: &RootSystem) -> f64 {
    rs.dim as f64 + rs.kappa_total()
}

fn reflect_unchecked(root: &[f64], x: &[f64]) -> Vec<f64> {
    let c = dot(root, x);
    x.iter().zip(root).map(|(xi, ri)| xi - c * ri).collect()
}

/// `sigma_v(x) = x - <v, x> v` for a normalized root `v`.
pub fn reflect(root: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    if root.len() != x.len() {
        return Err(Error::Parameter("root and point dimensions differ".into()));
    }
    let n2 = dot(root, root);
    if (n2 - 2.0).abs() > NORM_TOL {
        return Err(Error::Validation(format!(
            "root is not normalized: <v,v> = {n2}"
        )));
    }
    Ok(reflect_unchecked(root, x))
}

/// Row-major `dim x dim` matrix of a reflection.
fn reflection_matrix(root: &[f64]) -> Vec<f64> {
    let n = root.len();
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            m[i * n + j] = if i == j { 1.0 } else { 0.0 } - root[i] * root[j];
        }
    }
    m
}

fn matmul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..n {
                c[i * n + j] += aik * b[k * n + j];
            }
        }
    }
    c
}

fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}

/// Finite group of orthogonal matrices, sorted lexicographically by entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReflectionGroup {
    pub dim: usize,
    pub elements: Vec<Vec<f64>>,
}

impl ReflectionGroup {
    pub fn order(&self) -> usize {
        self.elements.len()
    }

    pub fn apply(&self, g: usize, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.apply_into(g, x, &mut out);
        out
    }

    pub fn apply_into(&self, g: usize, x: &[f64], out: &mut [f64]) {
        let n = self.dim;
        let m = &self.elements[g];
        for i in 0..n {
            out[i] = (0..n).map(|j| m[i * n + j] * x[j]).sum();
        }
    }

    /// Index of the identity element.
    pub fn identity_index(&self) -> usize {
        let id = quantize(&identity(self.dim));
        self.elements
            .iter()
            .position(|m| quantize(m) == id)
            .expect("group contains the identity")
    }
}

pub fn generate_group(rs: &RootSystem) -> Result<ReflectionGroup> {
    generate_group_capped(rs, GROUP_CAP)
}

/// Breadth-first closure of the reflections under left multiplication.
pub fn generate_group_capped(rs: &RootSystem, cap: usize) -> Result<ReflectionGroup> {
    let n = rs.dim;
    let gens: Vec<Vec<f64>> = rs.roots.iter().map(|r| reflection_matrix(&r.vector)).collect();
    let id = identity(n);
    let mut seen: HashSet<Vec<i64>> = HashSet::new();
    seen.insert(quantize(&id));
    let mut elements = vec![id.clone()];
    let mut queue = VecDeque::from([id]);
    while let Some(m) = queue.pop_front() {
        for g in &gens {
            let p = matmul(g, &m, n);
            if seen.insert(quantize(&p)) {
                if elements.len() >= cap {
                    return Err(Error::Capacity(format!(
                        "group closure exceeds {cap} elements"
                    )));
                }
                elements.push(p.clone());
                queue.push_back(p);
            }
        }
    }
    elements.sort_by_cached_key(|m| quantize(m));
    Ok(ReflectionGroup { dim: n, elements })
}

/// Labels each root with the index of its G-orbit, in order of first appearance.
pub fn root_orbits(rs: &RootSystem, group: &ReflectionGroup) -> Vec<usize> {
    let mut label = vec![usize::MAX; rs.roots.len()];
    let mut next = 0;
    for i in 0..rs.roots.len() {
        if label[i] != usize::MAX {
            continue;
        }
        for g in 0..group.order() {
            let image = group.apply(g, &rs.roots[i].vector);
            if let Some(j) = rs.find(&image) {
                label[j] = next;
            }
        }
        next += 1;
    }
    label
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Orbit {
    pub base: Vec<f64>,
    pub points: Vec<Vec<f64>>,
}

pub fn orbit(group: &ReflectionGroup, x: &[f64]) -> Orbit {
    let mut seen = HashSet::new();
    let mut points = Vec::new();
    for g in 0..group.order() {
        let y = group.apply(g, x);
        if seen.insert(quantize(&y)) {
            points.push(y);
        }
    }
    points.sort_by_cached_key(|p| quantize(p));
    Orbit {
        base: x.to_vec(),
        points,
    }
}

/// `d(x, y) = min over sigma of |x - sigma(y)|`.
pub fn dunkl_distance(group: &ReflectionGroup, x: &[f64], y: &[f64]) -> f64 {
    let mut buf = vec![0.0; group.dim];
    let mut best = f64::INFINITY;
    for g in 0..group.order() {
        group.apply_into(g, y, &mut buf);
        best = best.min(dist(x, &buf));
    }
    best
}

fn root_from_angle(theta: f64) -> Vec<f64> {
    let s = std::f64::consts::SQRT_2;
    let (c, n) = (theta.cos() * s, theta.sin() * s);
    let clean = |v: f64| if v.abs() < 1e-15 { 0.0 } else { v };
    vec![clean(c), clean(n)]
}

/// Assigns `kappas[orbit]` to each root; a single value is broadcast to every orbit.
fn with_kappas(name: String, dim: usize, vectors: Vec<Vec<f64>>, kappas: &[f64]) -> Result<RootSystem> {
    let bare = RootSystem {
        name: name.clone(),
        dim,
        roots: vectors
            .into_iter()
            .map(|vector| Root { vector, kappa: 0.0 })
            .collect(),
    };
    bare.validate()?;
    let group = generate_group(&bare)?;
    let labels = root_orbits(&bare, &group);
    let orbits = labels.iter().copied().max().map_or(0, |m| m + 1);
    let values: Vec<f64> = match kappas.len() {
        0 => vec![0.0; orbits],
        1 => vec![kappas[0]; orbits],
        k if k == orbits => kappas.to_vec(),
        k => {
            return Err(Error::Parameter(format!(
                "{name} has {orbits} root orbits but {k} multiplicities were given"
            )))
        }
    };
    let mut rs = bare;
    for (root, l) in rs.roots.iter_mut().zip(labels) {
        root.kappa = values[l];
    }
    rs.validate()?;
    Ok(rs)
}

/// Catalog keys: `trivial[:N]`, `a1`, `a1xa1`, `a1n:N`, `b2`, `i2:k`.
pub fn catalog(key: &str, kappas: &[f64]) -> Result<RootSystem> {
    let s = std::f64::consts::SQRT_2;
    let (head, arg) = match key.split_once(':') {
        Some((h, a)) => (h, Some(a)),
        None => (key, None),
    };
    let int_arg = |default: Option<usize>| -> Result<usize> {
        match arg {
            Some(a) => a
                .trim()
                .parse::<usize>()
                .map_err(|_| Error::UnknownKey(key.to_string())),
            None => default.ok_or_else(|| Error::UnknownKey(key.to_string())),
        }
    };
    match head.to_ascii_lowercase().as_str() {
        "trivial" => {
            let n = int_arg(Some(1))?;
            if n == 0 {
                return Err(Error::UnknownKey(key.to_string()));
            }
            Ok(RootSystem::trivial(n))
        }
        "a1" => with_kappas("a1".into(), 1, vec![vec![s], vec![-s]], kappas),
        "a1xa1" => with_kappas(
            "a1xa1".into(),
            2,
            vec![vec![s, 0.0], vec![-s, 0.0], vec![0.0, s], vec![0.0, -s]],
            kappas,
        ),
        "a1n" => {
            let n = int_arg(None)?;
            if n == 0 {
                return Err(Error::UnknownKey(key.to_string()));
            }
            let mut vs = Vec::new();
            for i in 0..n {
                for sign in [1.0, -1.0] {
                    let mut v = vec![0.0; n];
                    v[i] = sign * s;
                    vs.push(v);
                }
            }
            with_kappas(format!("a1n:{n}"), n, vs, kappas)
        }
        "b2" => with_kappas(
            "b2".into(),
            2,
            vec![
                vec![s, 0.0],
                vec![-s, 0.0],
                vec![0.0, s],
                vec![0.0, -s],
                vec![1.0, 1.0],
                vec![-1.0, -1.0],
                vec![1.0, -1.0],
                vec![-1.0, 1.0],
            ],
            kappas,
        ),
        "i2" => {
            let k = int_arg(None)?;
            if k == 0 {
                return Err(Error::UnknownKey(key.to_string()));
            }
            let vs = (0..2 * k)
                .map(|j| root_from_angle(std::f64::consts::PI * j as f64 / k as f64))
                .collect();
            with_kappas(format!("i2:{k}"), 2, vs, kappas)
        }
        _ => Err(Error::UnknownKey(key.to_string())),
    }
}

/// The shipped catalog at unit multiplicity.
pub fn catalog_keys() -> Vec<&'static str> {
    vec![
        "trivial", "trivial:2", "a1", "a1xa1", "a1n:3", "b2", "i2:3", "i2:4", "i2:5", "i2:6",
    ]
}

fn parse_vector(text: &str) -> Result<Vec<f64>> {
    let inner = text
        .trim()
        .strip_prefix('[')
        .and_then(|t| t.strip_suffix(']'))
        .ok_or_else(|| Error::Format(format!("expected [..] vector, got `{text}`")))?;
    inner
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::Format(format!("bad number `{}`", t.trim())))
        })
        .collect()
}

/// Parses a text file of root systems:
///
/// ```text
/// [a1]
/// dimension = 1
/// root = [1.4142135623730951] kappa = 1
/// root = [-1.4142135623730951] kappa = 1
/// ```
pub fn parse_root_systems(text: &str) -> Result<Vec<RootSystem>> {
    struct Pending {
        name: String,
        dim: Option<usize>,
        roots: Vec<Root>,
    }
    fn finish(p: Pending) -> Result<RootSystem> {
        let dim = p
            .dim
            .ok_or_else(|| Error::Format(format!("section [{}] lacks `dimension`", p.name)))?;
        RootSystem::new(p.name, dim, p.roots)
    }
    let mut out = Vec::new();
    let mut cur: Option<Pending> = None;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: &str| Error::Format(format!("line {}: {msg}", lineno + 1));
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            if !name.contains(',') && name.parse::<f64>().is_err() {
                if let Some(p) = cur.take() {
                    out.push(finish(p)?);
                }
                cur = Some(Pending {
                    name: name.trim().to_string(),
                    dim: None,
                    roots: Vec::new(),
                });
                continue;
            }
        }
        let p = cur.as_mut().ok_or_else(|| err("entry outside a section"))?;
        let (key, rest) = line.split_once('=').ok_or_else(|| err("expected key = value"))?;
        match key.trim() {
            "dimension" => {
                p.dim = Some(rest.trim().parse().map_err(|_| err("bad dimension"))?);
            }
            "root" => {
                let close = rest.find(']').ok_or_else(|| err("unterminated vector"))?;
                let vector = parse_vector(&rest[..=close])?;
                let tail = rest[close + 1..].trim();
                let kappa = match tail.split_once('=') {
                    Some((k, v)) if k.trim() == "kappa" => {
                        v.trim().parse().map_err(|_| err("bad kappa"))?
                    }
                    None if tail.is_empty() => 0.0,
                    _ => return Err(err("expected `kappa = value` after root")),
                };
                p.roots.push(Root { vector, kappa });
            }
            other => return Err(err(&format!("unknown key `{other}`"))),
        }
    }
    if let Some(p) = cur.take() {
        out.push(finish(p)?);
    }
    Ok(out)
}

/// Writes systems in the format read by [`parse_root_systems`].
pub fn format_root_systems(systems: &[RootSystem]) -> String {
    let mut s = String::new();
    for rs in systems {
        s.push_str(&format!("[{}]\ndimension = {}\n", rs.name, rs.dim));
        for r in &rs.roots {
            let v: Vec<String> = r.vector.iter().map(|x| format!("{x:?}")).collect();
            s.push_str(&format!("root = [{}] kappa = {:?}\n", v.join(", "), r.kappa));
        }
        s.push('\n');
    }
    s
}

/// Orbit images of many points at once: `images[g * n + i]` is `sigma_g(x_i)`.
pub fn orbit_table(group: &ReflectionGroup, points: &[f64], dim: usize) -> Vec<f64> {
    let n = points.len() / dim;
    let mut out = vec![0.0; group.order() * n * dim];
    for g in 0..group.order() {
        for i in 0..n {
            let (src, dst) = (&points[i * dim..(i + 1) * dim], g * n + i);
            group.apply_into(g, src, &mut out[dst * dim..(dst + 1) * dim]);
        }
    }
    out
}

/// Lookup table from quantized coordinates to point index.
pub fn point_index(points: &[f64], dim: usize) -> HashMap<Vec<i64>, usize> {
    points
        .chunks(dim)
        .enumerate()
        .map(|(i, p)| (quantize(p), i))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_examples() {
        let s = std::f64::consts::SQRT_2;
        let y = reflect(&[s, 0.0], &[1.0, 2.0]).unwrap();
        assert!((y[0] + 1.0).abs() < 1e-12 && (y[1] - 2.0).abs() < 1e-12);
        assert_eq!(reflect(&[s, 0.0], &[0.0, 3.0]).unwrap(), vec![0.0, 3.0]);
        let y = reflect(&[s, 0.0], &[s, 0.0]).unwrap();
        assert!((y[0] + s).abs() < 1e-12);
        assert!(reflect(&[1.0, 0.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn group_orders() {
        assert_eq!(generate_group(&RootSystem::trivial(2)).unwrap().order(), 1);
        assert_eq!(generate_group(&catalog("a1", &[1.0]).unwrap()).unwrap().order(), 2);
        let z22 = generate_group(&catalog("a1xa1", &[1.0]).unwrap()).unwrap();
        assert_eq!(z22.order(), 4);
        assert_eq!(generate_group(&catalog("b2", &[1.0]).unwrap()).unwrap().order(), 8);
        for k in 1..=6 {
            let g = generate_group(&catalog(&format!("i2:{k}"), &[]).unwrap()).unwrap();
            assert_eq!(g.order(), 2 * k);
        }
        assert_eq!(generate_group(&catalog("a1n:3", &[]).unwrap()).unwrap().order(), 8);
    }

    #[test]
    fn orbit_examples() {
        let g = generate_group(&catalog("a1", &[]).unwrap()).unwrap();
        assert_eq!(orbit(&g, &[3.0]).points.len(), 2);
        assert_eq!(orbit(&g, &[0.0]).points, vec![vec![0.0]]);
        let g = generate_group(&catalog("a1xa1", &[]).unwrap()).unwrap();
        assert_eq!(orbit(&g, &[1.0, 0.0]).points.len(), 2);
    }

    #[test]
    fn distance_examples() {
        let g = generate_group(&catalog("a1xa1", &[]).unwrap()).unwrap();
        assert!((dunkl_distance(&g, &[1.0, 0.0], &[-1.0, 0.1]) - 0.1).abs() < 1e-12);
        let t = generate_group(&RootSystem::trivial(2)).unwrap();
        assert!((dunkl_distance(&t, &[0.0, 0.0], &[3.0, 4.0]) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn homogeneous_dimension_examples() {
        assert_eq!(homogeneous_dimension(&RootSystem::trivial(2)), 2.0);
        assert_eq!(homogeneous_dimension(&catalog("a1", &[0.5]).unwrap()), 2.0);
        assert_eq!(homogeneous_dimension(&catalog("a1xa1", &[1.0]).unwrap()), 6.0);
    }

    #[test]
    fn kappa_per_orbit() {
        let rs = catalog("b2", &[1.0, 2.0]).unwrap();
        let axis: Vec<f64> = rs.roots[..4].iter().map(|r| r.kappa).collect();
        let diag: Vec<f64> = rs.roots[4..].iter().map(|r| r.kappa).collect();
        assert!(axis.iter().all(|&k| k == axis[0]));
        assert!(diag.iter().all(|&k| k == diag[0]));
        assert_ne!(axis[0], diag[0]);
        assert!(catalog("i2:3", &[1.0, 2.0]).is_err());
    }

    #[test]
    fn invalid_systems_rejected() {
        let s = std::f64::consts::SQRT_2;
        let one = |v: Vec<f64>| Root { vector: v, kappa: 1.0 };
        assert!(RootSystem::new("x", 1, vec![one(vec![s])]).is_err());
        assert!(RootSystem::new("x", 1, vec![one(vec![1.0]), one(vec![-1.0])]).is_err());
        // A1 x A1 with one axis root rotated breaks closure.
        let r = vec![one(vec![s, 0.0]), one(vec![-s, 0.0]), one(vec![1.0, 1.0]), one(vec![-1.0, -1.0])];
        assert!(RootSystem::new("x", 2, r).is_err());
    }

    #[test]
    fn text_round_trip() {
        let systems = vec![catalog("a1", &[1.0]).unwrap(), catalog("b2", &[0.5, 1.5]).unwrap()];
        let text = format_root_systems(&systems);
        let parsed = parse_root_systems(&text).unwrap();
        assert_eq!(parsed, systems);
        assert!(parse_root_systems("[x]\nroot = [1.0]\n").is_err());
    }

    #[test]
    fn cap_enforced() {
        let rs = catalog("i2:6", &[]).unwrap();
        assert!(matches!(generate_group_capped(&rs, 5), Err(Error::Capacity(_))));
    }
}
