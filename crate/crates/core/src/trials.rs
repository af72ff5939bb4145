//! Seeded test functions defined on the continuum, so the same draw can be
//! sampled on grids of different resolution.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::WeightedGrid;
use crate::reflection::norm;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrialFunction {
    /// Amplitude times the indicator of an axis box.
    Box { lo: Vec<f64>, hi: Vec<f64>, amplitude: f64 },
    /// Tensor product of cubic bumps `(1 - |t|)^2 (1 + 2|t|)`.
    Bump { center: Vec<f64>, radius: f64, amplitude: f64 },
    /// Random values on the cells of a coarse lattice over a box.
    Signs { lo: Vec<f64>, cell: f64, per_axis: usize, values: Vec<f64> },
}

fn hermite(t: f64) -> f64 {
    let a = t.abs();
    if a >= 1.0 {
        0.0
    } else {
        (1.0 - a) * (1.0 - a) * (1.0 + 2.0 * a)
    }
}

impl TrialFunction {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            TrialFunction::Box { lo, hi, amplitude } => {
                if x.iter().zip(lo.iter().zip(hi)).all(|(v, (a, b))| *a <= *v && *v < *b) {
                    *amplitude
                } else {
                    0.0
                }
            }
            TrialFunction::Bump {
                center,
                radius,
                amplitude,
            } => amplitude * x.iter().zip(center).map(|(v, c)| hermite((v - c) / radius)).product::<f64>(),
            TrialFunction::Signs {
                lo,
                cell,
                per_axis,
                values,
            } => {
                let mut idx = 0;
                for (v, a) in x.iter().zip(lo).rev() {
                    let t = ((v - a) / cell).floor();
                    if t < 0.0 || t >= *per_axis as f64 {
                        return 0.0;
                    }
                    idx = idx * per_axis + t as usize;
                }
                values[idx]
            }
        }
    }

    pub fn sample(&self, grid: &WeightedGrid) -> Vec<f64> {
        (0..grid.len()).map(|i| self.eval(grid.point(i))).collect()
    }

    pub fn label(&self) -> &'static str {
        match self {
            TrialFunction::Box { .. } => "box",
            TrialFunction::Bump { .. } => "bump",
            TrialFunction::Signs { .. } => "signs",
        }
    }
}

/// Draw number `k` of a seeded batch; kinds cycle box, bump, signs. Supports
/// sit in a Euclidean ball of radius a quarter of the smallest box side.
pub fn trial_function(bounds: &[[f64; 2]], seed: u64, k: usize) -> TrialFunction {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (k as u64).wrapping_mul(0xD1B5_4A32_D192_ED03));
    let dim = bounds.len();
    let side = bounds.iter().map(|b| b[1] - b[0]).fold(f64::INFINITY, f64::min);
    let rho = side / 4.0;
    let center: Vec<f64> = bounds
        .iter()
        .map(|b| {
            let mid = 0.5 * (b[0] + b[1]);
            mid + rng.gen_range(-1.0..1.0) * (b[1] - b[0]) / 8.0
        })
        .collect();
    // Half side of the cube inscribed in the support ball.
    let half = rho / (dim as f64).sqrt();
    let amplitude = rng.gen_range(0.5..2.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    match k % 3 {
        0 => {
            let (mut lo, mut hi) = (Vec::new(), Vec::new());
            for c in &center {
                let w = rng.gen_range(0.4..1.0) * half;
                let s = rng.gen_range(-1.0..1.0) * (half - w);
                lo.push(c + s - w);
                hi.push(c + s + w);
            }
            TrialFunction::Box { lo, hi, amplitude }
        }
        1 => TrialFunction::Bump {
            center,
            radius: rng.gen_range(0.5..1.0) * half,
            amplitude,
        },
        _ => {
            let per_axis: usize = 4;
            let cell = 2.0 * half / per_axis as f64;
            let lo = center.iter().map(|c| c - half).collect();
            let values = (0..per_axis.pow(dim as u32))
                .map(|_| rng.gen_range(0.5..1.5) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 })
                .collect();
            TrialFunction::Signs {
                lo,
                cell,
                per_axis,
                values,
            }
        }
    }
}

pub fn trial_batch(bounds: &[[f64; 2]], seed: u64, count: usize) -> Vec<TrialFunction> {
    (0..count).map(|k| trial_function(bounds, seed, k)).collect()
}

/// Symbols for commutators, addressed by key:
/// `const:c`, `coord:j` (1-based), `logd` (log of the distance to the origin,
/// clamped at the cell diagonal), `martingale:seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Symbol {
    Const { value: f64 },
    Coord { axis: usize },
    LogDistance,
    Martingale { seed: u64, levels: usize },
}

pub fn symbol_from_key(key: &str) -> Result<Symbol> {
    let bad = || Error::UnknownKey(key.to_string());
    match key.split_once(':') {
        Some(("const", v)) => Ok(Symbol::Const {
            value: v.parse().map_err(|_| bad())?,
        }),
        Some(("coord", j)) => {
            let j: usize = j.parse().map_err(|_| bad())?;
            if j == 0 {
                return Err(bad());
            }
            Ok(Symbol::Coord { axis: j - 1 })
        }
        Some(("martingale", s)) => Ok(Symbol::Martingale {
            seed: s.parse().map_err(|_| bad())?,
            levels: 4,
        }),
        None if key == "logd" => Ok(Symbol::LogDistance),
        _ => Err(bad()),
    }
}

impl Symbol {
    pub fn sample(&self, grid: &WeightedGrid) -> Result<Vec<f64>> {
        let n = grid.len();
        match self {
            Symbol::Const { value } => Ok(vec![*value; n]),
            Symbol::Coord { axis } => {
                if *axis >= grid.dim() {
                    return Err(Error::Parameter(format!("coordinate {} outside dimension {}", axis + 1, grid.dim())));
                }
                Ok((0..n).map(|i| grid.point(i)[*axis]).collect())
            }
            Symbol::LogDistance => {
                let floor = grid.cell_diagonal();
                Ok((0..n).map(|i| norm(grid.point(i)).max(floor).ln()).collect())
            }
            Symbol::Martingale { seed, levels } => {
                // Random signs on the standard dyadic cells of the bounding box.
                let bounds = &grid.params.bounds;
                let mut out = vec![0.0; n];
                for level in 1..=*levels {
                    let per_axis = 1usize << level;
                    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(level as u64));
                    let signs: Vec<f64> = (0..per_axis.pow(grid.dim() as u32))
                        .map(|_| if rng.gen_bool(0.5) { 1.0 } else { -1.0 })
                        .collect();
                    for (i, o) in out.iter_mut().enumerate() {
                        let x = grid.point(i);
                        let mut idx = 0;
                        for (v, b) in x.iter().zip(bounds).rev() {
                            let t = ((v - b[0]) / (b[1] - b[0]) * per_axis as f64).floor();
                            idx = idx * per_axis + (t.max(0.0) as usize).min(per_axis - 1);
                        }
                        *o += signs[idx];
                    }
                }
                Ok(out)
            }
        }
    }
}
