//! Bucketed point store for fixed-radius neighbour queries in small dimension.

use std::collections::HashMap;

use crate::measure::WeightedGrid;

pub(crate) struct SpatialHash {
    dim: usize,
    size: f64,
    buckets: HashMap<Vec<i64>, Vec<(u32, Vec<f64>)>>,
}

impl SpatialHash {
    pub fn new(dim: usize, size: f64) -> Self {
        SpatialHash {
            dim,
            size,
            buckets: HashMap::new(),
        }
    }

    fn key(&self, x: &[f64]) -> Vec<i64> {
        x.iter().map(|v| (v / self.size).floor() as i64).collect()
    }

    pub fn insert(&mut self, id: u32, x: &[f64]) {
        let k = self.key(x);
        self.buckets.entry(k).or_default().push((id, x.to_vec()));
    }

    /// Inserts every orbit image of grid point `point` under id `id`.
    pub fn insert_orbit(&mut self, grid: &WeightedGrid, id: u32, point: usize) {
        for g in 0..grid.group.order() {
            self.insert(id, grid.image(g, point));
        }
    }

    /// Calls `visit(id, squared distance)` for stored points within `radius` of `x`.
    pub fn for_each_within(&self, x: &[f64], radius: f64, mut visit: impl FnMut(u32, f64)) {
        let reach = (radius / self.size).ceil() as i64;
        let base = self.key(x);
        let r2 = radius * radius;
        let span = (2 * reach + 1) as usize;
        let total = span.pow(self.dim as u32);
        let mut k = vec![0i64; self.dim];
        for lin in 0..total {
            let mut rem = lin;
            for a in 0..self.dim {
                k[a] = base[a] + (rem % span) as i64 - reach;
                rem /= span;
            }
            if let Some(items) = self.buckets.get(&k) {
                for (id, p) in items {
                    let d2: f64 = p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
                    if d2 < r2 {
                        visit(*id, d2);
                    }
                }
            }
        }
    }
}
