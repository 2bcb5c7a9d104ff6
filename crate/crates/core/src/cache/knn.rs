use crate::math::Vec3;

/// Uniform hash grid for exact k-nearest-neighbor queries on a static point set.
pub struct Grid<'a> {
    points: &'a [Vec3],
    min: Vec3,
    cell: f64,
    res: [i64; 3],
    starts: Vec<usize>,
    items: Vec<usize>,
}

impl<'a> Grid<'a> {
    pub fn new(points: &'a [Vec3]) -> Self {
        let mut min = Vec3::splat(f64::INFINITY);
        let mut max = Vec3::splat(f64::NEG_INFINITY);
        for &p in points {
            min = min.min_elem(p);
            max = max.max_elem(p);
        }
        let extent = (max - min).max_elem(Vec3::splat(1e-12));
        // About two points per cell on average.
        let volume = extent.x * extent.y * extent.z;
        let mut cell = (2.0 * volume / points.len().max(1) as f64).cbrt();
        let longest = extent.max_component();
        if !(cell > 0.0) || cell < longest / 256.0 {
            cell = longest / 256.0;
        }
        let res = [0, 1, 2].map(|a| ((extent[a] / cell).floor() as i64 + 1).max(1));
        let mut grid = Self { points, min, cell, res, starts: Vec::new(), items: Vec::new() };
        let ncells = (res[0] * res[1] * res[2]) as usize;
        let keys: Vec<usize> = points.iter().map(|&p| grid.flat(grid.coord(p))).collect();
        let mut counts = vec![0usize; ncells + 1];
        for &k in &keys {
            counts[k + 1] += 1;
        }
        for i in 0..ncells {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut items = vec![0; points.len()];
        for (i, &k) in keys.iter().enumerate() {
            items[fill[k]] = i;
            fill[k] += 1;
        }
        grid.starts = counts;
        grid.items = items;
        grid
    }

    fn coord(&self, p: Vec3) -> [i64; 3] {
        [0, 1, 2].map(|a| (((p[a] - self.min[a]) / self.cell).floor() as i64).clamp(0, self.res[a] - 1))
    }

    fn flat(&self, c: [i64; 3]) -> usize {
        ((c[2] * self.res[1] + c[1]) * self.res[0] + c[0]) as usize
    }

    /// Distances to the `k` nearest other points of `points[i]`, ascending.
    pub fn nearest(&self, i: usize, k: usize) -> Vec<f64> {
        let p = self.points[i];
        let c = self.coord(p);
        let mut best: Vec<f64> = Vec::with_capacity(k + 1);
        let max_ring = self.res.iter().copied().max().unwrap();
        for ring in 0..=max_ring {
            for dz in -ring..=ring {
                for dy in -ring..=ring {
                    for dx in -ring..=ring {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                            continue;
                        }
                        let q = [c[0] + dx, c[1] + dy, c[2] + dz];
                        if (0..3).any(|a| q[a] < 0 || q[a] >= self.res[a]) {
                            continue;
                        }
                        let f = self.flat(q);
                        for &j in &self.items[self.starts[f]..self.starts[f + 1]] {
                            if j == i {
                                continue;
                            }
                            let d = (self.points[j] - p).length();
                            if best.len() < k || d < best[best.len() - 1] {
                                let pos = best.partition_point(|&b| b <= d);
                                best.insert(pos, d);
                                best.truncate(k);
                            }
                        }
                    }
                }
            }
            // Every unvisited point is at least `ring * cell` away.
            if best.len() == k && best[k - 1] <= ring as f64 * self.cell {
                break;
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn matches_brute_force() {
        let mut rng = Rng::new(4);
        let pts: Vec<Vec3> =
            (0..500).map(|_| Vec3::new(rng.next_f64(), rng.next_f64() * 0.3, rng.next_f64() * 2.0)).collect();
        let grid = Grid::new(&pts);
        for i in (0..pts.len()).step_by(7) {
            let mut brute: Vec<f64> =
                (0..pts.len()).filter(|&j| j != i).map(|j| (pts[j] - pts[i]).length()).collect();
            brute.sort_by(f64::total_cmp);
            assert_eq!(grid.nearest(i, 3), brute[..3].to_vec());
        }
    }
}
