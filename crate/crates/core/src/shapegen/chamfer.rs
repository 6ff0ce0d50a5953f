use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{add, cross, norm, scale, sub, GeomError, Vec3};

/// Area-weighted uniform samples on a triangle soup.
pub fn sample_surface(triangles: &[[Vec3; 3]], n: usize, seed: u64) -> Result<Vec<Vec3>, GeomError> {
    if triangles.is_empty() {
        return Err(GeomError::InvalidInput("cannot sample an empty mesh".into()));
    }
    let mut cumulative = Vec::with_capacity(triangles.len());
    let mut total = 0.0;
    for t in triangles {
        total += 0.5 * norm(cross(sub(t[1], t[0]), sub(t[2], t[0])));
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(GeomError::InvalidInput("mesh has zero area".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            let pick = rng.random::<f64>() * total;
            let i = cumulative.partition_point(|&c| c <= pick).min(triangles.len() - 1);
            let [a, b, c] = triangles[i];
            let (r1, r2): (f64, f64) = (rng.random(), rng.random());
            let s = r1.sqrt();
            add(add(scale(a, 1.0 - s), scale(b, s * (1.0 - r2))), scale(c, s * r2))
        })
        .collect())
}

fn sq_dist(a: Vec3, b: Vec3) -> f64 {
    let d = sub(a, b);
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

fn check(a: &[Vec3], b: &[Vec3]) -> Result<(), GeomError> {
    if a.is_empty() || b.is_empty() {
        return Err(GeomError::InvalidInput("chamfer distance of an empty point set".into()));
    }
    Ok(())
}

/// Reference implementation, `O(|A||B|)`.
pub fn chamfer_brute_force(a: &[Vec3], b: &[Vec3]) -> Result<f64, GeomError> {
    check(a, b)?;
    let one_way = |from: &[Vec3], to: &[Vec3]| {
        from.iter()
            .map(|&p| to.iter().map(|&q| sq_dist(p, q)).fold(f64::INFINITY, f64::min))
            .sum::<f64>()
            / from.len() as f64
    };
    Ok(one_way(a, b) + one_way(b, a))
}

/// Bidirectional mean squared nearest-neighbor distance.
///
/// Uses a uniform grid; each nearest distance is the same minimum over the same
/// per-pair expressions as the brute force, so results agree bit for bit.
pub fn chamfer(a: &[Vec3], b: &[Vec3]) -> Result<f64, GeomError> {
    check(a, b)?;
    let ab = Grid::new(b).nearest_sum(a);
    let ba = Grid::new(a).nearest_sum(b);
    Ok(ab / a.len() as f64 + ba / b.len() as f64)
}

struct Grid<'a> {
    points: &'a [Vec3],
    origin: Vec3,
    cell: f64,
    dims: [i64; 3],
    cells: HashMap<[i64; 3], Vec<usize>>,
}

impl<'a> Grid<'a> {
    fn new(points: &'a [Vec3]) -> Self {
        let (lo, hi) = super::bounds(points);
        let span = sub(hi, lo);
        let longest = span.iter().cloned().fold(0.0, f64::max);
        let cell = if longest > 0.0 {
            (longest / (points.len() as f64).cbrt()).max(longest * 1e-6)
        } else {
            1.0
        };
        let dims = span.map(|s| (s / cell).floor() as i64 + 1);
        let mut grid = Self {
            points,
            origin: lo,
            cell,
            dims,
            cells: HashMap::new(),
        };
        for (i, &p) in points.iter().enumerate() {
            let key = grid.key(p);
            grid.cells.entry(key).or_default().push(i);
        }
        grid
    }

    fn key(&self, p: Vec3) -> [i64; 3] {
        [0, 1, 2].map(|a| ((p[a] - self.origin[a]) / self.cell).floor() as i64)
    }

    fn nearest(&self, p: Vec3) -> f64 {
        let q = self.key(p);
        let gap = |a: usize| (-q[a]).max(q[a] - self.dims[a] + 1).max(0);
        let reach = |a: usize| q[a].abs().max((q[a] - self.dims[a] + 1).abs());
        // rings closer than `first` or beyond `last` contain no cells
        let first = (0..3).map(gap).max().unwrap_or(0);
        let last = (0..3).map(reach).max().unwrap_or(0);
        let span = |a: usize, r: i64| (q[a] - r).max(0)..=(q[a] + r).min(self.dims[a] - 1);
        let mut best = f64::INFINITY;
        for r in first..=last {
            for x in span(0, r) {
                for y in span(1, r) {
                    for z in span(2, r) {
                        let ring = (x - q[0]).abs().max((y - q[1]).abs()).max((z - q[2]).abs());
                        if ring != r {
                            continue;
                        }
                        if let Some(ids) = self.cells.get(&[x, y, z]) {
                            for &i in ids {
                                best = best.min(sq_dist(p, self.points[i]));
                            }
                        }
                    }
                }
            }
            // anything not yet visited lies at least r cells away
            let bound = r as f64 * self.cell;
            if best <= bound * bound {
                break;
            }
        }
        best
    }

    fn nearest_sum(&self, queries: &[Vec3]) -> f64 {
        queries.iter().map(|&p| self.nearest(p)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_examples() {
        let a = [[0.0, 0.0, 0.0]];
        let b = [[1.0, 0.0, 0.0]];
        assert_eq!(chamfer(&a, &b).unwrap(), 2.0);
        assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
        assert!(chamfer(&a, &[]).is_err());
    }

    #[test]
    fn unit_square_samples_center_on_square() {
        let (p0, p1, p2, p3) = ([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]);
        let tris = [[p0, p1, p2], [p0, p2, p3]];
        let pts = sample_surface(&tris, 100_000, 4).unwrap();
        let mean = pts.iter().fold([0.0; 3], |acc, &p| add(acc, p)).map(|c| c / pts.len() as f64);
        assert!((mean[0] - 0.5).abs() < 1e-2 && (mean[1] - 0.5).abs() < 1e-2 && mean[2] == 0.0);
        assert_eq!(sample_surface(&tris, 50, 9).unwrap(), sample_surface(&tris, 50, 9).unwrap());
        assert!(sample_surface(&tris, 0, 9).unwrap().is_empty());
        assert!(sample_surface(&[], 10, 9).is_err());
    }
}
