//! Quad-grid cube templates shared by every part of a category.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use super::{GeomError, Vec3};

/// Connectivity and rest positions of an `n x n` per-face cube grid.
///
/// Vertices are the lattice points of `{0..=n}^3` lying on the cube surface in
/// lexicographic `(i, j, k)` order, mapped to `[-0.5, 0.5]^3`; vertex 0 is the
/// `(-0.5, -0.5, -0.5)` corner.
#[derive(Debug)]
pub struct Template {
    n: usize,
    rest: Vec<Vec3>,
    quads: Vec<[usize; 4]>,
    neighbors: Vec<Vec<usize>>,
    edges: Vec<(usize, usize)>,
    pub(crate) solvers: OnceLock<Arc<super::feature::Solvers>>,
}

impl Template {
    pub fn vertex_count_for(n: usize) -> usize {
        6 * n * n + 2
    }

    /// Shared template for grid resolution `n`, built once per process.
    pub fn get(n: usize) -> Result<Arc<Self>, GeomError> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Template>>>> = OnceLock::new();
        if n == 0 {
            return Err(GeomError::InvalidInput("template grid resolution must be >= 1".into()));
        }
        let cache = CACHE.get_or_init(Default::default);
        let mut guard = cache.lock().expect("template cache poisoned");
        Ok(guard.entry(n).or_insert_with(|| Arc::new(Self::build(n))).clone())
    }

    fn build(n: usize) -> Self {
        let side = n + 1;
        let on_surface = |i: usize, j: usize, k: usize| [i, j, k].iter().any(|&c| c == 0 || c == n);
        let mut index = vec![usize::MAX; side * side * side];
        let mut rest = Vec::new();
        for i in 0..side {
            for j in 0..side {
                for k in 0..side {
                    if on_surface(i, j, k) {
                        index[(i * side + j) * side + k] = rest.len();
                        rest.push([i as f64 / n as f64 - 0.5, j as f64 / n as f64 - 0.5, k as f64 / n as f64 - 0.5]);
                    }
                }
            }
        }
        let at = |p: [usize; 3]| index[(p[0] * side + p[1]) * side + p[2]];

        let mut quads = Vec::with_capacity(6 * n * n);
        for axis in 0..3 {
            // (axis, b, c) cyclic so that e_b x e_c = +e_axis
            let (b, c) = ((axis + 1) % 3, (axis + 2) % 3);
            for level in [0, n] {
                for u in 0..n {
                    for v in 0..n {
                        let corner = |du: usize, dv: usize| {
                            let mut p = [0usize; 3];
                            p[axis] = level;
                            p[b] = u + du;
                            p[c] = v + dv;
                            at(p)
                        };
                        let q = [corner(0, 0), corner(1, 0), corner(1, 1), corner(0, 1)];
                        quads.push(if level == n { q } else { [q[0], q[3], q[2], q[1]] });
                    }
                }
            }
        }

        let mut neighbors = vec![Vec::new(); rest.len()];
        for q in &quads {
            for e in 0..4 {
                let (a, b) = (q[e], q[(e + 1) % 4]);
                neighbors[a].push(b);
                neighbors[b].push(a);
            }
        }
        for ring in &mut neighbors {
            ring.sort_unstable();
            ring.dedup();
        }
        let edges = neighbors
            .iter()
            .enumerate()
            .flat_map(|(i, ring)| ring.iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
            .collect();

        Self {
            n,
            rest,
            quads,
            neighbors,
            edges,
            solvers: OnceLock::new(),
        }
    }

    pub fn grid(&self) -> usize {
        self.n
    }

    pub fn vertex_count(&self) -> usize {
        self.rest.len()
    }

    pub fn rest(&self) -> &[Vec3] {
        &self.rest
    }

    /// Outward-oriented quads.
    pub fn quads(&self) -> &[[usize; 4]] {
        &self.quads
    }

    /// Sorted one-ring of every vertex.
    pub fn neighbors(&self) -> &[Vec<usize>] {
        &self.neighbors
    }

    /// Undirected edges `(i, j)` with `i < j`.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Two triangles per quad, same orientation.
    pub fn triangles(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        self.quads
            .iter()
            .flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]])
    }
}
