//! Per-vertex deformation feature (9 scalars per vertex) and its inverse.
//!
//! Each vertex gets a 3x3 deformation `D_i` fitted by least squares to its
//! one-ring edges plus a normal pseudo-edge (the area-weighted vertex normal
//! scaled to edge length), so that planar rings are well-posed. The local fits
//! are then corrected by the minimal-norm change that makes the edge-averaged
//! gradients `½(D_i + D_j)` integrable, i.e. consistent with the vertex
//! Laplacian of the deformed mesh. With that correction the anchored Poisson
//! solve reproduces the input mesh exactly.

use std::sync::{Arc, OnceLock};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, Matrix3, Vector3};

use super::{cross, norm, scale, sub, GeomError, PartMesh, Template, Vec3};

const TIKHONOV: f64 = 1e-8;

/// `9V` scalars; entry `9i + 3a + c` is row `a`, column `c` of vertex `i`'s block.
#[derive(Clone, Debug, PartialEq)]
pub struct PartFeature {
    data: Vec<f64>,
}

impl PartFeature {
    pub fn new(data: Vec<f64>) -> Result<Self, GeomError> {
        if data.is_empty() || data.len() % 9 != 0 {
            return Err(GeomError::InvalidInput(format!("feature length {} is not 9V", data.len())));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(GeomError::InvalidInput("feature has non-finite entries".into()));
        }
        Ok(Self { data })
    }

    pub fn identity(vertex_count: usize) -> Self {
        let mut data = vec![0.0; 9 * vertex_count];
        for block in data.chunks_mut(9) {
            block[0] = 1.0;
            block[4] = 1.0;
            block[8] = 1.0;
        }
        Self { data }
    }

    pub fn vertex_count(&self) -> usize {
        self.data.len() / 9
    }

    pub fn block(&self, i: usize) -> [[f64; 3]; 3] {
        let b = &self.data[9 * i..9 * i + 9];
        [[b[0], b[1], b[2]], [b[3], b[4], b[5]], [b[6], b[7], b[8]]]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }
}

/// Per-extraction report: vertices whose local system needed regularizing and
/// the size of the integrability correction.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureDiagnostics {
    pub regularized: Vec<usize>,
    pub correction_norm: f64,
}

/// Factorizations shared by every part on one template.
#[derive(Debug)]
pub struct Solvers {
    /// Rows of the constraint operator `C`: `(vertex, coefficient)` pairs.
    rows: Vec<Vec<(usize, Vector3<f64>)>>,
    /// `C Cᵀ + 11ᵀ`, nonsingular because `C` has rank `V - 1` on a closed grid.
    gram: Cholesky<f64, Dyn>,
    /// Graph Laplacian with vertex 0 removed.
    laplacian: Cholesky<f64, Dyn>,
    map: OnceLock<Arc<Vec<f32>>>,
}

impl Solvers {
    fn build(template: &Template) -> Result<Self, GeomError> {
        let v = template.vertex_count();
        let rest = template.rest();
        let rows: Vec<Vec<(usize, Vector3<f64>)>> = template
            .neighbors()
            .iter()
            .enumerate()
            .map(|(i, ring)| {
                let mut row = Vec::with_capacity(ring.len() + 1);
                let mut own = Vector3::zeros();
                for &j in ring {
                    let e = Vector3::from(sub(rest[i], rest[j])) * 0.5;
                    own += e;
                    row.push((j, e));
                }
                row.push((i, own));
                row.sort_by_key(|&(k, _)| k);
                row
            })
            .collect();

        // column-vertex -> rows touching it, to assemble C Cᵀ sparsely
        let mut touching: Vec<Vec<(usize, Vector3<f64>)>> = vec![Vec::new(); v];
        for (i, row) in rows.iter().enumerate() {
            for &(m, c) in row {
                touching[m].push((i, c));
            }
        }
        let mut gram = DMatrix::from_element(v, v, 1.0);
        for col in &touching {
            for &(i, a) in col {
                for &(k, b) in col {
                    gram[(i, k)] += a.dot(&b);
                }
            }
        }
        let gram = Cholesky::new(gram)
            .ok_or_else(|| GeomError::Singular("integrability system of the template".into()))?;

        let mut lap = DMatrix::zeros(v - 1, v - 1);
        for (i, ring) in template.neighbors().iter().enumerate().skip(1) {
            lap[(i - 1, i - 1)] = ring.len() as f64;
            for &j in ring.iter().filter(|&&j| j > 0) {
                lap[(i - 1, j - 1)] = -1.0;
            }
        }
        let laplacian =
            Cholesky::new(lap).ok_or_else(|| GeomError::Singular("anchored template Laplacian".into()))?;
        Ok(Self {
            rows,
            gram,
            laplacian,
            map: OnceLock::new(),
        })
    }

    fn apply_c(&self, x: &[Vector3<f64>]) -> DVector<f64> {
        DVector::from_iterator(
            self.rows.len(),
            self.rows.iter().map(|row| row.iter().map(|(m, c)| c.dot(&x[*m])).sum::<f64>()),
        )
    }

    fn apply_ct(&self, lambda: &DVector<f64>) -> Vec<Vector3<f64>> {
        let mut out = vec![Vector3::zeros(); self.rows.len()];
        for (i, row) in self.rows.iter().enumerate() {
            for &(m, c) in row {
                out[m] += c * lambda[i];
            }
        }
        out
    }

    /// Positions of vertices `1..V` relative to vertex 0 for right-hand side `b`.
    fn solve_offsets(&self, b: [DVector<f64>; 3]) -> Vec<Vec3> {
        let sol = b.map(|col| self.laplacian.solve(&col.rows(1, col.len() - 1).into_owned()));
        let n = sol[0].len() + 1;
        (0..n)
            .map(|i| if i == 0 { [0.0; 3] } else { [sol[0][i - 1], sol[1][i - 1], sol[2][i - 1]] })
            .collect()
    }
}

pub(crate) fn solvers(template: &Template) -> Result<Arc<Solvers>, GeomError> {
    if let Some(s) = template.solvers.get() {
        return Ok(s.clone());
    }
    let built = Arc::new(Solvers::build(template)?);
    Ok(template.solvers.get_or_init(|| built).clone())
}

fn incident_normals(template: &Template, verts: &[Vec3]) -> Vec<Vec3> {
    let mut normals = vec![[0.0; 3]; verts.len()];
    for q in template.quads() {
        let area = scale(cross(sub(verts[q[2]], verts[q[0]]), sub(verts[q[3]], verts[q[1]])), 0.5);
        for &i in q {
            normals[i] = super::add(normals[i], area);
        }
    }
    normals
        .into_iter()
        .map(|n| {
            let len = norm(n);
            if len > 0.0 {
                scale(n, 1.0 / len.sqrt())
            } else {
                n
            }
        })
        .collect()
}

/// Deformation feature of `part` relative to its template.
pub fn extract_feature(part: &PartMesh) -> Result<(PartFeature, FeatureDiagnostics), GeomError> {
    let template = &part.template;
    if part.vertices.iter().flatten().any(|x| !x.is_finite()) {
        return Err(GeomError::InvalidInput("part has non-finite vertices".into()));
    }
    let rest = template.rest();
    let verts = &part.vertices;
    let rest_normals = incident_normals(template, rest);
    let normals = incident_normals(template, verts);
    let mut diagnostics = FeatureDiagnostics::default();

    // rows[a][i] = row a of D_i
    let mut rows = [vec![Vector3::zeros(); verts.len()], vec![Vector3::zeros(); verts.len()], vec![
        Vector3::zeros();
        verts.len()
    ]];
    for (i, ring) in template.neighbors().iter().enumerate() {
        let mut a = Matrix3::zeros();
        let mut b = Matrix3::zeros();
        let pairs = ring
            .iter()
            .map(|&j| (sub(rest[i], rest[j]), sub(verts[i], verts[j])))
            .chain(std::iter::once((rest_normals[i], normals[i])));
        for (hat, e) in pairs {
            let hat = Vector3::from(hat);
            a += hat * hat.transpose();
            b += Vector3::from(e) * hat.transpose();
        }
        let inv = match a.try_inverse().filter(|_| a.determinant().abs() > 1e-12 * a.norm().powi(3)) {
            Some(inv) => inv,
            None => {
                diagnostics.regularized.push(i);
                (a + Matrix3::identity() * TIKHONOV)
                    .try_inverse()
                    .ok_or_else(|| GeomError::Singular(format!("one-ring of vertex {i}")))?
            }
        };
        let d = b * inv;
        for (r, row) in rows.iter_mut().enumerate() {
            row[i] = d.row(r).transpose();
        }
    }

    let solvers = solvers(template)?;
    let laplacian = laplacian_of(template, verts);
    let mut correction = 0.0;
    for (r, row) in rows.iter_mut().enumerate() {
        let residual = &laplacian[r] - solvers.apply_c(row);
        let lambda = solvers.gram.solve(&residual);
        for (x, dx) in row.iter_mut().zip(solvers.apply_ct(&lambda)) {
            correction += dx.norm_squared();
            *x += dx;
        }
    }
    diagnostics.correction_norm = correction.sqrt();

    let mut data = vec![0.0; 9 * verts.len()];
    for i in 0..verts.len() {
        for (a, row) in rows.iter().enumerate() {
            for c in 0..3 {
                data[9 * i + 3 * a + c] = row[i][c];
            }
        }
    }
    Ok((PartFeature::new(data)?, diagnostics))
}

fn laplacian_of(template: &Template, verts: &[Vec3]) -> [DVector<f64>; 3] {
    let mut out = [DVector::zeros(verts.len()), DVector::zeros(verts.len()), DVector::zeros(verts.len())];
    for (i, ring) in template.neighbors().iter().enumerate() {
        for &j in ring {
            for (a, col) in out.iter_mut().enumerate() {
                col[i] += verts[i][a] - verts[j][a];
            }
        }
    }
    out
}

/// Anchored least-squares reconstruction: vertex 0 is pinned at `anchor`.
pub fn reconstruct_vertices(
    feature: &PartFeature,
    template: &Arc<Template>,
    anchor: Vec3,
) -> Result<PartMesh, GeomError> {
    if feature.vertex_count() != template.vertex_count() {
        return Err(GeomError::InvalidInput(format!(
            "feature has {} vertices, template {}",
            feature.vertex_count(),
            template.vertex_count()
        )));
    }
    let solvers = solvers(template)?;
    let v = template.vertex_count();
    let d = feature.as_slice();
    let b = [0, 1, 2].map(|a| {
        let row: Vec<Vector3<f64>> = (0..v)
            .map(|i| Vector3::new(d[9 * i + 3 * a], d[9 * i + 3 * a + 1], d[9 * i + 3 * a + 2]))
            .collect();
        solvers.apply_c(&row)
    });
    let vertices = solvers
        .solve_offsets(b)
        .into_iter()
        .map(|p| super::add(p, anchor))
        .collect();
    PartMesh::new(vertices, template.clone())
}

/// The linear part of [`reconstruct_vertices`] as a dense `[9V, 3V]` matrix
/// (row-major, `f32`): coordinates relative to the anchor are `f · K`, with
/// coordinate index `3i + a`. Built once per template.
pub fn reconstruction_map(template: &Template) -> Result<Arc<Vec<f32>>, GeomError> {
    let solvers = solvers(template)?;
    if let Some(map) = solvers.map.get() {
        return Ok(map.clone());
    }
    let v = template.vertex_count();
    let mut k = vec![0f32; 9 * v * 3 * v];
    // column of C for unknown (vertex m, component c) in output row a
    let mut touching: Vec<Vec<(usize, Vector3<f64>)>> = vec![Vec::new(); v];
    for (i, row) in solvers.rows.iter().enumerate() {
        for &(m, coeff) in row {
            touching[m].push((i, coeff));
        }
    }
    for (m, col) in touching.iter().enumerate() {
        for c in 0..3 {
            let mut rhs = DVector::zeros(v - 1);
            for &(i, coeff) in col {
                if i > 0 {
                    rhs[i - 1] += coeff[c];
                }
            }
            let x = solvers.laplacian.solve(&rhs);
            for a in 0..3 {
                let out = &mut k[(9 * m + 3 * a + c) * 3 * v..][..3 * v];
                for i in 1..v {
                    out[3 * i + a] = x[i - 1] as f32;
                }
            }
        }
    }
    let map = Arc::new(k);
    Ok(solvers.map.get_or_init(|| map).clone())
}
