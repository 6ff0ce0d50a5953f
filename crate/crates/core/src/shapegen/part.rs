use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::category::Category;
use super::{GeomError, Template, Vec3};

/// Smooth parametric deformation of the template cube.
///
/// Applied to rest positions in order: taper of x/z along y, bend of z along y,
/// then per-axis scale. The identity parameters leave the template unchanged.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeformParams {
    pub scale: Vec3,
    pub taper: f64,
    pub bend: f64,
}

impl DeformParams {
    pub const IDENTITY: Self = Self {
        scale: [1.0, 1.0, 1.0],
        taper: 0.0,
        bend: 0.0,
    };

    pub fn apply(&self, p: Vec3) -> Vec3 {
        let t = 1.0 + self.taper * p[1];
        let x = p[0] * t;
        let z = p[2] * t + self.bend * (p[1] * p[1] - 0.25);
        [x * self.scale[0], p[1] * self.scale[1], z * self.scale[2]]
    }
}

/// A deformed copy of a template; connectivity lives in the shared template.
#[derive(Clone, Debug)]
pub struct PartMesh {
    pub vertices: Vec<Vec3>,
    pub template: Arc<Template>,
}

impl PartMesh {
    pub fn new(vertices: Vec<Vec3>, template: Arc<Template>) -> Result<Self, GeomError> {
        if vertices.len() != template.vertex_count() {
            return Err(GeomError::InvalidInput(format!(
                "{} vertices for a template with {}",
                vertices.len(),
                template.vertex_count()
            )));
        }
        Ok(Self { vertices, template })
    }

    pub fn center_extents(&self) -> (Vec3, Vec3) {
        super::center_extents(&self.vertices)
    }

    pub fn translated(&self, offset: Vec3) -> Self {
        Self {
            vertices: self.vertices.iter().map(|&v| super::add(v, offset)).collect(),
            template: self.template.clone(),
        }
    }

    pub fn max_vertex_error(&self, other: &Self) -> f64 {
        self.vertices
            .iter()
            .zip(&other.vertices)
            .map(|(a, b)| super::norm(super::sub(*a, *b)))
            .fold(0.0, f64::max)
    }
}

/// Unit cube template with `6n²+2` vertices.
pub fn make_template(n: usize) -> Result<PartMesh, GeomError> {
    let template = Template::get(n)?;
    Ok(PartMesh {
        vertices: template.rest().to_vec(),
        template,
    })
}

/// Deformed template for a category slot, centered at the origin.
///
/// With `params = None` the deformation is drawn from the slot's range using
/// `seed`; explicit parameters are applied as given.
pub fn sample_part(
    category: Category,
    slot: usize,
    seed: u64,
    params: Option<DeformParams>,
    template: &Arc<Template>,
) -> Result<(PartMesh, DeformParams), GeomError> {
    let ranges = category.slot_ranges();
    let range = ranges
        .get(slot)
        .ok_or_else(|| GeomError::InvalidInput(format!("{} has no slot {slot}", category.name())))?;
    let params = params.unwrap_or_else(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        range.sample(&mut rng)
    });
    let vertices = template.rest().iter().map(|&p| params.apply(p)).collect();
    Ok((
        PartMesh {
            vertices,
            template: template.clone(),
        },
        params,
    ))
}

pub(crate) fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}
