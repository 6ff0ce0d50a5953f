//! Procedural part-based shapes: cube templates, part deformation, the
//! deformation feature and its inverse, composition, rendering, the resize
//! operator, surface sampling and Chamfer distance.

mod category;
mod chamfer;
mod dataset;
pub mod feature;
mod obj;
mod part;
mod render;
mod shape;
mod template;

pub use category::{Category, SlotRange};
pub use chamfer::{chamfer, chamfer_brute_force, sample_surface};
pub use dataset::{base_params, build_dataset, layout_topology, DatasetManifest, DatasetSpec, ImageEntry, ShapeRecord, Split, MANIFEST_FILE};
pub use feature::{extract_feature, reconstruct_vertices, reconstruction_map, FeatureDiagnostics, PartFeature};
pub use obj::write_obj;
pub use part::{make_template, sample_part, DeformParams, PartMesh};
pub use render::{render, RenderSettings, VIEWS};
pub use shape::{compose_shape, resize_part, Shape, TopoAttr};
pub use template::Template;

use thiserror::Error;

pub type Vec3 = [f64; 3];

#[derive(Debug, Error)]
pub enum GeomError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("singular system: {0}")]
    Singular(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("image: {0}")]
    Image(String),
    #[error("manifest: {0}")]
    Manifest(String),
}

pub(crate) fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub(crate) fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub(crate) fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub(crate) fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

/// Axis-aligned bounds `(min, max)` of a point set.
pub fn bounds(points: &[Vec3]) -> (Vec3, Vec3) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    (lo, hi)
}

/// Bounding-box center and half extents.
pub fn center_extents(points: &[Vec3]) -> (Vec3, Vec3) {
    let (lo, hi) = bounds(points);
    (scale(add(lo, hi), 0.5), scale(sub(hi, lo), 0.5))
}
