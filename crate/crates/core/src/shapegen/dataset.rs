use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::render::VIEWS;
use super::{compose_shape, render, sample_part, write_obj, Category, DeformParams, GeomError, PartMesh, RenderSettings, Shape, Template, TopoAttr, Vec3};
use crate::imaging::GrayImage;
use crate::seed;

pub const MANIFEST_FILE: &str = "manifest.json";
const TEST_FRACTION: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub yaw: usize,
    pub path: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeRecord {
    pub id: usize,
    /// Base shape each part slot was taken from.
    pub sources: Vec<usize>,
    pub params: Vec<DeformParams>,
    pub topo: TopoAttr,
    pub split: Split,
    pub mesh: String,
    pub images: Vec<ImageEntry>,
}

impl ShapeRecord {
    /// Unplaced (origin-centered) part meshes.
    pub fn parts(&self, category: Category, template: &Arc<Template>) -> Result<Vec<PartMesh>, GeomError> {
        self.params
            .iter()
            .enumerate()
            .map(|(slot, p)| sample_part(category, slot, 0, Some(*p), template).map(|(m, _)| m))
            .collect()
    }

    pub fn shape(&self, category: Category, template: &Arc<Template>) -> Result<Shape, GeomError> {
        compose_shape(&self.parts(category, template)?, &self.topo)
    }
}

/// Knobs of a dataset build.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub category: Category,
    pub grid: usize,
    pub base_shapes: usize,
    pub interchanged: usize,
    pub render: RenderSettings,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub category: Category,
    pub n_c: usize,
    #[serde(rename = "V")]
    pub vertex_count: usize,
    #[serde(rename = "N")]
    pub base_shapes: usize,
    #[serde(rename = "M")]
    pub interchanged: usize,
    pub grid: usize,
    pub seed: u64,
    pub render: RenderSettings,
    pub records: Vec<ShapeRecord>,
}

impl DatasetManifest {
    pub fn load(dir: &Path) -> Result<Self, GeomError> {
        let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
        serde_json::from_str(&text).map_err(|e| GeomError::Manifest(e.to_string()))
    }

    pub fn save(&self, dir: &Path) -> Result<(), GeomError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| GeomError::Manifest(e.to_string()))?;
        fs::write(dir.join(MANIFEST_FILE), text)?;
        Ok(())
    }

    pub fn template(&self) -> Result<Arc<Template>, GeomError> {
        Template::get(self.grid)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ShapeRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn record(&self, id: usize) -> Option<&ShapeRecord> {
        self.records.get(id).filter(|r| r.id == id)
    }

    /// Id of the shape assembled from the given per-slot sources, if present.
    pub fn find(&self, sources: &[usize]) -> Option<usize> {
        self.records.iter().find(|r| r.sources == sources).map(|r| r.id)
    }

    /// Every listed mesh and image exists, images decode at the configured size,
    /// and the counts match `N^M` and `12·N^M`.
    pub fn verify(&self, dir: &Path) -> Result<(), GeomError> {
        let expected = self.base_shapes.pow(self.interchanged as u32);
        if self.records.len() != expected {
            return Err(GeomError::Manifest(format!("{} records, expected {expected}", self.records.len())));
        }
        for r in &self.records {
            if !dir.join(&r.mesh).is_file() {
                return Err(GeomError::Manifest(format!("missing mesh {}", r.mesh)));
            }
            if r.images.len() != VIEWS || r.images.iter().enumerate().any(|(k, e)| e.yaw != k) {
                return Err(GeomError::Manifest(format!("shape {} does not list views 0..12", r.id)));
            }
            for e in &r.images {
                let img = GrayImage::load(&dir.join(&e.path)).map_err(|err| GeomError::Image(format!("{}: {err}", e.path)))?;
                if img.width() != self.render.size || img.height() != self.render.size {
                    return Err(GeomError::Image(format!("{} has the wrong size", e.path)));
                }
            }
        }
        Ok(())
    }
}

/// Deformation parameters of base shape `base`, slot `slot`.
pub fn base_params(spec: &DatasetSpec, base: usize, slot: usize) -> DeformParams {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed::derive(spec.seed, &[seed::tag("base"), base as u64, slot as u64]));
    spec.category.slot_ranges()[slot].sample(&mut rng)
}

/// Topology that stacks origin-centered parts according to the category layout.
pub fn layout_topology(category: Category, parts: &[PartMesh]) -> TopoAttr {
    let half: Vec<Vec3> = parts.iter().map(|p| p.center_extents().1).collect();
    let centers = category.layout(&half);
    TopoAttr::from_boxes(&centers.into_iter().zip(half).map(Some).collect::<Vec<_>>())
}

/// Shapes formed by interchanging the first `M` parts of `N` base shapes; the
/// remaining slots come from base shape 0. Writes PNG views, OBJ meshes and
/// the manifest into `out`.
pub fn build_dataset(spec: &DatasetSpec, out: &Path) -> Result<DatasetManifest, GeomError> {
    let n_c = spec.category.part_count();
    if spec.base_shapes < 2 {
        return Err(GeomError::InvalidInput("need at least 2 base shapes".into()));
    }
    if spec.interchanged == 0 || spec.interchanged > n_c {
        return Err(GeomError::InvalidInput(format!(
            "cannot interchange {} of {n_c} parts",
            spec.interchanged
        )));
    }
    let template = Template::get(spec.grid)?;
    fs::create_dir_all(out.join("images"))?;
    fs::create_dir_all(out.join("meshes"))?;

    let count = spec.base_shapes.pow(spec.interchanged as u32);
    let test_count = (count as f64 * TEST_FRACTION).round() as usize;
    let mut order: Vec<usize> = (0..count).collect();
    order.sort_by_key(|&id| (seed::derive(spec.seed, &[seed::tag("split"), id as u64]), id));
    let mut split = vec![Split::Train; count];
    for &id in &order[..test_count] {
        split[id] = Split::Test;
    }

    let mut records = Vec::with_capacity(count);
    for id in 0..count {
        let mut rest = id;
        let sources: Vec<usize> = (0..n_c)
            .map(|slot| {
                if slot < spec.interchanged {
                    let s = rest % spec.base_shapes;
                    rest /= spec.base_shapes;
                    s
                } else {
                    0
                }
            })
            .collect();
        let params: Vec<DeformParams> = sources.iter().enumerate().map(|(slot, &b)| base_params(spec, b, slot)).collect();
        let parts: Vec<PartMesh> = params
            .iter()
            .enumerate()
            .map(|(slot, p)| sample_part(spec.category, slot, 0, Some(*p), &template).map(|(m, _)| m))
            .collect::<Result<_, _>>()?;
        let topo = layout_topology(spec.category, &parts);
        let shape = compose_shape(&parts, &topo)?;

        let mesh = format!("meshes/{id:05}.obj");
        fs::write(out.join(&mesh), write_obj(&shape, spec.category.part_names()))?;
        let mut images = Vec::with_capacity(VIEWS);
        for yaw in 0..VIEWS {
            let path = format!("images/{id:05}_{yaw:02}.png");
            render(&shape, yaw, &spec.render)?
                .save(&out.join(&path))
                .map_err(|e| GeomError::Image(e.to_string()))?;
            images.push(ImageEntry { yaw, path });
        }
        records.push(ShapeRecord {
            id,
            sources,
            params,
            topo,
            split: split[id],
            mesh,
            images,
        });
    }
    let manifest = DatasetManifest {
        category: spec.category,
        n_c,
        vertex_count: template.vertex_count(),
        base_shapes: spec.base_shapes,
        interchanged: spec.interchanged,
        grid: spec.grid,
        seed: spec.seed,
        render: spec.render,
        records,
    };
    manifest.save(out)?;
    Ok(manifest)
}
