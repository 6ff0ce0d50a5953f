use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::AugmentConfig;
use super::PipelineError;
use crate::imaging::GrayImage;
use crate::mapping::{PairSet, ShapeAttr};
use crate::numcore::Tensor;
use crate::partvae::PartVae;
use crate::shapegen::{extract_feature, sample_part, Category, DatasetManifest, Split, Template};

/// Every dataset render, ordered by record then yaw.
#[derive(Clone, Debug)]
pub struct DatasetImages {
    /// `[N, H, W]`
    pub images: Tensor<f32>,
    pub shape_ids: Vec<usize>,
    pub views: Vec<usize>,
}

impl DatasetImages {
    pub fn load(manifest: &DatasetManifest, dir: &Path) -> Result<Self, PipelineError> {
        let size = manifest.render.size;
        let (mut data, mut shape_ids, mut views) = (Vec::new(), Vec::new(), Vec::new());
        for record in &manifest.records {
            for entry in &record.images {
                let img = GrayImage::load(&dir.join(&entry.path))?;
                if img.width() != size || img.height() != size {
                    return Err(PipelineError::Config(format!("{} is not {size}x{size}", entry.path)));
                }
                data.extend(img.into_data());
                shape_ids.push(record.id);
                views.push(entry.yaw);
            }
        }
        Ok(Self {
            images: Tensor::new(&[shape_ids.len(), size, size], data)?,
            shape_ids,
            views,
        })
    }

    pub fn len(&self) -> usize {
        self.shape_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shape_ids.is_empty()
    }

    /// Row of `(shape, view)`.
    pub fn index(&self, shape: usize, view: usize) -> Option<usize> {
        (0..self.len()).find(|&i| self.shape_ids[i] == shape && self.views[i] == view)
    }

    pub fn rows(&self, manifest: &DatasetManifest, split: Split) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| manifest.record(self.shape_ids[i]).map(|r| r.split) == Some(split))
            .collect()
    }

    pub fn image(&self, row: usize) -> GrayImage {
        let s = self.images.shape()[1];
        GrayImage::new(s, s, self.images.row(row).to_vec()).expect("stored image size")
    }
}

/// Deformation features of each record's parts: `[record][part] -> 9V`.
pub fn record_features(manifest: &DatasetManifest, template: &Arc<Template>) -> Result<Vec<Vec<Vec<f32>>>, PipelineError> {
    manifest
        .records
        .iter()
        .map(|r| {
            r.parts(manifest.category, template)?
                .iter()
                .map(|p| Ok(extract_feature(p)?.0.as_slice().iter().map(|&v| v as f32).collect()))
                .collect()
        })
        .collect()
}

/// Parts of one slot drawn from its widened ranges, with extra room above the
/// scale ranges.
pub fn augmented_features(
    category: Category,
    slot: usize,
    template: &Arc<Template>,
    count: usize,
    augment: &AugmentConfig,
    seed: u64,
) -> Result<Vec<Vec<f32>>, PipelineError> {
    let mut range = category.slot_ranges()[slot].widened(augment.widen);
    for s in &mut range.scale {
        s.0 = s.0.max(0.02);
        s.1 *= augment.scale_headroom;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let params = range.sample(&mut rng);
            let (mesh, _) = sample_part(category, slot, 0, Some(params), template)?;
            Ok(extract_feature(&mesh)?.0.as_slice().iter().map(|&v| v as f32).collect())
        })
        .collect()
}

/// Distinct rows of `features`, in first-seen order.
pub fn unique_rows(features: &[Vec<f32>]) -> Vec<Vec<f32>> {
    let mut out: Vec<Vec<f32>> = Vec::new();
    for f in features {
        if !out.iter().any(|g| g == f) {
            out.push(f.clone());
        }
    }
    out
}

pub fn feature_tensor(rows: &[Vec<f32>]) -> Result<Tensor<f32>, PipelineError> {
    Ok(Tensor::from_rows(rows)?)
}

/// `S = (Enc_i(f_i))_i ⊕ T` of every record.
pub fn record_attrs(
    manifest: &DatasetManifest,
    features: &[Vec<Vec<f32>>],
    vaes: &[PartVae],
) -> Result<Vec<ShapeAttr>, PipelineError> {
    let mut per_part = Vec::new();
    for (k, vae) in vaes.iter().enumerate() {
        let rows: Vec<Vec<f32>> = features.iter().map(|f| f[k].clone()).collect();
        per_part.push(vae.encode_batch(&Tensor::from_rows(&rows)?)?);
    }
    Ok(manifest
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| ShapeAttr {
            geom: per_part.iter().flat_map(|p| p.row(i).to_vec()).collect(),
            topo: r.topo.as_slice().iter().map(|&v| v as f32).collect(),
        })
        .collect())
}

/// Pairs `(w, S, v, I)` for the given image rows.
pub fn pair_set(
    manifest: &DatasetManifest,
    images: &DatasetImages,
    latents: &Tensor<f32>,
    attrs: &[ShapeAttr],
    rows: &[usize],
) -> Result<PairSet, PipelineError> {
    let attr_rows: Vec<Vec<f32>> = rows
        .iter()
        .map(|&i| {
            let pos = manifest.records.iter().position(|r| r.id == images.shape_ids[i]).expect("image belongs to a record");
            attrs[pos].pack()
        })
        .collect();
    Ok(PairSet {
        latents: latents.select_rows(rows),
        attrs: Tensor::from_rows(&attr_rows)?,
        views: rows.iter().map(|&i| images.views[i]).collect(),
        images: images.images.select_rows(rows),
        shape_ids: rows.iter().map(|&i| images.shape_ids[i]).collect(),
    })
}
