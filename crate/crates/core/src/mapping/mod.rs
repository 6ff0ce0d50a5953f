//! The bridge between image latents and shape attributes: forward map
//! `M_F: w -> S`, backward map `M_B: (S, v) -> w`, view predictor `M_V`, their
//! training curriculum, and per-input finetuning.

mod attr;
mod eval;
pub mod losses;
mod specific;
mod stages;
mod view;

pub use attr::{ShapeAttr, ViewVector, VIEW_COUNT};
pub use eval::{image_errors, roundtrip_errors, shape_errors, GroundTruthSamples, CHAMFER_SAMPLES};
pub use specific::{shape_specific_finetune, SpecificConfig, SpecificResult};
pub use stages::{
    joint_finetune, latent_deviation, train_backward, train_forward_stage1, train_forward_stage2, train_view,
    JointReport, StageReport,
};
pub use view::ViewPredictor;

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::generator::GeneratorModel;
use crate::numcore::{Checkpoint, Mlp, NumError, Result, Tensor};
use crate::partvae::PartVae;
use crate::seed;
use crate::shapegen::{compose_shape, reconstruct_vertices, GeomError, PartMesh, Shape, Template};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MappingConfig {
    pub width: usize,
    pub depth: usize,
    pub batch: usize,
    pub lr: f64,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub backward_epochs: usize,
    pub joint_epochs: usize,
    pub view_epochs: usize,
    /// Weight of `‖w'‖²` in backward training and joint finetuning.
    pub lambda_w: f64,
    /// Weight of the latent-deviation term in joint finetuning.
    pub lambda_p: f64,
}

impl Default for MappingConfig {
    fn default() -> Self {
        Self {
            width: 128,
            depth: 8,
            batch: 64,
            lr: 1e-3,
            stage1_epochs: 60,
            stage2_epochs: 30,
            backward_epochs: 30,
            joint_epochs: 10,
            view_epochs: 40,
            lambda_w: 0.01,
            lambda_p: 0.1,
        }
    }
}

impl MappingConfig {
    fn dims(&self, input: usize, output: usize) -> Vec<usize> {
        let mut dims = vec![input];
        dims.extend(std::iter::repeat_n(self.width, self.depth - 1));
        dims.push(output);
        dims
    }
}

/// Frozen pieces every mapping stage reads: generator, part decoders and the
/// linear feature-to-coordinates map.
pub struct Bridge<'a> {
    pub generator: &'a GeneratorModel,
    pub vaes: &'a [PartVae],
    pub template: Arc<Template>,
    /// `[9V, 3V]`
    pub kt: Tensor<f32>,
}

impl<'a> Bridge<'a> {
    pub fn new(generator: &'a GeneratorModel, vaes: &'a [PartVae], template: Arc<Template>) -> Result<Self> {
        let v = template.vertex_count();
        if vaes.is_empty() || vaes.iter().any(|p| p.feature_len() != 9 * v || p.z() != vaes[0].z()) {
            return Err(NumError::InvalidArgument {
                op: "bridge",
                msg: "part decoders disagree with the template or each other".into(),
            });
        }
        let map = crate::shapegen::reconstruction_map(&template).map_err(geom)?;
        Ok(Self {
            generator,
            vaes,
            kt: Tensor::new(&[9 * v, 3 * v], map.to_vec())?,
            template,
        })
    }

    pub fn n_c(&self) -> usize {
        self.vaes.len()
    }

    pub fn z(&self) -> usize {
        self.vaes[0].z()
    }

    pub fn d(&self) -> usize {
        self.generator.latent_dim()
    }

    pub fn attr_dim(&self) -> usize {
        ShapeAttr::dim(self.n_c(), self.z())
    }

    /// Decoded part meshes (anchored at the origin) for an attribute.
    pub fn part_meshes(&self, attr: &ShapeAttr) -> Result<Vec<PartMesh>> {
        (0..self.n_c())
            .map(|k| {
                let f = self.vaes[k].decode(attr.part_code(k))?;
                reconstruct_vertices(&f, &self.template, [0.0; 3]).map_err(geom)
            })
            .collect()
    }

    pub fn shape(&self, attr: &ShapeAttr) -> Result<Shape> {
        compose_shape(&self.part_meshes(attr)?, &attr.topo_attr()).map_err(geom)
    }
}

pub fn geom(e: GeomError) -> NumError {
    NumError::InvalidArgument {
        op: "geometry",
        msg: e.to_string(),
    }
}

/// Training pairs `(w, S, v)` with the images they came from.
#[derive(Clone, Debug)]
pub struct PairSet {
    /// `[N, d]`
    pub latents: Tensor<f32>,
    /// `[N, |S|]`
    pub attrs: Tensor<f32>,
    pub views: Vec<usize>,
    /// `[N, H, W]` dataset renders.
    pub images: Tensor<f32>,
    pub shape_ids: Vec<usize>,
}

impl PairSet {
    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            latents: self.latents.select_rows(idx),
            attrs: self.attrs.select_rows(idx),
            views: idx.iter().map(|&i| self.views[i]).collect(),
            images: self.images.select_rows(idx),
            shape_ids: idx.iter().map(|&i| self.shape_ids[i]).collect(),
        }
    }

    pub fn one_hots(&self, idx: &[usize]) -> Tensor<f32> {
        let data = idx
            .iter()
            .flat_map(|&i| ViewVector::new(self.views[i]).expect("stored views are valid").one_hot())
            .collect();
        Tensor::new(&[idx.len(), VIEW_COUNT], data).expect("one-hot rows")
    }
}

/// `M_F` and `M_B`.
#[derive(Clone, Debug, PartialEq)]
pub struct MappingModel {
    pub forward: Mlp<f32>,
    pub backward: Mlp<f32>,
    pub n_c: usize,
    pub z: usize,
}

impl MappingModel {
    pub fn new(n_c: usize, z: usize, d: usize, config: &MappingConfig, seed: u64) -> Self {
        let s = ShapeAttr::dim(n_c, z);
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, &[seed::tag("mapping.forward.init")]));
        let forward = Mlp::new(&config.dims(d, s), &mut rng);
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, &[seed::tag("mapping.backward.init")]));
        let backward = Mlp::new(&config.dims(s + VIEW_COUNT, d), &mut rng);
        Self { forward, backward, n_c, z }
    }

    pub fn d(&self) -> usize {
        self.forward.input_dim()
    }

    pub fn forward_batch(&self, w: &Tensor<f32>) -> Result<Tensor<f32>> {
        if w.shape().len() != 2 || w.shape()[1] != self.d() {
            return Err(NumError::ShapeMismatch {
                op: "forward_map",
                lhs: vec![self.d()],
                rhs: w.shape().to_vec(),
            });
        }
        self.forward.infer(w)
    }

    pub fn forward_map(&self, w: &[f32]) -> Result<ShapeAttr> {
        let out = self.forward_batch(&Tensor::new(&[1, w.len()], w.to_vec())?)?;
        ShapeAttr::unpack(out.data(), self.n_c, self.z)
    }

    /// `[N, |S|]` and `[N, 12]` -> `[N, d]`.
    pub fn backward_batch(&self, attrs: &Tensor<f32>, views: &Tensor<f32>) -> Result<Tensor<f32>> {
        let s = ShapeAttr::dim(self.n_c, self.z);
        if attrs.shape() != [attrs.rows(), s] || views.shape() != [attrs.rows(), VIEW_COUNT] {
            return Err(NumError::ShapeMismatch {
                op: "backward_map",
                lhs: vec![s, VIEW_COUNT],
                rhs: [attrs.shape(), views.shape()].concat(),
            });
        }
        let input: Vec<f32> = (0..attrs.rows()).flat_map(|r| [attrs.row(r), views.row(r)].concat()).collect();
        self.backward.infer(&Tensor::new(&[attrs.rows(), s + VIEW_COUNT], input)?)
    }

    pub fn backward_map(&self, attr: &ShapeAttr, view: ViewVector) -> Result<Vec<f32>> {
        let a = attr.pack();
        let out = self.backward_batch(&Tensor::new(&[1, a.len()], a)?, &Tensor::new(&[1, VIEW_COUNT], view.one_hot().to_vec())?)?;
        Ok(out.into_data())
    }

    pub fn forward_checkpoint(&self) -> Checkpoint {
        self.checkpoint("forward", &self.forward)
    }

    pub fn backward_checkpoint(&self) -> Checkpoint {
        self.checkpoint("backward", &self.backward)
    }

    fn checkpoint(&self, name: &str, net: &Mlp<f32>) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.push_module(name, net);
        ck.set_meta("n_c", self.n_c);
        ck.set_meta("z", self.z);
        ck.set_meta("d", self.d());
        ck
    }

    pub fn from_checkpoints(forward: &Checkpoint, backward: &Checkpoint) -> Result<Self> {
        let model = Self {
            forward: forward.mlp("forward")?,
            backward: backward.mlp("backward")?,
            n_c: forward.meta_as("n_c")?,
            z: forward.meta_as("z")?,
        };
        let s = ShapeAttr::dim(model.n_c, model.z);
        if model.forward.depth() != model.backward.depth()
            || model.forward.output_dim() != s
            || model.backward.input_dim() != s + VIEW_COUNT
            || model.backward.output_dim() != model.d()
        {
            return Err(NumError::Checkpoint("mapping networks disagree on dimensions".into()));
        }
        Ok(model)
    }
}
