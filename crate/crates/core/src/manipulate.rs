//! Image edits routed through shape attributes: part replacement, part
//! resizing along latent trajectories, and viewpoint changes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::generator::{invert, GeneratorModel, InversionConfig};
use crate::imaging::GrayImage;
use crate::mapping::{geom, losses::trajectory_loss, Bridge, MappingModel, ShapeAttr, ViewPredictor, ViewVector};
use crate::numcore::{AdamConfig, Checkpoint, Mlp, NumError, Result, Tape, Tensor};
use crate::partvae::PartVae;
use crate::seed;
use crate::shapegen::{center_extents, extract_feature, render, resize_part, RenderSettings, Shape, TopoAttr, Vec3};
use crate::train::Trainer;

/// Every intermediate of one edit, in dataflow order.
#[derive(Clone, Debug)]
pub struct EditOutcome {
    pub source: ShapeAttr,
    pub edited: ShapeAttr,
    pub view: ViewVector,
    pub latent: Vec<f32>,
    pub image: GrayImage,
}

fn check_part(part: usize, n_c: usize) -> Result<()> {
    if part >= n_c {
        return Err(NumError::InvalidArgument {
            op: "manipulate",
            msg: format!("part {part} out of range for {n_c} parts"),
        });
    }
    Ok(())
}

fn decode(generator: &GeneratorModel, latent: Vec<f32>) -> Result<(Vec<f32>, GrayImage)> {
    let image = generator.synthesize(&latent)?;
    Ok((latent, image))
}

/// `S' = S_src` with part `k`'s code and topology block from `S_tgt`, rendered
/// at the source's predicted view.
pub fn replace_part(
    generator: &GeneratorModel,
    mapping: &MappingModel,
    views: &ViewPredictor,
    w_src: &[f32],
    w_tgt: &[f32],
    part: usize,
) -> Result<EditOutcome> {
    check_part(part, mapping.n_c)?;
    let source = mapping.forward_map(w_src)?;
    let target = mapping.forward_map(w_tgt)?;
    let edited = source.with_part_from(&target, part);
    let view = views.predict_view(w_src)?;
    let (latent, image) = decode(generator, mapping.backward_map(&edited, view)?)?;
    Ok(EditOutcome {
        source,
        edited,
        view,
        latent,
        image,
    })
}

/// `G(M_B(M_F(w), v'))`.
pub fn set_view(generator: &GeneratorModel, mapping: &MappingModel, w: &[f32], view: ViewVector) -> Result<EditOutcome> {
    let source = mapping.forward_map(w)?;
    let (latent, image) = decode(generator, mapping.backward_map(&source, view)?)?;
    Ok(EditOutcome {
        edited: source.clone(),
        source,
        view,
        latent,
        image,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrajectorySpace {
    /// One part's code space, length `z`.
    Part(usize),
    /// Image latent space, length `d`.
    Latent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub space: TrajectorySpace,
    pub direction: Vec<f32>,
}

/// A configured resize `ℛ`: scale one part's bounding box about its center.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResizeOp {
    pub part: String,
    pub factors: Vec3,
}

fn part_code(vae: &PartVae, shape: &Shape, part: usize) -> Result<Vec<f32>> {
    let mesh = shape.parts[part].as_ref().ok_or_else(|| NumError::InvalidArgument {
        op: "resize_trajectory",
        msg: format!("part {part} missing from a shape"),
    })?;
    vae.encode(&extract_feature(mesh).map_err(geom)?.0)
}

/// `r^P = mean_i (Enc(ℛ(s_i)_k) − Enc(s_{i,k}))`.
pub fn compute_resize_trajectory(vae: &PartVae, shapes: &[Shape], part: usize, factors: Vec3) -> Result<Trajectory> {
    if shapes.is_empty() {
        return Err(NumError::InvalidArgument {
            op: "resize_trajectory",
            msg: "no shapes".into(),
        });
    }
    let mut sum = vec![0.0f64; vae.z()];
    for shape in shapes {
        let before = part_code(vae, shape, part)?;
        let after = part_code(vae, &resize_part(shape, part, factors).map_err(geom)?, part)?;
        for (s, (a, b)) in sum.iter_mut().zip(after.iter().zip(&before)) {
            *s += (*a - *b) as f64;
        }
    }
    Ok(Trajectory {
        space: TrajectorySpace::Part(part),
        direction: sum.iter().map(|s| (s / shapes.len() as f64) as f32).collect(),
    })
}

/// `attr` with `offset` added to part `k`'s code. Part size lives in the
/// topology block, so that block's half extents follow the ratio of the
/// decoded part's extents after and before the offset.
pub fn offset_part(bridge: &Bridge, attr: &ShapeAttr, part: usize, offset: &[f32]) -> Result<ShapeAttr> {
    check_part(part, bridge.n_c())?;
    let extents = |code: &[f32]| -> Result<Vec3> {
        let f = bridge.vaes[part].decode(code)?;
        let mesh = crate::shapegen::reconstruct_vertices(&f, &bridge.template, [0.0; 3]).map_err(geom)?;
        Ok(center_extents(&mesh.vertices).1)
    };
    let mut out = attr.clone();
    for (c, o) in out.part_code_mut(part).iter_mut().zip(offset) {
        *c += o;
    }
    let (before, after) = (extents(attr.part_code(part))?, extents(out.part_code(part))?);
    let t = part * TopoAttr::PER_PART;
    for a in 0..3 {
        if before[a] > 1e-9 {
            out.topo[t + 4 + a] *= (after[a] / before[a]) as f32;
        }
    }
    Ok(out)
}

/// Regression data for the trajectory finetuner: inputs `w ⊕ ω·r^P`,
/// targets `r^W = ŵ − w`.
#[derive(Clone, Debug)]
pub struct TrajectoryPairs {
    /// `[N, d + z]`
    pub inputs: Tensor<f32>,
    /// `[N, d]`
    pub targets: Tensor<f32>,
    pub shape_ids: Vec<usize>,
    pub weights: Vec<f64>,
}

impl TrajectoryPairs {
    pub fn len(&self) -> usize {
        self.shape_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shape_ids.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            inputs: self.inputs.select_rows(idx),
            targets: self.targets.select_rows(idx),
            shape_ids: idx.iter().map(|&i| self.shape_ids[i]).collect(),
            weights: idx.iter().map(|&i| self.weights[i]).collect(),
        }
    }

    /// `mean_i r_i^W / ω_i`: the latent offset of one unit of the trajectory.
    pub fn mean_unit_offset(&self) -> Vec<f32> {
        let d = self.targets.row_len();
        let mut sum = vec![0.0f64; d];
        let mut count = 0;
        for (i, &w) in self.weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (s, &t) in sum.iter_mut().zip(self.targets.row(i)) {
                *s += t as f64 / w;
            }
            count += 1;
        }
        sum.iter().map(|s| (s / count.max(1) as f64) as f32).collect()
    }
}

/// Inputs to pair building, one entry per shape: its attributes, the latent of
/// one of its renders and that render's view.
pub struct TrajectorySources<'a> {
    pub attrs: &'a [ShapeAttr],
    pub latents: &'a Tensor<f32>,
    pub views: &'a [usize],
    pub shape_ids: &'a [usize],
}

/// For each shape and weight `ω`: decode `P_k + ω·r^P`, compose, render at the
/// shape's view, invert, and record `ŵ − w`. Items whose inversion ends
/// non-finite are skipped.
pub fn build_trajectory_pairs(
    bridge: &Bridge,
    sources: &TrajectorySources,
    trajectory: &Trajectory,
    weights: &[f64],
    render_settings: &RenderSettings,
    inversion: &InversionConfig,
) -> Result<TrajectoryPairs> {
    let TrajectorySpace::Part(part) = trajectory.space else {
        return Err(NumError::InvalidArgument {
            op: "trajectory_pairs",
            msg: "pairs need a part-space trajectory".into(),
        });
    };
    let mut renders = Vec::new();
    let mut meta = Vec::new();
    for (i, attr) in sources.attrs.iter().enumerate() {
        for &weight in weights {
            let offset: Vec<f32> = trajectory.direction.iter().map(|&r| (r as f64 * weight) as f32).collect();
            let edited = offset_part(bridge, attr, part, &offset)?;
            let image = render(&bridge.shape(&edited)?, sources.views[i], render_settings).map_err(geom)?;
            renders.extend(image.into_data());
            meta.push((i, weight));
        }
    }
    let s = bridge.generator.size;
    let images = Tensor::new(&[meta.len(), s, s], renders)?;
    let inverted = invert(bridge.generator, &images, inversion)?;
    let (d, z) = (bridge.d(), trajectory.direction.len());
    let (mut inputs, mut targets, mut shape_ids, mut kept) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (row, &(i, weight)) in meta.iter().enumerate() {
        let w_hat = inverted.latents.row(row);
        let w = sources.latents.row(i);
        if w_hat.iter().any(|v| !v.is_finite()) {
            log::warn!("skipping trajectory pair for shape {}: inversion diverged", sources.shape_ids[i]);
            continue;
        }
        inputs.extend_from_slice(w);
        inputs.extend(trajectory.direction.iter().map(|&r| (r as f64 * weight) as f32));
        targets.extend(w_hat.iter().zip(w).map(|(a, b)| a - b));
        shape_ids.push(sources.shape_ids[i]);
        kept.push(weight);
    }
    let n = kept.len();
    Ok(TrajectoryPairs {
        inputs: Tensor::new(&[n, d + z], inputs)?,
        targets: Tensor::new(&[n, d], targets)?,
        shape_ids,
        weights: kept,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectoryConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub weights: Vec<f64>,
    pub resizes: Vec<ResizeOp>,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            epochs: 200,
            batch: 32,
            lr: 1e-3,
            weights: vec![-0.5, 0.5, 1.0],
            resizes: vec![
                ResizeOp {
                    part: "back".into(),
                    factors: [1.0, 1.4, 1.0],
                },
                ResizeOp {
                    part: "seat".into(),
                    factors: [1.3, 1.0, 1.3],
                },
            ],
        }
    }
}

/// `F_r(w, r^P) -> r^W` for one (part, resize) pair, plus the data needed for
/// the raw-trajectory comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryFinetuner {
    pub part: usize,
    pub factors: Vec3,
    pub trajectory: Trajectory,
    /// Mean latent offset per unit weight over the collected pairs.
    pub mean_offset: Vec<f32>,
    pub net: Mlp<f32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResizeMode {
    /// `G(w + F_r(w, ω·r^P))`
    Finetuner,
    /// `G(w + ω·mean r^W)`
    Raw,
}

impl TrajectoryFinetuner {
    pub const DEPTH: usize = 4;

    pub fn new(part: usize, factors: Vec3, trajectory: Trajectory, d: usize, hidden: usize, seed: u64) -> Self {
        let z = trajectory.direction.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, &[seed::tag("trajectory.init"), part as u64]));
        Self {
            part,
            factors,
            trajectory,
            mean_offset: vec![0.0; d],
            net: Mlp::new(&[d + z, hidden, hidden, hidden, d], &mut rng),
        }
    }

    pub fn d(&self) -> usize {
        self.net.output_dim()
    }

    /// `F_r(w, ω·r^P)`.
    pub fn offset(&self, w: &[f32], weight: f64) -> Result<Vec<f32>> {
        let mut input = w.to_vec();
        input.extend(self.trajectory.direction.iter().map(|&r| (r as f64 * weight) as f32));
        let x = Tensor::new(&[1, input.len()], input)?;
        Ok(self.net.infer(&x)?.into_data())
    }

    pub fn resized_latent(&self, w: &[f32], weight: f64, mode: ResizeMode) -> Result<Vec<f32>> {
        if w.len() != self.d() {
            return Err(NumError::ShapeMismatch {
                op: "resize",
                lhs: vec![self.d()],
                rhs: vec![w.len()],
            });
        }
        let offset = match mode {
            ResizeMode::Finetuner => self.offset(w, weight)?,
            ResizeMode::Raw => self.mean_offset.iter().map(|&r| (r as f64 * weight) as f32).collect(),
        };
        Ok(w.iter().zip(&offset).map(|(a, b)| a + b).collect())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.push_module("finetuner", &self.net);
        ck.set_meta("part", self.part);
        ck.set_meta("factors", self.factors);
        ck.set_meta("trajectory", &self.trajectory);
        ck.set_meta("mean_offset", &self.mean_offset);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let out = Self {
            part: ck.meta_as("part")?,
            factors: ck.meta_as("factors")?,
            trajectory: ck.meta_as("trajectory")?,
            mean_offset: ck.meta_as("mean_offset")?,
            net: ck.mlp("finetuner")?,
        };
        if out.net.depth() != Self::DEPTH || out.net.input_dim() != out.d() + out.trajectory.direction.len() {
            return Err(NumError::Checkpoint("trajectory finetuner dimensions disagree".into()));
        }
        Ok(out)
    }
}

/// `G(w + F_r(w, ω·r^P))` or the raw variant.
pub fn resize_image(generator: &GeneratorModel, finetuner: &TrajectoryFinetuner, w: &[f32], weight: f64, mode: ResizeMode) -> Result<GrayImage> {
    generator.synthesize(&finetuner.resized_latent(w, weight, mode)?)
}

/// The attribute-space route: `G(M_B(S with P_k + ω·r^P, v̂))`.
pub fn resize_via_attributes(
    bridge: &Bridge,
    mapping: &MappingModel,
    view: ViewVector,
    w: &[f32],
    trajectory: &Trajectory,
    weight: f64,
) -> Result<GrayImage> {
    let TrajectorySpace::Part(part) = trajectory.space else {
        return Err(NumError::InvalidArgument {
            op: "resize",
            msg: "attribute route needs a part-space trajectory".into(),
        });
    };
    let offset: Vec<f32> = trajectory.direction.iter().map(|&r| (r as f64 * weight) as f32).collect();
    let edited = offset_part(bridge, &mapping.forward_map(w)?, part, &offset)?;
    bridge.generator.synthesize(&mapping.backward_map(&edited, view)?)
}

/// Several parts at once: per-part latent offsets are summed.
pub fn resize_many(generator: &GeneratorModel, edits: &[(&TrajectoryFinetuner, f64)], w: &[f32]) -> Result<(Vec<f32>, GrayImage)> {
    let mut latent = w.to_vec();
    for (finetuner, weight) in edits {
        for (l, o) in latent.iter_mut().zip(finetuner.offset(w, *weight)?) {
            *l += o;
        }
    }
    let image = generator.synthesize(&latent)?;
    Ok((latent, image))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryReport {
    pub part: usize,
    pub epoch_losses: Vec<f64>,
    pub train_pairs: usize,
    pub heldout_pairs: usize,
    /// Held-out `L_r`.
    pub heldout_loss: f64,
    /// Held-out `mean ‖r^W − mean r^W‖²`: the predict-the-mean baseline.
    pub heldout_variance: f64,
}

pub const NETS: [&str; 1] = ["finetuner"];

pub fn trajectory_trainer(finetuner: &TrajectoryFinetuner, config: &TrajectoryConfig) -> Trainer {
    Trainer::new(vec![finetuner.net.clone()], AdamConfig::with_lr(config.lr))
}

fn regression_error(net: &Mlp<f32>, pairs: &TrajectoryPairs) -> Result<f64> {
    let pred = net.infer(&pairs.inputs)?;
    let tape = Tape::new();
    Ok(trajectory_loss(tape.constant(pred), tape.constant(pairs.targets.clone()))?.value().item() as f64)
}

/// Supervised `L_r` regression; `finetuner.mean_offset` is set from `train`.
pub fn train_trajectory_finetuner(
    finetuner: &mut TrajectoryFinetuner,
    train: &TrajectoryPairs,
    heldout: &TrajectoryPairs,
    config: &TrajectoryConfig,
    seed: u64,
    trainer: &mut Trainer,
) -> Result<TrajectoryReport> {
    if train.is_empty() {
        return Err(NumError::InvalidArgument {
            op: "train_trajectory_finetuner",
            msg: "no trajectory pairs".into(),
        });
    }
    let stage = format!("trajectory.{}", finetuner.part);
    while trainer.epoch < config.epochs {
        let batches = trainer.batches(seed, &stage, train.len(), config.batch);
        let mut sum = 0.0;
        for idx in &batches {
            let tape = Tape::new();
            let bound = trainer.bind(&tape);
            let pred = bound[0].forward(tape.constant(train.inputs.select_rows(idx)))?;
            let loss = trajectory_loss(pred, tape.constant(train.targets.select_rows(idx)))?;
            sum += trainer.step(&tape, &bound, loss)?;
        }
        trainer.end_epoch(sum / batches.len() as f64);
    }
    finetuner.net = trainer.nets[0].clone();
    finetuner.mean_offset = train.mean_unit_offset();
    let (heldout_loss, heldout_variance) = if heldout.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        let d = heldout.targets.row_len();
        let mean: Vec<f64> = (0..d)
            .map(|j| (0..heldout.len()).map(|i| heldout.targets.row(i)[j] as f64).sum::<f64>() / heldout.len() as f64)
            .collect();
        let var = (0..heldout.len())
            .map(|i| heldout.targets.row(i).iter().zip(&mean).map(|(&t, m)| (t as f64 - m).powi(2)).sum::<f64>())
            .sum::<f64>()
            / heldout.len() as f64;
        (regression_error(&finetuner.net, heldout)?, var)
    };
    Ok(TrajectoryReport {
        part: finetuner.part,
        epoch_losses: trainer.history.clone(),
        train_pairs: train.len(),
        heldout_pairs: heldout.len(),
        heldout_loss,
        heldout_variance,
    })
}
