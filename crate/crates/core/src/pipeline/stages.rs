use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::data::{augmented_features, feature_tensor, pair_set, record_attrs, record_features, unique_rows, DatasetImages};
use super::{Result, Stage, Workspace, LATENTS};
use crate::generator::{generator_trainer, invert, train_generator, GeneratorModel, GeneratorReport, InversionConfig};
use crate::manipulate::{
    build_trajectory_pairs, compute_resize_trajectory, train_trajectory_finetuner, trajectory_trainer, TrajectoryFinetuner,
    TrajectoryReport, TrajectorySources,
};
use crate::mapping::{
    image_errors, joint_finetune, roundtrip_errors, train_backward, train_forward_stage1, train_forward_stage2, train_view,
    Bridge, JointReport, MappingModel, PairSet, ShapeAttr, StageReport, ViewPredictor,
};
use crate::numcore::{AdamConfig, Checkpoint, Tensor};
use crate::partvae::{partvae_trainer, train_partvae, PartVae, PartVaeReport};
use crate::seed;
use crate::shapegen::{build_dataset, DatasetManifest, DatasetSpec, Split, Template};
use crate::train::Trainer;

pub(crate) fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Data shared by every stage after the generator.
pub(crate) struct Context {
    pub manifest: DatasetManifest,
    pub template: Arc<Template>,
    pub images: DatasetImages,
    pub latents: Tensor<f32>,
    pub generator: GeneratorModel,
    pub vaes: Vec<PartVae>,
    pub attrs: Vec<ShapeAttr>,
}

impl Context {
    pub fn load(ws: &Workspace) -> Result<Self> {
        let manifest = ws.manifest()?;
        let template = ws.template()?;
        let images = DatasetImages::load(&manifest, ws.data_dir())?;
        let vaes = ws.load_vaes()?;
        let attrs = record_attrs(&manifest, &record_features(&manifest, &template)?, &vaes)?;
        Ok(Self {
            latents: ws.load_latents()?,
            generator: ws.load_generator()?,
            manifest,
            template,
            images,
            vaes,
            attrs,
        })
    }

    pub fn bridge(&self) -> Result<Bridge<'_>> {
        Ok(Bridge::new(&self.generator, &self.vaes, self.template.clone())?)
    }

    pub fn pairs(&self, split: Split) -> Result<PairSet> {
        let rows = self.images.rows(&self.manifest, split);
        pair_set(&self.manifest, &self.images, &self.latents, &self.attrs, &rows)
    }

    pub fn record_index(&self, id: usize) -> usize {
        self.manifest.records.iter().position(|r| r.id == id).expect("known shape id")
    }

    /// The one render of each shape used where a single view is needed.
    pub fn canonical_row(&self, id: usize) -> usize {
        self.images.index(id, id % 12).expect("every shape has 12 views")
    }
}

pub fn run_data(ws: &Workspace) -> Result<DatasetManifest> {
    let c = &ws.config;
    let spec = DatasetSpec {
        category: c.category,
        grid: c.data.template_n,
        base_shapes: c.data.base_shapes,
        interchanged: c.data.interchanged,
        render: c.data.render,
        seed: c.seed,
    };
    log::info!("building {} dataset in {}", c.category.name(), ws.data_dir().display());
    Ok(build_dataset(&spec, ws.data_dir())?)
}

pub fn run_partvae(ws: &Workspace) -> Result<Vec<PartVaeReport>> {
    ws.require(Stage::PartVae)?;
    let c = &ws.config;
    let manifest = ws.manifest()?;
    let template = ws.template()?;
    let features = record_features(&manifest, &template)?;
    let stage_seed = Stage::PartVae.seed(c.seed);
    let mut reports = Vec::new();
    for (k, name) in c.category.part_names().iter().enumerate() {
        let mut rows = unique_rows(&features.iter().map(|f| f[k].clone()).collect::<Vec<_>>());
        let aug_seed = seed::derive(stage_seed, &[seed::tag("augment"), k as u64]);
        rows.extend(augmented_features(c.category, k, &template, c.augment.parts, &c.augment, aug_seed)?);
        let val_seed = seed::derive(stage_seed, &[seed::tag("validation"), k as u64]);
        let validation = augmented_features(c.category, k, &template, c.augment.validation, &c.augment, val_seed)?;
        let part_seed = seed::derive(stage_seed, &[k as u64]);
        let vae = PartVae::new(name, 9 * template.vertex_count(), &c.partvae, part_seed);
        let mut trainer = partvae_trainer(&vae, &c.partvae);
        let (vae, report) =
            train_partvae(name, &feature_tensor(&rows)?, &feature_tensor(&validation)?, &c.partvae, part_seed, &mut trainer)?;
        log::info!("partvae {name}: validation error {:.4} (untrained {:.4})", report.validation_error, report.untrained_validation_error);
        ws.save_checkpoint(&format!("partvae.{name}"), vae.to_checkpoint())?;
        reports.push(report);
    }
    ws.save_report(Stage::PartVae, &reports)?;
    Ok(reports)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorStageReport {
    pub generator: GeneratorReport,
    pub inversion_steps: usize,
    pub train_inversion_proxy: f64,
    pub test_inversion_proxy: f64,
}

pub fn run_generator(ws: &Workspace) -> Result<GeneratorStageReport> {
    ws.require(Stage::Generator)?;
    let c = &ws.config;
    let manifest = ws.manifest()?;
    let images = DatasetImages::load(&manifest, ws.data_dir())?;
    let train_rows = images.rows(&manifest, Split::Train);
    let stage_seed = Stage::Generator.seed(c.seed);
    let model = GeneratorModel::new(c.data.render.size, &c.generator, stage_seed)?;
    let mut trainer = generator_trainer(&model, &c.generator);
    let (generator, report) =
        train_generator(&images.images.select_rows(&train_rows), c.data.render.size, &c.generator, stage_seed, &mut trainer)?;
    log::info!("generator: train proxy {:.4} (untrained {:.4})", report.train_error, report.untrained_error);
    let inversion = InversionConfig {
        steps: c.pairs.inversion_steps,
        ..c.inversion.clone()
    };
    let inverted = invert(&generator, &images.images, &inversion)?;
    let split_mean = |split| {
        let rows = images.rows(&manifest, split);
        mean(&rows.iter().map(|&r| inverted.proxy[r]).collect::<Vec<_>>())
    };
    let stage = GeneratorStageReport {
        generator: report,
        inversion_steps: inversion.steps,
        train_inversion_proxy: split_mean(Split::Train),
        test_inversion_proxy: split_mean(Split::Test),
    };
    ws.save_checkpoint("generator", generator.to_checkpoint())?;
    let mut ck = Checkpoint::new();
    ck.push(LATENTS, &inverted.latents);
    ws.save_checkpoint(LATENTS, ck)?;
    ws.save_report(Stage::Generator, &stage)?;
    Ok(stage)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForwardReport {
    pub stage1: StageReport,
    pub stage2: StageReport,
}

fn mapping_trainer(nets: Vec<crate::numcore::Mlp<f32>>, lr: f64) -> Trainer {
    Trainer::new(nets, AdamConfig::with_lr(lr))
}

/// Both forward stages from a fresh `M_F` initialised with `seed`; returns the
/// stage-1 and stage-2 networks.
pub(crate) fn train_forward(
    ctx: &Context,
    ws: &Workspace,
    seed: u64,
) -> Result<(crate::numcore::Mlp<f32>, crate::numcore::Mlp<f32>, ForwardReport)> {
    let c = &ws.config.mapping;
    let bridge = ctx.bridge()?;
    let train = ctx.pairs(Split::Train)?;
    let model = MappingModel::new(bridge.n_c(), bridge.z(), bridge.d(), c, seed);
    let mut t1 = mapping_trainer(vec![model.forward], c.lr);
    let stage1 = train_forward_stage1(&bridge, &train, c, seed, &mut t1)?;
    let mut t2 = mapping_trainer(t1.nets.clone(), c.lr);
    let stage2 = train_forward_stage2(&bridge, &train, c, seed, &mut t2)?;
    Ok((t1.nets.remove(0), t2.nets.remove(0), ForwardReport { stage1, stage2 }))
}

fn forward_checkpoint(ctx: &Context, net: &crate::numcore::Mlp<f32>) -> Checkpoint {
    MappingModel {
        forward: net.clone(),
        backward: net.clone(),
        n_c: ctx.vaes.len(),
        z: ctx.vaes[0].z(),
    }
    .forward_checkpoint()
}

pub fn run_forward(ws: &Workspace) -> Result<ForwardReport> {
    ws.require(Stage::Forward)?;
    let ctx = Context::load(ws)?;
    let (stage1, stage2, report) = train_forward(&ctx, ws, Stage::Forward.seed(ws.config.seed))?;
    ws.save_checkpoint("forward.stage1", forward_checkpoint(&ctx, &stage1))?;
    ws.save_checkpoint("forward.stage2", forward_checkpoint(&ctx, &stage2))?;
    ws.save_report(Stage::Forward, &report)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackwardReport {
    pub training: StageReport,
    /// Held-out `proxy(G(M_B(S, v)), G(w))` with ground-truth attributes.
    pub heldout_error: f64,
}

pub fn run_backward(ws: &Workspace) -> Result<BackwardReport> {
    ws.require(Stage::Backward)?;
    let ctx = Context::load(ws)?;
    let c = &ws.config.mapping;
    let bridge = ctx.bridge()?;
    let seed = Stage::Backward.seed(ws.config.seed);
    let model = MappingModel::new(bridge.n_c(), bridge.z(), bridge.d(), c, seed);
    let mut trainer = mapping_trainer(vec![model.backward.clone()], c.lr);
    let training = train_backward(&bridge, &ctx.pairs(Split::Train)?, c, seed, &mut trainer)?;
    let model = MappingModel {
        backward: trainer.nets.remove(0),
        ..model
    };
    let test = ctx.pairs(Split::Test)?;
    let all: Vec<usize> = (0..test.len()).collect();
    let w = model.backward_batch(&test.attrs, &test.one_hots(&all))?;
    let heldout_error = mean(&super::eval::proxies(&ctx.generator, &w, &ctx.generator.synthesize_all(&test.latents)?)?);
    ws.save_checkpoint("backward", model.backward_checkpoint())?;
    let report = BackwardReport { training, heldout_error };
    ws.save_report(Stage::Backward, &report)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneReport {
    pub joint: JointReport,
    /// Held-out mean `E_i` before and after joint finetuning.
    pub image_error_before: f64,
    pub image_error_after: f64,
    pub relative_reduction: f64,
    pub roundtrip_error: f64,
    pub tau_rt: f64,
    pub tau_rep: f64,
    pub tau_view: f64,
}

/// Joint finetuning from the stage-2 `M_F` and trained `M_B` with a given `λ_P`.
pub(crate) fn train_joint(ctx: &Context, ws: &Workspace, lambda_p: f64) -> Result<(MappingModel, JointReport)> {
    train_joint_from(ctx, ws, ws.load_mapping("forward.stage2", "backward")?, lambda_p)
}

pub(crate) fn train_joint_from(
    ctx: &Context,
    ws: &Workspace,
    start: MappingModel,
    lambda_p: f64,
) -> Result<(MappingModel, JointReport)> {
    let bridge = ctx.bridge()?;
    let c = &ws.config.mapping;
    let mut trainer = mapping_trainer(vec![start.forward.clone(), start.backward.clone()], c.lr);
    let report = joint_finetune(
        &bridge,
        &ctx.pairs(Split::Train)?,
        &start.forward,
        c,
        lambda_p,
        Stage::Finetune.seed(ws.config.seed),
        &mut trainer,
    )?;
    let model = MappingModel {
        forward: trainer.nets[0].clone(),
        backward: trainer.nets[1].clone(),
        ..start
    };
    Ok((model, report))
}

pub fn run_finetune(ws: &Workspace) -> Result<FinetuneReport> {
    ws.require(Stage::Finetune)?;
    let ctx = Context::load(ws)?;
    let bridge = ctx.bridge()?;
    let test = ctx.pairs(Split::Test)?;
    let before = mean(&image_errors(&bridge, &ws.load_mapping("forward.stage2", "backward")?, &test)?);
    let (model, joint) = train_joint(&ctx, ws, ws.config.mapping.lambda_p)?;
    let after_errors = image_errors(&bridge, &model, &test)?;
    let after = mean(&after_errors);
    let roundtrip = mean(&roundtrip_errors(&bridge, &model, &test)?);
    log::info!("joint finetuning: held-out E_i {before:.4} -> {after:.4}");
    ws.save_checkpoint("forward.joint", model.forward_checkpoint())?;
    ws.save_checkpoint("backward.joint", model.backward_checkpoint())?;
    let report = FinetuneReport {
        joint,
        image_error_before: before,
        image_error_after: after,
        relative_reduction: (before - after) / before,
        roundtrip_error: roundtrip,
        tau_rt: 2.0 * roundtrip,
        tau_rep: 2.0 * after,
        tau_view: 2.0 * after,
    };
    ws.save_report(Stage::Finetune, &report)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewReport {
    pub training: StageReport,
    pub heldout_accuracy: f64,
}

pub fn run_viewpred(ws: &Workspace) -> Result<ViewReport> {
    ws.require(Stage::ViewPred)?;
    let ctx = Context::load(ws)?;
    let c = &ws.config.mapping;
    let seed = Stage::ViewPred.seed(ws.config.seed);
    let predictor = ViewPredictor::new(ctx.generator.latent_dim(), c, seed);
    let mut trainer = mapping_trainer(vec![predictor.net.clone()], c.lr);
    let training = train_view(&ctx.pairs(Split::Train)?, c, seed, &mut trainer)?;
    let predictor = ViewPredictor {
        net: trainer.nets.remove(0),
    };
    let test = ctx.pairs(Split::Test)?;
    let predicted = predictor.predict_batch(&test.latents)?;
    let hits = predicted.iter().zip(&test.views).filter(|(p, &v)| p.index() == v).count();
    let report = ViewReport {
        training,
        heldout_accuracy: hits as f64 / test.len().max(1) as f64,
    };
    log::info!("view predictor: held-out accuracy {:.3}", report.heldout_accuracy);
    ws.save_checkpoint("view", predictor.to_checkpoint())?;
    ws.save_report(Stage::ViewPred, &report)?;
    Ok(report)
}

/// Shapes, attributes and canonical-view latents of one split.
pub(crate) struct SplitShapes {
    pub ids: Vec<usize>,
    pub attrs: Vec<ShapeAttr>,
    pub latents: Tensor<f32>,
    pub views: Vec<usize>,
}

pub(crate) fn split_shapes(ctx: &Context, split: Split) -> SplitShapes {
    let ids: Vec<usize> = ctx.manifest.split(split).map(|r| r.id).collect();
    let rows: Vec<usize> = ids.iter().map(|&id| ctx.canonical_row(id)).collect();
    SplitShapes {
        attrs: ids.iter().map(|&id| ctx.attrs[ctx.record_index(id)].clone()).collect(),
        latents: ctx.latents.select_rows(&rows),
        views: ids.iter().map(|id| id % 12).collect(),
        ids,
    }
}

pub fn run_trajectory(ws: &Workspace) -> Result<Vec<TrajectoryReport>> {
    ws.require(Stage::Trajectory)?;
    let ctx = Context::load(ws)?;
    let bridge = ctx.bridge()?;
    let c = &ws.config;
    let stage_seed = Stage::Trajectory.seed(c.seed);
    let inversion = InversionConfig {
        steps: c.pairs.inversion_steps,
        ..c.inversion.clone()
    };
    let (train, test) = (split_shapes(&ctx, Split::Train), split_shapes(&ctx, Split::Test));
    let train_meshes = ctx
        .manifest
        .split(Split::Train)
        .map(|r| r.shape(c.category, &ctx.template))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let mut reports = Vec::new();
    for op in &c.trajectory.resizes {
        let part = c.category.part_index(&op.part).expect("validated part name");
        let trajectory = compute_resize_trajectory(&ctx.vaes[part], &train_meshes, part, op.factors)?;
        let pairs = |s: &SplitShapes| {
            let sources = TrajectorySources {
                attrs: &s.attrs,
                latents: &s.latents,
                views: &s.views,
                shape_ids: &s.ids,
            };
            build_trajectory_pairs(&bridge, &sources, &trajectory, &c.trajectory.weights, &c.data.render, &inversion)
        };
        let (train_pairs, test_pairs) = (pairs(&train)?, pairs(&test)?);
        let seed = seed::derive(stage_seed, &[part as u64]);
        let mut finetuner =
            TrajectoryFinetuner::new(part, op.factors, trajectory.clone(), bridge.d(), c.trajectory.hidden, seed);
        let mut trainer = trajectory_trainer(&finetuner, &c.trajectory);
        let report = train_trajectory_finetuner(&mut finetuner, &train_pairs, &test_pairs, &c.trajectory, seed, &mut trainer)?;
        log::info!(
            "trajectory finetuner {}: held-out L_r {:.4} vs target variance {:.4}",
            op.part,
            report.heldout_loss,
            report.heldout_variance
        );
        ws.save_checkpoint(&format!("trajectory.{}", op.part), finetuner.to_checkpoint())?;
        reports.push(report);
    }
    ws.save_report(Stage::Trajectory, &reports)?;
    Ok(reports)
}

/// Every stage in order.
pub fn run_all(ws: &Workspace) -> Result<()> {
    run_data(ws)?;
    run_partvae(ws)?;
    run_generator(ws)?;
    run_forward(ws)?;
    run_backward(ws)?;
    run_finetune(ws)?;
    run_viewpred(ws)?;
    run_trajectory(ws)?;
    Ok(())
}
