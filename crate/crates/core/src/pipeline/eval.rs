//! Held-out evaluations and ablations over a trained workspace.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::stages::{mean, split_shapes, train_forward, train_joint, train_joint_from, Context, FinetuneReport};
use super::{Result, Stage, Workspace};
use crate::generator::{invert, proxy_per_image, GeneratorModel, InversionConfig};
use crate::manipulate::{replace_part, resize_via_attributes, set_view, ResizeMode};
use crate::mapping::{
    image_errors, latent_deviation, roundtrip_errors, shape_errors, GroundTruthSamples, MappingModel, PairSet, ViewVector,
    CHAMFER_SAMPLES,
};
use crate::numcore::{self, Tape, Tensor};
use crate::seed;
use crate::shapegen::{render, resize_part, sample_surface, Split};

/// Per-image proxy between `G(latents)` and `targets`.
pub(crate) fn proxies(generator: &GeneratorModel, latents: &Tensor<f32>, targets: &Tensor<f32>) -> numcore::Result<Vec<f64>> {
    image_proxies(&generator.synthesize_all(latents)?, targets)
}

/// Per-image proxy between two `[N, H, W]` stacks.
pub(crate) fn image_proxies(a: &Tensor<f32>, b: &Tensor<f32>) -> numcore::Result<Vec<f64>> {
    let mut out = Vec::with_capacity(a.rows());
    for lo in (0..a.rows()).step_by(256) {
        let idx: Vec<usize> = (lo..(lo + 256).min(a.rows())).collect();
        let tape = Tape::new();
        let per = proxy_per_image(tape.constant(a.select_rows(&idx)), tape.constant(b.select_rows(&idx)))?;
        out.extend(per.value().data().iter().map(|&v| v as f64));
    }
    Ok(out)
}

fn stack(images: &[crate::imaging::GrayImage]) -> numcore::Result<Tensor<f32>> {
    let s = images.first().map_or(0, |i| i.width());
    Tensor::new(&[images.len(), s, s], images.iter().flat_map(|i| i.data().to_vec()).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconMetrics {
    pub pairs: usize,
    /// Mean Chamfer `E_s` of the decoded shape.
    pub shape_error: f64,
    /// Mean `proxy(G(M_B(M_F(w), v)), I)`.
    pub image_error: f64,
    /// Mean `proxy(G(M_B(M_F(w), v)), G(w))`.
    pub roundtrip_error: f64,
}

fn ground_truth(ctx: &Context, data: &PairSet, seed: u64) -> Result<GroundTruthSamples> {
    let mut out = GroundTruthSamples::new();
    for &id in &data.shape_ids {
        if out.contains_key(&id) {
            continue;
        }
        let record = &ctx.manifest.records[ctx.record_index(id)];
        let shape = record.shape(ctx.manifest.category, &ctx.template)?;
        let s = seed::derive(seed, &[seed::tag("ground-truth"), id as u64]);
        out.insert(id, sample_surface(&shape.triangles(), CHAMFER_SAMPLES, s)?);
    }
    Ok(out)
}

fn recon(ctx: &Context, model: &MappingModel, data: &PairSet, truth: &GroundTruthSamples, seed: u64) -> Result<ReconMetrics> {
    let bridge = ctx.bridge()?;
    Ok(ReconMetrics {
        pairs: data.len(),
        shape_error: mean(&shape_errors(&bridge, &model.forward, data, truth, seed)?),
        image_error: mean(&image_errors(&bridge, model, data)?),
        roundtrip_error: mean(&roundtrip_errors(&bridge, model, data)?),
    })
}

/// Held-out metrics of the final (jointly finetuned) mapping.
pub fn eval_recon(ws: &Workspace) -> Result<ReconMetrics> {
    ws.require(Stage::ViewPred)?;
    let ctx = Context::load(ws)?;
    let test = ctx.pairs(Split::Test)?;
    let truth = ground_truth(&ctx, &test, ws.config.seed)?;
    recon(&ctx, &ws.load_mapping("forward.joint", "backward.joint")?, &test, &truth, ws.config.seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeAblation {
    pub seed: u64,
    /// Feature-space stage only.
    pub without: ReconMetrics,
    /// Followed by the vertex-space stage.
    pub with: ReconMetrics,
    /// The same two variants after joint finetuning, i.e. the full pipeline.
    pub without_joint: ReconMetrics,
    pub with_joint: ReconMetrics,
}

impl SizeAblation {
    /// Both held-out errors strictly lower with the vertex-space stage, on
    /// the full pipeline.
    pub fn improves(&self) -> bool {
        self.with_joint.shape_error < self.without_joint.shape_error && self.with_joint.image_error < self.without_joint.image_error
    }
}

/// `M_F` with and without the vertex-space stage, each paired with the trained
/// `M_B` and then jointly finetuned, for every run seed. The configured seed
/// reuses the saved forward networks.
pub fn ablate_size(ws: &Workspace, run_seeds: &[u64]) -> Result<Vec<SizeAblation>> {
    ws.require(Stage::Finetune)?;
    let ctx = Context::load(ws)?;
    let test = ctx.pairs(Split::Test)?;
    let truth = ground_truth(&ctx, &test, ws.config.seed)?;
    let saved = ws.load_mapping("forward.stage2", "backward")?;
    let mut out = Vec::new();
    for &s in run_seeds {
        let (stage1, stage2) = if s == ws.config.seed {
            (ws.load_mapping("forward.stage1", "backward")?.forward, saved.forward.clone())
        } else {
            let (a, b, _) = train_forward(&ctx, ws, Stage::Forward.seed(s))?;
            (a, b)
        };
        let with_forward = |forward| MappingModel { forward, ..saved.clone() };
        let (without, with) = (with_forward(stage1), with_forward(stage2));
        let lambda_p = ws.config.mapping.lambda_p;
        let without_joint = train_joint_from(&ctx, ws, without.clone(), lambda_p)?.0;
        let with_joint = train_joint_from(&ctx, ws, with.clone(), lambda_p)?.0;
        out.push(SizeAblation {
            seed: s,
            without: recon(&ctx, &without, &test, &truth, ws.config.seed)?,
            with: recon(&ctx, &with, &test, &truth, ws.config.seed)?,
            without_joint: recon(&ctx, &without_joint, &test, &truth, ws.config.seed)?,
            with_joint: recon(&ctx, &with_joint, &test, &truth, ws.config.seed)?,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneAblation {
    pub image_error_before: f64,
    pub image_error_after: f64,
    pub relative_reduction: f64,
    pub lambda_p: f64,
    /// Mean `‖P'(w) − P'_frozen(w)‖` with the configured `λ_P` and with `λ_P = 0`.
    pub deviation: f64,
    pub deviation_without_preg: f64,
}

pub fn ablate_finetune(ws: &Workspace) -> Result<FinetuneAblation> {
    ws.require(Stage::ViewPred)?;
    let report: FinetuneReport = ws.load_report(Stage::Finetune)?;
    let ctx = Context::load(ws)?;
    let (model, _) = train_joint(&ctx, ws, 0.0)?;
    let frozen = ws.load_mapping("forward.stage2", "backward")?.forward;
    let train = ctx.pairs(Split::Train)?;
    let geom = ctx.vaes.len() * ctx.vaes[0].z();
    Ok(FinetuneAblation {
        image_error_before: report.image_error_before,
        image_error_after: report.image_error_after,
        relative_reduction: report.relative_reduction,
        lambda_p: report.joint.lambda_p,
        deviation: report.joint.latent_deviation,
        deviation_without_preg: latent_deviation(&model.forward, &frozen, &train.latents, geom)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryAblation {
    pub part: String,
    pub factors: [f64; 3],
    pub shapes: usize,
    /// Mean proxy against the resized ground-truth render, per route.
    pub finetuner_error: f64,
    pub attribute_error: f64,
    pub raw_error: f64,
    /// Mean `proxy(G(w + F_r(w, 0)), G(w))`.
    pub zero_weight_bias: f64,
}

/// Unit-weight resizes of held-out shapes through the finetuner, the
/// attribute route and the raw latent offset.
pub fn ablate_trajectory(ws: &Workspace) -> Result<Vec<TrajectoryAblation>> {
    let ctx = Context::load(ws)?;
    let finetuners = ws.load_finetuners()?;
    let mapping = ws.load_mapping("forward.joint", "backward.joint")?;
    let views = ws.load_view()?;
    let bridge = ctx.bridge()?;
    let test = split_shapes(&ctx, Split::Test);
    let predicted = views.predict_batch(&test.latents)?;
    let mut out = Vec::new();
    for f in &finetuners {
        let (mut truth, mut tuned, mut attr, mut raw, mut zero) = (vec![], vec![], vec![], vec![], vec![]);
        for (i, &id) in test.ids.iter().enumerate() {
            let w = test.latents.row(i);
            let shape = ctx.manifest.records[ctx.record_index(id)].shape(ctx.manifest.category, &ctx.template)?;
            truth.push(render(&resize_part(&shape, f.part, f.factors)?, test.views[i], &ws.config.data.render)?);
            tuned.push(ctx.generator.synthesize(&f.resized_latent(w, 1.0, ResizeMode::Finetuner)?)?);
            raw.push(ctx.generator.synthesize(&f.resized_latent(w, 1.0, ResizeMode::Raw)?)?);
            attr.push(resize_via_attributes(&bridge, &mapping, predicted[i], w, &f.trajectory, 1.0)?);
            zero.push((
                ctx.generator.synthesize(&f.resized_latent(w, 0.0, ResizeMode::Finetuner)?)?,
                ctx.generator.synthesize(w)?,
            ));
        }
        let truth = stack(&truth)?;
        let (z0, z1): (Vec<_>, Vec<_>) = zero.into_iter().unzip();
        out.push(TrajectoryAblation {
            part: ws.config.category.part_names()[f.part].to_string(),
            factors: f.factors,
            shapes: test.ids.len(),
            finetuner_error: mean(&image_proxies(&stack(&tuned)?, &truth)?),
            attribute_error: mean(&image_proxies(&stack(&attr)?, &truth)?),
            raw_error: mean(&image_proxies(&stack(&raw)?, &truth)?),
            zero_weight_bias: mean(&image_proxies(&stack(&z0)?, &stack(&z1)?)?),
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplacementOracle {
    pub tau_rep: f64,
    pub errors: Vec<f64>,
    pub fraction_below: f64,
    /// Every edited attribute took part `k` from the target and the rest from
    /// the source, bit for bit.
    pub mixture_exact: bool,
}

/// Replacement between held-out shapes compared against the dataset render of
/// the recombined shape.
pub fn replacement_oracle(ws: &Workspace, samples: usize, seed: u64) -> Result<ReplacementOracle> {
    let report: FinetuneReport = ws.load_report(Stage::Finetune)?;
    let ctx = Context::load(ws)?;
    let mapping = ws.load_mapping("forward.joint", "backward.joint")?;
    let views = ws.load_view()?;
    let test: Vec<usize> = ctx.manifest.split(Split::Test).map(|r| r.id).collect();
    let m = ctx.manifest.interchanged;
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, &[seed::tag("replacement-oracle")]));
    let (mut errors, mut exact) = (Vec::new(), true);
    let mut attempts = 0;
    while errors.len() < samples && attempts < samples * 100 && m > 0 {
        attempts += 1;
        let (a, b) = (test[rng.random_range(0..test.len())], test[rng.random_range(0..test.len())]);
        let k = rng.random_range(0..m);
        let (src, tgt) = (&ctx.manifest.records[ctx.record_index(a)], &ctx.manifest.records[ctx.record_index(b)]);
        if src.sources[k] == tgt.sources[k] {
            continue;
        }
        let mut sources = src.sources.clone();
        sources[k] = tgt.sources[k];
        let Some(gt) = ctx.manifest.find(&sources) else { continue };
        let view = a % 12;
        let w_src = ctx.latents.row(ctx.canonical_row(a));
        let w_tgt = ctx.latents.row(ctx.canonical_row(b));
        let outcome = replace_part(&ctx.generator, &mapping, &views, w_src, w_tgt, k)?;
        let target = mapping.forward_map(w_tgt)?;
        let z = outcome.source.z();
        let t = crate::shapegen::TopoAttr::PER_PART;
        for j in 0..ctx.vaes.len() {
            let from = if j == k { &target } else { &outcome.source };
            exact &= outcome.edited.part_code(j) == from.part_code(j)
                && outcome.edited.topo[j * t..(j + 1) * t] == from.topo[j * t..(j + 1) * t];
        }
        exact &= outcome.edited.geom.len() == ctx.vaes.len() * z;
        let truth = ctx.images.image(ctx.images.index(gt, view).expect("dataset view"));
        errors.push(crate::generator::perceptual_proxy(&outcome.image, &truth)?);
    }
    let below = errors.iter().filter(|&&e| e < report.tau_rep).count();
    Ok(ReplacementOracle {
        tau_rep: report.tau_rep,
        fraction_below: below as f64 / errors.len().max(1) as f64,
        errors,
        mixture_exact: exact,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewOracle {
    pub heldout_accuracy: f64,
    pub tau_view: f64,
    pub shapes: usize,
    pub errors: Vec<f64>,
    pub fraction_below: f64,
    /// Fraction of `(shape, k)` whose re-inverted result is predicted as `k`.
    pub cycle_fraction: f64,
    /// Mean `proxy(set_view(w, M_V(w)), G(w))`.
    pub identity_error: f64,
    pub tau_rt: f64,
}

/// Twelve-view sweeps over held-out shapes against the dataset renders, plus
/// the re-inversion cycle check.
pub fn view_oracle(ws: &Workspace, shapes: usize, seed: u64) -> Result<ViewOracle> {
    let finetune: FinetuneReport = ws.load_report(Stage::Finetune)?;
    let view_report: super::ViewReport = ws.load_report(Stage::ViewPred)?;
    let ctx = Context::load(ws)?;
    let mapping = ws.load_mapping("forward.joint", "backward.joint")?;
    let views = ws.load_view()?;
    let mut test: Vec<usize> = ctx.manifest.split(Split::Test).map(|r| r.id).collect();
    test.shuffle(&mut ChaCha8Rng::seed_from_u64(seed::derive(seed, &[seed::tag("view-oracle")])));
    test.truncate(shapes);
    let (mut errors, mut results, mut identity) = (Vec::new(), Vec::new(), Vec::new());
    for &id in &test {
        let w = ctx.latents.row(ctx.canonical_row(id));
        let own = views.predict_view(w)?;
        identity.push(crate::generator::perceptual_proxy(
            &set_view(&ctx.generator, &mapping, w, own)?.image,
            &ctx.generator.synthesize(w)?,
        )?);
        for k in 0..12 {
            let outcome = set_view(&ctx.generator, &mapping, w, ViewVector::new(k)?)?;
            let truth = ctx.images.image(ctx.images.index(id, k).expect("dataset view"));
            errors.push(crate::generator::perceptual_proxy(&outcome.image, &truth)?);
            results.push(outcome.image);
        }
    }
    let inversion = InversionConfig {
        steps: ws.config.pairs.inversion_steps,
        ..ws.config.inversion.clone()
    };
    let cycle = if results.is_empty() {
        f64::NAN
    } else {
        let inverted = invert(&ctx.generator, &stack(&results)?, &inversion)?;
        let predicted = views.predict_batch(&inverted.latents)?;
        predicted.iter().enumerate().filter(|(i, p)| p.index() == i % 12).count() as f64 / predicted.len() as f64
    };
    let below = errors.iter().filter(|&&e| e < finetune.tau_view).count();
    Ok(ViewOracle {
        heldout_accuracy: view_report.heldout_accuracy,
        tau_view: finetune.tau_view,
        shapes: test.len(),
        fraction_below: below as f64 / errors.len().max(1) as f64,
        errors,
        cycle_fraction: cycle,
        identity_error: mean(&identity),
        tau_rt: finetune.tau_rt,
    })
}
