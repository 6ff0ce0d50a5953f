use serde::{Deserialize, Serialize};

use super::losses::{precon_loss, preg_loss, topo_loss, vrecon_loss, wrecon_loss, wreg_loss};
use super::{Bridge, MappingConfig, PairSet};
use crate::numcore::{BoundMlp, Mlp, NumError, Result, Tape, Tensor, Var};
use crate::train::Trainer;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    pub epoch_losses: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointReport {
    pub epoch_losses: Vec<f64>,
    pub lambda_p: f64,
    /// Mean `‖P'(w) − P'_frozen(w)‖` over the training latents after finetuning.
    pub latent_deviation: f64,
}

fn cols(t: &Tensor<f32>, start: usize, len: usize) -> Tensor<f32> {
    let data = (0..t.rows()).flat_map(|r| t.row(r)[start..start + len].to_vec()).collect();
    Tensor::new(&[t.rows(), len], data).expect("column slice")
}

fn require(data: &PairSet, stage: &str) -> Result<()> {
    if data.is_empty() {
        return Err(NumError::InvalidArgument {
            op: "mapping",
            msg: format!("no training pairs for {stage}"),
        });
    }
    Ok(())
}

/// `Dec_i(P_i)` of every pair, one `[N, 9V]` tensor per part.
fn decoded_targets(bridge: &Bridge, attrs: &Tensor<f32>) -> Result<Vec<Tensor<f32>>> {
    let z = bridge.z();
    bridge
        .vaes
        .iter()
        .enumerate()
        .map(|(k, vae)| vae.decode_batch(&cols(attrs, k * z, z)))
        .collect()
}

fn generated(bridge: &Bridge, latents: &Tensor<f32>) -> Result<Tensor<f32>> {
    let n = latents.rows();
    let mut data = Vec::new();
    for lo in (0..n).step_by(256) {
        let idx: Vec<usize> = (lo..(lo + 256).min(n)).collect();
        data.extend(bridge.generator.synthesize_batch(&latents.select_rows(&idx))?.into_data());
    }
    let s = bridge.generator.size;
    Tensor::new(&[n, s, s], data)
}

fn bind_decoders<'t>(bridge: &Bridge, tape: &'t Tape<f32>) -> Vec<BoundMlp<'t, f32>> {
    bridge.vaes.iter().map(|v| v.decoder.bind(tape, false)).collect()
}

fn run_epochs(
    trainer: &mut Trainer,
    epochs: usize,
    seed: u64,
    stage: &str,
    n: usize,
    batch: usize,
    mut loss: impl for<'t> FnMut(&'t Tape<f32>, &[BoundMlp<'t, f32>], &[usize]) -> Result<Var<'t, f32>>,
) -> Result<StageReport> {
    while trainer.epoch < epochs {
        let batches = trainer.batches(seed, stage, n, batch);
        let mut sum = 0.0;
        for idx in &batches {
            let tape = Tape::new();
            let bound = trainer.bind(&tape);
            let l = loss(&tape, &bound, idx)?;
            sum += trainer.step(&tape, &bound, l)?;
        }
        trainer.end_epoch(sum / batches.len() as f64);
    }
    Ok(StageReport {
        stage: stage.to_string(),
        epoch_losses: trainer.history.clone(),
    })
}

/// Feature-space stage: `L_Precon + L_T`. `trainer.nets = [M_F]`.
pub fn train_forward_stage1(
    bridge: &Bridge,
    data: &PairSet,
    config: &MappingConfig,
    seed: u64,
    trainer: &mut Trainer,
) -> Result<StageReport> {
    require(data, "forward stage 1")?;
    let targets = decoded_targets(bridge, &data.attrs)?;
    let geom = bridge.n_c() * bridge.z();
    let topo = data.attrs.shape()[1] - geom;
    run_epochs(trainer, config.stage1_epochs, seed, "forward.stage1", data.len(), config.batch, |tape, nets, idx| {
        let decoders = bind_decoders(bridge, tape);
        let pred = nets[0].forward(tape.constant(data.latents.select_rows(idx)))?;
        let truth = tape.constant(data.attrs.select_rows(idx));
        let t: Vec<Var<f32>> = targets.iter().map(|f| tape.constant(f.select_rows(idx))).collect();
        let lp = precon_loss(&decoders, pred.slice_cols(0, geom)?, &t)?;
        lp.add(topo_loss(pred.slice_cols(geom, topo)?, truth.slice_cols(geom, topo)?)?)
    })
}

/// Size finetuning: `L_Vrecon + L_T`, continuing from stage 1. `trainer.nets = [M_F]`.
pub fn train_forward_stage2(
    bridge: &Bridge,
    data: &PairSet,
    config: &MappingConfig,
    seed: u64,
    trainer: &mut Trainer,
) -> Result<StageReport> {
    require(data, "forward stage 2")?;
    let targets = decoded_targets(bridge, &data.attrs)?;
    let geom = bridge.n_c() * bridge.z();
    let topo = data.attrs.shape()[1] - geom;
    run_epochs(trainer, config.stage2_epochs, seed, "forward.stage2", data.len(), config.batch, |tape, nets, idx| {
        let decoders = bind_decoders(bridge, tape);
        let kt = tape.constant(bridge.kt.clone());
        let pred = nets[0].forward(tape.constant(data.latents.select_rows(idx)))?;
        let truth = tape.constant(data.attrs.select_rows(idx));
        let t: Vec<Var<f32>> = targets.iter().map(|f| tape.constant(f.select_rows(idx))).collect();
        let lv = vrecon_loss(&decoders, pred.slice_cols(0, geom)?, &t, kt)?;
        lv.add(topo_loss(pred.slice_cols(geom, topo)?, truth.slice_cols(geom, topo)?)?)
    })
}

/// `L_wrecon + λ_w L_wreg` through the frozen generator. `trainer.nets = [M_B]`.
pub fn train_backward(
    bridge: &Bridge,
    data: &PairSet,
    config: &MappingConfig,
    seed: u64,
    trainer: &mut Trainer,
) -> Result<StageReport> {
    require(data, "backward")?;
    let targets = generated(bridge, &data.latents)?;
    run_epochs(trainer, config.backward_epochs, seed, "backward", data.len(), config.batch, |tape, nets, idx| {
        let g = bridge.generator.decoder.bind(tape, false);
        let input = tape.concat(&[tape.constant(data.attrs.select_rows(idx)), tape.constant(data.one_hots(idx))])?;
        let w = nets[0].forward(input)?;
        let recon = wrecon_loss(bridge.generator, &g, w, tape.constant(targets.select_rows(idx)))?;
        recon.add(wreg_loss(w)?.scale(config.lambda_w)?)
    })
}

/// End-to-end `w -> M_F -> M_B -> G` finetuning with
/// `L_T + L_wrecon + λ_w L_wreg + λ_P L_Preg` against a frozen copy of `M_F`.
/// `trainer.nets = [M_F, M_B]`.
pub fn joint_finetune(
    bridge: &Bridge,
    data: &PairSet,
    frozen_forward: &Mlp<f32>,
    config: &MappingConfig,
    lambda_p: f64,
    seed: u64,
    trainer: &mut Trainer,
) -> Result<JointReport> {
    require(data, "joint finetuning")?;
    let targets = generated(bridge, &data.latents)?;
    let geom = bridge.n_c() * bridge.z();
    let topo = data.attrs.shape()[1] - geom;
    let frozen = cols(&frozen_forward.infer(&data.latents)?, 0, geom);
    let report = run_epochs(trainer, config.joint_epochs, seed, "joint", data.len(), config.batch, |tape, nets, idx| {
        let g = bridge.generator.decoder.bind(tape, false);
        let s = nets[0].forward(tape.constant(data.latents.select_rows(idx)))?;
        let truth = tape.constant(data.attrs.select_rows(idx));
        let lt = topo_loss(s.slice_cols(geom, topo)?, truth.slice_cols(geom, topo)?)?;
        let w = nets[1].forward(tape.concat(&[s, tape.constant(data.one_hots(idx))])?)?;
        let lw = wrecon_loss(bridge.generator, &g, w, tape.constant(targets.select_rows(idx)))?;
        let reg = wreg_loss(w)?.scale(config.lambda_w)?;
        let lp = preg_loss(s.slice_cols(0, geom)?, tape.constant(frozen.select_rows(idx)))?.scale(lambda_p)?;
        lt.add(lw)?.add(reg)?.add(lp)
    })?;
    Ok(JointReport {
        epoch_losses: report.epoch_losses,
        lambda_p,
        latent_deviation: latent_deviation(&trainer.nets[0], frozen_forward, &data.latents, geom)?,
    })
}

/// Mean `‖P'(w) − P'_frozen(w)‖` over `latents`.
pub fn latent_deviation(forward: &Mlp<f32>, frozen: &Mlp<f32>, latents: &Tensor<f32>, geom: usize) -> Result<f64> {
    let a = forward.infer(latents)?;
    let b = frozen.infer(latents)?;
    let total: f64 = (0..a.rows())
        .map(|r| {
            a.row(r)[..geom]
                .iter()
                .zip(&b.row(r)[..geom])
                .map(|(x, y)| ((x - y) as f64).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .sum();
    Ok(total / a.rows() as f64)
}

/// Cross-entropy view classifier. `trainer.nets = [M_V]`.
pub fn train_view(data: &PairSet, config: &MappingConfig, seed: u64, trainer: &mut Trainer) -> Result<StageReport> {
    require(data, "view prediction")?;
    run_epochs(trainer, config.view_epochs, seed, "view", data.len(), config.batch, |tape, nets, idx| {
        let logits = nets[0].forward(tape.constant(data.latents.select_rows(idx)))?;
        let targets: Vec<usize> = idx.iter().map(|&i| data.views[i]).collect();
        logits.softmax_cross_entropy(&targets)
    })
}
