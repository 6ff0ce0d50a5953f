//! Per-part variational autoencoder over deformation features; its posterior
//! mean is the part's geometric code.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::numcore::{AdamConfig, BoundMlp, Checkpoint, Mlp, NumError, Result, Tape, Tensor, Var};
use crate::seed;
use crate::shapegen::PartFeature;
use crate::train::Trainer;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartVaeConfig {
    pub z: usize,
    pub hidden: Vec<usize>,
    pub beta: f64,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
}

impl Default for PartVaeConfig {
    fn default() -> Self {
        Self {
            z: 8,
            hidden: vec![256, 128, 64],
            beta: 1e-3,
            epochs: 150,
            batch: 32,
            lr: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PartVae {
    pub part: String,
    /// `9V -> 2z` (mean, log-variance).
    pub encoder: Mlp<f32>,
    /// `z -> 9V`.
    pub decoder: Mlp<f32>,
}

fn wrong_len(op: &'static str, expected: usize, got: usize) -> NumError {
    NumError::ShapeMismatch {
        op,
        lhs: vec![expected],
        rhs: vec![got],
    }
}

impl PartVae {
    pub fn new(part: &str, feature_len: usize, config: &PartVaeConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, &[seed::tag("partvae.init"), seed::tag(part)]));
        let mut dims = vec![feature_len];
        dims.extend(&config.hidden);
        dims.push(2 * config.z);
        let encoder = Mlp::new(&dims, &mut rng);
        dims.reverse();
        dims[0] = config.z;
        let decoder = Mlp::new(&dims, &mut rng);
        Self {
            part: part.to_string(),
            encoder,
            decoder,
        }
    }

    pub fn z(&self) -> usize {
        self.decoder.input_dim()
    }

    pub fn feature_len(&self) -> usize {
        self.decoder.output_dim()
    }

    /// `[B, 9V]` -> posterior means `[B, z]`.
    pub fn encode_batch(&self, features: &Tensor<f32>) -> Result<Tensor<f32>> {
        if features.shape().len() != 2 || features.shape()[1] != self.feature_len() {
            return Err(wrong_len("partvae_encode", self.feature_len(), features.shape().last().copied().unwrap_or(0)));
        }
        let stats = self.encoder.infer(features)?;
        let z = self.z();
        let means: Vec<f32> = (0..stats.rows()).flat_map(|r| stats.row(r)[..z].to_vec()).collect();
        Tensor::new(&[stats.rows(), z], means)
    }

    pub fn encode(&self, feature: &PartFeature) -> Result<Vec<f32>> {
        let row: Vec<f32> = feature.as_slice().iter().map(|&x| x as f32).collect();
        Ok(self.encode_batch(&Tensor::new(&[1, row.len()], row)?)?.into_data())
    }

    pub fn decode_batch(&self, latents: &Tensor<f32>) -> Result<Tensor<f32>> {
        if latents.shape().len() != 2 || latents.shape()[1] != self.z() {
            return Err(wrong_len("partvae_decode", self.z(), latents.shape().last().copied().unwrap_or(0)));
        }
        self.decoder.infer(latents)
    }

    pub fn decode(&self, latent: &[f32]) -> Result<PartFeature> {
        let out = self.decode_batch(&Tensor::new(&[1, latent.len()], latent.to_vec())?)?;
        PartFeature::new(out.data().iter().map(|&x| x as f64).collect())
            .map_err(|e| NumError::InvalidArgument { op: "partvae_decode", msg: e.to_string() })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.push_module("encoder", &self.encoder);
        ck.push_module("decoder", &self.decoder);
        ck.set_meta("z", self.z());
        ck.set_meta("V", self.feature_len() / 9);
        ck.set_meta("part", &self.part);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let vae = Self {
            part: ck.meta_as("part")?,
            encoder: ck.mlp("encoder")?,
            decoder: ck.mlp("decoder")?,
        };
        if vae.z() != ck.meta_as::<usize>("z")? || vae.feature_len() != 9 * ck.meta_as::<usize>("V")? {
            return Err(NumError::Checkpoint("partvae header disagrees with tensors".into()));
        }
        Ok(vae)
    }

    /// Mean squared per-entry error of `Dec(Enc(f))`.
    pub fn reconstruction_error(&self, features: &Tensor<f32>) -> Result<f64> {
        let recon = self.decode_batch(&self.encode_batch(features)?)?;
        let sq: f64 = recon.data().iter().zip(features.data()).map(|(a, b)| ((a - b) as f64).powi(2)).sum();
        Ok(sq / features.len() as f64)
    }
}

/// Closed-form `KL(N(μ, σ²) ‖ N(0, I)) = ½Σ(μ² + σ² − log σ² − 1)`.
pub fn kl_divergence(mean: &[f64], logvar: &[f64]) -> f64 {
    0.5 * mean
        .iter()
        .zip(logvar)
        .map(|(m, lv)| m * m + lv.exp() - lv - 1.0)
        .sum::<f64>()
}

/// Batch-mean KL on a tape for `[B, 2z]` encoder statistics.
pub fn kl_var<'t>(stats: Var<'t, f32>, z: usize) -> Result<Var<'t, f32>> {
    let mean = stats.slice_cols(0, z)?;
    let logvar = stats.slice_cols(z, z)?;
    let terms = mean.square()?.add(logvar.exp()?)?.sub(logvar)?.add_scalar(-1.0)?;
    terms.row_sum()?.mean()?.scale(0.5)
}

pub fn decode_var<'t>(decoder: &BoundMlp<'t, f32>, latents: Var<'t, f32>) -> Result<Var<'t, f32>> {
    decoder.forward(latents)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartVaeReport {
    pub part: String,
    pub epoch_losses: Vec<f64>,
    pub train_error: f64,
    pub validation_error: f64,
    pub untrained_validation_error: f64,
}

pub const NETS: [&str; 2] = ["encoder", "decoder"];

pub fn partvae_trainer(vae: &PartVae, config: &PartVaeConfig) -> Trainer {
    Trainer::new(vec![vae.encoder.clone(), vae.decoder.clone()], AdamConfig::with_lr(config.lr))
}

/// Minimises `Σ_entries (f − Dec(μ + σ·ε))² + β·KL` per item, batch-averaged.
pub fn train_partvae(
    part: &str,
    features: &Tensor<f32>,
    validation: &Tensor<f32>,
    config: &PartVaeConfig,
    seed: u64,
    trainer: &mut Trainer,
) -> Result<(PartVae, PartVaeReport)> {
    let n = features.shape()[0];
    if features.shape().len() != 2 || n == 0 {
        return Err(NumError::InvalidArgument {
            op: "train_partvae",
            msg: "no training features".into(),
        });
    }
    let snapshot = |t: &Trainer| PartVae {
        part: part.to_string(),
        encoder: t.nets[0].clone(),
        decoder: t.nets[1].clone(),
    };
    let untrained = snapshot(trainer).reconstruction_error(validation)?;
    let stage = format!("partvae.{part}");
    let z = config.z;
    while trainer.epoch < config.epochs {
        let mut sum = 0.0;
        let batches = trainer.batches(seed, &stage, n, config.batch);
        let mut noise_rng =
            ChaCha8Rng::seed_from_u64(seed::derive(seed, &[seed::tag(&stage), seed::tag("noise"), trainer.epoch as u64]));
        for idx in &batches {
            let x = features.select_rows(idx);
            let eps = Tensor::randn(&[idx.len(), z], 1.0, &mut noise_rng);
            let tape = Tape::new();
            let bound = trainer.bind(&tape);
            let xv = tape.constant(x);
            let stats = bound[0].forward(xv)?;
            let mean = stats.slice_cols(0, z)?;
            let std = stats.slice_cols(z, z)?.scale(0.5)?.exp()?;
            let sample = mean.add(std.mul(tape.constant(eps))?)?;
            let recon = bound[1].forward(sample)?.sub(xv)?.square()?.row_sum()?.mean()?;
            let loss = recon.add(kl_var(stats, z)?.scale(config.beta)?)?;
            sum += trainer.step(&tape, &bound, loss)?;
        }
        trainer.end_epoch(sum / batches.len() as f64);
    }
    let vae = snapshot(trainer);
    let report = PartVaeReport {
        part: part.to_string(),
        epoch_losses: trainer.history.clone(),
        train_error: vae.reconstruction_error(features)?,
        validation_error: vae.reconstruction_error(validation)?,
        untrained_validation_error: untrained,
    };
    Ok((vae, report))
}
