//! Image generator `G: W -> image` with an auxiliary encoder, trained by
//! reconstruction, plus optimisation-based inversion.

mod invert;
mod proxy;

pub use invert::{invert, InversionConfig, InversionResult};
pub use proxy::{image_tensor, perceptual_proxy, proxy, proxy_per_image, LEVELS};

use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::imaging::GrayImage;
use crate::numcore::{AdamConfig, BoundMlp, Checkpoint, Kernel, Mlp, NumError, Result, Scalar, Tape, Tensor, Var};
use crate::seed;
use crate::train::Trainer;

const STAGE: &str = "generator";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub lambda_w: f64,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            latent_dim: 64,
            hidden: vec![256, 512],
            lambda_w: 0.01,
            epochs: 30,
            batch: 32,
            lr: 1e-3,
        }
    }
}

/// Decoder `G` (MLP trunk at half resolution, 2x upsampling, fixed blur,
/// bounded output) and encoder `E` (2x pooling, MLP).
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorModel {
    pub decoder: Mlp<f32>,
    pub encoder: Mlp<f32>,
    pub size: usize,
    pub trained_epochs: usize,
}

fn head_kernel<S: Scalar>() -> Rc<Kernel<S>> {
    Rc::new(Kernel::binomial(3).expect("odd kernel"))
}

impl GeneratorModel {
    pub fn new(size: usize, config: &GeneratorConfig, seed: u64) -> Result<Self> {
        if size < 4 || size % 2 != 0 {
            return Err(NumError::InvalidArgument {
                op: "generator",
                msg: format!("image size {size} must be even and >= 4"),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, &[seed::tag("generator.init")]));
        let half = (size / 2) * (size / 2);
        let mut dims = vec![config.latent_dim];
        dims.extend(&config.hidden);
        dims.push(half);
        let decoder = Mlp::new(&dims, &mut rng);
        dims.reverse();
        let encoder = Mlp::new(&dims, &mut rng);
        Ok(Self {
            decoder,
            encoder,
            size,
            trained_epochs: 0,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.decoder.input_dim()
    }

    /// `[B, d]` latents to `[B, H, W]` images on a tape.
    pub fn decode_var<'t, S: Scalar>(&self, decoder: &BoundMlp<'t, S>, w: Var<'t, S>) -> Result<Var<'t, S>> {
        let b = w.shape()[0];
        let half = self.size / 2;
        decoder
            .forward(w)?
            .reshape(&[b, half, half])?
            .upsample2()?
            .conv2d(&head_kernel())?
            .tanh()?
            .scale(0.5)?
            .add_scalar(0.5)
    }

    pub fn encode_var<'t, S: Scalar>(&self, encoder: &BoundMlp<'t, S>, x: Var<'t, S>) -> Result<Var<'t, S>> {
        let b = x.shape()[0];
        let half = self.size / 2;
        encoder.forward(x.avg_pool2()?.reshape(&[b, half * half])?)
    }

    fn check_latents(&self, w: &Tensor<f32>) -> Result<()> {
        if w.shape().len() != 2 || w.shape()[1] != self.latent_dim() {
            return Err(NumError::ShapeMismatch {
                op: "synthesize",
                lhs: vec![self.latent_dim()],
                rhs: w.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// `[B, d]` -> `[B, H, W]`.
    pub fn synthesize_batch(&self, w: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.check_latents(w)?;
        let tape = Tape::new();
        let dec = self.decoder.bind(&tape, false);
        Ok((*self.decode_var(&dec, tape.constant(w.clone()))?.value()).clone())
    }

    /// `synthesize_batch` in bounded chunks.
    pub fn synthesize_all(&self, w: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.check_latents(w)?;
        let n = w.rows();
        let mut data = Vec::with_capacity(n * self.size * self.size);
        for lo in (0..n).step_by(256) {
            let idx: Vec<usize> = (lo..(lo + 256).min(n)).collect();
            data.extend(self.synthesize_batch(&w.select_rows(&idx))?.into_data());
        }
        Tensor::new(&[n, self.size, self.size], data)
    }

    pub fn synthesize(&self, w: &[f32]) -> Result<GrayImage> {
        let t = self.synthesize_batch(&Tensor::new(&[1, w.len()], w.to_vec())?)?;
        Ok(GrayImage::new(self.size, self.size, t.into_data()).expect("generator output size"))
    }

    /// `[B, H, W]` -> `[B, d]`.
    pub fn encode_batch(&self, images: &Tensor<f32>) -> Result<Tensor<f32>> {
        if images.shape().get(1..) != Some(&[self.size, self.size][..]) {
            return Err(NumError::ShapeMismatch {
                op: "encode",
                lhs: vec![self.size, self.size],
                rhs: images.shape().to_vec(),
            });
        }
        let tape = Tape::new();
        let enc = self.encoder.bind(&tape, false);
        Ok((*self.encode_var(&enc, tape.constant(images.clone()))?.value()).clone())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.push_module("decoder", &self.decoder);
        ck.push_module("encoder", &self.encoder);
        ck.set_meta("d", self.latent_dim());
        ck.set_meta("H", self.size);
        ck.set_meta("W", self.size);
        ck.set_meta("trained_epochs", self.trained_epochs);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let model = Self {
            decoder: ck.mlp("decoder")?,
            encoder: ck.mlp("encoder")?,
            size: ck.meta_as("H")?,
            trained_epochs: ck.meta_as("trained_epochs")?,
        };
        if model.latent_dim() != ck.meta_as::<usize>("d")? {
            return Err(NumError::Checkpoint("latent width disagrees with header".into()));
        }
        Ok(model)
    }

    /// Mean proxy of `G(E(x))` against `x` over a batch, evaluated in chunks.
    pub fn reconstruction_error(&self, images: &Tensor<f32>) -> Result<f64> {
        let n = images.shape()[0];
        let mut total = 0.0;
        for start in (0..n).step_by(128) {
            let idx: Vec<usize> = (start..(start + 128).min(n)).collect();
            let x = images.select_rows(&idx);
            let w = self.encode_batch(&x)?;
            let y = self.synthesize_batch(&w)?;
            let tape = Tape::new();
            let per = proxy_per_image(tape.constant(y), tape.constant(x))?;
            total += per.value().data().iter().map(|&v| v as f64).sum::<f64>();
        }
        Ok(total / n as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorReport {
    pub epoch_losses: Vec<f64>,
    pub untrained_error: f64,
    pub train_error: f64,
    /// Acceptance threshold on the mean train reconstruction proxy.
    pub tau_gen: f64,
}

pub const NETS: [&str; 2] = ["decoder", "encoder"];

/// Fresh trainer for a new generator.
pub fn generator_trainer(model: &GeneratorModel, config: &GeneratorConfig) -> Trainer {
    Trainer::new(vec![model.decoder.clone(), model.encoder.clone()], AdamConfig::with_lr(config.lr))
}

/// Runs epochs until `config.epochs`, continuing from `trainer`'s progress.
///
/// Objective per batch: `proxy(G(E(x)), x) + mse + λ_w·mean‖E(x)‖²`.
pub fn train_generator(
    images: &Tensor<f32>,
    size: usize,
    config: &GeneratorConfig,
    seed: u64,
    trainer: &mut Trainer,
) -> Result<(GeneratorModel, GeneratorReport)> {
    let n = images.shape()[0];
    if n == 0 {
        return Err(NumError::InvalidArgument {
            op: "train_generator",
            msg: "no training images".into(),
        });
    }
    let mut shell = GeneratorModel::new(size, config, seed)?;
    let untrained = {
        let mut m = shell.clone();
        m.decoder = trainer.nets[0].clone();
        m.encoder = trainer.nets[1].clone();
        m.reconstruction_error(images)?
    };
    while trainer.epoch < config.epochs {
        let mut sum = 0.0;
        let batches = trainer.batches(seed, STAGE, n, config.batch);
        for idx in &batches {
            let x = images.select_rows(idx);
            let tape = Tape::new();
            let bound = trainer.bind(&tape);
            let xv = tape.constant(x);
            let w = shell.encode_var(&bound[1], xv)?;
            let y = shell.decode_var(&bound[0], w)?;
            let recon = proxy(y, xv)?.add(y.sub(xv)?.square()?.mean()?)?;
            let reg = w.square()?.row_sum()?.mean()?.scale(config.lambda_w)?;
            sum += trainer.step(&tape, &bound, recon.add(reg)?)?;
        }
        trainer.end_epoch(sum / batches.len() as f64);
    }
    shell.decoder = trainer.nets[0].clone();
    shell.encoder = trainer.nets[1].clone();
    shell.trained_epochs = trainer.epoch;
    let train_error = shell.reconstruction_error(images)?;
    let report = GeneratorReport {
        epoch_losses: trainer.history.clone(),
        untrained_error: untrained,
        train_error,
        tau_gen: 1.5 * train_error,
    };
    Ok((shell, report))
}
