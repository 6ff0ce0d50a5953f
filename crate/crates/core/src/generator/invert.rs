use serde::{Deserialize, Serialize};

use super::{proxy_per_image, GeneratorModel};
use crate::numcore::{Adam, AdamConfig, NumError, Result, Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InversionConfig {
    pub steps: usize,
    pub lambda_w: f64,
    pub lr: f64,
    /// Images optimised together; each keeps its own objective.
    pub chunk: usize,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            steps: 300,
            lambda_w: 0.01,
            lr: 5e-3,
            chunk: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InversionResult {
    /// `[B, d]`
    pub latents: Tensor<f32>,
    /// `proxy + λ_w‖w‖²` at the returned latents.
    pub objective: Vec<f64>,
    /// The same objective at the encoder warm start.
    pub initial: Vec<f64>,
    /// `proxy(G(w), I)` at the returned latents.
    pub proxy: Vec<f64>,
    pub initial_proxy: Vec<f64>,
}

/// `argmin_w proxy(G(w), I) + λ_w‖w‖²` by Adam from `E(I)`, keeping the best
/// iterate per image. Purely deterministic: no sampling is involved.
pub fn invert(model: &GeneratorModel, images: &Tensor<f32>, config: &InversionConfig) -> Result<InversionResult> {
    if model.trained_epochs == 0 {
        return Err(NumError::InvalidArgument {
            op: "invert",
            msg: "generator is untrained".into(),
        });
    }
    let start = model.encode_batch(images)?;
    let n = images.shape()[0];
    let d = model.latent_dim();
    let mut out = InversionResult {
        latents: Tensor::zeros(&[n, d]),
        objective: Vec::with_capacity(n),
        initial: Vec::with_capacity(n),
        proxy: Vec::with_capacity(n),
        initial_proxy: Vec::with_capacity(n),
    };
    let mut latents = Vec::with_capacity(n * d);
    for lo in (0..n).step_by(config.chunk.max(1)) {
        let idx: Vec<usize> = (lo..(lo + config.chunk.max(1)).min(n)).collect();
        let target = images.select_rows(&idx);
        let mut w = start.select_rows(&idx);
        let mut adam = Adam::new(AdamConfig::with_lr(config.lr), &[&w]);
        let mut best = w.clone();
        let mut best_obj = vec![f64::INFINITY; idx.len()];
        let mut best_proxy = vec![f64::INFINITY; idx.len()];
        for step in 0..=config.steps {
            let tape = Tape::new();
            let dec = model.decoder.bind(&tape, false);
            let wv = tape.param(w.clone());
            let img = model.decode_var(&dec, wv)?;
            let per = proxy_per_image(img, tape.constant(target.clone()))?;
            let reg = wv.square()?.row_sum()?.scale(config.lambda_w)?;
            let obj = per.add(reg)?;
            let (objs, proxies) = (obj.value(), per.value());
            for (i, (&o, &p)) in objs.data().iter().zip(proxies.data()).enumerate() {
                if step == 0 {
                    out.initial.push(o as f64);
                    out.initial_proxy.push(p as f64);
                }
                if (o as f64) < best_obj[i] {
                    best_obj[i] = o as f64;
                    best_proxy[i] = p as f64;
                    best.data_mut()[i * d..(i + 1) * d].copy_from_slice(&w.data()[i * d..(i + 1) * d]);
                }
            }
            if step == config.steps {
                break;
            }
            let grads = tape.backward(obj.sum()?)?;
            adam.step(&mut [&mut w], &[grads.get_or_zeros(&wv)])?;
        }
        latents.extend_from_slice(best.data());
        out.objective.extend(best_obj);
        out.proxy.extend(best_proxy);
    }
    out.latents = Tensor::new(&[n, d], latents)?;
    Ok(out)
}
