use serde::{Deserialize, Serialize};

use super::{MappingModel, ViewVector};
use crate::generator::{proxy, GeneratorModel};
use crate::numcore::{Adam, AdamConfig, BoundMlp, Mlp, Module, Result, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpecificConfig {
    pub steps: usize,
    pub lr: f64,
    pub lambda_forward: f64,
    pub lambda_backward: f64,
    /// Consecutive non-improving steps tolerated before giving up.
    pub patience: usize,
}

impl Default for SpecificConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            lr: 1e-4,
            lambda_forward: 1.0,
            lambda_backward: 1.0,
            patience: 50,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SpecificResult {
    /// Best-found copies; the input model is never modified.
    pub model: MappingModel,
    pub before: f64,
    pub after: f64,
    pub forward_drift: f64,
    pub backward_drift: f64,
    pub diverged: bool,
    pub steps_run: usize,
}

fn param_distance<'t>(tape: &'t Tape<f32>, net: &BoundMlp<'t, f32>, reference: &Mlp<f32>) -> Result<Var<'t, f32>> {
    let diffs = net
        .params()
        .into_iter()
        .zip(reference.tensors())
        .map(|(p, r)| {
            let n = r.len();
            p.sub(tape.constant(r.clone()))?.reshape(&[1, n])
        })
        .collect::<Result<Vec<_>>>()?;
    tape.concat(&diffs)?.row_norm()?.sum()
}

fn distance(a: &Mlp<f32>, b: &Mlp<f32>) -> f64 {
    a.tensors()
        .iter()
        .zip(b.tensors())
        .flat_map(|(x, y)| x.data().iter().zip(y.data()).map(|(p, q)| ((p - q) as f64).powi(2)))
        .sum::<f64>()
        .sqrt()
}

/// Per-input optimisation of copies of `M_F` and `M_B`:
/// `proxy(G(M_B(M_F(w), v)), I) + λ_F‖θ'_F − θ_F‖ + λ_B‖θ'_B − θ_B‖`,
/// with `w` the inversion of `I` and `v` its predicted view.
pub fn shape_specific_finetune(
    generator: &GeneratorModel,
    model: &MappingModel,
    latent: &[f32],
    view: ViewVector,
    image: &Tensor<f32>,
    config: &SpecificConfig,
) -> Result<SpecificResult> {
    let w = Tensor::new(&[1, latent.len()], latent.to_vec())?;
    let onehot = Tensor::new(&[1, 12], view.one_hot().to_vec())?;
    let target = image.clone().reshape(&[1, generator.size, generator.size])?;
    let mut nets = vec![model.forward.clone(), model.backward.clone()];
    let mut adam = {
        let t: Vec<&Tensor<f32>> = nets.iter().flat_map(|n| n.tensors()).collect();
        Adam::new(AdamConfig::with_lr(config.lr), &t)
    };
    let (mut best, mut best_nets) = (f64::INFINITY, nets.clone());
    let mut before = f64::NAN;
    let (mut stale, mut diverged, mut steps_run) = (0, false, 0);
    for step in 0..=config.steps {
        let tape = Tape::new();
        let bound: Vec<BoundMlp<f32>> = nets.iter().map(|n| n.bind(&tape, true)).collect();
        let g = generator.decoder.bind(&tape, false);
        let s = bound[0].forward(tape.constant(w.clone()))?;
        let w2 = bound[1].forward(tape.concat(&[s, tape.constant(onehot.clone())])?)?;
        let err = proxy(generator.decode_var(&g, w2)?, tape.constant(target.clone()))?;
        let objective = err
            .add(param_distance(&tape, &bound[0], &model.forward)?.scale(config.lambda_forward)?)?
            .add(param_distance(&tape, &bound[1], &model.backward)?.scale(config.lambda_backward)?)?;
        let value = objective.value().item() as f64;
        if step == 0 {
            before = err.value().item() as f64;
        }
        if value < best {
            best = value;
            best_nets = nets.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                log::warn!("shape-specific finetuning stopped after {stale} non-improving steps");
                diverged = true;
                break;
            }
        }
        if step == config.steps {
            break;
        }
        let grads = tape.backward(objective)?;
        let g: Vec<Tensor<f32>> = bound.iter().flat_map(|b| b.params()).map(|p| grads.get_or_zeros(&p)).collect();
        let mut params: Vec<&mut Tensor<f32>> = nets.iter_mut().flat_map(|n| n.tensors_mut()).collect();
        adam.step(&mut params, &g)?;
        steps_run += 1;
    }
    let out = MappingModel {
        forward: best_nets[0].clone(),
        backward: best_nets[1].clone(),
        n_c: model.n_c,
        z: model.z,
    };
    let after = {
        let s = out.forward.infer(&w)?;
        let w2 = out.backward.infer(&Tensor::new(&[1, s.len() + 12], [s.data(), onehot.data()].concat())?)?;
        let tape = Tape::new();
        let img = tape.constant(generator.synthesize_batch(&w2)?);
        proxy(img, tape.constant(target))?.value().item() as f64
    };
    Ok(SpecificResult {
        forward_drift: distance(&out.forward, &model.forward),
        backward_drift: distance(&out.backward, &model.backward),
        model: out,
        before,
        after,
        diverged,
        steps_run,
    })
}
