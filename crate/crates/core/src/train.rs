//! Shared optimisation loop plumbing: a set of MLPs with one Adam state,
//! epoch bookkeeping, and snapshotting for resumable training.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::numcore::{Adam, AdamConfig, BoundMlp, Checkpoint, Mlp, Module, NumError, Result, Tape, Tensor, Var};
use crate::seed;

/// Networks trained together, their optimizer, and per-epoch loss history.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub nets: Vec<Mlp<f32>>,
    adam: Adam<f32>,
    pub epoch: usize,
    pub history: Vec<f64>,
}

impl Trainer {
    pub fn new(nets: Vec<Mlp<f32>>, config: AdamConfig) -> Self {
        let adam = {
            let tensors: Vec<&Tensor<f32>> = nets.iter().flat_map(|n| n.tensors()).collect();
            Adam::new(config, &tensors)
        };
        Self {
            nets,
            adam,
            epoch: 0,
            history: Vec::new(),
        }
    }

    pub fn bind<'t>(&self, tape: &'t Tape<f32>) -> Vec<BoundMlp<'t, f32>> {
        self.nets.iter().map(|n| n.bind(tape, true)).collect()
    }

    /// Backpropagates `loss` and takes one Adam step on every bound network.
    pub fn step(&mut self, tape: &Tape<f32>, bound: &[BoundMlp<'_, f32>], loss: Var<'_, f32>) -> Result<f64> {
        let value = loss.value().item() as f64;
        let grads = tape.backward(loss)?;
        let g: Vec<Tensor<f32>> = bound.iter().flat_map(|b| b.params()).map(|p| grads.get_or_zeros(&p)).collect();
        let mut params: Vec<&mut Tensor<f32>> = self.nets.iter_mut().flat_map(|n| n.tensors_mut()).collect();
        self.adam.step(&mut params, &g)?;
        Ok(value)
    }

    /// Minibatch order for the current epoch, a function of `(seed, stage, epoch)` only.
    pub fn batches(&self, seed: u64, stage: &str, count: usize, batch: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..count).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, &[seed::tag(stage), self.epoch as u64]));
        order.shuffle(&mut rng);
        order.chunks(batch.max(1)).map(<[usize]>::to_vec).collect()
    }

    pub fn end_epoch(&mut self, mean_loss: f64) {
        self.history.push(mean_loss);
        self.epoch += 1;
    }

    /// Networks under `names`, plus optimizer moments and progress.
    pub fn snapshot(&self, names: &[&str]) -> Checkpoint {
        let mut ck = Checkpoint::new();
        for (name, net) in names.iter().zip(&self.nets) {
            ck.push_module(name, net);
            ck.set_meta(&format!("{name}.dims"), mlp_dims(net));
        }
        let (first, second) = self.adam.moments();
        for (i, (m, v)) in first.iter().zip(second).enumerate() {
            ck.push(format!("adam.m.{i}"), m);
            ck.push(format!("adam.v.{i}"), v);
        }
        ck.set_meta("adam.config", self.adam.config);
        ck.set_meta("adam.step", self.adam.steps_taken());
        ck.set_meta("epoch", self.epoch);
        ck.set_meta("history", &self.history);
        ck
    }

    pub fn resume(ck: &Checkpoint, names: &[&str]) -> Result<Self> {
        let nets = names.iter().map(|n| ck.mlp(n)).collect::<Result<Vec<_>>>()?;
        let count: usize = nets.iter().map(|n| n.tensors().len()).sum();
        let first = (0..count).map(|i| ck.get(&format!("adam.m.{i}"))).collect::<Result<Vec<_>>>()?;
        let second = (0..count).map(|i| ck.get(&format!("adam.v.{i}"))).collect::<Result<Vec<_>>>()?;
        let adam = Adam::restore(ck.meta_as("adam.config")?, ck.meta_as("adam.step")?, first, second)?;
        Ok(Self {
            nets,
            adam,
            epoch: ck.meta_as("epoch")?,
            history: ck.meta_as("history")?,
        })
    }
}

pub fn mlp_dims(net: &Mlp<f32>) -> Vec<usize> {
    std::iter::once(net.input_dim())
        .chain(net.layers().iter().map(|l| l.weight.shape()[1]))
        .collect()
}

/// Stacks equally long rows into a `[rows, len]` tensor.
pub fn stack(rows: &[&[f32]]) -> Result<Tensor<f32>> {
    let len = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != len) {
        return Err(NumError::InvalidArgument {
            op: "stack",
            msg: "rows differ in length".into(),
        });
    }
    Tensor::new(&[rows.len(), len], rows.concat())
}
