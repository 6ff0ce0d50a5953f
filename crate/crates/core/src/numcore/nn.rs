use rand::Rng;

use super::error::{arg_err, Result};
use super::{Scalar, Tape, Tensor, Var};

/// Negative slope shared by every hidden activation.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Named parameter access for checkpointing and optimizers.
pub trait Module<S: Scalar> {
    fn named_tensors(&self) -> Vec<(String, &Tensor<S>)>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor<S>>;

    fn tensors(&self) -> Vec<&Tensor<S>> {
        self.named_tensors().into_iter().map(|(_, t)| t).collect()
    }

    fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense<S> {
    /// `[in, out]`
    pub weight: Tensor<S>,
    /// `[out]`
    pub bias: Tensor<S>,
}

/// Affine layers with leaky-ReLU between them and a linear output.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<S> {
    layers: Vec<Dense<S>>,
}

/// An [`Mlp`] whose parameters live on a tape.
pub struct BoundMlp<'t, S: Scalar> {
    layers: Vec<(Var<'t, S>, Var<'t, S>)>,
}

impl<S: Scalar> Mlp<S> {
    /// Fan-in scaled normal init (He init adjusted for the leaky slope), zero bias.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least input and output widths");
        let gain = (2.0 / (1.0 + LEAKY_SLOPE * LEAKY_SLOPE)).sqrt();
        let layers = dims
            .windows(2)
            .map(|w| Dense {
                weight: Tensor::randn(&[w[0], w[1]], gain / (w[0] as f64).sqrt(), rng),
                bias: Tensor::zeros(&[w[1]]),
            })
            .collect();
        Self { layers }
    }

    pub fn from_layers(layers: Vec<Dense<S>>) -> Result<Self> {
        if layers.is_empty() {
            return arg_err("mlp", "no layers");
        }
        for pair in layers.windows(2) {
            if pair[0].weight.shape()[1] != pair[1].weight.shape()[0] {
                return arg_err("mlp", "consecutive layer widths disagree");
            }
        }
        for l in &layers {
            if l.weight.shape().len() != 2 || l.bias.shape() != [l.weight.shape()[1]] {
                return arg_err("mlp", format!("bad layer shapes {:?}/{:?}", l.weight.shape(), l.bias.shape()));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Dense<S>] {
        &self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].weight.shape()[1]
    }

    pub fn bind<'t>(&self, tape: &'t Tape<S>, trainable: bool) -> BoundMlp<'t, S> {
        BoundMlp {
            layers: self
                .layers
                .iter()
                .map(|l| (tape.leaf(l.weight.clone(), trainable), tape.leaf(l.bias.clone(), trainable)))
                .collect(),
        }
    }

    /// Forward pass on a detached batch `[B, in]`.
    pub fn infer(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let tape = Tape::new();
        let net = self.bind(&tape, false);
        let out = net.forward(tape.constant(x.clone()))?;
        Ok((*out.value()).clone())
    }

    pub fn cast<T: Scalar>(&self) -> Mlp<T> {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    weight: l.weight.cast(),
                    bias: l.bias.cast(),
                })
                .collect(),
        }
    }
}

impl<S: Scalar> Module<S> for Mlp<S> {
    fn named_tensors(&self) -> Vec<(String, &Tensor<S>)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| [(format!("{i}.weight"), &l.weight), (format!("{i}.bias"), &l.bias)])
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<S>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }
}

impl<'t, S: Scalar> BoundMlp<'t, S> {
    /// Network over existing `[weight, bias, ...]` handles.
    pub fn from_params(params: &[Var<'t, S>]) -> Self {
        assert!(!params.is_empty() && params.len() % 2 == 0, "weight/bias pairs");
        Self {
            layers: params.chunks(2).map(|p| (p[0], p[1])).collect(),
        }
    }

    pub fn forward(&self, x: Var<'t, S>) -> Result<Var<'t, S>> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, (w, b)) in self.layers.iter().enumerate() {
            h = h.matmul(*w)?.add(*b)?;
            if i < last {
                h = h.leaky_relu(LEAKY_SLOPE)?;
            }
        }
        Ok(h)
    }

    /// Parameter handles in the same order as [`Module::tensors_mut`].
    pub fn params(&self) -> Vec<Var<'t, S>> {
        self.layers.iter().flat_map(|(w, b)| [*w, *b]).collect()
    }
}
