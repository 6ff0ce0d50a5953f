use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{MappingConfig, ViewVector, VIEW_COUNT};
use crate::numcore::{softmax_rows, Checkpoint, Mlp, NumError, Result, Tensor};
use crate::seed;

/// `M_V: w -> 12-way view distribution`.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewPredictor {
    pub net: Mlp<f32>,
}

impl ViewPredictor {
    pub fn new(d: usize, config: &MappingConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, &[seed::tag("view.init")]));
        Self {
            net: Mlp::new(&config.dims(d, VIEW_COUNT), &mut rng),
        }
    }

    /// Row-wise softmax probabilities `[N, 12]`.
    pub fn probabilities(&self, w: &Tensor<f32>) -> Result<Tensor<f32>> {
        if w.shape().len() != 2 || w.shape()[1] != self.net.input_dim() {
            return Err(NumError::ShapeMismatch {
                op: "predict_view",
                lhs: vec![self.net.input_dim()],
                rhs: w.shape().to_vec(),
            });
        }
        softmax_rows(&self.net.infer(w)?)
    }

    pub fn predict_batch(&self, w: &Tensor<f32>) -> Result<Vec<ViewVector>> {
        let p = self.probabilities(w)?;
        (0..p.rows())
            .map(|r| {
                let row = p.row(r);
                // first maximum wins, so ties resolve deterministically
                let k = (0..row.len()).fold(0, |best, i| if row[i] > row[best] { i } else { best });
                ViewVector::new(k)
            })
            .collect()
    }

    pub fn predict_view(&self, w: &[f32]) -> Result<ViewVector> {
        Ok(self.predict_batch(&Tensor::new(&[1, w.len()], w.to_vec())?)?[0])
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.push_module("view", &self.net);
        ck.set_meta("views", VIEW_COUNT);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let net = ck.mlp("view")?;
        if net.output_dim() != VIEW_COUNT {
            return Err(NumError::Checkpoint("view predictor must output 12 logits".into()));
        }
        Ok(Self { net })
    }
}
