//! Small 64-bit differentiable core: each layer caches what its backward
//! pass needs and accumulates parameter gradients in place.
//!
//! Activations are 2-D, one row per token; sequences are stacked row-wise.

mod attention;
mod checkpoint;
pub mod gradcheck;
mod layers;
mod loss;
mod optim;

pub use attention::MultiHeadAttention;
pub use checkpoint::{Checkpoint, NamedTensor, RngState, CHECKPOINT_VERSION};
pub use layers::{softmax_rows, Dropout, Embedding, Gelu, LayerNorm, Linear, Relu, Softmax};
pub use loss::{huber, huber_quantile_loss, QUANTILES};
pub use optim::{AdamW, AdamWConfig, AdamWState, LrSchedule};

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

pub type Rng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A named trainable tensor with its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Array2<f64>,
    pub grad: Array2<f64>,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Array2<f64>) -> Self {
        let grad = Array2::zeros(value.raw_dim());
        Self {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.value.nrows(), self.value.ncols()]
    }
}

pub trait Module {
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.grad.fill(0.0);
        }
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }
}

/// Forward-pass state: training flag and the dropout RNG.
pub struct Ctx {
    pub train: bool,
    pub rng: Rng,
}

impl Ctx {
    pub fn eval() -> Self {
        Self {
            train: false,
            rng: rng_from_seed(0),
        }
    }

    pub fn train(rng: Rng) -> Self {
        Self { train: true, rng }
    }
}

pub trait Layer: Module {
    fn forward(&mut self, x: &Array2<f64>, ctx: &mut Ctx) -> Result<Array2<f64>>;
    /// Gradient w.r.t. the input of the most recent forward; adds parameter
    /// gradients into `Param::grad`.
    fn backward(&mut self, grad: &Array2<f64>) -> Array2<f64>;
}
