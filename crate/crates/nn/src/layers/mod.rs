//! Layer vocabulary of the network and the shared forward context.

mod batchnorm;
mod conv;
mod dense;
mod dropout;
mod pool;
mod simple;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Result, Scalar, Tensor};

pub use batchnorm::BatchNorm;
pub use conv::{conv2d_forward, Conv2d};
pub use dense::{fc_forward, Activation, Dense};
pub use dropout::{dropout, Dropout};
pub use pool::{maxpool_half, MaxPool2};
pub use simple::{Flatten, Relu};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-forward-pass state: the mode and the dropout random stream.
pub struct ForwardCtx {
    pub mode: Mode,
    pub rng: ChaCha8Rng,
}

impl ForwardCtx {
    pub fn new(mode: Mode, seed: u64) -> Self {
        Self {
            mode,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn eval() -> Self {
        Self::new(Mode::Eval, 0)
    }
}

/// One layer of a sequential stack.
#[derive(Clone, Debug)]
pub enum Layer<T: Scalar> {
    Conv(Conv2d<T>),
    BatchNorm(BatchNorm<T>),
    Relu(Relu),
    MaxPool(MaxPool2),
    Flatten(Flatten),
    Dense(Dense<T>),
    Dropout(Dropout<T>),
}

impl<T: Scalar> Layer<T> {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv3x3",
            Layer::BatchNorm(_) => "batchnorm",
            Layer::Relu(_) => "relu",
            Layer::MaxPool(_) => "maxpool2",
            Layer::Flatten(_) => "flatten",
            Layer::Dense(_) => "dense",
            Layer::Dropout(_) => "dropout",
        }
    }

    /// Forward pass that caches what the backward pass needs.
    pub fn forward(&mut self, input: &Tensor<T>, ctx: &mut ForwardCtx) -> Result<Tensor<T>> {
        match self {
            Layer::Conv(l) => l.forward(input),
            Layer::BatchNorm(l) => l.forward(input, ctx.mode),
            Layer::Relu(l) => l.forward(input),
            Layer::MaxPool(l) => l.forward(input),
            Layer::Flatten(l) => l.forward(input),
            Layer::Dense(l) => l.forward(input),
            Layer::Dropout(l) => l.forward(input, ctx),
        }
    }

    /// Eval-mode forward pass without touching any cache.
    pub fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Conv(l) => l.infer(input),
            Layer::BatchNorm(l) => l.infer(input),
            Layer::Relu(_) => Ok(Relu::apply(input)),
            Layer::MaxPool(_) => MaxPool2::apply(input).map(|(out, _)| out),
            Layer::Flatten(_) => Flatten::apply(input),
            Layer::Dense(l) => l.infer(input),
            Layer::Dropout(_) => Ok(input.clone()),
        }
    }

    /// Backward pass. Parameter gradients are accumulated unless the layer is
    /// frozen; the input gradient is only computed when `need_input_grad`.
    pub fn backward(
        &mut self,
        grad_out: &Tensor<T>,
        need_input_grad: bool,
    ) -> Result<Option<Tensor<T>>> {
        match self {
            Layer::Conv(l) => l.backward(grad_out, need_input_grad),
            Layer::BatchNorm(l) => l.backward(grad_out, need_input_grad),
            Layer::Relu(l) => l.backward(grad_out).map(Some),
            Layer::MaxPool(l) => l.backward(grad_out).map(Some),
            Layer::Flatten(l) => l.backward(grad_out).map(Some),
            Layer::Dense(l) => l.backward(grad_out, need_input_grad),
            Layer::Dropout(l) => l.backward(grad_out).map(Some),
        }
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        match self {
            Layer::Conv(l) => vec![&l.weight, &l.bias],
            Layer::BatchNorm(l) => vec![&l.gamma, &l.beta],
            Layer::Dense(l) => vec![&l.weight, &l.bias],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            Layer::Conv(l) => vec![&mut l.weight, &mut l.bias],
            Layer::BatchNorm(l) => vec![&mut l.gamma, &mut l.beta],
            Layer::Dense(l) => vec![&mut l.weight, &mut l.bias],
            _ => Vec::new(),
        }
    }

    /// Parameters followed by non-trainable buffers (running statistics).
    pub fn state(&self) -> Vec<&Tensor<T>> {
        match self {
            Layer::BatchNorm(l) => vec![&l.gamma, &l.beta, &l.running_mean, &l.running_var],
            _ => self.params(),
        }
    }

    pub fn state_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            Layer::BatchNorm(l) => vec![
                &mut l.gamma,
                &mut l.beta,
                &mut l.running_mean,
                &mut l.running_var,
            ],
            _ => self.params_mut(),
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, Layer::Conv(_) | Layer::BatchNorm(_) | Layer::Dense(_))
    }

    pub fn is_frozen(&self) -> bool {
        match self {
            Layer::Conv(l) => l.frozen,
            Layer::BatchNorm(l) => l.frozen,
            Layer::Dense(l) => l.frozen,
            _ => false,
        }
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        match self {
            Layer::Conv(l) => l.frozen = frozen,
            Layer::BatchNorm(l) => l.frozen = frozen,
            Layer::Dense(l) => l.frozen = frozen,
            _ => {}
        }
    }

    /// True for layers whose train-mode output depends on the random stream.
    pub fn is_stochastic(&self) -> bool {
        matches!(self, Layer::Dropout(d) if d.rate > 0.0)
    }

    /// Discrete branch decisions made in the last forward pass (ReLU signs,
    /// pooling winners). A finite-difference probe that changes this
    /// signature straddled a kink.
    pub fn kink_signature(&self) -> Vec<u32> {
        match self {
            Layer::Relu(l) => l.signature(),
            Layer::MaxPool(l) => l.signature(),
            Layer::Dense(l) => l.signature(),
            _ => Vec::new(),
        }
    }

    pub fn clear_cache(&mut self) {
        match self {
            Layer::Conv(l) => l.clear_cache(),
            Layer::BatchNorm(l) => l.clear_cache(),
            Layer::Relu(l) => l.clear_cache(),
            Layer::MaxPool(l) => l.clear_cache(),
            Layer::Flatten(l) => l.clear_cache(),
            Layer::Dense(l) => l.clear_cache(),
            Layer::Dropout(l) => l.clear_cache(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Layer<U> {
        match self {
            Layer::Conv(l) => Layer::Conv(l.cast()),
            Layer::BatchNorm(l) => Layer::BatchNorm(l.cast()),
            Layer::Relu(_) => Layer::Relu(Relu::default()),
            Layer::MaxPool(_) => Layer::MaxPool(MaxPool2::default()),
            Layer::Flatten(_) => Layer::Flatten(Flatten::default()),
            Layer::Dense(l) => Layer::Dense(l.cast()),
            Layer::Dropout(l) => Layer::Dropout(Dropout::new(l.rate)),
        }
    }
}

/// Uniform fan-in scaled initialization, variance 1/fan_in.
pub(crate) fn fan_in_uniform<T: Scalar>(
    rng: &mut impl rand::Rng,
    len: usize,
    fan_in: usize,
) -> Vec<T> {
    let bound = (3.0 / fan_in as f64).sqrt();
    (0..len)
        .map(|_| T::of(rng.random_range(-bound..bound)))
        .collect()
}
