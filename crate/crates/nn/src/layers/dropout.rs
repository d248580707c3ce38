use rand::Rng;

use super::{ForwardCtx, Mode};
use crate::{NnError, Result, Scalar, Tensor};

/// Inverted dropout: survivors are scaled by `1 / (1 − rate)` at train time,
/// eval mode is the identity.
#[derive(Clone, Debug)]
pub struct Dropout<T: Scalar> {
    pub rate: f64,
    mask: Option<Vec<T>>,
}

impl<T: Scalar> Dropout<T> {
    pub fn new(rate: f64) -> Self {
        Self { rate, mask: None }
    }

    pub fn forward(&mut self, input: &Tensor<T>, ctx: &mut ForwardCtx) -> Result<Tensor<T>> {
        if !(0.0..1.0).contains(&self.rate) {
            return Err(NnError::InvalidArgument(format!(
                "dropout rate must be in [0, 1), got {}",
                self.rate
            )));
        }
        if ctx.mode == Mode::Eval || self.rate == 0.0 {
            self.mask = None;
            let mut out = input.clone();
            out.clear_grad();
            return Ok(out);
        }
        let keep = T::of(1.0 / (1.0 - self.rate));
        let mask: Vec<T> = (0..input.len())
            .map(|_| {
                if ctx.rng.random::<f64>() < self.rate {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let data = input.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        self.mask = Some(mask);
        Tensor::from_vec(input.shape(), data)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        match &self.mask {
            None => {
                let mut g = grad_out.clone();
                g.clear_grad();
                Ok(g)
            }
            Some(mask) => {
                let data = grad_out.data().iter().zip(mask).map(|(&g, &m)| g * m).collect();
                Tensor::from_vec(grad_out.shape(), data)
            }
        }
    }

    pub(crate) fn clear_cache(&mut self) {
        self.mask = None;
    }
}

/// Applies dropout once with a dedicated seeded stream.
pub fn dropout<T: Scalar>(input: &Tensor<T>, rate: f64, mode: Mode, seed: u64) -> Result<Tensor<T>> {
    let mut ctx = ForwardCtx::new(mode, seed);
    Dropout::new(rate).forward(input, &mut ctx)
}
