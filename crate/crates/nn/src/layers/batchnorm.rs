use super::Mode;
use crate::{NnError, Result, Scalar, Tensor};

/// Per-channel batch normalization over every axis except the last.
///
/// Running statistics follow `running = momentum·running + (1 − momentum)·batch`,
/// with the unbiased batch variance. A frozen layer always normalizes with
/// its running statistics and never updates them.
#[derive(Clone, Debug)]
pub struct BatchNorm<T: Scalar> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub momentum: f64,
    pub eps: f64,
    pub frozen: bool,
    cache: Option<BnCache<T>>,
}

#[derive(Clone, Debug)]
struct BnCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<f64>,
    batch_stats: bool,
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

impl<T: Scalar> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::filled(&[channels], T::one()),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], T::one()),
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
            frozen: false,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self, input: &Tensor<T>) -> Result<usize> {
        let c = self.channels();
        if input.shape().len() < 2 || *input.shape().last().unwrap() != c {
            return Err(NnError::ShapeMismatch {
                context: "batchnorm input (N,...,C)",
                expected: vec![0, c],
                found: input.shape().to_vec(),
            });
        }
        Ok(c)
    }

    fn normalize_with(
        &self,
        input: &Tensor<T>,
        mean: &[f64],
        inv_std: &[f64],
    ) -> (Tensor<T>, Vec<T>) {
        let c = mean.len();
        let gamma = self.gamma.data();
        let beta = self.beta.data();
        let mut xhat = Vec::with_capacity(input.len());
        let mut out = Vec::with_capacity(input.len());
        for px in input.data().chunks_exact(c) {
            for ch in 0..c {
                let xh = T::of((px[ch].as_f64() - mean[ch]) * inv_std[ch]);
                xhat.push(xh);
                out.push(gamma[ch] * xh + beta[ch]);
            }
        }
        let out = Tensor::from_vec(input.shape(), out).expect("same shape");
        (out, xhat)
    }

    fn running_stats(&self) -> (Vec<f64>, Vec<f64>) {
        let mean = self.running_mean.data().iter().map(|v| v.as_f64()).collect();
        let inv_std = self
            .running_var
            .data()
            .iter()
            .map(|v| 1.0 / (v.as_f64() + self.eps).sqrt())
            .collect();
        (mean, inv_std)
    }

    pub fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let c = self.check(input)?;
        let use_batch = mode == Mode::Train && !self.frozen;
        if !use_batch {
            let (mean, inv_std) = self.running_stats();
            let (out, xhat) = self.normalize_with(input, &mean, &inv_std);
            self.cache = Some(BnCache {
                xhat,
                inv_std,
                batch_stats: false,
            });
            return Ok(out);
        }
        let n = input.shape()[0];
        if n < 2 {
            return Err(NnError::BatchTooSmall(n));
        }
        let m = input.len() / c;
        let mut sum = vec![0.0f64; c];
        for px in input.data().chunks_exact(c) {
            for ch in 0..c {
                sum[ch] += px[ch].as_f64();
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / m as f64).collect();
        let mut sq = vec![0.0f64; c];
        for px in input.data().chunks_exact(c) {
            for ch in 0..c {
                let d = px[ch].as_f64() - mean[ch];
                sq[ch] += d * d;
            }
        }
        let var: Vec<f64> = sq.iter().map(|s| s / m as f64).collect();
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let (out, xhat) = self.normalize_with(input, &mean, &inv_std);

        let mom = self.momentum;
        let unbias = if m > 1 { m as f64 / (m as f64 - 1.0) } else { 1.0 };
        for (r, b) in self.running_mean.data_mut().iter_mut().zip(&mean) {
            *r = T::of(mom * r.as_f64() + (1.0 - mom) * b);
        }
        for (r, b) in self.running_var.data_mut().iter_mut().zip(&var) {
            *r = T::of(mom * r.as_f64() + (1.0 - mom) * b * unbias);
        }
        self.cache = Some(BnCache {
            xhat,
            inv_std,
            batch_stats: true,
        });
        Ok(out)
    }

    pub fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(input)?;
        let (mean, inv_std) = self.running_stats();
        Ok(self.normalize_with(input, &mean, &inv_std).0)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>, need_input_grad: bool) -> Result<Option<Tensor<T>>> {
        let cache = self
            .cache
            .as_ref()
            .ok_or(NnError::MissingForwardCache("batchnorm"))?;
        let c = self.channels();
        if grad_out.len() != cache.xhat.len() {
            return Err(NnError::ShapeMismatch {
                context: "batchnorm grad_out",
                expected: vec![cache.xhat.len()],
                found: grad_out.shape().to_vec(),
            });
        }
        let m = grad_out.len() / c;
        let mut sum_dy = vec![0.0f64; c];
        let mut sum_dy_xhat = vec![0.0f64; c];
        for (g, xh) in grad_out.data().chunks_exact(c).zip(cache.xhat.chunks_exact(c)) {
            for ch in 0..c {
                sum_dy[ch] += g[ch].as_f64();
                sum_dy_xhat[ch] += g[ch].as_f64() * xh[ch].as_f64();
            }
        }
        let gamma: Vec<f64> = self.gamma.data().iter().map(|v| v.as_f64()).collect();
        let dx = need_input_grad.then(|| {
            let mut dx = Vec::with_capacity(grad_out.len());
            for (g, xh) in grad_out.data().chunks_exact(c).zip(cache.xhat.chunks_exact(c)) {
                for ch in 0..c {
                    let scale = gamma[ch] * cache.inv_std[ch];
                    let v = if cache.batch_stats {
                        scale / m as f64
                            * (m as f64 * g[ch].as_f64()
                                - sum_dy[ch]
                                - xh[ch].as_f64() * sum_dy_xhat[ch])
                    } else {
                        scale * g[ch].as_f64()
                    };
                    dx.push(T::of(v));
                }
            }
            dx
        });
        if !self.frozen {
            let dg: Vec<T> = sum_dy_xhat.iter().map(|&v| T::of(v)).collect();
            let db: Vec<T> = sum_dy.iter().map(|&v| T::of(v)).collect();
            self.gamma.accumulate_grad(&dg);
            self.beta.accumulate_grad(&db);
        }
        match dx {
            Some(dx) => Tensor::from_vec(grad_out.shape(), dx).map(Some),
            None => Ok(None),
        }
    }

    pub(crate) fn clear_cache(&mut self) {
        self.cache = None;
    }

    pub(crate) fn cast<U: Scalar>(&self) -> BatchNorm<U> {
        BatchNorm {
            gamma: self.gamma.cast(),
            beta: self.beta.cast(),
            running_mean: self.running_mean.cast(),
            running_var: self.running_var.cast(),
            momentum: self.momentum,
            eps: self.eps,
            frozen: self.frozen,
            cache: None,
        }
    }
}
