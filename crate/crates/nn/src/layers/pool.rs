use crate::{NnError, Result, Scalar, Tensor};

/// Non-overlapping 2×2 max pooling on NHWC tensors.
///
/// The gradient goes to the first maximal element of each window in
/// row-major order.
#[derive(Clone, Debug, Default)]
pub struct MaxPool2 {
    argmax: Option<(Vec<usize>, Vec<usize>)>,
}

impl MaxPool2 {
    pub(crate) fn apply<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
        input.expect_rank(4, "maxpool input (N,H,W,C)")?;
        let s = input.shape();
        let (n, h, w, c) = (s[0], s[1], s[2], s[3]);
        if h % 2 != 0 || w % 2 != 0 {
            return Err(NnError::OddDimensions { height: h, width: w });
        }
        let (oh, ow) = (h / 2, w / 2);
        let data = input.data();
        let mut out = Vec::with_capacity(n * oh * ow * c);
        let mut arg = Vec::with_capacity(n * oh * ow * c);
        for b in 0..n {
            for oy in 0..oh {
                for ox in 0..ow {
                    for ch in 0..c {
                        let mut best_idx = ((b * h + 2 * oy) * w + 2 * ox) * c + ch;
                        let mut best = data[best_idx];
                        for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                            let idx = ((b * h + 2 * oy + dy) * w + 2 * ox + dx) * c + ch;
                            if data[idx] > best {
                                best = data[idx];
                                best_idx = idx;
                            }
                        }
                        out.push(best);
                        arg.push(best_idx);
                    }
                }
            }
        }
        Ok((Tensor::from_vec(&[n, oh, ow, c], out)?, arg))
    }

    pub fn forward<T: Scalar>(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let (out, arg) = Self::apply(input)?;
        self.argmax = Some((input.shape().to_vec(), arg));
        Ok(out)
    }

    pub fn backward<T: Scalar>(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let (shape, arg) = self
            .argmax
            .as_ref()
            .ok_or(NnError::MissingForwardCache("maxpool2"))?;
        if grad_out.len() != arg.len() {
            return Err(NnError::ShapeMismatch {
                context: "maxpool grad_out",
                expected: vec![arg.len()],
                found: grad_out.shape().to_vec(),
            });
        }
        let mut dx = Tensor::zeros(shape);
        let d = dx.data_mut();
        for (&idx, &g) in arg.iter().zip(grad_out.data()) {
            d[idx] = d[idx] + g;
        }
        Ok(dx)
    }

    pub(crate) fn signature(&self) -> Vec<u32> {
        self.argmax
            .as_ref()
            .map(|(_, a)| a.iter().map(|&i| i as u32).collect())
            .unwrap_or_default()
    }

    pub(crate) fn clear_cache(&mut self) {
        self.argmax = None;
    }
}

/// Halves both spatial dimensions of an `[H, W, C]` or `[N, H, W, C]` tensor.
pub fn maxpool_half<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    if input.shape().len() == 3 {
        let s = input.shape().to_vec();
        let batched = input.clone().reshape(&[1, s[0], s[1], s[2]])?;
        let (out, _) = MaxPool2::apply(&batched)?;
        out.reshape(&[s[0] / 2, s[1] / 2, s[2]])
    } else {
        MaxPool2::apply(input).map(|(out, _)| out)
    }
}
