use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};
use rayon::prelude::*;

use crate::{NnError, Result, Scalar, Tensor};

/// 3×3 convolution, stride 1, zero "same" padding, NHWC layout.
///
/// The kernel is stored as `[3, 3, C, K]` so that, flattened, it is the
/// `[9C, K]` matrix multiplied against the im2col patches.
#[derive(Clone, Debug)]
pub struct Conv2d<T: Scalar> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub frozen: bool,
    cache: Option<ConvCache<T>>,
}

#[derive(Clone, Debug)]
struct ConvCache<T> {
    input_shape: [usize; 4],
    cols: Vec<Vec<T>>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let ws = weight.shape();
        if ws.len() != 4 || ws[0] != 3 || ws[1] != 3 {
            return Err(NnError::ShapeMismatch {
                context: "conv2d kernel",
                expected: vec![3, 3, 0, 0],
                found: ws.to_vec(),
            });
        }
        if bias.shape() != [ws[3]] {
            return Err(NnError::ShapeMismatch {
                context: "conv2d bias",
                expected: vec![ws[3]],
                found: bias.shape().to_vec(),
            });
        }
        Ok(Self {
            weight,
            bias,
            frozen: false,
            cache: None,
        })
    }

    pub fn init(in_channels: usize, out_channels: usize, rng: &mut impl rand::Rng) -> Self {
        let fan_in = 9 * in_channels;
        let w = super::fan_in_uniform(rng, fan_in * out_channels, fan_in);
        Self {
            weight: Tensor::from_vec(&[3, 3, in_channels, out_channels], w).expect("kernel shape"),
            bias: Tensor::zeros(&[out_channels]),
            frozen: false,
            cache: None,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[3]
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<[usize; 4]> {
        input.expect_rank(4, "conv2d input (N,H,W,C)")?;
        let s = input.shape();
        if s[3] != self.in_channels() {
            return Err(NnError::ChannelMismatch {
                input: s[3],
                kernel: self.in_channels(),
            });
        }
        Ok([s[0], s[1], s[2], s[3]])
    }

    fn run(&self, input: &Tensor<T>, keep_cols: bool) -> Result<(Tensor<T>, Option<ConvCache<T>>)> {
        let [n, h, w, c] = self.check_input(input)?;
        let k = self.out_channels();
        let hw = h * w;
        let image_len = hw * c;
        let kernel = ArrayView2::from_shape((9 * c, k), self.weight.data()).expect("kernel view");
        let bias = self.bias.data();

        let per_image: Vec<(Vec<T>, Vec<T>)> = input
            .data()
            .par_chunks(image_len.max(1))
            .take(n)
            .map(|img| {
                let cols = im2col(img, h, w, c);
                let mut out = Vec::with_capacity(hw * k);
                for _ in 0..hw {
                    out.extend_from_slice(bias);
                }
                {
                    let colv = ArrayView2::from_shape((hw, 9 * c), &cols).expect("cols view");
                    let mut outv =
                        ArrayViewMut2::from_shape((hw, k), &mut out).expect("out view");
                    general_mat_mul(T::one(), &colv, &kernel, T::one(), &mut outv);
                }
                (out, if keep_cols { cols } else { Vec::new() })
            })
            .collect();

        let mut data = Vec::with_capacity(n * hw * k);
        let mut all_cols = Vec::with_capacity(if keep_cols { n } else { 0 });
        for (out, cols) in per_image {
            data.extend_from_slice(&out);
            if keep_cols {
                all_cols.push(cols);
            }
        }
        let out = Tensor::from_vec(&[n, h, w, k], data)?;
        let cache = keep_cols.then(|| ConvCache {
            input_shape: [n, h, w, c],
            cols: all_cols,
        });
        Ok((out, cache))
    }

    pub fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let (out, cache) = self.run(input, true)?;
        self.cache = cache;
        Ok(out)
    }

    pub fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.run(input, false).map(|(out, _)| out)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>, need_input_grad: bool) -> Result<Option<Tensor<T>>> {
        let cache = self.cache.as_ref().ok_or(NnError::MissingForwardCache("conv2d"))?;
        let [n, h, w, c] = cache.input_shape;
        let k = self.out_channels();
        let hw = h * w;
        if grad_out.shape() != [n, h, w, k] {
            return Err(NnError::ShapeMismatch {
                context: "conv2d grad_out",
                expected: vec![n, h, w, k],
                found: grad_out.shape().to_vec(),
            });
        }
        let kernel = ArrayView2::from_shape((9 * c, k), self.weight.data()).expect("kernel view");
        let want_params = !self.frozen;

        let parts: Vec<(Vec<T>, Vec<T>)> = grad_out
            .data()
            .par_chunks(hw * k)
            .zip(cache.cols.par_iter())
            .map(|(g, cols)| {
                let gv = ArrayView2::from_shape((hw, k), g).expect("grad view");
                let mut dw = Vec::new();
                if want_params {
                    dw = vec![T::zero(); 9 * c * k];
                    let colv = ArrayView2::from_shape((hw, 9 * c), cols).expect("cols view");
                    let mut dwv = ArrayViewMut2::from_shape((9 * c, k), &mut dw).expect("dw view");
                    general_mat_mul(T::one(), &colv.t(), &gv, T::zero(), &mut dwv);
                }
                let mut dx = Vec::new();
                if need_input_grad {
                    let mut dcols = vec![T::zero(); hw * 9 * c];
                    {
                        let mut dcv =
                            ArrayViewMut2::from_shape((hw, 9 * c), &mut dcols).expect("dcols view");
                        general_mat_mul(T::one(), &gv, &kernel.t(), T::zero(), &mut dcv);
                    }
                    dx = col2im(&dcols, h, w, c);
                }
                (dw, dx)
            })
            .collect();

        if want_params {
            let mut dw = vec![T::zero(); 9 * c * k];
            for (part, _) in &parts {
                for (acc, v) in dw.iter_mut().zip(part) {
                    *acc = *acc + *v;
                }
            }
            let mut db = vec![T::zero(); k];
            for px in grad_out.data().chunks_exact(k) {
                for (acc, v) in db.iter_mut().zip(px) {
                    *acc = *acc + *v;
                }
            }
            self.weight.accumulate_grad(&dw);
            self.bias.accumulate_grad(&db);
        }

        if !need_input_grad {
            return Ok(None);
        }
        let mut dx = Vec::with_capacity(n * hw * c);
        for (_, part) in parts {
            dx.extend_from_slice(&part);
        }
        Tensor::from_vec(&[n, h, w, c], dx).map(Some)
    }

    pub(crate) fn clear_cache(&mut self) {
        self.cache = None;
    }

    pub(crate) fn cast<U: Scalar>(&self) -> Conv2d<U> {
        Conv2d {
            weight: self.weight.cast(),
            bias: self.bias.cast(),
            frozen: self.frozen,
            cache: None,
        }
    }
}

/// Patch matrix `[H·W, 9·C]`, column order (ky, kx, c).
fn im2col<T: Scalar>(img: &[T], h: usize, w: usize, c: usize) -> Vec<T> {
    let row = 9 * c;
    let mut cols = vec![T::zero(); h * w * row];
    for y in 0..h {
        for x in 0..w {
            let base = (y * w + x) * row;
            for ky in 0..3 {
                let iy = y as isize + ky as isize - 1;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..3 {
                    let ix = x as isize + kx as isize - 1;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let src = (iy as usize * w + ix as usize) * c;
                    let dst = base + (ky * 3 + kx) * c;
                    cols[dst..dst + c].copy_from_slice(&img[src..src + c]);
                }
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(cols: &[T], h: usize, w: usize, c: usize) -> Vec<T> {
    let row = 9 * c;
    let mut img = vec![T::zero(); h * w * c];
    for y in 0..h {
        for x in 0..w {
            let base = (y * w + x) * row;
            for ky in 0..3 {
                let iy = y as isize + ky as isize - 1;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..3 {
                    let ix = x as isize + kx as isize - 1;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let dst = (iy as usize * w + ix as usize) * c;
                    let src = base + (ky * 3 + kx) * c;
                    for ci in 0..c {
                        img[dst + ci] = img[dst + ci] + cols[src + ci];
                    }
                }
            }
        }
    }
    img
}

/// Stand-alone same-padded 3×3 cross-correlation.
///
/// `input` is `[H, W, C]` or `[N, H, W, C]`; the result has the same rank.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let layer = Conv2d::new(kernel.clone(), bias.clone())?;
    if input.shape().len() == 3 {
        let s = input.shape().to_vec();
        let batched = input.clone().reshape(&[1, s[0], s[1], s[2]])?;
        let out = layer.infer(&batched)?;
        let k = layer.out_channels();
        out.reshape(&[s[0], s[1], k])
    } else {
        layer.infer(input)
    }
}
