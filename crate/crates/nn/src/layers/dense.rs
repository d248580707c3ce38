use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};

use crate::{NnError, Result, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Linear,
}

impl Activation {
    pub fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Sigmoid => 1,
            Activation::Linear => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Sigmoid),
            2 => Some(Activation::Linear),
            _ => None,
        }
    }

    fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Relu => z.max(T::zero()),
            Activation::Sigmoid => T::one() / (T::one() + (-z).exp()),
            Activation::Linear => z,
        }
    }

    /// Derivative expressed through the activation output `y`.
    fn derivative<T: Scalar>(self, y: T) -> T {
        match self {
            Activation::Relu => {
                if y > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Sigmoid => y * (T::one() - y),
            Activation::Linear => T::one(),
        }
    }
}

/// Fully connected layer `y = act(x·W + b)` with `W` stored as `[in, out]`.
#[derive(Clone, Debug)]
pub struct Dense<T: Scalar> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub activation: Activation,
    pub frozen: bool,
    cache: Option<(Tensor<T>, Vec<T>)>,
}

impl<T: Scalar> Dense<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>, activation: Activation) -> Result<Self> {
        if weight.shape().len() != 2 || bias.shape() != [weight.shape()[1]] {
            return Err(NnError::ShapeMismatch {
                context: "dense parameters",
                expected: vec![0, bias.len()],
                found: weight.shape().to_vec(),
            });
        }
        Ok(Self {
            weight,
            bias,
            activation,
            frozen: false,
            cache: None,
        })
    }

    pub fn init(inputs: usize, outputs: usize, activation: Activation, rng: &mut impl rand::Rng) -> Self {
        let w = super::fan_in_uniform(rng, inputs * outputs, inputs);
        Self {
            weight: Tensor::from_vec(&[inputs, outputs], w).expect("dense shape"),
            bias: Tensor::zeros(&[outputs]),
            activation,
            frozen: false,
            cache: None,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[1]
    }

    fn run(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        if input.shape().len() != 2 || input.shape()[1] != self.inputs() {
            return Err(NnError::ShapeMismatch {
                context: "dense input (N,in)",
                expected: vec![0, self.inputs()],
                found: input.shape().to_vec(),
            });
        }
        let n = input.shape()[0];
        let m = self.outputs();
        let mut out = Vec::with_capacity(n * m);
        for _ in 0..n {
            out.extend_from_slice(self.bias.data());
        }
        {
            let x = ArrayView2::from_shape((n, self.inputs()), input.data()).expect("x view");
            let w = ArrayView2::from_shape((self.inputs(), m), self.weight.data()).expect("w view");
            let mut o = ArrayViewMut2::from_shape((n, m), &mut out).expect("out view");
            general_mat_mul(T::one(), &x, &w, T::one(), &mut o);
        }
        let act = self.activation;
        out.iter_mut().for_each(|v| *v = act.apply(*v));
        Tensor::from_vec(&[n, m], out)
    }

    pub fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let out = self.run(input)?;
        let mut x = input.clone();
        x.clear_grad();
        self.cache = Some((x, out.data().to_vec()));
        Ok(out)
    }

    pub fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.run(input)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>, need_input_grad: bool) -> Result<Option<Tensor<T>>> {
        let (x, y) = self.cache.as_ref().ok_or(NnError::MissingForwardCache("dense"))?;
        let n = x.shape()[0];
        let (k, m) = (self.inputs(), self.outputs());
        if grad_out.shape() != [n, m] {
            return Err(NnError::ShapeMismatch {
                context: "dense grad_out",
                expected: vec![n, m],
                found: grad_out.shape().to_vec(),
            });
        }
        let act = self.activation;
        let dz: Vec<T> = grad_out
            .data()
            .iter()
            .zip(y)
            .map(|(&g, &yv)| g * act.derivative(yv))
            .collect();
        let dzv = ArrayView2::from_shape((n, m), &dz).expect("dz view");
        let xv = ArrayView2::from_shape((n, k), x.data()).expect("x view");

        if !self.frozen {
            let mut dw = vec![T::zero(); k * m];
            {
                let mut dwv = ArrayViewMut2::from_shape((k, m), &mut dw).expect("dw view");
                general_mat_mul(T::one(), &xv.t(), &dzv, T::zero(), &mut dwv);
            }
            let mut db = vec![T::zero(); m];
            for row in dz.chunks_exact(m) {
                for (acc, v) in db.iter_mut().zip(row) {
                    *acc = *acc + *v;
                }
            }
            self.weight.accumulate_grad(&dw);
            self.bias.accumulate_grad(&db);
        }

        if !need_input_grad {
            return Ok(None);
        }
        let mut dx = vec![T::zero(); n * k];
        {
            let w = ArrayView2::from_shape((k, m), self.weight.data()).expect("w view");
            let mut dxv = ArrayViewMut2::from_shape((n, k), &mut dx).expect("dx view");
            general_mat_mul(T::one(), &dzv, &w.t(), T::zero(), &mut dxv);
        }
        Tensor::from_vec(&[n, k], dx).map(Some)
    }

    pub(crate) fn signature(&self) -> Vec<u32> {
        match (&self.cache, self.activation) {
            (Some((_, y)), Activation::Relu) => y.iter().map(|&v| (v > T::zero()) as u32).collect(),
            _ => Vec::new(),
        }
    }

    pub(crate) fn clear_cache(&mut self) {
        self.cache = None;
    }

    pub(crate) fn cast<U: Scalar>(&self) -> Dense<U> {
        Dense {
            weight: self.weight.cast(),
            bias: self.bias.cast(),
            activation: self.activation,
            frozen: self.frozen,
            cache: None,
        }
    }
}

/// Stand-alone affine map plus activation. `input` may be a vector `[N]`
/// or a batch `[B, N]`.
pub fn fc_forward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    activation: Activation,
) -> Result<Tensor<T>> {
    let layer = Dense::new(weights.clone(), bias.clone(), activation)?;
    if input.shape().len() == 1 {
        let out = layer.infer(&input.clone().reshape(&[1, input.len()])?)?;
        out.reshape(&[layer.outputs()])
    } else {
        layer.infer(input)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_sigmoid_layer_outputs_half() {
        let out = fc_forward(
            &Tensor::from_vec(&[3], vec![0.3f32, -2.0, 7.0]).unwrap(),
            &Tensor::zeros(&[3, 4]),
            &Tensor::zeros(&[4]),
            Activation::Sigmoid,
        )
        .unwrap();
        assert_eq!(out.data(), &[0.5; 4]);
    }

    #[test]
    fn identity_linear_layer() {
        let mut eye = vec![0.0f64; 9];
        for i in 0..3 {
            eye[i * 3 + i] = 1.0;
        }
        let x = Tensor::from_vec(&[3], vec![1.5, -0.25, 4.0]).unwrap();
        let out = fc_forward(&x, &Tensor::from_vec(&[3, 3], eye).unwrap(), &Tensor::zeros(&[3]), Activation::Linear).unwrap();
        assert_eq!(out.data(), x.data());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let x = Tensor::<f32>::zeros(&[2, 5]);
        let err = fc_forward(&x, &Tensor::zeros(&[4, 3]), &Tensor::zeros(&[3]), Activation::Relu);
        assert!(matches!(err, Err(NnError::ShapeMismatch { .. })));
    }

    #[test]
    fn activation_codes_roundtrip() {
        for a in [Activation::Relu, Activation::Sigmoid, Activation::Linear] {
            assert_eq!(Activation::from_code(a.code()), Some(a));
        }
        assert_eq!(Activation::from_code(9), None);
    }
}
