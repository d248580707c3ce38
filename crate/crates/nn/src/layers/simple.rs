use crate::{NnError, Result, Scalar, Tensor};

#[derive(Clone, Debug, Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

impl Relu {
    pub(crate) fn apply<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
        let mut out = input.clone();
        out.clear_grad();
        out.data_mut()
            .iter_mut()
            .for_each(|v| *v = v.max(T::zero()));
        out
    }

    pub fn forward<T: Scalar>(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.mask = Some(input.data().iter().map(|&v| v > T::zero()).collect());
        Ok(Self::apply(input))
    }

    pub fn backward<T: Scalar>(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let mask = self.mask.as_ref().ok_or(NnError::MissingForwardCache("relu"))?;
        let data = grad_out
            .data()
            .iter()
            .zip(mask)
            .map(|(&g, &m)| if m { g } else { T::zero() })
            .collect();
        Tensor::from_vec(grad_out.shape(), data)
    }

    pub(crate) fn signature(&self) -> Vec<u32> {
        self.mask
            .as_ref()
            .map(|m| m.iter().map(|&b| b as u32).collect())
            .unwrap_or_default()
    }

    pub(crate) fn clear_cache(&mut self) {
        self.mask = None;
    }
}

/// Collapses every axis after the batch axis.
#[derive(Clone, Debug, Default)]
pub struct Flatten {
    input_shape: Option<Vec<usize>>,
}

impl Flatten {
    pub(crate) fn apply<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
        let n = input.shape().first().copied().unwrap_or(1);
        let rest = if n == 0 { 0 } else { input.len() / n };
        let mut out = input.clone();
        out.clear_grad();
        out.reshape(&[n, rest])
    }

    pub fn forward<T: Scalar>(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.input_shape = Some(input.shape().to_vec());
        Self::apply(input)
    }

    pub fn backward<T: Scalar>(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = self
            .input_shape
            .as_ref()
            .ok_or(NnError::MissingForwardCache("flatten"))?;
        Tensor::from_vec(shape, grad_out.data().to_vec())
    }

    pub(crate) fn clear_cache(&mut self) {
        self.input_shape = None;
    }
}
