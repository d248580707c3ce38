//! Shared-trunk multi-camera network with a linear fusion layer.
//!
//! Every camera image goes through the same trunk (one parameter set); the
//! per-camera feature vectors are concatenated in camera order and mapped
//! by the fusion layer to the output vector.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::layers::{Activation, BatchNorm, Conv2d, Dense, Dropout, Flatten, ForwardCtx, Layer, MaxPool2, Relu};
use crate::{NnError, Result, Scalar, Tensor};

/// Shape-determining description of a [`Network`].
#[derive(Clone, Debug, PartialEq)]
pub struct Architecture {
    pub camera_count: usize,
    pub image_size: usize,
    /// Output channels of each conv + BN + ReLU + pool stage.
    pub conv_channels: Vec<usize>,
    pub hidden_width: usize,
    pub feature_width: usize,
    pub dropout_rate: f64,
    /// Surface bins predicted by the fusion layer, three outputs each.
    pub output_bins: Vec<u32>,
}

impl Architecture {
    pub const DEFAULT_CONV_CHANNELS: [usize; 4] = [2, 4, 8, 16];
    pub const DEFAULT_HIDDEN_WIDTH: usize = 900;
    pub const DEFAULT_FEATURE_WIDTH: usize = 128;
    pub const DEFAULT_DROPOUT: f64 = 0.1;

    pub fn new(camera_count: usize, image_size: usize, output_bins: Vec<u32>) -> Self {
        Self {
            camera_count,
            image_size,
            conv_channels: Self::DEFAULT_CONV_CHANNELS.to_vec(),
            hidden_width: Self::DEFAULT_HIDDEN_WIDTH,
            feature_width: Self::DEFAULT_FEATURE_WIDTH,
            dropout_rate: Self::DEFAULT_DROPOUT,
            output_bins,
        }
    }

    pub fn output_width(&self) -> usize {
        3 * self.output_bins.len()
    }

    pub fn flatten_width(&self) -> usize {
        let side = self.image_size >> self.conv_channels.len();
        side * side * self.conv_channels.last().copied().unwrap_or(1)
    }

    pub fn fusion_inputs(&self) -> usize {
        self.camera_count * self.feature_width
    }

    pub fn validate(&self) -> Result<()> {
        let stages = self.conv_channels.len();
        if self.camera_count == 0 || self.output_bins.is_empty() {
            return Err(NnError::InvalidArgument(
                "architecture needs at least one camera and one output bin".into(),
            ));
        }
        if self.image_size == 0 || self.image_size % (1 << stages) != 0 {
            return Err(NnError::InvalidArgument(format!(
                "image size {} is not divisible by 2^{stages}",
                self.image_size
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(NnError::InvalidArgument(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Network<T: Scalar> {
    arch: Architecture,
    /// Trunk layers followed by the fusion layer as the final element.
    layers: Vec<Layer<T>>,
}

pub type NetworkModel = Network<f32>;

impl<T: Scalar> Network<T> {
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let mut channels = 1;
        for &out in &arch.conv_channels {
            layers.push(Layer::Conv(Conv2d::init(channels, out, &mut rng)));
            layers.push(Layer::BatchNorm(BatchNorm::new(out)));
            layers.push(Layer::Relu(Relu::default()));
            layers.push(Layer::MaxPool(MaxPool2::default()));
            channels = out;
        }
        layers.push(Layer::Flatten(Flatten::default()));
        layers.push(Layer::Dense(Dense::init(
            arch.flatten_width(),
            arch.hidden_width,
            Activation::Sigmoid,
            &mut rng,
        )));
        layers.push(Layer::Dropout(Dropout::new(arch.dropout_rate)));
        layers.push(Layer::Dense(Dense::init(
            arch.hidden_width,
            arch.feature_width,
            Activation::Sigmoid,
            &mut rng,
        )));
        layers.push(Layer::Dropout(Dropout::new(arch.dropout_rate)));
        layers.push(Layer::Dense(Dense::init(
            arch.fusion_inputs(),
            arch.output_width(),
            Activation::Linear,
            &mut rng,
        )));
        Ok(Self { arch, layers })
    }

    /// Assembles a network from explicit layers; the last layer must be the
    /// linear fusion layer.
    pub fn from_layers(arch: Architecture, layers: Vec<Layer<T>>) -> Result<Self> {
        arch.validate()?;
        match layers.last() {
            Some(Layer::Dense(d))
                if d.activation == Activation::Linear
                    && d.inputs() == arch.fusion_inputs()
                    && d.outputs() == arch.output_width() => {}
            _ => {
                return Err(NnError::InvalidArgument(
                    "last layer must be a linear fusion layer matching the architecture".into(),
                ))
            }
        }
        Ok(Self { arch, layers })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn trunk_len(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn fusion(&self) -> &Dense<T> {
        match self.layers.last() {
            Some(Layer::Dense(d)) => d,
            _ => unreachable!("fusion layer is always last"),
        }
    }

    pub fn fusion_mut(&mut self) -> &mut Dense<T> {
        match self.layers.last_mut() {
            Some(Layer::Dense(d)) => d,
            _ => unreachable!("fusion layer is always last"),
        }
    }

    /// Index of the last dense layer of the trunk (the per-camera feature layer).
    pub fn last_trunk_dense(&self) -> Option<usize> {
        self.layers[..self.trunk_len()]
            .iter()
            .rposition(|l| matches!(l, Layer::Dense(_)))
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| l.params())
            .map(|p| p.len())
            .sum()
    }

    /// Leading layers that are deterministic and receive no updates; their
    /// train-mode output equals their eval-mode output.
    pub fn frozen_prefix_len(&self) -> usize {
        self.layers[..self.trunk_len()]
            .iter()
            .take_while(|l| !l.is_stochastic() && (!l.has_params() || l.is_frozen()))
            .count()
    }

    fn first_trainable(&self) -> Option<usize> {
        self.layers
            .iter()
            .position(|l| l.has_params() && !l.is_frozen())
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<usize> {
        let s = self.arch.image_size;
        let shape = input.shape();
        if shape.len() != 4 || shape[1] != s || shape[2] != s || shape[3] != 1 {
            return Err(NnError::ShapeMismatch {
                context: "network input (B·cameras, H, W, 1)",
                expected: vec![0, s, s, 1],
                found: shape.to_vec(),
            });
        }
        let cams = self.arch.camera_count;
        if shape[0] % cams != 0 {
            return Err(NnError::CameraCountMismatch {
                expected: cams,
                found: shape[0],
            });
        }
        Ok(shape[0] / cams)
    }

    fn to_fusion_input(&self, features: Tensor<T>, batch: usize) -> Result<Tensor<T>> {
        features.reshape(&[batch, self.arch.fusion_inputs()])
    }

    /// Train-or-eval forward pass with caches, on `[B·cameras, H, W, 1]`.
    pub fn forward(&mut self, input: &Tensor<T>, ctx: &mut ForwardCtx) -> Result<Tensor<T>> {
        let batch = self.check_input(input)?;
        self.forward_from(0, input, batch, ctx)
    }

    /// Forward pass starting at trunk layer `start` with the activations that
    /// layer expects, for `batch` samples.
    pub fn forward_from(
        &mut self,
        start: usize,
        input: &Tensor<T>,
        batch: usize,
        ctx: &mut ForwardCtx,
    ) -> Result<Tensor<T>> {
        let trunk = self.trunk_len();
        let mut x = input.clone();
        for layer in &mut self.layers[start..trunk] {
            x = layer.forward(&x, ctx)?;
        }
        let x = self.to_fusion_input(x, batch)?;
        self.layers[trunk].forward(&x, ctx)
    }

    /// Eval-mode forward pass over the whole network; no state is modified.
    pub fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let batch = self.check_input(input)?;
        let x = self.infer_trunk(0, self.trunk_len(), input)?;
        let x = self.to_fusion_input(x, batch)?;
        self.layers[self.trunk_len()].infer(&x)
    }

    /// Eval-mode activations after trunk layers `start..end`.
    pub fn infer_trunk(&self, start: usize, end: usize, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut x = input.clone();
        for layer in &self.layers[start..end] {
            x = layer.infer(&x)?;
        }
        Ok(x)
    }

    /// Back-propagates `grad_out` (shape `[B, outputs]`) from the last
    /// forward pass, stopping at the first trainable layer.
    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<()> {
        let Some(first) = self.first_trainable() else {
            return Ok(());
        };
        let trunk = self.trunk_len();
        let need = first < trunk;
        let g = self.layers[trunk].backward(grad_out, need)?;
        let Some(g) = g else { return Ok(()) };
        let batch = grad_out.shape()[0];
        let per_camera = self.arch.feature_width;
        let mut g = g.reshape(&[batch * self.arch.camera_count, per_camera])?;
        for idx in (first..trunk).rev() {
            match self.layers[idx].backward(&g, idx > first)? {
                Some(next) => g = next,
                None => break,
            }
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for layer in &mut self.layers {
            for p in layer.params_mut() {
                p.zero_grad();
            }
        }
    }

    /// Trainable parameters in a fixed order (layer order, weight before bias).
    pub fn trainable_params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers
            .iter_mut()
            .filter(|l| !l.is_frozen())
            .flat_map(|l| l.params_mut())
            .collect()
    }

    pub fn set_frozen(&mut self, layer: usize, frozen: bool) {
        self.layers[layer].set_frozen(frozen);
    }

    pub fn clear_caches(&mut self) {
        self.layers.iter_mut().for_each(Layer::clear_cache);
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            arch: self.arch.clone(),
            layers: self.layers.iter().map(Layer::cast).collect(),
        }
    }

    /// Eval-mode prediction for one sample given its camera images stacked
    /// as `cameras × H × W` values.
    pub fn predict(&self, frames: &[T]) -> Result<Vec<T>> {
        let s = self.arch.image_size;
        let cams = frames.len() / (s * s).max(1);
        if cams * s * s != frames.len() || cams != self.arch.camera_count {
            return Err(NnError::CameraCountMismatch {
                expected: self.arch.camera_count,
                found: cams,
            });
        }
        let input = Tensor::from_vec(&[cams, s, s, 1], frames.to_vec())?;
        Ok(self.infer(&input)?.into_data())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Mode;

    fn tiny_arch(cameras: usize) -> Architecture {
        Architecture {
            camera_count: cameras,
            image_size: 8,
            conv_channels: vec![2, 3],
            hidden_width: 6,
            feature_width: 4,
            dropout_rate: 0.1,
            output_bins: vec![0, 1, 2],
        }
    }

    #[test]
    fn shapes_chain_to_output_width() {
        let net = Network::<f32>::new(tiny_arch(2), 1).unwrap();
        let input = Tensor::filled(&[6, 8, 8, 1], 0.2);
        let out = net.infer(&input).unwrap();
        assert_eq!(out.shape(), &[3, 9]);
    }

    #[test]
    fn default_parameter_count_is_stable() {
        let a = Network::<f32>::new(Architecture::new(4, 64, (0..650).collect()), 1).unwrap();
        let b = Network::<f32>::new(Architecture::new(4, 64, (0..650).collect()), 2).unwrap();
        assert_eq!(a.parameter_count(), b.parameter_count());
        // conv stages, BN affine, 256→900, 900→128, 512→1950
        let conv = (9 * 2 + 2) + (9 * 2 * 4 + 4) + (9 * 4 * 8 + 8) + (9 * 8 * 16 + 16);
        let bn = 2 * (2 + 4 + 8 + 16);
        let dense = 256 * 900 + 900 + 900 * 128 + 128 + 512 * 1950 + 1950;
        assert_eq!(a.parameter_count(), conv + bn + dense);
    }

    #[test]
    fn camera_count_mismatch_detected() {
        let net = Network::<f32>::new(tiny_arch(4), 1).unwrap();
        let input = Tensor::filled(&[6, 8, 8, 1], 0.2);
        assert!(matches!(net.infer(&input), Err(NnError::CameraCountMismatch { .. })));
        assert!(net.predict(&[0.0; 3 * 64]).is_err());
    }

    #[test]
    fn odd_image_size_rejected() {
        let mut arch = tiny_arch(1);
        arch.image_size = 10;
        assert!(Network::<f32>::new(arch, 0).is_err());
    }

    #[test]
    fn frozen_prefix_stops_at_dropout() {
        let mut net = Network::<f32>::new(tiny_arch(1), 0).unwrap();
        assert_eq!(net.frozen_prefix_len(), 0);
        let last_dense = net.last_trunk_dense().unwrap();
        for i in 0..last_dense {
            net.set_frozen(i, true);
        }
        // flatten-dense(hidden) is followed by dropout
        assert_eq!(net.frozen_prefix_len(), last_dense - 1);
    }

    #[test]
    fn backward_produces_gradients_for_trainable_layers_only() {
        let mut net = Network::<f64>::new(tiny_arch(2), 3).unwrap();
        net.set_frozen(0, true);
        let input = Tensor::from_vec(&[4, 8, 8, 1], (0..256).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let mut ctx = ForwardCtx::new(Mode::Train, 5);
        let out = net.forward(&input, &mut ctx).unwrap();
        net.backward(&Tensor::filled(out.shape(), 1.0)).unwrap();
        assert!(net.layers()[0].params()[0].grad().is_none());
        assert!(net.fusion().weight.grad().is_some());
        assert!(net.layers()[4].params()[0].grad().is_some());
    }
}
