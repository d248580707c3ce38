use crate::{NnError, Result, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment buffers, one per trainable parameter tensor.
#[derive(Clone, Debug, Default)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn moment_lengths(&self) -> Vec<usize> {
        self.m.iter().map(Vec::len).collect()
    }
}

/// One bias-corrected Adam update over `params`, reading each tensor's
/// gradient buffer (a missing buffer counts as zero gradient).
///
/// Gradients are validated before anything is modified, so a non-finite
/// gradient leaves parameters and state untouched.
pub fn adam_step<T: Scalar>(params: &mut [&mut Tensor<T>], state: &mut AdamState) -> Result<()> {
    if state.m.is_empty() {
        state.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
        state.v = state.m.clone();
    }
    let lens: Vec<usize> = params.iter().map(|p| p.len()).collect();
    if lens != state.moment_lengths() {
        return Err(NnError::ShapeMismatch {
            context: "adam moments vs parameters",
            expected: state.moment_lengths(),
            found: lens,
        });
    }
    for (pi, p) in params.iter().enumerate() {
        if let Some(g) = p.grad() {
            if let Some(index) = g.iter().position(|v| !v.is_finite()) {
                return Err(NnError::NonFiniteGradient { param: pi, index });
            }
        }
    }

    state.step += 1;
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for ((p, m), v) in params.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        let grad: Vec<f64> = match p.grad() {
            Some(g) => g.iter().map(|x| x.as_f64()).collect(),
            None => vec![0.0; p.len()],
        };
        for (i, value) in p.data_mut().iter_mut().enumerate() {
            let g = grad[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            *value = T::of(value.as_f64() - lr * m_hat / (v_hat.sqrt() + eps));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = Tensor::from_vec(&[3], vec![1.0f32, -2.0, 0.5]).unwrap();
        p.grad_mut();
        let before = p.data().to_vec();
        let mut state = AdamState::new(AdamConfig::default());
        adam_step(&mut [&mut p], &mut state).unwrap();
        assert_eq!(p.data(), &before[..]);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = Tensor::<f64>::zeros(&[4]);
        p.accumulate_grad(&[1.0; 4]);
        let mut state = AdamState::new(AdamConfig::default());
        adam_step(&mut [&mut p], &mut state).unwrap();
        for &v in p.data() {
            assert!((v + 1e-3).abs() < 1e-10, "{v}");
        }
    }

    #[test]
    fn two_unit_steps_stay_near_learning_rate() {
        let mut p = Tensor::<f64>::zeros(&[1]);
        p.accumulate_grad(&[1.0]);
        let mut state = AdamState::new(AdamConfig::default());
        adam_step(&mut [&mut p], &mut state).unwrap();
        let after_one = p.data()[0];
        adam_step(&mut [&mut p], &mut state).unwrap();
        let delta = p.data()[0] - after_one;
        assert!(delta < 0.0);
        assert!((0.0009..=0.001).contains(&delta.abs()), "{delta}");
    }

    #[test]
    fn non_finite_gradient_aborts_without_update() {
        let mut p = Tensor::<f32>::zeros(&[2]);
        p.accumulate_grad(&[0.0, f32::NAN]);
        let mut state = AdamState::new(AdamConfig::default());
        let err = adam_step(&mut [&mut p], &mut state).unwrap_err();
        assert!(matches!(err, NnError::NonFiniteGradient { param: 0, index: 1 }));
        assert_eq!(state.step, 0);
        assert_eq!(p.data(), &[0.0, 0.0]);
    }
}
