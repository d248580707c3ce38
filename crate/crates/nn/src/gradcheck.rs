//! Finite-difference verification of the reverse-mode gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::layers::{ForwardCtx, Layer, Mode};
use crate::{NnError, Result, Tensor};

/// Largest fragment (parameters + inputs) the checker accepts.
pub const MAX_CHECK_ELEMENTS: usize = 10_000;
const STEP: f64 = 1e-5;
const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Probes whose ±step straddled a ReLU or pooling kink.
    pub excluded: usize,
    /// Location of the worst mismatch, e.g. `"layer 2 param 0 [17]"` or `"input [3]"`.
    pub worst: Option<String>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel_error < self.tolerance
    }
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn record(report: &mut GradCheckReport, analytic: f64, numeric: f64, at: String) {
    let err = relative_error(analytic, numeric);
    report.checked += 1;
    if report.worst.is_none() || err > report.max_rel_error {
        report.max_rel_error = err;
        report.worst = Some(at);
    }
}

struct Probe<'a> {
    layers: &'a mut [Layer<f64>],
    projection: Vec<f64>,
    mode: Mode,
    seed: u64,
}

impl Probe<'_> {
    /// Scalar objective `Σ r·y` and the kink signature of the pass.
    fn run(&mut self, input: &Tensor<f64>) -> Result<(f64, Vec<u32>, Tensor<f64>)> {
        let mut ctx = ForwardCtx::new(self.mode, self.seed);
        let mut x = input.clone();
        let mut signature = Vec::new();
        for layer in self.layers.iter_mut() {
            x = layer.forward(&x, &mut ctx)?;
            signature.extend(layer.kink_signature());
        }
        if self.projection.is_empty() {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x9e37_79b9);
            self.projection = (0..x.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        }
        let loss = x.data().iter().zip(&self.projection).map(|(a, b)| a * b).sum();
        Ok((loss, signature, x))
    }
}

/// Compares reverse-mode gradients of a layer stack against central finite
/// differences, for every parameter and every input element.
///
/// The objective is a fixed random projection of the stack output, which
/// keeps batch-normalized outputs from having a trivially zero gradient.
pub fn gradient_check(
    layers: &mut [Layer<f64>],
    input: &Tensor<f64>,
    mode: Mode,
    tolerance: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let param_total: usize = layers.iter().flat_map(|l| l.params()).map(|p| p.len()).sum();
    if param_total + input.len() > MAX_CHECK_ELEMENTS {
        return Err(NnError::InvalidArgument(format!(
            "fragment too large for a gradient check: {} elements",
            param_total + input.len()
        )));
    }
    for layer in layers.iter_mut() {
        for p in layer.params_mut() {
            p.clear_grad();
        }
    }
    let mut probe = Probe {
        layers,
        projection: Vec::new(),
        mode,
        seed,
    };
    let (_, base_sig, out) = probe.run(input)?;
    let mut g = Tensor::from_vec(out.shape(), probe.projection.clone())?;
    let count = probe.layers.len();
    for idx in (0..count).rev() {
        g = probe.layers[idx]
            .backward(&g, true)?
            .ok_or(NnError::MissingForwardCache("gradient check"))?;
    }
    let input_grad = g;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        excluded: 0,
        worst: None,
        tolerance,
    };
    for li in 0..count {
        let n_params = probe.layers[li].params().len();
        for pi in 0..n_params {
            let len = probe.layers[li].params()[pi].len();
            let analytic: Vec<f64> = probe.layers[li].params()[pi]
                .grad()
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; len]);
            for e in 0..len {
                let original = probe.layers[li].params()[pi].data()[e];
                probe.layers[li].params_mut()[pi].data_mut()[e] = original + STEP;
                let (lp, sp, _) = probe.run(input)?;
                probe.layers[li].params_mut()[pi].data_mut()[e] = original - STEP;
                let (lm, sm, _) = probe.run(input)?;
                probe.layers[li].params_mut()[pi].data_mut()[e] = original;
                if sp != base_sig || sm != base_sig {
                    report.excluded += 1;
                    continue;
                }
                let numeric = (lp - lm) / (2.0 * STEP);
                record(&mut report, analytic[e], numeric, format!("layer {li} param {pi} [{e}]"));
            }
        }
    }

    let mut x = input.clone();
    for e in 0..x.len() {
        let original = x.data()[e];
        x.data_mut()[e] = original + STEP;
        let (lp, sp, _) = probe.run(&x)?;
        x.data_mut()[e] = original - STEP;
        let (lm, sm, _) = probe.run(&x)?;
        x.data_mut()[e] = original;
        if sp != base_sig || sm != base_sig {
            report.excluded += 1;
            continue;
        }
        let numeric = (lp - lm) / (2.0 * STEP);
        record(&mut report, input_grad.data()[e], numeric, format!("input [{e}]"));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{Activation, Dense, Relu};

    #[test]
    fn linear_layer_is_essentially_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut layers = vec![Layer::Dense(Dense::<f64>::init(5, 3, Activation::Linear, &mut rng))];
        let input = Tensor::from_vec(&[2, 5], (0..10).map(|i| i as f64 * 0.1 - 0.4).collect()).unwrap();
        let report = gradient_check(&mut layers, &input, Mode::Train, 1e-6, 3).unwrap();
        assert!(report.passed(), "{report:?}");
        assert_eq!(report.excluded, 0);
    }

    #[test]
    fn relu_at_zero_is_excluded_not_failed() {
        let mut layers = vec![Layer::Relu(Relu::default())];
        let input = Tensor::from_vec(&[1, 4], vec![0.0, 1.0, -1.0, 0.0]).unwrap();
        let report = gradient_check(&mut layers, &input, Mode::Train, 1e-6, 3).unwrap();
        assert_eq!(report.excluded, 2);
        assert_eq!(report.checked, 2);
        assert!(report.passed());
    }

    #[test]
    fn oversized_fragment_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut layers = vec![Layer::Dense(Dense::<f64>::init(200, 60, Activation::Linear, &mut rng))];
        let input = Tensor::zeros(&[1, 200]);
        assert!(gradient_check(&mut layers, &input, Mode::Train, 1e-4, 0).is_err());
    }
}
