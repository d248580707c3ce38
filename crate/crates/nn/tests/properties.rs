use proptest::prelude::*;
use tactile_nn::{conv2d_forward, maxpool_half, Tensor};

proptest! {
    /// Convolution is linear in its input.
    #[test]
    fn conv_is_linear(
        a in prop::collection::vec(-2.0f64..2.0, 30),
        b in prop::collection::vec(-2.0f64..2.0, 30),
        k in prop::collection::vec(-1.0f64..1.0, 18),
        s in -3.0f64..3.0,
    ) {
        let kernel = Tensor::from_vec(&[3, 3, 1, 2], k).unwrap();
        let bias = Tensor::zeros(&[2]);
        let ta = Tensor::from_vec(&[5, 6, 1], a.clone()).unwrap();
        let tb = Tensor::from_vec(&[5, 6, 1], b.clone()).unwrap();
        let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + s * y).collect();
        let tm = Tensor::from_vec(&[5, 6, 1], mix).unwrap();
        let ya = conv2d_forward(&ta, &kernel, &bias).unwrap();
        let yb = conv2d_forward(&tb, &kernel, &bias).unwrap();
        let ym = conv2d_forward(&tm, &kernel, &bias).unwrap();
        for i in 0..ym.len() {
            prop_assert!((ym.data()[i] - ya.data()[i] - s * yb.data()[i]).abs() < 1e-9);
        }
    }

    /// Every pooled value is the maximum of its 2×2 window.
    #[test]
    fn pool_takes_window_maximum(v in prop::collection::vec(-5.0f32..5.0, 48)) {
        let x = Tensor::from_vec(&[4, 6, 2], v.clone()).unwrap();
        let y = maxpool_half(&x).unwrap();
        for oy in 0..2 {
            for ox in 0..3 {
                for c in 0..2 {
                    let idx = |yy: usize, xx: usize| (yy * 6 + xx) * 2 + c;
                    let m = [idx(2*oy, 2*ox), idx(2*oy, 2*ox+1), idx(2*oy+1, 2*ox), idx(2*oy+1, 2*ox+1)]
                        .iter().map(|&i| v[i]).fold(f32::MIN, f32::max);
                    prop_assert_eq!(y.data()[(oy * 3 + ox) * 2 + c], m);
                }
            }
        }
    }
}
