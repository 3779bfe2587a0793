use crate::error::Result;

use super::{cast, check_same, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    LeakyRelu(f64),
    Sigmoid,
}

pub fn leaky_relu<T: Scalar>(x: &Tensor<T>, slope: f64) -> Tensor<T> {
    let s: T = cast(slope);
    x.map(|v| if v >= T::zero() { v } else { s * v })
}

/// Logistic function in the overflow-free split form, clamped to the open
/// interval so saturated inputs never produce exactly 0 or 1. NaN passes
/// through unchanged.
pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let hi = T::one() - T::epsilon();
    let lo = T::min_positive_value();
    x.map(|v| {
        let y = if v >= T::zero() {
            T::one() / (T::one() + (-v).exp())
        } else {
            let e = v.exp();
            e / (T::one() + e)
        };
        if y.is_nan() {
            y
        } else {
            y.max(lo).min(hi)
        }
    })
}

pub fn activation<T: Scalar>(x: &Tensor<T>, kind: Activation) -> Tensor<T> {
    match kind {
        Activation::LeakyRelu(slope) => leaky_relu(x, slope),
        Activation::Sigmoid => sigmoid(x),
    }
}

/// Gradient of [`activation`]. `x` is the forward input, `y` the forward output.
pub fn activation_backward<T: Scalar>(
    kind: Activation,
    x: &Tensor<T>,
    y: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    check_same(x.shape(), grad_out.shape(), "activation_backward")?;
    let mut gx = grad_out.clone();
    match kind {
        Activation::LeakyRelu(slope) => {
            let s: T = cast(slope);
            for (g, &v) in gx.data_mut().iter_mut().zip(x.data()) {
                if v < T::zero() {
                    *g *= s;
                }
            }
        }
        Activation::Sigmoid => {
            for (g, &p) in gx.data_mut().iter_mut().zip(y.data()) {
                *g *= p * (T::one() - p);
            }
        }
    }
    Ok(gx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn row(v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(Shape::new(1, 1, 1, v.len()), v.to_vec()).unwrap()
    }

    #[test]
    fn leaky_relu_definition() {
        let y = leaky_relu(&row(&[-1.0, 0.0, 2.0]), 0.01);
        assert_eq!(y.data(), &[-0.01, 0.0, 2.0]);
    }

    #[test]
    fn sigmoid_symmetry_point_and_saturation() {
        let y = sigmoid(&row(&[0.0, 100.0, -100.0, 1000.0, -1000.0]));
        assert_eq!(y.data()[0], 0.5);
        for &v in y.data() {
            assert!(v > 0.0 && v < 1.0 && v.is_finite(), "{v}");
        }
        let y32 = sigmoid(&row(&[100.0, -100.0]).cast::<f32>());
        assert!(y32.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn leaky_gradient_scales_negative_side() {
        let x = row(&[-2.0, 3.0]);
        let y = leaky_relu(&x, 0.01);
        let g = activation_backward(Activation::LeakyRelu(0.01), &x, &y, &row(&[5.0, 5.0])).unwrap();
        assert_eq!(g.data(), &[0.05, 5.0]);
    }
}
