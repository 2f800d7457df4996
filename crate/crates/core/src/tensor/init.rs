use rand::Rng;

use super::{Float, Tensor};

/// Uniform on `[-bound, bound]`.
pub fn uniform<F: Float, R: Rng + ?Sized>(rng: &mut R, shape: &[usize], bound: f64) -> Tensor<F> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| F::of(rng.random_range(-bound..=bound)))
        .collect();
    Tensor::new(shape, data).expect("length matches shape")
}

/// Scaled-uniform fan-in initialization: `U(-1/√fan_in, 1/√fan_in)` where
/// `fan_in` is the first axis of a weight matrix.
pub fn fan_in_uniform<F: Float, R: Rng + ?Sized>(rng: &mut R, shape: &[usize]) -> Tensor<F> {
    let fan_in = shape.first().copied().unwrap_or(1).max(1);
    uniform(rng, shape, 1.0 / (fan_in as f64).sqrt())
}
