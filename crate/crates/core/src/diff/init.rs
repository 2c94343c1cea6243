use rand::Rng;

use crate::diff::tensor::Tensor;
use crate::scalar::Scalar;

/// Matrix with entries drawn from `U(-scale, scale)`.
pub fn uniform<S: Scalar, R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Tensor<S> {
    let data = (0..rows * cols).map(|_| S::lit(rng.gen_range(-scale..=scale))).collect();
    Tensor::new(vec![rows, cols], data).expect("positive dimensions")
}
