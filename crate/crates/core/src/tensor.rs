//! Dense row-major tensors over a flat buffer. Images are `C x H x W`,
//! kernels `K x K`, fully connected activations rank 1. No strides, no
//! views: every tensor owns its contiguous data.

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![T::zero(); numel] }
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        let numel = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; numel] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Self {
        let numel: usize = shape.iter().product();
        assert_eq!(
            numel,
            data.len(),
            "tensor shape {:?} wants {} elements, got {}",
            shape,
            numel,
            data.len()
        );
        Tensor { shape: shape.to_vec(), data }
    }

    pub fn scalar(value: T) -> Self {
        Tensor { shape: vec![1], data: vec![value] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// The single element of a rank-0/1 scalar tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    /// Unpack a `C x H x W` shape.
    pub fn dims3(&self) -> (usize, usize, usize) {
        assert_eq!(self.shape.len(), 3, "expected rank-3 tensor, got shape {:?}", self.shape);
        (self.shape[0], self.shape[1], self.shape[2])
    }

    /// Unpack a `H x W` shape.
    pub fn dims2(&self) -> (usize, usize) {
        assert_eq!(self.shape.len(), 2, "expected rank-2 tensor, got shape {:?}", self.shape);
        (self.shape[0], self.shape[1])
    }

    /// Reinterpret the same data under a new shape with equal element count.
    pub fn reshaped(&self, shape: &[usize]) -> Self {
        Tensor::from_vec(shape, self.data.clone())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Cast element type, rounding through `f64`.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| U::of_f64(x.as_f64())).collect(),
        }
    }

    /// Largest absolute difference against a same-shaped tensor.
    pub fn max_abs_diff(&self, other: &Tensor<T>) -> f64 {
        assert_eq!(
            self.shape, other.shape,
            "max_abs_diff shapes differ: {:?} vs {:?}",
            self.shape, other.shape
        );
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }
}

/// Check two shapes agree, panicking with both otherwise.
pub fn assert_same_shape(what: &str, a: &[usize], b: &[usize]) {
    assert_eq!(a, b, "{what}: shape mismatch {a:?} vs {b:?}");
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_and_accessors() {
        let t = Tensor::<f64>::from_vec(&[2, 3], (0..6).map(|i| i as f64).collect());
        assert_eq!(t.shape(), &[2, 3]);
        assert_eq!(t.numel(), 6);
        assert_eq!(t.dims2(), (2, 3));
        assert_eq!(t.data()[4], 4.0);
    }

    #[test]
    #[should_panic(expected = "shape mismatch")]
    fn mismatched_shapes_panic_with_both() {
        assert_same_shape("test", &[1, 2], &[2, 1]);
    }

    #[test]
    #[should_panic(expected = "wants 6 elements")]
    fn from_vec_checks_count() {
        let _ = Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 5]);
    }

    #[test]
    fn cast_roundtrip() {
        let t = Tensor::<f64>::from_vec(&[3], vec![0.25, -1.5, 2.0]);
        let f: Tensor<f32> = t.cast();
        assert_eq!(f.cast::<f64>(), t);
    }
}
