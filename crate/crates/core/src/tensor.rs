//! Dense N-dimensional tensors, row-major, NCHW layout for image data.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A dense tensor of `T` (default `f32`), row-major.
///
/// Invariant: `data.len() == shape.iter().product()`. A rank-0 tensor (empty
/// shape) is a scalar with one element.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Self {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        assert_eq!(
            data.len(),
            numel,
            "tensor data length {} does not match shape {:?} (numel {})",
            data.len(),
            shape,
            numel
        );
        Self { shape, data }
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        Self { shape, data: vec![T::ZERO; numel] }
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        Self { shape, data: vec![value; numel] }
    }

    pub fn scalar(value: T) -> Self {
        Self { shape: vec![], data: vec![value] }
    }

    /// Samples i.i.d. normal values via Box-Muller (deterministic for a fixed rng).
    pub fn randn(shape: impl Into<Vec<usize>>, std: f64, rng: &mut impl Rng) -> Self {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        while data.len() < numel {
            let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.gen();
            let r = (-2.0 * u1.ln()).sqrt();
            let theta = 2.0 * std::f64::consts::PI * u2;
            data.push(T::from_f64(r * theta.cos() * std));
            if data.len() < numel {
                data.push(T::from_f64(r * theta.sin() * std));
            }
        }
        Self { shape, data }
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn numel(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// (n, c, h, w) of a rank-4 tensor.
    pub fn dim4(&self) -> (usize, usize, usize, usize) {
        assert_eq!(self.rank(), 4, "expected rank-4 tensor, got shape {:?}", self.shape);
        (self.shape[0], self.shape[1], self.shape[2], self.shape[3])
    }

    /// Value of a scalar (single-element) tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on non-scalar tensor of shape {:?}", self.shape);
        self.data[0]
    }

    /// Index of the first non-finite element, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|v| !v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }
}

impl Tensor<f32> {
    /// Lossless widening to the f64 shadow representation.
    pub fn to_f64(&self) -> Tensor<f64> {
        Tensor::new(self.shape.clone(), self.data.iter().map(|&v| v as f64).collect())
    }
}

/// Summary statistics plus a 256-bin equal-width histogram.
#[derive(Clone, Debug)]
pub struct TensorStats {
    pub mean: f64,
    pub variance: f64,
    pub min: f64,
    pub max: f64,
    pub histogram: Vec<u64>,
}

pub const HISTOGRAM_BINS: usize = 256;

/// Mean/variance (population, two-pass, f64 accumulation), min/max, and a
/// 256-bin histogram over `[min, max]`. Bin counts sum to the element count.
pub fn tensor_stats<T: Scalar>(t: &Tensor<T>) -> Result<TensorStats> {
    stats_of_slice(t.data())
}

pub fn stats_of_slice<T: Scalar>(data: &[T]) -> Result<TensorStats> {
    if data.is_empty() {
        return Err(Error::Usage("tensor_stats on empty tensor".into()));
    }
    let n = data.len() as f64;
    let mut sum = 0.0f64;
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &v in data {
        let v = v.to_f64();
        sum += v;
        if v < min {
            min = v;
        }
        if v > max {
            max = v;
        }
    }
    let mean = sum / n;
    let mut ssq = 0.0f64;
    for &v in data {
        let d = v.to_f64() - mean;
        ssq += d * d;
    }
    let variance = ssq / n;

    let mut histogram = vec![0u64; HISTOGRAM_BINS];
    let width = max - min;
    for &v in data {
        let bin = if width == 0.0 {
            0
        } else {
            let idx = ((v.to_f64() - min) / width * HISTOGRAM_BINS as f64) as usize;
            idx.min(HISTOGRAM_BINS - 1)
        };
        histogram[bin] += 1;
    }
    Ok(TensorStats { mean, variance, min, max, histogram })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn stats_constant_tensor() {
        let t = Tensor::full([4], 1.0f32);
        let s = tensor_stats(&t).unwrap();
        assert_eq!(s.mean, 1.0);
        assert_eq!(s.variance, 0.0);
        assert_eq!(s.histogram[0], 4);
        assert_eq!(s.histogram.iter().sum::<u64>(), 4);
    }

    #[test]
    fn stats_match_two_pass_reference() {
        let t = Tensor::new([5], vec![1.0f32, 2.0, 3.0, 4.0, 10.0]);
        let s = tensor_stats(&t).unwrap();
        assert!((s.mean - 4.0).abs() < 1e-12);
        // population variance of [1,2,3,4,10]
        let var = (9.0 + 4.0 + 1.0 + 0.0 + 36.0) / 5.0;
        assert!((s.variance - var).abs() < 1e-12);
        assert_eq!(s.min, 1.0);
        assert_eq!(s.max, 10.0);
    }

    #[test]
    fn stats_standard_normal_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let t = Tensor::<f32>::randn([1_000_000], 1.0, &mut rng);
        let s = tensor_stats(&t).unwrap();
        assert!(s.mean.abs() < 0.01, "mean {}", s.mean);
        assert!((s.variance - 1.0).abs() < 0.02, "variance {}", s.variance);
        assert_eq!(s.histogram.iter().sum::<u64>(), 1_000_000);
    }

    #[test]
    fn histogram_uniform_ramp_has_equal_bins() {
        // 256 * 4 values, each bin receives exactly 4.
        let data: Vec<f32> = (0..1024).map(|i| (i / 4) as f32).collect();
        let s = stats_of_slice(&data).unwrap();
        assert!(s.histogram.iter().all(|&c| c == 4), "{:?}", &s.histogram[..8]);
    }

    #[test]
    fn stats_empty_is_usage_error() {
        let t = Tensor::<f32>::zeros([0]);
        assert!(tensor_stats(&t).is_err());
    }

    #[test]
    #[should_panic(expected = "does not match shape")]
    fn mismatched_data_len_panics() {
        let _ = Tensor::new([2, 2], vec![1.0f32; 3]);
    }
}
