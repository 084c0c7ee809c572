use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nncore::Tensor;
use crate::rng::Rng;

/// Integer counterpart of [`Tensor`], used for quantized latents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntTensor {
    pub shape: Vec<usize>,
    pub data: Vec<i32>,
}

impl IntTensor {
    pub fn new(shape: Vec<usize>, data: Vec<i32>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} does not hold {} values",
                data.len()
            )));
        }
        Ok(IntTensor { shape, data })
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(self.shape.clone(), self.data.iter().map(|&v| v as f64).collect())
            .expect("shape already validated")
    }
}

/// `y + u` with `u ~ U(-½, ½)` drawn independently per entry.
pub fn add_uniform_noise(y: &Tensor, rng: &mut Rng) -> Tensor {
    y.map(|v| v + rng.random_range(-0.5..0.5))
}

/// Nearest integer, halves rounded away from zero.
pub fn quantize_round(y: &Tensor) -> Result<IntTensor> {
    const LIMIT: f64 = 2147483648.0;
    let mut data = Vec::with_capacity(y.len());
    for &v in y.data() {
        if !v.is_finite() || v.abs() >= LIMIT {
            return Err(Error::Domain(format!("cannot quantize {v}: magnitude must be below 2^31")));
        }
        let r = v.round();
        if r >= LIMIT {
            return Err(Error::Domain(format!("cannot quantize {v}: rounds out of i32 range")));
        }
        data.push(r as i32);
    }
    IntTensor::new(y.shape().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn rounding_examples() {
        let y = Tensor::vector(vec![0.4, -1.6, 0.5, -0.5, 2.0, -3.0, 1.4999]).unwrap();
        assert_eq!(quantize_round(&y).unwrap().data, vec![0, -2, 1, -1, 2, -3, 1]);
    }

    #[test]
    fn rounding_is_idempotent() {
        let y = Tensor::vector(vec![-7.3, 0.5, 12.6, -0.49]).unwrap();
        let once = quantize_round(&y).unwrap();
        let twice = quantize_round(&once.to_tensor()).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn out_of_range_is_a_domain_error() {
        for v in [f64::NAN, f64::INFINITY, 3e9, -2147483648.0] {
            let y = Tensor::vector(vec![v]).unwrap();
            assert!(matches!(quantize_round(&y), Err(Error::Domain(_))), "{v}");
        }
    }

    #[test]
    fn noise_is_bounded_and_seeded() {
        let y = Tensor::vector((0..1000).map(|i| i as f64 * 0.1).collect()).unwrap();
        let a = add_uniform_noise(&y, &mut rng_from_seed(5));
        let b = add_uniform_noise(&y, &mut rng_from_seed(5));
        assert!(a.bit_eq(&b));
        assert!(a.data().iter().zip(y.data()).all(|(p, q)| (p - q).abs() <= 0.5));
    }

    #[test]
    fn noise_mean_obeys_clt_bound() {
        let n = 1_000_000;
        let y = Tensor::zeros(&[n]);
        let noisy = add_uniform_noise(&y, &mut rng_from_seed(77));
        let sigma_u = 1.0 / 12f64.sqrt();
        assert!(noisy.mean().abs() < 3.0 * sigma_u / 1e3);
    }
}
