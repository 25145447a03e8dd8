//! Likelihood models, rate estimation and range coding of the two
//! latent streams: `b1` carries the core latent under the conditional
//! Laplace model, `b2` the hyper-latent under the factorized prior.

mod bitstream;
mod cdf;
mod coding;
mod factorized;
mod laplace;
pub mod range_coder;

pub use bitstream::{Bitstream, BitstreamHeader, HEADER_LEN, MAGIC, VERSION};
pub use cdf::QuantizedCdf;
pub use coding::{decode_latents, encode_latents, laplace_table};
pub use factorized::FactorizedPrior;
pub use laplace::{laplace_bin_mass, laplace_bin_probability, laplace_bits, laplace_bits_var};

use serde::{Deserialize, Serialize};

use crate::codec::LatentTensor;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Lower bound on predicted Laplace scales.
pub const SIGMA_MIN: f64 = 0.11;
/// Probability floor used by the rate estimate.
pub const P_MIN: f64 = 1.0 / 65536.0;
/// Largest codable residual magnitude.
pub const ALPHABET_LIMIT: i32 = 255;
/// Frequency tables sum to `2^PRECISION_BITS`.
pub const PRECISION_BITS: u32 = 16;

/// Per-element location and scale maps of the core-latent model.
#[derive(Clone, Debug, PartialEq)]
pub struct EntropyParameters {
    pub mu: Tensor,
    pub sigma: Tensor,
}

impl EntropyParameters {
    pub fn new(mu: Tensor, sigma: Tensor) -> Result<Self> {
        if mu.shape() != sigma.shape() {
            return Err(Error::shape(mu.shape(), sigma.shape()));
        }
        if let Some(s) = sigma.data().iter().find(|&&s| !(s >= SIGMA_MIN)) {
            return Err(Error::InvalidValue(format!("scale {s} below {SIGMA_MIN}")));
        }
        Ok(Self { mu, sigma })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub bits_y: f64,
    pub bits_z: f64,
    pub total_bits: f64,
}

impl RateEstimate {
    pub fn new(bits_y: f64, bits_z: f64) -> Self {
        Self {
            bits_y,
            bits_z,
            total_bits: bits_y + bits_z,
        }
    }
}

/// The model a latent is measured against.
pub enum LatentModel<'a> {
    Conditional(&'a EntropyParameters),
    Factorized(&'a FactorizedPrior),
}

/// `-sum log2 p` of `latents` under `model`.
pub fn estimate_rate_bits(latents: &LatentTensor, model: LatentModel<'_>) -> Result<f64> {
    let t = latents.tensor();
    match model {
        LatentModel::Conditional(p) => {
            if p.mu.shape() != t.shape() {
                return Err(Error::shape(p.mu.shape(), t.shape()));
            }
            Ok(laplace_bits(t.data(), p.mu.data(), p.sigma.data()))
        }
        LatentModel::Factorized(prior) => {
            if t.shape()[1] != prior.channels {
                return Err(Error::shape(&[prior.channels], &t.shape()[1..2]));
            }
            Ok(prior.bits(t))
        }
    }
}

/// Bits per pixel of the original (uncropped) image area.
pub fn bits_per_pixel(total_bits: f64, width: usize, height: usize) -> Result<f64> {
    let area = width * height;
    if area == 0 {
        return Err(Error::ZeroArea);
    }
    Ok(total_bits / area as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bpp_examples() {
        assert_eq!(bits_per_pixel(1000.0, 100, 100).unwrap(), 0.1);
        assert_eq!(bits_per_pixel(0.0, 100, 100).unwrap(), 0.0);
        assert_eq!(bits_per_pixel(2_097_152.0, 2048, 1024).unwrap(), 1.0);
        assert!(matches!(bits_per_pixel(5.0, 0, 10), Err(Error::ZeroArea)));
    }

    #[test]
    fn half_probability_costs_one_bit() {
        assert_eq!(-(0.5f64).log2(), 1.0);
        let bits = -laplace_bin_probability(0.0, 0.0, 1.0).log2();
        assert!((bits + (1.0 - (-0.5f64).exp()).log2()).abs() < 1e-12);
        // -log2(0.39347) is 1.34569, quoted rounded as 1.3454 in places.
        assert!((bits - 1.3454).abs() < 1e-3);
    }

    #[test]
    fn entropy_parameters_reject_small_scale() {
        let mu = Tensor::zeros(&[1, 1, 1, 1]);
        assert!(EntropyParameters::new(mu.clone(), Tensor::full(&[1, 1, 1, 1], 0.05)).is_err());
        assert!(EntropyParameters::new(mu, Tensor::full(&[1, 1, 1, 1], SIGMA_MIN)).is_ok());
    }

    #[test]
    fn rate_estimate_total() {
        let r = RateEstimate::new(10.5, 2.25);
        assert_eq!(r.total_bits, 12.75);
    }
}
