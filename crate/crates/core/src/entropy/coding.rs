use std::collections::HashMap;

use super::cdf::QuantizedCdf;
use super::laplace::bin_mass;
use super::range_coder::{RangeDecoder, RangeEncoder};
use super::{Bitstream, BitstreamHeader, EntropyParameters, FactorizedPrior, ALPHABET_LIMIT, PRECISION_BITS};
use crate::codec::{hyper_latent_dims, hyper_synthesize, latent_dims, LatentRole, LatentTensor, ModelParameters};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Tail mass below which prior-table symbols are folded into the escape bins.
const PRIOR_TAIL_MASS: f64 = 1.0 / 131_072.0;

/// Frequency table for integer residuals under a zero-mean Laplace of
/// scale `sigma`. The explicit support shrinks with the scale so that
/// the per-bin count floor does not eat into the probable symbols.
pub fn laplace_table(sigma: f64) -> QuantizedCdf {
    let k = ((sigma * f64::from(PRECISION_BITS) * std::f64::consts::LN_2 - 0.5).ceil() as i32)
        .clamp(1, ALPHABET_LIMIT);
    let pmf: Vec<f64> = (-k..=k).map(|r| bin_mass(f64::from(r), sigma)).collect();
    let tail = 0.5 * (-(f64::from(k) + 0.5) / sigma).exp();
    QuantizedCdf::from_masses(-k, &pmf, tail, tail)
}

fn prior_table(prior: &FactorizedPrior, channel: usize) -> QuantizedCdf {
    let (pmf, mut below, mut above) = prior.integer_pmf(channel, -ALPHABET_LIMIT, ALPHABET_LIMIT);
    let (mut lo, mut hi) = (0, pmf.len() - 1);
    while lo < hi && below + pmf[lo] < PRIOR_TAIL_MASS {
        below += pmf[lo];
        lo += 1;
    }
    while hi > lo && above + pmf[hi] < PRIOR_TAIL_MASS {
        above += pmf[hi];
        hi -= 1;
    }
    QuantizedCdf::from_masses(lo as i32 - ALPHABET_LIMIT, &pmf[lo..=hi], below, above)
}

fn to_symbol(v: f64) -> Result<i32> {
    let r = v.round();
    if !r.is_finite() || r.abs() > f64::from(ALPHABET_LIMIT) {
        return Err(Error::SymbolOutOfAlphabet {
            value: if r.is_finite() { r as i64 } else { i64::MAX },
            limit: i64::from(ALPHABET_LIMIT),
        });
    }
    Ok(r as i32)
}

/// Range-code the quantized latents. `y_hat` must hold mean-offset rounded
/// values (`round(y - mu) + mu`) and `z_hat` integers.
pub fn encode_latents(
    y_hat: &LatentTensor,
    z_hat: &LatentTensor,
    params: &EntropyParameters,
    prior: &FactorizedPrior,
    header: BitstreamHeader,
) -> Result<Bitstream> {
    let y = y_hat.tensor();
    let z = z_hat.tensor();
    if y.shape() != params.mu.shape() {
        return Err(Error::shape(params.mu.shape(), y.shape()));
    }
    let (_, zc, zh, zw) = z.dims4();
    if zc != prior.channels {
        return Err(Error::shape(&[prior.channels], &[zc]));
    }

    let mut enc = RangeEncoder::new();
    for ch in 0..zc {
        let table = prior_table(prior, ch);
        for &v in &z.data()[ch * zh * zw..(ch + 1) * zh * zw] {
            table.encode(&mut enc, to_symbol(v)?)?;
        }
    }
    let b2 = enc.finish();

    let mut enc = RangeEncoder::new();
    let mut tables: HashMap<u64, QuantizedCdf> = HashMap::new();
    for ((&v, &m), &s) in y.data().iter().zip(params.mu.data()).zip(params.sigma.data()) {
        let table = tables.entry(s.to_bits()).or_insert_with(|| laplace_table(s));
        table.encode(&mut enc, to_symbol(v - m)?)?;
    }
    let b1 = enc.finish();

    Ok(Bitstream { header, b1, b2 })
}

fn check_consumed(dec: &RangeDecoder<'_>, len: usize, name: &str) -> Result<()> {
    if dec.position() > len {
        return Err(Error::CorruptStream(format!("{name} ended before all symbols were decoded")));
    }
    Ok(())
}

/// Inverse of [`encode_latents`]: decodes `z_hat` first, predicts the
/// conditional parameters from it, then decodes `y_hat`.
pub fn decode_latents(bitstream: &Bitstream, params: &ModelParameters) -> Result<(LatentTensor, LatentTensor)> {
    let h = &bitstream.header;
    if h.config_id != params.config.id() {
        return Err(Error::VersionMismatch(format!(
            "bitstream network config {:08x}, checkpoint has {:08x}",
            h.config_id,
            params.config.id()
        )));
    }
    if h.model_id != params.model_id() {
        return Err(Error::VersionMismatch(format!(
            "bitstream model id {:016x}, checkpoint has {:016x}",
            h.model_id,
            params.model_id()
        )));
    }
    let (ph, pw) = (h.padded_height as usize, h.padded_width as usize);
    let (zh, zw) = hyper_latent_dims(ph, pw);
    let (yh, yw) = latent_dims(ph, pw);
    let n = params.config.hyper_channels;

    let mut dec = RangeDecoder::new(&bitstream.b2)?;
    let mut z = Vec::with_capacity(n * zh * zw);
    for ch in 0..n {
        let table = prior_table(&params.prior, ch);
        for _ in 0..zh * zw {
            z.push(f64::from(table.decode(&mut dec)?));
        }
    }
    check_consumed(&dec, bitstream.b2.len(), "b2")?;
    let z_hat = LatentTensor::new(LatentRole::Hyper, Tensor::from_vec(&[1, n, zh, zw], z))?;

    let ep = hyper_synthesize(&z_hat, params, (yh, yw))?;
    let mut dec = RangeDecoder::new(&bitstream.b1)?;
    let mut tables: HashMap<u64, QuantizedCdf> = HashMap::new();
    let mut y = Vec::with_capacity(ep.mu.len());
    for (&m, &s) in ep.mu.data().iter().zip(ep.sigma.data()) {
        let table = tables.entry(s.to_bits()).or_insert_with(|| laplace_table(s));
        y.push(f64::from(table.decode(&mut dec)?) + m);
    }
    check_consumed(&dec, bitstream.b1.len(), "b1")?;
    let y_hat = LatentTensor::new(LatentRole::Core, Tensor::from_vec(ep.mu.shape(), y))?;
    Ok((y_hat, z_hat))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn laplace_table_support_grows_with_scale() {
        assert_eq!(laplace_table(0.11).support(), (-1, 1));
        let (lo, hi) = laplace_table(4.0).support();
        assert_eq!(lo, -hi);
        assert!(hi > 10);
        assert_eq!(laplace_table(1000.0).support(), (-255, 255));
    }

    #[test]
    fn table_cost_tracks_exact_information() {
        for &s in &[0.11, 0.3, 1.0, 5.0, 40.0] {
            let t = laplace_table(s);
            let (lo, hi) = t.support();
            for r in lo.max(-3)..=hi.min(3) {
                let exact = -bin_mass(f64::from(r), s).max(super::super::P_MIN).log2();
                let coded = t.cost_bits(r);
                assert!((coded - exact).abs() < 0.02 * exact.max(1.0), "s={s} r={r}: {coded} vs {exact}");
            }
        }
    }
}
