use super::{
    analyze, hyper_analyze, hyper_synthesize, padded_dims, quantize_infer, synthesize, ImageTensor, ModelParameters,
};
use crate::entropy::{bits_per_pixel, decode_latents, encode_latents, Bitstream, BitstreamHeader};
use crate::Result;

/// Encode one image. `lambda` is only recorded in the header.
pub fn compress(x: &ImageTensor, params: &ModelParameters, lambda: f64) -> Result<Bitstream> {
    let y = analyze(x, params)?;
    let z = hyper_analyze(&y, params)?;
    let z_hat = quantize_infer(&z, None)?;
    let (_, _, yh, yw) = y.tensor().dims4();
    let ep = hyper_synthesize(&z_hat, params, (yh, yw))?;
    let y_hat = quantize_infer(&y, Some(&ep.mu))?;
    let (ph, pw) = padded_dims(x.height(), x.width());
    let header = BitstreamHeader {
        height: x.height() as u32,
        width: x.width() as u32,
        padded_height: ph as u32,
        padded_width: pw as u32,
        config_id: params.config.id(),
        model_id: params.model_id(),
        lambda,
    };
    encode_latents(&y_hat, &z_hat, &ep, &params.prior, header)
}

pub fn decompress(bitstream: &Bitstream, params: &ModelParameters) -> Result<ImageTensor> {
    let (y_hat, _) = decode_latents(bitstream, params)?;
    let h = &bitstream.header;
    synthesize(&y_hat, params, (h.height as usize, h.width as usize))
}

/// An image after a full encode/decode round trip.
#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub image: ImageTensor,
    pub bitstream: Bitstream,
}

impl Reconstruction {
    pub fn bpp(&self) -> f64 {
        let h = &self.bitstream.header;
        bits_per_pixel(self.bitstream.payload_bits() as f64, h.width as usize, h.height as usize)
            .expect("images have non-zero area")
    }
}

/// Compress and decode again, so reported rates come from real bitstreams.
pub fn reconstruct(x: &ImageTensor, params: &ModelParameters, lambda: f64) -> Result<Reconstruction> {
    let bitstream = compress(x, params, lambda)?;
    let image = decompress(&bitstream, params)?;
    Ok(Reconstruction { image, bitstream })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::NetworkConfig;
    use crate::Error;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(h: usize, w: usize) -> (ModelParameters, ImageTensor) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = ModelParameters::init(NetworkConfig::toy(), &mut rng);
        let x = ImageTensor::new(h, w, (0..3 * h * w).map(|_| rng.gen::<f64>()).collect()).unwrap();
        (p, x)
    }

    #[test]
    fn round_trip_matches_direct_synthesis() {
        let (p, x) = setup(80, 64);
        let r = reconstruct(&x, &p, 4.0).unwrap();
        assert_eq!((r.image.height(), r.image.width()), (80, 64));
        let bytes = r.bitstream.to_bytes();
        let back = Bitstream::from_bytes(&bytes).unwrap();
        assert_eq!(decompress(&back, &p).unwrap(), r.image);

        // Same as running synthesis on the encoder-side quantized latent.
        let y = analyze(&x, &p).unwrap();
        let z_hat = quantize_infer(&hyper_analyze(&y, &p).unwrap(), None).unwrap();
        let (_, _, yh, yw) = y.tensor().dims4();
        let ep = hyper_synthesize(&z_hat, &p, (yh, yw)).unwrap();
        let y_hat = quantize_infer(&y, Some(&ep.mu)).unwrap();
        assert_eq!(synthesize(&y_hat, &p, (80, 64)).unwrap(), r.image);
        assert!(r.bpp() > 0.0);
    }

    #[test]
    fn wrong_model_is_rejected() {
        let (p, x) = setup(64, 64);
        let bs = compress(&x, &p, 1.0).unwrap();
        let mut q = p.clone();
        q.synthesis.layers[0].bias.data_mut()[0] += 0.5;
        assert!(matches!(decompress(&bs, &q), Err(Error::VersionMismatch(_))));
    }
}
