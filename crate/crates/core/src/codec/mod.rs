//! The compressive autoencoder: analysis/synthesis transforms, the
//! hyperprior transforms and both quantization modes.
//!
//! Inputs are reflect-padded up to a multiple of [`LATENT_STRIDE`] and
//! reconstructions cropped back. The hyper-synthesis output is cropped to
//! the core-latent size when the latent has odd dimensions.

mod config;
mod params;
mod pipeline;

pub use config::{
    hyper_latent_dims, latent_dims, padded_dims, LayerKind, LayerSpec, NetworkConfig, HYPER_STRIDE, LATENT_STRIDE,
    MIN_IMAGE_SIDE,
};
pub(crate) use params::hex;
pub use params::{BoundModel, BoundTransform, ConvLayer, ModelParameters, Transform};
pub use pipeline::{compress, decompress, reconstruct, Reconstruction};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::entropy::{laplace_bits_var, EntropyParameters, FactorizedPrior, SIGMA_MIN};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// An RGB image with values in `[0, 1]`, stored planar (CHW).
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, chw: Vec<f64>) -> Result<Self> {
        if chw.len() != 3 * height * width {
            return Err(Error::shape(&[3, height, width], &[chw.len()]));
        }
        if let Some(v) = chw.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidValue(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            data: chw,
        })
    }

    /// From interleaved `H x W x 3` data.
    pub fn from_hwc(height: usize, width: usize, hwc: &[f64]) -> Result<Self> {
        if hwc.len() != 3 * height * width {
            return Err(Error::shape(&[height, width, 3], &[hwc.len()]));
        }
        let plane = height * width;
        let mut chw = vec![0.0; hwc.len()];
        for (i, px) in hwc.chunks_exact(3).enumerate() {
            for c in 0..3 {
                chw[c * plane + i] = px[c];
            }
        }
        Self::new(height, width, chw)
    }

    pub fn to_hwc(&self) -> Vec<f64> {
        let plane = self.height * self.width;
        let mut out = Vec::with_capacity(self.data.len());
        for i in 0..plane {
            for c in 0..3 {
                out.push(self.data[c * plane + i]);
            }
        }
        out
    }

    /// From a `[1, 3, H, W]` tensor, clamping to `[0, 1]`.
    pub fn from_tensor_clamped(t: &Tensor) -> Result<Self> {
        let (n, c, h, w) = t.dims4();
        if n != 1 || c != 3 {
            return Err(Error::shape(&[1, 3, h, w], t.shape()));
        }
        if !t.all_finite() {
            return Err(Error::InvalidValue("non-finite pixel".into()));
        }
        Self::new(h, w, t.data().iter().map(|v| v.clamp(0.0, 1.0)).collect())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn chw(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.data[(channel * self.height + row) * self.width + col]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(&[1, 3, self.height, self.width], self.data.clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentRole {
    /// `y` / `y_hat`
    Core,
    /// `z` / `z_hat`
    Hyper,
}

/// A `[n, c, h, w]` latent tensor tagged with its role.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentTensor {
    role: LatentRole,
    tensor: Tensor,
}

impl LatentTensor {
    pub fn new(role: LatentRole, tensor: Tensor) -> Result<Self> {
        if tensor.shape().len() != 4 {
            return Err(Error::InvalidValue(format!("latent must be rank 4, got {:?}", tensor.shape())));
        }
        if !tensor.all_finite() {
            return Err(Error::InvalidValue("non-finite latent".into()));
        }
        Ok(Self { role, tensor })
    }

    pub fn role(&self) -> LatentRole {
        self.role
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor {
        self.tensor
    }

    pub fn shape(&self) -> &[usize] {
        self.tensor.shape()
    }
}

fn check_min_dims(h: usize, w: usize) -> Result<()> {
    if h < MIN_IMAGE_SIDE || w < MIN_IMAGE_SIDE {
        return Err(Error::DimensionTooSmall {
            height: h,
            width: w,
            min: MIN_IMAGE_SIDE,
        });
    }
    Ok(())
}

/// Reflect-pad a batch up to the latent stride.
pub fn pad_input(g: &mut Graph, x: Var) -> Var {
    let (_, _, h, w) = g.value(x).dims4();
    let (ph, pw) = padded_dims(h, w);
    if (ph, pw) == (h, w) {
        x
    } else {
        g.reflect_pad(x, ph, pw)
    }
}

/// Means and lower-bounded scales predicted from a (noisy or rounded)
/// hyper-latent, cropped to the core-latent size.
pub fn hyper_parameters(g: &mut Graph, model: &BoundModel, m: usize, z: Var, latent: (usize, usize)) -> (Var, Var) {
    let mut hs = model.hyper_synthesis.forward(g, z);
    let (_, _, h, w) = g.value(hs).dims4();
    if (h, w) != latent {
        hs = g.crop(hs, latent.0, latent.1);
    }
    let mu = g.narrow_channels(hs, 0, m);
    let raw = g.narrow_channels(hs, m, m);
    let sigma = g.lower_bound(raw, SIGMA_MIN);
    (mu, sigma)
}

/// `[n, c, h, w]` i.i.d. uniform noise on `[-1/2, 1/2)`.
pub fn uniform_noise(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect())
}

/// Graph nodes of one training-mode pass.
pub struct TrainForward {
    /// Reconstruction at the input size, not clamped.
    pub x_hat: Var,
    pub bits_y: Var,
    pub bits_z: Var,
    /// Pixels per image of the (unpadded) input.
    pub pixels: usize,
    pub batch: usize,
}

/// Noisy-quantization pass used for training: both latents get additive
/// uniform noise, rates are measured on the noisy values.
pub fn forward_train(
    g: &mut Graph,
    model: &BoundModel,
    config: &NetworkConfig,
    prior: &FactorizedPrior,
    x: Var,
    rng: &mut impl Rng,
) -> TrainForward {
    let (n, _, h, w) = g.value(x).dims4();
    let xp = pad_input(g, x);
    let y = model.analysis.forward(g, xp);
    let z = model.hyper_analysis.forward(g, y);
    let z_noise = g.constant(uniform_noise(g.value(z).shape(), rng));
    let z_tilde = g.add(z, z_noise);
    let bits_z = prior.bits_var(g, z_tilde, &model.prior);
    let (_, _, yh, yw) = g.value(y).dims4();
    let (mu, sigma) = hyper_parameters(g, model, config.latent_channels, z_tilde, (yh, yw));
    let y_noise = g.constant(uniform_noise(g.value(y).shape(), rng));
    let y_tilde = g.add(y, y_noise);
    let bits_y = laplace_bits_var(g, y_tilde, mu, sigma);
    let xr = model.synthesis.forward(g, y_tilde);
    let x_hat = g.crop(xr, h, w);
    TrainForward {
        x_hat,
        bits_y,
        bits_z,
        pixels: h * w,
        batch: n,
    }
}

/// Core latent `y` of an image (input padded to the latent stride).
pub fn analyze(x: &ImageTensor, params: &ModelParameters) -> Result<LatentTensor> {
    check_min_dims(x.height(), x.width())?;
    let mut g = Graph::new();
    let t = g.constant(x.to_tensor());
    let bound = params.analysis.bind(&mut g, false);
    let xp = pad_input(&mut g, t);
    let y = bound.forward(&mut g, xp);
    LatentTensor::new(LatentRole::Core, g.value(y).clone())
}

fn synthesize_tensor(y_hat: &LatentTensor, params: &ModelParameters, target: (usize, usize)) -> Result<Tensor> {
    let (ph, pw) = padded_dims(target.0, target.1);
    let (lh, lw) = latent_dims(ph, pw);
    let (n, c, h, w) = y_hat.tensor().dims4();
    let expected = [n, params.config.latent_channels, lh, lw];
    if y_hat.role() != LatentRole::Core || [n, c, h, w] != expected {
        return Err(Error::shape(&expected, y_hat.shape()));
    }
    let mut g = Graph::new();
    let y = g.constant(y_hat.tensor().clone());
    let bound = params.synthesis.bind(&mut g, false);
    let xr = bound.forward(&mut g, y);
    let x = g.crop(xr, target.0, target.1);
    Ok(g.value(x).clone())
}

/// Reconstruction of size `target` (height, width), clamped to `[0, 1]`.
pub fn synthesize(y_hat: &LatentTensor, params: &ModelParameters, target: (usize, usize)) -> Result<ImageTensor> {
    let t = synthesize_tensor(y_hat, params, target)?;
    if t.shape()[0] != 1 {
        return Err(Error::shape(&[1], &t.shape()[..1]));
    }
    ImageTensor::from_tensor_clamped(&t)
}

pub fn hyper_analyze(y: &LatentTensor, params: &ModelParameters) -> Result<LatentTensor> {
    let (_, c, _, _) = y.tensor().dims4();
    if y.role() != LatentRole::Core || c != params.config.latent_channels {
        let mut want = y.shape().to_vec();
        want[1] = params.config.latent_channels;
        return Err(Error::shape(&want, y.shape()));
    }
    let mut g = Graph::new();
    let yv = g.constant(y.tensor().clone());
    let bound = params.hyper_analysis.bind(&mut g, false);
    let z = bound.forward(&mut g, yv);
    LatentTensor::new(LatentRole::Hyper, g.value(z).clone())
}

/// Means and scales for a core latent of spatial size `latent`.
pub fn hyper_synthesize(
    z_hat: &LatentTensor,
    params: &ModelParameters,
    latent: (usize, usize),
) -> Result<EntropyParameters> {
    let (n, c, zh, zw) = z_hat.tensor().dims4();
    let want_z = (latent.0.div_ceil(4), latent.1.div_ceil(4));
    if z_hat.role() != LatentRole::Hyper || c != params.config.hyper_channels || (zh, zw) != want_z {
        return Err(Error::shape(&[n, params.config.hyper_channels, want_z.0, want_z.1], z_hat.shape()));
    }
    let mut g = Graph::new();
    let model = params.bind(&mut g, false);
    let z = g.constant(z_hat.tensor().clone());
    let (mu, sigma) = hyper_parameters(&mut g, &model, params.config.latent_channels, z, latent);
    EntropyParameters::new(g.value(mu).clone(), g.value(sigma).clone())
}

/// Additive-noise proxy for quantization.
pub fn quantize_train(v: &LatentTensor, rng: &mut impl Rng) -> LatentTensor {
    let noise = uniform_noise(v.shape(), rng);
    LatentTensor {
        role: v.role,
        tensor: v.tensor.zip_map(&noise, |a, b| a + b),
    }
}

/// Rounding, optionally of the residual around `means`.
pub fn quantize_infer(v: &LatentTensor, means: Option<&Tensor>) -> Result<LatentTensor> {
    let tensor = match means {
        Some(mu) => {
            if mu.shape() != v.shape() {
                return Err(Error::shape(v.shape(), mu.shape()));
            }
            v.tensor.zip_map(mu, |x, m| (x - m).round() + m)
        }
        None => v.tensor.map(f64::round),
    };
    Ok(LatentTensor { role: v.role, tensor })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy(seed: u64) -> ModelParameters {
        ModelParameters::init(NetworkConfig::toy(), &mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn image(h: usize, w: usize, seed: u64) -> ImageTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageTensor::new(h, w, (0..3 * h * w).map(|_| rng.gen::<f64>()).collect()).unwrap()
    }

    fn latent(role: LatentRole, shape: &[usize], values: Vec<f64>) -> LatentTensor {
        LatentTensor::new(role, Tensor::from_vec(shape, values)).unwrap()
    }

    #[test]
    fn analyze_shapes() {
        let mut config = NetworkConfig::toy();
        config.latent_channels = 8;
        let p = ModelParameters::init(config, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(analyze(&image(64, 64, 1), &p).unwrap().shape(), &[1, 8, 4, 4]);
        assert_eq!(analyze(&image(100, 100, 1), &p).unwrap().shape(), &[1, 8, 7, 7]);
    }

    #[test]
    fn analyze_full_width_shape() {
        let mut config = NetworkConfig::full();
        config.hyper_channels = 8; // keep the test light; M is what is checked
        let p = ModelParameters::init(config, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(analyze(&image(128, 96, 2), &p).unwrap().shape(), &[1, 192, 8, 6]);
    }

    #[test]
    fn too_small_is_rejected() {
        let err = analyze(&image(63, 80, 1), &toy(0)).unwrap_err();
        assert!(matches!(err, Error::DimensionTooSmall { .. }));
    }

    #[test]
    fn zero_final_layer_gives_zero_latent() {
        let mut p = toy(3);
        p.analysis.layers.last_mut().unwrap().zero();
        let x = ImageTensor::new(64, 64, vec![0.0; 3 * 64 * 64]).unwrap();
        assert!(analyze(&x, &p).unwrap().tensor().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn synthesize_crops_to_target() {
        let p = toy(4);
        let y = latent(LatentRole::Core, &[1, 32, 4, 4], vec![0.1; 32 * 16]);
        let x = synthesize(&y, &p, (64, 64)).unwrap();
        assert_eq!((x.height(), x.width()), (64, 64));
        assert!(x.chw().iter().all(|v| (0.0..=1.0).contains(v)));

        let y = latent(LatentRole::Core, &[1, 32, 7, 7], vec![0.1; 32 * 49]);
        let x = synthesize(&y, &p, (100, 100)).unwrap();
        assert_eq!((x.height(), x.width()), (100, 100));
        assert!(matches!(synthesize(&y, &p, (64, 64)), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn hyper_shapes() {
        let mut config = NetworkConfig::toy();
        config.latent_channels = 8;
        config.hyper_channels = 12;
        let p = ModelParameters::init(config, &mut ChaCha8Rng::seed_from_u64(5));
        let y = latent(LatentRole::Core, &[1, 8, 8, 8], vec![0.3; 8 * 64]);
        let z = hyper_analyze(&y, &p).unwrap();
        assert_eq!(z.shape(), &[1, 12, 2, 2]);
        let ep = hyper_synthesize(&z, &p, (8, 8)).unwrap();
        assert_eq!(ep.mu.shape(), &[1, 8, 8, 8]);
        assert_eq!(ep.sigma.shape(), &[1, 8, 8, 8]);
        assert!(ep.sigma.data().iter().all(|&s| s >= SIGMA_MIN));

        let y = latent(LatentRole::Core, &[1, 8, 4, 4], vec![0.3; 8 * 16]);
        assert_eq!(hyper_analyze(&y, &p).unwrap().shape(), &[1, 12, 1, 1]);
    }

    #[test]
    fn hyper_zero_weights() {
        let mut p = toy(6);
        for l in &mut p.hyper_analysis.layers {
            l.zero();
        }
        p.hyper_synthesis.layers.last_mut().unwrap().zero();
        let y = latent(LatentRole::Core, &[1, 32, 4, 4], (0..512).map(|i| i as f64 * 0.01).collect());
        let z = hyper_analyze(&y, &p).unwrap();
        assert!(z.tensor().data().iter().all(|&v| v == 0.0));
        let ep = hyper_synthesize(&z, &p, (4, 4)).unwrap();
        assert!(ep.sigma.data().iter().all(|&s| s == SIGMA_MIN));
    }

    #[test]
    fn quantize_infer_examples() {
        let v = latent(LatentRole::Core, &[1, 1, 1, 3], vec![0.4, -1.6, 1.3]);
        assert_eq!(quantize_infer(&v, None).unwrap().tensor().data(), &[0.0, -2.0, 1.0]);
        let mu = Tensor::from_vec(&[1, 1, 1, 3], vec![0.0, 0.0, 1.1]);
        let q = quantize_infer(&v, Some(&mu)).unwrap();
        assert!((q.tensor().data()[2] - 1.1).abs() < 1e-15);
        let bad = Tensor::zeros(&[1, 1, 1, 2]);
        assert!(quantize_infer(&v, Some(&bad)).is_err());
    }

    #[test]
    fn quantize_train_bounds_and_determinism() {
        let v = latent(LatentRole::Core, &[1, 4, 8, 8], (0..256).map(|i| (i as f64).sin() * 3.0).collect());
        let a = quantize_train(&v, &mut ChaCha8Rng::seed_from_u64(9));
        let b = quantize_train(&v, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        for (x, y) in v.tensor().data().iter().zip(a.tensor().data()) {
            assert!((y - x) >= -0.5 && (y - x) < 0.5);
        }
    }

    #[test]
    fn inference_is_deterministic() {
        let p = toy(7);
        let x = image(64, 80, 3);
        let a = analyze(&x, &p).unwrap();
        let b = analyze(&x, &p).unwrap();
        assert_eq!(a, b);
    }
}
