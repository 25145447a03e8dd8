use rand::Rng;
use sha2::{Digest, Sha256};

use super::config::{LayerKind, LayerSpec, NetworkConfig};
use crate::autodiff::{Graph, Var};
use crate::checkpoint::Checkpoint;
use crate::entropy::FactorizedPrior;
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub spec: LayerSpec,
    pub weight: Tensor,
    pub bias: Tensor,
}

impl ConvLayer {
    /// He-uniform weights, zero bias. Transposed layers count the fan-in a
    /// single output sees (`in * k^2 / stride^2`).
    pub fn init(spec: LayerSpec, rng: &mut impl Rng) -> Self {
        let shape = spec.weight_shape();
        let taps = (spec.kernel * spec.kernel) as f64;
        let fan_in = match spec.kind {
            LayerKind::Conv => spec.in_channels as f64 * taps,
            LayerKind::ConvTranspose => spec.in_channels as f64 * taps / (spec.stride * spec.stride) as f64,
        };
        let bound = (6.0 / fan_in).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        Self {
            spec,
            weight: Tensor::from_vec(&shape, data),
            bias: Tensor::zeros(&[spec.out_channels]),
        }
    }

    pub fn zero(&mut self) {
        self.weight.data_mut().fill(0.0);
        self.bias.data_mut().fill(0.0);
    }
}

/// A stack of convolution layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Transform {
    pub layers: Vec<ConvLayer>,
}

/// A [`Transform`] whose weights live in a graph.
#[derive(Clone, Debug)]
pub struct BoundTransform {
    specs: Vec<LayerSpec>,
    vars: Vec<(Var, Var)>,
}

impl Transform {
    pub fn init(specs: &[LayerSpec], rng: &mut impl Rng) -> Self {
        Self {
            layers: specs.iter().map(|&s| ConvLayer::init(s, rng)).collect(),
        }
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundTransform {
        BoundTransform {
            specs: self.layers.iter().map(|l| l.spec).collect(),
            vars: self
                .layers
                .iter()
                .map(|l| (g.leaf(l.weight.clone(), trainable), g.leaf(l.bias.clone(), trainable)))
                .collect(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }
}

impl BoundTransform {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        self.forward_until(g, x, self.specs.len())
    }

    /// Output of the first `layers` layers (activation included).
    pub fn forward_until(&self, g: &mut Graph, mut x: Var, layers: usize) -> Var {
        for (spec, &(w, b)) in self.specs.iter().zip(&self.vars).take(layers) {
            x = match spec.kind {
                LayerKind::Conv => g.conv2d(x, w, b, spec.stride, spec.padding()),
                LayerKind::ConvTranspose => {
                    g.conv_transpose2d(x, w, b, spec.stride, spec.padding(), spec.output_padding())
                }
            };
            if spec.relu {
                x = g.relu(x);
            }
        }
        x
    }

    pub fn vars(&self) -> impl Iterator<Item = Var> + '_ {
        self.vars.iter().flat_map(|&(w, b)| [w, b])
    }
}

/// Weights of the four transforms plus the hyper-latent prior.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParameters {
    pub config: NetworkConfig,
    pub analysis: Transform,
    pub synthesis: Transform,
    pub hyper_analysis: Transform,
    pub hyper_synthesis: Transform,
    pub prior: FactorizedPrior,
}

/// All model parameters bound into one graph.
pub struct BoundModel {
    pub analysis: BoundTransform,
    pub synthesis: BoundTransform,
    pub hyper_analysis: BoundTransform,
    pub hyper_synthesis: BoundTransform,
    pub prior: Vec<Var>,
}

impl BoundModel {
    /// Variables in the same order as [`ModelParameters::tensors`].
    pub fn vars(&self) -> Vec<Var> {
        self.analysis
            .vars()
            .chain(self.synthesis.vars())
            .chain(self.hyper_analysis.vars())
            .chain(self.hyper_synthesis.vars())
            .chain(self.prior.iter().copied())
            .collect()
    }
}

const TRANSFORM_NAMES: [&str; 4] = ["g_a", "g_s", "h_a", "h_s"];
const FORMAT_TAG: &str = "vcmlab-codec-v1";

impl ModelParameters {
    pub fn init(config: NetworkConfig, rng: &mut impl Rng) -> Self {
        Self {
            analysis: Transform::init(&config.analysis_layers(), rng),
            synthesis: Transform::init(&config.synthesis_layers(), rng),
            hyper_analysis: Transform::init(&config.hyper_analysis_layers(), rng),
            hyper_synthesis: Transform::init(&config.hyper_synthesis_layers(), rng),
            prior: FactorizedPrior::new(config.hyper_channels, rng),
            config,
        }
    }

    fn transforms(&self) -> [&Transform; 4] {
        [&self.analysis, &self.synthesis, &self.hyper_analysis, &self.hyper_synthesis]
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = self
            .transforms()
            .into_iter()
            .flat_map(|t| t.layers.iter().flat_map(|l| [&l.weight, &l.bias]))
            .collect();
        out.extend(self.prior.tensors());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        for t in [
            &mut self.analysis,
            &mut self.synthesis,
            &mut self.hyper_analysis,
            &mut self.hyper_synthesis,
        ] {
            for l in &mut t.layers {
                out.push(&mut l.weight);
                out.push(&mut l.bias);
            }
        }
        out.extend(self.prior.tensors_mut());
        out
    }

    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (name, t) in TRANSFORM_NAMES.iter().zip(self.transforms()) {
            for i in 0..t.layers.len() {
                names.push(format!("{name}.{i}.weight"));
                names.push(format!("{name}.{i}.bias"));
            }
        }
        names.extend(self.prior.tensor_names());
        names
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundModel {
        BoundModel {
            analysis: self.analysis.bind(g, trainable),
            synthesis: self.synthesis.bind(g, trainable),
            hyper_analysis: self.hyper_analysis.bind(g, trainable),
            hyper_synthesis: self.hyper_synthesis.bind(g, trainable),
            prior: self.prior.bind(g, trainable),
        }
    }

    /// SHA-256 over the config id and every parameter's bytes, hex encoded.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.config.id().to_le_bytes());
        for t in self.tensors() {
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex(&h.finalize())
    }

    /// Leading 64 bits of [`Self::fingerprint`], stored in bitstream headers.
    pub fn model_id(&self) -> u64 {
        u64::from_str_radix(&self.fingerprint()[..16], 16).expect("hex digest")
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(FORMAT_TAG, serde_json::to_value(&self.config).expect("config serializes"));
        for (name, t) in self.tensor_names().into_iter().zip(self.tensors()) {
            ck.tensors.push((name, t.clone()));
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.format != FORMAT_TAG {
            return Err(Error::VersionMismatch(format!(
                "expected a `{FORMAT_TAG}` checkpoint, found `{}`",
                ck.format
            )));
        }
        let config: NetworkConfig =
            serde_json::from_value(ck.config.clone()).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
        config.validate()?;
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let mut params = Self::init(config, &mut rng);
        let names = params.tensor_names();
        if names.len() != ck.tensors.len() {
            return Err(Error::CorruptCheckpoint(format!(
                "expected {} tensors, found {}",
                names.len(),
                ck.tensors.len()
            )));
        }
        for ((slot, name), (ck_name, t)) in params.tensors_mut().into_iter().zip(&names).zip(&ck.tensors) {
            if name != ck_name || slot.shape() != t.shape() {
                return Err(Error::CorruptCheckpoint(format!(
                    "tensor `{ck_name}` {:?} does not match `{name}` {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t.clone();
        }
        Ok(params)
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
