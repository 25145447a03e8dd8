//! Frozen analysis network: predictions, backbone features, hardened
//! pseudo annotations and the task loss.
//!
//! The bundled network is a small fully-convolutional semantic
//! segmentation net: three stride-2 encoder stages followed by three
//! stride-2 transposed stages back to full resolution.

mod annotations;
mod fit;
mod loss;

pub use annotations::{
    harden_predictions, AnnotationContent, Annotations, InstanceAnnotation, InstancePrediction, LabelMap, Provenance,
    TaskPredictions, IGNORE_INDEX,
};
pub(crate) use annotations::argmax;
pub use fit::fit_task_net;
pub use loss::{softmax_cross_entropy, softmax_cross_entropy_var, task_loss, task_loss_var};

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{Graph, Var};
use crate::checkpoint::Checkpoint;
use crate::codec::{BoundTransform, ImageTensor, LayerSpec, Transform};
use crate::tensor::Tensor;
use crate::{Error, Result};

const FORMAT_TAG: &str = "vcmlab-tasknet-v1";

/// A named depth in the encoder at which features can be tapped.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CutPoint {
    pub name: String,
    /// Number of encoder layers evaluated.
    pub layers: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskNetConfig {
    pub num_classes: usize,
    pub encoder_widths: Vec<usize>,
    /// Widths of the inner transposed stages; the last stage outputs
    /// `num_classes` channels.
    pub decoder_widths: Vec<usize>,
    pub cut_points: Vec<CutPoint>,
}

impl Default for TaskNetConfig {
    fn default() -> Self {
        Self {
            num_classes: 4,
            encoder_widths: vec![16, 32, 48],
            decoder_widths: vec![24, 16],
            cut_points: (1..=3)
                .map(|i| CutPoint {
                    name: format!("stage{i}"),
                    layers: i,
                })
                .collect(),
        }
    }
}

impl TaskNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config("task network needs at least two classes".into()));
        }
        if self.encoder_widths.is_empty() || self.decoder_widths.len() + 1 != self.encoder_widths.len() {
            return Err(Error::Config(
                "decoder must have one stage fewer than the encoder (plus the output stage)".into(),
            ));
        }
        for cp in &self.cut_points {
            if cp.layers == 0 || cp.layers > self.encoder_widths.len() {
                return Err(Error::Config(format!("cut point `{}` is outside the encoder", cp.name)));
            }
        }
        Ok(())
    }

    /// Input sides must be a multiple of this.
    pub fn stride(&self) -> usize {
        1 << self.encoder_widths.len()
    }

    pub fn layers(&self) -> Vec<LayerSpec> {
        let mut specs = Vec::new();
        let mut c = 3;
        for &w in &self.encoder_widths {
            specs.push(LayerSpec::conv(c, w, 3, 2, true));
            c = w;
        }
        for &w in &self.decoder_widths {
            specs.push(LayerSpec::tconv(c, w, 5, true));
            c = w;
        }
        specs.push(LayerSpec::tconv(c, self.num_classes, 5, false));
        specs
    }

    pub fn cut_point(&self, name: &str) -> Result<&CutPoint> {
        self.cut_points
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| Error::UnknownCutPoint(name.to_string()))
    }

    fn check_input(&self, h: usize, w: usize) -> Result<()> {
        let s = self.stride();
        if h == 0 || w == 0 || h % s != 0 || w % s != 0 {
            return Err(Error::InvalidValue(format!(
                "task network input {h}x{w} is not a positive multiple of {s}"
            )));
        }
        Ok(())
    }
}

/// Features at a cut point.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub cut_point: String,
    pub tensor: Tensor,
}

/// Task-network weights together with the fingerprint taken at load time.
#[derive(Clone, Debug)]
pub struct FrozenNetworkHandle {
    config: TaskNetConfig,
    net: Transform,
    recorded: String,
}

fn fingerprint_of(config: &TaskNetConfig, net: &Transform) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(config).expect("config serializes"));
    for l in &net.layers {
        for v in l.weight.data().iter().chain(l.bias.data()) {
            h.update(v.to_le_bytes());
        }
    }
    crate::codec::hex(&h.finalize())
}

impl FrozenNetworkHandle {
    pub fn new(config: TaskNetConfig, net: Transform) -> Result<Self> {
        config.validate()?;
        let specs = config.layers();
        if net.layers.len() != specs.len() || net.layers.iter().zip(&specs).any(|(l, s)| l.spec != *s) {
            return Err(Error::Config("task network weights do not match the config".into()));
        }
        let recorded = fingerprint_of(&config, &net);
        Ok(Self { config, net, recorded })
    }

    /// Randomly initialised network, mostly useful for tests.
    pub fn init(config: TaskNetConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let net = Transform::init(&config.layers(), rng);
        Self::new(config, net)
    }

    pub fn config(&self) -> &TaskNetConfig {
        &self.config
    }

    pub fn weights(&self) -> &Transform {
        &self.net
    }

    /// Direct weight access. Any change makes [`Self::assert_frozen`] fail.
    pub fn weights_mut(&mut self) -> &mut Transform {
        &mut self.net
    }

    pub fn parameter_count(&self) -> usize {
        self.net.parameter_count()
    }

    /// Hash of the current weights.
    pub fn fingerprint(&self) -> String {
        fingerprint_of(&self.config, &self.net)
    }

    /// Fingerprint recorded when the handle was created.
    pub fn recorded_fingerprint(&self) -> &str {
        &self.recorded
    }

    pub fn assert_frozen(&self) -> bool {
        self.fingerprint() == self.recorded
    }

    /// Weights enter the graph as leaves that never receive gradients.
    pub fn bind(&self, g: &mut Graph) -> BoundTaskNet<'_> {
        BoundTaskNet {
            config: &self.config,
            net: self.net.bind(g, false),
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(FORMAT_TAG, serde_json::to_value(&self.config).expect("config serializes"));
        for (i, l) in self.net.layers.iter().enumerate() {
            ck.tensors.push((format!("net.{i}.weight"), l.weight.clone()));
            ck.tensors.push((format!("net.{i}.bias"), l.bias.clone()));
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
        let config: TaskNetConfig =
            serde_json::from_value(ck.config.clone()).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
        config.validate()?;
        let specs = config.layers();
        if ck.tensors.len() != 2 * specs.len() {
            return Err(Error::CorruptCheckpoint(format!(
                "expected {} tensors, found {}",
                2 * specs.len(),
                ck.tensors.len()
            )));
        }
        let mut layers = Vec::with_capacity(specs.len());
        for (spec, pair) in specs.into_iter().zip(ck.tensors.chunks_exact(2)) {
            let (weight, bias) = (pair[0].1.clone(), pair[1].1.clone());
            if weight.shape() != spec.weight_shape() || bias.shape() != [spec.out_channels] {
                return Err(Error::CorruptCheckpoint(format!("tensor `{}` has the wrong shape", pair[0].0)));
            }
            layers.push(crate::codec::ConvLayer { spec, weight, bias });
        }
        Self::new(config, Transform { layers })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }
}

/// A task network bound into a graph.
pub struct BoundTaskNet<'a> {
    config: &'a TaskNetConfig,
    net: BoundTransform,
}

impl BoundTaskNet<'_> {
    /// Per-pixel class logits `[n, K, H, W]`.
    pub fn logits(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let (_, c, h, w) = g.value(x).dims4();
        if c != 3 {
            return Err(Error::shape(&[3], &[c]));
        }
        self.config.check_input(h, w)?;
        Ok(self.net.forward(g, x))
    }

    pub fn features(&self, g: &mut Graph, x: Var, cut_point: &str) -> Result<Var> {
        let cp = self.config.cut_point(cut_point)?;
        let (_, _, h, w) = g.value(x).dims4();
        self.config.check_input(h, w)?;
        Ok(self.net.forward_until(g, x, cp.layers))
    }
}

/// Logits for a batch `[n, 3, H, W]`.
pub fn predict_batch(x: &Tensor, net: &FrozenNetworkHandle) -> Result<TaskPredictions> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let bound = net.bind(&mut g);
    let logits = bound.logits(&mut g, xv)?;
    Ok(TaskPredictions::Semantic(g.value(logits).clone()))
}

pub fn predict(x: &ImageTensor, net: &FrozenNetworkHandle) -> Result<TaskPredictions> {
    predict_batch(&x.to_tensor(), net)
}

pub fn extract_features(x: &ImageTensor, net: &FrozenNetworkHandle, cut_point: &str) -> Result<FeatureMap> {
    let mut g = Graph::new();
    let xv = g.constant(x.to_tensor());
    let bound = net.bind(&mut g);
    let f = bound.features(&mut g, xv, cut_point)?;
    Ok(FeatureMap {
        cut_point: cut_point.to_string(),
        tensor: g.value(f).clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net(seed: u64) -> FrozenNetworkHandle {
        FrozenNetworkHandle::init(TaskNetConfig::default(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn image(seed: u64) -> ImageTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageTensor::new(64, 64, (0..3 * 64 * 64).map(|_| rng.gen::<f64>()).collect()).unwrap()
    }

    #[test]
    fn default_net_is_small() {
        let n = net(0).parameter_count();
        assert!((40_000..70_000).contains(&n), "{n}");
    }

    #[test]
    fn prediction_shape_and_determinism() {
        let mut config = TaskNetConfig::default();
        config.num_classes = 2;
        let h = FrozenNetworkHandle::init(config, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let x = ImageTensor::new(64, 64, vec![0.5; 3 * 64 * 64]).unwrap();
        let a = predict(&x, &h).unwrap();
        let TaskPredictions::Semantic(t) = &a else { panic!() };
        assert_eq!(t.shape(), &[1, 2, 64, 64]);
        assert_eq!(a, predict(&x, &h).unwrap());
    }

    #[test]
    fn incompatible_size_is_rejected() {
        let x = ImageTensor::new(68, 64, vec![0.5; 3 * 68 * 64]).unwrap();
        assert!(matches!(predict(&x, &net(0)), Err(Error::InvalidValue(_))));
    }

    #[test]
    fn feature_shapes_and_cut_points() {
        let h = net(2);
        let x = image(3);
        assert_eq!(extract_features(&x, &h, "stage1").unwrap().tensor.shape(), &[1, 16, 32, 32]);
        assert_eq!(extract_features(&x, &h, "stage3").unwrap().tensor.shape(), &[1, 48, 8, 8]);
        assert!(matches!(extract_features(&x, &h, "p2"), Err(Error::UnknownCutPoint(_))));
        assert_eq!(extract_features(&x, &h, "stage2").unwrap(), extract_features(&x, &h, "stage2").unwrap());
    }

    #[test]
    fn features_are_continuous() {
        let h = net(4);
        let x = image(5);
        let base = extract_features(&x, &h, "stage2").unwrap().tensor;
        let mut last = f64::INFINITY;
        for eps in [1e-2, 1e-4, 1e-6] {
            let shifted: Vec<f64> = x.chw().iter().map(|v| (v + eps).min(1.0)).collect();
            let y = ImageTensor::new(64, 64, shifted).unwrap();
            let f = extract_features(&y, &h, "stage2").unwrap().tensor;
            let d = f.zip_map(&base, |a, b| (a - b).powi(2)).sum().sqrt();
            assert!(d < last);
            last = d;
        }
        assert!(last < 1e-4);
    }

    #[test]
    fn prediction_gradient_matches_finite_difference() {
        let h = net(6);
        let x = image(7).to_tensor();
        let loss = |t: &Tensor| {
            let mut g = Graph::new();
            let xv = g.leaf(t.clone(), true);
            let b = h.bind(&mut g);
            let l = b.logits(&mut g, xv).unwrap();
            let s = g.sum(l);
            (g.value(s).item(), g.backward(s).get(xv).cloned())
        };
        let (_, grad) = loss(&x);
        let grad = grad.unwrap();
        for &i in &[5usize, 1000, 4097, 9000, 12000] {
            let eps = 1e-5;
            let mut p = x.clone();
            p.data_mut()[i] += eps;
            let mut m = x.clone();
            m.data_mut()[i] -= eps;
            let fd = (loss(&p).0 - loss(&m).0) / (2.0 * eps);
            let an = grad.data()[i];
            assert!((fd - an).abs() <= 1e-3 * an.abs().max(1e-3), "{i}: {fd} vs {an}");
        }
    }

    #[test]
    fn frozen_contract() {
        let mut h = net(8);
        assert!(h.assert_frozen());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("task.ckpt");
        h.save(&path).unwrap();
        let loaded = FrozenNetworkHandle::load(&path).unwrap();
        assert!(loaded.assert_frozen());
        assert_eq!(loaded.fingerprint(), h.fingerprint());

        h.weights_mut().layers[2].weight.data_mut()[7] += 1e-9;
        assert!(!h.assert_frozen());
    }

    #[test]
    fn frozen_weights_get_no_gradient() {
        let h = net(9);
        let mut g = Graph::new();
        let xv = g.leaf(image(1).to_tensor(), true);
        let b = h.bind(&mut g);
        let l = b.logits(&mut g, xv).unwrap();
        let s = g.sum(l);
        let grads = g.backward(s);
        assert!(grads.get(xv).is_some());
        for v in b.net.vars() {
            assert!(grads.get(v).is_none());
        }
    }
}
