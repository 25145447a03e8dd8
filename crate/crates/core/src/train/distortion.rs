use serde::{Deserialize, Serialize};

use super::Strategy;
use crate::autodiff::{Graph, Var};
use crate::task::{harden_predictions, predict_batch, task_loss_var, Annotations, BoundTaskNet, FrozenNetworkHandle};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// `total = rate + lambda * distortion`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RDLossBreakdown {
    /// Rate in bits per pixel.
    pub rate: f64,
    pub distortion: f64,
    pub lambda: f64,
    pub total: f64,
    pub strategy: Option<Strategy>,
}

pub fn rd_loss(rate: f64, distortion: f64, lambda: f64) -> Result<RDLossBreakdown> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::NonPositiveLambda(lambda));
    }
    Ok(RDLossBreakdown {
        rate,
        distortion,
        lambda,
        total: rate + lambda * distortion,
        strategy: None,
    })
}

impl RDLossBreakdown {
    pub fn with_strategy(mut self, strategy: Strategy) -> Self {
        self.strategy = Some(strategy);
        self
    }
}

fn same_shape(g: &Graph, a: Var, b: Var) -> Result<()> {
    if g.value(a).shape() != g.value(b).shape() {
        return Err(Error::shape(g.value(b).shape(), g.value(a).shape()));
    }
    Ok(())
}

/// Mean squared error over every pixel and channel.
pub fn distortion_mse_var(g: &mut Graph, x_hat: Var, x: Var) -> Result<Var> {
    same_shape(g, x_hat, x)?;
    let d = g.sub(x_hat, x);
    let sq = g.square(d);
    Ok(g.mean(sq))
}

/// Task loss of the network's predictions on `x_hat` against `ann`.
pub fn distortion_gt_var(g: &mut Graph, x_hat: Var, ann: &Annotations, net: &BoundTaskNet<'_>) -> Result<Var> {
    let logits = net.logits(g, x_hat)?;
    task_loss_var(g, logits, ann)
}

/// Sum of squared feature differences at `cut_point`, per image, averaged
/// over the batch. The target features of `x` carry no gradient.
pub fn distortion_feature_var(
    g: &mut Graph,
    x_hat: Var,
    x: Var,
    net: &BoundTaskNet<'_>,
    cut_point: &str,
) -> Result<Var> {
    same_shape(g, x_hat, x)?;
    let target = g.detach(x);
    let psi = net.features(g, target, cut_point)?;
    let psi = g.detach(psi);
    let psi_hat = net.features(g, x_hat, cut_point)?;
    let d = g.sub(psi_hat, psi);
    let sq = g.square(d);
    let sse = g.sum(sq);
    let n = g.value(x).shape()[0];
    Ok(g.scale(sse, 1.0 / n as f64))
}

/// Pseudo labels for `x`: the hardened predictions of the frozen network,
/// computed outside any gradient path.
pub fn pseudo_labels(x: &Tensor, net: &FrozenNetworkHandle, threshold: f64) -> Result<Annotations> {
    Ok(harden_predictions(&predict_batch(x, net)?, threshold))
}

/// Task loss of `x_hat` against the pseudo labels of `x`; no annotations.
pub fn distortion_pseudo_gt_var(
    g: &mut Graph,
    x_hat: Var,
    x: &Tensor,
    net: &FrozenNetworkHandle,
    bound: &BoundTaskNet<'_>,
    threshold: f64,
) -> Result<Var> {
    if g.value(x_hat).shape() != x.shape() {
        return Err(Error::shape(x.shape(), g.value(x_hat).shape()));
    }
    let labels = pseudo_labels(x, net, threshold)?;
    distortion_gt_var(g, x_hat, &labels, bound)
}

fn eval(f: impl FnOnce(&mut Graph) -> Result<Var>) -> Result<f64> {
    let mut g = Graph::new();
    let v = f(&mut g)?;
    Ok(g.value(v).item())
}

pub fn distortion_mse(x_hat: &Tensor, x: &Tensor) -> Result<f64> {
    eval(|g| {
        let a = g.constant(x_hat.clone());
        let b = g.constant(x.clone());
        distortion_mse_var(g, a, b)
    })
}

pub fn distortion_gt(x_hat: &Tensor, ann: &Annotations, net: &FrozenNetworkHandle) -> Result<f64> {
    eval(|g| {
        let a = g.constant(x_hat.clone());
        let bound = net.bind(g);
        distortion_gt_var(g, a, ann, &bound)
    })
}

pub fn distortion_feature(x_hat: &Tensor, x: &Tensor, net: &FrozenNetworkHandle, cut_point: &str) -> Result<f64> {
    eval(|g| {
        let a = g.constant(x_hat.clone());
        let b = g.constant(x.clone());
        let bound = net.bind(g);
        distortion_feature_var(g, a, b, &bound, cut_point)
    })
}

pub fn distortion_pseudo_gt(x_hat: &Tensor, x: &Tensor, net: &FrozenNetworkHandle, threshold: f64) -> Result<f64> {
    eval(|g| {
        let a = g.constant(x_hat.clone());
        let bound = net.bind(g);
        distortion_pseudo_gt_var(g, a, x, net, &bound, threshold)
    })
}
