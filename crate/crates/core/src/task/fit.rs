use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{softmax_cross_entropy_var, FrozenNetworkHandle, LabelMap, TaskNetConfig};
use crate::autodiff::Graph;
use crate::codec::{ImageTensor, Transform};
use crate::tensor::Tensor;
use crate::train::Adam;
use crate::{Error, Result};

/// Train a task network from scratch on labelled images with Adam and
/// softmax cross-entropy, then freeze it. Returns the handle and the loss
/// of every step.
pub fn fit_task_net(
    config: TaskNetConfig,
    data: &[(ImageTensor, LabelMap)],
    iterations: usize,
    batch_size: usize,
    learning_rate: f64,
    seed: u64,
) -> Result<(FrozenNetworkHandle, Vec<f64>)> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Transform::init(&config.layers(), &mut rng);
    let mut adam = Adam::new(learning_rate);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = order.len();
    let mut losses = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let mut picked = Vec::with_capacity(batch_size);
        while picked.len() < batch_size.min(data.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            picked.push(order[cursor]);
            cursor += 1;
        }
        let (h, w) = (data[picked[0]].0.height(), data[picked[0]].0.width());
        let mut x = Vec::with_capacity(picked.len() * 3 * h * w);
        for &i in &picked {
            x.extend_from_slice(data[i].0.chw());
        }
        let labels = LabelMap::stack(&picked.iter().map(|&i| &data[i].1).collect::<Vec<_>>());

        let mut g = Graph::new();
        let xv = g.constant(Tensor::from_vec(&[picked.len(), 3, h, w], x));
        let bound = net.bind(&mut g, true);
        let logits = bound.forward(&mut g, xv);
        let loss = softmax_cross_entropy_var(&mut g, logits, &labels)?;
        losses.push(g.value(loss).data()[0]);
        let mut grads = g.backward(loss);
        let grads: Vec<Option<Tensor>> = bound.vars().map(|v| grads.take(v)).collect();
        let mut params: Vec<&mut Tensor> = net
            .layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect();
        adam.step(&mut params, &grads);
    }
    Ok((FrozenNetworkHandle::new(config, net)?, losses))
}
