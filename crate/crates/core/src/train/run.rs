use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{sample_frame_index, FrameMode, SequenceDataset};
use super::distortion::{
    distortion_feature_var, distortion_gt_var, distortion_mse_var, distortion_pseudo_gt_var, rd_loss, RDLossBreakdown,
};
use super::optim::Adam;
use super::{Strategy, TrainingConfig};
use crate::autodiff::Graph;
use crate::checkpoint::Checkpoint;
use crate::codec::{forward_train, ImageTensor, ModelParameters};
use crate::task::{Annotations, AnnotationContent, FrozenNetworkHandle, LabelMap};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub phase: String,
    pub step: usize,
    pub rate: f64,
    pub distortion: f64,
    pub total: f64,
    pub lambda: f64,
    pub strategy: Strategy,
}

/// Weights after a run together with its history.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub params: ModelParameters,
    pub strategy: Strategy,
    pub lambda: f64,
    pub iterations: usize,
    pub log: Vec<LogRecord>,
}

impl TrainedModel {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = self.params.to_checkpoint();
        ck.metadata.insert("iteration".into(), self.iterations.into());
        ck.metadata.insert("lambda".into(), self.lambda.into());
        ck.metadata.insert("strategy".into(), self.strategy.name().into());
        ck
    }

    pub fn final_record(&self) -> Option<&LogRecord> {
        self.log.last()
    }
}

struct Batch {
    x: Tensor,
    labels: Option<Annotations>,
}

fn crop_image(img: &ImageTensor, top: usize, left: usize, size: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(3 * size * size);
    for c in 0..3 {
        for r in top..top + size {
            for col in left..left + size {
                out.push(img.pixel(c, r, col));
            }
        }
    }
    out
}

fn crop_labels(m: &LabelMap, top: usize, left: usize, size: usize) -> Vec<u16> {
    let mut out = Vec::with_capacity(size * size);
    for r in top..top + size {
        out.extend_from_slice(&m.labels[r * m.width + left..r * m.width + left + size]);
    }
    out
}

fn make_batch(
    dataset: &SequenceDataset,
    ids: &[usize],
    config: &TrainingConfig,
    need_labels: bool,
    rng: &mut impl Rng,
) -> Result<Batch> {
    let size = config.crop_size;
    let mut pixels = Vec::with_capacity(ids.len() * 3 * size * size);
    let mut labels = Vec::new();
    for &id in ids {
        let seq = dataset.sequence(id);
        let index = sample_frame_index(seq, rng, config.frame_mode)?;
        let frame = &seq.frames()[index];
        if frame.height() < size || frame.width() < size {
            return Err(Error::DimensionTooSmall {
                height: frame.height(),
                width: frame.width(),
                min: size,
            });
        }
        let top = rng.gen_range(0..=frame.height() - size);
        let left = rng.gen_range(0..=frame.width() - size);
        pixels.extend(crop_image(frame, top, left, size));
        if need_labels {
            if index != seq.labeled_index() {
                return Err(Error::Config("ground-truth training needs the labeled frame".into()));
            }
            let map = dataset
                .annotation(id)?
                .label_map()
                .ok_or_else(|| Error::SchemaMismatch("expected a label map".into()))?;
            labels.extend(crop_labels(map, top, left, size));
        }
    }
    Ok(Batch {
        x: Tensor::from_vec(&[ids.len(), 3, size, size], pixels),
        labels: need_labels.then(|| {
            Annotations::ground_truth(AnnotationContent::Semantic(LabelMap::new(ids.len(), size, size, labels)))
        }),
    })
}

struct StepContext<'a> {
    strategy: Strategy,
    lambda: f64,
    net: Option<&'a FrozenNetworkHandle>,
    cut_point: &'a str,
    threshold: f64,
}

fn train_step(
    params: &mut ModelParameters,
    opt: &mut Adam,
    batch: &Batch,
    ctx: &StepContext<'_>,
    rng: &mut impl Rng,
) -> Result<RDLossBreakdown> {
    let mut g = Graph::new();
    let model = params.bind(&mut g, true);
    let x = g.constant(batch.x.clone());
    let fwd = forward_train(&mut g, &model, &params.config, &params.prior, x, rng);
    let bits = g.add(fwd.bits_y, fwd.bits_z);
    let rate = g.scale(bits, 1.0 / (fwd.batch * fwd.pixels) as f64);

    let net = || ctx.net.ok_or_else(|| Error::Config(format!("strategy {} needs a task network", ctx.strategy)));
    let distortion = match ctx.strategy {
        Strategy::Mse => distortion_mse_var(&mut g, fwd.x_hat, x)?,
        Strategy::Gt => {
            let net = net()?;
            let bound = net.bind(&mut g);
            let labels = batch.labels.as_ref().expect("gt batches carry labels");
            distortion_gt_var(&mut g, fwd.x_hat, labels, &bound)?
        }
        Strategy::Feature => {
            let net = net()?;
            let bound = net.bind(&mut g);
            distortion_feature_var(&mut g, fwd.x_hat, x, &bound, ctx.cut_point)?
        }
        Strategy::PseudoGt => {
            let net = net()?;
            let bound = net.bind(&mut g);
            distortion_pseudo_gt_var(&mut g, fwd.x_hat, &batch.x, net, &bound, ctx.threshold)?
        }
    };
    let weighted = g.scale(distortion, ctx.lambda);
    let loss = g.add(rate, weighted);

    let breakdown = rd_loss(g.value(rate).item(), g.value(distortion).item(), ctx.lambda)?.with_strategy(ctx.strategy);
    if !breakdown.total.is_finite() {
        return Err(Error::InvalidValue(format!("loss diverged: {breakdown:?}")));
    }
    let mut grads = g.backward(loss);
    let slots: Vec<Option<Tensor>> = model.vars().into_iter().map(|v| grads.take(v)).collect();
    opt.step(&mut params.tensors_mut(), &slots);
    Ok(breakdown)
}

fn record(phase: &str, step: usize, b: &RDLossBreakdown, strategy: Strategy) -> LogRecord {
    LogRecord {
        phase: phase.into(),
        step,
        rate: b.rate,
        distortion: b.distortion,
        total: b.total,
        lambda: b.lambda,
        strategy,
    }
}

fn write_log(path: &Path, log: &[LogRecord]) -> Result<()> {
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    for r in log {
        let line = serde_json::to_string(r).expect("log record serializes");
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

fn lambda_tag(lambda: f64) -> String {
    format!("{lambda}").replace('.', "p")
}

/// MSE pretraining for `config.pretrain_iterations` steps. Each step draws
/// `batch_size` sequences at random and one frame from each. With `out`
/// set, checkpoints and the loss history are written there.
pub fn pretrain(
    params: ModelParameters,
    dataset: &SequenceDataset,
    config: &TrainingConfig,
    out: Option<&Path>,
) -> Result<TrainedModel> {
    config.validate()?;
    if config.strategy != Strategy::Mse {
        return Err(Error::Config(format!("pretraining uses mse, config says {}", config.strategy)));
    }
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut params = params;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = Adam::new(config.learning_rate);
    let ctx = StepContext {
        strategy: Strategy::Mse,
        lambda: config.lambda,
        net: None,
        cut_point: &config.cut_point,
        threshold: config.confidence_threshold,
    };
    let mut log = Vec::with_capacity(config.pretrain_iterations);
    for step in 1..=config.pretrain_iterations {
        let ids: Vec<usize> = (0..config.batch_size).map(|_| rng.gen_range(0..dataset.len())).collect();
        let batch = make_batch(dataset, &ids, config, false, &mut rng)?;
        let b = train_step(&mut params, &mut opt, &batch, &ctx, &mut rng)?;
        log.push(record("pretrain", step, &b, Strategy::Mse));
        if let Some(dir) = out {
            if config.checkpoint_every > 0 && step % config.checkpoint_every == 0 {
                let model = TrainedModel {
                    params: params.clone(),
                    strategy: Strategy::Mse,
                    lambda: config.lambda,
                    iterations: step,
                    log: Vec::new(),
                };
                model.to_checkpoint().save(dir.join(format!("pretrain_{step:07}.ckpt")))?;
            }
        }
    }
    let model = TrainedModel {
        params,
        strategy: Strategy::Mse,
        lambda: config.lambda,
        iterations: config.pretrain_iterations,
        log,
    };
    if let Some(dir) = out {
        model.to_checkpoint().save(dir.join("pretrain.ckpt"))?;
        write_log(&dir.join("pretrain_log.jsonl"), &model.log)?;
    }
    Ok(model)
}

/// Finetune a copy of `pretrained` for every λ in the config's ladder. An
/// epoch visits every sequence once, one sampled frame each. The task
/// network must be unchanged before and after each run.
pub fn finetune(
    pretrained: &ModelParameters,
    dataset: &SequenceDataset,
    net: &FrozenNetworkHandle,
    config: &TrainingConfig,
    out: Option<&Path>,
) -> Result<Vec<TrainedModel>> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if config.strategy.needs_annotations() && config.frame_mode == FrameMode::RandomFrame {
        return Err(Error::Config(
            "gt finetuning only has labels for the labeled frame; use labeled_only".into(),
        ));
    }
    let check_frozen = || {
        if net.assert_frozen() {
            Ok(())
        } else {
            Err(Error::FrozenViolation {
                expected: net.recorded_fingerprint().to_string(),
                actual: net.fingerprint(),
            })
        }
    };
    let mut models = Vec::new();
    for (li, lambda) in config.ladder().into_iter().enumerate() {
        check_frozen()?;
        let mut params = pretrained.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(li as u64 + 1);
        let mut opt = Adam::new(config.learning_rate);
        let ctx = StepContext {
            strategy: config.strategy,
            lambda,
            net: Some(net),
            cut_point: &config.cut_point,
            threshold: config.confidence_threshold,
        };
        let mut log = Vec::new();
        let mut step = 0;
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        for _ in 0..config.finetune_epochs {
            order.shuffle(&mut rng);
            for ids in order.chunks(config.batch_size) {
                let batch = make_batch(dataset, ids, config, config.strategy.needs_annotations(), &mut rng)?;
                let b = train_step(&mut params, &mut opt, &batch, &ctx, &mut rng)?;
                step += 1;
                log.push(record("finetune", step, &b, config.strategy));
            }
        }
        check_frozen()?;
        let model = TrainedModel {
            params,
            strategy: config.strategy,
            lambda,
            iterations: step,
            log,
        };
        if let Some(dir) = out {
            let tag = lambda_tag(lambda);
            model
                .to_checkpoint()
                .save(dir.join(format!("{}_lambda_{tag}.ckpt", config.strategy)))?;
            write_log(&dir.join(format!("{}_lambda_{tag}_log.jsonl", config.strategy)), &model.log)?;
        }
        models.push(model);
    }
    Ok(models)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::NetworkConfig;
    use crate::shapes::{self, ShapesConfig};
    use crate::task::TaskNetConfig;

    fn small_config() -> TrainingConfig {
        let mut network = NetworkConfig::toy();
        network.latent_channels = 8;
        network.hyper_channels = 4;
        TrainingConfig {
            pretrain_iterations: 3,
            finetune_epochs: 1,
            batch_size: 2,
            lambda_ladder: vec![4.0, 2.0],
            network,
            ..TrainingConfig::toy()
        }
    }

    fn data() -> SequenceDataset {
        shapes::dataset(&ShapesConfig {
            sequences: 3,
            frames: 4,
            labeled_index: 2,
            ..Default::default()
        })
    }

    fn init(config: &TrainingConfig) -> ModelParameters {
        ModelParameters::init(config.network.clone(), &mut ChaCha8Rng::seed_from_u64(0))
    }

    #[test]
    fn pretrain_counts_and_reproduces() {
        let config = small_config();
        let dir = tempfile::tempdir().unwrap();
        let a = pretrain(init(&config), &data(), &config, Some(dir.path())).unwrap();
        assert_eq!(a.iterations, 3);
        assert_eq!(a.log.len(), 3);
        for r in &a.log {
            assert_eq!(r.total, r.rate + r.lambda * r.distortion);
        }
        let ck = Checkpoint::load(dir.path().join("pretrain.ckpt")).unwrap();
        assert_eq!(ck.metadata["iteration"], 3);
        let b = pretrain(init(&config), &data(), &config, None).unwrap();
        assert_eq!(a.log.last().unwrap().total.to_bits(), b.log.last().unwrap().total.to_bits());
    }

    #[test]
    fn pretrain_rejects_empty_and_wrong_strategy() {
        let config = small_config();
        let empty = SequenceDataset::new(vec![]);
        assert!(matches!(pretrain(init(&config), &empty, &config, None), Err(Error::EmptyDataset)));
        let mut c = config.clone();
        c.strategy = Strategy::Gt;
        assert!(matches!(pretrain(init(&config), &data(), &c, None), Err(Error::Config(_))));
    }

    #[test]
    fn finetune_ladder_and_annotation_rules() {
        let mut config = small_config();
        let net = FrozenNetworkHandle::init(TaskNetConfig::default(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let params = init(&config);

        config.strategy = Strategy::PseudoGt;
        config.frame_mode = FrameMode::RandomFrame;
        let free = data().without_annotations().forbid_annotation_access();
        let models = finetune(&params, &free, &net, &config, None).unwrap();
        assert_eq!(models.len(), 2);
        assert_eq!(models[0].lambda, 4.0);
        assert_eq!(models[0].iterations, 2);
        assert_ne!(models[0].params, params);
        assert!(net.assert_frozen());

        config.strategy = Strategy::Gt;
        config.frame_mode = FrameMode::LabeledOnly;
        let unlabeled = data().without_annotations();
        assert!(matches!(
            finetune(&params, &unlabeled, &net, &config, None),
            Err(Error::MissingAnnotation(_))
        ));
        let dir = tempfile::tempdir().unwrap();
        let models = finetune(&params, &data(), &net, &config, Some(dir.path())).unwrap();
        assert_eq!(models.len(), 2);
        assert!(dir.path().join("gt_lambda_4.ckpt").exists());
        assert!(dir.path().join("gt_lambda_2_log.jsonl").exists());

        config.strategy = Strategy::Feature;
        config.lambda_ladder = vec![0.01];
        assert_eq!(finetune(&params, &data(), &net, &config, None).unwrap().len(), 1);
    }

    #[test]
    fn frozen_violation_aborts() {
        let config = TrainingConfig {
            strategy: Strategy::PseudoGt,
            ..small_config()
        };
        let mut net = FrozenNetworkHandle::init(TaskNetConfig::default(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        net.weights_mut().layers[0].bias.data_mut()[0] = 3.0;
        let err = finetune(&init(&config), &data(), &net, &config, None).unwrap_err();
        assert!(matches!(err, Error::FrozenViolation { .. }));
    }
}
