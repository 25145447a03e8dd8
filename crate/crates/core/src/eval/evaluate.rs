use std::path::Path;

use serde::{Deserialize, Serialize};

use super::bd::{RDPoint, TaskMetric};
use super::metrics::{ms_ssim, mse, psnr_from_mse, wap, IouAccumulator, ScoredInstance};
use crate::codec::{reconstruct, ImageTensor, ModelParameters};
use crate::task::{harden_predictions, predict, AnnotationContent, Annotations, FrozenNetworkHandle, TaskPredictions};
use crate::{Error, Result};

/// Bits per pixel charged to the uncompressed baseline (8-bit RGB).
pub const UNCOMPRESSED_BPP: f64 = 24.0;

/// One evaluation image and, when available, its ground truth.
#[derive(Clone, Debug)]
pub struct EvalSample {
    pub id: String,
    pub image: ImageTensor,
    pub labels: Option<Annotations>,
}

/// Task statistics of one image, kept in a form that sums across images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskRecord {
    Semantic(IouAccumulator),
    Instance {
        predictions: Vec<ScoredInstance>,
        ground_truth: Vec<crate::task::InstanceAnnotation>,
    },
}

/// Per-image measurements; one JSON line each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub model: String,
    pub image: String,
    pub height: usize,
    pub width: usize,
    /// Measured payload bits of the real bitstream.
    pub bits: u64,
    pub mse: f64,
    pub ms_ssim: f64,
    pub task: Option<TaskRecord>,
}

impl ImageRecord {
    pub fn pixels(&self) -> u64 {
        (self.height * self.width) as u64
    }

    pub fn bpp(&self) -> f64 {
        self.bits as f64 / self.pixels() as f64
    }
}

#[derive(Clone, Debug)]
pub struct ModelEvaluation {
    pub point: RDPoint,
    pub records: Vec<ImageRecord>,
}

fn task_record(x: &ImageTensor, labels: &Annotations, net: &FrozenNetworkHandle) -> Result<TaskRecord> {
    let pred = predict(x, net)?;
    let hard = harden_predictions(&pred, 0.5);
    match (&labels.content, &hard.content, &pred) {
        (AnnotationContent::Semantic(gt), AnnotationContent::Semantic(p), _) => {
            let mut acc = IouAccumulator::new(net.config().num_classes);
            acc.add(p, gt)?;
            Ok(TaskRecord::Semantic(acc))
        }
        (AnnotationContent::Instance(gt), _, TaskPredictions::Instance(list)) => Ok(TaskRecord::Instance {
            predictions: list.iter().map(ScoredInstance::from_prediction).collect(),
            ground_truth: gt.clone(),
        }),
        _ => Err(Error::SchemaMismatch(
            "task network output does not match the annotation type".into(),
        )),
    }
}

fn evaluate_image(
    model: &str,
    sample: &EvalSample,
    params: &ModelParameters,
    lambda: f64,
    net: Option<&FrozenNetworkHandle>,
) -> Result<ImageRecord> {
    let rec = reconstruct(&sample.image, params, lambda)?;
    let task = match (net, &sample.labels) {
        (Some(net), Some(labels)) => Some(task_record(&rec.image, labels, net)?),
        _ => None,
    };
    Ok(ImageRecord {
        model: model.to_string(),
        image: sample.id.clone(),
        height: sample.image.height(),
        width: sample.image.width(),
        bits: rec.bitstream.payload_bits(),
        mse: mse(&rec.image, &sample.image)?,
        ms_ssim: ms_ssim(&rec.image, &sample.image)?,
        task,
    })
}

fn task_metric(records: &[ImageRecord], num_classes: usize) -> Result<Option<TaskMetric>> {
    let tasks: Vec<&TaskRecord> = records.iter().filter_map(|r| r.task.as_ref()).collect();
    let Some(first) = tasks.first() else { return Ok(None) };
    match first {
        TaskRecord::Semantic(_) => {
            let mut acc = IouAccumulator::new(num_classes);
            for t in &tasks {
                match t {
                    TaskRecord::Semantic(a) if a.union.len() == num_classes => acc.merge(a),
                    _ => return Err(Error::SchemaMismatch("mixed task records".into())),
                }
            }
            Ok(Some(TaskMetric {
                name: "miou".into(),
                value: acc.miou()?,
            }))
        }
        TaskRecord::Instance { .. } => {
            let mut preds = Vec::new();
            let mut gts = Vec::new();
            for t in &tasks {
                match t {
                    TaskRecord::Instance {
                        predictions,
                        ground_truth,
                    } => {
                        preds.push(predictions.clone());
                        gts.push(ground_truth.clone());
                    }
                    _ => return Err(Error::SchemaMismatch("mixed task records".into())),
                }
            }
            Ok(Some(TaskMetric {
                name: "wap".into(),
                value: wap(&preds, &gts, num_classes, None)?,
            }))
        }
    }
}

/// Average per-image records into one point. Rate is total bits over total
/// pixels; PSNR and MS-SSIM are per-image means; the task metric is computed
/// from the pooled counts. Record order does not matter.
pub fn aggregate(model: &str, lambda: Option<f64>, records: &[ImageRecord], num_classes: usize) -> Result<RDPoint> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut sorted: Vec<&ImageRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.image.cmp(&b.image));
    let n = sorted.len() as f64;
    let bits: u64 = sorted.iter().map(|r| r.bits).sum();
    let pixels: u64 = sorted.iter().map(|r| r.pixels()).sum();
    let psnr = sorted.iter().map(|r| psnr_from_mse(r.mse)).sum::<f64>() / n;
    let ms = sorted.iter().map(|r| r.ms_ssim).sum::<f64>() / n;
    let owned: Vec<ImageRecord> = sorted.into_iter().cloned().collect();
    Ok(RDPoint {
        model: model.to_string(),
        lambda,
        bpp: bits as f64 / pixels as f64,
        psnr_db: Some(psnr),
        ms_ssim: Some(ms),
        task_metric: task_metric(&owned, num_classes)?,
    })
}

fn num_classes(net: Option<&FrozenNetworkHandle>) -> usize {
    net.map_or(0, |n| n.config().num_classes)
}

/// Evaluate every sample through the real bitstream path. Failing images
/// are returned next to the successful records instead of aborting.
pub fn evaluate_model_lenient(
    model: &str,
    params: &ModelParameters,
    lambda: Option<f64>,
    samples: &[EvalSample],
    net: Option<&FrozenNetworkHandle>,
) -> (Vec<ImageRecord>, Vec<Error>) {
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for s in samples {
        match evaluate_image(model, s, params, lambda.unwrap_or(0.0), net) {
            Ok(r) => records.push(r),
            Err(e) => failures.push(Error::Image {
                id: s.id.clone(),
                source: Box::new(e),
            }),
        }
    }
    (records, failures)
}

/// Evaluate and average; the first failing image aborts with its id attached.
pub fn evaluate_model(
    model: &str,
    params: &ModelParameters,
    lambda: Option<f64>,
    samples: &[EvalSample],
    net: Option<&FrozenNetworkHandle>,
) -> Result<ModelEvaluation> {
    let mut records = Vec::with_capacity(samples.len());
    for s in samples {
        let r = evaluate_image(model, s, params, lambda.unwrap_or(0.0), net).map_err(|e| Error::Image {
            id: s.id.clone(),
            source: Box::new(e),
        })?;
        records.push(r);
    }
    let point = aggregate(model, lambda, &records, num_classes(net))?;
    Ok(ModelEvaluation { point, records })
}

/// Task performance on the original images.
pub fn evaluate_uncompressed(samples: &[EvalSample], net: Option<&FrozenNetworkHandle>) -> Result<ModelEvaluation> {
    let mut records = Vec::with_capacity(samples.len());
    for s in samples {
        let task = match (net, &s.labels) {
            (Some(net), Some(labels)) => Some(task_record(&s.image, labels, net).map_err(|e| Error::Image {
                id: s.id.clone(),
                source: Box::new(e),
            })?),
            _ => None,
        };
        let (h, w) = (s.image.height(), s.image.width());
        records.push(ImageRecord {
            model: "uncompressed".into(),
            image: s.id.clone(),
            height: h,
            width: w,
            bits: (UNCOMPRESSED_BPP as u64) * (h * w) as u64,
            mse: 0.0,
            ms_ssim: 1.0,
            task,
        });
    }
    let point = aggregate("uncompressed", None, &records, num_classes(net))?;
    Ok(ModelEvaluation { point, records })
}

pub fn records_to_jsonl(records: &[ImageRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect()
}

pub fn write_records(path: impl AsRef<Path>, records: &[ImageRecord]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, records_to_jsonl(records)).map_err(|e| Error::io(path, e))
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<ImageRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Config(format!("{}: line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::NetworkConfig;
    use crate::task::{LabelMap, TaskNetConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn samples(n: usize) -> Vec<EvalSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        (0..n)
            .map(|i| {
                let image = ImageTensor::new(64, 64, (0..3 * 64 * 64).map(|_| rng.gen()).collect()).unwrap();
                let labels = LabelMap::new(1, 64, 64, (0..64 * 64).map(|j| ((j / 64) % 4) as u16).collect());
                EvalSample {
                    id: format!("img{i}"),
                    image,
                    labels: Some(Annotations::ground_truth(AnnotationContent::Semantic(labels))),
                }
            })
            .collect()
    }

    #[test]
    fn bpp_is_measured_bits_over_pixels() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = ModelParameters::init(NetworkConfig::toy(), &mut rng);
        let net = FrozenNetworkHandle::init(TaskNetConfig::default(), &mut rng).unwrap();
        let s = samples(2);
        let ev = evaluate_model("m", &params, Some(4.0), &s, Some(&net)).unwrap();
        let bits: u64 = ev.records.iter().map(|r| r.bits).sum();
        assert!(ev.point.bpp > 0.0);
        assert_eq!(ev.point.bpp, bits as f64 / (2.0 * 64.0 * 64.0));
        for (r, s) in ev.records.iter().zip(&s) {
            let bs = crate::codec::compress(&s.image, &params, 4.0).unwrap();
            assert_eq!(r.bits, bs.payload_bits());
        }
        let m = ev.point.task_metric.as_ref().unwrap();
        assert_eq!(m.name, "miou");
        assert!((0.0..=1.0).contains(&m.value));

        let mut reversed = ev.records.clone();
        reversed.reverse();
        assert_eq!(aggregate("m", Some(4.0), &reversed, 4).unwrap(), ev.point);

        let back: Vec<ImageRecord> = records_to_jsonl(&ev.records)
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(back, ev.records);
    }

    #[test]
    fn baseline_and_failures() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = ModelParameters::init(NetworkConfig::toy(), &mut rng);
        let net = FrozenNetworkHandle::init(TaskNetConfig::default(), &mut rng).unwrap();
        let mut s = samples(2);
        let base = evaluate_uncompressed(&s, Some(&net)).unwrap();
        assert_eq!(base.point.bpp, UNCOMPRESSED_BPP);
        assert_eq!(base.point.psnr_db, Some(f64::INFINITY));

        s[1].image = ImageTensor::new(32, 32, vec![0.5; 3 * 32 * 32]).unwrap();
        s[1].labels = None;
        let (ok, bad) = evaluate_model_lenient("m", &params, None, &s, Some(&net));
        assert_eq!((ok.len(), bad.len()), (1, 1));
        assert!(bad[0].to_string().contains("img1"));
        let err = evaluate_model("m", &params, None, &s, Some(&net)).unwrap_err();
        assert!(matches!(err, Error::Image { ref id, .. } if id == "img1"));
    }
}
