use super::annotations::{AnnotationContent, Annotations, InstanceAnnotation, InstancePrediction, LabelMap, TaskPredictions, IGNORE_INDEX};
use crate::autodiff::{CustomOp, Graph, Var};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Probability floor for the instance loss.
const INSTANCE_EPS: f64 = 1e-12;

fn check_labels(logits: &Tensor, labels: &LabelMap) -> Result<()> {
    let (n, k, h, w) = logits.dims4();
    if (labels.batch, labels.height, labels.width) != (n, h, w) {
        return Err(Error::SchemaMismatch(format!(
            "label map {}x{}x{} does not match predictions {n}x{h}x{w}",
            labels.batch, labels.height, labels.width
        )));
    }
    if let Some(&l) = labels.labels.iter().find(|&&l| l != IGNORE_INDEX && l as usize >= k) {
        return Err(Error::SchemaMismatch(format!("label {l} with only {k} classes")));
    }
    Ok(())
}

/// Mean per-pixel cross-entropy of softmax(logits) against `labels`,
/// ignoring [`IGNORE_INDEX`] pixels. Returns the loss and the valid count.
fn ce_forward(logits: &Tensor, labels: &LabelMap) -> (f64, usize) {
    let (n, k, h, w) = logits.dims4();
    let plane = h * w;
    let d = logits.data();
    let mut total = 0.0;
    let mut count = 0;
    for b in 0..n {
        for i in 0..plane {
            let l = labels.labels[b * plane + i];
            if l == IGNORE_INDEX {
                continue;
            }
            let z = |c: usize| d[(b * k + c) * plane + i];
            let m = (0..k).map(z).fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = (0..k).map(|c| (z(c) - m).exp()).sum();
            total += m + s.ln() - z(l as usize);
            count += 1;
        }
    }
    (if count == 0 { 0.0 } else { total / count as f64 }, count)
}

pub fn softmax_cross_entropy(logits: &Tensor, labels: &LabelMap) -> Result<f64> {
    check_labels(logits, labels)?;
    match ce_forward(logits, labels) {
        (_, 0) => Err(Error::NoValidPixels),
        (v, _) => Ok(v),
    }
}

struct SoftmaxCe {
    labels: Vec<u16>,
    count: usize,
}

impl CustomOp for SoftmaxCe {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        if !needs[0] {
            return vec![None];
        }
        let logits = inputs[0];
        let (n, k, h, w) = logits.dims4();
        let plane = h * w;
        let d = logits.data();
        let scale = grad.item() / self.count as f64;
        let mut out = vec![0.0; d.len()];
        for b in 0..n {
            for i in 0..plane {
                let l = self.labels[b * plane + i];
                if l == IGNORE_INDEX {
                    continue;
                }
                let idx = |c: usize| (b * k + c) * plane + i;
                let m = (0..k).map(|c| d[idx(c)]).fold(f64::NEG_INFINITY, f64::max);
                let s: f64 = (0..k).map(|c| (d[idx(c)] - m).exp()).sum();
                for c in 0..k {
                    let p = (d[idx(c)] - m).exp() / s;
                    out[idx(c)] = scale * (p - if c == l as usize { 1.0 } else { 0.0 });
                }
            }
        }
        vec![Some(Tensor::from_vec(logits.shape(), out))]
    }
}

pub fn softmax_cross_entropy_var(g: &mut Graph, logits: Var, labels: &LabelMap) -> Result<Var> {
    let value = softmax_cross_entropy(g.value(logits), labels)?;
    let count = labels.labels.iter().filter(|&&l| l != IGNORE_INDEX).count();
    Ok(g.custom(
        &[logits],
        Tensor::scalar(value),
        Box::new(SoftmaxCe {
            labels: labels.labels.clone(),
            count,
        }),
    ))
}

fn box_iou(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    let union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Per GT instance: class cross-entropy plus mean mask binary
/// cross-entropy of the best box-overlap prediction. Unmatched instances
/// cost as much as a prediction at the probability floor.
fn instance_loss(preds: &[InstancePrediction], gt: &[InstanceAnnotation]) -> Result<f64> {
    if gt.is_empty() {
        return Ok(0.0);
    }
    let floor = -INSTANCE_EPS.ln();
    let mut total = 0.0;
    for a in gt {
        let best = preds
            .iter()
            .map(|p| box_iou(&p.bbox, &a.bbox))
            .enumerate()
            .fold(None, |best: Option<(usize, f64)>, (i, iou)| match best {
                Some((_, b)) if b >= iou => best,
                _ if iou > 0.0 => Some((i, iou)),
                _ => best,
            });
        let Some((i, _)) = best else {
            total += 2.0 * floor;
            continue;
        };
        let p = &preds[i];
        if a.class >= p.scores.len() || (p.height, p.width) != (a.height, a.width) || p.mask.len() != a.mask.len() {
            return Err(Error::SchemaMismatch("instance prediction does not match annotation".into()));
        }
        total += -p.scores[a.class].max(INSTANCE_EPS).ln();
        let bce: f64 = p
            .mask
            .iter()
            .zip(&a.mask)
            .map(|(&m, &t)| {
                let m = m.clamp(INSTANCE_EPS, 1.0 - INSTANCE_EPS);
                if t {
                    -m.ln()
                } else {
                    -(1.0 - m).ln()
                }
            })
            .sum();
        total += bce / a.mask.len().max(1) as f64;
    }
    Ok(total / gt.len() as f64)
}

/// The analysis network's training loss. The provenance of `ann` plays no
/// role.
pub fn task_loss(p_raw: &TaskPredictions, ann: &Annotations) -> Result<f64> {
    match (p_raw, &ann.content) {
        (TaskPredictions::Semantic(logits), AnnotationContent::Semantic(labels)) => {
            softmax_cross_entropy(logits, labels)
        }
        (TaskPredictions::Instance(preds), AnnotationContent::Instance(gt)) => instance_loss(preds, gt),
        _ => Err(Error::SchemaMismatch(
            "semantic predictions need label maps, instance predictions need instance lists".into(),
        )),
    }
}

/// Differentiable [`task_loss`] for semantic logits held in a graph.
pub fn task_loss_var(g: &mut Graph, logits: Var, ann: &Annotations) -> Result<Var> {
    match &ann.content {
        AnnotationContent::Semantic(labels) => softmax_cross_entropy_var(g, logits, labels),
        AnnotationContent::Instance(_) => Err(Error::SchemaMismatch(
            "the bundled network predicts label maps, not instances".into(),
        )),
    }
}
