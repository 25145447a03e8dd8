use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

/// Label excluded from losses and metrics.
pub const IGNORE_INDEX: u16 = 255;

/// Raw task-network output.
#[derive(Clone, Debug, PartialEq)]
pub enum TaskPredictions {
    /// Per-pixel class scores `[n, K, H, W]`.
    Semantic(Tensor),
    Instance(Vec<InstancePrediction>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstancePrediction {
    /// `[x0, y0, x1, y1]` in pixels, exclusive upper bounds.
    pub bbox: [f64; 4],
    /// Class probabilities.
    pub scores: Vec<f64>,
    pub height: usize,
    pub width: usize,
    /// Soft mask, row-major `height * width`.
    pub mask: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    GroundTruth,
    Pseudo,
}

/// Label maps for a batch, row-major `[n, H, W]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u16>,
}

impl LabelMap {
    pub fn new(batch: usize, height: usize, width: usize, labels: Vec<u16>) -> Self {
        assert_eq!(labels.len(), batch * height * width, "label map size");
        Self {
            batch,
            height,
            width,
            labels,
        }
    }

    pub fn item(&self, index: usize) -> LabelMap {
        let n = self.height * self.width;
        LabelMap::new(1, self.height, self.width, self.labels[index * n..(index + 1) * n].to_vec())
    }

    pub fn stack(maps: &[&LabelMap]) -> LabelMap {
        let first = maps[0];
        let mut labels = Vec::new();
        for m in maps {
            assert_eq!((m.height, m.width), (first.height, first.width), "stacked label maps differ in size");
            labels.extend_from_slice(&m.labels);
        }
        let batch = maps.iter().map(|m| m.batch).sum();
        LabelMap::new(batch, first.height, first.width, labels)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceAnnotation {
    pub class: usize,
    pub bbox: [f64; 4],
    pub height: usize,
    pub width: usize,
    pub mask: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationContent {
    Semantic(LabelMap),
    Instance(Vec<InstanceAnnotation>),
}

/// Ground-truth or pseudo annotations; both share one schema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Annotations {
    pub provenance: Provenance,
    pub content: AnnotationContent,
}

impl Annotations {
    pub fn ground_truth(content: AnnotationContent) -> Self {
        Self {
            provenance: Provenance::GroundTruth,
            content,
        }
    }

    pub fn label_map(&self) -> Option<&LabelMap> {
        match &self.content {
            AnnotationContent::Semantic(m) => Some(m),
            AnnotationContent::Instance(_) => None,
        }
    }

    /// A raw prediction that hardens back to these annotations: one-hot
    /// scores and 0/1 masks.
    pub fn to_predictions(&self, num_classes: usize) -> TaskPredictions {
        match &self.content {
            AnnotationContent::Semantic(m) => {
                let plane = m.height * m.width;
                let mut data = vec![0.0; m.batch * num_classes * plane];
                for b in 0..m.batch {
                    for i in 0..plane {
                        let l = m.labels[b * plane + i];
                        if l != IGNORE_INDEX {
                            data[(b * num_classes + l as usize) * plane + i] = 1.0;
                        }
                    }
                }
                TaskPredictions::Semantic(Tensor::from_vec(&[m.batch, num_classes, m.height, m.width], data))
            }
            AnnotationContent::Instance(list) => TaskPredictions::Instance(
                list.iter()
                    .map(|a| {
                        let mut scores = vec![0.0; num_classes];
                        scores[a.class] = 1.0;
                        InstancePrediction {
                            bbox: a.bbox,
                            scores,
                            height: a.height,
                            width: a.width,
                            mask: a.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect(),
                        }
                    })
                    .collect(),
            ),
        }
    }
}

/// Index of the largest value; the lowest index wins ties.
pub(crate) fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Turn raw predictions into annotation-format pseudo labels. Semantic
/// scores become per-pixel argmax labels; instances are kept when their
/// best class score reaches `confidence_threshold` and their masks are
/// binarized at 0.5.
pub fn harden_predictions(p: &TaskPredictions, confidence_threshold: f64) -> Annotations {
    let content = match p {
        TaskPredictions::Semantic(t) => {
            let (n, k, h, w) = t.dims4();
            let plane = h * w;
            let d = t.data();
            let mut labels = Vec::with_capacity(n * plane);
            for b in 0..n {
                for i in 0..plane {
                    labels.push(argmax((0..k).map(|c| d[(b * k + c) * plane + i])) as u16);
                }
            }
            AnnotationContent::Semantic(LabelMap::new(n, h, w, labels))
        }
        TaskPredictions::Instance(list) => AnnotationContent::Instance(
            list.iter()
                .filter_map(|p| {
                    let class = argmax(p.scores.iter().copied());
                    (p.scores[class] >= confidence_threshold).then(|| InstanceAnnotation {
                        class,
                        bbox: p.bbox,
                        height: p.height,
                        width: p.width,
                        mask: p.mask.iter().map(|&m| m >= 0.5).collect(),
                    })
                })
                .collect(),
        ),
    };
    Annotations {
        provenance: Provenance::Pseudo,
        content,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn semantic(scores: &[f64], k: usize) -> TaskPredictions {
        let n = scores.len() / k;
        TaskPredictions::Semantic(Tensor::from_vec(&[1, k, 1, n], scores.to_vec()))
    }

    #[test]
    fn argmax_and_ties() {
        let a = harden_predictions(&semantic(&[0.9, 0.1], 2), 0.5);
        assert_eq!(a.label_map().unwrap().labels, vec![0]);
        assert_eq!(a.provenance, Provenance::Pseudo);
        // two pixels: class-major layout [c0p0, c0p1, c1p0, c1p1]
        let a = harden_predictions(&semantic(&[0.5, 0.2, 0.5, 0.8], 2), 0.5);
        assert_eq!(a.label_map().unwrap().labels, vec![0, 1]);
    }

    fn instance(score: f64) -> InstancePrediction {
        InstancePrediction {
            bbox: [0.0, 0.0, 2.0, 2.0],
            scores: vec![1.0 - score, score],
            height: 2,
            width: 2,
            mask: vec![0.7, 0.5, 0.2, 0.0],
        }
    }

    #[test]
    fn instances_are_thresholded() {
        let p = TaskPredictions::Instance(vec![instance(0.95), instance(0.3)]);
        let a = harden_predictions(&p, 0.5);
        let AnnotationContent::Instance(list) = &a.content else { panic!() };
        // the 0.3 instance still has class 0 at 0.7, so it survives with class 0
        assert_eq!(list.len(), 2);
        assert_eq!(list[0].class, 1);
        assert_eq!(list[0].mask, vec![true, true, false, false]);

        let strict = harden_predictions(&p, 0.9);
        let AnnotationContent::Instance(list) = &strict.content else { panic!() };
        assert_eq!(list.len(), 1);

        let empty = harden_predictions(&TaskPredictions::Instance(vec![]), 0.5);
        assert_eq!(empty.content, AnnotationContent::Instance(vec![]));
    }

    #[test]
    fn instance_scores_threshold_single_class() {
        let mk = |s: f64| InstancePrediction {
            scores: vec![s],
            ..instance(0.0)
        };
        let p = TaskPredictions::Instance(vec![mk(0.95), mk(0.3)]);
        let AnnotationContent::Instance(list) = harden_predictions(&p, 0.5).content else { panic!() };
        assert_eq!(list.len(), 1);
    }

    #[test]
    fn hardening_is_idempotent() {
        let scores: Vec<f64> = (0..24).map(|i| ((i * 7919) % 13) as f64 / 13.0).collect();
        let once = harden_predictions(&semantic(&scores, 3), 0.5);
        let twice = harden_predictions(&once.to_predictions(3), 0.5);
        assert_eq!(once, twice);

        let p = TaskPredictions::Instance(vec![instance(0.95), instance(0.3)]);
        let once = harden_predictions(&p, 0.5);
        assert_eq!(harden_predictions(&once.to_predictions(2), 0.5), once);
    }
}
