use serde::{Deserialize, Serialize};

use crate::codec::ImageTensor;
use crate::task::{InstanceAnnotation, InstancePrediction, LabelMap, IGNORE_INDEX};
use crate::{Error, Result};

fn check_dims(a: &ImageTensor, b: &ImageTensor) -> Result<()> {
    if (a.height(), a.width()) != (b.height(), b.width()) {
        return Err(Error::shape(&[3, b.height(), b.width()], &[3, a.height(), a.width()]));
    }
    Ok(())
}

pub fn mse(x_hat: &ImageTensor, x: &ImageTensor) -> Result<f64> {
    check_dims(x_hat, x)?;
    let n = x.chw().len() as f64;
    Ok(x_hat.chw().iter().zip(x.chw()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n)
}

/// PSNR for unit peak value from a mean squared error; `+inf` at zero.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

pub fn psnr(x_hat: &ImageTensor, x: &ImageTensor) -> Result<f64> {
    Ok(psnr_from_mse(mse(x_hat, x)?))
}

const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
const WINDOW: usize = 11;
const WINDOW_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn gaussian(size: usize) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

struct Plane {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Plane {
    /// Separable "valid" filtering.
    fn filter(&self, k: &[f64]) -> Plane {
        let n = k.len();
        let (oh, ow) = (self.h + 1 - n, self.w + 1 - n);
        let mut rows = vec![0.0; self.h * ow];
        for r in 0..self.h {
            for c in 0..ow {
                rows[r * ow + c] = (0..n).map(|i| k[i] * self.data[r * self.w + c + i]).sum();
            }
        }
        let mut out = vec![0.0; oh * ow];
        for r in 0..oh {
            for c in 0..ow {
                out[r * ow + c] = (0..n).map(|i| k[i] * rows[(r + i) * ow + c]).sum();
            }
        }
        Plane { h: oh, w: ow, data: out }
    }

    fn zip(&self, other: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        Plane {
            h: self.h,
            w: self.w,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    /// 2x2 average pooling, dropping a trailing odd row/column.
    fn downsample(&self) -> Plane {
        let (h, w) = (self.h / 2, self.w / 2);
        let mut data = Vec::with_capacity(h * w);
        for r in 0..h {
            for c in 0..w {
                let at = |dr: usize, dc: usize| self.data[(2 * r + dr) * self.w + 2 * c + dc];
                data.push(0.25 * (at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1)));
            }
        }
        Plane { h, w, data }
    }
}

/// Mean SSIM and mean contrast-structure term of one scale.
fn ssim_cs(a: &Plane, b: &Plane, window: &[f64]) -> (f64, f64) {
    let c1 = K1 * K1;
    let c2 = K2 * K2;
    let mu_a = a.filter(window);
    let mu_b = b.filter(window);
    let aa = a.zip(a, |x, y| x * y).filter(window);
    let bb = b.zip(b, |x, y| x * y).filter(window);
    let ab = a.zip(b, |x, y| x * y).filter(window);
    let n = mu_a.data.len() as f64;
    let (mut ssim, mut cs) = (0.0, 0.0);
    for i in 0..mu_a.data.len() {
        let (ma, mb) = (mu_a.data[i], mu_b.data[i]);
        let va = aa.data[i] - ma * ma;
        let vb = bb.data[i] - mb * mb;
        let cov = ab.data[i] - ma * mb;
        let cs_i = (2.0 * cov + c2) / (va + vb + c2);
        let l_i = (2.0 * (ma * mb) + c1) / (ma * ma + mb * mb + c1);
        ssim += l_i * cs_i;
        cs += cs_i;
    }
    (ssim / n, cs / n)
}

/// Number of scales for a given smallest side: as many as keep the
/// coarsest scale at least one window wide, at most five.
pub fn ms_ssim_scales(min_side: usize) -> usize {
    let mut scales = 1;
    let mut side = min_side;
    while scales < MS_SSIM_WEIGHTS.len() && side / 2 >= WINDOW {
        side /= 2;
        scales += 1;
    }
    scales
}

/// Multi-scale SSIM on each RGB channel, averaged over channels. Inputs
/// too small for five scales use fewer, with renormalized weights.
pub fn ms_ssim(x_hat: &ImageTensor, x: &ImageTensor) -> Result<f64> {
    check_dims(x_hat, x)?;
    let (h, w) = (x.height(), x.width());
    let scales = ms_ssim_scales(h.min(w));
    let weights = &MS_SSIM_WEIGHTS[..scales];
    let wsum: f64 = weights.iter().sum();
    let side = h.min(w);
    let window = gaussian(match side {
        s if s >= WINDOW => WINDOW,
        s if s % 2 == 1 => s,
        s => (s - 1).max(1),
    });
    let plane = h * w;
    let mut total = 0.0;
    for c in 0..3 {
        let mut a = Plane {
            h,
            w,
            data: x_hat.chw()[c * plane..(c + 1) * plane].to_vec(),
        };
        let mut b = Plane {
            h,
            w,
            data: x.chw()[c * plane..(c + 1) * plane].to_vec(),
        };
        let mut score = 1.0;
        for (s, &wt) in weights.iter().enumerate() {
            let (ssim, cs) = ssim_cs(&a, &b, &window);
            let term = if s + 1 == scales { ssim } else { cs };
            score *= term.max(0.0).powf(wt / wsum);
            if s + 1 < scales {
                a = a.downsample();
                b = b.downsample();
            }
        }
        total += score;
    }
    Ok(total / 3.0)
}

/// Per-class intersection and union counts, accumulated over images.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IouAccumulator {
    pub intersection: Vec<u64>,
    pub union: Vec<u64>,
    pub gt_pixels: Vec<u64>,
}

impl IouAccumulator {
    pub fn new(num_classes: usize) -> Self {
        Self {
            intersection: vec![0; num_classes],
            union: vec![0; num_classes],
            gt_pixels: vec![0; num_classes],
        }
    }

    pub fn add(&mut self, pred: &LabelMap, gt: &LabelMap) -> Result<()> {
        if (pred.batch, pred.height, pred.width) != (gt.batch, gt.height, gt.width) {
            return Err(Error::shape(
                &[gt.batch, gt.height, gt.width],
                &[pred.batch, pred.height, pred.width],
            ));
        }
        let k = self.union.len();
        for (&p, &g) in pred.labels.iter().zip(&gt.labels) {
            if g == IGNORE_INDEX {
                continue;
            }
            let (p, g) = (p as usize, g as usize);
            if g >= k || p >= k {
                return Err(Error::InvalidValue(format!("label {} with {k} classes", g.max(p))));
            }
            self.gt_pixels[g] += 1;
            if p == g {
                self.intersection[g] += 1;
                self.union[g] += 1;
            } else {
                self.union[g] += 1;
                self.union[p] += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &IouAccumulator) {
        for i in 0..self.union.len() {
            self.intersection[i] += other.intersection[i];
            self.union[i] += other.union[i];
            self.gt_pixels[i] += other.gt_pixels[i];
        }
    }

    /// Mean IoU over classes that occur in the ground truth.
    pub fn miou(&self) -> Result<f64> {
        let present: Vec<usize> = (0..self.union.len()).filter(|&c| self.gt_pixels[c] > 0).collect();
        if present.is_empty() {
            return Err(Error::NoValidPixels);
        }
        let sum: f64 = present
            .iter()
            .map(|&c| self.intersection[c] as f64 / self.union[c] as f64)
            .sum();
        Ok(sum / present.len() as f64)
    }
}

pub fn miou(pred: &LabelMap, gt: &LabelMap, num_classes: usize) -> Result<f64> {
    let mut acc = IouAccumulator::new(num_classes);
    acc.add(pred, gt)?;
    acc.miou()
}

/// A detected instance with a hard mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredInstance {
    pub class: usize,
    pub score: f64,
    pub mask: Vec<bool>,
}

impl ScoredInstance {
    pub fn from_prediction(p: &InstancePrediction) -> Self {
        let class = crate::task::argmax(p.scores.iter().copied());
        Self {
            class,
            score: p.scores[class],
            mask: p.mask.iter().map(|&m| m >= 0.5).collect(),
        }
    }
}

fn mask_iou(a: &[bool], b: &[bool]) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn iou_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| 0.5 + 0.05 * i as f64)
}

/// COCO-style average precision of one class: 101-point interpolated
/// precision, averaged over the IoU thresholds. Images are matched
/// independently, detections greedily in descending score order.
pub fn average_precision(preds: &[Vec<ScoredInstance>], gt: &[Vec<InstanceAnnotation>], class: usize) -> Option<f64> {
    let n_gt: usize = gt.iter().map(|g| g.iter().filter(|a| a.class == class).count()).sum();
    if n_gt == 0 {
        return None;
    }
    // (score, image, index) sorted by descending score, ties by position
    let mut dets: Vec<(f64, usize, usize)> = preds
        .iter()
        .enumerate()
        .flat_map(|(im, ps)| {
            ps.iter()
                .enumerate()
                .filter(|(_, p)| p.class == class)
                .map(move |(i, p)| (p.score, im, i))
        })
        .collect();
    dets.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut ap_sum = 0.0;
    for thr in iou_thresholds() {
        let mut taken: Vec<Vec<bool>> = gt.iter().map(|g| vec![false; g.len()]).collect();
        let mut tp = Vec::with_capacity(dets.len());
        for &(_, im, i) in &dets {
            let mask = &preds[im][i].mask;
            let mut best: Option<(usize, f64)> = None;
            for (j, a) in gt.get(im).into_iter().flatten().enumerate() {
                if a.class != class || taken[im][j] {
                    continue;
                }
                let iou = mask_iou(mask, &a.mask);
                if iou >= thr - 1e-12 && best.map_or(true, |(_, b)| iou > b) {
                    best = Some((j, iou));
                }
            }
            match best {
                Some((j, _)) => {
                    taken[im][j] = true;
                    tp.push(true);
                }
                None => tp.push(false),
            }
        }
        let mut precision = Vec::with_capacity(tp.len());
        let mut recall = Vec::with_capacity(tp.len());
        let (mut ctp, mut cfp) = (0usize, 0usize);
        for &t in &tp {
            if t {
                ctp += 1;
            } else {
                cfp += 1;
            }
            precision.push(ctp as f64 / (ctp + cfp) as f64);
            recall.push(ctp as f64 / n_gt as f64);
        }
        for i in (0..precision.len().saturating_sub(1)).rev() {
            precision[i] = precision[i].max(precision[i + 1]);
        }
        let mut sum = 0.0;
        for r in 0..=100 {
            let level = r as f64 / 100.0;
            let idx = recall.partition_point(|&x| x < level - 1e-12);
            if idx < precision.len() {
                sum += precision[idx];
            }
        }
        ap_sum += sum / 101.0;
    }
    Some(ap_sum / iou_thresholds().len() as f64)
}

/// Weighted mean of per-class AP. With `class_weights` unset, each class is
/// weighted by its number of ground-truth instances; classes without
/// ground truth are skipped.
pub fn wap(
    preds: &[Vec<ScoredInstance>],
    gt: &[Vec<InstanceAnnotation>],
    num_classes: usize,
    class_weights: Option<&[f64]>,
) -> Result<f64> {
    let counts: Vec<usize> = (0..num_classes)
        .map(|c| gt.iter().flatten().filter(|a| a.class == c).count())
        .collect();
    if counts.iter().all(|&c| c == 0) {
        return Err(Error::EmptyGroundTruth);
    }
    let (mut num, mut den) = (0.0, 0.0);
    for c in 0..num_classes {
        let Some(ap) = average_precision(preds, gt, c) else { continue };
        let w = class_weights.map_or(counts[c] as f64, |w| w[c]);
        num += w * ap;
        den += w;
    }
    Ok(num / den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn img(h: usize, w: usize, f: impl FnMut(usize) -> f64) -> ImageTensor {
        ImageTensor::new(h, w, (0..3 * h * w).map(f).collect()).unwrap()
    }

    #[test]
    fn psnr_examples() {
        let a = img(8, 8, |i| (i % 7) as f64 / 7.0);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        assert!((psnr_from_mse(0.01) - 20.0).abs() < 1e-12);
        let zero = img(8, 8, |_| 0.0);
        let one = img(8, 8, |_| 1.0);
        assert_eq!(psnr(&zero, &one).unwrap(), 0.0);
        let b = img(8, 8, |i| (((i % 7) as f64 / 7.0) + 0.1).min(1.0));
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    }

    #[test]
    fn ms_ssim_identity_and_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = img(64, 80, |_| rng.gen());
        assert_eq!(ms_ssim(&a, &a).unwrap(), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = img(64, 80, |_| rng.gen());
        assert_eq!(ms_ssim(&a, &b).unwrap(), ms_ssim(&b, &a).unwrap());
        assert!(ms_ssim(&a, &b).unwrap() < 1.0);
    }

    #[test]
    fn ms_ssim_inverted_image_scores_low() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let bits: Vec<f64> = (0..3 * 96 * 96).map(|_| if rng.gen::<bool>() { 0.9 } else { 0.1 }).collect();
        let a = ImageTensor::new(96, 96, bits.clone()).unwrap();
        let b = ImageTensor::new(96, 96, bits.iter().map(|v| 1.0 - v).collect()).unwrap();
        assert!(ms_ssim(&a, &b).unwrap() < 0.5);
    }

    #[test]
    fn scale_count() {
        assert_eq!(ms_ssim_scales(176), 5);
        assert_eq!(ms_ssim_scales(64), 3);
        assert_eq!(ms_ssim_scales(11), 1);
        let a = img(16, 16, |i| (i % 5) as f64 / 5.0);
        assert_eq!(ms_ssim(&a, &a).unwrap(), 1.0);
    }

    fn labels(l: &[u16]) -> LabelMap {
        LabelMap::new(1, 1, l.len(), l.to_vec())
    }

    #[test]
    fn miou_examples() {
        assert_eq!(miou(&labels(&[0, 1, 1, 2]), &labels(&[0, 1, 1, 2]), 4).unwrap(), 1.0);
        // class 1: intersection 2, union 4; class 0 present in gt, never predicted
        let v = miou(&labels(&[1, 1, 1, 1]), &labels(&[1, 1, 0, 0]), 2).unwrap();
        assert_eq!(v, (0.5 + 0.0) / 2.0);
        let single = miou(&labels(&[1, 1, 1, 0]), &labels(&[1, 1, 0, 1]), 2);
        assert!(single.is_ok());
        let only = miou(&labels(&[1, 1, 1, 1]), &labels(&[1, 1, IGNORE_INDEX, IGNORE_INDEX]), 3).unwrap();
        assert_eq!(only, 1.0);
        assert!(matches!(
            miou(&labels(&[0]), &labels(&[IGNORE_INDEX]), 2),
            Err(Error::NoValidPixels)
        ));
    }

    fn ann(class: usize, mask: Vec<bool>) -> InstanceAnnotation {
        InstanceAnnotation {
            class,
            bbox: [0.0, 0.0, 1.0, 1.0],
            height: 1,
            width: mask.len(),
            mask,
        }
    }

    fn det(class: usize, score: f64, mask: Vec<bool>) -> ScoredInstance {
        ScoredInstance { class, score, mask }
    }

    #[test]
    fn wap_weighted_by_counts() {
        let m = |i: usize| (0..8).map(|j| j == i).collect::<Vec<_>>();
        let gt = vec![vec![ann(0, m(0)), ann(0, m(1)), ann(0, m(2)), ann(1, m(3))]];
        let preds = vec![vec![det(0, 0.9, m(0)), det(0, 0.8, m(1)), det(0, 0.7, m(2))]];
        assert_eq!(wap(&preds, &gt, 2, None).unwrap(), 0.75);
        assert_eq!(wap(&preds, &gt, 2, Some(&[1.0, 1.0])).unwrap(), 0.5);

        let perfect = vec![vec![det(0, 0.9, m(0)), det(0, 0.8, m(1)), det(0, 0.7, m(2)), det(1, 0.6, m(3))]];
        assert_eq!(wap(&perfect, &gt, 2, None).unwrap(), 1.0);
        assert_eq!(wap(&perfect, &gt, 2, Some(&[0.1, 5.0])).unwrap(), 1.0);
        assert!(matches!(wap(&preds, &[vec![]], 2, None), Err(Error::EmptyGroundTruth)));
    }

    #[test]
    fn ap_penalises_false_positives_ranked_first() {
        let m = |i: usize| (0..4).map(|j| j == i).collect::<Vec<_>>();
        let gt = vec![vec![ann(0, m(0))]];
        let preds = vec![vec![det(0, 0.9, m(1)), det(0, 0.5, m(0))]];
        let ap = average_precision(&preds, &gt, 0).unwrap();
        assert!((ap - 0.5).abs() < 1e-12, "{ap}");
    }
}
