//! Synthetic "moving shapes" video sequences with per-pixel labels.
//!
//! Each sequence pans over a textured background while a few circles,
//! squares and triangles drift across it. Label 0 is background; shapes
//! are classes 1 (circle), 2 (square) and 3 (triangle). Later shapes
//! occlude earlier ones.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::ImageTensor;
use crate::task::{AnnotationContent, Annotations, InstanceAnnotation, LabelMap};
use crate::train::{Sequence, SequenceDataset};

pub const NUM_CLASSES: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapesConfig {
    pub sequences: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Index of the annotated frame in each sequence.
    pub labeled_index: usize,
    pub max_shapes: usize,
    pub seed: u64,
}

impl Default for ShapesConfig {
    fn default() -> Self {
        Self {
            sequences: 16,
            frames: 30,
            height: 64,
            width: 64,
            labeled_index: 19,
            max_shapes: 3,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Shape {
    class: u16,
    cx: f64,
    cy: f64,
    vx: f64,
    vy: f64,
    size: f64,
    angle: f64,
    spin: f64,
    color: [f64; 3],
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (s, c) = self.angle.sin_cos();
        let (u, v) = (c * dx + s * dy, -s * dx + c * dy);
        match self.class {
            1 => dx * dx + dy * dy <= self.size * self.size,
            2 => u.abs() <= self.size * 0.85 && v.abs() <= self.size * 0.85,
            _ => {
                // equilateral triangle with circumradius `size`
                let r = self.size;
                let h = 1.5 * r;
                let top = -r;
                if v < top || v > top + h {
                    return false;
                }
                let half = (v - top) / h * (r * 3f64.sqrt() / 2.0);
                u.abs() <= half
            }
        }
    }
}

struct Background {
    base: [f64; 3],
    tint: [f64; 3],
    freq: [f64; 2],
    phase: f64,
    pan: [f64; 2],
}

impl Background {
    fn sample(&self, x: f64, y: f64, t: f64) -> [f64; 3] {
        let (px, py) = (x + self.pan[0] * t, y + self.pan[1] * t);
        let wave = 0.5 + 0.25 * (self.freq[0] * px + self.phase).sin() + 0.25 * (self.freq[1] * py).cos();
        let ramp = py / 64.0;
        let mut out = [0.0; 3];
        for c in 0..3 {
            out[c] = self.base[c] + self.tint[c] * (0.6 * wave + 0.4 * ramp);
        }
        out
    }
}

/// One rendered sequence with labels for every frame.
pub struct ShapeSequence {
    pub frames: Vec<ImageTensor>,
    pub labels: Vec<LabelMap>,
    pub instances: Vec<Vec<InstanceAnnotation>>,
    pub labeled_index: usize,
}

impl ShapeSequence {
    /// Keep only the labeled frame's annotation.
    pub fn into_sequence(self) -> Sequence {
        let ann = Annotations::ground_truth(AnnotationContent::Semantic(self.labels[self.labeled_index].clone()));
        Sequence::new(self.frames, self.labeled_index, Some(ann)).expect("generated sequences are valid")
    }
}

fn random_color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)]
}

fn render(config: &ShapesConfig, rng: &mut ChaCha8Rng) -> ShapeSequence {
    let (h, w) = (config.height, config.width);
    let base = [rng.gen_range(0.1..0.5), rng.gen_range(0.1..0.5), rng.gen_range(0.1..0.5)];
    let bg = Background {
        base,
        tint: [rng.gen_range(0.0..0.4), rng.gen_range(0.0..0.4), rng.gen_range(0.0..0.4)],
        freq: [rng.gen_range(0.15..0.6), rng.gen_range(0.15..0.6)],
        phase: rng.gen_range(0.0..std::f64::consts::TAU),
        pan: [rng.gen_range(-0.6..0.6), rng.gen_range(-0.6..0.6)],
    };
    let count = rng.gen_range(1..=config.max_shapes.max(1));
    let side = h.min(w) as f64;
    let mut shapes: Vec<Shape> = (0..count)
        .map(|_| Shape {
            class: rng.gen_range(1..NUM_CLASSES as u16),
            cx: rng.gen_range(0.2..0.8) * w as f64,
            cy: rng.gen_range(0.2..0.8) * h as f64,
            vx: rng.gen_range(-1.0..1.0),
            vy: rng.gen_range(-1.0..1.0),
            size: rng.gen_range(0.1..0.2) * side,
            angle: rng.gen_range(0.0..std::f64::consts::TAU),
            spin: rng.gen_range(-0.05..0.05),
            color: random_color(rng),
        })
        .collect();

    let noise_amp = 0.02;
    let mut frames = Vec::with_capacity(config.frames);
    let mut labels = Vec::with_capacity(config.frames);
    let mut instances = Vec::with_capacity(config.frames);
    for t in 0..config.frames {
        let plane = h * w;
        let mut chw = vec![0.0; 3 * plane];
        let mut lab = vec![0u16; plane];
        let mut owner = vec![usize::MAX; plane];
        for y in 0..h {
            for x in 0..w {
                let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
                let mut px = bg.sample(fx, fy, t as f64);
                for (k, s) in shapes.iter().enumerate() {
                    if s.contains(fx, fy) {
                        px = s.color;
                        lab[y * w + x] = s.class;
                        owner[y * w + x] = k;
                    }
                }
                for c in 0..3 {
                    let n = rng.gen_range(-noise_amp..noise_amp);
                    chw[c * plane + y * w + x] = (px[c] + n).clamp(0.0, 1.0);
                }
            }
        }
        let mut inst = Vec::new();
        for (k, s) in shapes.iter().enumerate() {
            let mask: Vec<bool> = owner.iter().map(|&o| o == k).collect();
            let mut bbox = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
            for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
                let (x, y) = ((i % w) as f64, (i / w) as f64);
                bbox = [bbox[0].min(x), bbox[1].min(y), bbox[2].max(x + 1.0), bbox[3].max(y + 1.0)];
            }
            if bbox[0].is_finite() {
                inst.push(InstanceAnnotation {
                    class: s.class as usize,
                    bbox,
                    height: h,
                    width: w,
                    mask,
                });
            }
        }
        frames.push(ImageTensor::new(h, w, chw).expect("pixels are clamped"));
        labels.push(LabelMap::new(1, h, w, lab));
        instances.push(inst);

        for s in &mut shapes {
            s.cx += s.vx;
            s.cy += s.vy;
            if s.cx < 0.1 * w as f64 || s.cx > 0.9 * w as f64 {
                s.vx = -s.vx;
            }
            if s.cy < 0.1 * h as f64 || s.cy > 0.9 * h as f64 {
                s.vy = -s.vy;
            }
            s.angle += s.spin;
        }
    }
    ShapeSequence {
        frames,
        labels,
        instances,
        labeled_index: config.labeled_index.min(config.frames - 1),
    }
}

/// Render every sequence. Sequence `i` depends only on `(seed, i)`.
pub fn generate(config: &ShapesConfig) -> Vec<ShapeSequence> {
    (0..config.sequences)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(i as u64 + 1);
            render(config, &mut rng)
        })
        .collect()
}

/// Sequences with the labeled frame annotated.
pub fn dataset(config: &ShapesConfig) -> SequenceDataset {
    SequenceDataset::new(generate(config).into_iter().map(ShapeSequence::into_sequence).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_and_labels() {
        let config = ShapesConfig {
            sequences: 3,
            frames: 5,
            labeled_index: 19,
            ..Default::default()
        };
        let seqs = generate(&config);
        assert_eq!(seqs.len(), 3);
        for s in &seqs {
            assert_eq!(s.frames.len(), 5);
            assert_eq!(s.labeled_index, 4);
            let fg = s.labels[0].labels.iter().filter(|&&l| l != 0).count();
            assert!(fg > 0 && fg < 64 * 64);
            assert!(s.labels[0].labels.iter().all(|&l| (l as usize) < NUM_CLASSES));
        }
        // frames move
        assert_ne!(seqs[0].frames[0], seqs[0].frames[4]);
    }

    #[test]
    fn generation_is_deterministic_per_sequence() {
        let a = generate(&ShapesConfig {
            sequences: 2,
            frames: 2,
            ..Default::default()
        });
        let b = generate(&ShapesConfig {
            sequences: 4,
            frames: 2,
            ..Default::default()
        });
        assert_eq!(a[1].frames, b[1].frames);
        assert_ne!(a[0].frames, a[1].frames);
    }
}
