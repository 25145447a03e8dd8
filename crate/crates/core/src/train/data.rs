use std::sync::atomic::{AtomicBool, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codec::ImageTensor;
use crate::task::Annotations;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameMode {
    /// Always the annotated frame.
    #[default]
    LabeledOnly,
    /// A uniformly drawn frame of the sequence.
    RandomFrame,
}

impl std::str::FromStr for FrameMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "labeled_only" | "labeled" => Ok(Self::LabeledOnly),
            "random_frame" | "random" => Ok(Self::RandomFrame),
            _ => Err(Error::Config(format!("unknown frame mode `{s}`"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Sequence {
    frames: Vec<ImageTensor>,
    labeled_index: usize,
    annotation: Option<Annotations>,
}

impl Sequence {
    pub fn new(frames: Vec<ImageTensor>, labeled_index: usize, annotation: Option<Annotations>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::EmptySequence);
        }
        if labeled_index >= frames.len() {
            return Err(Error::InvalidValue(format!(
                "labeled frame {labeled_index} of a {}-frame sequence",
                frames.len()
            )));
        }
        Ok(Self {
            frames,
            labeled_index,
            annotation,
        })
    }

    pub fn frames(&self) -> &[ImageTensor] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn labeled_index(&self) -> usize {
        self.labeled_index
    }

    pub fn labeled_frame(&self) -> &ImageTensor {
        &self.frames[self.labeled_index]
    }

    pub fn has_annotation(&self) -> bool {
        self.annotation.is_some()
    }
}

/// Video sequences, each with one labeled frame.
#[derive(Debug, Default)]
pub struct SequenceDataset {
    sequences: Vec<Sequence>,
    annotations_forbidden: bool,
    annotation_reads: AtomicBool,
}

impl Clone for SequenceDataset {
    fn clone(&self) -> Self {
        Self {
            sequences: self.sequences.clone(),
            annotations_forbidden: self.annotations_forbidden,
            annotation_reads: AtomicBool::new(self.annotation_reads.load(Ordering::Relaxed)),
        }
    }
}

impl SequenceDataset {
    pub fn new(sequences: Vec<Sequence>) -> Self {
        Self {
            sequences,
            ..Default::default()
        }
    }

    /// Make every annotation read panic. Used to prove that a code path
    /// never touches labels.
    pub fn forbid_annotation_access(mut self) -> Self {
        self.annotations_forbidden = true;
        self
    }

    /// Drop all annotations.
    pub fn without_annotations(mut self) -> Self {
        for s in &mut self.sequences {
            s.annotation = None;
        }
        self
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn sequences(&self) -> &[Sequence] {
        &self.sequences
    }

    pub fn sequence(&self, index: usize) -> &Sequence {
        &self.sequences[index]
    }

    /// Ground truth of sequence `index`'s labeled frame.
    pub fn annotation(&self, index: usize) -> Result<&Annotations> {
        assert!(
            !self.annotations_forbidden,
            "annotation of sequence {index} read from an annotation-free dataset"
        );
        self.annotation_reads.store(true, Ordering::Relaxed);
        self.sequences[index]
            .annotation
            .as_ref()
            .ok_or(Error::MissingAnnotation(index))
    }

    /// Whether [`Self::annotation`] has ever been called.
    pub fn annotations_read(&self) -> bool {
        self.annotation_reads.load(Ordering::Relaxed)
    }
}

/// Frame index drawn for one training step.
pub fn sample_frame_index(seq: &Sequence, rng: &mut impl Rng, mode: FrameMode) -> Result<usize> {
    if seq.frames.is_empty() {
        return Err(Error::EmptySequence);
    }
    Ok(match mode {
        FrameMode::LabeledOnly => seq.labeled_index,
        FrameMode::RandomFrame => rng.gen_range(0..seq.frames.len()),
    })
}

pub fn sample_training_frame<'a>(seq: &'a Sequence, rng: &mut impl Rng, mode: FrameMode) -> Result<&'a ImageTensor> {
    Ok(&seq.frames[sample_frame_index(seq, rng, mode)?])
}
