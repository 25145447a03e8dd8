//! Datasets on disk: PNG frames, with optional single-channel PNG label
//! maps holding class indices (255 = ignore).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use vcmlab::codec::ImageTensor;
use vcmlab::eval::EvalSample;
use vcmlab::task::{AnnotationContent, Annotations, LabelMap};
use vcmlab::train::{Sequence, SequenceDataset};
use vcmlab::Error;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// One directory per sequence; frames in lexicographic order.
    #[default]
    SequenceFolders,
    /// Every image is a one-frame sequence.
    FlatImages,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetDescriptor {
    pub root: PathBuf,
    pub layout: Layout,
    /// Substring that marks the labeled frame of a sequence.
    pub labeled_pattern: String,
    /// Label map of `frame.png` is `frame<label_suffix>.png`.
    pub label_suffix: String,
    pub annotation_format: String,
}

impl Default for DatasetDescriptor {
    fn default() -> Self {
        Self {
            root: PathBuf::from("data/train"),
            layout: Layout::SequenceFolders,
            labeled_pattern: "_labeled".into(),
            label_suffix: "_labels".into(),
            annotation_format: "label_png".into(),
        }
    }
}

pub struct LoadedSequence {
    pub name: String,
    pub frames: Vec<PathBuf>,
    pub labeled_index: usize,
    pub label: Option<PathBuf>,
}

fn io(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn pngs(dir: &Path, label_suffix: &str) -> vcmlab::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| io(dir, e))? {
        let path = entry.map_err(|e| io(dir, e))?.path();
        let is_png = path.extension().is_some_and(|x| x.eq_ignore_ascii_case("png"));
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        if path.is_file() && is_png && !stem.ends_with(label_suffix) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn label_path(frame: &Path, suffix: &str) -> PathBuf {
    let stem = frame.file_stem().unwrap_or_default().to_string_lossy();
    frame.with_file_name(format!("{stem}{suffix}.png"))
}

impl DatasetDescriptor {
    pub fn with_root(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            ..Self::default()
        }
    }

    pub fn scan(&self) -> vcmlab::Result<Vec<LoadedSequence>> {
        if self.annotation_format != "label_png" {
            return Err(Error::Config(format!("unknown annotation format `{}`", self.annotation_format)));
        }
        if !self.root.is_dir() {
            return Err(io(
                &self.root,
                std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
            ));
        }
        let mut seqs = Vec::new();
        match self.layout {
            Layout::FlatImages => {
                for frame in pngs(&self.root, &self.label_suffix)? {
                    let label = Some(label_path(&frame, &self.label_suffix)).filter(|p| p.is_file());
                    seqs.push(LoadedSequence {
                        name: frame.file_stem().unwrap_or_default().to_string_lossy().into_owned(),
                        frames: vec![frame],
                        labeled_index: 0,
                        label,
                    });
                }
            }
            Layout::SequenceFolders => {
                let mut dirs: Vec<PathBuf> = std::fs::read_dir(&self.root)
                    .map_err(|e| io(&self.root, e))?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.is_dir())
                    .collect();
                dirs.sort();
                for dir in dirs {
                    let frames = pngs(&dir, &self.label_suffix)?;
                    if frames.is_empty() {
                        return Err(Error::EmptySequence);
                    }
                    let marked: Vec<usize> = frames
                        .iter()
                        .enumerate()
                        .filter(|(_, f)| f.file_name().unwrap_or_default().to_string_lossy().contains(&self.labeled_pattern))
                        .map(|(i, _)| i)
                        .collect();
                    let labeled_index = match marked.as_slice() {
                        [i] => *i,
                        [] => {
                            return Err(Error::Config(format!(
                                "{}: no frame matches the labeled pattern `{}`",
                                dir.display(),
                                self.labeled_pattern
                            )))
                        }
                        _ => {
                            return Err(Error::Config(format!(
                                "{}: several frames match the labeled pattern `{}`",
                                dir.display(),
                                self.labeled_pattern
                            )))
                        }
                    };
                    let label = Some(label_path(&frames[labeled_index], &self.label_suffix)).filter(|p| p.is_file());
                    seqs.push(LoadedSequence {
                        name: dir.file_name().unwrap_or_default().to_string_lossy().into_owned(),
                        frames,
                        labeled_index,
                        label,
                    });
                }
            }
        }
        if seqs.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(seqs)
    }

    pub fn load(&self) -> vcmlab::Result<SequenceDataset> {
        let mut out = Vec::new();
        for s in self.scan()? {
            let frames = s.frames.iter().map(|p| read_image(p)).collect::<vcmlab::Result<Vec<_>>>()?;
            let ann = s.label.as_deref().map(read_labels).transpose()?.map(semantic);
            out.push(Sequence::new(frames, s.labeled_index, ann)?);
        }
        Ok(SequenceDataset::new(out))
    }

    /// The labeled frame of every sequence, with its labels when present.
    pub fn eval_samples(&self) -> vcmlab::Result<Vec<EvalSample>> {
        self.scan()?
            .into_iter()
            .map(|s| {
                let frame = &s.frames[s.labeled_index];
                let stem = frame.file_stem().unwrap_or_default().to_string_lossy();
                let id = match self.layout {
                    Layout::FlatImages => s.name.clone(),
                    Layout::SequenceFolders => format!("{}/{stem}", s.name),
                };
                Ok(EvalSample {
                    id,
                    image: read_image(frame)?,
                    labels: s.label.as_deref().map(read_labels).transpose()?.map(semantic),
                })
            })
            .collect()
    }

    /// SHA-256 over relative paths and bytes of every file used.
    pub fn fingerprint(&self) -> vcmlab::Result<String> {
        let mut h = Sha256::new();
        for s in self.scan()? {
            for p in s.frames.iter().chain(s.label.iter()) {
                let rel = p.strip_prefix(&self.root).unwrap_or(p);
                h.update(rel.to_string_lossy().as_bytes());
                h.update(std::fs::read(p).map_err(|e| io(p, e))?);
            }
        }
        Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
    }
}

fn semantic(map: LabelMap) -> Annotations {
    Annotations::ground_truth(AnnotationContent::Semantic(map))
}

fn image_error(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(e) => io(path, e),
        other => Error::InvalidValue(format!("{}: {other}", path.display())),
    }
}

pub fn read_image(path: &Path) -> vcmlab::Result<ImageTensor> {
    let img = image::open(path).map_err(|e| image_error(path, e))?.to_rgb8();
    let (w, h) = img.dimensions();
    let hwc: Vec<f64> = img.as_raw().iter().map(|&v| f64::from(v) / 255.0).collect();
    ImageTensor::from_hwc(h as usize, w as usize, &hwc)
}

pub fn write_image(path: &Path, img: &ImageTensor) -> vcmlab::Result<()> {
    let bytes: Vec<u8> = img.to_hwc().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let buf = image::RgbImage::from_raw(img.width() as u32, img.height() as u32, bytes).expect("buffer size");
    buf.save(path).map_err(|e| image_error(path, e))
}

pub fn read_labels(path: &Path) -> vcmlab::Result<LabelMap> {
    let img = image::open(path).map_err(|e| image_error(path, e))?.to_luma8();
    let (w, h) = img.dimensions();
    Ok(LabelMap::new(1, h as usize, w as usize, img.as_raw().iter().map(|&v| u16::from(v)).collect()))
}

pub fn write_labels(path: &Path, map: &LabelMap) -> vcmlab::Result<()> {
    let bytes: Vec<u8> = map.labels.iter().map(|&v| v.min(255) as u8).collect();
    let buf = image::GrayImage::from_raw(map.width as u32, map.height as u32, bytes).expect("buffer size");
    buf.save(path).map_err(|e| image_error(path, e))
}
