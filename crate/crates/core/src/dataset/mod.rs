//! Video samples, taxonomies and dataset-level operations.

mod manifest;
mod synth;

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::frame::Grayscale;

pub use manifest::{load_manifest, write_manifest, MANIFEST_FILE, TAXONOMY_FILE};
pub use synth::{drift_sequence, synthesize_dataset, MotionPattern, MotionRegion, SynthSpec};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassTaxonomy {
    name: String,
    classes: Vec<String>,
}

impl ClassTaxonomy {
    pub fn new(name: impl Into<String>, classes: Vec<String>) -> Result<Self> {
        ensure!(!classes.is_empty(), InvalidInput, "taxonomy has no classes");
        let unique: BTreeSet<_> = classes.iter().collect();
        ensure!(
            unique.len() == classes.len(),
            InvalidInput,
            "duplicate class names in {:?}",
            classes
        );
        Ok(ClassTaxonomy {
            name: name.into(),
            classes,
        })
    }

    /// The objective classes I..VII used by the cross-database protocols.
    pub fn objective() -> Self {
        let classes = ["I", "II", "III", "IV", "V", "VI", "VII"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        ClassTaxonomy::new("objective", classes).unwrap()
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn index_of(&self, class: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == class)
    }

    pub fn class_name(&self, index: usize) -> Option<&str> {
        self.classes.get(index).map(String::as_str)
    }
}

/// Ground-truth displacement of the moving region between frame `t - 1` and `t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Displacement {
    pub dx: f64,
    pub dy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoSample {
    pub video_id: String,
    pub subject_id: String,
    pub database_id: String,
    pub label: usize,
    frames: Vec<Grayscale>,
    pub au_tags: Option<Vec<u32>>,
    /// Per-frame ground truth when the sample was synthesized; entry 0 is always zero.
    pub motion: Option<Vec<Displacement>>,
}

impl VideoSample {
    pub fn new(
        video_id: impl Into<String>,
        subject_id: impl Into<String>,
        database_id: impl Into<String>,
        label: usize,
        frames: Vec<Grayscale>,
    ) -> Result<Self> {
        let video_id = video_id.into();
        if frames.is_empty() {
            return Err(Error::Video {
                video_id,
                message: "no frames".into(),
            });
        }
        let dims = frames[0].dims();
        if let Some(i) = frames.iter().position(|f| f.dims() != dims) {
            return Err(Error::Video {
                video_id,
                message: format!(
                    "frame {i} is {:?} but frame 0 is {:?}",
                    frames[i].dims(),
                    dims
                ),
            });
        }
        Ok(VideoSample {
            video_id,
            subject_id: subject_id.into(),
            database_id: database_id.into(),
            label,
            frames,
            au_tags: None,
            motion: None,
        })
    }

    pub fn frames(&self) -> &[Grayscale] {
        &self.frames
    }

    pub fn dims(&self) -> (usize, usize) {
        self.frames[0].dims()
    }

    /// Resizes every frame to `side x side`.
    pub fn resized(&self, side: usize) -> Result<Self> {
        let frames = self
            .frames
            .iter()
            .map(|f| f.resize(side))
            .collect::<Result<Vec<_>>>()?;
        Ok(VideoSample {
            frames,
            ..self.clone()
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    samples: Vec<VideoSample>,
    taxonomy: ClassTaxonomy,
}

impl Dataset {
    pub fn new(samples: Vec<VideoSample>, taxonomy: ClassTaxonomy) -> Result<Self> {
        for s in &samples {
            if s.label >= taxonomy.len() {
                return Err(Error::Video {
                    video_id: s.video_id.clone(),
                    message: format!(
                        "label {} outside taxonomy of {} classes",
                        s.label,
                        taxonomy.len()
                    ),
                });
            }
        }
        Ok(Dataset { samples, taxonomy })
    }

    pub fn samples(&self) -> &[VideoSample] {
        &self.samples
    }

    pub fn taxonomy(&self) -> &ClassTaxonomy {
        &self.taxonomy
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Distinct subject ids in order of first appearance.
    pub fn subjects(&self) -> Vec<&str> {
        let mut seen = BTreeSet::new();
        self.samples
            .iter()
            .filter(|s| seen.insert(s.subject_id.as_str()))
            .map(|s| s.subject_id.as_str())
            .collect()
    }

    pub fn find(&self, video_id: &str) -> Option<&VideoSample> {
        self.samples.iter().find(|s| s.video_id == video_id)
    }

    pub fn resized(&self, side: usize) -> Result<Self> {
        let samples = self
            .samples
            .iter()
            .map(|s| s.resized(side))
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            samples,
            taxonomy: self.taxonomy.clone(),
        })
    }
}

pub fn resize_frame(img: &Grayscale, side: usize) -> Result<Grayscale> {
    img.resize(side)
}

/// Prefix used to keep subject ids distinct across databases.
pub fn prefixed_subject(database_id: &str, subject_id: &str) -> String {
    format!("{database_id}/{subject_id}")
}

/// Merges two databases restricted to `keep_classes`.
///
/// Labels are re-indexed against a taxonomy made of `keep_classes` in the
/// given order and every subject id is prefixed with its database id.
pub fn merge_datasets(a: &Dataset, b: &Dataset, keep_classes: &[String]) -> Result<Dataset> {
    ensure!(!keep_classes.is_empty(), InvalidInput, "keep_classes is empty");
    let taxonomy = ClassTaxonomy::new(
        format!("{}+{}", a.taxonomy.name, b.taxonomy.name),
        keep_classes.to_vec(),
    )?;
    let mut samples = Vec::new();
    for ds in [a, b] {
        let remap: HashMap<usize, usize> = keep_classes
            .iter()
            .map(|name| {
                ds.taxonomy
                    .index_of(name)
                    .map(|old| (old, taxonomy.index_of(name).unwrap()))
                    .ok_or_else(|| {
                        Error::InvalidInput(format!(
                            "class {name:?} missing from taxonomy {:?}",
                            ds.taxonomy.name
                        ))
                    })
            })
            .collect::<Result<_>>()?;
        for s in &ds.samples {
            if let Some(&label) = remap.get(&s.label) {
                let mut kept = s.clone();
                kept.label = label;
                kept.subject_id = prefixed_subject(&s.database_id, &s.subject_id);
                samples.push(kept);
            }
        }
    }
    Dataset::new(samples, taxonomy)
}
