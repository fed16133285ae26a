//! CSV manifest of frame directories.
//!
//! ```text
//! video_id,subject_id,database_id,label,frame_dir,au_tags
//! EP02_01f,sub01,CASME2,happiness,sub01/EP02_01f,6;12
//! ```
//!
//! `label` is a class name from `taxonomy.json` next to the manifest (when the
//! file is absent the taxonomy is the sorted set of labels). `frame_dir` is
//! relative to the manifest and holds zero-padded `NNN.png` frames; an optional
//! `motion.csv` (`frame_idx,dx,dy`) carries ground-truth displacement.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ClassTaxonomy, Dataset, Displacement, VideoSample};
use crate::error::{Error, Result};
use crate::frame::Grayscale;

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const TAXONOMY_FILE: &str = "taxonomy.json";
const MOTION_FILE: &str = "motion.csv";

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    video_id: String,
    subject_id: String,
    database_id: String,
    label: String,
    frame_dir: String,
    au_tags: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct MotionRow {
    frame_idx: usize,
    dx: f64,
    dy: f64,
}

fn manifest_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Manifest {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn video_err(video_id: &str, message: impl Into<String>) -> Error {
    Error::Video {
        video_id: video_id.to_string(),
        message: message.into(),
    }
}

/// Loads a manifest and decodes every referenced frame to grayscale `[0, 1]`.
pub fn load_manifest(path: &Path) -> Result<Dataset> {
    let root = path.parent().unwrap_or(Path::new("."));
    let mut reader = csv::Reader::from_path(path).map_err(|e| manifest_err(path, e.to_string()))?;
    let mut rows = Vec::new();
    for (line, row) in reader.deserialize::<Row>().enumerate() {
        rows.push(row.map_err(|e| manifest_err(path, format!("row {}: {e}", line + 1)))?);
    }

    let taxonomy_path = root.join(TAXONOMY_FILE);
    let taxonomy = if taxonomy_path.exists() {
        let text = fs::read_to_string(&taxonomy_path).map_err(|e| Error::io(&taxonomy_path, e))?;
        serde_json::from_str::<ClassTaxonomy>(&text)?
    } else {
        let names: BTreeSet<_> = rows.iter().map(|r| r.label.clone()).collect();
        ClassTaxonomy::new("manifest", names.into_iter().collect())
            .map_err(|e| manifest_err(path, e.to_string()))?
    };

    let samples = rows
        .into_iter()
        .map(|row| load_row(root, row, &taxonomy))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(samples, taxonomy)
}

fn parse_au_tags(video_id: &str, raw: &str) -> Result<Option<Vec<u32>>> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Ok(None);
    }
    raw.split(';')
        .map(|t| {
            t.trim()
                .parse::<u32>()
                .map_err(|_| video_err(video_id, format!("bad au tag {t:?}")))
        })
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

fn frame_files(video_id: &str, dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir)
        .map_err(|e| video_err(video_id, format!("frame_dir {}: {e}", dir.display())))?;
    let mut numbered = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("png") {
            continue;
        }
        let index = path
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| video_err(video_id, format!("unnumbered frame {}", path.display())))?;
        numbered.push((index, path));
    }
    numbered.sort();
    if numbered.is_empty() {
        return Err(video_err(video_id, format!("no frames in {}", dir.display())));
    }
    let first = numbered[0].0;
    for (k, (index, _)) in numbered.iter().enumerate() {
        if *index != first + k {
            return Err(video_err(
                video_id,
                format!("missing frame file {} in {}", first + k, dir.display()),
            ));
        }
    }
    Ok(numbered.into_iter().map(|(_, p)| p).collect())
}

fn load_row(root: &Path, row: Row, taxonomy: &ClassTaxonomy) -> Result<VideoSample> {
    let id = row.video_id.as_str();
    let label = taxonomy
        .index_of(&row.label)
        .ok_or_else(|| video_err(id, format!("label {:?} not in taxonomy", row.label)))?;
    let dir = root.join(&row.frame_dir);
    let frames = frame_files(id, &dir)?
        .iter()
        .map(|p| Grayscale::load(p).map_err(|e| video_err(id, e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let mut sample = VideoSample::new(id, row.subject_id, row.database_id, label, frames)?;
    sample.au_tags = parse_au_tags(id, &row.au_tags)?;

    let motion_path = dir.join(MOTION_FILE);
    if motion_path.exists() {
        let mut reader = csv::Reader::from_path(&motion_path)?;
        let mut motion = vec![Displacement { dx: 0.0, dy: 0.0 }; sample.frames().len()];
        for r in reader.deserialize::<MotionRow>() {
            let r = r.map_err(|e| video_err(id, format!("motion.csv: {e}")))?;
            let slot = motion
                .get_mut(r.frame_idx)
                .ok_or_else(|| video_err(id, format!("motion frame {} out of range", r.frame_idx)))?;
            *slot = Displacement { dx: r.dx, dy: r.dy };
        }
        sample.motion = Some(motion);
    }
    Ok(sample)
}

/// Writes `ds` as `dir/manifest.csv`, `dir/taxonomy.json` and `dir/frames/<video_id>/NNN.png`.
pub fn write_manifest(ds: &Dataset, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let taxonomy_path = dir.join(TAXONOMY_FILE);
    fs::write(&taxonomy_path, serde_json::to_string_pretty(ds.taxonomy())?)
        .map_err(|e| Error::io(&taxonomy_path, e))?;

    let manifest_path = dir.join(MANIFEST_FILE);
    let mut writer = csv::Writer::from_path(&manifest_path)?;
    for s in ds.samples() {
        let rel = format!("frames/{}", s.video_id);
        let frame_dir = dir.join(&rel);
        fs::create_dir_all(&frame_dir).map_err(|e| Error::io(&frame_dir, e))?;
        let width = s.frames().len().to_string().len().max(3);
        for (i, f) in s.frames().iter().enumerate() {
            f.save_png(&frame_dir.join(format!("{i:0width$}.png")))?;
        }
        if let Some(motion) = &s.motion {
            let mut w = csv::Writer::from_path(frame_dir.join(MOTION_FILE))?;
            for (frame_idx, m) in motion.iter().enumerate() {
                w.serialize(MotionRow {
                    frame_idx,
                    dx: m.dx,
                    dy: m.dy,
                })?;
            }
            w.flush().map_err(|e| Error::io(&frame_dir, e))?;
        }
        let au_tags = s
            .au_tags
            .as_ref()
            .map(|t| t.iter().map(u32::to_string).collect::<Vec<_>>().join(";"))
            .unwrap_or_default();
        writer.serialize(Row {
            video_id: s.video_id.clone(),
            subject_id: s.subject_id.clone(),
            database_id: s.database_id.clone(),
            label: ds.taxonomy().class_name(s.label).unwrap().to_string(),
            frame_dir: rel,
            au_tags,
        })?;
    }
    writer.flush().map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synthesize_dataset, SynthSpec};

    fn two_videos(dir: &Path) -> PathBuf {
        let spec = SynthSpec {
            n_subjects: 1,
            videos_per_subject: 2,
            frames_per_video: 10,
            ..Default::default()
        };
        let mut ds = synthesize_dataset(&spec, 5).unwrap();
        ds.samples[0].au_tags = Some(vec![1, 12]);
        write_manifest(&ds, dir).unwrap()
    }

    #[test]
    fn counts_are_preserved() {
        let tmp = tempfile::tempdir().unwrap();
        let ds = load_manifest(&two_videos(tmp.path())).unwrap();
        assert_eq!(ds.len(), 2);
        assert!(ds.samples().iter().all(|s| s.frames().len() == 10));
        assert_eq!(ds.samples()[0].au_tags, Some(vec![1, 12]));
        assert_eq!(ds.samples()[1].au_tags, None);
    }

    #[test]
    fn missing_frame_names_the_video() {
        let tmp = tempfile::tempdir().unwrap();
        let path = two_videos(tmp.path());
        let victim = tmp.path().join("frames/SYN_s00_v01/004.png");
        fs::remove_file(victim).unwrap();
        let err = load_manifest(&path).unwrap_err().to_string();
        assert!(err.contains("SYN_s00_v01"), "{err}");

        fs::remove_dir_all(tmp.path().join("frames/SYN_s00_v00")).unwrap();
        let err = load_manifest(&path).unwrap_err().to_string();
        assert!(err.contains("SYN_s00_v00"), "{err}");
    }

    #[test]
    fn inconsistent_frame_sizes_name_the_video() {
        let tmp = tempfile::tempdir().unwrap();
        let path = two_videos(tmp.path());
        Grayscale::filled(9, 9, 0.5)
            .save_png(&tmp.path().join("frames/SYN_s00_v01/003.png"))
            .unwrap();
        let err = load_manifest(&path).unwrap_err().to_string();
        assert!(err.contains("SYN_s00_v01"), "{err}");
    }

    #[test]
    fn malformed_row_is_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join(MANIFEST_FILE);
        fs::write(&path, "video_id,subject_id\nv1,s1\n").unwrap();
        assert!(load_manifest(&path).is_err());
        assert!(load_manifest(&tmp.path().join("absent.csv")).is_err());
    }
}
