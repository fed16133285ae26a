use serde::{Deserialize, Serialize};

use crate::dataset::VideoSample;
use crate::error::{ensure, Error, Result};
use crate::flow::{assemble_flow_image, estimate_flow, FlowField, FlowImage, TvL1Config};
use crate::frame::Grayscale;
use crate::strain::{compute_strain, strain_magnitude, StrainImage};
use crate::tim::{interpolate, interpolate_planes, FrameSequence, TimMode};

/// One step of the enriched input: flow image, strain image and grayscale frame.
#[derive(Clone, Debug, PartialEq)]
pub struct EnrichedFrame {
    pub flow: FlowImage,
    pub strain: StrainImage,
    pub gray: Grayscale,
}

impl EnrichedFrame {
    pub fn from_flow(flow: &FlowField, gray: Grayscale) -> Result<Self> {
        ensure!(
            (flow.width, flow.height) == gray.dims(),
            Shape,
            "flow {}x{} vs frame {:?}",
            flow.width,
            flow.height,
            gray.dims()
        );
        Ok(EnrichedFrame {
            flow: assemble_flow_image(flow),
            strain: strain_magnitude(&compute_strain(flow)?),
            gray,
        })
    }

    pub fn side(&self) -> usize {
        self.gray.width()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub side: usize,
    pub tim_length: usize,
    pub tim_mode: TimMode,
    /// Interpolate frames first and compute motion on the interpolated frames;
    /// otherwise motion is computed on the raw frames and its planes are interpolated.
    pub tim_before_flow: bool,
    pub flow: TvL1Config,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            side: 32,
            tim_length: 10,
            tim_mode: TimMode::Linear,
            tim_before_flow: true,
            flow: TvL1Config::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.tim_length >= 2, InvalidInput, "tim_length must be at least 2");
        ensure!(self.side >= 2, InvalidInput, "side must be at least 2");
        self.flow.validate()
    }

    /// Number of enriched steps per video.
    pub fn enriched_steps(&self) -> usize {
        self.tim_length - 1
    }
}

/// A video after resizing, interpolation and (optionally) motion extraction.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedSample {
    pub video_id: String,
    pub subject_id: String,
    pub label: usize,
    pub tim_frames: Vec<Grayscale>,
    /// Empty when motion extraction was skipped.
    pub enriched: Vec<EnrichedFrame>,
}

fn tag(video_id: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::Video { .. } => e,
        other => Error::Video {
            video_id: video_id.to_string(),
            message: other.to_string(),
        },
    }
}

fn tim_frames(sample: &VideoSample, cfg: &PipelineConfig) -> Result<Vec<Grayscale>> {
    let resized = sample.resized(cfg.side)?;
    let seq = FrameSequence::new(resized.frames().to_vec())?;
    Ok(interpolate(&seq, cfg.tim_length, cfg.tim_mode)?.into_frames())
}

/// Enriched sequence using `flow_fn` as the flow estimator.
pub fn build_enriched_sequence_with<F>(
    sample: &VideoSample,
    cfg: &PipelineConfig,
    flow_fn: &mut F,
) -> Result<Vec<EnrichedFrame>>
where
    F: FnMut(&Grayscale, &Grayscale) -> Result<FlowField>,
{
    let frames = tim_frames(sample, cfg).map_err(tag(&sample.video_id))?;
    enrich(sample, cfg, &frames, flow_fn).map_err(tag(&sample.video_id))
}

fn enrich<F>(sample: &VideoSample, cfg: &PipelineConfig, tim: &[Grayscale], flow_fn: &mut F) -> Result<Vec<EnrichedFrame>>
where
    F: FnMut(&Grayscale, &Grayscale) -> Result<FlowField>,
{
    let flows: Vec<FlowField> = if cfg.tim_before_flow {
        tim.windows(2)
            .map(|p| flow_fn(&p[0], &p[1]))
            .collect::<Result<_>>()?
    } else {
        let raw = sample.resized(cfg.side)?;
        ensure!(
            raw.frames().len() >= 2,
            InvalidInput,
            "motion needs at least 2 frames, got {}",
            raw.frames().len()
        );
        let mut fields: Vec<FlowField> = raw
            .frames()
            .windows(2)
            .map(|p| flow_fn(&p[0], &p[1]))
            .collect::<Result<_>>()?;
        if fields.len() == 1 {
            fields.push(fields[0].clone());
        }
        let n = cfg.enriched_steps();
        let resample = |plane: fn(&FlowField) -> &[f64]| -> Result<Vec<Vec<f64>>> {
            let planes: Vec<&[f64]> = fields.iter().map(plane).collect();
            if n == 1 {
                // a single step carries the mean motion
                let len = planes[0].len();
                let mut mean = vec![0.0; len];
                for p in &planes {
                    mean.iter_mut().zip(p.iter()).for_each(|(a, v)| *a += v / planes.len() as f64);
                }
                return Ok(vec![mean]);
            }
            interpolate_planes(&planes, n, cfg.tim_mode)
        };
        let ps = resample(|f| &f.p)?;
        let qs = resample(|f| &f.q)?;
        let (w, h) = (fields[0].width, fields[0].height);
        ps.into_iter()
            .zip(qs)
            .map(|(p, q)| FlowField { width: w, height: h, p, q })
            .collect()
    };
    flows
        .iter()
        .zip(tim)
        .map(|(f, g)| EnrichedFrame::from_flow(f, g.clone()))
        .collect()
}

/// Resize, interpolate to the configured length and attach flow / strain per successive pair.
pub fn build_enriched_sequence(sample: &VideoSample, cfg: &PipelineConfig) -> Result<Vec<EnrichedFrame>> {
    build_enriched_sequence_with(sample, cfg, &mut |a: &Grayscale, b: &Grayscale| estimate_flow(a, b, &cfg.flow))
}

/// Prepares one video; motion is extracted only when `with_motion` is set.
pub fn prepare_sample_with<F>(
    sample: &VideoSample,
    cfg: &PipelineConfig,
    with_motion: bool,
    flow_fn: &mut F,
) -> Result<PreparedSample>
where
    F: FnMut(&Grayscale, &Grayscale) -> Result<FlowField>,
{
    let frames = tim_frames(sample, cfg).map_err(tag(&sample.video_id))?;
    let enriched = if with_motion {
        enrich(sample, cfg, &frames, flow_fn).map_err(tag(&sample.video_id))?
    } else {
        Vec::new()
    };
    Ok(PreparedSample {
        video_id: sample.video_id.clone(),
        subject_id: sample.subject_id.clone(),
        label: sample.label,
        tim_frames: frames,
        enriched,
    })
}

pub fn prepare_sample(sample: &VideoSample, cfg: &PipelineConfig, with_motion: bool) -> Result<PreparedSample> {
    prepare_sample_with(sample, cfg, with_motion, &mut |a: &Grayscale, b: &Grayscale| {
        estimate_flow(a, b, &cfg.flow)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{drift_sequence, synthesize_dataset, SynthSpec};

    fn video(frames: Vec<Grayscale>) -> VideoSample {
        VideoSample::new("v", "s", "D", 0, frames).unwrap()
    }

    #[test]
    fn ten_tim_frames_give_nine_steps() {
        let ds = synthesize_dataset(&SynthSpec { frames_per_video: 7, ..Default::default() }, 0).unwrap();
        let ef = build_enriched_sequence(&ds.samples()[0], &PipelineConfig::default()).unwrap();
        assert_eq!(ef.len(), 9);
        assert!(ef.iter().all(|e| e.side() == 32 && e.strain.s.iter().all(|&s| s >= 0.0)));
    }

    #[test]
    fn static_video_has_no_motion() {
        let frame = drift_sequence(32, 1, (0.0, 0.0), 4).remove(0);
        let ef = build_enriched_sequence(&video(vec![frame.clone(); 5]), &PipelineConfig::default()).unwrap();
        for e in &ef {
            assert!(e.flow.p.iter().chain(&e.flow.q).all(|v| v.abs() < 1e-4));
            assert!(e.strain.s.iter().all(|v| v.abs() < 1e-4));
            assert!(e.gray.max_abs_diff(&frame) < 1e-12);
        }
    }

    #[test]
    fn drift_video_flow_matches_generator() {
        // Ten source frames, so interpolation keeps the per-frame shift.
        let frames = drift_sequence(32, 10, (1.0, 0.0), 8);
        let ef = build_enriched_sequence(&video(frames), &PipelineConfig::default()).unwrap();
        for e in &ef {
            let mut inner: Vec<f64> = (6..26)
                .flat_map(|y| (6..26).map(move |x| y * 32 + x))
                .map(|i| e.flow.p[i])
                .collect();
            inner.sort_by(f64::total_cmp);
            let med = inner[inner.len() / 2];
            assert!((med - 1.0).abs() < 0.25, "median p {med}");
        }
    }

    #[test]
    fn flow_after_raw_frames_also_gives_nine_steps() {
        let cfg = PipelineConfig {
            tim_before_flow: false,
            ..Default::default()
        };
        let frames = drift_sequence(32, 4, (1.0, 0.0), 2);
        let ef = build_enriched_sequence(&video(frames), &cfg).unwrap();
        assert_eq!(ef.len(), 9);
    }

    #[test]
    fn errors_name_the_video() {
        let v = VideoSample::new("bad_clip", "s", "D", 0, vec![Grayscale::filled(8, 8, 0.5)]).unwrap();
        let err = build_enriched_sequence(&v, &PipelineConfig::default()).unwrap_err();
        assert!(err.to_string().contains("bad_clip"), "{err}");
    }

    #[test]
    fn prepare_without_motion_skips_flow() {
        let frames = drift_sequence(20, 6, (1.0, 0.0), 2);
        let cfg = PipelineConfig { side: 12, ..Default::default() };
        let p = prepare_sample(&video(frames), &cfg, false).unwrap();
        assert_eq!(p.tim_frames.len(), 10);
        assert!(p.enriched.is_empty());
    }
}
