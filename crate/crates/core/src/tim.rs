//! Temporal interpolation of frame sequences to a fixed length.
//!
//! `Linear` blends the two source frames bracketing each output position.
//! `Sine` fits the mean-centred frames to the low-frequency sine basis of the
//! path graph over the source frames and resamples that curve uniformly.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::frame::Grayscale;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimMode {
    #[default]
    Linear,
    Sine,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    frames: Vec<Grayscale>,
}

impl FrameSequence {
    pub fn new(frames: Vec<Grayscale>) -> Result<Self> {
        ensure!(!frames.is_empty(), InvalidInput, "frame sequence is empty");
        let dims = frames[0].dims();
        ensure!(
            frames.iter().all(|f| f.dims() == dims),
            Shape,
            "frames in a sequence must share dimensions"
        );
        Ok(FrameSequence { frames })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[Grayscale] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<Grayscale> {
        self.frames
    }
}

/// Resamples `seq` to exactly `n` frames, clamping intensities to `[0, 1]`.
pub fn interpolate(seq: &FrameSequence, n: usize, mode: TimMode) -> Result<FrameSequence> {
    let (w, h) = seq.frames[0].dims();
    let planes: Vec<&[f64]> = seq.frames.iter().map(|f| f.data()).collect();
    let frames = interpolate_planes(&planes, n, mode)?
        .into_iter()
        .map(|p| Grayscale::new(w, h, p).map(Grayscale::clamp01))
        .collect::<Result<Vec<_>>>()?;
    FrameSequence::new(frames)
}

/// Unclamped interpolation of equally sized planes, for feature maps that are not intensities.
pub fn interpolate_planes(planes: &[&[f64]], n: usize, mode: TimMode) -> Result<Vec<Vec<f64>>> {
    ensure!(
        planes.len() >= 2,
        InvalidInput,
        "interpolation needs >= 2 source frames, got {}",
        planes.len()
    );
    ensure!(n >= 2, InvalidInput, "interpolation needs n >= 2, got {n}");
    let len = planes[0].len();
    if planes.iter().any(|p| p.len() != len) {
        return Err(Error::Shape("planes differ in size".into()));
    }
    Ok(match mode {
        TimMode::Linear => linear(planes, n),
        TimMode::Sine => sine(planes, n),
    })
}

fn linear(planes: &[&[f64]], n: usize) -> Vec<Vec<f64>> {
    let last = planes.len() - 1;
    (0..n)
        .map(|k| {
            let num = k * last;
            let (i0, rem) = (num / (n - 1), num % (n - 1));
            if rem == 0 {
                return planes[i0].to_vec();
            }
            let f = rem as f64 / (n - 1) as f64;
            planes[i0]
                .iter()
                .zip(planes[i0 + 1])
                .map(|(a, b)| a * (1.0 - f) + b * f)
                .collect()
        })
        .collect()
}

/// Path-graph eigenvector `k` of an `m`-node graph at normalised position `t` in `[1/m, 1]`.
fn basis(k: usize, t: f64, m: usize) -> f64 {
    (PI * k as f64 * t + PI * (m - k) as f64 / (2.0 * m as f64)).sin()
}

fn sine(planes: &[&[f64]], n: usize) -> Vec<Vec<f64>> {
    let m = planes.len();
    let len = planes[0].len();
    let dim = (m - 1).min(n - 1);
    let mut mean = vec![0.0; len];
    for p in planes {
        for (a, v) in mean.iter_mut().zip(p.iter()) {
            *a += v;
        }
    }
    mean.iter_mut().for_each(|a| *a /= m as f64);

    // The sampled basis rows are mutually orthogonal and orthogonal to the
    // constant, so the least-squares coefficients decouple per row.
    let node = |i: usize| (i + 1) as f64 / m as f64;
    let coeffs: Vec<Vec<f64>> = (1..=dim)
        .map(|k| {
            let norm: f64 = (0..m).map(|i| basis(k, node(i), m).powi(2)).sum();
            let mut c = vec![0.0; len];
            for (i, p) in planes.iter().enumerate() {
                let y = basis(k, node(i), m) / norm;
                for ((c, v), mu) in c.iter_mut().zip(p.iter()).zip(&mean) {
                    *c += (v - mu) * y;
                }
            }
            c
        })
        .collect();

    let (t0, t1) = (node(0), 1.0);
    (0..n)
        .map(|j| {
            let t = t0 + (t1 - t0) * j as f64 / (n - 1) as f64;
            let mut out = mean.clone();
            for (k, c) in coeffs.iter().enumerate() {
                let y = basis(k + 1, t, m);
                for (o, cv) in out.iter_mut().zip(c) {
                    *o += cv * y;
                }
            }
            out
        })
        .collect()
}
