//! Class activation heatmaps from an encoder's last convolution.
//!
//! For recurrent models the explained score is the target logit at the final
//! step, back-propagated through the LSTM into the chosen frame's encoder.

use std::fmt::Write as _;
use std::path::Path;

use image::{ImageBuffer, Rgb};
use serde::{Deserialize, Serialize};

use crate::elrcn::{ElrcnModel, SequenceInput, Variant};
use crate::error::{ensure, Error, Result};
use crate::frame::{bilinear, Grayscale};
use crate::nn::Tensor;

/// Which encoder stream to explain. Single-encoder variants only accept `Flow`
/// (the sole stream); the TE variant maps these to its three encoders.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderSelect {
    #[default]
    Flow,
    Strain,
    Gray,
}

impl EncoderSelect {
    fn index(self, variant: Variant) -> Result<usize> {
        match (variant, self) {
            (Variant::Te, s) => Ok(s as usize),
            (_, EncoderSelect::Flow) => Ok(0),
            (v, s) => Err(Error::InvalidInput(format!(
                "{} model has a single encoder; cannot select {s:?}",
                v.name()
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GradCamTarget {
    /// Time step whose encoder is explained.
    pub step: usize,
    pub encoder: EncoderSelect,
    pub class: usize,
}

impl GradCamTarget {
    pub const DEFAULT_STEP: usize = 5;

    pub fn new(class: usize) -> Self {
        GradCamTarget {
            step: Self::DEFAULT_STEP,
            encoder: EncoderSelect::default(),
            class,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    /// Rectified map at last-convolution resolution, row-major `rows x cols`.
    pub values: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
    /// `side x side` upsampled map scaled to a maximum of 1 (all zero if `values` is).
    pub upsampled: Vec<f64>,
    pub side: usize,
}

impl Heatmap {
    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Fraction of upsampled mass inside the half-open pixel box `[x0, x1) x [y0, y1)`.
    pub fn mass_fraction(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> f64 {
        let total: f64 = self.upsampled.iter().sum();
        if total == 0.0 {
            return 0.0;
        }
        let mut inside = 0.0;
        for y in y0..y1.min(self.side) {
            for x in x0..x1.min(self.side) {
                inside += self.upsampled[y * self.side + x];
            }
        }
        inside / total
    }

    /// Raw map as CSV, one row per line.
    pub fn values_csv(&self) -> String {
        let mut out = String::new();
        for row in self.values.chunks(self.cols) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            let _ = writeln!(out, "{}", line.join(","));
        }
        out
    }
}

/// Combines activations `A` and gradients `dA` (both `[K, H, W]`) into a heatmap.
pub fn cam_from_maps(activations: &Tensor, gradients: &Tensor, side: usize) -> Result<Heatmap> {
    ensure!(
        activations.shape() == gradients.shape() && activations.shape().len() == 3,
        Shape,
        "activation {:?} and gradient {:?} must be matching [K, H, W]",
        activations.shape(),
        gradients.shape()
    );
    ensure!(side >= 1, InvalidInput, "heatmap side must be positive");
    let (k, h, w) = (activations.shape()[0], activations.shape()[1], activations.shape()[2]);
    let mut values = vec![0.0; h * w];
    for c in 0..k {
        let a = activations.channel(c);
        let alpha = gradients.channel(c).iter().sum::<f64>() / (h * w) as f64;
        for (v, x) in values.iter_mut().zip(a) {
            *v += alpha * x;
        }
    }
    for v in &mut values {
        *v = v.max(0.0);
    }
    let (sx, sy) = (w as f64 / side as f64, h as f64 / side as f64);
    let mut upsampled = Vec::with_capacity(side * side);
    for y in 0..side {
        for x in 0..side {
            let fx = (x as f64 + 0.5) * sx - 0.5;
            let fy = (y as f64 + 0.5) * sy - 0.5;
            upsampled.push(bilinear(&values, w, h, fx, fy).max(0.0));
        }
    }
    let peak = upsampled.iter().copied().fold(0.0, f64::max);
    if peak > 0.0 {
        for v in &mut upsampled {
            *v /= peak;
        }
    }
    Ok(Heatmap {
        values,
        rows: h,
        cols: w,
        upsampled,
        side,
    })
}

pub fn grad_cam(model: &ElrcnModel, input: &SequenceInput, target: GradCamTarget) -> Result<Heatmap> {
    let encoder = target.encoder.index(model.variant())?;
    let (a, da) = model.last_conv_maps(input, target.step, encoder, target.class)?;
    cam_from_maps(&a, &da, model.config().pipeline.side)
}

/// Piecewise-linear blue, cyan, green, yellow, red spectrum over `[0, 1]`.
pub fn colormap(v: f64) -> [f64; 3] {
    const STOPS: [[f64; 3]; 5] = [
        [0.0, 0.0, 1.0],
        [0.0, 1.0, 1.0],
        [0.0, 1.0, 0.0],
        [1.0, 1.0, 0.0],
        [1.0, 0.0, 0.0],
    ];
    let t = v.clamp(0.0, 1.0) * 4.0;
    let i = (t.floor() as usize).min(3);
    let f = t - i as f64;
    let (a, b) = (STOPS[i], STOPS[i + 1]);
    [a[0] + (b[0] - a[0]) * f, a[1] + (b[1] - a[1]) * f, a[2] + (b[2] - a[2]) * f]
}

pub const OVERLAY_ALPHA: f64 = 0.5;

pub fn overlay_image(heatmap: &Heatmap, frame: &Grayscale) -> Result<ImageBuffer<Rgb<u8>, Vec<u8>>> {
    ensure!(
        frame.dims() == (heatmap.side, heatmap.side),
        Shape,
        "frame {:?} does not match {}x{} heatmap",
        frame.dims(),
        heatmap.side,
        heatmap.side
    );
    let side = heatmap.side as u32;
    Ok(ImageBuffer::from_fn(side, side, |x, y| {
        let i = y as usize * heatmap.side + x as usize;
        let g = frame.data()[i].clamp(0.0, 1.0);
        let c = colormap(heatmap.upsampled[i]);
        let px = c.map(|v| ((OVERLAY_ALPHA * v + (1.0 - OVERLAY_ALPHA) * g) * 255.0).round() as u8);
        Rgb(px)
    }))
}

pub fn render_overlay(heatmap: &Heatmap, frame: &Grayscale, path: &Path) -> Result<()> {
    let img = overlay_image(heatmap, frame)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    img.save(path).map_err(|source| Error::Image {
        path: path.into(),
        source,
    })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plane(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> Tensor {
        let data = (0..h * w).map(|i| f(i / w, i % w)).collect();
        Tensor::from_vec(&[1, h, w], data).unwrap()
    }

    #[test]
    fn uniform_gradient_gives_rectified_activation() {
        let a = plane(4, 4, |y, x| y as f64 - x as f64 * 0.5);
        let g = plane(4, 4, |_, _| 0.3);
        let hm = cam_from_maps(&a, &g, 8).unwrap();
        for (v, x) in hm.values.iter().zip(a.data()) {
            assert!((v - 0.3 * x.max(0.0)).abs() < 1e-15);
        }
        let peak = hm.upsampled.iter().copied().fold(0.0, f64::max);
        assert_eq!(peak, 1.0);
        assert!(hm.upsampled.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn negative_weighting_gives_zero_map() {
        let a = plane(3, 3, |y, x| 1.0 + (y * 3 + x) as f64);
        let g = plane(3, 3, |_, _| -2.0);
        let hm = cam_from_maps(&a, &g, 6).unwrap();
        assert!(hm.values.iter().all(|&v| v == 0.0));
        assert!(hm.upsampled.iter().all(|&v| v == 0.0));
        assert_eq!(hm.mass_fraction(0, 0, 3, 3), 0.0);
    }

    #[test]
    fn channel_weights_are_gradient_means() {
        let mut a = Tensor::zeros(&[2, 2, 2]);
        a.data_mut().copy_from_slice(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let mut g = Tensor::zeros(&[2, 2, 2]);
        g.data_mut().copy_from_slice(&[4.0, 0.0, 0.0, 0.0, -1.0, -1.0, -1.0, -1.0]);
        let hm = cam_from_maps(&a, &g, 2).unwrap();
        assert_eq!(hm.values, vec![1.0, 0.0, 0.0, 0.0]);
        assert!(cam_from_maps(&a, &plane(2, 2, |_, _| 1.0), 2).is_err());
    }

    #[test]
    fn colormap_stops() {
        assert_eq!(colormap(0.0), [0.0, 0.0, 1.0]);
        assert_eq!(colormap(0.25), [0.0, 1.0, 1.0]);
        assert_eq!(colormap(0.5), [0.0, 1.0, 0.0]);
        assert_eq!(colormap(0.75), [1.0, 1.0, 0.0]);
        assert_eq!(colormap(1.0), [1.0, 0.0, 0.0]);
        assert_eq!(colormap(0.125), [0.0, 0.5, 1.0]);
    }

    fn single_peak(side: usize, at: usize) -> Heatmap {
        let mut upsampled = vec![0.0; side * side];
        upsampled[at] = 1.0;
        Heatmap {
            values: upsampled.clone(),
            rows: side,
            cols: side,
            upsampled,
            side,
        }
    }

    #[test]
    fn overlay_blends_colormap_over_frame() {
        let frame = Grayscale::from_fn(4, 4, |x, y| (x + y) as f64 / 6.0);
        let hm = single_peak(4, 5);
        let img = overlay_image(&hm, &frame).unwrap();
        assert_eq!(img.get_pixel(1, 1).0, [(0.5 * 255.0 + 0.5 * 2.0 / 6.0 * 255.0_f64).round() as u8, (0.5 * 2.0 / 6.0 * 255.0_f64).round() as u8, (0.5 * 2.0 / 6.0 * 255.0_f64).round() as u8]);
        let zero = img.get_pixel(0, 0).0;
        assert_eq!(zero, [0, 0, 128]);
        let red = img.get_pixel(1, 1).0;
        assert!(img.pixels().all(|p| p.0[0] <= red[0]));
        assert!(overlay_image(&hm, &Grayscale::filled(5, 5, 0.0)).is_err());
    }

    #[test]
    fn overlay_files_are_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let frame = Grayscale::from_fn(8, 8, |x, y| ((x * 3 + y) % 5) as f64 / 4.0);
        let a = plane(2, 2, |y, x| (y + x) as f64);
        let hm = cam_from_maps(&a, &plane(2, 2, |_, _| 1.0), 8).unwrap();
        let (p1, p2) = (dir.path().join("a/cam.png"), dir.path().join("b/cam.png"));
        render_overlay(&hm, &frame, &p1).unwrap();
        render_overlay(&hm, &frame, &p2).unwrap();
        assert_eq!(std::fs::read(p1).unwrap(), std::fs::read(p2).unwrap());
    }

    #[test]
    fn csv_dump_has_one_line_per_row() {
        let hm = cam_from_maps(&plane(2, 3, |y, x| (y * 3 + x) as f64), &plane(2, 3, |_, _| 1.0), 4).unwrap();
        let csv = hm.values_csv();
        assert_eq!(csv.lines().count(), 2);
        assert_eq!(csv.lines().next().unwrap().split(',').count(), 3);
    }
}
