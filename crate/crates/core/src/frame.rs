//! Single-channel `f64` frames and their PNG encoding.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma};

use crate::error::{ensure, Error, Result};

/// Row-major single-channel image with intensities nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Grayscale {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Grayscale {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        ensure!(
            data.len() == width * height,
            Shape,
            "{}x{} image needs {} values, got {}",
            width,
            height,
            width * height,
            data.len()
        );
        Ok(Grayscale {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Grayscale {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Grayscale {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Bilinear sample at a real-valued position with border replication.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        bilinear(&self.data, self.width, self.height, x, y)
    }

    pub fn clamp01(mut self) -> Self {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
        self
    }

    /// Resamples to `side x side` with bilinear weights on pixel centres.
    ///
    /// A frame already at the target size is returned unchanged.
    pub fn resize(&self, side: usize) -> Result<Self> {
        ensure!(side >= 2, InvalidInput, "resize side must be >= 2, got {side}");
        if self.width == side && self.height == side {
            return Ok(self.clone());
        }
        let sx = self.width as f64 / side as f64;
        let sy = self.height as f64 / side as f64;
        let out = Grayscale::from_fn(side, side, |x, y| {
            let fx = (x as f64 + 0.5) * sx - 0.5;
            let fy = (y as f64 + 0.5) * sy - 0.5;
            self.sample(fx, fy)
        });
        Ok(out.clamp01())
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn max_abs_diff(&self, other: &Grayscale) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn to_luma8(&self) -> ImageBuffer<Luma<u8>, Vec<u8>> {
        let raw = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        ImageBuffer::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer length matches dimensions")
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_luma8().save(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Decodes any supported image, converting colour with ITU-R 601 luma weights.
    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from_dynamic(&img))
    }

    pub fn from_dynamic(img: &DynamicImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let data = match img {
            DynamicImage::ImageLuma8(buf) => buf.pixels().map(|p| p.0[0] as f64 / 255.0).collect(),
            DynamicImage::ImageLuma16(buf) => {
                buf.pixels().map(|p| p.0[0] as f64 / 65535.0).collect()
            }
            other => other
                .to_rgb32f()
                .pixels()
                .map(|p| {
                    let [r, g, b] = p.0;
                    (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64).clamp(0.0, 1.0)
                })
                .collect(),
        };
        Grayscale {
            width: w,
            height: h,
            data,
        }
    }
}

/// Bilinear interpolation on a row-major plane, replicating the border.
pub fn bilinear(data: &[f64], width: usize, height: usize, x: f64, y: f64) -> f64 {
    let x = x.clamp(0.0, (width - 1) as f64);
    let y = y.clamp(0.0, (height - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let ax = x - x0 as f64;
    let ay = y - y0 as f64;
    let top = data[y0 * width + x0] * (1.0 - ax) + data[y0 * width + x1] * ax;
    let bottom = data[y1 * width + x0] * (1.0 - ax) + data[y1 * width + x1] * ax;
    top * (1.0 - ay) + bottom * ay
}
