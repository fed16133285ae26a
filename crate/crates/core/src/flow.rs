//! Dense optical flow with the duality-based TV-L1 solver.
//!
//! Coarse-to-fine: every pyramid level linearises the brightness constancy
//! residual around the current flow (`n_warps` times), alternates the pointwise
//! thresholding step with the projected dual update of the TV term, and
//! median-filters the flow after each warp.

use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::frame::{bilinear, Grayscale};

/// Per-pixel displacement in pixels per frame (`p = dx/dt`, `q = dy/dt`, `dt = 1`).
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        FlowField {
            width,
            height,
            p: vec![0.0; width * height],
            q: vec![0.0; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> (f64, f64)) -> Self {
        let mut out = FlowField::zeros(width, height);
        for y in 0..height {
            for x in 0..width {
                let (p, q) = f(x, y);
                out.p[y * width + x] = p;
                out.q[y * width + x] = q;
            }
        }
        out
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        FlowField {
            width: self.width,
            height: self.height,
            p: self.p.iter().map(|v| v * alpha).collect(),
            q: self.q.iter().map(|v| v * alpha).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.p.iter().chain(&self.q).fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Rounds every component through `f32`, the precision of the on-disk cache.
    pub fn quantized(mut self) -> Self {
        for v in self.p.iter_mut().chain(self.q.iter_mut()) {
            *v = *v as f32 as f64;
        }
        self
    }

    /// Writes the `.flo2` cache layout: `u32` width, `u32` height, then the
    /// row-major `f32` planes `p` and `q`, all little-endian.
    pub fn to_flo2_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 8 * self.p.len());
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        for v in self.p.iter().chain(&self.q) {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_flo2_bytes(bytes: &[u8]) -> Result<Self> {
        ensure!(bytes.len() >= 8, Shape, "flo2 header truncated");
        let width = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
        let height = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let n = width * height;
        ensure!(
            bytes.len() == 8 + 8 * n,
            Shape,
            "flo2 body is {} bytes, expected {} for {}x{}",
            bytes.len() - 8,
            8 * n,
            width,
            height
        );
        let mut values = bytes[8..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64);
        let p = values.by_ref().take(n).collect();
        let q = values.collect();
        Ok(FlowField {
            width,
            height,
            p,
            q,
        })
    }

    pub fn write_flo2(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_flo2_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read_flo2(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_flo2_bytes(&bytes)
    }
}

/// The three flow planes `(p, q, m)`, left unnormalised.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowImage {
    pub width: usize,
    pub height: usize,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub m: Vec<f64>,
}

impl FlowImage {
    pub fn planes(&self) -> [&[f64]; 3] {
        [&self.p, &self.q, &self.m]
    }
}

pub fn assemble_flow_image(f: &FlowField) -> FlowImage {
    let m = f.p.iter().zip(&f.q).map(|(p, q)| p.hypot(*q)).collect();
    FlowImage {
        width: f.width,
        height: f.height,
        p: f.p.clone(),
        q: f.q.clone(),
        m,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TvL1Config {
    pub lambda: f64,
    pub theta: f64,
    pub tau: f64,
    pub n_warps: usize,
    pub n_iters_per_warp: usize,
    /// `None` picks the deepest pyramid whose coarsest side is still >= 16.
    pub pyramid_levels: Option<usize>,
    pub pyramid_scale: f64,
    pub median_filter: bool,
    /// Intensities are multiplied by this before solving; `lambda` is expressed
    /// for 8-bit intensity units.
    pub intensity_scale: f64,
}

impl Default for TvL1Config {
    fn default() -> Self {
        TvL1Config {
            lambda: 0.15,
            theta: 0.3,
            tau: 0.25,
            n_warps: 5,
            n_iters_per_warp: 25,
            pyramid_levels: None,
            pyramid_scale: 0.5,
            median_filter: true,
            intensity_scale: 255.0,
        }
    }
}

const MIN_SIDE: usize = 16;

impl TvL1Config {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.tau > 0.0 && self.tau <= 0.25,
            InvalidInput,
            "tau must be in (0, 0.25], got {}",
            self.tau
        );
        ensure!(
            self.pyramid_scale > 0.0 && self.pyramid_scale < 1.0,
            InvalidInput,
            "pyramid_scale must be in (0, 1), got {}",
            self.pyramid_scale
        );
        ensure!(
            self.n_warps >= 1 && self.n_iters_per_warp >= 1 && self.pyramid_levels != Some(0),
            InvalidInput,
            "warp, iteration and pyramid counts must be >= 1"
        );
        ensure!(
            self.lambda > 0.0 && self.theta > 0.0 && self.intensity_scale > 0.0,
            InvalidInput,
            "lambda, theta and intensity_scale must be positive"
        );
        Ok(())
    }

    pub fn levels_for(&self, width: usize, height: usize) -> usize {
        if let Some(n) = self.pyramid_levels {
            return n;
        }
        let mut side = width.min(height) as f64;
        let mut levels = 1;
        while (side * self.pyramid_scale).round() >= MIN_SIDE as f64 {
            side = (side * self.pyramid_scale).round();
            levels += 1;
        }
        levels
    }
}

/// Row-major scalar plane used inside the solver.
#[derive(Clone, Debug)]
struct Plane {
    w: usize,
    h: usize,
    v: Vec<f64>,
}

impl Plane {
    fn zeros(w: usize, h: usize) -> Self {
        Plane {
            w,
            h,
            v: vec![0.0; w * h],
        }
    }

    fn at(&self, x: usize, y: usize) -> f64 {
        self.v[y * self.w + x]
    }

    fn sample(&self, x: f64, y: f64) -> f64 {
        bilinear(&self.v, self.w, self.h, x, y)
    }

    /// Central differences, one-sided on the border.
    fn central_gradient(&self) -> (Plane, Plane) {
        let (w, h) = (self.w, self.h);
        let mut gx = Plane::zeros(w, h);
        let mut gy = Plane::zeros(w, h);
        for y in 0..h {
            for x in 0..w {
                let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
                let (yu, yd) = (y.saturating_sub(1), (y + 1).min(h - 1));
                gx.v[y * w + x] = if xr > xl {
                    (self.at(xr, y) - self.at(xl, y)) / (xr - xl) as f64
                } else {
                    0.0
                };
                gy.v[y * w + x] = if yd > yu {
                    (self.at(x, yd) - self.at(x, yu)) / (yd - yu) as f64
                } else {
                    0.0
                };
            }
        }
        (gx, gy)
    }

    fn warp(&self, u1: &Plane, u2: &Plane) -> Plane {
        let mut out = Plane::zeros(self.w, self.h);
        for y in 0..self.h {
            for x in 0..self.w {
                let i = y * self.w + x;
                out.v[i] = self.sample(x as f64 + u1.v[i], y as f64 + u2.v[i]);
            }
        }
        out
    }

    /// Warps a derivative plane: beyond the domain the replicated intensity is
    /// constant, so its derivative there is zero.
    fn warp_derivative(&self, u1: &Plane, u2: &Plane) -> Plane {
        let (xmax, ymax) = ((self.w - 1) as f64, (self.h - 1) as f64);
        let mut out = Plane::zeros(self.w, self.h);
        for y in 0..self.h {
            for x in 0..self.w {
                let i = y * self.w + x;
                let (sx, sy) = (x as f64 + u1.v[i], y as f64 + u2.v[i]);
                if (0.0..=xmax).contains(&sx) && (0.0..=ymax).contains(&sy) {
                    out.v[i] = self.sample(sx, sy);
                }
            }
        }
        out
    }

    fn gaussian_blur(&self, sigma: f64) -> Plane {
        let radius = (3.0 * sigma).ceil().max(1.0) as isize;
        let mut kernel: Vec<f64> = (-radius..=radius)
            .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
            .collect();
        let sum: f64 = kernel.iter().sum();
        kernel.iter_mut().for_each(|k| *k /= sum);
        let (w, h) = (self.w as isize, self.h as isize);
        let clampi = |v: isize, n: isize| v.clamp(0, n - 1) as usize;
        let mut tmp = Plane::zeros(self.w, self.h);
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, kv) in kernel.iter().enumerate() {
                    acc += kv * self.at(clampi(x + k as isize - radius, w), y as usize);
                }
                tmp.v[(y * w + x) as usize] = acc;
            }
        }
        let mut out = Plane::zeros(self.w, self.h);
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, kv) in kernel.iter().enumerate() {
                    acc += kv * tmp.at(x as usize, clampi(y + k as isize - radius, h));
                }
                out.v[(y * w + x) as usize] = acc;
            }
        }
        out
    }

    /// Resamples to `w x h` by mapping pixel centres.
    fn resample(&self, w: usize, h: usize) -> Plane {
        let sx = self.w as f64 / w as f64;
        let sy = self.h as f64 / h as f64;
        let mut out = Plane::zeros(w, h);
        for y in 0..h {
            for x in 0..w {
                out.v[y * w + x] =
                    self.sample((x as f64 + 0.5) * sx - 0.5, (y as f64 + 0.5) * sy - 0.5);
            }
        }
        out
    }

    fn median3x3(&self) -> Plane {
        let (w, h) = (self.w as isize, self.h as isize);
        let mut out = Plane::zeros(self.w, self.h);
        let mut window = [0.0f64; 9];
        for y in 0..h {
            for x in 0..w {
                let mut k = 0;
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let xx = (x + dx).clamp(0, w - 1) as usize;
                        let yy = (y + dy).clamp(0, h - 1) as usize;
                        window[k] = self.at(xx, yy);
                        k += 1;
                    }
                }
                window.sort_by(f64::total_cmp);
                out.v[(y * w + x) as usize] = window[4];
            }
        }
        out
    }

    fn is_constant(&self) -> bool {
        self.v.iter().all(|&v| v == self.v[0])
    }
}

/// Forward differences with zero at the last column / row.
fn forward_gradient(u: &Plane, gx: &mut [f64], gy: &mut [f64]) {
    let (w, h) = (u.w, u.h);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            gx[i] = if x + 1 < w { u.v[i + 1] - u.v[i] } else { 0.0 };
            gy[i] = if y + 1 < h { u.v[i + w] - u.v[i] } else { 0.0 };
        }
    }
}

/// Negative adjoint of [`forward_gradient`].
fn divergence(px: &[f64], py: &[f64], w: usize, h: usize, out: &mut [f64]) {
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let dx = if x == 0 {
                px[i]
            } else if x + 1 == w {
                -px[i - 1]
            } else {
                px[i] - px[i - 1]
            };
            let dy = if y == 0 {
                py[i]
            } else if y + 1 == h {
                -py[i - w]
            } else {
                py[i] - py[i - w]
            };
            out[i] = dx + dy;
        }
    }
}

/// TV-L1 objective `sum |grad p| + |grad q| + lambda * |I1(x + u) - I0(x)|`,
/// in the solver's scaled intensity units.
pub fn tvl1_energy(prev: &Grayscale, next: &Grayscale, flow: &FlowField, cfg: &TvL1Config) -> f64 {
    let to_plane = |g: &Grayscale| Plane {
        w: g.width(),
        h: g.height(),
        v: g.data().iter().map(|v| v * cfg.intensity_scale).collect(),
    };
    energy(
        &to_plane(prev),
        &to_plane(next),
        &Plane {
            w: flow.width,
            h: flow.height,
            v: flow.p.clone(),
        },
        &Plane {
            w: flow.width,
            h: flow.height,
            v: flow.q.clone(),
        },
        cfg.lambda,
    )
}

fn energy(i0: &Plane, i1: &Plane, u1: &Plane, u2: &Plane, lambda: f64) -> f64 {
    let n = i0.v.len();
    let (mut gx, mut gy) = (vec![0.0; n], vec![0.0; n]);
    let mut tv = 0.0;
    for u in [u1, u2] {
        forward_gradient(u, &mut gx, &mut gy);
        tv += gx.iter().zip(&gy).map(|(a, b)| a.hypot(*b)).sum::<f64>();
    }
    let warped = i1.warp(u1, u2);
    let data: f64 = warped.v.iter().zip(&i0.v).map(|(a, b)| (a - b).abs()).sum();
    tv + lambda * data
}

/// Runs the solver at one pyramid level, updating `u1`, `u2` in place.
///
/// Returns the energy of the initial flow followed by the energy after each
/// accepted warp. A warp that would raise the energy is rolled back and ends
/// the level, since re-linearising around the same flow repeats it.
fn solve_level(i0: &Plane, i1: &Plane, u1: &mut Plane, u2: &mut Plane, cfg: &TvL1Config) -> Vec<f64> {
    let (w, h) = (i0.w, i0.h);
    let n = w * h;
    let lt = cfg.lambda * cfg.theta;
    let taut = cfg.tau / cfg.theta;
    let (i1x, i1y) = i1.central_gradient();

    let mut p11 = vec![0.0; n];
    let mut p12 = vec![0.0; n];
    let mut p21 = vec![0.0; n];
    let mut p22 = vec![0.0; n];
    let mut div1 = vec![0.0; n];
    let mut div2 = vec![0.0; n];
    let (mut u1x, mut u1y) = (vec![0.0; n], vec![0.0; n]);
    let (mut u2x, mut u2y) = (vec![0.0; n], vec![0.0; n]);
    let mut energies = Vec::with_capacity(cfg.n_warps + 1);
    energies.push(energy(i0, i1, u1, u2, cfg.lambda));

    for _ in 0..cfg.n_warps {
        let saved = (u1.clone(), u2.clone());
        let i1w = i1.warp(u1, u2);
        let i1wx = i1x.warp_derivative(u1, u2);
        let i1wy = i1y.warp_derivative(u1, u2);
        let grad: Vec<f64> = (0..n)
            .map(|i| i1wx.v[i] * i1wx.v[i] + i1wy.v[i] * i1wy.v[i])
            .collect();
        let rho_c: Vec<f64> = (0..n)
            .map(|i| i1w.v[i] - i1wx.v[i] * u1.v[i] - i1wy.v[i] * u2.v[i] - i0.v[i])
            .collect();

        for _ in 0..cfg.n_iters_per_warp {
            divergence(&p11, &p12, w, h, &mut div1);
            divergence(&p21, &p22, w, h, &mut div2);
            for i in 0..n {
                let (gx, gy) = (i1wx.v[i], i1wy.v[i]);
                let rho = rho_c[i] + gx * u1.v[i] + gy * u2.v[i];
                let (d1, d2) = if rho < -lt * grad[i] {
                    (lt * gx, lt * gy)
                } else if rho > lt * grad[i] {
                    (-lt * gx, -lt * gy)
                } else if grad[i] > 1e-10 {
                    let f = -rho / grad[i];
                    (f * gx, f * gy)
                } else {
                    (0.0, 0.0)
                };
                u1.v[i] += d1 + cfg.theta * div1[i];
                u2.v[i] += d2 + cfg.theta * div2[i];
            }
            forward_gradient(u1, &mut u1x, &mut u1y);
            forward_gradient(u2, &mut u2x, &mut u2y);
            for i in 0..n {
                let g1 = 1.0 + taut * u1x[i].hypot(u1y[i]);
                let g2 = 1.0 + taut * u2x[i].hypot(u2y[i]);
                p11[i] = (p11[i] + taut * u1x[i]) / g1;
                p12[i] = (p12[i] + taut * u1y[i]) / g1;
                p21[i] = (p21[i] + taut * u2x[i]) / g2;
                p22[i] = (p22[i] + taut * u2y[i]) / g2;
            }
        }
        if cfg.median_filter {
            *u1 = u1.median3x3();
            *u2 = u2.median3x3();
        }
        let e = energy(i0, i1, u1, u2, cfg.lambda);
        if e > *energies.last().unwrap() {
            (*u1, *u2) = saved;
            break;
        }
        energies.push(e);
    }
    energies
}

fn check_pair(prev: &Grayscale, next: &Grayscale) -> Result<()> {
    ensure!(
        prev.dims() == next.dims(),
        Shape,
        "frame sizes differ: {:?} vs {:?}",
        prev.dims(),
        next.dims()
    );
    ensure!(
        prev.width().min(prev.height()) >= MIN_SIDE,
        InvalidInput,
        "flow needs frames with min side >= {MIN_SIDE}, got {:?}",
        prev.dims()
    );
    Ok(())
}

/// Estimates the flow from `prev` to `next`, also returning the finest-level
/// energy trace (initial flow, then each accepted warp).
pub fn estimate_flow_traced(
    prev: &Grayscale,
    next: &Grayscale,
    cfg: &TvL1Config,
) -> Result<(FlowField, Vec<f64>)> {
    check_pair(prev, next)?;
    cfg.validate()?;
    let (w, h) = prev.dims();
    let scale = |g: &Grayscale| Plane {
        w,
        h,
        v: g.data().iter().map(|v| v * cfg.intensity_scale).collect(),
    };
    let (i0, i1) = (scale(prev), scale(next));
    if i0.is_constant() && i1.is_constant() {
        return Ok((FlowField::zeros(w, h), vec![0.0]));
    }

    let levels = cfg.levels_for(w, h);
    let sigma = 0.6 * (1.0 / (cfg.pyramid_scale * cfg.pyramid_scale) - 1.0).sqrt();
    let mut pyramid = vec![(i0, i1)];
    for _ in 1..levels {
        let (a, b) = pyramid.last().unwrap();
        let nw = ((a.w as f64 * cfg.pyramid_scale).round() as usize).max(1);
        let nh = ((a.h as f64 * cfg.pyramid_scale).round() as usize).max(1);
        pyramid.push((
            a.gaussian_blur(sigma).resample(nw, nh),
            b.gaussian_blur(sigma).resample(nw, nh),
        ));
    }

    let (cw, ch) = (pyramid[levels - 1].0.w, pyramid[levels - 1].0.h);
    let mut u1 = Plane::zeros(cw, ch);
    let mut u2 = Plane::zeros(cw, ch);
    let mut energies = Vec::new();
    for level in (0..levels).rev() {
        let (a, b) = &pyramid[level];
        if u1.w != a.w || u1.h != a.h {
            let (fx, fy) = (a.w as f64 / u1.w as f64, a.h as f64 / u1.h as f64);
            u1 = u1.resample(a.w, a.h);
            u2 = u2.resample(a.w, a.h);
            u1.v.iter_mut().for_each(|v| *v *= fx);
            u2.v.iter_mut().for_each(|v| *v *= fy);
        }
        energies = solve_level(a, b, &mut u1, &mut u2, cfg);
    }
    let flow = FlowField {
        width: w,
        height: h,
        p: u1.v,
        q: u2.v,
    };
    ensure!(
        flow.p.iter().chain(&flow.q).all(|v| v.is_finite()),
        InvalidInput,
        "flow solver produced non-finite values"
    );
    Ok((flow, energies))
}

pub fn estimate_flow(prev: &Grayscale, next: &Grayscale, cfg: &TvL1Config) -> Result<FlowField> {
    estimate_flow_traced(prev, next, cfg).map(|(f, _)| f)
}

/// Flow between every pair of successive frames.
pub fn flow_sequence(frames: &[Grayscale], cfg: &TvL1Config) -> Result<Vec<FlowField>> {
    ensure!(
        frames.len() >= 2,
        InvalidInput,
        "flow sequence needs >= 2 frames, got {}",
        frames.len()
    );
    frames
        .windows(2)
        .map(|pair| estimate_flow(&pair[0], &pair[1], cfg))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::drift_sequence;

    fn median(mut v: Vec<f64>) -> f64 {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    }

    fn interior(f: &FlowField, border: usize) -> (Vec<f64>, Vec<f64>) {
        let mut p = Vec::new();
        let mut q = Vec::new();
        for y in border..f.height - border {
            for x in border..f.width - border {
                p.push(f.p[y * f.width + x]);
                q.push(f.q[y * f.width + x]);
            }
        }
        (p, q)
    }

    #[test]
    fn identical_frames_give_zero_flow() {
        let frames = drift_sequence(32, 1, (0.0, 0.0), 4);
        let f = estimate_flow(&frames[0], &frames[0], &TvL1Config::default()).unwrap();
        assert!(f.max_abs() < 1e-4);
    }

    #[test]
    fn two_pixel_shift_is_recovered() {
        let frames = drift_sequence(48, 2, (2.0, 0.0), 9);
        let f = estimate_flow(&frames[0], &frames[1], &TvL1Config::default()).unwrap();
        let (p, q) = interior(&f, 4);
        let mp = median(p);
        let mq = median(q.iter().map(|v| v.abs()).collect());
        assert!((1.8..=2.2).contains(&mp), "median p {mp}");
        assert!(mq < 0.2, "median |q| {mq}");
    }

    #[test]
    fn energy_does_not_increase_over_warps() {
        let frames = drift_sequence(48, 2, (2.0, 0.0), 9);
        let (_, e) = estimate_flow_traced(&frames[0], &frames[1], &TvL1Config::default()).unwrap();
        for w in e.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-9), "{e:?}");
        }
    }

    #[test]
    fn constant_frames_are_degenerate() {
        let a = Grayscale::filled(20, 20, 0.3);
        let b = Grayscale::filled(20, 20, 0.7);
        assert_eq!(estimate_flow(&a, &b, &TvL1Config::default()).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn mismatched_or_tiny_frames_error() {
        let cfg = TvL1Config::default();
        let a = Grayscale::filled(20, 20, 0.3);
        assert!(estimate_flow(&a, &Grayscale::filled(21, 20, 0.3), &cfg).is_err());
        let t = Grayscale::filled(8, 8, 0.3);
        assert!(estimate_flow(&t, &t, &cfg).is_err());
    }

    #[test]
    fn config_validation() {
        let bad = [
            TvL1Config {
                tau: 0.3,
                ..Default::default()
            },
            TvL1Config {
                pyramid_scale: 1.0,
                ..Default::default()
            },
            TvL1Config {
                n_warps: 0,
                ..Default::default()
            },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err());
        }
        let cfg = TvL1Config::default();
        assert_eq!(cfg.levels_for(32, 32), 2);
        assert_eq!(cfg.levels_for(224, 224), 4);
        assert_eq!(cfg.levels_for(16, 40), 1);
    }

    #[test]
    fn flow_image_magnitude() {
        let f = FlowField::from_fn(4, 4, |x, _| if x == 0 { (3.0, 4.0) } else { (0.0, 0.0) });
        let img = assemble_flow_image(&f);
        assert_eq!(img.m[0], 5.0);
        assert_eq!(img.m[1], 0.0);
        let unit = FlowField::from_fn(5, 5, |_, _| (0.5f64.sqrt(), 0.5f64.sqrt()));
        let img = assemble_flow_image(&unit);
        assert!(img.m.iter().all(|m| (m - 1.0).abs() < 1e-6));
        let zero = assemble_flow_image(&FlowField::zeros(3, 3));
        assert!(zero.planes().iter().all(|p| p.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn sequence_counts_and_errors() {
        let cfg = TvL1Config::default();
        let frames = vec![Grayscale::filled(16, 16, 0.5); 10];
        let fields = flow_sequence(&frames, &cfg).unwrap();
        assert_eq!(fields.len(), 9);
        assert!(fields.iter().all(|f| f.max_abs() == 0.0));
        assert!(flow_sequence(&frames[..1], &cfg).is_err());
    }

    #[test]
    fn flo2_layout() {
        let f = FlowField::from_fn(3, 2, |x, y| (x as f64 * 0.5, -(y as f64)));
        let bytes = f.to_flo2_bytes();
        assert_eq!(bytes.len(), 8 + 2 * 6 * 4);
        assert_eq!(&bytes[0..4], &3u32.to_le_bytes());
        assert_eq!(&bytes[4..8], &2u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &0.0f32.to_le_bytes());
        assert_eq!(&bytes[12..16], &0.5f32.to_le_bytes());
        assert_eq!(FlowField::from_flo2_bytes(&bytes).unwrap(), f.clone().quantized());
        assert!(FlowField::from_flo2_bytes(&bytes[..20]).is_err());
    }
}
