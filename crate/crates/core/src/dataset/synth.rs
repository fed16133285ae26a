//! Synthetic labelled micro-motion videos.
//!
//! Every subject gets a static face-like background carrying one textured
//! patch per class region. In a video of class `c` only the patch of region
//! `c` moves, so the motion locus alone identifies the class.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ClassTaxonomy, Dataset, Displacement, VideoSample};
use crate::error::{ensure, Result};
use crate::frame::Grayscale;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionPattern {
    /// The patch jumps back and forth, moving `amplitude` px every frame.
    #[default]
    Oscillate,
    /// The patch translates `amplitude` px per frame in a constant direction.
    Drift,
}

/// Rectangular face region whose patch moves along `direction` (unit vector).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionRegion {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
    pub direction: [f64; 2],
}

impl MotionRegion {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && x < self.x + self.width && y >= self.y && y < self.y + self.height
    }

    pub fn center(&self) -> (f64, f64) {
        (
            self.x as f64 + self.width as f64 / 2.0 - 0.5,
            self.y as f64 + self.height as f64 / 2.0 - 0.5,
        )
    }

    fn patch_radius(&self) -> f64 {
        0.3 * self.width.min(self.height) as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub database_id: String,
    pub n_subjects: usize,
    pub n_classes: usize,
    pub videos_per_subject: usize,
    pub frames_per_video: usize,
    pub image_size: usize,
    pub motion_amplitude: f64,
    pub noise_sigma: f64,
    pub pattern: MotionPattern,
    /// One region per class; empty means the default layout for `n_classes`.
    pub regions: Vec<MotionRegion>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            database_id: "SYN".into(),
            n_subjects: 3,
            n_classes: 3,
            videos_per_subject: 6,
            frames_per_video: 10,
            image_size: 32,
            motion_amplitude: 2.0,
            noise_sigma: 0.01,
            pattern: MotionPattern::Oscillate,
            regions: Vec::new(),
        }
    }
}

impl SynthSpec {
    /// Quadrants (top-left, top-right, bottom-left, bottom-right) then the centre.
    /// Even classes move horizontally, odd classes vertically, the centre diagonally.
    pub fn default_regions(n_classes: usize, side: usize) -> Vec<MotionRegion> {
        let half = side / 2;
        let d = std::f64::consts::FRAC_1_SQRT_2;
        let layout = [
            (0, 0, half, [1.0, 0.0]),
            (half, 0, half, [0.0, 1.0]),
            (0, half, half, [1.0, 0.0]),
            (half, half, half, [0.0, 1.0]),
            (side / 4, side / 4, half, [d, d]),
        ];
        layout
            .iter()
            .take(n_classes)
            .map(|&(x, y, s, direction)| MotionRegion {
                x,
                y,
                width: s,
                height: s,
                direction,
            })
            .collect()
    }

    pub fn resolved_regions(&self) -> Vec<MotionRegion> {
        if self.regions.is_empty() {
            Self::default_regions(self.n_classes, self.image_size)
        } else {
            self.regions.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.n_subjects >= 1, InvalidInput, "n_subjects must be >= 1");
        ensure!(
            (1..=5).contains(&self.n_classes),
            InvalidInput,
            "n_classes must be in 1..=5, got {}",
            self.n_classes
        );
        ensure!(self.frames_per_video >= 1, InvalidInput, "frames_per_video must be >= 1");
        ensure!(self.image_size >= 8, InvalidInput, "image_size must be >= 8");
        ensure!(
            self.motion_amplitude >= 0.0 && self.motion_amplitude.is_finite(),
            InvalidInput,
            "motion_amplitude must be finite and >= 0"
        );
        ensure!(self.noise_sigma >= 0.0, InvalidInput, "noise_sigma must be >= 0");
        let regions = self.resolved_regions();
        ensure!(
            regions.len() == self.n_classes,
            InvalidInput,
            "{} regions for {} classes",
            regions.len(),
            self.n_classes
        );
        for r in &regions {
            ensure!(
                r.width > 0
                    && r.height > 0
                    && r.x + r.width <= self.image_size
                    && r.y + r.height <= self.image_size,
                InvalidInput,
                "region {r:?} outside {0}x{0} image",
                self.image_size
            );
        }
        Ok(())
    }

    pub fn taxonomy(&self) -> ClassTaxonomy {
        let classes = (0..self.n_classes).map(|c| format!("class{c}")).collect();
        ClassTaxonomy::new("synthetic", classes).unwrap()
    }

    /// Patch offset along the motion direction at frame `t`.
    fn offset(&self, t: usize) -> f64 {
        let a = self.motion_amplitude;
        match self.pattern {
            MotionPattern::Oscillate => {
                if t % 2 == 0 {
                    -0.5 * a
                } else {
                    0.5 * a
                }
            }
            MotionPattern::Drift => a * (t as f64 - (self.frames_per_video as f64 - 1.0) / 2.0),
        }
    }
}

fn mix_seed(parts: &[u64]) -> u64 {
    // splitmix64 over the parts
    let mut z = 0x9E37_79B9_7F4A_7C15u64;
    for &p in parts {
        z = z.wrapping_add(p).wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

/// Band-limited texture made of a few random plane waves.
#[derive(Clone, Debug)]
struct Texture {
    waves: Vec<(f64, f64, f64)>,
    base: f64,
    gain: f64,
}

impl Texture {
    fn random(rng: &mut impl Rng, n_waves: usize, min_wavelength: f64, max_wavelength: f64) -> Self {
        let waves = (0..n_waves)
            .map(|_| {
                let angle = rng.gen_range(0.0..PI);
                let wavelength = rng.gen_range(min_wavelength..max_wavelength);
                let k = 2.0 * PI / wavelength;
                (k * angle.cos(), k * angle.sin(), rng.gen_range(0.0..2.0 * PI))
            })
            .collect();
        Texture {
            waves,
            base: rng.gen_range(0.4..0.6),
            gain: 0.35 / n_waves as f64,
        }
    }

    fn eval(&self, u: f64, v: f64) -> f64 {
        self.base
            + self.gain
                * self
                    .waves
                    .iter()
                    .map(|&(kx, ky, ph)| (kx * u + ky * v + ph).sin())
                    .sum::<f64>()
    }
}

struct Patch {
    cx: f64,
    cy: f64,
    radius: f64,
    texture: Texture,
}

impl Patch {
    /// Raised-cosine window weight and texture value at `(x, y)` when shifted by `(ox, oy)`.
    fn eval(&self, x: f64, y: f64, ox: f64, oy: f64) -> Option<(f64, f64)> {
        let u = x - self.cx - ox;
        let v = y - self.cy - oy;
        let (su, sv) = (u / self.radius, v / self.radius);
        if su.abs() >= 1.0 || sv.abs() >= 1.0 {
            return None;
        }
        let w = (0.5 * PI * su).cos().powi(2) * (0.5 * PI * sv).cos().powi(2);
        Some((w, self.texture.eval(u, v)))
    }
}

struct Subject {
    background: Grayscale,
    patches: Vec<Patch>,
}

impl Subject {
    fn new(spec: &SynthSpec, regions: &[MotionRegion], seed: u64, index: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 1, index as u64]));
        let side = spec.image_size as f64;
        let fx = side / 2.0 + rng.gen_range(-0.05..0.05) * side;
        let fy = side / 2.0 + rng.gen_range(-0.05..0.05) * side;
        let (ax, ay) = (side * rng.gen_range(0.38..0.45), side * rng.gen_range(0.45..0.5));
        let skin = rng.gen_range(0.45..0.65);
        let surround = rng.gen_range(0.1..0.25);
        let eye_dx = side * rng.gen_range(0.16..0.2);
        let eye_y = fy - side * rng.gen_range(0.12..0.18);
        let mouth_y = fy + side * rng.gen_range(0.2..0.26);
        let blob = |x: f64, y: f64, cx: f64, cy: f64, r: f64| {
            (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * r * r)).exp()
        };
        let background = Grayscale::from_fn(spec.image_size, spec.image_size, |x, y| {
            let (x, y) = (x as f64, y as f64);
            let e = ((x - fx) / ax).powi(2) + ((y - fy) / ay).powi(2);
            let face = 1.0 / (1.0 + ((e - 1.0) * 8.0).exp());
            let mut v = surround + (skin - surround) * face;
            v -= 0.2 * blob(x, y, fx - eye_dx, eye_y, side * 0.04);
            v -= 0.2 * blob(x, y, fx + eye_dx, eye_y, side * 0.04);
            v -= 0.15 * blob(x, y, fx, mouth_y, side * 0.06);
            v
        });
        let patches = regions
            .iter()
            .map(|r| {
                let (cx, cy) = r.center();
                Patch {
                    cx,
                    cy,
                    radius: r.patch_radius(),
                    texture: Texture::random(&mut rng, 3, 5.0, 9.0),
                }
            })
            .collect();
        Subject {
            background,
            patches,
        }
    }

    fn render(
        &self,
        moving: usize,
        offset: (f64, f64),
        noise: &mut Option<(Normal<f64>, ChaCha8Rng)>,
    ) -> Grayscale {
        let (w, h) = self.background.dims();
        Grayscale::from_fn(w, h, |x, y| {
            let mut v = self.background.get(x, y);
            for (i, patch) in self.patches.iter().enumerate() {
                let (ox, oy) = if i == moving { offset } else { (0.0, 0.0) };
                if let Some((a, t)) = patch.eval(x as f64, y as f64, ox, oy) {
                    v = v * (1.0 - a) + t * a;
                }
            }
            if let Some((dist, rng)) = noise.as_mut() {
                v += dist.sample(rng);
            }
            v.clamp(0.0, 1.0)
        })
    }
}

/// Deterministic synthetic dataset for `seed`.
///
/// Video `k` of each subject is labelled `k % n_classes`. The per-frame displacement
/// of the moving patch is stored in [`VideoSample::motion`].
pub fn synthesize_dataset(spec: &SynthSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let regions = spec.resolved_regions();
    let mut samples = Vec::with_capacity(spec.n_subjects * spec.videos_per_subject);
    for s in 0..spec.n_subjects {
        let subject = Subject::new(spec, &regions, seed, s);
        for k in 0..spec.videos_per_subject {
            let label = k % spec.n_classes;
            let [dx, dy] = regions[label].direction;
            let mut noise = (spec.noise_sigma > 0.0).then(|| {
                (
                    Normal::new(0.0, spec.noise_sigma).unwrap(),
                    ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 2, s as u64, k as u64])),
                )
            });
            let mut frames = Vec::with_capacity(spec.frames_per_video);
            let mut motion = Vec::with_capacity(spec.frames_per_video);
            for t in 0..spec.frames_per_video {
                let o = spec.offset(t);
                frames.push(subject.render(label, (dx * o, dy * o), &mut noise));
                let step = if t == 0 { 0.0 } else { o - spec.offset(t - 1) };
                motion.push(Displacement {
                    dx: dx * step,
                    dy: dy * step,
                });
            }
            let mut sample = VideoSample::new(
                format!("{}_s{:02}_v{:02}", spec.database_id, s, k),
                format!("s{s:02}"),
                spec.database_id.clone(),
                label,
                frames,
            )?;
            sample.motion = Some(motion);
            samples.push(sample);
        }
    }
    Dataset::new(samples, spec.taxonomy())
}

/// Whole-frame texture translated by `shift` px per frame: frame `t` is `T(x - t*dx, y - t*dy)`.
pub fn drift_sequence(side: usize, n_frames: usize, shift: (f64, f64), seed: u64) -> Vec<Grayscale> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 3]));
    let texture = Texture::random(&mut rng, 6, 6.0, 14.0);
    (0..n_frames)
        .map(|t| {
            let (ox, oy) = (t as f64 * shift.0, t as f64 * shift.1);
            Grayscale::from_fn(side, side, |x, y| {
                texture.eval(x as f64 - ox, y as f64 - oy).clamp(0.0, 1.0)
            })
        })
        .collect()
}
