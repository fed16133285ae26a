//! Infinitesimal strain of a flow field.
//!
//! The flow `(p, q)` is the displacement `u = [u, v]` over one frame, so
//! `e_xx = du/dx`, `e_yy = dv/dy` and both shear terms are
//! `(du/dy + dv/dx) / 2`.

use crate::error::{ensure, Result};
use crate::flow::FlowField;
use crate::frame::Grayscale;

#[derive(Clone, Debug, PartialEq)]
pub struct StrainTensorField {
    pub width: usize,
    pub height: usize,
    pub e_xx: Vec<f64>,
    pub e_xy: Vec<f64>,
    pub e_yx: Vec<f64>,
    pub e_yy: Vec<f64>,
}

/// Per-pixel strain magnitude `|e|`.
#[derive(Clone, Debug, PartialEq)]
pub struct StrainImage {
    pub width: usize,
    pub height: usize,
    pub s: Vec<f64>,
}

/// d/dx of a row-major plane: central inside, one-sided on the border.
fn ddx(v: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let row = &v[y * w..(y + 1) * w];
        let o = &mut out[y * w..(y + 1) * w];
        o[0] = row[1] - row[0];
        o[w - 1] = row[w - 1] - row[w - 2];
        for x in 1..w - 1 {
            o[x] = (row[x + 1] - row[x - 1]) * 0.5;
        }
    }
    out
}

fn ddy(v: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut out = vec![0.0; w * h];
    for x in 0..w {
        out[x] = v[w + x] - v[x];
        out[(h - 1) * w + x] = v[(h - 1) * w + x] - v[(h - 2) * w + x];
    }
    for y in 1..h - 1 {
        for x in 0..w {
            out[y * w + x] = (v[(y + 1) * w + x] - v[(y - 1) * w + x]) * 0.5;
        }
    }
    out
}

pub fn compute_strain(f: &FlowField) -> Result<StrainTensorField> {
    let (w, h) = (f.width, f.height);
    ensure!(
        w >= 3 && h >= 3,
        InvalidInput,
        "strain needs a field of at least 3x3, got {w}x{h}"
    );
    let e_xx = ddx(&f.p, w, h);
    let e_yy = ddy(&f.q, w, h);
    let dp_dy = ddy(&f.p, w, h);
    let dq_dx = ddx(&f.q, w, h);
    let shear: Vec<f64> = dp_dy
        .iter()
        .zip(&dq_dx)
        .map(|(a, b)| 0.5 * (a + b))
        .collect();
    Ok(StrainTensorField {
        width: w,
        height: h,
        e_xx,
        e_xy: shear.clone(),
        e_yx: shear,
        e_yy,
    })
}

pub fn strain_magnitude(t: &StrainTensorField) -> StrainImage {
    let s = (0..t.e_xx.len())
        .map(|i| {
            (t.e_xx[i] * t.e_xx[i]
                + t.e_yy[i] * t.e_yy[i]
                + t.e_xy[i] * t.e_xy[i]
                + t.e_yx[i] * t.e_yx[i])
                .sqrt()
        })
        .collect();
    StrainImage {
        width: t.width,
        height: t.height,
        s,
    }
}

impl StrainImage {
    /// Rescaled by its own maximum for visual inspection; never fed to a network.
    pub fn to_inspection_frame(&self) -> Grayscale {
        let max = self.s.iter().cloned().fold(0.0, f64::max);
        let scale = if max > 0.0 { 1.0 / max } else { 0.0 };
        Grayscale::new(
            self.width,
            self.height,
            self.s.iter().map(|v| v * scale).collect(),
        )
        .expect("plane matches its dimensions")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const N: usize = 12;

    fn interior_max(v: &[f64]) -> f64 {
        let mut m: f64 = 0.0;
        for y in 1..N - 1 {
            for x in 1..N - 1 {
                m = m.max(v[y * N + x].abs());
            }
        }
        m
    }

    #[test]
    fn translation_has_no_strain() {
        let t = compute_strain(&FlowField::from_fn(N, N, |_, _| (1.7, -0.3))).unwrap();
        for c in [&t.e_xx, &t.e_xy, &t.e_yx, &t.e_yy] {
            assert!(c.iter().all(|v| v.abs() < 1e-9));
        }
    }

    #[test]
    fn rotation_has_no_strain() {
        let w = 0.05;
        let f = FlowField::from_fn(N, N, |x, y| (-w * y as f64, w * x as f64));
        let t = compute_strain(&f).unwrap();
        for c in [&t.e_xx, &t.e_xy, &t.e_yx, &t.e_yy] {
            assert!(interior_max(c) < 1e-6);
        }
    }

    #[test]
    fn stretch_and_shear_are_analytic() {
        let t = compute_strain(&FlowField::from_fn(N, N, |x, _| (0.1 * x as f64, 0.0))).unwrap();
        for y in 1..N - 1 {
            for x in 1..N - 1 {
                let i = y * N + x;
                assert!((t.e_xx[i] - 0.1).abs() < 1e-6);
                assert!(t.e_xy[i].abs() < 1e-6 && t.e_yy[i].abs() < 1e-6);
            }
        }
        let t = compute_strain(&FlowField::from_fn(N, N, |_, y| (0.2 * y as f64, 0.0))).unwrap();
        let s = strain_magnitude(&t);
        for y in 1..N - 1 {
            for x in 1..N - 1 {
                let i = y * N + x;
                assert!((t.e_xy[i] - 0.1).abs() < 1e-9);
                assert!((s.s[i] - 0.02f64.sqrt()).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn magnitude_hand_values() {
        let t = StrainTensorField {
            width: 1,
            height: 2,
            e_xx: vec![0.3, 0.0],
            e_xy: vec![0.0, 0.0],
            e_yx: vec![0.0, 0.0],
            e_yy: vec![0.4, 0.0],
        };
        let s = strain_magnitude(&t);
        assert!((s.s[0] - 0.5).abs() < 1e-12);
        assert_eq!(s.s[1], 0.0);
    }

    #[test]
    fn tiny_field_is_rejected() {
        assert!(compute_strain(&FlowField::zeros(2, 5)).is_err());
    }

    proptest! {
        #[test]
        fn rigid_motion_is_annihilated(a in -3.0..3.0f64, b in -3.0..3.0f64, w in -1.0..1.0f64) {
            let f = FlowField::from_fn(N, N, |x, y| (a - w * y as f64, b + w * x as f64));
            let s = strain_magnitude(&compute_strain(&f).unwrap());
            prop_assert!(interior_max(&s.s) < 1e-6);
        }

        #[test]
        fn strain_is_linear_and_symmetric(alpha in -4.0..4.0f64, seed in 0u64..1000) {
            let f = FlowField::from_fn(N, N, |x, y| {
                let h = (x as u64 * 31 + y as u64 * 17 + seed) % 97;
                (h as f64 / 97.0, ((h * 7) % 89) as f64 / 89.0)
            });
            let t = compute_strain(&f).unwrap();
            let ts = compute_strain(&f.scaled(alpha)).unwrap();
            prop_assert_eq!(&t.e_xy, &t.e_yx);
            for (a, b) in t.e_xx.iter().zip(&ts.e_xx).chain(t.e_xy.iter().zip(&ts.e_xy)) {
                prop_assert!((alpha * a - b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
        }
    }
}
