use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Trainable;
use crate::error::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub h: f64,
    /// Pass threshold on the relative error.
    pub tolerance: f64,
    /// Denominator floor, so near-zero gradients are compared absolutely.
    pub floor: f64,
    /// Check at most this many randomly chosen entries per parameter tensor.
    pub max_entries_per_tensor: Option<usize>,
    /// Re-measure entries within a factor ten of failing at `h / 2` and skip
    /// them when the two central differences disagree, i.e. where the step
    /// straddles a ReLU or max-pool kink. For smooth entries both estimates
    /// agree to `O(h^2)`.
    pub skip_kinks: bool,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            h: 1e-5,
            tolerance: 1e-5,
            floor: 1e-3,
            max_entries_per_tensor: None,
            skip_kinks: true,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(tensor index, entry index)` of the worst checked entry.
    pub worst: Option<(usize, usize)>,
    /// Analytic and numeric gradient of the worst entry.
    pub worst_values: Option<(f64, f64)>,
    pub checked: usize,
    pub skipped_kinks: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// Compares analytic parameter gradients against central finite differences of the loss.
pub fn grad_check<M: Trainable>(
    model: &mut M,
    input: &M::Input,
    label: usize,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let (_, grads) = model.forward_backward(input, label)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport {
        tolerance: opts.tolerance,
        ..Default::default()
    };
    let h = opts.h;
    for (ti, g) in grads.iter().enumerate() {
        let n = g.len();
        let entries: Vec<usize> = match opts.max_entries_per_tensor {
            Some(k) if k < n => {
                let mut e = sample(&mut rng, n, k).into_vec();
                e.sort_unstable();
                e
            }
            _ => (0..n).collect(),
        };
        for i in entries {
            let numeric = central(model, input, label, ti, i, h)?;
            let analytic = g.data()[i];
            let rel = relative(analytic, numeric, opts.floor);
            if rel >= 0.1 * opts.tolerance && opts.skip_kinks {
                let half = central(model, input, label, ti, i, h / 2.0)?;
                if relative(numeric, half, opts.floor) > 0.1 * opts.tolerance {
                    report.skipped_kinks += 1;
                    continue;
                }
            }
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some((ti, i));
                report.worst_values = Some((analytic, numeric));
            }
        }
    }
    Ok(report)
}

fn relative(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

fn central<M: Trainable>(model: &mut M, input: &M::Input, label: usize, ti: usize, i: usize, h: f64) -> Result<f64> {
    let orig = model.params()[ti].data()[i];
    model.params_mut()[ti].data_mut()[i] = orig + h;
    let up = model.loss(input, label);
    model.params_mut()[ti].data_mut()[i] = orig - h;
    let down = model.loss(input, label);
    model.params_mut()[ti].data_mut()[i] = orig;
    Ok((up? - down?) / (2.0 * h))
}
