use rand::Rng;

use super::{uniform, Tensor};
use crate::error::{ensure, Error, Result};

/// Gate rows are laid out as input, forget, output, candidate blocks of `hidden` rows
/// each, acting on the concatenation `[x; h_prev]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmCell {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Debug)]
pub struct LstmStepCache {
    concat: Vec<f64>,
    gates: Vec<f64>,
    c_prev: Vec<f64>,
    tanh_c: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct LstmStepOutput {
    /// Exposed output, equal to `h`.
    pub z: Vec<f64>,
    pub h: Vec<f64>,
    pub c: Vec<f64>,
    pub cache: LstmStepCache,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl LstmCell {
    pub const INIT_BOUND: f64 = 0.08;

    pub fn new(rng: &mut impl Rng, input_size: usize, hidden_size: usize) -> Self {
        let weight = uniform(rng, &[4 * hidden_size, input_size + hidden_size], Self::INIT_BOUND);
        let mut bias = Tensor::zeros(&[4 * hidden_size]);
        bias.data_mut()[hidden_size..2 * hidden_size].fill(1.0);
        LstmCell { weight, bias }
    }

    pub fn hidden_size(&self) -> usize {
        self.weight.shape()[0] / 4
    }

    pub fn input_size(&self) -> usize {
        self.weight.shape()[1] - self.hidden_size()
    }

    pub fn step(&self, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> Result<LstmStepOutput> {
        lstm_step(self, x, h_prev, c_prev)
    }

    /// Backpropagates one step. Accumulates into `gw`/`gb` and returns
    /// `(dx, dh_prev, dc_prev)`.
    pub fn step_backward(
        &self,
        cache: &LstmStepCache,
        dh: &[f64],
        dc_next: &[f64],
        gw: &mut Tensor,
        gb: &mut Tensor,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let hs = self.hidden_size();
        let cols = self.weight.shape()[1];
        let (i, rest) = cache.gates.split_at(hs);
        let (f, rest) = rest.split_at(hs);
        let (o, g) = rest.split_at(hs);
        let mut dpre = vec![0.0; 4 * hs];
        let mut dc_prev = vec![0.0; hs];
        for k in 0..hs {
            let tc = cache.tanh_c[k];
            let dc = dc_next[k] + dh[k] * o[k] * (1.0 - tc * tc);
            dpre[k] = dc * g[k] * i[k] * (1.0 - i[k]);
            dpre[hs + k] = dc * cache.c_prev[k] * f[k] * (1.0 - f[k]);
            dpre[2 * hs + k] = dh[k] * tc * o[k] * (1.0 - o[k]);
            dpre[3 * hs + k] = dc * i[k] * (1.0 - g[k] * g[k]);
            dc_prev[k] = dc * f[k];
        }
        let mut dconcat = vec![0.0; cols];
        let w = self.weight.data();
        for (r, &d) in dpre.iter().enumerate() {
            gb.data_mut()[r] += d;
            if d == 0.0 {
                continue;
            }
            let row = &w[r * cols..(r + 1) * cols];
            for (dv, wv) in dconcat.iter_mut().zip(row) {
                *dv += d * wv;
            }
            for (gv, xv) in gw.data_mut()[r * cols..(r + 1) * cols].iter_mut().zip(&cache.concat) {
                *gv += d * xv;
            }
        }
        let dh_prev = dconcat.split_off(self.input_size());
        (dconcat, dh_prev, dc_prev)
    }
}

pub fn lstm_step(cell: &LstmCell, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> Result<LstmStepOutput> {
    let hs = cell.hidden_size();
    ensure!(
        x.len() == cell.input_size() && h_prev.len() == hs && c_prev.len() == hs,
        Shape,
        "lstm step expects x {}, h {hs}, c {hs}; got {}, {}, {}",
        cell.input_size(),
        x.len(),
        h_prev.len(),
        c_prev.len()
    );
    if x.iter().chain(h_prev).chain(c_prev).any(|v| v.is_nan()) {
        return Err(Error::InvalidInput("NaN in lstm step input".into()));
    }
    let mut concat = Vec::with_capacity(x.len() + hs);
    concat.extend_from_slice(x);
    concat.extend_from_slice(h_prev);
    let cols = concat.len();
    let mut gates: Vec<f64> = cell
        .weight
        .data()
        .chunks_exact(cols)
        .zip(cell.bias.data())
        .map(|(row, b)| b + row.iter().zip(&concat).map(|(w, v)| w * v).sum::<f64>())
        .collect();
    for (r, v) in gates.iter_mut().enumerate() {
        *v = if r < 3 * hs { sigmoid(*v) } else { v.tanh() };
    }
    let mut c = vec![0.0; hs];
    let mut h = vec![0.0; hs];
    let mut tanh_c = vec![0.0; hs];
    for k in 0..hs {
        c[k] = gates[hs + k] * c_prev[k] + gates[k] * gates[3 * hs + k];
        tanh_c[k] = c[k].tanh();
        h[k] = gates[2 * hs + k] * tanh_c[k];
    }
    Ok(LstmStepOutput {
        z: h.clone(),
        h,
        c,
        cache: LstmStepCache {
            concat,
            gates,
            c_prev: c_prev.to_vec(),
            tanh_c,
        },
    })
}

/// Stacked LSTM; layer `l + 1` consumes the hidden states of layer `l`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmStack {
    pub layers: Vec<LstmCell>,
}

/// Forward record of a full sequence unroll.
#[derive(Clone, Debug)]
pub struct LstmTrace {
    /// `caches[layer][step]`.
    caches: Vec<Vec<LstmStepCache>>,
    /// Top-layer outputs per step.
    pub outputs: Vec<Vec<f64>>,
}

impl LstmStack {
    pub fn new(rng: &mut impl Rng, input_size: usize, hidden_sizes: &[usize]) -> Self {
        let mut layers = Vec::with_capacity(hidden_sizes.len());
        let mut inputs = input_size;
        for &h in hidden_sizes {
            layers.push(LstmCell::new(rng, inputs, h));
            inputs = h;
        }
        LstmStack { layers }
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].input_size()
    }

    pub fn output_size(&self) -> usize {
        self.layers.last().map_or(0, |l| l.hidden_size())
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn zero_grads(&self) -> Vec<Tensor> {
        self.params().into_iter().map(Tensor::zeros_like).collect()
    }

    /// Runs the sequence from zero initial states.
    pub fn forward(&self, xs: &[Vec<f64>]) -> Result<LstmTrace> {
        ensure!(!xs.is_empty(), InvalidInput, "empty lstm input sequence");
        let mut inputs: Vec<Vec<f64>> = xs.to_vec();
        let mut caches = Vec::with_capacity(self.layers.len());
        for cell in &self.layers {
            let hs = cell.hidden_size();
            let (mut h, mut c) = (vec![0.0; hs], vec![0.0; hs]);
            let mut layer_caches = Vec::with_capacity(inputs.len());
            let mut outs = Vec::with_capacity(inputs.len());
            for x in &inputs {
                let step = cell.step(x, &h, &c)?;
                h = step.h;
                c = step.c;
                outs.push(step.z);
                layer_caches.push(step.cache);
            }
            caches.push(layer_caches);
            inputs = outs;
        }
        Ok(LstmTrace {
            caches,
            outputs: inputs,
        })
    }

    /// Backpropagation through time. `d_outputs[t]` is the loss gradient w.r.t. the
    /// top-layer output at step `t`. Accumulates into `grads` (ordered as `params`)
    /// and returns per-step input gradients.
    pub fn backward(&self, trace: &LstmTrace, d_outputs: &[Vec<f64>], grads: &mut [Tensor]) -> Vec<Vec<f64>> {
        let steps = trace.outputs.len();
        let mut d_seq: Vec<Vec<f64>> = d_outputs.to_vec();
        for (l, cell) in self.layers.iter().enumerate().rev() {
            let hs = cell.hidden_size();
            let (gw, gb) = match &mut grads[2 * l..2 * l + 2] {
                [a, b] => (a, b),
                _ => unreachable!(),
            };
            let mut dh_next = vec![0.0; hs];
            let mut dc_next = vec![0.0; hs];
            let mut d_in = vec![Vec::new(); steps];
            for t in (0..steps).rev() {
                let dh: Vec<f64> = d_seq[t].iter().zip(&dh_next).map(|(a, b)| a + b).collect();
                let (dx, dh_prev, dc_prev) = cell.step_backward(&trace.caches[l][t], &dh, &dc_next, gw, gb);
                d_in[t] = dx;
                dh_next = dh_prev;
                dc_next = dc_prev;
            }
            d_seq = d_in;
        }
        d_seq
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_give_zero_hidden() {
        let cell = LstmCell {
            weight: Tensor::zeros(&[16, 7]),
            bias: Tensor::zeros(&[16]),
        };
        let out = cell.step(&[0.0; 3], &[0.0; 4], &[0.0; 4]).unwrap();
        assert!(out.h.iter().all(|&v| v == 0.0));
        assert_eq!(out.z, out.h);
    }

    #[test]
    fn saturated_forget_gate_keeps_cell() {
        let hs = 4;
        let mut cell = LstmCell {
            weight: Tensor::zeros(&[4 * hs, 3 + hs]),
            bias: Tensor::zeros(&[4 * hs]),
        };
        // forget open, input closed
        cell.bias.data_mut()[hs..2 * hs].fill(30.0);
        cell.bias.data_mut()[..hs].fill(-30.0);
        let c_prev = [1.0, -1.0, 0.5, -0.25];
        let out = cell.step(&[0.3, -0.7, 2.0], &[0.1; 4], &c_prev).unwrap();
        for (a, b) in out.c.iter().zip(&c_prev) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn forget_bias_initialised_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cell = LstmCell::new(&mut rng, 5, 3);
        assert_eq!(cell.weight.shape(), &[12, 8]);
        assert_eq!(&cell.bias.data()[3..6], &[1.0; 3]);
        assert!(cell.weight.max_abs() <= LstmCell::INIT_BOUND);
    }

    #[test]
    fn rejects_nan_and_bad_dims() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cell = LstmCell::new(&mut rng, 2, 3);
        assert!(cell.step(&[f64::NAN, 0.0], &[0.0; 3], &[0.0; 3]).is_err());
        assert!(cell.step(&[0.0; 3], &[0.0; 3], &[0.0; 3]).is_err());
    }

    fn probe_loss(stack: &LstmStack, xs: &[Vec<f64>], probes: &[Vec<f64>]) -> f64 {
        let trace = stack.forward(xs).unwrap();
        trace
            .outputs
            .iter()
            .zip(probes)
            .map(|(o, p)| o.iter().zip(p).map(|(a, b)| a * b).sum::<f64>())
            .sum()
    }

    #[test]
    fn bptt_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for hidden in [vec![8], vec![6, 5]] {
            let stack = LstmStack::new(&mut rng, 4, &hidden);
            let mut stack = stack;
            for p in stack.params_mut() {
                *p = uniform(&mut rng, p.shape(), 0.5);
            }
            let xs: Vec<Vec<f64>> = (0..5).map(|_| uniform(&mut rng, &[4], 1.0).into_data()).collect();
            let probes: Vec<Vec<f64>> = (0..5)
                .map(|_| uniform(&mut rng, &[stack.output_size()], 1.0).into_data())
                .collect();
            let trace = stack.forward(&xs).unwrap();
            let mut grads = stack.zero_grads();
            let dxs = stack.backward(&trace, &probes, &mut grads);
            let h = 1e-5;
            let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-3);
            let mut worst: f64 = 0.0;
            for (pi, g) in grads.iter().enumerate() {
                for i in 0..g.len() {
                    let mut s = stack.clone();
                    s.params_mut()[pi].data_mut()[i] += h;
                    let up = probe_loss(&s, &xs, &probes);
                    s.params_mut()[pi].data_mut()[i] -= 2.0 * h;
                    let down = probe_loss(&s, &xs, &probes);
                    worst = worst.max(rel(g.data()[i], (up - down) / (2.0 * h)));
                }
            }
            for t in 0..5 {
                for i in 0..4 {
                    let mut x = xs.clone();
                    x[t][i] += h;
                    let up = probe_loss(&stack, &x, &probes);
                    x[t][i] -= 2.0 * h;
                    let down = probe_loss(&stack, &x, &probes);
                    worst = worst.max(rel(dxs[t][i], (up - down) / (2.0 * h)));
                }
            }
            assert!(worst < 1e-4, "{hidden:?}: {worst}");
        }
    }
}
