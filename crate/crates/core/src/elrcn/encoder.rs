use rand::Rng;

use super::EncoderSpec;
use crate::error::{ensure, Result};
use crate::nn::{relu, relu_backward, Conv2d, Dense, MaxPool2d, PoolCache, Tensor};

/// Convolutional feature extractor: conv blocks with pooling, then ReLU FC layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub blocks: Vec<Vec<Conv2d>>,
    pub fcs: Vec<Dense>,
    pool: MaxPool2d,
}

/// Forward values that the backward pass needs.
#[derive(Clone, Debug)]
pub struct EncoderCache {
    /// Input of every convolution, in execution order.
    conv_inputs: Vec<Tensor>,
    /// Post-ReLU output of every convolution.
    conv_outputs: Vec<Tensor>,
    pools: Vec<PoolCache>,
    pooled_shape: Vec<usize>,
    fc_inputs: Vec<Vec<f64>>,
    fc_outputs: Vec<Vec<f64>>,
}

impl EncoderCache {
    /// Post-ReLU activations of the last convolution.
    pub fn last_conv_activation(&self) -> &Tensor {
        self.conv_outputs.last().expect("encoder has convolutions")
    }
}

impl Encoder {
    pub fn new(rng: &mut impl Rng, spec: &EncoderSpec, in_channels: usize, side: usize) -> Result<Self> {
        spec.validate()?;
        let mut c = in_channels;
        let mut s = side;
        let mut blocks = Vec::with_capacity(spec.blocks.len());
        for block in &spec.blocks {
            let mut convs = Vec::with_capacity(block.len());
            for &out in block {
                convs.push(Conv2d::new(rng, c, out, spec.kernel));
                c = out;
            }
            blocks.push(convs);
            ensure!(s >= 2, Shape, "side {side} too small for {} pooling stages", spec.blocks.len());
            s /= 2;
        }
        let mut inputs = c * s * s;
        let mut fcs = Vec::new();
        for &d in spec.active_fc_dims() {
            fcs.push(Dense::new(rng, inputs, d));
            inputs = d;
        }
        Ok(Encoder {
            blocks,
            fcs,
            pool: MaxPool2d { size: 2 },
        })
    }

    pub fn in_channels(&self) -> usize {
        self.blocks[0][0].in_channels()
    }

    pub fn feature_dim(&self) -> usize {
        self.fcs.last().map_or(0, |f| f.outputs())
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let convs = self.blocks.iter().flatten().flat_map(|c| [&c.weight, &c.bias]);
        convs.chain(self.fcs.iter().flat_map(|f| [&f.weight, &f.bias])).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let convs = self
            .blocks
            .iter_mut()
            .flatten()
            .flat_map(|c| [&mut c.weight, &mut c.bias]);
        convs
            .chain(self.fcs.iter_mut().flat_map(|f| [&mut f.weight, &mut f.bias]))
            .collect()
    }

    /// Parameter names, aligned with [`Encoder::params`].
    pub fn param_names(&self, prefix: &str) -> Vec<String> {
        let mut names = Vec::new();
        for (b, block) in self.blocks.iter().enumerate() {
            for i in 0..block.len() {
                names.push(format!("{prefix}.conv{b}_{i}.weight"));
                names.push(format!("{prefix}.conv{b}_{i}.bias"));
            }
        }
        for j in 0..self.fcs.len() {
            names.push(format!("{prefix}.fc{j}.weight"));
            names.push(format!("{prefix}.fc{j}.bias"));
        }
        names
    }

    pub fn param_count(&self) -> usize {
        self.params().len()
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Vec<f64>, EncoderCache)> {
        ensure!(
            x.shape().first() == Some(&self.in_channels()),
            Shape,
            "encoder expects {} input channels, got shape {:?}",
            self.in_channels(),
            x.shape()
        );
        let mut conv_inputs = Vec::new();
        let mut conv_outputs = Vec::new();
        let mut pools = Vec::with_capacity(self.blocks.len());
        let mut cur = x.clone();
        for block in &self.blocks {
            for conv in block {
                let mut y = conv.forward(&cur)?;
                relu(&mut y);
                conv_inputs.push(cur);
                conv_outputs.push(y.clone());
                cur = y;
            }
            let (pooled, cache) = self.pool.forward(&cur)?;
            pools.push(cache);
            cur = pooled;
        }
        let pooled_shape = cur.shape().to_vec();
        let mut v = cur.into_data();
        let mut fc_inputs = Vec::with_capacity(self.fcs.len());
        let mut fc_outputs = Vec::with_capacity(self.fcs.len());
        for fc in &self.fcs {
            let mut y = fc.forward(&v)?;
            y.iter_mut().for_each(|a| *a = a.max(0.0));
            fc_inputs.push(v);
            fc_outputs.push(y.clone());
            v = y;
        }
        Ok((
            v,
            EncoderCache {
                conv_inputs,
                conv_outputs,
                pools,
                pooled_shape,
                fc_inputs,
                fc_outputs,
            },
        ))
    }

    /// Backward through the FC stack and the last pooling, giving the loss
    /// gradient w.r.t. the last convolution's post-ReLU activations.
    /// FC parameter gradients are accumulated into `fc_grads` when given.
    fn backward_head(&self, cache: &EncoderCache, d_feature: &[f64], mut fc_grads: Option<&mut [Tensor]>) -> Tensor {
        let mut d = d_feature.to_vec();
        for (j, fc) in self.fcs.iter().enumerate().rev() {
            relu_backward(&cache.fc_outputs[j], &mut d);
            d = match fc_grads.as_deref_mut() {
                Some(g) => {
                    let (gw, gb) = pair(g, 2 * j);
                    fc.backward_into(&cache.fc_inputs[j], &d, gw, gb)
                }
                None => input_only(fc, &d),
            };
        }
        let d = Tensor::from_vec(&cache.pooled_shape, d).expect("pooled shape matches FC input");
        self.pool.backward(cache.pools.last().expect("encoder has blocks"), &d)
    }

    /// Gradient w.r.t. the last convolution's post-ReLU activations, without
    /// touching parameter gradients.
    pub fn last_conv_gradient(&self, cache: &EncoderCache, d_feature: &[f64]) -> Tensor {
        self.backward_head(cache, d_feature, None)
    }

    /// Accumulates parameter gradients (ordered as [`Encoder::params`]) into `grads`.
    pub fn backward(&self, cache: &EncoderCache, d_feature: &[f64], grads: &mut [Tensor]) -> Result<()> {
        let n_conv: usize = self.blocks.iter().map(Vec::len).sum();
        let (conv_grads, fc_grads) = grads.split_at_mut(2 * n_conv);
        let mut d = self.backward_head(cache, d_feature, Some(fc_grads));
        let mut k = n_conv;
        for (b, block) in self.blocks.iter().enumerate().rev() {
            if b + 1 < self.blocks.len() {
                d = self.pool.backward(&cache.pools[b], &d);
            }
            for conv in block.iter().rev() {
                k -= 1;
                relu_backward(cache.conv_outputs[k].data(), d.data_mut());
                let (gx, gw, gb) = conv.backward(&cache.conv_inputs[k], &d, k > 0)?;
                conv_grads[2 * k].axpy(1.0, &gw);
                conv_grads[2 * k + 1].axpy(1.0, &gb);
                if let Some(gx) = gx {
                    d = gx;
                }
            }
        }
        Ok(())
    }
}

fn pair(g: &mut [Tensor], at: usize) -> (&mut Tensor, &mut Tensor) {
    let (a, b) = g[at..at + 2].split_at_mut(1);
    (&mut a[0], &mut b[0])
}

/// Input gradient of a dense layer, skipping parameter gradients.
fn input_only(fc: &Dense, d: &[f64]) -> Vec<f64> {
    let n = fc.inputs();
    let mut gx = vec![0.0; n];
    for (o, &g) in d.iter().enumerate() {
        if g != 0.0 {
            for (gxi, w) in gx.iter_mut().zip(&fc.weight.data()[o * n..(o + 1) * n]) {
                *gxi += g * w;
            }
        }
    }
    gx
}
