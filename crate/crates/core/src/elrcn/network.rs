use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::{ElrcnConfig, EnrichedFrame, Encoder, EncoderCache, PreparedSample, ShapeLedger, Variant};
use crate::dataset::ClassTaxonomy;
use crate::error::{ensure, Error, Result};
use crate::nn::{
    cross_entropy, read_checkpoint, softmax, softmax_predict, write_checkpoint, Checkpoint, Dense, LstmStack, LstmTrace,
    Tensor, Trainable,
};

/// Network input for one sample: per step, one tensor per encoder (or the
/// flattened pixel vector for the pixel variant).
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceInput {
    pub steps: Vec<Vec<Tensor>>,
}

impl SequenceInput {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Same input with steps reordered by `order`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        SequenceInput {
            steps: order.iter().map(|&i| self.steps[i].clone()).collect(),
        }
    }
}

/// Encoder stack, optional LSTM and classifier head.
#[derive(Clone, Debug, PartialEq)]
pub struct ElrcnModel {
    config: ElrcnConfig,
    classes: Vec<String>,
    gray_mean: f64,
    encoders: Vec<Encoder>,
    lstm: Option<LstmStack>,
    head: Dense,
}

struct Trace {
    encoders: Vec<Vec<EncoderCache>>,
    features: Vec<Vec<f64>>,
    lstm: Option<LstmTrace>,
    /// Steps whose logits enter the loss, with the head input and logits.
    scored: Vec<(usize, Vec<f64>, Vec<f64>)>,
}

const FORMAT: u32 = 1;

impl ElrcnModel {
    pub fn new(config: ElrcnConfig, taxonomy: &ClassTaxonomy) -> Result<Self> {
        let ledger = config.ledger(taxonomy.len())?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let side = config.pipeline.side;
        let encoders = config
            .variant
            .encoder_channels()
            .iter()
            .map(|&c| Encoder::new(&mut rng, &config.encoder, c, side))
            .collect::<Result<Vec<_>>>()?;
        let lstm = config
            .is_recurrent()
            .then(|| LstmStack::new(&mut rng, ledger.feature_len, &config.lstm_hidden));
        let head_in = lstm.as_ref().map_or(ledger.feature_len, LstmStack::output_size);
        let head = Dense::new(&mut rng, head_in, taxonomy.len());
        Ok(ElrcnModel {
            config,
            classes: taxonomy.classes().to_vec(),
            gray_mean: 0.0,
            encoders,
            lstm,
            head,
        })
    }

    pub fn config(&self) -> &ElrcnConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn ledger(&self) -> ShapeLedger {
        self.config.ledger(self.n_classes()).expect("validated at construction")
    }

    pub fn gray_mean(&self) -> f64 {
        self.gray_mean
    }

    pub fn set_gray_mean(&mut self, mean: f64) {
        self.gray_mean = mean;
    }

    /// Sets the grayscale offset to the mean intensity of `samples`.
    pub fn fit_gray_mean(&mut self, samples: &[PreparedSample]) {
        let (mut sum, mut n) = (0.0, 0usize);
        for s in samples {
            for f in &s.tim_frames {
                sum += f.data().iter().sum::<f64>();
                n += f.data().len();
            }
        }
        self.gray_mean = if n == 0 { 0.0 } else { sum / n as f64 };
    }

    pub fn encoders(&self) -> &[Encoder] {
        &self.encoders
    }

    pub fn lstm(&self) -> Option<&LstmStack> {
        self.lstm.as_ref()
    }

    pub fn head(&self) -> &Dense {
        &self.head
    }

    pub fn head_mut(&mut self) -> &mut Dense {
        &mut self.head
    }

    fn gray_plane(&self, g: &[f64]) -> Vec<f64> {
        g.iter().map(|v| v - self.gray_mean).collect()
    }

    /// Encoder inputs for one enriched frame.
    pub fn frame_tensors(&self, ef: &EnrichedFrame) -> Result<Vec<Tensor>> {
        let side = ef.side();
        let g = self.gray_plane(ef.gray.data());
        let s = &ef.strain.s;
        let [p, q, m] = ef.flow.planes();
        let stack = |planes: &[&[f64]]| Tensor::stack_planes(planes, side, side);
        Ok(match self.config.variant {
            Variant::Se => vec![stack(&[p, q, m, s, &g])?],
            Variant::Te => vec![stack(&[p, q, m])?, stack(&[s, s, s])?, stack(&[&g, &g, &g])?],
            Variant::Flow => vec![stack(&[p, q, m])?],
            Variant::Strain => vec![stack(&[s])?],
            v => return Err(Error::InvalidInput(format!("variant {} does not take enriched frames", v.name()))),
        })
    }

    /// Per-step network inputs of one prepared video.
    pub fn step_inputs(&self, sample: &PreparedSample) -> Result<Vec<Vec<Tensor>>> {
        match self.config.variant {
            Variant::Gray | Variant::Pixels => sample
                .tim_frames
                .iter()
                .map(|f| {
                    let g = self.gray_plane(f.data());
                    let t = if self.config.variant == Variant::Gray {
                        Tensor::stack_planes(&[&g], f.height(), f.width())?
                    } else {
                        Tensor::from_vec(&[g.len()], g)?
                    };
                    Ok(vec![t])
                })
                .collect(),
            _ => {
                ensure!(
                    !sample.enriched.is_empty(),
                    InvalidInput,
                    "video {} was prepared without motion",
                    sample.video_id
                );
                sample.enriched.iter().map(|ef| self.frame_tensors(ef)).collect()
            }
        }
    }

    /// Training / evaluation samples: one per video for recurrent models, one
    /// per frame otherwise. Returns inputs, labels and the source video index.
    pub fn samples_for(&self, prepared: &[PreparedSample]) -> Result<(Vec<SequenceInput>, Vec<usize>, Vec<usize>)> {
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        let mut origin = Vec::new();
        for (i, p) in prepared.iter().enumerate() {
            let steps = self.step_inputs(p)?;
            if self.lstm.is_some() {
                inputs.push(SequenceInput { steps });
                labels.push(p.label);
                origin.push(i);
            } else {
                for s in steps {
                    inputs.push(SequenceInput { steps: vec![s] });
                    labels.push(p.label);
                    origin.push(i);
                }
            }
        }
        Ok((inputs, labels, origin))
    }

    fn check_step(&self, step: &[Tensor]) -> Result<()> {
        if self.config.variant == Variant::Pixels {
            let want = self.lstm.as_ref().map_or(0, LstmStack::input_size);
            ensure!(
                step.len() == 1 && step[0].len() == want,
                Shape,
                "pixel step expects one vector of {want} values"
            );
        } else {
            ensure!(
                step.len() == self.encoders.len(),
                Shape,
                "step has {} tensors for {} encoders",
                step.len(),
                self.encoders.len()
            );
        }
        Ok(())
    }

    fn encode_step(&self, step: &[Tensor]) -> Result<(Vec<f64>, Vec<EncoderCache>)> {
        self.check_step(step)?;
        if self.config.variant == Variant::Pixels {
            return Ok((step[0].data().to_vec(), Vec::new()));
        }
        let mut feature = Vec::new();
        let mut caches = Vec::with_capacity(self.encoders.len());
        for (enc, x) in self.encoders.iter().zip(step) {
            let (f, c) = enc.forward(x)?;
            feature.extend_from_slice(&f);
            caches.push(c);
        }
        Ok((feature, caches))
    }

    /// Feature vector of one frame for the SE variant.
    pub fn encode_frame_se(&self, ef: &EnrichedFrame) -> Result<Vec<f64>> {
        ensure!(self.variant() == Variant::Se, InvalidInput, "model variant is {}, not se", self.variant().name());
        Ok(self.encode_step(&self.frame_tensors(ef)?)?.0)
    }

    /// Concatenated `(F, S, G)` feature vector of one frame for the TE variant.
    pub fn encode_frame_te(&self, ef: &EnrichedFrame) -> Result<Vec<f64>> {
        ensure!(self.variant() == Variant::Te, InvalidInput, "model variant is {}, not te", self.variant().name());
        Ok(self.encode_step(&self.frame_tensors(ef)?)?.0)
    }

    fn forward(&self, input: &SequenceInput) -> Result<Trace> {
        ensure!(!input.is_empty(), InvalidInput, "empty input sequence");
        let mut encoders = Vec::with_capacity(input.len());
        let mut features = Vec::with_capacity(input.len());
        for step in &input.steps {
            let (f, c) = self.encode_step(step)?;
            features.push(f);
            encoders.push(c);
        }
        let (lstm, outputs) = match &self.lstm {
            Some(stack) => {
                let t = stack.forward(&features)?;
                let outs = t.outputs.clone();
                (Some(t), outs)
            }
            None => {
                ensure!(input.len() == 1, InvalidInput, "a model without LSTM scores single frames, got {} steps", input.len());
                (None, features.clone())
            }
        };
        let last = outputs.len() - 1;
        let scored_steps: Vec<usize> = if self.config.per_step_loss { (0..=last).collect() } else { vec![last] };
        let mut scored = Vec::with_capacity(scored_steps.len());
        for t in scored_steps {
            let logits = self.head.forward(&outputs[t])?;
            scored.push((t, outputs[t].clone(), logits));
        }
        Ok(Trace {
            encoders,
            features,
            lstm,
            scored,
        })
    }

    /// Classifier logits after the final step.
    pub fn logits(&self, input: &SequenceInput) -> Result<Vec<f64>> {
        Ok(self.forward(input)?.scored.pop().expect("last step is scored").2)
    }

    /// Class distribution and predicted class (ties toward the lower index).
    pub fn predict_sequence(&self, input: &SequenceInput) -> Result<(Vec<f64>, usize)> {
        Ok(softmax_predict(&self.logits(input)?))
    }

    fn zero_grads(&self) -> Vec<Tensor> {
        self.params().into_iter().map(Tensor::zeros_like).collect()
    }

    /// Backpropagates logit gradients of the scored steps. Returns per-step feature gradients.
    fn backward(&self, trace: &Trace, d_logits: &[Vec<f64>], grads: &mut [Tensor], encoders: bool) -> Result<Vec<Vec<f64>>> {
        let n = grads.len();
        let (body, head) = grads.split_at_mut(n - 2);
        let (hw, hb) = head.split_at_mut(1);
        let steps = trace.features.len();
        let mut d_out = vec![vec![0.0; self.head.inputs()]; steps];
        for ((t, z, _), dl) in trace.scored.iter().zip(d_logits) {
            let dz = self.head.backward_into(z, dl, &mut hw[0], &mut hb[0]);
            d_out[*t].iter_mut().zip(dz).for_each(|(a, b)| *a += b);
        }
        let enc_params: usize = self.encoders.iter().map(Encoder::param_count).sum();
        let (enc_grads, lstm_grads) = body.split_at_mut(enc_params);
        let d_features = match (&self.lstm, &trace.lstm) {
            (Some(stack), Some(lt)) => stack.backward(lt, &d_out, lstm_grads),
            _ => d_out,
        };
        if encoders && !self.encoders.is_empty() {
            for (t, d) in d_features.iter().enumerate() {
                let mut offset = 0;
                let mut g_at = 0;
                for (e, enc) in self.encoders.iter().enumerate() {
                    let dim = enc.feature_dim();
                    let np = enc.param_count();
                    enc.backward(&trace.encoders[t][e], &d[offset..offset + dim], &mut enc_grads[g_at..g_at + np])?;
                    offset += dim;
                    g_at += np;
                }
            }
        }
        Ok(d_features)
    }

    /// Last-convolution activations `A` and gradients `dA` of the target-class
    /// logit (final step) for encoder `encoder` at step `step`.
    pub fn last_conv_maps(&self, input: &SequenceInput, step: usize, encoder: usize, class: usize) -> Result<(Tensor, Tensor)> {
        ensure!(class < self.n_classes(), InvalidInput, "class {class} out of range for {} classes", self.n_classes());
        ensure!(encoder < self.encoders.len(), InvalidInput, "encoder {encoder} out of range for {} encoders", self.encoders.len());
        ensure!(step < input.len(), InvalidInput, "step {step} out of range for {} steps", input.len());
        let mut trace = self.forward(input)?;
        // only the final step's score is explained
        trace.scored.drain(..trace.scored.len() - 1);
        let mut d = vec![0.0; self.n_classes()];
        d[class] = 1.0;
        let mut grads = self.zero_grads();
        let d_features = self.backward(&trace, &[d], &mut grads, false)?;
        let offset: usize = self.encoders[..encoder].iter().map(Encoder::feature_dim).sum();
        let enc = &self.encoders[encoder];
        let cache = &trace.encoders[step][encoder];
        let da = enc.last_conv_gradient(cache, &d_features[step][offset..offset + enc.feature_dim()]);
        Ok((cache.last_conv_activation().clone(), da))
    }

    /// Parameter names aligned with [`Trainable::params`].
    pub fn param_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .encoders
            .iter()
            .enumerate()
            .flat_map(|(e, enc)| enc.param_names(&format!("enc{e}")))
            .collect();
        if let Some(stack) = &self.lstm {
            for l in 0..stack.layers.len() {
                names.push(format!("lstm{l}.weight"));
                names.push(format!("lstm{l}.bias"));
            }
        }
        names.push("head.weight".into());
        names.push("head.bias".into());
        names
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            meta: json!({
                "format": FORMAT,
                "config": self.config,
                "classes": self.classes,
                "gray_mean": self.gray_mean,
            }),
            entries: self
                .param_names()
                .into_iter()
                .zip(self.params().into_iter().cloned())
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let meta = &ck.meta;
        let config: ElrcnConfig = serde_json::from_value(meta["config"].clone())?;
        let classes: Vec<String> = serde_json::from_value(meta["classes"].clone())?;
        let taxonomy = ClassTaxonomy::new("checkpoint", classes)?;
        let mut model = ElrcnModel::new(config, &taxonomy)?;
        model.gray_mean = meta["gray_mean"]
            .as_f64()
            .ok_or_else(|| Error::Checkpoint("missing gray_mean".into()))?;
        model.load_weights(ck)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_checkpoint(path, &self.to_checkpoint())
    }

    pub fn load(path: &Path) -> Result<Self> {
        ElrcnModel::from_checkpoint(&read_checkpoint(path)?)
    }

    /// Replaces every parameter; the checkpoint must match this architecture exactly.
    pub fn load_weights(&mut self, ck: &Checkpoint) -> Result<()> {
        let names = self.param_names();
        let mut source = Vec::with_capacity(names.len());
        for (name, p) in names.iter().zip(self.params()) {
            source.push(lookup(ck, name, p.shape())?);
        }
        ensure!(
            ck.entries.len() == names.len(),
            Checkpoint,
            "checkpoint has {} layers, model has {}",
            ck.entries.len(),
            names.len()
        );
        let source: Vec<Tensor> = source.into_iter().cloned().collect();
        for (p, s) in self.params_mut().into_iter().zip(source) {
            *p = s;
        }
        Ok(())
    }

    /// Replaces encoder parameters only, leaving the LSTM and head untouched.
    /// A checkpoint holding a single encoder initialises every encoder from it.
    pub fn load_encoder_weights(&mut self, path: &Path) -> Result<()> {
        let ck = read_checkpoint(path)?;
        self.load_encoder_checkpoint(&ck)
    }

    pub fn load_encoder_checkpoint(&mut self, ck: &Checkpoint) -> Result<()> {
        ensure!(!self.encoders.is_empty(), InvalidInput, "variant {} has no encoder", self.variant().name());
        let shared = ck.get("enc1.conv0_0.weight").is_none();
        let mut updates = Vec::new();
        for (e, enc) in self.encoders.iter().enumerate() {
            let src = if shared { 0 } else { e };
            let here = enc.param_names(&format!("enc{e}"));
            let there = enc.param_names(&format!("enc{src}"));
            for ((_, name), p) in here.iter().zip(&there).zip(enc.params()) {
                updates.push(lookup(ck, name, p.shape())?.clone());
            }
        }
        let mut it = updates.into_iter();
        for enc in &mut self.encoders {
            for p in enc.params_mut() {
                *p = it.next().expect("one update per encoder parameter");
            }
        }
        Ok(())
    }
}

fn lookup<'a>(ck: &'a Checkpoint, name: &str, shape: &[usize]) -> Result<&'a Tensor> {
    let t = ck
        .get(name)
        .ok_or_else(|| Error::Checkpoint(format!("layer {name} missing from checkpoint")))?;
    ensure!(
        t.shape() == shape,
        Checkpoint,
        "layer {name}: checkpoint shape {:?}, model shape {:?}",
        t.shape(),
        shape
    );
    Ok(t)
}

impl Trainable for ElrcnModel {
    type Input = SequenceInput;

    fn params(&self) -> Vec<&Tensor> {
        let mut p: Vec<&Tensor> = self.encoders.iter().flat_map(Encoder::params).collect();
        if let Some(stack) = &self.lstm {
            p.extend(stack.params());
        }
        p.push(&self.head.weight);
        p.push(&self.head.bias);
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p: Vec<&mut Tensor> = self.encoders.iter_mut().flat_map(Encoder::params_mut).collect();
        if let Some(stack) = &mut self.lstm {
            p.extend(stack.params_mut());
        }
        p.push(&mut self.head.weight);
        p.push(&mut self.head.bias);
        p
    }

    fn loss(&self, input: &SequenceInput, label: usize) -> Result<f64> {
        let trace = self.forward(input)?;
        let mut total = 0.0;
        for (_, _, logits) in &trace.scored {
            total += cross_entropy(logits, label)?.0;
        }
        Ok(total / trace.scored.len() as f64)
    }

    fn forward_backward(&self, input: &SequenceInput, label: usize) -> Result<(f64, Vec<Tensor>)> {
        let trace = self.forward(input)?;
        let k = trace.scored.len() as f64;
        let mut total = 0.0;
        let mut d_logits = Vec::with_capacity(trace.scored.len());
        for (_, _, logits) in &trace.scored {
            let (l, mut d) = cross_entropy(logits, label)?;
            total += l;
            d.iter_mut().for_each(|v| *v /= k);
            d_logits.push(d);
        }
        let mut grads = self.zero_grads();
        self.backward(&trace, &d_logits, &mut grads, true)?;
        Ok((total / k, grads))
    }

    fn predict_proba(&self, input: &SequenceInput) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(input)?))
    }
}
