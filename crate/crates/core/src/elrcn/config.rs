use serde::{Deserialize, Serialize};

use super::PipelineConfig;
use crate::error::{ensure, Result};
use crate::nn::{AdamConfig, DecayMode, TrainConfig};

/// Input arrangement of the network.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// One encoder over the stacked `(p, q, m, s, g)` channels.
    #[default]
    Se,
    /// Three encoders over `F`, `S x 3` and `G x 3`, features concatenated.
    Te,
    /// One encoder over the flow image only.
    Flow,
    /// One encoder over the strain image only.
    Strain,
    /// One encoder over the grayscale frames (interpolated frames, not pairs).
    Gray,
    /// No encoder; raw grayscale pixels feed the recurrent stage.
    Pixels,
}

impl Variant {
    /// Input channel count of each encoder.
    pub fn encoder_channels(self) -> &'static [usize] {
        match self {
            Variant::Se => &[5],
            Variant::Te => &[3, 3, 3],
            Variant::Flow => &[3],
            Variant::Strain | Variant::Gray => &[1],
            Variant::Pixels => &[],
        }
    }

    /// Whether the inputs need flow and strain.
    pub fn needs_motion(self) -> bool {
        !matches!(self, Variant::Gray | Variant::Pixels)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Se => "se",
            Variant::Te => "te",
            Variant::Flow => "flow",
            Variant::Strain => "strain",
            Variant::Gray => "gray",
            Variant::Pixels => "pixels",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    #[default]
    Desk,
    Paper,
}

impl Preset {
    /// Optimiser settings for the preset. The paper preset keeps ADAM at
    /// lr 1e-5 with iteration decay 1e-6 and up to 100 epochs; the desk models
    /// are small enough to train at lr 1e-3 with an L2 penalty, which also
    /// keeps never-activated dense weights near zero.
    pub fn train_config(self) -> TrainConfig {
        match self {
            Preset::Paper => TrainConfig::default(),
            Preset::Desk => TrainConfig {
                max_epochs: 25,
                batch_size: 4,
                adam: AdamConfig {
                    lr: 1e-3,
                    decay: 1e-2,
                    decay_mode: DecayMode::WeightDecay,
                    ..Default::default()
                },
                ..Default::default()
            },
        }
    }
}

/// Which fully connected layer of the encoder provides the features.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureTap {
    #[default]
    Last,
    SecondLast,
}

/// Convolutional encoder topology. Each block is a run of `kernel x kernel`
/// same-padded convolutions with ReLU, closed by 2x2 max pooling; the fully
/// connected layers (ReLU) follow the flattened last block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderSpec {
    pub blocks: Vec<Vec<usize>>,
    pub kernel: usize,
    pub fc_dims: Vec<usize>,
    pub tap: FeatureTap,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        EncoderSpec::desk()
    }
}

impl EncoderSpec {
    pub fn desk() -> Self {
        EncoderSpec {
            blocks: vec![vec![8], vec![16], vec![32]],
            kernel: 3,
            fc_dims: vec![64],
            tap: FeatureTap::Last,
        }
    }

    /// VGG-16.
    pub fn vgg16() -> Self {
        EncoderSpec {
            blocks: vec![
                vec![64, 64],
                vec![128, 128],
                vec![256, 256, 256],
                vec![512, 512, 512],
                vec![512, 512, 512],
            ],
            kernel: 3,
            fc_dims: vec![4096, 4096],
            tap: FeatureTap::Last,
        }
    }

    /// Fully connected layers actually built: up to and including the tapped one.
    pub fn active_fc_dims(&self) -> &[usize] {
        match self.tap {
            FeatureTap::Last => &self.fc_dims,
            FeatureTap::SecondLast => &self.fc_dims[..self.fc_dims.len().saturating_sub(1)],
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.active_fc_dims().last().copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(!self.blocks.is_empty(), InvalidInput, "encoder needs at least one block");
        ensure!(
            self.blocks.iter().all(|b| !b.is_empty() && b.iter().all(|&c| c > 0)),
            InvalidInput,
            "encoder blocks need positive channel counts"
        );
        ensure!(self.kernel % 2 == 1, InvalidInput, "kernel must be odd, got {}", self.kernel);
        ensure!(
            !self.active_fc_dims().is_empty() && self.fc_dims.iter().all(|&d| d > 0),
            InvalidInput,
            "encoder needs a positive fully connected layer at the tap (fc_dims {:?}, tap {:?})",
            self.fc_dims,
            self.tap
        );
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ElrcnConfig {
    pub variant: Variant,
    pub preset: Preset,
    pub pipeline: PipelineConfig,
    pub encoder: EncoderSpec,
    /// Hidden sizes of the stacked LSTM; empty means one classifier per frame.
    pub lstm_hidden: Vec<usize>,
    /// Average the loss over every step instead of the last one.
    pub per_step_loss: bool,
    pub init_seed: u64,
}

impl Default for ElrcnConfig {
    fn default() -> Self {
        ElrcnConfig::desk(Variant::Se)
    }
}

impl ElrcnConfig {
    pub fn desk(variant: Variant) -> Self {
        let mut pipeline = PipelineConfig::default();
        if variant == Variant::Pixels {
            pipeline.side = 16;
        }
        ElrcnConfig {
            variant,
            preset: Preset::Desk,
            pipeline,
            encoder: EncoderSpec::desk(),
            lstm_hidden: vec![32],
            per_step_loss: false,
            init_seed: 0,
        }
    }

    pub fn paper(variant: Variant) -> Self {
        let pipeline = PipelineConfig {
            side: if variant == Variant::Pixels { 50 } else { 224 },
            ..Default::default()
        };
        ElrcnConfig {
            variant,
            preset: Preset::Paper,
            pipeline,
            encoder: EncoderSpec::vgg16(),
            lstm_hidden: vec![1024],
            per_step_loss: false,
            init_seed: 0,
        }
    }

    pub fn for_preset(preset: Preset, variant: Variant) -> Self {
        match preset {
            Preset::Desk => ElrcnConfig::desk(variant),
            Preset::Paper => ElrcnConfig::paper(variant),
        }
    }

    pub fn is_recurrent(&self) -> bool {
        !self.lstm_hidden.is_empty()
    }

    /// Steps per video fed to the network.
    pub fn steps_per_video(&self) -> usize {
        match self.variant {
            Variant::Gray | Variant::Pixels => self.pipeline.tim_length,
            _ => self.pipeline.enriched_steps(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        if self.variant != Variant::Pixels {
            self.encoder.validate()?;
        }
        ensure!(
            self.lstm_hidden.iter().all(|&h| h > 0),
            InvalidInput,
            "lstm hidden sizes must be positive, got {:?}",
            self.lstm_hidden
        );
        ensure!(
            self.variant != Variant::Pixels || self.is_recurrent(),
            InvalidInput,
            "the pixel variant needs an LSTM"
        );
        Ok(())
    }

    /// Shapes of every stage, derived without allocating any parameters.
    pub fn ledger(&self, n_classes: usize) -> Result<ShapeLedger> {
        self.validate()?;
        ensure!(n_classes >= 1, InvalidInput, "need at least one class");
        let side = self.pipeline.side;
        let spec = &self.encoder;
        let mut params = 0usize;
        let mut encoder_inputs = Vec::new();
        let mut feature_dims = Vec::new();
        let mut last_conv = None;
        for &channels in self.variant.encoder_channels() {
            encoder_inputs.push([side, side, channels]);
            let (mut h, mut w, mut c) = (side, side, channels);
            for block in &spec.blocks {
                for &out in block {
                    params += out * c * spec.kernel * spec.kernel + out;
                    c = out;
                }
                last_conv = Some([c, h, w]);
                ensure!(
                    h >= 2 && w >= 2,
                    Shape,
                    "input side {side} is too small for {} pooling stages",
                    spec.blocks.len()
                );
                h /= 2;
                w /= 2;
            }
            let mut inputs = c * h * w;
            for &d in spec.active_fc_dims() {
                params += d * inputs + d;
                inputs = d;
            }
            feature_dims.push(inputs);
        }
        let feature_len = if self.variant == Variant::Pixels {
            side * side
        } else {
            feature_dims.iter().sum()
        };
        let mut inputs = feature_len;
        for &h in &self.lstm_hidden {
            params += 4 * h * (inputs + h) + 4 * h;
            inputs = h;
        }
        params += n_classes * inputs + n_classes;
        Ok(ShapeLedger {
            encoder_inputs,
            last_conv,
            encoder_feature_dims: feature_dims,
            feature_len,
            tim_length: self.pipeline.tim_length,
            unroll: if self.is_recurrent() { self.steps_per_video() } else { 1 },
            lstm_hidden: self.lstm_hidden.clone(),
            n_classes,
            param_count: params,
        })
    }
}

/// Stage shapes of a configuration.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapeLedger {
    /// `[height, width, channels]` of each encoder input.
    pub encoder_inputs: Vec<[usize; 3]>,
    /// `[channels, height, width]` of the last convolution's activations.
    pub last_conv: Option<[usize; 3]>,
    pub encoder_feature_dims: Vec<usize>,
    /// Length of the per-step vector entering the recurrent stage.
    pub feature_len: usize,
    pub tim_length: usize,
    /// Recurrent steps per sample.
    pub unroll: usize,
    pub lstm_hidden: Vec<usize>,
    pub n_classes: usize,
    pub param_count: usize,
}
