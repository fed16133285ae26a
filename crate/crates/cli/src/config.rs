//! Run configuration: a TOML file with one section per subsystem, overlaid
//! on the defaults of the selected model preset, then on command-line overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use elrcn_core::dataset::SynthSpec;
use elrcn_core::elrcn::{ElrcnConfig, Preset, Variant};
use elrcn_core::gradcam::EncoderSelect;
use elrcn_core::nn::TrainConfig;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    #[default]
    Loso,
    Cde,
    Hde,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::Loso => "loso",
            Protocol::Cde => "cde",
            Protocol::Hde => "hde",
        }
    }

    /// Number of databases the protocol consumes.
    pub fn databases(self) -> usize {
        match self {
            Protocol::Loso => 1,
            Protocol::Cde | Protocol::Hde => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    #[default]
    None,
    SpatialOnly,
    TemporalOnly,
    FcLayer,
    LstmGrid,
}

impl AblationAxis {
    pub fn name(self) -> &'static str {
        match self {
            AblationAxis::None => "none",
            AblationAxis::SpatialOnly => "spatial_only",
            AblationAxis::TemporalOnly => "temporal_only",
            AblationAxis::FcLayer => "fc_layer",
            AblationAxis::LstmGrid => "lstm_grid",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// Dataset directories (each holding a manifest); empty means synthesize.
    pub dirs: Vec<PathBuf>,
    pub synth: SynthSpec,
    /// Database id of the second synthetic database (two-database protocols).
    pub second_database_id: String,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            dirs: Vec::new(),
            synth: SynthSpec::default(),
            second_database_id: "SYN_B".into(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub protocol: Protocol,
    /// Classes kept by CDE; empty keeps the classes both databases share.
    pub classes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    pub axis: AblationAxis,
    /// LSTM stacks swept by `lstm_grid` and `temporal_only`.
    pub lstm_grid: Vec<Vec<usize>>,
    /// Single-encoder inputs compared by `spatial_only`.
    pub spatial_inputs: Vec<Variant>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            axis: AblationAxis::None,
            lstm_grid: vec![vec![32], vec![32, 16]],
            spatial_inputs: vec![Variant::Gray, Variant::Flow, Variant::Strain],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradCamConfig {
    pub video_id: Option<String>,
    pub frame_idx: usize,
    /// Target class; defaults to the video's label.
    pub class: Option<usize>,
    pub encoder: EncoderSelect,
    /// Defaults to the checkpoint written by `train` for this variant and seed.
    pub checkpoint: Option<PathBuf>,
}

impl Default for GradCamConfig {
    fn default() -> Self {
        GradCamConfig {
            video_id: None,
            frame_idx: elrcn_core::gradcam::GradCamTarget::DEFAULT_STEP,
            class: None,
            encoder: EncoderSelect::default(),
            checkpoint: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Folds trained concurrently.
    pub jobs: usize,
    pub out: PathBuf,
    /// Encoder checkpoint that initializes every trained model.
    #[serde(default)]
    pub pretrained: Option<PathBuf>,
    pub data: DataConfig,
    pub model: ElrcnConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub ablation: AblationConfig,
    pub gradcam: GradCamConfig,
}

impl RunConfig {
    /// Defaults for a preset and variant; `seed` also seeds synthesis, initialization and shuffling.
    pub fn defaults(preset: Preset, variant: Variant, seed: u64) -> Self {
        let mut model = ElrcnConfig::for_preset(preset, variant);
        model.init_seed = seed;
        let mut train = preset.train_config();
        train.seed = seed;
        RunConfig {
            seed,
            jobs: 1,
            out: PathBuf::from("runs"),
            pretrained: None,
            data: DataConfig::default(),
            model,
            train,
            eval: EvalConfig::default(),
            ablation: AblationConfig::default(),
            gradcam: GradCamConfig::default(),
        }
    }

    /// Resolves `overlay` (file contents with overrides applied) on top of the preset defaults.
    pub fn resolve(overlay: &Table) -> Result<Self> {
        let pick = |section: &str, key: &str| -> Option<Value> {
            overlay.get(section)?.as_table()?.get(key).cloned()
        };
        let preset: Preset = match pick("model", "preset") {
            Some(v) => v.try_into().context("model.preset")?,
            None => Preset::default(),
        };
        let variant: Variant = match pick("model", "variant") {
            Some(v) => v.try_into().context("model.variant")?,
            None => Variant::default(),
        };
        let seed = match overlay.get("seed") {
            Some(v) => v
                .as_integer()
                .and_then(|s| u64::try_from(s).ok())
                .context("seed must be a non-negative integer")?,
            None => 0,
        };
        let mut base = Value::try_from(RunConfig::defaults(preset, variant, seed))?;
        merge(&mut base, &Value::Table(overlay.clone()));
        let cfg: RunConfig = base.try_into().context("invalid configuration")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                toml::from_str::<Table>(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        RunConfig::resolve(&table)
    }

    pub fn validate(&self) -> Result<()> {
        if self.jobs == 0 {
            bail!("jobs must be at least 1");
        }
        self.model.validate()?;
        self.train.validate()?;
        Ok(())
    }

    pub fn variant(&self) -> Variant {
        self.model.variant
    }

    /// Directory for cached flow fields: `$ELRCN_CACHE_DIR`, else `<out>/cache`.
    pub fn cache_dir(&self) -> PathBuf {
        match std::env::var_os(CACHE_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.out.join("cache"),
        }
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.out.join(format!("model_{}_s{}.ck", self.variant().name(), self.seed))
    }
}

pub const CACHE_ENV: &str = "ELRCN_CACHE_DIR";

/// Recursively overlays `top` onto `base`; tables merge, everything else is replaced.
fn merge(base: &mut Value, top: &Value) {
    match (base, top) {
        (Value::Table(b), Value::Table(t)) => {
            for (k, v) in t {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

/// Applies `dotted.key=value`; the value is parsed as TOML and kept as a string if that fails.
pub fn apply_override(table: &mut Table, assignment: &str) -> Result<()> {
    let Some((key, raw)) = assignment.split_once('=') else {
        bail!("override `{assignment}` must look like key=value");
    };
    let value = toml::from_str::<Table>(&format!("v = {}", raw.trim()))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.trim().to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("override key `{key}` has an empty segment");
    }
    let mut node = table;
    for part in &parts[..parts.len() - 1] {
        let entry = node
            .entry(part.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        node = entry
            .as_table_mut()
            .with_context(|| format!("override `{key}`: `{part}` is not a section"))?;
    }
    node.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
