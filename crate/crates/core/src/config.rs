//! TOML run configuration: architecture, split, training, hardware, timing,
//! channel, transport, requirements and dataset sections.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::Optimizer;
use crate::clock::ComponentDurations;
use crate::costmodel::{CostParams, HardwareSpec, DEFAULT_ALPHA, K620_FLOPS, RTX2080TI_FLOPS};
use crate::data::{generate_synthetic, load_cifar10, Dataset, SyntheticSpec, CIFAR10_RECORD, CIFAR10_SHAPE, CIFAR10_TRAIN_FILES};
use crate::error::{Error, Result};
use crate::model::{build_inline, build_named, ArchitectureSpec, LayerDecl};
use crate::netsim::{ChannelPreset, ChannelSpec};
use crate::orchestrator::{LrSchedule, TimingModel, TrainMode, TrainingConfig, Transport};
use crate::planner::Requirements;
use crate::quant::DEFAULT_BIT_WIDTH;
use crate::tensor::Precision;

/// Named architecture or an inline layer list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureConfig {
    /// `vgg16`, `resnet18` or `smallcnn`; with `layers`, only a label.
    pub name: Option<String>,
    pub layers: Option<Vec<LayerDecl>>,
    pub transfer_budget: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub position: usize,
    pub compression_channels: Option<usize>,
    #[serde(default = "default_bit_width")]
    pub bit_width: u8,
}

fn default_bit_width() -> u8 {
    DEFAULT_BIT_WIDTH
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    #[serde(default = "default_mode")]
    pub mode: TrainMode,
    pub optimizer: Optimizer,
    pub lr: f64,
    #[serde(default = "default_schedule")]
    pub schedule: LrSchedule,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_precision")]
    pub precision: Precision,
}

fn default_mode() -> TrainMode {
    TrainMode::Hierarchical
}
fn default_schedule() -> LrSchedule {
    LrSchedule::Constant
}
fn default_precision() -> Precision {
    Precision::F32
}

/// Device speeds in FLOP/s; `beta` defaults to the optimizer's update cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareConfig {
    #[serde(default = "default_edge_flops")]
    pub edge_flops: f64,
    #[serde(default = "default_cloud_flops")]
    pub cloud_flops: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub beta: Option<f64>,
}

fn default_edge_flops() -> f64 {
    K620_FLOPS
}
fn default_cloud_flops() -> f64 {
    RTX2080TI_FLOPS
}
fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

impl Default for HardwareConfig {
    fn default() -> Self {
        HardwareConfig { edge_flops: K620_FLOPS, cloud_flops: RTX2080TI_FLOPS, alpha: DEFAULT_ALPHA, beta: None }
    }
}

impl HardwareConfig {
    pub fn spec(&self) -> HardwareSpec {
        HardwareSpec { edge_flops: self.edge_flops, cloud_flops: self.cloud_flops }
    }

    pub fn cost(&self, optimizer: &Optimizer) -> CostParams {
        CostParams { alpha: self.alpha, beta: self.beta.unwrap_or_else(|| optimizer.update_flops_per_param()) }
    }
}

/// Per-batch durations in seconds, replacing the analytic timing model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedTiming {
    pub edge_fwd_s: f64,
    pub edge_bwd_s: f64,
    pub comm_s: f64,
    pub cloud_fwd_s: f64,
    pub cloud_bwd_s: f64,
}

/// Either a preset or an explicit bandwidth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    pub preset: Option<ChannelPreset>,
    pub bandwidth_bps: Option<f64>,
    #[serde(default)]
    pub latency_s: f64,
    #[serde(default)]
    pub failure_windows: Vec<[f64; 2]>,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig { preset: Some(ChannelPreset::FourG), bandwidth_bps: None, latency_s: 0.0, failure_windows: vec![] }
    }
}

impl ChannelConfig {
    pub fn spec(&self) -> Result<ChannelSpec> {
        let bandwidth = match (self.preset, self.bandwidth_bps) {
            (Some(p), None) => p.bandwidth_bps(),
            (None, Some(b)) => b,
            (Some(_), Some(_)) => return Err(Error::Config("channel: set either preset or bandwidth_bps, not both".into())),
            (None, None) => return Err(Error::Config("channel: preset or bandwidth_bps is required".into())),
        };
        let spec =
            ChannelSpec { bandwidth_bps: bandwidth, latency_s: self.latency_s, failure_windows: self.failure_windows.clone() };
        spec.validate().map_err(|e| Error::Config(format!("channel: {e}")))?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Directory with the binary-version files, or one batch file.
    Cifar10 { path: PathBuf },
    Synthetic(SyntheticSpec),
}

impl DatasetConfig {
    /// Sample shape and class count, known without loading.
    pub fn meta(&self) -> ([usize; 3], usize) {
        match self {
            DatasetConfig::Cifar10 { .. } => (CIFAR10_SHAPE, 10),
            DatasetConfig::Synthetic(s) => (s.input_shape, s.num_classes),
        }
    }

    /// Training-set size, read from file sizes for CIFAR-10.
    pub fn train_samples(&self, base: &Path) -> Result<usize> {
        match self {
            DatasetConfig::Synthetic(s) => Ok(s.num_classes * s.train_per_class),
            DatasetConfig::Cifar10 { path } => {
                let path = base.join(path);
                let files: Vec<PathBuf> = if path.is_file() {
                    vec![path]
                } else {
                    CIFAR10_TRAIN_FILES.iter().map(|f| path.join(f)).collect()
                };
                files.iter().try_fold(0, |n, f| {
                    let len = std::fs::metadata(f).map_err(|e| Error::Data(format!("{}: {e}", f.display())))?.len();
                    Ok(n + len as usize / CIFAR10_RECORD)
                })
            }
        }
    }

    /// Train and test sets; relative paths resolve against `base`.
    pub fn load(&self, base: &Path) -> Result<(Dataset, Dataset)> {
        match self {
            DatasetConfig::Cifar10 { path } => load_cifar10(&base.join(path)),
            DatasetConfig::Synthetic(s) => generate_synthetic(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub architecture: ArchitectureConfig,
    pub split: SplitConfig,
    pub training: TrainingSection,
    #[serde(default)]
    pub hardware: HardwareConfig,
    pub timing: Option<FixedTiming>,
    #[serde(default)]
    pub channel: ChannelConfig,
    #[serde(default = "default_transport")]
    pub transport: Transport,
    #[serde(default)]
    pub requirements: Requirements,
    pub dataset: DatasetConfig,
}

fn default_transport() -> Transport {
    Transport::Sim
}

impl Default for RunConfig {
    /// Smallcnn on the default synthetic set, split after the second block.
    fn default() -> Self {
        RunConfig {
            architecture: ArchitectureConfig { name: Some("smallcnn".into()), layers: None, transfer_budget: None },
            split: SplitConfig { position: 2, compression_channels: None, bit_width: DEFAULT_BIT_WIDTH },
            training: TrainingSection {
                mode: TrainMode::Hierarchical,
                optimizer: Optimizer::adam(),
                lr: 1e-3,
                schedule: LrSchedule::Constant,
                epochs: 12,
                batch_size: 32,
                seed: 3,
                precision: Precision::F32,
            },
            hardware: HardwareConfig::default(),
            timing: None,
            channel: ChannelConfig::default(),
            transport: Transport::Sim,
            requirements: Requirements::default(),
            dataset: DatasetConfig::Synthetic(SyntheticSpec::default()),
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    // Anything that is not a TOML literal is taken as a bare string.
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Applies one `dotted.key=value` override, creating tables as needed.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{assignment}' is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key '{key}' has an empty segment")));
    }
    let (last, parents) = path.split_last().expect("split yields at least one segment");
    let mut cur = table;
    for p in parents {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| Error::Config(format!("override key '{key}': '{p}' is not a table")))?;
    }
    cur.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_with_overrides(text, &[])
    }

    pub fn parse_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let config: RunConfig = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse_with_overrides(&text, overrides)
    }

    pub fn render(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.channel.spec()?;
        self.requirements.validate()?;
        let tc = self.training_config()?;
        tc.arch.boundary(tc.position)?;
        tc.validate()
    }

    pub fn architecture(&self) -> Result<ArchitectureSpec> {
        let (shape, classes) = self.dataset.meta();
        let a = &self.architecture;
        let mut arch = match (&a.name, &a.layers) {
            (_, Some(layers)) => {
                build_inline(a.name.as_deref().unwrap_or("inline"), classes, shape, layers, a.transfer_budget)?
            }
            (Some(name), None) => build_named(name, classes, shape)?,
            (None, None) => return Err(Error::Config("architecture: name or layers is required".into())),
        };
        if a.layers.is_none() {
            if let Some(budget) = a.transfer_budget {
                arch.transfer_budget = budget;
            }
        }
        Ok(arch)
    }

    pub fn timing_model(&self) -> TimingModel {
        match self.timing {
            Some(t) => TimingModel::Fixed(ComponentDurations::from_secs(
                t.edge_fwd_s,
                t.edge_bwd_s,
                t.comm_s,
                t.cloud_fwd_s,
                t.cloud_bwd_s,
            )),
            None => TimingModel::Analytic {
                hardware: self.hardware.spec(),
                cost: self.hardware.cost(&self.training.optimizer),
            },
        }
    }

    pub fn training_config(&self) -> Result<TrainingConfig> {
        let t = &self.training;
        Ok(TrainingConfig {
            arch: self.architecture()?,
            position: self.split.position,
            compression_channels: self.split.compression_channels,
            bit_width: self.split.bit_width,
            mode: t.mode,
            optimizer: t.optimizer,
            lr: t.lr,
            schedule: t.schedule,
            epochs: t.epochs,
            batch_size: t.batch_size,
            seed: t.seed,
            channel: self.channel.spec()?,
            timing: self.timing_model(),
            transport: self.transport.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_roundtrip() {
        let c = RunConfig::default();
        let text = c.render().unwrap();
        assert_eq!(RunConfig::parse(&text).unwrap(), c);
    }

    #[test]
    fn rejects_unknown_keys() {
        let mut text = RunConfig::default().render().unwrap();
        text = text.replace("[split]", "[split]\nbogus = 1");
        let err = RunConfig::parse(&text).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    #[test]
    fn overrides() {
        let text = RunConfig::default().render().unwrap();
        let sets = ["split.position=3", "training.mode=fullcloud", "channel.preset=\"3g\"", "requirements.accuracy=0.8"]
            .map(String::from);
        let c = RunConfig::parse_with_overrides(&text, &sets).unwrap();
        assert_eq!(c.split.position, 3);
        assert_eq!(c.training.mode, TrainMode::Fullcloud);
        assert_eq!(c.channel.spec().unwrap().bandwidth_bps, 1.1e6);
        assert_eq!(c.requirements.accuracy, Some(0.8));
        assert!(RunConfig::parse_with_overrides(&text, &["split.position".into()]).is_err());
    }

    #[test]
    fn preset_xor_bandwidth() {
        let text = RunConfig::default().render().unwrap();
        assert!(RunConfig::parse_with_overrides(&text, &["channel.bandwidth_bps=1e6".into()]).is_err());
        let c = RunConfig::parse_with_overrides(
            &text.replace("preset = \"4g\"", ""),
            &["channel.bandwidth_bps=2e6".into()],
        )
        .unwrap();
        assert_eq!(c.channel.spec().unwrap().bandwidth_bps, 2e6);
    }

    #[test]
    fn inline_architecture_and_fixed_timing() {
        let text = r#"
[architecture]
layers = [
  { kind = "conv", out_channels = 4 }, { kind = "relu" }, { kind = "max_pool" }, { kind = "split" },
  { kind = "flatten" }, { kind = "linear", out_features = 10 },
]
[split]
position = 1
[training]
optimizer = { kind = "sgd", momentum = 0.9 }
lr = 0.01
epochs = 1
batch_size = 8
[timing]
edge_fwd_s = 1.0
edge_bwd_s = 0.5
comm_s = 2.0
cloud_fwd_s = 1.0
cloud_bwd_s = 1.5
[dataset]
kind = "synthetic"
num_classes = 10
train_per_class = 2
test_per_class = 1
input_shape = [3, 8, 8]
noise = 0.1
max_shift = 0
seed = 1
"#;
        let c = RunConfig::parse(text).unwrap();
        let tc = c.training_config().unwrap();
        assert_eq!(tc.arch.name, "inline");
        assert_eq!(tc.arch.num_splits(), 1);
        assert_eq!(tc.timing, TimingModel::Fixed(ComponentDurations::from_secs(1.0, 0.5, 2.0, 1.0, 1.5)));
        assert_eq!(RunConfig::parse(&c.render().unwrap()).unwrap(), c);
    }
}
