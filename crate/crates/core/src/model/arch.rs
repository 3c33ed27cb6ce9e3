//! Layer-sequence descriptions of the supported architectures, with exact
//! parameter and MACC accounting.

use serde::{Deserialize, Serialize};

use crate::autodiff::kernels::{conv_output_size, pool_output_size};
use crate::error::ModelError;

/// One layer of an architecture description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Conv2d { in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize, bias: bool },
    BatchNorm2d { channels: usize },
    Relu,
    MaxPool2d { kernel: usize, stride: usize },
    AvgPool2d { kernel: usize, stride: usize },
    /// Basic residual block: two 3×3 conv + batch-norm pairs, with a 1×1
    /// projection shortcut when the stride or channel count changes.
    ResidualBlock { in_channels: usize, out_channels: usize, stride: usize },
    Flatten,
    Linear { in_features: usize, out_features: usize },
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Conv2d { .. } => "conv2d",
            LayerKind::BatchNorm2d { .. } => "batchnorm2d",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool2d { .. } => "maxpool2d",
            LayerKind::AvgPool2d { .. } => "avgpool2d",
            LayerKind::ResidualBlock { .. } => "residual_block",
            LayerKind::Flatten => "flatten",
            LayerKind::Linear { .. } => "linear",
        }
    }

    /// Output shape, parameter count and forward MACCs per sample for a
    /// per-sample input shape (`[C, H, W]` or `[F]`).
    pub fn infer(&self, input: &[usize]) -> Result<(Vec<usize>, u64, u64), String> {
        let chw = || match input {
            [c, h, w] => Ok((*c, *h, *w)),
            _ => Err(format!("expects a C×H×W input, got {input:?}")),
        };
        match *self {
            LayerKind::Conv2d { in_channels, out_channels, kernel, stride, padding, bias } => {
                let (c, h, w) = chw()?;
                if c != in_channels {
                    return Err(format!("expects {in_channels} input channels, got {c}"));
                }
                let ho = conv_output_size("conv2d", h, kernel, stride, padding).map_err(|e| e.to_string())?;
                let wo = conv_output_size("conv2d", w, kernel, stride, padding).map_err(|e| e.to_string())?;
                let weights = (out_channels * in_channels * kernel * kernel) as u64;
                let params = weights + if bias { out_channels as u64 } else { 0 };
                let maccs = (kernel * kernel * in_channels * out_channels * ho * wo) as u64;
                Ok((vec![out_channels, ho, wo], params, maccs))
            }
            LayerKind::BatchNorm2d { channels } => {
                let (c, _, _) = chw()?;
                if c != channels {
                    return Err(format!("expects {channels} channels, got {c}"));
                }
                Ok((input.to_vec(), 2 * channels as u64, 0))
            }
            LayerKind::Relu => Ok((input.to_vec(), 0, 0)),
            LayerKind::MaxPool2d { kernel, stride } | LayerKind::AvgPool2d { kernel, stride } => {
                let (c, h, w) = chw()?;
                let ho = pool_output_size("pool", h, kernel, stride).map_err(|e| e.to_string())?;
                let wo = pool_output_size("pool", w, kernel, stride).map_err(|e| e.to_string())?;
                Ok((vec![c, ho, wo], 0, 0))
            }
            LayerKind::ResidualBlock { in_channels, out_channels, stride } => {
                let mut total_params = 0;
                let mut total_maccs = 0;
                let mut shape = input.to_vec();
                for part in self.residual_parts() {
                    let (out, p, m) = part.infer(&shape)?;
                    total_params += p;
                    total_maccs += m;
                    shape = out;
                }
                if let Some(shortcut) = residual_shortcut(in_channels, out_channels, stride) {
                    let mut s = input.to_vec();
                    for part in shortcut {
                        let (out, p, m) = part.infer(&s)?;
                        total_params += p;
                        total_maccs += m;
                        s = out;
                    }
                    if s != shape {
                        return Err(format!("shortcut shape {s:?} differs from main path {shape:?}"));
                    }
                }
                Ok((shape, total_params, total_maccs))
            }
            LayerKind::Flatten => Ok((vec![input.iter().product()], 0, 0)),
            LayerKind::Linear { in_features, out_features } => match input {
                [f] if *f == in_features => {
                    let params = (in_features * out_features + out_features) as u64;
                    Ok((vec![out_features], params, (in_features * out_features) as u64))
                }
                _ => Err(format!("expects [{in_features}] input, got {input:?}")),
            },
        }
    }

    /// Main-path layers of a residual block (without the final ReLU, which
    /// follows the addition).
    pub(crate) fn residual_parts(&self) -> Vec<LayerKind> {
        match *self {
            LayerKind::ResidualBlock { in_channels, out_channels, stride } => vec![
                LayerKind::Conv2d { in_channels, out_channels, kernel: 3, stride, padding: 1, bias: false },
                LayerKind::BatchNorm2d { channels: out_channels },
                LayerKind::Relu,
                LayerKind::Conv2d {
                    in_channels: out_channels,
                    out_channels,
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                    bias: false,
                },
                LayerKind::BatchNorm2d { channels: out_channels },
            ],
            _ => Vec::new(),
        }
    }
}

pub(crate) fn residual_shortcut(in_channels: usize, out_channels: usize, stride: usize) -> Option<Vec<LayerKind>> {
    (stride != 1 || in_channels != out_channels).then(|| {
        vec![
            LayerKind::Conv2d { in_channels, out_channels, kernel: 1, stride, padding: 0, bias: false },
            LayerKind::BatchNorm2d { channels: out_channels },
        ]
    })
}

/// A layer with its derived per-sample shapes and counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub input_shape: Vec<usize>,
    pub output_shape: Vec<usize>,
    pub params: u64,
    pub maccs: u64,
}

/// Ordered layer list of a classifier plus its legal split positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchitectureSpec {
    pub name: String,
    pub input_shape: [usize; 3],
    pub num_classes: usize,
    pub layers: Vec<LayerSpec>,
    /// `split_boundaries[p - 1]` is the number of layers kept on the edge
    /// when splitting at position `p`.
    pub split_boundaries: Vec<usize>,
    /// Upper bound on transmitted feature elements per sample, used to pick
    /// the default compression channel count.
    pub transfer_budget: usize,
}

impl ArchitectureSpec {
    pub fn num_splits(&self) -> usize {
        self.split_boundaries.len()
    }

    /// Legal split positions, 1-based.
    pub fn positions(&self) -> impl Iterator<Item = usize> {
        1..=self.split_boundaries.len()
    }

    pub fn boundary(&self, position: usize) -> Result<usize, ModelError> {
        if position == 0 || position > self.split_boundaries.len() {
            return Err(ModelError::IllegalSplit { position, max: self.split_boundaries.len() });
        }
        Ok(self.split_boundaries[position - 1])
    }

    pub fn total_params(&self) -> u64 {
        count_params(&self.layers)
    }

    pub fn total_maccs(&self) -> u64 {
        self.layers.iter().map(|l| l.maccs).sum()
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.layers.last().expect("architectures are non-empty").output_shape
    }

    pub fn kinds(&self) -> Vec<LayerKind> {
        self.layers.iter().map(|l| l.kind.clone()).collect()
    }
}

/// Sum of parameter counts.
pub fn count_params(layers: &[LayerSpec]) -> u64 {
    layers.iter().map(|l| l.params).sum()
}

/// Forward MACCs per sample of `kinds` applied to `input_shape`: conv and
/// linear layers only (`K·K·Cin·Cout·Hout·Wout` and `F·C`).
pub fn count_maccs(kinds: &[LayerKind], input_shape: &[usize]) -> Result<u64, ModelError> {
    Ok(chain(kinds, input_shape)?.iter().map(|l| l.maccs).sum())
}

/// Training MACCs per sample: forward, input-gradient and weight-gradient
/// passes each cost one forward's worth of multiply-accumulates.
pub fn training_maccs(forward_maccs: u64) -> u64 {
    3 * forward_maccs
}

/// Derives shapes and counts for a layer sequence.
pub fn chain(kinds: &[LayerKind], input_shape: &[usize]) -> Result<Vec<LayerSpec>, ModelError> {
    let mut shape = input_shape.to_vec();
    kinds
        .iter()
        .enumerate()
        .map(|(index, kind)| {
            let (out, params, maccs) = kind.infer(&shape).map_err(|reason| ModelError::Layer {
                index,
                kind: kind.name().to_string(),
                reason,
            })?;
            let spec = LayerSpec { kind: kind.clone(), input_shape: shape.clone(), output_shape: out.clone(), params, maccs };
            shape = out;
            Ok(spec)
        })
        .collect()
}

/// Layer declaration used by builders and inline configuration. Channel and
/// feature inputs are inferred from the preceding layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerDecl {
    Conv {
        out_channels: usize,
        #[serde(default = "three")]
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default = "one")]
        padding: usize,
        #[serde(default = "yes")]
        bias: bool,
    },
    BatchNorm,
    Relu,
    MaxPool {
        #[serde(default = "two")]
        kernel: usize,
        #[serde(default = "two")]
        stride: usize,
    },
    AvgPool {
        kernel: usize,
        stride: usize,
    },
    Residual {
        out_channels: usize,
        #[serde(default = "one")]
        stride: usize,
    },
    Flatten,
    Linear {
        out_features: usize,
    },
    /// Marks a legal split position after the preceding layer.
    Split,
}

fn one() -> usize {
    1
}
fn two() -> usize {
    2
}
fn three() -> usize {
    3
}
fn yes() -> bool {
    true
}

/// Incremental architecture builder that infers channel counts.
pub struct ArchBuilder {
    name: String,
    input_shape: [usize; 3],
    num_classes: usize,
    kinds: Vec<LayerKind>,
    shape: Vec<usize>,
    boundaries: Vec<usize>,
    transfer_budget: Option<usize>,
    error: Option<ModelError>,
}

impl ArchBuilder {
    pub fn new(name: impl Into<String>, input_shape: [usize; 3], num_classes: usize) -> Self {
        ArchBuilder {
            name: name.into(),
            input_shape,
            num_classes,
            kinds: Vec::new(),
            shape: input_shape.to_vec(),
            boundaries: Vec::new(),
            transfer_budget: None,
            error: None,
        }
    }

    fn push(mut self, kind: LayerKind) -> Self {
        if self.error.is_some() {
            return self;
        }
        match kind.infer(&self.shape) {
            Ok((out, _, _)) => {
                self.shape = out;
                self.kinds.push(kind);
            }
            Err(reason) => {
                self.error = Some(ModelError::Layer { index: self.kinds.len(), kind: kind.name().into(), reason })
            }
        }
        self
    }

    fn channels(&self) -> usize {
        self.shape[0]
    }

    pub fn layer(self, decl: &LayerDecl) -> Self {
        match *decl {
            LayerDecl::Conv { out_channels, kernel, stride, padding, bias } => {
                self.conv(out_channels, kernel, stride, padding, bias)
            }
            LayerDecl::BatchNorm => self.batchnorm(),
            LayerDecl::Relu => self.relu(),
            LayerDecl::MaxPool { kernel, stride } => self.maxpool(kernel, stride),
            LayerDecl::AvgPool { kernel, stride } => self.avgpool(kernel, stride),
            LayerDecl::Residual { out_channels, stride } => self.residual(out_channels, stride),
            LayerDecl::Flatten => self.flatten(),
            LayerDecl::Linear { out_features } => self.linear(out_features),
            LayerDecl::Split => self.split_here(),
        }
    }

    pub fn conv(self, out_channels: usize, kernel: usize, stride: usize, padding: usize, bias: bool) -> Self {
        let in_channels = self.channels();
        self.push(LayerKind::Conv2d { in_channels, out_channels, kernel, stride, padding, bias })
    }

    pub fn batchnorm(self) -> Self {
        let channels = self.channels();
        self.push(LayerKind::BatchNorm2d { channels })
    }

    pub fn relu(self) -> Self {
        self.push(LayerKind::Relu)
    }

    pub fn maxpool(self, kernel: usize, stride: usize) -> Self {
        self.push(LayerKind::MaxPool2d { kernel, stride })
    }

    pub fn avgpool(self, kernel: usize, stride: usize) -> Self {
        self.push(LayerKind::AvgPool2d { kernel, stride })
    }

    pub fn residual(self, out_channels: usize, stride: usize) -> Self {
        let in_channels = self.channels();
        self.push(LayerKind::ResidualBlock { in_channels, out_channels, stride })
    }

    pub fn flatten(self) -> Self {
        self.push(LayerKind::Flatten)
    }

    pub fn linear(self, out_features: usize) -> Self {
        let in_features = self.shape.iter().product();
        self.push(LayerKind::Linear { in_features, out_features })
    }

    /// Declares a legal split after the most recent layer.
    pub fn split_here(mut self) -> Self {
        if self.error.is_none() {
            if self.shape.len() != 3 {
                self.error = Some(ModelError::Layer {
                    index: self.kinds.len(),
                    kind: "split".into(),
                    reason: format!("split points need a C×H×W feature map, got {:?}", self.shape),
                });
            } else if !self.kinds.is_empty() && self.boundaries.last() != Some(&self.kinds.len()) {
                self.boundaries.push(self.kinds.len());
            }
        }
        self
    }

    pub fn transfer_budget(mut self, elements: usize) -> Self {
        self.transfer_budget = Some(elements);
        self
    }

    pub fn build(self) -> Result<ArchitectureSpec, ModelError> {
        if let Some(e) = self.error {
            return Err(e);
        }
        if self.shape != [self.num_classes] {
            return Err(ModelError::Layer {
                index: self.kinds.len(),
                kind: "output".into(),
                reason: format!("final shape {:?} is not [{}]", self.shape, self.num_classes),
            });
        }
        if self.boundaries.is_empty() {
            return Err(ModelError::NoSplits);
        }
        let layers = chain(&self.kinds, &self.input_shape)?;
        let [_, h, w] = self.input_shape;
        Ok(ArchitectureSpec {
            name: self.name,
            input_shape: self.input_shape,
            num_classes: self.num_classes,
            layers,
            split_boundaries: self.boundaries,
            transfer_budget: self.transfer_budget.unwrap_or(h * w),
        })
    }
}

/// VGG-16 adapted to small inputs: 13 conv layers in five pooled stages and
/// a 512-512-classes fully connected head. Splits follow every conv layer
/// (after its max-pool, where one follows).
pub fn build_vgg16(num_classes: usize, input_shape: [usize; 3]) -> Result<ArchitectureSpec, ModelError> {
    const STAGES: [&[usize]; 5] = [&[64, 64], &[128, 128], &[256, 256, 256], &[512, 512, 512], &[512, 512, 512]];
    let mut b = ArchBuilder::new("vgg16", input_shape, num_classes).transfer_budget(4096);
    for stage in STAGES {
        for (i, &ch) in stage.iter().enumerate() {
            b = b.conv(ch, 3, 1, 1, true).relu();
            if i + 1 == stage.len() {
                b = b.maxpool(2, 2);
            }
            b = b.split_here();
        }
    }
    b.flatten().linear(512).relu().linear(512).relu().linear(num_classes).build()
}

/// CIFAR-style ResNet-18: 3×3 stem, eight basic blocks in stages of
/// 64/128/256/512 channels, global average pooling and a linear head.
/// Splits follow every residual block.
pub fn build_resnet18(num_classes: usize, input_shape: [usize; 3]) -> Result<ArchitectureSpec, ModelError> {
    let mut b = ArchBuilder::new("resnet18", input_shape, num_classes)
        .transfer_budget(2048)
        .conv(64, 3, 1, 1, false)
        .batchnorm()
        .relu();
    for (stage, &ch) in [64usize, 128, 256, 512].iter().enumerate() {
        for block in 0..2 {
            let stride = if stage > 0 && block == 0 { 2 } else { 1 };
            b = b.residual(ch, stride).split_here();
        }
    }
    let spatial = b.shape.get(1).copied().unwrap_or(1);
    b.avgpool(spatial, spatial).flatten().linear(num_classes).build()
}

/// Desk-scale CNN: three conv/ReLU/max-pool blocks (16, 32, 32 channels) and
/// a linear classifier. Splits follow every block.
pub fn build_smallcnn(num_classes: usize, input_shape: [usize; 3]) -> Result<ArchitectureSpec, ModelError> {
    let mut b = ArchBuilder::new("smallcnn", input_shape, num_classes);
    for ch in [16, 32, 32] {
        b = b.conv(ch, 3, 1, 1, true).relu().maxpool(2, 2).split_here();
    }
    b.flatten().linear(num_classes).build()
}

/// Builds a named architecture.
pub fn build_named(name: &str, num_classes: usize, input_shape: [usize; 3]) -> Result<ArchitectureSpec, ModelError> {
    match name {
        "vgg16" => build_vgg16(num_classes, input_shape),
        "resnet18" => build_resnet18(num_classes, input_shape),
        "smallcnn" => build_smallcnn(num_classes, input_shape),
        other => Err(ModelError::UnknownArchitecture(other.to_string())),
    }
}

/// Builds an architecture from an inline layer list.
pub fn build_inline(
    name: &str,
    num_classes: usize,
    input_shape: [usize; 3],
    layers: &[LayerDecl],
    transfer_budget: Option<usize>,
) -> Result<ArchitectureSpec, ModelError> {
    let mut b = ArchBuilder::new(name, input_shape, num_classes);
    if let Some(budget) = transfer_budget {
        b = b.transfer_budget(budget);
    }
    for decl in layers {
        b = b.layer(decl);
    }
    b.build()
}
