//! Partition of an architecture into an edge part (feature extractor,
//! compression convolution and early-exit head) and a cloud part.

use super::arch::{chain, count_params, training_maccs, ArchitectureSpec, LayerKind, LayerSpec};
use crate::error::ModelError;

/// Largest power of two `c` with `c × spatial ≤ budget`, capped at the
/// cut-point channel count and at least 1.
pub fn default_compression_channels(cut_shape: [usize; 3], budget: usize) -> usize {
    let [channels, h, w] = cut_shape;
    let spatial = (h * w).max(1);
    let mut c = 1;
    while c * 2 * spatial <= budget && c * 2 <= channels {
        c *= 2;
    }
    c.min(channels).max(1)
}

/// An architecture divided at one of its legal split positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitModel {
    pub arch: ArchitectureSpec,
    pub position: usize,
    pub compression_channels: usize,
    pub bit_width: u8,
    /// Base layers kept on the edge.
    pub edge_layers: Vec<LayerSpec>,
    /// 3×3 compression convolution (stride 1, pad 1) and its ReLU.
    pub compression: Vec<LayerSpec>,
    /// Early-exit head: flatten and one fully connected layer.
    pub exit_head: Vec<LayerSpec>,
    /// 1×1 convolution restoring the cut-point channel count, and its ReLU.
    pub cloud_entry: Vec<LayerSpec>,
    /// Base layers run on the cloud, ending in the final classifier.
    pub cloud_layers: Vec<LayerSpec>,
    /// Set when the compressed map exceeds the architecture's transfer budget.
    pub budget_warning: Option<String>,
}

impl SplitModel {
    /// Splits `arch` after position `position` (1-based). `compression_channels`
    /// defaults to [`default_compression_channels`] under the architecture's
    /// transfer budget.
    pub fn new(
        arch: &ArchitectureSpec,
        position: usize,
        compression_channels: Option<usize>,
        bit_width: u8,
    ) -> Result<Self, ModelError> {
        let boundary = arch.boundary(position)?;
        let cut: [usize; 3] = arch.layers[boundary - 1]
            .output_shape
            .clone()
            .try_into()
            .map_err(|_| ModelError::IllegalSplit { position, max: arch.num_splits() })?;
        let compression_channels =
            compression_channels.unwrap_or_else(|| default_compression_channels(cut, arch.transfer_budget));
        if compression_channels == 0 {
            return Err(ModelError::CompressionChannels);
        }
        let [c, h, w] = cut;
        let compression = chain(
            &[
                LayerKind::Conv2d {
                    in_channels: c,
                    out_channels: compression_channels,
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                    bias: true,
                },
                LayerKind::Relu,
            ],
            &cut,
        )?;
        let compressed = [compression_channels, h, w];
        let exit_head = chain(
            &[
                LayerKind::Flatten,
                LayerKind::Linear { in_features: compression_channels * h * w, out_features: arch.num_classes },
            ],
            &compressed,
        )?;
        let cloud_entry = chain(
            &[
                LayerKind::Conv2d {
                    in_channels: compression_channels,
                    out_channels: c,
                    kernel: 1,
                    stride: 1,
                    padding: 0,
                    bias: true,
                },
                LayerKind::Relu,
            ],
            &compressed,
        )?;
        let elements = compression_channels * h * w;
        let budget_warning = (elements > arch.transfer_budget).then(|| {
            format!(
                "compressed map {compression_channels}×{h}×{w} = {elements} elements exceeds transfer budget {}",
                arch.transfer_budget
            )
        });
        if let Some(w) = &budget_warning {
            log::warn!("{}: split {position}: {w}", arch.name);
        }
        Ok(SplitModel {
            arch: arch.clone(),
            position,
            compression_channels,
            bit_width,
            edge_layers: arch.layers[..boundary].to_vec(),
            compression,
            exit_head,
            cloud_entry,
            cloud_layers: arch.layers[boundary..].to_vec(),
            budget_warning,
        })
    }

    /// Per-sample shape of the cut-point feature map.
    pub fn cut_shape(&self) -> [usize; 3] {
        self.compression[0].input_shape.clone().try_into().expect("cut shape is C×H×W")
    }

    /// Per-sample shape of the transmitted (compressed) feature map.
    pub fn compressed_shape(&self) -> [usize; 3] {
        self.compression[1].output_shape.clone().try_into().expect("compressed shape is C×H×W")
    }

    pub fn compressed_elements(&self) -> usize {
        self.compressed_shape().iter().product()
    }

    /// Feature bits per sample on the uplink: elements × bit width.
    pub fn comm_bits_per_sample(&self) -> u64 {
        self.compressed_elements() as u64 * self.bit_width as u64
    }

    /// Every layer executed on the edge, in order: base prefix, compression.
    /// The early-exit head reads the compression output.
    pub fn edge_all(&self) -> impl Iterator<Item = &LayerSpec> {
        self.edge_layers.iter().chain(&self.compression).chain(&self.exit_head)
    }

    pub fn cloud_all(&self) -> impl Iterator<Item = &LayerSpec> {
        self.cloud_entry.iter().chain(&self.cloud_layers)
    }

    /// Edge parameters including the compression convolution and exit head.
    pub fn edge_params(&self) -> u64 {
        self.edge_all().map(|l| l.params).sum()
    }

    pub fn cloud_params(&self) -> u64 {
        self.cloud_all().map(|l| l.params).sum()
    }

    pub fn edge_base_params(&self) -> u64 {
        count_params(&self.edge_layers)
    }

    pub fn cloud_base_params(&self) -> u64 {
        count_params(&self.cloud_layers)
    }

    /// Forward MACCs per sample on the edge (prefix, compression, early exit).
    pub fn edge_forward_maccs(&self) -> u64 {
        self.edge_all().map(|l| l.maccs).sum()
    }

    pub fn cloud_forward_maccs(&self) -> u64 {
        self.cloud_all().map(|l| l.maccs).sum()
    }

    pub fn edge_training_maccs(&self) -> u64 {
        training_maccs(self.edge_forward_maccs())
    }

    pub fn cloud_training_maccs(&self) -> u64 {
        training_maccs(self.cloud_forward_maccs())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_resnet18, build_smallcnn, build_vgg16};

    #[test]
    fn vgg_split3_anchor() {
        let vgg = build_vgg16(10, [3, 32, 32]).unwrap();
        let s = SplitModel::new(&vgg, 3, None, 4).unwrap();
        assert_eq!(s.compressed_shape(), [16, 16, 16]);
        assert_eq!(s.compressed_elements(), 4096);
        assert_eq!(s.comm_bits_per_sample(), 16384);
        assert_eq!(s.edge_base_params(), 112_576);
        assert_eq!(s.compression[0].params, 18_448);
        assert_eq!(s.exit_head[1].params, 40_970);
        assert_eq!(s.edge_params(), 112_576 + 18_448 + 40_970);
    }

    #[test]
    fn vgg_channel_schedule_spans_4_to_512() {
        let vgg = build_vgg16(10, [3, 32, 32]).unwrap();
        let channels: Vec<usize> =
            vgg.positions().map(|p| SplitModel::new(&vgg, p, None, 4).unwrap().compression_channels).collect();
        assert_eq!(channels.first(), Some(&4));
        assert_eq!(channels.last(), Some(&512));
        for p in vgg.positions() {
            assert!(SplitModel::new(&vgg, p, None, 4).unwrap().compressed_elements() <= 4096);
        }
    }

    #[test]
    fn last_split_leaves_only_classifier() {
        let vgg = build_vgg16(10, [3, 32, 32]).unwrap();
        let s = SplitModel::new(&vgg, 13, None, 4).unwrap();
        assert!(s.cloud_layers.iter().all(|l| matches!(
            l.kind,
            LayerKind::Flatten | LayerKind::Linear { .. } | LayerKind::Relu
        )));
        let small = build_smallcnn(10, [3, 16, 16]).unwrap();
        let s = SplitModel::new(&small, 3, None, 4).unwrap();
        assert_eq!(s.cloud_layers.len(), 2);
    }

    #[test]
    fn partition_is_complete() {
        for arch in [
            build_vgg16(10, [3, 32, 32]).unwrap(),
            build_resnet18(10, [3, 32, 32]).unwrap(),
            build_smallcnn(10, [3, 16, 16]).unwrap(),
        ] {
            for p in arch.positions() {
                let s = SplitModel::new(&arch, p, None, 4).unwrap();
                assert_eq!(s.edge_base_params() + s.cloud_base_params(), arch.total_params());
                assert_eq!(s.exit_head.iter().filter(|l| matches!(l.kind, LayerKind::Linear { .. })).count(), 1);
                let [c, h, w] = s.compressed_shape();
                assert_eq!(s.compressed_elements(), c * h * w);
                // cloud entry restores the cut shape the remaining layers expect
                assert_eq!(s.cloud_entry[1].output_shape, s.cut_shape().to_vec());
            }
        }
    }

    #[test]
    fn illegal_positions_and_budget_warning() {
        let small = build_smallcnn(10, [3, 16, 16]).unwrap();
        assert!(matches!(SplitModel::new(&small, 0, None, 4), Err(ModelError::IllegalSplit { .. })));
        assert!(matches!(SplitModel::new(&small, 4, None, 4), Err(ModelError::IllegalSplit { .. })));
        assert!(matches!(SplitModel::new(&small, 1, Some(0), 4), Err(ModelError::CompressionChannels)));
        let s = SplitModel::new(&small, 1, Some(16), 4).unwrap();
        assert!(s.budget_warning.is_some());
        assert!(SplitModel::new(&small, 1, None, 4).unwrap().budget_warning.is_none());
    }

    #[test]
    fn default_channels_rule() {
        assert_eq!(default_compression_channels([128, 16, 16], 4096), 16);
        assert_eq!(default_compression_channels([64, 32, 32], 4096), 4);
        assert_eq!(default_compression_channels([512, 1, 1], 4096), 512);
        assert_eq!(default_compression_channels([64, 32, 32], 512), 1);
        assert_eq!(default_compression_channels([128, 16, 16], 2048), 8);
    }
}
