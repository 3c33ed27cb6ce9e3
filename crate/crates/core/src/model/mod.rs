//! Architecture descriptions, split partitioning and instantiated models.

mod arch;
mod net;
mod split;
mod workers;

pub use arch::{
    build_inline, build_named, build_resnet18, build_smallcnn, build_vgg16, chain, count_maccs, count_params,
    training_maccs, ArchBuilder, ArchitectureSpec, LayerDecl, LayerKind, LayerSpec,
};
pub use net::{Mode, Sequential, BN_EPS, BN_MOMENTUM};
pub use split::{default_compression_channels, SplitModel};
pub use workers::{CloudModel, EdgeModel, EdgeOutput, FullModel};
