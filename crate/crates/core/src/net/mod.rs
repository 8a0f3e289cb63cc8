//! Layers, networks, the architecture notation, and the dense-to-KDL
//! truncation embedding.

mod activation;
pub mod arch;
pub mod checkpoint;
mod layer;
mod network;

pub use activation::Activation;
pub use arch::{count_params, parse_arch, ArchKind, ArchSpec, Convention, LayerSpec, Node, Quad};
pub(crate) use layer::{col_as_matrix, row_as_matrix};
pub use layer::{
    kdl_forward, kml_forward, Cache, Combine, DenseCache, DenseLayer, KdlCache, KdlLayer, KdlSummand, KmlBranch,
    KmlBranchCache, KmlCache, KmlColStage, KmlLayer, KmlRowStage, Layer, ParamTag,
};
pub use network::{
    embed_factors, fnn_factors, fnn_to_kdl, init_network, kdl_spec_for_shapes, network_forward, Activations, Embedding,
    Network,
};
