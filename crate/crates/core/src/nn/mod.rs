//! Micro neural-network engine: tensors, a reverse-mode tape, layer kernels,
//! the multi-head backbone and the Adam optimizer.

mod adam;
mod backbone;
mod ops;
mod tape;
mod tensor;

pub use adam::Adam;
pub use backbone::{
    build_backbone, Backbone, BackboneSpec, ForwardNodes, Head, Layer, LayerSpec, Predictions,
};
pub use ops::{activation_apply, conv2d_forward, dense_forward, maxpool2d_forward, ActivationKind};
pub use tape::{NodeId, Tape};
pub use tensor::Tensor;
