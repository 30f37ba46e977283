//! Forward-only executor for compact encoder-decoder CNNs described by a JSON
//! layer graph and a flat float32 weights blob.

pub mod fixture;
pub mod kernels;
pub mod network;
pub mod spec;
pub mod tensor;

pub use kernels::{Activation, Conv2dParams, SeWeights};
pub use network::{
    encode_weights, load_network, load_network_with, parse_weights, Network, NetworkOptions,
};
pub use spec::{GraphSpec, InputSpec, LayerOp, LayerSpec};
pub use tensor::Tensor;
