//! Tensor execution backend for layer graphs: forward inference, training
//! caches, and reverse-mode gradients, all on the CPU.

mod conv;
mod layers;
mod network;
mod tensor;

pub use conv::conv3_forward;
pub use layers::{BN_EPS, BN_MOMENTUM};
pub use network::{ForwardPass, Network, ParamEntry, ParamKind, ParamStore, Phase};
pub use tensor::Tensor;
