//! A small convolutional embedder with exact backpropagation.

mod gradcheck;
mod net;
mod persist;
mod tensor;

pub use gradcheck::{grad_check, relative_error};
pub use net::{
    sgd_step, EmbeddingNet, ForwardCache, NetSpec, ParamGrads, Params, Pooling, Sgd, SgdConfig, VolumeTrace,
    LAYER_NAMES,
};
pub use persist::{load_net, parse_net, render_net, save_net, FORMAT_VERSION};
pub use tensor::Tensor;
