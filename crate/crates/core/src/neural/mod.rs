//! A small neural network engine: a reverse-mode tape, declarative model
//! graphs, an Adam optimizer, and a flat binary weight format. Generic over
//! the scalar type so training runs in f32 while gradient checks run in f64.

pub mod network;
pub mod optim;
pub mod spec;
pub mod tape;
pub mod tensor;
pub mod weights;

pub use network::{ForwardPass, Network, Param};
pub use optim::Adam;
pub use spec::{build_dense_cnn, build_hier_multihead, build_patchgan, build_unet, ModelSpec};
pub use tape::Tape;
pub use tensor::{Element, Tensor};
pub use weights::{load_weights, save_weights};
