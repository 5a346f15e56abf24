//! Small dense-network toolkit with hand-written backpropagation.

pub mod adam;
pub mod linear;
pub mod lstm;
pub mod params;

pub use adam::{Adam, AdamConfig};
pub use linear::{Linear, Mlp, MlpCache};
pub use lstm::{LstmCell, LstmStep};
pub use params::{Parameters, Tensor, TensorMap};
