//! Minimal reverse-mode automatic differentiation for the U-Net: same-padded
//! convolutions, ReLU, 2×2 max pooling, bilinear upsampling, channel
//! concatenation, addition and an L1 loss, plus the RMSprop optimizer.

mod param;
mod real;
mod rmsprop;
mod tape;
mod tensor;

pub use param::Parameter;
pub use real::Real;
pub use rmsprop::{Rmsprop, RmspropConfig};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
