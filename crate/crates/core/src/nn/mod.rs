//! Fully connected maps with hand-written first- and second-order derivatives.

mod checkpoint;
mod map;
mod mlp;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT_VERSION};
pub use map::{MapModel, Parameterization};
pub use mlp::{Activation, Mlp};
