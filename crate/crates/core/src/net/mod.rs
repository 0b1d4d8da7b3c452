//! Micro encoder-decoder networks with hand-derived forward/backward passes.
//!
//! Two networks share the same layer toolbox: the orientation estimation
//! network (residual depth-2 encoder-decoder with a unit-vector head and a
//! probability head) and the segmentation network (depth-3 U-shape with
//! oriented filtering injected at the input and at every skip junction, and
//! four deeply supervised outputs). Everything is generic over the scalar
//! type: training runs in f32, the gradient-check oracles instantiate f64.

pub mod adam;
pub mod layers;
pub mod model_io;
pub mod oen;
pub mod seg;
pub mod tensor;
pub mod train;

pub use adam::{poly_lr, Adam};
pub use oen::OrientNet;
pub use seg::{OfmMode, SegNet};
pub use tensor::{Scalar, Tensor};
pub use train::{infer, train_orient, train_seg, TrainConfig};
