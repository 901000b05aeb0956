//! Small CPU neural-network toolkit: flat f64 parameter vectors, im2col
//! convolutions, MLPs and Adam.

pub mod layers;
pub mod net;
pub mod optim;

pub use layers::{Conv, Dense};
pub use net::{Mlp, MultiHeadArch, MultiHeadNet, Trunk};
pub use optim::{fit, Adam, FitLog, Schedule};
