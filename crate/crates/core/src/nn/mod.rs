//! Minimal neural-network toolkit: autodiff tape, parameters, layers, Adam.

pub mod layers;
pub mod optim;
pub mod params;
pub mod tape;

pub use layers::{GatedAttention, Linear};
pub use optim::Adam;
pub use params::{ParamGrads, ParamId, ParamStore};
pub use tape::{sigmoid, Gradients, Tape, Var};
