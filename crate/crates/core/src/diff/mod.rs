//! Reverse-mode differentiable computation: a recording tape over dense `f64`
//! tensors, the layer operations the encoders need, an Adam optimizer and the
//! checkpoint format.

mod adam;
pub mod checkpoint;
mod conv;
mod norm;
mod params;
mod tape;

pub use adam::{Adam, AdamConfig};
pub use conv::{out_extent, ConvGeom};
pub use norm::{BatchStats, BnMode};
pub use params::{fan_in_uniform, ParamStore, Parameter};
pub use tape::{BnArgs, Gradients, Tape, Var};

#[cfg(test)]
mod tests;
