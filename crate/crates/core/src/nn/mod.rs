//! Minimal dense networks: ReLU hidden layers, linear output, hand-written
//! backpropagation and Adam. All arithmetic is `f64`.
//!
//! Flat parameter layout, frozen so gradient norms are comparable across
//! save/load: for each layer in order, the weight matrix row-major as
//! `[outputs][inputs]`, followed by its `outputs` biases.

mod adam;
mod checkpoint;
mod gemm;
mod network;

pub use adam::{adam_step, adam_step_slice, AdamConfig, AdamState};
pub use checkpoint::{NetworkCheckpoint, CHECKPOINT_FORMAT_VERSION};
pub use network::{
    backward, forward, init_params, l2_norm, shapes_for, GradReport, LayerShape, NetworkParams,
    Tape,
};
