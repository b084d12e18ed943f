//! Neural machine translation core.
//!
//! Everything in this crate is pure computation over in-memory values and
//! only needs an allocator: dense tensors with reverse-mode differentiation,
//! the three encoder-decoder families (attentional LSTM, convolutional,
//! Transformer), optimizers and schedules, beam search, subword
//! segmentation, corpus filters, BLEU and the experiment configuration
//! format. File and process handling lives in the `nmt` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod checkpoint;
pub mod corpus;
pub mod decoding;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod graph;
pub mod models;
pub mod nn;
pub mod params;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use graph::{GradientMap, Graph, Var};
pub use params::{ParamGrads, ParamStore};
pub use scalar::Scalar;
pub use tensor::Tensor;

/// Reserved token ids shared by every vocabulary and model.
pub mod special {
    pub const PAD: u32 = 0;
    pub const BOS: u32 = 1;
    pub const EOS: u32 = 2;
    pub const UNK: u32 = 3;
    pub const RESERVED: usize = 4;
}
