//! A scalable neural waveform speech codec.
//!
//! The codec combines a linear-predictive (LPC) analysis front end with one or
//! more compact convolutional autoencoder modules. Encoder outputs are
//! quantized with a trainable soft-to-hard scalar quantizer, entropy coded with
//! canonical Huffman codes, and packed into a self-contained container format.
//! Modules are cascaded by residual coding so the bitrate scales with the
//! number of modules.

pub mod bitstream;
pub mod cascade;
pub mod checkpoint;
pub mod diffgraph;
pub mod dsp;
pub mod error;
pub mod lpc;
pub mod model;
pub mod quant;
pub mod synth;
pub mod train;
pub mod wav;

pub use error::{CodecError, Result};
