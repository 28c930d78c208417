//! Deterministic signal-processing primitives: framing, windows, overlap-add,
//! fixed filters, and the mel filterbank analysis used by the training loss.

mod filters;
mod framing;
mod mel;
mod window;

pub use filters::{deemphasis, highpass, preemphasis, BiquadState, PREEMPHASIS_COEFF};
pub use framing::{denormalize, frame_signal, normalize, Frame, GainMeta};
pub use mel::{magnitude_spectrum, mel_spectrum, MelFilterbank, SPECTRUM_BINS};
pub use window::{crossfade_in, hann, overlap_add};

/// Coding frame length in samples (32 ms at 16 kHz).
pub const FRAME_LEN: usize = 512;
/// Overlap between adjacent synthesis frames.
pub const OVERLAP: usize = 32;
/// Hop between adjacent frames.
pub const HOP: usize = FRAME_LEN - OVERLAP;
/// Operating sample rate in Hz.
pub const SAMPLE_RATE: usize = 16_000;
