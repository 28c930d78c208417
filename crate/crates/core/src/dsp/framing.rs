use crate::dsp::{FRAME_LEN, HOP};
use crate::error::{CodecError, Result};

/// A fixed-length window of waveform samples; the unit of coding.
#[derive(Debug, Clone)]
pub struct Frame {
    /// Exactly `FRAME_LEN` samples, normalized amplitude.
    pub samples: Vec<f64>,
    /// Sample offset of this frame in the utterance.
    pub start_index: usize,
    /// Set when the frame extends past the signal end and was zero-padded.
    pub padded: bool,
}

/// Scale factors recorded by [`normalize`] for exact inversion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainMeta {
    /// Standard deviation of the raw signal (first scale factor).
    pub std: f64,
    /// Peak absolute amplitude after variance normalization (second factor).
    pub peak: f64,
    /// True for degenerate (all-zero) input left untouched.
    pub degenerate: bool,
}

/// Tile `signal` into frames of `FRAME_LEN` samples advancing by `HOP`.
///
/// The last partial frame is zero-padded and flagged. Signals shorter than
/// one frame are rejected.
pub fn frame_signal(signal: &[f64]) -> Result<Vec<Frame>> {
    if signal.len() < FRAME_LEN {
        return Err(CodecError::InvalidInput(format!(
            "signal of {} samples is shorter than one frame ({})",
            signal.len(),
            FRAME_LEN
        )));
    }
    let mut frames = Vec::new();
    let mut offset = 0usize;
    loop {
        if offset + FRAME_LEN <= signal.len() {
            frames.push(Frame {
                samples: signal[offset..offset + FRAME_LEN].to_vec(),
                start_index: offset,
                padded: false,
            });
            if offset + FRAME_LEN == signal.len() {
                break;
            }
            offset += HOP;
        } else {
            // Remaining tail: zero-pad a final flagged frame.
            let mut samples = signal[offset..].to_vec();
            samples.resize(FRAME_LEN, 0.0);
            frames.push(Frame {
                samples,
                start_index: offset,
                padded: true,
            });
            break;
        }
    }
    Ok(frames)
}

/// Scale to unit variance, then divide by the peak absolute amplitude.
///
/// All-zero input is returned unchanged with `degenerate` flagged.
pub fn normalize(signal: &[f64]) -> Result<(Vec<f64>, GainMeta)> {
    if signal.is_empty() {
        return Err(CodecError::InvalidInput("empty signal".into()));
    }
    let n = signal.len() as f64;
    let mean_sq = signal.iter().map(|x| x * x).sum::<f64>() / n;
    let std = mean_sq.sqrt();
    if std == 0.0 {
        return Ok((
            signal.to_vec(),
            GainMeta {
                std: 1.0,
                peak: 1.0,
                degenerate: true,
            },
        ));
    }
    let unit: Vec<f64> = signal.iter().map(|x| x / std).collect();
    let peak = unit.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let out: Vec<f64> = unit.iter().map(|x| x / peak).collect();
    Ok((
        out,
        GainMeta {
            std,
            peak,
            degenerate: false,
        },
    ))
}

/// Exact inverse of [`normalize`].
pub fn denormalize(signal: &[f64], meta: &GainMeta) -> Vec<f64> {
    if meta.degenerate {
        return signal.to_vec();
    }
    signal.iter().map(|x| x * meta.peak * meta.std).collect()
}
