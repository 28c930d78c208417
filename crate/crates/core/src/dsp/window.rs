use crate::dsp::{Frame, FRAME_LEN, HOP, OVERLAP};
use crate::error::{CodecError, Result};

/// Symmetric Hann window: w[n] = 0.5 (1 - cos(2 pi n / (N - 1))).
pub fn hann(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    (0..len)
        .map(|n| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * n as f64 / (len - 1) as f64).cos()))
        .collect()
}

/// Raised-cosine fade-in of `len` samples rising from 0 toward 1.
///
/// The matching fade-out is `1 - crossfade_in(len)[j]`, so overlapped
/// amplitudes sum to exactly 1.
pub fn crossfade_in(len: usize) -> Vec<f64> {
    (0..len)
        .map(|j| 0.5 * (1.0 - (std::f64::consts::PI * j as f64 / (len - 1) as f64).cos()))
        .collect()
}

/// Reassemble decoded frames by crossfading each 32-sample overlap.
///
/// No taper is applied at the outer signal boundaries, so a single frame
/// passes through unchanged. Output length is `512 + 480 (n - 1)`.
pub fn overlap_add(frames: &[Frame]) -> Result<Vec<f64>> {
    if frames.is_empty() {
        return Ok(Vec::new());
    }
    for f in frames {
        if f.samples.len() != FRAME_LEN {
            return Err(CodecError::InvalidInput(format!(
                "overlap_add: frame of length {} (expected {})",
                f.samples.len(),
                FRAME_LEN
            )));
        }
    }
    let n = frames.len();
    let out_len = FRAME_LEN + HOP * (n - 1);
    let fade = crossfade_in(OVERLAP);
    let mut out = vec![0.0f64; out_len];
    for (i, f) in frames.iter().enumerate() {
        let base = i * HOP;
        for (j, &s) in f.samples.iter().enumerate() {
            let mut w = 1.0;
            if i > 0 && j < OVERLAP {
                w *= fade[j];
            }
            if i + 1 < n && j >= FRAME_LEN - OVERLAP {
                w *= 1.0 - fade[j - (FRAME_LEN - OVERLAP)];
            }
            out[base + j] += w * s;
        }
    }
    Ok(out)
}
