use ndarray::Array2;
use rustfft::{num_complex::Complex, FftPlanner};

use crate::dsp::FRAME_LEN;
use crate::error::{CodecError, Result};

/// Magnitude-spectrum bins for a 512-point FFT.
pub const SPECTRUM_BINS: usize = FRAME_LEN / 2 + 1;

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filterbank mapping a 257-bin magnitude spectrum to
/// `bank_size` mel energies. Supported sizes: 8, 16, 32, 128.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    pub bank_size: usize,
    /// (bank_size, 257) non-negative weights.
    pub weights: Array2<f64>,
}

impl MelFilterbank {
    pub fn new(bank_size: usize) -> Result<Self> {
        if ![8, 16, 32, 128].contains(&bank_size) {
            return Err(CodecError::Config(format!(
                "unsupported mel bank size {}",
                bank_size
            )));
        }
        let sample_rate = 16_000.0;
        let nyquist = sample_rate / 2.0;
        let mel_max = hz_to_mel(nyquist);
        // bank_size + 2 equally spaced mel edge points
        let edges: Vec<f64> = (0..bank_size + 2)
            .map(|i| mel_to_hz(mel_max * i as f64 / (bank_size + 1) as f64))
            .collect();
        let bin_hz = sample_rate / FRAME_LEN as f64;
        let mut weights = Array2::<f64>::zeros((bank_size, SPECTRUM_BINS));
        for b in 0..bank_size {
            let (lo, mid, hi) = (edges[b], edges[b + 1], edges[b + 2]);
            for j in 0..SPECTRUM_BINS {
                let f = j as f64 * bin_hz;
                let w = if f <= lo || f >= hi {
                    0.0
                } else if f <= mid {
                    (f - lo) / (mid - lo)
                } else {
                    (hi - f) / (hi - mid)
                };
                weights[[b, j]] = w;
            }
            // Narrow filters can fall between bin centers; snap such a filter
            // to its nearest bin so every row sums to a positive value.
            if weights.row(b).sum() == 0.0 {
                let j = (mid / bin_hz).round() as usize;
                weights[[b, j.min(SPECTRUM_BINS - 1)]] = 1.0;
            }
        }
        Ok(MelFilterbank { bank_size, weights })
    }

    /// Center frequency (Hz) of filter `b`; strictly increasing over the bank.
    pub fn center_hz(&self, b: usize) -> f64 {
        let mel_max = hz_to_mel(8000.0);
        mel_to_hz(mel_max * (b + 1) as f64 / (self.bank_size + 1) as f64)
    }
}

/// 512-point FFT magnitude spectrum (257 bins) of one frame.
pub fn magnitude_spectrum(frame: &[f64]) -> Result<Vec<f64>> {
    if frame.len() != FRAME_LEN {
        return Err(CodecError::InvalidInput(format!(
            "mel_spectrum: frame length {} (expected {})",
            frame.len(),
            FRAME_LEN
        )));
    }
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(FRAME_LEN);
    let mut buf: Vec<Complex<f64>> = frame.iter().map(|&x| Complex::new(x, 0.0)).collect();
    fft.process(&mut buf);
    Ok(buf[..SPECTRUM_BINS].iter().map(|c| c.norm()).collect())
}

/// Mel-band energies of one 512-sample frame on linear magnitude.
pub fn mel_spectrum(frame: &[f64], bank: &MelFilterbank) -> Result<Vec<f64>> {
    let mag = magnitude_spectrum(frame)?;
    Ok((0..bank.bank_size)
        .map(|b| {
            bank.weights
                .row(b)
                .iter()
                .zip(&mag)
                .map(|(w, m)| w * m)
                .sum()
        })
        .collect())
}
