//! Soft-to-hard scalar quantization.
//!
//! The encoder output is compared against K trainable centroids; a softmax
//! over negative scaled distances gives a differentiable soft assignment used
//! during training, while inference snaps to the nearest centroid. The
//! sqrt-penalty pushes soft assignments toward one-hot, and the code
//! distribution entropy estimates the achievable bitrate.

use ndarray::{Array1, Array2, Axis};

use crate::error::{CodecError, Result};

/// Absolute distances D[n][k] = |h_n - beta_k|.
pub fn distance_matrix(values: &[f64], centroids: &[f64]) -> Array2<f64> {
    Array2::from_shape_fn((values.len(), centroids.len()), |(n, k)| {
        (values[n] - centroids[k]).abs()
    })
}

/// Row-wise softmax of -alpha * D.
pub fn soft_assign(distances: &Array2<f64>, alpha: f64) -> Array2<f64> {
    let mut out = distances.mapv(|d| -alpha * d);
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Nearest-centroid index per row; ties resolve to the lowest index.
pub fn hard_assign(distances: &Array2<f64>) -> Vec<u16> {
    distances
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0usize;
            let mut best_d = row[0];
            for (k, &d) in row.iter().enumerate().skip(1) {
                if d < best_d {
                    best = k;
                    best_d = d;
                }
            }
            best as u16
        })
        .collect()
}

/// Soft quantization sum_k A[n][k] * beta_k (the training-path output).
pub fn soft_quantize(assign: &Array2<f64>, centroids: &[f64]) -> Vec<f64> {
    let beta = Array1::from_vec(centroids.to_vec());
    assign.dot(&beta).to_vec()
}

/// Sparsity penalty (1/N) sum_n sum_k sqrt(A[n][k]); ranges over [1, sqrt(K)].
pub fn penalty_lq(assign: &Array2<f64>) -> f64 {
    assign.mapv(f64::sqrt).sum() / assign.nrows() as f64
}

/// Shannon entropy in bits of the column-mean code distribution of a (soft or
/// one-hot) assignment matrix. Ranges over [0, log2 K].
pub fn entropy_estimate(assign: &Array2<f64>) -> f64 {
    let p = assign.mean_axis(Axis(0)).expect("non-empty assignment matrix");
    p.iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.log2())
        .sum()
}

/// One-hot rows for hard code indices.
pub fn one_hot(indices: &[u16], num_codes: usize) -> Array2<f64> {
    let mut m = Array2::zeros((indices.len(), num_codes));
    for (n, &k) in indices.iter().enumerate() {
        m[[n, k as usize]] = 1.0;
    }
    m
}

/// Bits per second for `bits_per_code` codes, `codes_per_frame` per frame,
/// sample rate `f`, frame length `t`, overlap `o`: g * n * f / (t - o).
pub fn bitrate(bits_per_code: f64, codes_per_frame: usize, sample_rate: usize, frame_len: usize, overlap: usize) -> f64 {
    bits_per_code * codes_per_frame as f64 * sample_rate as f64 / (frame_len - overlap) as f64
}

/// Bits per second for a whole frame payload of `bits_per_frame` bits.
pub fn frame_bits_to_bps(bits_per_frame: f64, sample_rate: usize, frame_len: usize, overlap: usize) -> f64 {
    bits_per_frame * sample_rate as f64 / (frame_len - overlap) as f64
}

/// Trainable quantizer state for one coding module.
#[derive(Debug, Clone)]
pub struct QuantizerState {
    pub centroids: Vec<f64>,
    pub alpha: f64,
}

impl QuantizerState {
    /// Centroids uniform over [lo, hi], deterministic spacing.
    pub fn uniform(num_codes: usize, lo: f64, hi: f64, alpha: f64) -> Result<Self> {
        if num_codes < 2 || !(hi > lo) {
            return Err(CodecError::Config(format!(
                "quantizer: need >= 2 codes and lo < hi, got {} in [{}, {}]",
                num_codes, lo, hi
            )));
        }
        let step = (hi - lo) / (num_codes - 1) as f64;
        Ok(QuantizerState {
            centroids: (0..num_codes).map(|k| lo + step * k as f64).collect(),
            alpha,
        })
    }

    pub fn num_codes(&self) -> usize {
        self.centroids.len()
    }

    /// Hard (inference) quantization: nearest-centroid indices.
    pub fn encode(&self, values: &[f64]) -> Vec<u16> {
        hard_assign(&distance_matrix(values, &self.centroids))
    }

    /// Map code indices back to centroid values.
    pub fn decode(&self, indices: &[u16]) -> Result<Vec<f64>> {
        indices
            .iter()
            .map(|&k| {
                self.centroids
                    .get(k as usize)
                    .copied()
                    .ok_or_else(|| CodecError::Bitstream(format!("code index {} out of range", k)))
            })
            .collect()
    }
}
