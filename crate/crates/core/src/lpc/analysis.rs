use crate::dsp::{hann, FRAME_LEN};
use crate::error::{CodecError, Result};
use crate::lpc::{autocorrelation, levinson_durbin, lpc_to_lsp, ORDER};

/// Length of the LPC analysis span: the coding frame plus context.
pub const ANALYSIS_LEN: usize = 1024;
/// Offset of the decoded 512-sample span inside the analysis buffer.
pub const SPAN_START: usize = 256;

const SUBFRAME_LEN: usize = 128;
const SUBFRAME_HOP: usize = 64;
const NUM_SUBFRAMES: usize = 7;

/// Per-frame LPC analysis output.
#[derive(Debug, Clone)]
pub struct LpcFrameState {
    /// 16 prediction coefficients l_k.
    pub coeffs: Vec<f64>,
    /// 16 strictly increasing LSP angles in (0, pi).
    pub lsp: Vec<f64>,
    /// Centroid indices assigned to each LSP value, when quantized.
    pub lsp_indices: Vec<u16>,
    /// 512-sample residual aligned to the frame's decoded span.
    pub residual: Vec<f64>,
    /// Offset of the 1024-sample analysis span in the utterance.
    pub analysis_window_start: isize,
}

/// Window a 1024-sample analysis span: flat in the middle 50%, first and last
/// 256 samples tapered by the left/right halves of a 512-point Hann window.
pub fn cross_frame_window(samples: &[f64]) -> Result<Vec<f64>> {
    if samples.len() != ANALYSIS_LEN {
        return Err(CodecError::InvalidInput(format!(
            "cross_frame_window: got {} samples, expected {}",
            samples.len(),
            ANALYSIS_LEN
        )));
    }
    let h = hann(FRAME_LEN);
    let mut out = samples.to_vec();
    for n in 0..SPAN_START {
        out[n] *= h[n];
        out[ANALYSIS_LEN - 1 - n] *= h[n];
    }
    Ok(out)
}

/// Full LPC analysis of one 1024-sample buffer: windowing, autocorrelation
/// with a small white-noise floor, Levinson-Durbin, and LSP conversion.
pub fn analyze_frame(buffer: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let windowed = cross_frame_window(buffer)?;
    let mut r = autocorrelation(&windowed, ORDER);
    if r[0] <= 0.0 {
        // silent span: flat filter
        let coeffs = vec![0.0; ORDER];
        let lsp = lpc_to_lsp(&coeffs)?;
        return Ok((coeffs, lsp));
    }
    r[0] *= 1.0001;
    let coeffs = levinson_durbin(&r)?;
    let lsp = lpc_to_lsp(&coeffs)?;
    Ok((coeffs, lsp))
}

/// Enforce strict monotonicity on quantized LSP values: sort and push apart
/// any pair closer than 1e-4 rad, keeping everything inside (0, pi).
pub fn repair_lsp(lsp: &mut [f64]) {
    const MIN_GAP: f64 = 1e-4;
    lsp.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let lo = MIN_GAP;
    for i in 0..lsp.len() {
        let floor = if i == 0 { lo } else { lsp[i - 1] + MIN_GAP };
        if lsp[i] < floor {
            lsp[i] = floor;
        }
    }
    // walk back from the top if we ran past pi
    let hi = std::f64::consts::PI - MIN_GAP;
    for i in (0..lsp.len()).rev() {
        let ceil = if i == lsp.len() - 1 { hi } else { lsp[i + 1] - MIN_GAP };
        if lsp[i] > ceil {
            lsp[i] = ceil;
        }
    }
}

/// Sub-frame window: raised-cosine crossfades over the 64-sample overlaps,
/// untapered at the outer edges of the 512-sample span, summing to exactly 1.
fn subframe_window(index: usize) -> Vec<f64> {
    let fade: Vec<f64> = (0..SUBFRAME_HOP)
        .map(|j| 0.5 * (1.0 - (std::f64::consts::PI * (j as f64 + 0.5) / SUBFRAME_HOP as f64).cos()))
        .collect();
    let mut w = vec![1.0f64; SUBFRAME_LEN];
    if index > 0 {
        for j in 0..SUBFRAME_HOP {
            w[j] = fade[j];
        }
    }
    if index + 1 < NUM_SUBFRAMES {
        for j in 0..SUBFRAME_HOP {
            w[SUBFRAME_LEN - SUBFRAME_HOP + j] = 1.0 - fade[j];
        }
    }
    w
}

/// Inverse-filter the central 512-sample span into a residual, assembled from
/// 7 half-overlapped sub-frames. Each sub-frame's filter is primed with the
/// true preceding samples from the analysis buffer, so quantization error in
/// `coeffs` is absorbed by the residual.
pub fn compute_residual(samples: &[f64], coeffs: &[f64]) -> Result<Vec<f64>> {
    if samples.len() != ANALYSIS_LEN {
        return Err(CodecError::InvalidInput(format!(
            "compute_residual: got {} samples, expected {}",
            samples.len(),
            ANALYSIS_LEN
        )));
    }
    if coeffs.len() != ORDER {
        return Err(CodecError::InvalidInput(format!(
            "compute_residual: got {} coefficients, expected {}",
            coeffs.len(),
            ORDER
        )));
    }
    let mut residual = vec![0.0f64; FRAME_LEN];
    for s in 0..NUM_SUBFRAMES {
        let start = SPAN_START + s * SUBFRAME_HOP;
        let w = subframe_window(s);
        for j in 0..SUBFRAME_LEN {
            let t = start + j;
            let mut e = samples[t];
            for (k, &l) in coeffs.iter().enumerate() {
                e -= l * samples[t - 1 - k];
            }
            residual[t - SPAN_START] += w[j] * e;
        }
    }
    Ok(residual)
}

/// All-pole synthesis x_t = e_t + sum_k l_k x_{t-k}, continuous across frames
/// through `history` (the last 16 synthesized samples of the previous frame,
/// most recent last).
pub fn synthesize(residual: &[f64], coeffs: &[f64], history: &[f64]) -> Result<Vec<f64>> {
    if coeffs.len() != ORDER || history.len() != ORDER {
        return Err(CodecError::InvalidInput(
            "synthesize: coefficient and history length must equal the LPC order".into(),
        ));
    }
    let mut out = Vec::with_capacity(residual.len());
    for (t, &e) in residual.iter().enumerate() {
        let mut x = e;
        for (k, &l) in coeffs.iter().enumerate() {
            let past = if t > k {
                out[t - 1 - k]
            } else {
                history[ORDER - 1 - (k - t)]
            };
            x += l * past;
        }
        out.push(x);
    }
    Ok(out)
}
