/// Pre-emphasis coefficient: y[n] = x[n] - 0.68 x[n-1].
pub const PREEMPHASIS_COEFF: f64 = 0.68;

// High-pass biquad, AMR-WB sign pattern.
const HP_B: [f64; 3] = [0.989502, -1.979004, 0.989502];
const HP_A: [f64; 2] = [-1.978882, 0.979126]; // denominator 1 + a1 z^-1 + a2 z^-2

/// State of the high-pass biquad (direct form II transposed).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BiquadState {
    pub z1: f64,
    pub z2: f64,
}

/// High-pass filter removing DC and infrasonic content before LPC analysis.
///
/// State is explicit so callers can chain across chunks.
pub fn highpass(signal: &[f64], state: BiquadState) -> (Vec<f64>, BiquadState) {
    let mut st = state;
    let mut out = Vec::with_capacity(signal.len());
    for &x in signal {
        let y = HP_B[0] * x + st.z1;
        st.z1 = HP_B[1] * x - HP_A[0] * y + st.z2;
        st.z2 = HP_B[2] * x - HP_A[1] * y;
        out.push(y);
    }
    (out, st)
}

/// First-order pre-emphasis; `prev` is the last input sample of the previous chunk.
pub fn preemphasis(signal: &[f64], prev: f64) -> (Vec<f64>, f64) {
    let mut last = prev;
    let mut out = Vec::with_capacity(signal.len());
    for &x in signal {
        out.push(x - PREEMPHASIS_COEFF * last);
        last = x;
    }
    (out, last)
}

/// Exact IIR inverse of [`preemphasis`]; `prev` is the last output sample of
/// the previous chunk.
pub fn deemphasis(signal: &[f64], prev: f64) -> (Vec<f64>, f64) {
    let mut last = prev;
    let mut out = Vec::with_capacity(signal.len());
    for &x in signal {
        last = x + PREEMPHASIS_COEFF * last;
        out.push(last);
    }
    (out, last)
}
