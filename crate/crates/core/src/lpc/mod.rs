//! Linear-predictive analysis and synthesis with cross-frame windowing, LSP
//! representation, sub-frame residual extraction, and a quantization hook.

mod analysis;
mod lsp;

pub use analysis::{
    analyze_frame, compute_residual, cross_frame_window, repair_lsp, synthesize, LpcFrameState,
    ANALYSIS_LEN, SPAN_START,
};
pub use lsp::{lpc_to_lsp, lsp_to_lpc};

use crate::error::{CodecError, Result};

/// LPC order.
pub const ORDER: usize = 16;

/// Autocorrelation r[k] = sum_n x[n] x[n-k] for k = 0..=max_lag.
pub fn autocorrelation(x: &[f64], max_lag: usize) -> Vec<f64> {
    let mut r = vec![0.0; max_lag + 1];
    for (k, rk) in r.iter_mut().enumerate() {
        *rk = x[k..].iter().zip(x).map(|(a, b)| a * b).sum();
    }
    r
}

/// Levinson-Durbin recursion solving the Toeplitz normal equations.
///
/// Returns prediction coefficients `l` such that x_t ~ sum_k l[k-1] x_{t-k}.
/// Zero prediction error at an intermediate order exits early with the
/// remaining coefficients zero.
pub fn levinson_durbin(r: &[f64]) -> Result<Vec<f64>> {
    let order = r.len() - 1;
    if r[0] <= 0.0 {
        return Err(CodecError::Numerical(format!(
            "levinson_durbin: r[0] = {} is not positive",
            r[0]
        )));
    }
    let mut a = vec![0.0f64; order];
    let mut err = r[0];
    for i in 1..=order {
        if err <= 0.0 {
            break; // perfectly predictable at a lower order
        }
        let mut acc = r[i];
        for j in 1..i {
            acc -= a[j - 1] * r[i - j];
        }
        let k = acc / err;
        let mut next = a.clone();
        next[i - 1] = k;
        for j in 1..i {
            next[j - 1] = a[j - 1] - k * a[i - j - 1];
        }
        a = next;
        err *= 1.0 - k * k;
    }
    Ok(a)
}


#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;

    #[test]
    fn autocorr_zero_and_impulse() {
        assert!(autocorrelation(&vec![0.0; 64], 16).iter().all(|&v| v == 0.0));
        let mut imp = vec![0.0; 64];
        imp[0] = 1.0;
        let r = autocorrelation(&imp, 16);
        assert_eq!(r[0], 1.0);
        assert!(r[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn autocorr_white_noise() {
        let mut rng = StdRng::seed_from_u64(5);
        let x: Vec<f64> = (0..65536).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r = autocorrelation(&x, 16);
        for k in 1..=16 {
            assert!(r[k].abs() < 0.02 * r[0], "lag {}: {}", k, r[k] / r[0]);
        }
        assert!(r[1..].iter().all(|&v| v.abs() <= r[0]));
    }

    #[test]
    fn levinson_order_one() {
        let a = levinson_durbin(&[1.0, 0.5]).unwrap();
        assert!((a[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn levinson_order_two_markov() {
        // r = (1, 0.5, 0.25) is an AR(1) sequence: a = (0.5, 0)
        let a = levinson_durbin(&[1.0, 0.5, 0.25]).unwrap();
        assert!((a[0] - 0.5).abs() < 1e-12);
        assert!(a[1].abs() < 1e-12);
    }

    #[test]
    fn levinson_rejects_nonpositive_r0() {
        assert!(levinson_durbin(&[0.0, 0.1]).is_err());
        assert!(levinson_durbin(&[-1.0, 0.1]).is_err());
    }

    /// Dense-solver oracle: Gaussian elimination on the Toeplitz normal equations.
    pub(crate) fn toeplitz_solve_oracle(r: &[f64]) -> Vec<f64> {
        let p = r.len() - 1;
        let mut m = vec![vec![0.0f64; p + 1]; p];
        for i in 0..p {
            for j in 0..p {
                m[i][j] = r[(i as isize - j as isize).unsigned_abs()];
            }
            m[i][p] = r[i + 1];
        }
        for col in 0..p {
            let piv = (col..p).max_by(|&a, &b| m[a][col].abs().partial_cmp(&m[b][col].abs()).unwrap()).unwrap();
            m.swap(col, piv);
            for row in 0..p {
                if row != col {
                    let f = m[row][col] / m[col][col];
                    for j in col..=p {
                        m[row][j] -= f * m[col][j];
                    }
                }
            }
        }
        (0..p).map(|i| m[i][p] / m[i][i]).collect()
    }

    #[test]
    fn levinson_matches_dense_solve() {
        let mut rng = StdRng::seed_from_u64(42);
        for _ in 0..1000 {
            // positive-definite autocorrelation from a random signal
            let x: Vec<f64> = (0..256).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut r = autocorrelation(&x, 16);
            r[0] *= 1.0001;
            let a = levinson_durbin(&r).unwrap();
            let oracle = toeplitz_solve_oracle(&r);
            for (u, v) in a.iter().zip(&oracle) {
                assert!((u - v).abs() < 1e-8, "levinson {} vs oracle {}", u, v);
            }
        }
    }
}
