//! LPC <-> line spectral pair conversion.
//!
//! With A(z) = 1 - sum_k l_k z^-k, the sum and difference polynomials
//! P(z) = A(z) + z^-17 A(1/z) and Q(z) = A(z) - z^-17 A(1/z) have their roots
//! interleaved on the unit circle for a stable filter. After deflating the
//! trivial roots at z = -1 (P) and z = +1 (Q), each symmetric polynomial is
//! evaluated as a cosine series and bracketed on a 512-point grid (densified
//! when close root pairs evade bracketing), then refined by bisection.

use crate::error::{CodecError, Result};
use crate::lpc::ORDER;

const GRID_POINTS: usize = 512;
const MAX_GRID_POINTS: usize = 512 * 8 * 8 * 8;
const HALF: usize = ORDER / 2;

/// Cosine-series evaluation of a symmetric degree-16 polynomial at frequency w:
/// C(w) = 2 sum_{k=0}^{7} c_k cos((8-k) w) + c_8.
fn eval_sym(c: &[f64; HALF + 1], w: f64) -> f64 {
    let mut acc = c[HALF];
    for k in 0..HALF {
        acc += 2.0 * c[k] * ((HALF - k) as f64 * w).cos();
    }
    acc
}

fn deflated_polys(coeffs: &[f64]) -> ([f64; HALF + 1], [f64; HALF + 1]) {
    // a[0] = 1, a[k] = -l_k
    let mut a = [0.0f64; ORDER + 2];
    a[0] = 1.0;
    for (k, &l) in coeffs.iter().enumerate() {
        a[k + 1] = -l;
    }
    // p_j = a_j + a_{17-j}, q_j = a_j - a_{17-j}, j = 0..=17 (a_17 = 0)
    let mut p = [0.0f64; ORDER + 2];
    let mut q = [0.0f64; ORDER + 2];
    for j in 0..=ORDER + 1 {
        p[j] = a[j] + a[ORDER + 1 - j];
        q[j] = a[j] - a[ORDER + 1 - j];
    }
    // deflate P by (1 + z^-1) and Q by (1 - z^-1); keep first half + middle
    let mut pd = [0.0f64; HALF + 1];
    let mut qd = [0.0f64; HALF + 1];
    let mut prev_p = 0.0;
    let mut prev_q = 0.0;
    for j in 0..=HALF {
        let cur_p = p[j] - prev_p;
        let cur_q = q[j] + prev_q;
        pd[j] = cur_p;
        qd[j] = cur_q;
        prev_p = cur_p;
        prev_q = cur_q;
    }
    (pd, qd)
}

fn find_roots(c: &[f64; HALF + 1], grid_points: usize) -> Vec<f64> {
    let mut roots = Vec::with_capacity(HALF);
    let step = std::f64::consts::PI / grid_points as f64;
    let mut w0 = 0.0f64;
    let mut f0 = eval_sym(c, w0);
    for i in 1..=grid_points {
        let w1 = step * i as f64;
        let f1 = eval_sym(c, w1);
        if f0 == 0.0 {
            roots.push(w0);
        } else if f0 * f1 < 0.0 {
            // bisection refine
            let (mut lo, mut hi, mut flo) = (w0, w1, f0);
            while hi - lo > 1e-12 {
                let mid = 0.5 * (lo + hi);
                let fm = eval_sym(c, mid);
                if flo * fm <= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                    flo = fm;
                }
            }
            roots.push(0.5 * (lo + hi));
        }
        w0 = w1;
        f0 = f1;
    }
    roots
}

/// Convert 16 prediction coefficients to 16 strictly increasing LSP angles in
/// (0, pi). Rejects unstable filters (root interlacing fails).
pub fn lpc_to_lsp(coeffs: &[f64]) -> Result<Vec<f64>> {
    if coeffs.len() != ORDER {
        return Err(CodecError::InvalidInput(format!(
            "lpc_to_lsp: got {} coefficients, expected {}",
            coeffs.len(),
            ORDER
        )));
    }
    let (pd, qd) = deflated_polys(coeffs);
    // Closely spaced root pairs can fall inside one grid cell without a sign
    // change; densify until all roots bracket, then give up.
    let mut pr = Vec::new();
    let mut qr = Vec::new();
    let mut grid = GRID_POINTS;
    while grid <= MAX_GRID_POINTS {
        if pr.len() != HALF {
            pr = find_roots(&pd, grid);
        }
        if qr.len() != HALF {
            qr = find_roots(&qd, grid);
        }
        if pr.len() == HALF && qr.len() == HALF {
            break;
        }
        grid *= 8;
    }
    if pr.len() != HALF || qr.len() != HALF {
        return Err(CodecError::Numerical(format!(
            "lpc_to_lsp: root finding located {}+{} roots (expected {}+{}); \
             filter is unstable or ill-conditioned",
            pr.len(),
            qr.len(),
            HALF,
            HALF
        )));
    }
    // interleave: smallest root comes from P, then alternate
    let mut lsp = Vec::with_capacity(ORDER);
    for i in 0..HALF {
        lsp.push(pr[i]);
        lsp.push(qr[i]);
    }
    for w in lsp.windows(2) {
        if w[1] <= w[0] {
            return Err(CodecError::Numerical(
                "lpc_to_lsp: roots do not interlace; filter is unstable".into(),
            ));
        }
    }
    if lsp[0] <= 0.0 || *lsp.last().unwrap() >= std::f64::consts::PI {
        return Err(CodecError::Numerical("lpc_to_lsp: root outside (0, pi)".into()));
    }
    Ok(lsp)
}

/// Reconstruct 16 prediction coefficients from strictly increasing LSP angles.
pub fn lsp_to_lpc(lsp: &[f64]) -> Result<Vec<f64>> {
    if lsp.len() != ORDER {
        return Err(CodecError::InvalidInput(format!(
            "lsp_to_lpc: got {} values, expected {}",
            lsp.len(),
            ORDER
        )));
    }
    for w in lsp.windows(2) {
        if w[1] <= w[0] {
            return Err(CodecError::InvalidInput(
                "lsp_to_lpc: values must be strictly increasing".into(),
            ));
        }
    }
    if lsp[0] <= 0.0 || lsp[ORDER - 1] >= std::f64::consts::PI {
        return Err(CodecError::InvalidInput(
            "lsp_to_lpc: values must lie in (0, pi)".into(),
        ));
    }
    // P roots sit at even positions, Q roots at odd positions.
    let poly_from_roots = |ws: &[f64]| -> Vec<f64> {
        // product of (1 - 2 cos w z^-1 + z^-2)
        let mut poly = vec![1.0f64];
        for &w in ws {
            let c = -2.0 * w.cos();
            let mut next = vec![0.0f64; poly.len() + 2];
            for (i, &v) in poly.iter().enumerate() {
                next[i] += v;
                next[i + 1] += c * v;
                next[i + 2] += v;
            }
            poly = next;
        }
        poly
    };
    let pws: Vec<f64> = lsp.iter().step_by(2).copied().collect();
    let qws: Vec<f64> = lsp.iter().skip(1).step_by(2).copied().collect();
    let pp = poly_from_roots(&pws); // degree 16
    let qp = poly_from_roots(&qws);
    // restore trivial roots: P *= (1 + z^-1), Q *= (1 - z^-1)
    let mut pfull = vec![0.0f64; ORDER + 2];
    let mut qfull = vec![0.0f64; ORDER + 2];
    for i in 0..=ORDER {
        pfull[i] += pp[i];
        pfull[i + 1] += pp[i];
        qfull[i] += qp[i];
        qfull[i + 1] -= qp[i];
    }
    // A(z) = (P + Q) / 2; l_k = -a_k
    Ok((1..=ORDER).map(|k| -0.5 * (pfull[k] + qfull[k])).collect())
}
