use rand::prelude::*;

use crate::diffgraph::param::{ParamId, ParamStore};
use crate::error::{CodecError, Result};

/// Outcome of a finite-difference sweep.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
}

/// Compare analytic gradients already stored in `store` against central finite
/// differences of `loss_fn`, sampling up to `max_per_param` entries from each
/// listed parameter. Parameter values are restored after each probe.
///
/// The error metric is |g_fd - g_an| / max(|g_fd|, |g_an|). `abs_tol` is an
/// absolute slack covering finite-difference evaluation noise, which scales
/// with (loss magnitude) x (f64 epsilon) / step; entries whose difference
/// falls under it pass regardless of the relative error.
pub fn finite_difference_check(
    store: &mut ParamStore<f64>,
    ids: &[ParamId],
    max_per_param: usize,
    step: f64,
    rel_tol: f64,
    abs_tol: f64,
    rng: &mut StdRng,
    mut loss_fn: impl FnMut(&ParamStore<f64>) -> f64,
) -> Result<GradCheckReport> {
    let mut checked = 0usize;
    let mut max_rel_err = 0.0f64;
    for &id in ids {
        let n = store.value(id).len();
        let mut picks: Vec<usize> = (0..n).collect();
        if n > max_per_param {
            picks.shuffle(rng);
            picks.truncate(max_per_param);
        }
        for flat in picks {
            let (rows, cols) = {
                let d = store.value(id).dim();
                (d.0, d.1)
            };
            let idx = (flat / cols, flat % cols);
            debug_assert!(idx.0 < rows);
            let orig = store.value(id)[idx];
            let g_an = store.grad(id)[idx];
            let probe = |store: &mut ParamStore<f64>, loss_fn: &mut dyn FnMut(&ParamStore<f64>) -> f64, h: f64| {
                store.value_mut(id)[idx] = orig + h;
                let up = loss_fn(store);
                store.value_mut(id)[idx] = orig - h;
                let down = loss_fn(store);
                store.value_mut(id)[idx] = orig;
                (up - down) / (2.0 * h)
            };
            // A wrong analytic gradient disagrees with finite differences at
            // every step size; truncation and roundoff artifacts are
            // step-dependent, so a probe that fails at the base step gets two
            // retries on a step ladder before the check is declared failed.
            let mut best_rel = f64::INFINITY;
            let mut last_fd = 0.0;
            let mut passed = false;
            for h in [step, step * 4.0, step * 0.25, step * 0.0625, step / 64.0] {
                let g_fd = probe(store, &mut loss_fn, h);
                let denom = g_fd.abs().max(g_an.abs());
                let err = (g_fd - g_an).abs();
                let rel = if denom > 0.0 { err / denom } else { 0.0 };
                if rel < best_rel {
                    best_rel = rel;
                    last_fd = g_fd;
                }
                if err <= rel_tol * denom + abs_tol {
                    if denom > 1e-6 {
                        max_rel_err = max_rel_err.max(rel);
                    }
                    passed = true;
                    break;
                }
            }
            if !passed {
                return Err(CodecError::Numerical(format!(
                    "gradient check failed for {}[{},{}]: analytic {:.6e} vs finite-difference {:.6e} (rel err {:.3e})",
                    store.name(id),
                    idx.0,
                    idx.1,
                    g_an,
                    last_fd,
                    best_rel
                )));
            }
            checked += 1;
        }
    }
    Ok(GradCheckReport { checked, max_rel_err })
}
