//! Brute-force reference computations.
//!
//! Nothing here shares code with the analytic paths it is used to check:
//! statistics are direct double loops over the raw values and gradients are
//! central finite differences.

use crate::dal::{MixedStats, ALPHA_MAX, ALPHA_MIN};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use twofloat::TwoFloat;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdConfig {
    pub step: f64,
    pub rel_tol: f64,
    pub abs_floor: f64,
}

impl Default for FdConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            rel_tol: 1e-5,
            abs_floor: 1e-8,
        }
    }
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Largest [`rel_error`] over paired entries.
pub fn max_rel_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len(), "max_rel_error length mismatch");
    a.iter()
        .zip(b)
        .map(|(&x, &y)| rel_error(x, y, floor))
        .fold(0.0, f64::max)
}

/// Central-difference gradient of `f` at `at`.
pub fn fd_gradient(mut f: impl FnMut(&[f64]) -> f64, at: &[f64], cfg: &FdConfig) -> Result<Vec<f64>> {
    if cfg.step <= 0.0 {
        return Err(Error::Evaluation(format!("step must be positive, got {}", cfg.step)));
    }
    let mut x = at.to_vec();
    let mut grad = Vec::with_capacity(at.len());
    for i in 0..at.len() {
        x[i] = at[i] + cfg.step;
        let hi = f(&x);
        x[i] = at[i] - cfg.step;
        let lo = f(&x);
        x[i] = at[i];
        if !hi.is_finite() || !lo.is_finite() {
            return Err(Error::Evaluation(format!("non-finite value around component {i}")));
        }
        grad.push((hi - lo) / (2.0 * cfg.step));
    }
    Ok(grad)
}

/// Central differences of a double-double objective. Values are taken
/// relative to `f(at)` before rounding to f64, so the rounding error scales
/// with the change in `f` instead of its magnitude.
pub fn fd_gradient_wide(mut f: impl FnMut(&[f64]) -> TwoFloat, at: &[f64], cfg: &FdConfig) -> Result<Vec<f64>> {
    let base = f(at);
    fd_gradient(|x| f64::from(f(x) - base), at, cfg)
}

/// Value at `(sample, channel)` pooled index `p` (spatial position).
fn at(x: &Tensor, i: usize, c: usize, p: usize) -> f64 {
    let (ch, s) = (x.channels(), x.spatial());
    x.data()[(i * ch + c) * s + p]
}

/// The four mixed statistics as literal weighted sums, validated like the
/// production path.
pub fn brute_statistics(x_s: &Tensor, x_t: &Tensor, alpha: f64, eps: f64) -> Result<MixedStats> {
    if x_s.batch() == 0 {
        return Err(Error::EmptyDomain("source"));
    }
    if x_t.batch() == 0 {
        return Err(Error::EmptyDomain("target"));
    }
    if !(ALPHA_MIN..=ALPHA_MAX).contains(&alpha) {
        return Err(Error::Range {
            name: "alpha",
            value: alpha,
            lo: ALPHA_MIN,
            hi: ALPHA_MAX,
        });
    }
    Ok(brute_statistics_unchecked(x_s, x_t, alpha, eps))
}

/// Same sums without the range check. Finite differences in `alpha` at the
/// interval ends need to step just outside it.
pub fn brute_statistics_unchecked(x_s: &Tensor, x_t: &Tensor, alpha: f64, eps: f64) -> MixedStats {
    let channels = x_s.channels();
    let spatial = x_s.spatial();
    let ns = (x_s.batch() * spatial) as f64;
    let nt = (x_t.batch() * spatial) as f64;
    let beta = 1.0 - alpha;
    let mut out = MixedStats {
        mu_st: vec![],
        var_st: vec![],
        mu_ts: vec![],
        var_ts: vec![],
        eps,
        alpha_used: alpha,
    };
    for c in 0..channels {
        let mut sum_s = 0.0;
        for i in 0..x_s.batch() {
            for p in 0..spatial {
                sum_s += at(x_s, i, c, p);
            }
        }
        let mut sum_t = 0.0;
        for i in 0..x_t.batch() {
            for p in 0..spatial {
                sum_t += at(x_t, i, c, p);
            }
        }
        let mu_st = alpha / ns * sum_s + beta / nt * sum_t;
        let mu_ts = beta / ns * sum_s + alpha / nt * sum_t;
        let (mut dev_s_st, mut dev_s_ts) = (0.0, 0.0);
        for i in 0..x_s.batch() {
            for p in 0..spatial {
                let v = at(x_s, i, c, p);
                dev_s_st += (v - mu_st) * (v - mu_st);
                dev_s_ts += (v - mu_ts) * (v - mu_ts);
            }
        }
        let (mut dev_t_st, mut dev_t_ts) = (0.0, 0.0);
        for i in 0..x_t.batch() {
            for p in 0..spatial {
                let v = at(x_t, i, c, p);
                dev_t_st += (v - mu_st) * (v - mu_st);
                dev_t_ts += (v - mu_ts) * (v - mu_ts);
            }
        }
        out.mu_st.push(mu_st);
        out.mu_ts.push(mu_ts);
        out.var_st.push(alpha / ns * dev_s_st + beta / nt * dev_t_st);
        out.var_ts.push(beta / ns * dev_s_ts + alpha / nt * dev_t_ts);
    }
    out
}

/// Reference DA-layer forward built on [`brute_statistics_unchecked`].
pub fn brute_da_forward(x_s: &Tensor, x_t: &Tensor, alpha: f64, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let st = brute_statistics_unchecked(x_s, x_t, alpha, eps);
    let norm = |x: &Tensor, mu: &[f64], var: &[f64]| {
        let mut out = Vec::with_capacity(x.len());
        for i in 0..x.batch() {
            for c in 0..x.channels() {
                for p in 0..x.spatial() {
                    out.push((at(x, i, c, p) - mu[c]) / (eps + var[c]).sqrt());
                }
            }
        }
        out
    };
    (norm(x_s, &st.mu_st, &st.var_st), norm(x_t, &st.mu_ts, &st.var_ts))
}

/// `<g_s, y_s> + <g_t, y_t>` over the reference DA forward, evaluated in
/// double-double arithmetic with unchecked `alpha`. With two rows per domain
/// and alpha = 1 the outputs saturate at +-1 and input gradients drop to
/// ~1e-8, below what f64 differences of an O(1) objective can resolve.
pub fn da_objective_wide(x_s: &Tensor, x_t: &Tensor, alpha: f64, eps: f64, g_s: &[f64], g_t: &[f64]) -> TwoFloat {
    let w = TwoFloat::from;
    let spatial = x_s.spatial();
    let inv_ns = wide_recip(w((x_s.batch() * spatial) as f64));
    let inv_nt = wide_recip(w((x_t.batch() * spatial) as f64));
    let (a, b) = (w(alpha), w(1.0) - w(alpha));
    let values = |x: &Tensor, c: usize| -> Vec<(usize, TwoFloat)> {
        (0..x.batch())
            .flat_map(|i| (0..spatial).map(move |p| (i, p)))
            .map(|(i, p)| ((i * x.channels() + c) * spatial + p, w(at(x, i, c, p))))
            .collect()
    };
    let mut total = w(0.0);
    for c in 0..x_s.channels() {
        let (vs, vt) = (values(x_s, c), values(x_t, c));
        let sum = |v: &[(usize, TwoFloat)]| v.iter().fold(w(0.0), |acc, &(_, x)| acc + x);
        let dev = |v: &[(usize, TwoFloat)], mu: TwoFloat| {
            v.iter().fold(w(0.0), |acc, &(_, x)| acc + (x - mu) * (x - mu))
        };
        let (sum_s, sum_t) = (sum(&vs), sum(&vt));
        let mu_st = a * sum_s * inv_ns + b * sum_t * inv_nt;
        let mu_ts = b * sum_s * inv_ns + a * sum_t * inv_nt;
        let var_st = a * dev(&vs, mu_st) * inv_ns + b * dev(&vt, mu_st) * inv_nt;
        let var_ts = b * dev(&vs, mu_ts) * inv_ns + a * dev(&vt, mu_ts) * inv_nt;
        let (r_st, r_ts) = (wide_inv_sqrt(w(eps) + var_st), wide_inv_sqrt(w(eps) + var_ts));
        for &(k, x) in &vs {
            total += w(g_s[k]) * (x - mu_st) * r_st;
        }
        for &(k, x) in &vt {
            total += w(g_t[k]) * (x - mu_ts) * r_ts;
        }
    }
    total
}

// twofloat's own division and square root lose the low word when the
// platform has no fused multiply-add, so both go through one Newton step on
// top of its (exact) addition and multiplication.
fn wide_recip(v: TwoFloat) -> TwoFloat {
    let r = TwoFloat::from(v.hi().recip());
    r + r * (TwoFloat::from(1.0) - v * r)
}

fn wide_inv_sqrt(v: TwoFloat) -> TwoFloat {
    let r = TwoFloat::from(v.hi().sqrt().recip());
    r + r * (TwoFloat::from(1.0) - v * r * r) * TwoFloat::from(0.5)
}

/// Textbook training-mode batch normalization (no affine), per channel over
/// batch and spatial positions.
pub fn plain_batch_norm(x: &Tensor, eps: f64) -> Vec<f64> {
    let (n, channels, spatial) = (x.batch(), x.channels(), x.spatial());
    let count = (n * spatial) as f64;
    let mut mean = vec![0.0; channels];
    let mut var = vec![0.0; channels];
    for c in 0..channels {
        for i in 0..n {
            for p in 0..spatial {
                mean[c] += at(x, i, c, p);
            }
        }
        mean[c] /= count;
        for i in 0..n {
            for p in 0..spatial {
                var[c] += (at(x, i, c, p) - mean[c]).powi(2);
            }
        }
        var[c] /= count;
    }
    let mut out = Vec::with_capacity(x.len());
    for i in 0..n {
        for c in 0..channels {
            for p in 0..spatial {
                out.push((at(x, i, c, p) - mean[c]) / (eps + var[c]).sqrt());
            }
        }
    }
    out
}
