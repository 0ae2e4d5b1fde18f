//! Domain-alignment layer.
//!
//! A DA-layer normalizes a source block and a target block of the same batch
//! with cross-domain mixed statistics. For a per-layer mixing factor
//! `alpha` in `[0.5, 1]` the source path uses the moments of
//! `alpha * q_s + (1 - alpha) * q_t` and the target path the moments of
//! `alpha * q_t + (1 - alpha) * q_s`, where `q_s`/`q_t` are the empirical
//! per-channel input distributions of the two blocks. `alpha = 1` normalizes
//! each domain on its own; `alpha = 0.5` applies one shared normalization to
//! both.
//!
//! Statistics are per channel, pooled over the batch and spatial axes. The
//! layer has no affine rescaling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ChannelStat, Tensor};

pub const ALPHA_MIN: f64 = 0.5;
pub const ALPHA_MAX: f64 = 1.0;
pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.1;
pub const DEFAULT_ALPHA: f64 = 0.75;

/// Projects `alpha` onto the admissible interval.
pub fn clip_alpha(alpha: f64) -> f64 {
    alpha.clamp(ALPHA_MIN, ALPHA_MAX)
}

/// Cross-domain statistics of one DA-layer. `*_st` normalizes the source
/// path and `*_ts` the target path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedStats {
    pub mu_st: Vec<f64>,
    pub var_st: Vec<f64>,
    pub mu_ts: Vec<f64>,
    pub var_ts: Vec<f64>,
    pub eps: f64,
    pub alpha_used: f64,
}

impl MixedStats {
    /// Mixes per-domain means and biased variances. The mixed variance is
    /// the weighted second moment around the mixed mean (law of total
    /// variance), which equals the direct weighted sum of squared deviations.
    pub fn mix(
        alpha: f64,
        eps: f64,
        mu_s: &[f64],
        var_s: &[f64],
        mu_t: &[f64],
        var_t: &[f64],
    ) -> Self {
        let beta = 1.0 - alpha;
        let channels = mu_s.len();
        let mut out = MixedStats {
            mu_st: Vec::with_capacity(channels),
            var_st: Vec::with_capacity(channels),
            mu_ts: Vec::with_capacity(channels),
            var_ts: Vec::with_capacity(channels),
            eps,
            alpha_used: alpha,
        };
        for c in 0..channels {
            let (ms, vs, mt, vt) = (mu_s[c], var_s[c], mu_t[c], var_t[c]);
            let mu_st = alpha * ms + beta * mt;
            let mu_ts = beta * ms + alpha * mt;
            let var_st = alpha * (vs + (ms - mu_st).powi(2)) + beta * (vt + (mt - mu_st).powi(2));
            let var_ts = beta * (vs + (ms - mu_ts).powi(2)) + alpha * (vt + (mt - mu_ts).powi(2));
            out.mu_st.push(mu_st);
            out.var_st.push(var_st);
            out.mu_ts.push(mu_ts);
            out.var_ts.push(var_ts);
        }
        out
    }

    pub fn channels(&self) -> usize {
        self.mu_st.len()
    }

    fn inv_std(&self, var: &[f64]) -> Vec<f64> {
        var.iter().map(|v| 1.0 / (self.eps + v).sqrt()).collect()
    }

    pub fn inv_std_st(&self) -> Vec<f64> {
        self.inv_std(&self.var_st)
    }

    pub fn inv_std_ts(&self) -> Vec<f64> {
        self.inv_std(&self.var_ts)
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if (ALPHA_MIN..=ALPHA_MAX).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::Range {
            name: "alpha",
            value: alpha,
            lo: ALPHA_MIN,
            hi: ALPHA_MAX,
        })
    }
}

fn check_pair(x_s: &Tensor, x_t: &Tensor) -> Result<()> {
    if x_s.shape().len() < 2 || x_s.shape()[1..] != x_t.shape()[1..] {
        return Err(Error::Dimension(format!(
            "source block {:?} and target block {:?} disagree past the batch axis",
            x_s.shape(),
            x_t.shape()
        )));
    }
    Ok(())
}

/// Mini-batch mixed statistics of a source block and a target block.
pub fn compute_mixed_statistics(x_s: &Tensor, x_t: &Tensor, alpha: f64, eps: f64) -> Result<MixedStats> {
    check_pair(x_s, x_t)?;
    if x_s.batch() == 0 {
        return Err(Error::EmptyDomain("source"));
    }
    if x_t.batch() == 0 {
        return Err(Error::EmptyDomain("target"));
    }
    check_alpha(alpha)?;
    let (mu_s, var_s) = domain_moments(x_s)?;
    let (mu_t, var_t) = domain_moments(x_t)?;
    Ok(MixedStats::mix(alpha, eps, &mu_s, &var_s, &mu_t, &var_t))
}

fn domain_moments(x: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = x.batch();
    Ok((
        x.reduce_channel(ChannelStat::Mean, 0..n)?,
        x.reduce_channel(ChannelStat::Var, 0..n)?,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Frozen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaLayerState {
    pub alpha: f64,
    /// Pinned layers keep `alpha` fixed; the optimizer skips them.
    pub alpha_trainable: bool,
    pub channels: usize,
    pub moving_mu_s: Vec<f64>,
    pub moving_var_s: Vec<f64>,
    pub moving_mu_t: Vec<f64>,
    pub moving_var_t: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
    pub mode: Mode,
    pub frozen_stats: Option<MixedStats>,
    /// Number of moving-average updates seen so far.
    pub updates: u64,
}

impl DaLayerState {
    pub fn new(channels: usize, alpha: f64) -> Self {
        Self {
            alpha: clip_alpha(alpha),
            alpha_trainable: true,
            channels,
            moving_mu_s: vec![0.0; channels],
            moving_var_s: vec![1.0; channels],
            moving_mu_t: vec![0.0; channels],
            moving_var_t: vec![1.0; channels],
            momentum: DEFAULT_MOMENTUM,
            eps: DEFAULT_EPS,
            mode: Mode::Train,
            frozen_stats: None,
            updates: 0,
        }
    }

    pub fn pinned(channels: usize, alpha: f64) -> Self {
        Self {
            alpha_trainable: false,
            ..Self::new(channels, alpha)
        }
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    pub fn with_momentum(mut self, momentum: f64) -> Self {
        self.momentum = momentum;
        self
    }

    pub fn clip_alpha(&mut self) {
        self.alpha = clip_alpha(self.alpha);
    }

    /// Exponential moving average of the plain per-domain batch statistics.
    pub fn update_moving_averages(&mut self, x_s: &Tensor, x_t: &Tensor) -> Result<()> {
        if self.mode != Mode::Train {
            return Err(Error::State("moving averages only update in TRAIN mode".into()));
        }
        check_pair(x_s, x_t)?;
        let m = self.momentum;
        let blend = |avg: &mut [f64], batch: &[f64]| {
            for (a, b) in avg.iter_mut().zip(batch) {
                *a = (1.0 - m) * *a + m * b;
            }
        };
        if x_s.batch() > 0 {
            let (mu, var) = domain_moments(x_s)?;
            blend(&mut self.moving_mu_s, &mu);
            blend(&mut self.moving_var_s, &var);
        }
        if x_t.batch() > 0 {
            let (mu, var) = domain_moments(x_t)?;
            blend(&mut self.moving_mu_t, &mu);
            blend(&mut self.moving_var_t, &var);
        }
        self.updates += 1;
        Ok(())
    }

    /// Mixes the moving per-domain statistics with the current `alpha` and
    /// switches to FROZEN mode.
    pub fn freeze(&mut self) -> Result<()> {
        if self.updates == 0 {
            return Err(Error::State("cannot freeze: moving averages never updated".into()));
        }
        self.clip_alpha();
        self.frozen_stats = Some(MixedStats::mix(
            self.alpha,
            self.eps,
            &self.moving_mu_s,
            &self.moving_var_s,
            &self.moving_mu_t,
            &self.moving_var_t,
        ));
        self.mode = Mode::Frozen;
        Ok(())
    }

    pub fn unfreeze(&mut self) {
        self.mode = Mode::Train;
        self.frozen_stats = None;
    }

    /// Normalizes with the frozen statistics without touching the state.
    pub fn apply_frozen(&self, x_s: &Tensor, x_t: &Tensor) -> Result<(Tensor, Tensor)> {
        check_pair(x_s, x_t)?;
        let stats = match (self.mode, &self.frozen_stats) {
            (Mode::Frozen, Some(stats)) => stats,
            _ => return Err(Error::State("layer is not frozen".into())),
        };
        Ok((
            normalize(x_s, &stats.mu_st, &stats.inv_std_st()),
            normalize(x_t, &stats.mu_ts, &stats.inv_std_ts()),
        ))
    }
}

/// Everything the backward pass needs. The raw inputs are deliberately not
/// kept: gradients are expressed through the normalized outputs alone.
#[derive(Debug, Clone)]
pub struct DaCache {
    pub y_s: Tensor,
    pub y_t: Tensor,
    /// Source inputs normalized with the target-path statistics.
    pub y_st: Tensor,
    /// Target inputs normalized with the source-path statistics.
    pub y_ts: Tensor,
    pub stats: MixedStats,
    pub n_s: usize,
    pub n_t: usize,
    pub mode: Mode,
}

fn normalize(x: &Tensor, mu: &[f64], inv_std: &[f64]) -> Tensor {
    let (c, s) = (x.channels(), x.spatial());
    let mut y = x.clone();
    for (k, v) in y.data_mut().iter_mut().enumerate() {
        let ch = (k / s) % c;
        *v = (*v - mu[ch]) * inv_std[ch];
    }
    y
}

/// Forward pass. In TRAIN mode `alpha` is clipped first, the batch mixed
/// statistics are used and the moving averages advance; in FROZEN mode the
/// frozen statistics are used and either block may be empty.
pub fn da_forward(x_s: &Tensor, x_t: &Tensor, state: &mut DaLayerState) -> Result<(Tensor, Tensor, DaCache)> {
    check_pair(x_s, x_t)?;
    if x_s.channels() != state.channels {
        return Err(Error::Dimension(format!(
            "layer has {} channels, input has {}",
            state.channels,
            x_s.channels()
        )));
    }
    let stats = match state.mode {
        Mode::Train => {
            state.clip_alpha();
            let stats = compute_mixed_statistics(x_s, x_t, state.alpha, state.eps)?;
            state.update_moving_averages(x_s, x_t)?;
            stats
        }
        Mode::Frozen => state
            .frozen_stats
            .clone()
            .ok_or_else(|| Error::State("FROZEN layer has no frozen statistics".into()))?,
    };
    let inv_st = stats.inv_std_st();
    let inv_ts = stats.inv_std_ts();
    let y_s = normalize(x_s, &stats.mu_st, &inv_st);
    let y_t = normalize(x_t, &stats.mu_ts, &inv_ts);
    let cache = DaCache {
        y_st: normalize(x_s, &stats.mu_ts, &inv_ts),
        y_ts: normalize(x_t, &stats.mu_st, &inv_st),
        y_s: y_s.clone(),
        y_t: y_t.clone(),
        n_s: x_s.batch(),
        n_t: x_t.batch(),
        stats,
        mode: state.mode,
    };
    Ok((y_s, y_t, cache))
}

/// Per-channel sums used by the backward pass.
struct ChannelSums {
    grad: Vec<f64>,
    grad_y: Vec<f64>,
    y: Vec<f64>,
    y_sq: Vec<f64>,
    cross: Vec<f64>,
    cross_sq: Vec<f64>,
}

fn channel_sums(y: &Tensor, cross: &Tensor, g: &Tensor) -> ChannelSums {
    let (c, s) = (y.channels(), y.spatial());
    let mut out = ChannelSums {
        grad: vec![0.0; c],
        grad_y: vec![0.0; c],
        y: vec![0.0; c],
        y_sq: vec![0.0; c],
        cross: vec![0.0; c],
        cross_sq: vec![0.0; c],
    };
    for (k, ((&yv, &cv), &gv)) in y.data().iter().zip(cross.data()).zip(g.data()).enumerate() {
        let ch = (k / s) % c;
        out.grad[ch] += gv;
        out.grad_y[ch] += gv * yv;
        out.y[ch] += yv;
        out.y_sq[ch] += yv * yv;
        out.cross[ch] += cv;
        out.cross_sq[ch] += cv * cv;
    }
    out
}

/// Backward pass: returns `(dL/dx_s, dL/dx_t, dL/dalpha)` given the upstream
/// gradients `g_s = dL/dy_s` and `g_t = dL/dy_t`.
///
/// Each input feeds both normalizations through the statistics, so every
/// input gradient has a direct term, a same-path statistics term and a
/// cross-path statistics term. The alpha gradient is summed over channels.
pub fn da_backward(cache: &DaCache, g_s: &Tensor, g_t: &Tensor) -> Result<(Tensor, Tensor, f64)> {
    if cache.mode != Mode::Train {
        return Err(Error::State("backward needs a TRAIN-mode cache".into()));
    }
    if g_s.shape() != cache.y_s.shape() || g_t.shape() != cache.y_t.shape() {
        return Err(Error::Dimension(format!(
            "upstream gradients {:?}/{:?} do not match cached outputs {:?}/{:?}",
            g_s.shape(),
            g_t.shape(),
            cache.y_s.shape(),
            cache.y_t.shape()
        )));
    }
    let stats = &cache.stats;
    let alpha = stats.alpha_used;
    let beta = 1.0 - alpha;
    let inv_st = stats.inv_std_st();
    let inv_ts = stats.inv_std_ts();
    let spatial = cache.y_s.spatial() as f64;
    let big_ns = cache.n_s as f64 * spatial;
    let big_nt = cache.n_t as f64 * spatial;

    // Each block's sums pair its own outputs with its own cross-normalized
    // outputs (same shape).
    let src = channel_sums(&cache.y_s, &cache.y_st, g_s);
    let tgt = channel_sums(&cache.y_t, &cache.y_ts, g_t);

    let (c, s) = (cache.y_s.channels(), cache.y_s.spatial());
    let mut dx_s = g_s.clone();
    for (k, d) in dx_s.data_mut().iter_mut().enumerate() {
        let ch = (k / s) % c;
        let y = cache.y_s.data()[k];
        let y_st = cache.y_st.data()[k];
        let same = inv_st[ch] * (*d - alpha / big_ns * (src.grad[ch] + y * src.grad_y[ch]));
        let cross = inv_ts[ch] * beta / big_ns * (tgt.grad[ch] + y_st * tgt.grad_y[ch]);
        *d = same - cross;
    }
    let mut dx_t = g_t.clone();
    for (k, d) in dx_t.data_mut().iter_mut().enumerate() {
        let ch = (k / s) % c;
        let y = cache.y_t.data()[k];
        let y_ts = cache.y_ts.data()[k];
        let same = inv_ts[ch] * (*d - alpha / big_nt * (tgt.grad[ch] + y * tgt.grad_y[ch]));
        let cross = inv_st[ch] * beta / big_nt * (src.grad[ch] + y_ts * src.grad_y[ch]);
        *d = same - cross;
    }

    let mut d_alpha = 0.0;
    for ch in 0..c {
        let s_mean = src.y[ch] / big_ns;
        let s_sq_mean = src.y_sq[ch] / big_ns;
        let st_mean = src.cross[ch] / big_ns;
        let st_sq_mean = src.cross_sq[ch] / big_ns;
        let t_mean = tgt.y[ch] / big_nt;
        let t_sq_mean = tgt.y_sq[ch] / big_nt;
        let ts_mean = tgt.cross[ch] / big_nt;
        let ts_sq_mean = tgt.cross_sq[ch] / big_nt;
        d_alpha += (ts_mean - s_mean) * src.grad[ch]
            + 0.5 * (ts_sq_mean - s_sq_mean) * src.grad_y[ch]
            + (st_mean - t_mean) * tgt.grad[ch]
            + 0.5 * (st_sq_mean - t_sq_mean) * tgt.grad_y[ch];
    }
    Ok((dx_s, dx_t, d_alpha))
}
