//! Layer zoo and the shared-weight source/target network.
//!
//! One [`Network`] holds both predictors: every layer is applied to the whole
//! batch, except DA-layers, which split rows at the source/target boundary
//! and normalize each block with its own mixed statistics.

mod optim;

pub use optim::{Progress, Schedule, Sgd, SgdConfig};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dal::{da_backward, da_forward, DaCache, DaLayerState, Mode};
use crate::error::{Error, Result};
use crate::losses::{LossConfig, PROB_FLOOR};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// `inputs x outputs`, row-major.
    pub weight: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

impl Dense {
    fn weight_tensor(&self) -> Tensor {
        Tensor::new(vec![self.inputs, self.outputs], self.weight.clone()).expect("dense weight shape")
    }

    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = x.matmul(&self.weight_tensor())?;
        if let Some(b) = &self.bias {
            let m = self.outputs;
            for (k, v) in y.data_mut().iter_mut().enumerate() {
                *v += b[k % m];
            }
        }
        Ok(y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Layer {
    Dense(Dense),
    Relu,
    Da(DaLayerState),
    /// Softmax over `classes` logits; always the last layer.
    Softmax { classes: usize },
}

/// Construction-time description of a layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LayerSpec {
    Dense { inputs: usize, outputs: usize, bias: bool },
    Relu,
    Da { channels: usize },
    Softmax { classes: usize },
}

/// Options applied to every DA-layer a builder creates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DaOptions {
    pub alpha_init: f64,
    pub alpha_trainable: bool,
    pub eps: f64,
    pub momentum: f64,
}

impl Default for DaOptions {
    fn default() -> Self {
        Self {
            alpha_init: crate::dal::DEFAULT_ALPHA,
            alpha_trainable: true,
            eps: crate::dal::DEFAULT_EPS,
            momentum: crate::dal::DEFAULT_MOMENTUM,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamKind {
    Weight,
    Bias,
    Alpha { trainable: bool },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Network {
    layers: Vec<Layer>,
    /// Bumped on every parameter mutation; traces from older generations
    /// are rejected by `backward`.
    #[serde(skip)]
    generation: u64,
}

/// Networks compare by their layers; the generation counter is bookkeeping.
impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

#[derive(Debug, Clone)]
enum LayerTrace {
    Dense { input: Tensor },
    Relu { output: Tensor },
    Da(Box<DaCache>),
    Softmax,
}

/// Intermediate values recorded by a TRAIN-mode forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    layers: Vec<LayerTrace>,
    generation: u64,
    n_source: usize,
    pub probs: Tensor,
}

impl Trace {
    pub fn n_source(&self) -> usize {
        self.n_source
    }
}

fn softmax_rows(logits: &Tensor) -> Tensor {
    let k = logits.shape()[1];
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(k) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

impl Network {
    pub fn from_specs(specs: &[LayerSpec], da: DaOptions, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(specs.len());
        for spec in specs {
            layers.push(match *spec {
                LayerSpec::Dense { inputs, outputs, bias } => {
                    let limit = (3.0 / inputs.max(1) as f64).sqrt();
                    Layer::Dense(Dense {
                        inputs,
                        outputs,
                        weight: (0..inputs * outputs).map(|_| rng.gen_range(-limit..limit)).collect(),
                        bias: bias.then(|| vec![0.0; outputs]),
                    })
                }
                LayerSpec::Relu => Layer::Relu,
                LayerSpec::Da { channels } => {
                    let mut st = if da.alpha_trainable {
                        DaLayerState::new(channels, da.alpha_init)
                    } else {
                        DaLayerState::pinned(channels, da.alpha_init)
                    };
                    st.eps = da.eps;
                    st.momentum = da.momentum;
                    Layer::Da(st)
                }
                LayerSpec::Softmax { classes } => Layer::Softmax { classes },
            });
        }
        Self::from_layers(layers)
    }

    /// Assembles a network from ready-made layers.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        let net = Self { layers, generation: 0 };
        net.validate()?;
        Ok(net)
    }

    /// `input -> [dense -> (DA) -> relu]* -> dense -> softmax`. Dense layers
    /// that feed a DA-layer carry no bias since the normalization cancels it.
    pub fn mlp(input: usize, hidden: &[usize], classes: usize, da: Option<DaOptions>, seed: u64) -> Result<Self> {
        let mut specs = Vec::new();
        let mut width = input;
        for &h in hidden {
            specs.push(LayerSpec::Dense {
                inputs: width,
                outputs: h,
                bias: da.is_none(),
            });
            if da.is_some() {
                specs.push(LayerSpec::Da { channels: h });
            }
            specs.push(LayerSpec::Relu);
            width = h;
        }
        specs.push(LayerSpec::Dense {
            inputs: width,
            outputs: classes,
            bias: true,
        });
        specs.push(LayerSpec::Softmax { classes });
        Self::from_specs(&specs, da.unwrap_or_default(), seed)
    }

    /// Checks layer extents chain and that exactly one softmax ends the stack.
    pub fn validate(&self) -> Result<()> {
        let mut width: Option<usize> = None;
        let last = self.layers.len().checked_sub(1);
        for (i, layer) in self.layers.iter().enumerate() {
            let mismatch = |expected: usize, got: usize| {
                Error::Config(format!("layer {i}: expects width {expected}, previous layer gives {got}"))
            };
            match layer {
                Layer::Dense(d) => {
                    if d.weight.len() != d.inputs * d.outputs
                        || d.bias.as_ref().is_some_and(|b| b.len() != d.outputs)
                    {
                        return Err(Error::Config(format!("layer {i}: dense parameter sizes")));
                    }
                    if let Some(w) = width.filter(|&w| w != d.inputs) {
                        return Err(mismatch(d.inputs, w));
                    }
                    width = Some(d.outputs);
                }
                Layer::Relu => {}
                Layer::Da(st) => {
                    if let Some(w) = width.filter(|&w| w != st.channels) {
                        return Err(mismatch(st.channels, w));
                    }
                    width = Some(st.channels);
                }
                Layer::Softmax { classes } => {
                    if Some(i) != last {
                        return Err(Error::Config("softmax head must be the last layer".into()));
                    }
                    if let Some(w) = width.filter(|w| w != classes) {
                        return Err(mismatch(*classes, w));
                    }
                }
            }
        }
        if !matches!(self.layers.last(), Some(Layer::Softmax { .. })) {
            return Err(Error::Config("network must end with a softmax head".into()));
        }
        Ok(())
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_width(&self) -> Option<usize> {
        self.layers.iter().find_map(|l| match l {
            Layer::Dense(d) => Some(d.inputs),
            Layer::Da(st) => Some(st.channels),
            _ => None,
        })
    }

    pub fn classes(&self) -> usize {
        match self.layers.last() {
            Some(Layer::Softmax { classes }) => *classes,
            _ => 0,
        }
    }

    pub fn da_layers(&self) -> impl Iterator<Item = &DaLayerState> {
        self.layers.iter().filter_map(|l| match l {
            Layer::Da(st) => Some(st),
            _ => None,
        })
    }

    pub fn da_layers_mut(&mut self) -> impl Iterator<Item = &mut DaLayerState> {
        self.generation += 1;
        self.layers.iter_mut().filter_map(|l| match l {
            Layer::Da(st) => Some(st),
            _ => None,
        })
    }

    pub fn da_count(&self) -> usize {
        self.da_layers().count()
    }

    pub fn alphas(&self) -> Vec<f64> {
        self.da_layers().map(|st| st.alpha).collect()
    }

    pub fn clip_alphas(&mut self) {
        self.da_layers_mut().for_each(DaLayerState::clip_alpha);
    }

    /// Freezes every DA-layer. A network without DA-layers counts as frozen.
    pub fn freeze(&mut self) -> Result<()> {
        self.da_layers_mut().try_for_each(DaLayerState::freeze)
    }

    pub fn unfreeze(&mut self) {
        self.da_layers_mut().for_each(DaLayerState::unfreeze);
    }

    pub fn is_frozen(&self) -> bool {
        self.da_layers().all(|st| st.mode == Mode::Frozen)
    }

    pub fn param_kinds(&self) -> Vec<ParamKind> {
        let mut kinds = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Dense(d) => {
                    kinds.extend(std::iter::repeat_n(ParamKind::Weight, d.weight.len()));
                    if let Some(b) = &d.bias {
                        kinds.extend(std::iter::repeat_n(ParamKind::Bias, b.len()));
                    }
                }
                Layer::Da(st) => kinds.push(ParamKind::Alpha {
                    trainable: st.alpha_trainable,
                }),
                _ => {}
            }
        }
        kinds
    }

    /// All parameters flattened: per layer, dense weights then bias, and one
    /// entry per DA-layer alpha.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Dense(d) => {
                    out.extend_from_slice(&d.weight);
                    if let Some(b) = &d.bias {
                        out.extend_from_slice(b);
                    }
                }
                Layer::Da(st) => out.push(st.alpha),
                _ => {}
            }
        }
        out
    }

    /// Overwrites all parameters. Alphas are stored as given; the next
    /// TRAIN-mode forward clips them.
    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        let expected = self.param_kinds().len();
        if params.len() != expected {
            return Err(Error::Dimension(format!(
                "{} parameters given, network has {expected}",
                params.len()
            )));
        }
        self.generation += 1;
        let mut it = params.iter().copied();
        for layer in &mut self.layers {
            match layer {
                Layer::Dense(d) => {
                    d.weight.iter_mut().for_each(|w| *w = it.next().unwrap());
                    if let Some(b) = &mut d.bias {
                        b.iter_mut().for_each(|v| *v = it.next().unwrap());
                    }
                }
                Layer::Da(st) => st.alpha = it.next().unwrap(),
                _ => {}
            }
        }
        Ok(())
    }

    fn check_batch(&self, x: &Tensor, n_source: usize) -> Result<()> {
        if n_source > x.batch() {
            return Err(Error::Layout(format!(
                "{n_source} source rows in a batch of {}",
                x.batch()
            )));
        }
        if x.shape().len() != 2 || Some(x.shape()[1]) != self.input_width() {
            return Err(Error::Dimension(format!(
                "input {:?} does not match network input width {:?}",
                x.shape(),
                self.input_width()
            )));
        }
        Ok(())
    }

    /// TRAIN-mode forward over a batch whose first `n_source` rows are
    /// source samples. DA-layers clip alpha, use batch statistics and
    /// update their moving averages.
    pub fn forward(&mut self, x: &Tensor, n_source: usize) -> Result<Trace> {
        self.check_batch(x, n_source)?;
        let mut h = x.clone();
        let mut traces = Vec::with_capacity(self.layers.len());
        for layer in &mut self.layers {
            match layer {
                Layer::Dense(d) => {
                    let y = d.apply(&h)?;
                    traces.push(LayerTrace::Dense { input: h });
                    h = y;
                }
                Layer::Relu => {
                    h = h.map("relu", |v| v.max(0.0))?;
                    traces.push(LayerTrace::Relu { output: h.clone() });
                }
                Layer::Da(st) => {
                    if st.mode != Mode::Train {
                        return Err(Error::State("training forward through a frozen DA-layer".into()));
                    }
                    let (ys, yt, cache) = da_forward(&h.rows(0..n_source)?, &h.rows(n_source..h.batch())?, st)?;
                    traces.push(LayerTrace::Da(Box::new(cache)));
                    h = ys.concat_batch(&yt)?;
                }
                Layer::Softmax { .. } => {
                    h = softmax_rows(&h);
                    traces.push(LayerTrace::Softmax);
                }
            }
        }
        Ok(Trace {
            layers: traces,
            generation: self.generation,
            n_source,
            probs: h,
        })
    }

    /// Inference with frozen DA-layers; each row is processed independently
    /// of every other row.
    pub fn predict(&self, x: &Tensor, n_source: usize) -> Result<Tensor> {
        self.check_batch(x, n_source)?;
        let mut h = x.clone();
        for layer in &self.layers {
            h = match layer {
                Layer::Dense(d) => d.apply(&h)?,
                Layer::Relu => h.map("relu", |v| v.max(0.0))?,
                Layer::Da(st) => {
                    let (ys, yt) = st.apply_frozen(&h.rows(0..n_source)?, &h.rows(n_source..h.batch())?)?;
                    ys.concat_batch(&yt)?
                }
                Layer::Softmax { .. } => softmax_rows(&h),
            };
        }
        Ok(h)
    }

    /// Frozen-mode activations right after the `da_index`-th DA-layer.
    pub fn da_activations(&self, x: &Tensor, n_source: usize, da_index: usize) -> Result<Tensor> {
        self.check_batch(x, n_source)?;
        let count = self.da_count();
        if da_index >= count {
            return Err(Error::Index {
                what: "DA-layer",
                index: da_index,
                limit: count,
            });
        }
        let mut h = x.clone();
        let mut seen = 0;
        for layer in &self.layers {
            h = match layer {
                Layer::Dense(d) => d.apply(&h)?,
                Layer::Relu => h.map("relu", |v| v.max(0.0))?,
                Layer::Da(st) => {
                    let (ys, yt) = st.apply_frozen(&h.rows(0..n_source)?, &h.rows(n_source..h.batch())?)?;
                    if seen == da_index {
                        return ys.concat_batch(&yt);
                    }
                    seen += 1;
                    ys.concat_batch(&yt)?
                }
                Layer::Softmax { .. } => softmax_rows(&h),
            };
        }
        unreachable!("DA-layer index checked above")
    }

    /// Back-propagates a gradient at the logits (softmax input) and returns
    /// the flat parameter gradient, in [`Network::parameters`] order.
    pub fn backward(&self, trace: &Trace, d_logits: &Tensor) -> Result<Vec<f64>> {
        if trace.generation != self.generation {
            return Err(Error::State("trace is stale: parameters changed since forward".into()));
        }
        if d_logits.shape() != trace.probs.shape() {
            return Err(Error::Dimension(format!(
                "logit gradient {:?} vs output {:?}",
                d_logits.shape(),
                trace.probs.shape()
            )));
        }
        let n_source = trace.n_source;
        let mut per_layer: Vec<Vec<f64>> = vec![Vec::new(); self.layers.len()];
        let mut g = d_logits.clone();
        for (idx, (layer, lt)) in self.layers.iter().zip(&trace.layers).enumerate().rev() {
            match (layer, lt) {
                (Layer::Softmax { .. }, LayerTrace::Softmax) => {}
                (Layer::Dense(d), LayerTrace::Dense { input }) => {
                    let mut grads = input.transpose()?.matmul(&g)?.into_data();
                    if d.bias.is_some() {
                        let m = d.outputs;
                        let mut db = vec![0.0; m];
                        for (k, v) in g.data().iter().enumerate() {
                            db[k % m] += v;
                        }
                        grads.extend(db);
                    }
                    per_layer[idx] = grads;
                    g = g.matmul(&d.weight_tensor().transpose()?)?;
                }
                (Layer::Relu, LayerTrace::Relu { output }) => {
                    for (gv, &o) in g.data_mut().iter_mut().zip(output.data()) {
                        if o <= 0.0 {
                            *gv = 0.0;
                        }
                    }
                }
                (Layer::Da(_), LayerTrace::Da(cache)) => {
                    let (dxs, dxt, d_alpha) =
                        da_backward(cache, &g.rows(0..n_source)?, &g.rows(n_source..g.batch())?)?;
                    per_layer[idx] = vec![d_alpha];
                    g = dxs.concat_batch(&dxt)?;
                }
                _ => return Err(Error::State("trace does not match network layout".into())),
            }
        }
        Ok(per_layer.concat())
    }

    /// Back-propagates a gradient with respect to the output probabilities
    /// through the softmax Jacobian first.
    pub fn backward_from_probs(&self, trace: &Trace, d_probs: &Tensor) -> Result<Vec<f64>> {
        self.backward(trace, &softmax_backward(&trace.probs, d_probs)?)
    }
}

/// `dL/dz = p * (dL/dp - <p, dL/dp>)` per row.
pub fn softmax_backward(probs: &Tensor, d_probs: &Tensor) -> Result<Tensor> {
    if probs.shape() != d_probs.shape() {
        return Err(Error::Dimension("softmax_backward shape mismatch".into()));
    }
    let k = probs.shape()[1];
    let mut out = d_probs.clone();
    for (orow, prow) in out.data_mut().chunks_mut(k).zip(probs.data().chunks(k)) {
        let dot: f64 = orow.iter().zip(prow).map(|(g, p)| g * p).sum();
        for (o, p) in orow.iter_mut().zip(prow) {
            *o = p * (*o - dot);
        }
    }
    Ok(out)
}

/// Fused softmax + loss gradient at the logits for `L_s + lambda * L_t`:
/// `(p - onehot) / n` on source rows and
/// `-(lambda / m) * p_k * (ln p_k + H_i)` on target rows, where `H_i` is the
/// row entropy.
pub fn loss_logit_gradient(probs: &Tensor, n_source: usize, labels: &[usize], cfg: &LossConfig) -> Result<Tensor> {
    let (n, k) = (probs.batch(), probs.shape()[1]);
    if n_source > n || labels.len() != n_source {
        return Err(Error::Layout(format!(
            "{n_source} source rows / {} labels in a batch of {n}",
            labels.len()
        )));
    }
    let mut g = probs.clone();
    let inv_n = 1.0 / n_source.max(1) as f64;
    for (i, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(Error::Index {
                what: "class label",
                index: y,
                limit: k,
            });
        }
        let row = &mut g.data_mut()[i * k..(i + 1) * k];
        row[y] -= 1.0;
        row.iter_mut().for_each(|v| *v *= inv_n);
    }
    let m = n - n_source;
    if m > 0 {
        let scale = cfg.lambda / m as f64;
        for row in g.data_mut()[n_source * k..].chunks_mut(k) {
            let logs: Vec<f64> = row.iter().map(|p| p.max(PROB_FLOOR).ln()).collect();
            let entropy: f64 = -row.iter().zip(&logs).map(|(p, l)| p * l).sum::<f64>();
            for (v, l) in row.iter_mut().zip(&logs) {
                *v = -scale * *v * (l + entropy);
            }
        }
    }
    Ok(g)
}
