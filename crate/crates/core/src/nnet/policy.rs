//! Actor-critic network over a variable-length set of trial records.
//!
//! Each trial `(d_hat, y, revealed)` goes through a shared ReLU encoder, the
//! per-trial embeddings are mean-pooled, and the pooled vector passes through
//! one more ReLU layer. Two separate two-layer heads read that latent: one
//! emits the Gaussian action mean `(design, estimate)`, the other a scalar
//! value. The action log-std is a free, state-independent parameter pair.

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::dense::{DenseArray, LayerSpec};
use super::dist::{ActionDistribution, ACTION_DIM};
use crate::env::TrialRecord;
use crate::error::{Error, Result};

pub const INPUT_FEATURES: usize = 3;
const MAX_ENCODER_LAYERS: usize = 8;
const ENCODER_NAMES: [&str; MAX_ENCODER_LAYERS] = [
    "encoder.0",
    "encoder.1",
    "encoder.2",
    "encoder.3",
    "encoder.4",
    "encoder.5",
    "encoder.6",
    "encoder.7",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub encoder_widths: Vec<usize>,
    pub pool_width: usize,
    pub head_width: usize,
    pub init_log_std: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            encoder_widths: vec![64; 4],
            pool_width: 64,
            head_width: 64,
            init_log_std: 0.0,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.encoder_widths.is_empty() || self.encoder_widths.len() > MAX_ENCODER_LAYERS {
            return Err(Error::Config(format!(
                "encoder needs 1..={MAX_ENCODER_LAYERS} layers, got {}",
                self.encoder_widths.len()
            )));
        }
        if self.encoder_widths.contains(&0) || self.pool_width == 0 || self.head_width == 0 {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if !self.init_log_std.is_finite() {
            return Err(Error::Config("init_log_std must be finite".into()));
        }
        Ok(())
    }

    fn layout(&self) -> (Vec<LayerSpec>, usize) {
        let mut layers = Vec::new();
        let mut offset = 0;
        let mut push = |name, inputs, outputs, relu| {
            let spec = LayerSpec {
                name,
                inputs,
                outputs,
                offset,
                relu,
            };
            offset += spec.param_count();
            layers.push(spec);
        };
        let mut width = INPUT_FEATURES;
        for (i, &w) in self.encoder_widths.iter().enumerate() {
            push(ENCODER_NAMES[i], width, w, true);
            width = w;
        }
        push("post_pool", width, self.pool_width, true);
        push("policy.0", self.pool_width, self.head_width, true);
        push("policy.1", self.head_width, ACTION_DIM, false);
        push("value.0", self.pool_width, self.head_width, true);
        push("value.1", self.head_width, 1, false);
        (layers, offset)
    }
}

/// Every trainable weight of the network in one flat vector, plus the layer
/// map describing where each layer lives. The last two entries are the
/// action log-std.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    config: NetworkConfig,
    layers: Vec<LayerSpec>,
    flat: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let (layers, n) = config.layout();
        let mut flat = vec![0.0; n + ACTION_DIM];
        flat[n..].fill(config.init_log_std);
        Ok(Self { config, layers, flat })
    }

    /// He-uniform ReLU layers, zero biases, zero output layers, and
    /// log-std at `init_log_std`.
    pub fn init<R: Rng + ?Sized>(config: NetworkConfig, rng: &mut R) -> Result<Self> {
        let mut params = Self::zeros(config)?;
        for spec in params.layers.clone() {
            if !spec.relu {
                continue;
            }
            let limit = (6.0 / spec.inputs as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
            for w in &mut params.flat[spec.offset..spec.offset + spec.weight_count()] {
                *w = dist.sample(rng);
            }
        }
        Ok(params)
    }

    pub fn from_flat(config: NetworkConfig, flat: Vec<f64>) -> Result<Self> {
        let mut params = Self::zeros(config)?;
        if flat.len() != params.flat.len() {
            return Err(Error::Config(format!(
                "parameter vector has {} values, network needs {}",
                flat.len(),
                params.flat.len()
            )));
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("parameters must be finite".into()));
        }
        params.flat = flat;
        Ok(params)
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn flat(&self) -> &[f64] {
        &self.flat
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.flat
    }

    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    /// Offset of the action log-std pair in the flat vector.
    pub fn log_std_offset(&self) -> usize {
        self.flat.len() - ACTION_DIM
    }

    pub fn log_std(&self) -> [f64; ACTION_DIM] {
        let o = self.log_std_offset();
        [self.flat[o], self.flat[o + 1]]
    }

    /// Named parameter groups as `(name, start, len)` ranges of the flat
    /// vector: each layer's weights and biases, then the log-std.
    pub fn groups(&self) -> Vec<(String, usize, usize)> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push((format!("{}.weight", l.name), l.offset, l.weight_count()));
            out.push((format!("{}.bias", l.name), l.offset + l.weight_count(), l.outputs));
        }
        out.push(("action_log_std".into(), self.log_std_offset(), ACTION_DIM));
        out
    }

    fn encoder_depth(&self) -> usize {
        self.config.encoder_widths.len()
    }

    fn layer(&self, i: usize) -> &LayerSpec {
        &self.layers[i]
    }

    fn checked_forward(&self, idx: usize, x: &[f64], rows: usize) -> Result<Vec<f64>> {
        let spec = self.layer(idx);
        let y = spec.forward(&self.flat, x, rows);
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical {
                index: idx,
                name: spec.name,
            });
        }
        Ok(y)
    }

    /// Encoder activations for each input row: one output buffer per layer.
    fn encode_trials(&self, inputs: &[f64], rows: usize) -> Result<Vec<Vec<f64>>> {
        let mut outs: Vec<Vec<f64>> = Vec::with_capacity(self.encoder_depth());
        for i in 0..self.encoder_depth() {
            let x = outs.last().map_or(inputs, Vec::as_slice);
            let y = self.checked_forward(i, x, rows)?;
            outs.push(y);
        }
        Ok(outs)
    }

    fn embedding_width(&self) -> usize {
        *self.config.encoder_widths.last().expect("validated")
    }

    /// Post-pool latent and both heads for `rows` pooled vectors.
    fn heads(&self, pooled: &[f64], rows: usize) -> Result<HeadActivations> {
        let e = self.encoder_depth();
        let latent = self.checked_forward(e, pooled, rows)?;
        let policy_hidden = self.checked_forward(e + 1, &latent, rows)?;
        let means = self.checked_forward(e + 2, &policy_hidden, rows)?;
        let value_hidden = self.checked_forward(e + 3, &latent, rows)?;
        let values = self.checked_forward(e + 4, &value_hidden, rows)?;
        Ok(HeadActivations {
            latent,
            policy_hidden,
            means,
            value_hidden,
            values,
        })
    }

    fn distribution(&self, means: &[f64], row: usize) -> ActionDistribution {
        ActionDistribution::from_log_std([means[row * 2], means[row * 2 + 1]], self.log_std())
    }

    /// Batched forward pass, keeping every activation for [`PolicyParams::backward`].
    pub fn forward_batch(&self, batch: &ObservationBatch) -> Result<ForwardCache> {
        let m = batch.trials.len();
        let width = self.embedding_width();
        let inputs: Vec<f64> = batch.trials.iter().flatten().copied().collect();
        let encoder_outputs = if m > 0 {
            self.encode_trials(&inputs, m)?
        } else {
            vec![Vec::new(); self.encoder_depth()]
        };
        let embeddings = encoder_outputs.last().expect("at least one encoder layer");
        let n = batch.members.len();
        let mut pooled = vec![0.0; n * width];
        for (i, members) in batch.members.iter().enumerate() {
            mean_pool(
                &mut pooled[i * width..(i + 1) * width],
                members.iter().map(|&j| &embeddings[j * width..(j + 1) * width]),
            );
        }
        let heads = self.heads(&pooled, n)?;
        Ok(ForwardCache {
            trial_inputs: inputs,
            encoder_outputs,
            members: batch.members.clone(),
            pooled,
            heads,
            log_std: self.log_std(),
        })
    }

    /// Reverse-mode gradient of a loss whose partials w.r.t. the network
    /// outputs are given in `grad`.
    pub fn backward(&self, cache: &ForwardCache, grad: &OutputGrad) -> Result<Vec<f64>> {
        let n = cache.len();
        if grad.d_mean.len() != n || grad.d_value.len() != n {
            return Err(Error::State(format!(
                "output gradient covers {} samples, forward cache has {n}",
                grad.d_mean.len()
            )));
        }
        let e = self.encoder_depth();
        let h = &cache.heads;
        let mut grads = vec![0.0; self.flat.len()];
        let p = &self.flat;

        let d_means: Vec<f64> = grad.d_mean.iter().flatten().copied().collect();
        let d_ph = self.layers[e + 2]
            .backward(p, &h.policy_hidden, &h.means, &d_means, n, &mut grads, true)
            .expect("dx requested");
        let mut d_latent = self.layers[e + 1]
            .backward(p, &h.latent, &h.policy_hidden, &d_ph, n, &mut grads, true)
            .expect("dx requested");
        let d_vh = self.layers[e + 4]
            .backward(p, &h.value_hidden, &h.values, &grad.d_value, n, &mut grads, true)
            .expect("dx requested");
        let d_latent_v = self.layers[e + 3]
            .backward(p, &h.latent, &h.value_hidden, &d_vh, n, &mut grads, true)
            .expect("dx requested");
        for (a, b) in d_latent.iter_mut().zip(&d_latent_v) {
            *a += b;
        }
        let d_pooled = self.layers[e]
            .backward(p, &cache.pooled, &h.latent, &d_latent, n, &mut grads, true)
            .expect("dx requested");

        let m = cache.trial_inputs.len() / INPUT_FEATURES;
        if m > 0 {
            let width = self.embedding_width();
            let mut d_emb = vec![0.0; m * width];
            for (i, members) in cache.members.iter().enumerate() {
                if members.is_empty() {
                    continue;
                }
                let scale = 1.0 / members.len() as f64;
                let src = &d_pooled[i * width..(i + 1) * width];
                for &j in members {
                    for (d, &s) in d_emb[j * width..(j + 1) * width].iter_mut().zip(src) {
                        *d += s * scale;
                    }
                }
            }
            let mut dy = d_emb;
            for i in (0..e).rev() {
                let x = if i == 0 {
                    &cache.trial_inputs
                } else {
                    &cache.encoder_outputs[i - 1]
                };
                let dx = self.layers[i].backward(p, x, &cache.encoder_outputs[i], &dy, m, &mut grads, i > 0);
                if let Some(dx) = dx {
                    dy = dx;
                }
            }
        }

        let o = self.log_std_offset();
        grads[o] += grad.d_log_std[0];
        grads[o + 1] += grad.d_log_std[1];
        Ok(grads)
    }

    /// Post-pool latent for one history.
    pub fn encode_observation(&self, history: &[TrialRecord]) -> Result<DenseArray> {
        let mut batch = ObservationBatch::default();
        batch.push(history);
        let cache = self.forward_batch(&batch)?;
        DenseArray::new(vec![self.config.pool_width], cache.heads.latent)
    }

    /// Action distribution and value estimate for one history.
    pub fn forward(&self, history: &[TrialRecord]) -> Result<(ActionDistribution, f64)> {
        let mut batch = ObservationBatch::default();
        batch.push(history);
        let cache = self.forward_batch(&batch)?;
        Ok((cache.distribution(0), cache.value(0)))
    }

    /// Same result as [`PolicyParams::forward`], but trial embeddings are
    /// memoized by position in `cache`, so growing a history by one record
    /// only encodes the new record.
    pub fn forward_cached(&self, history: &[TrialRecord], cache: &mut TrialCache) -> Result<(ActionDistribution, f64)> {
        cache.entries.truncate(history.len());
        for (i, record) in history.iter().enumerate() {
            let features = record.features();
            if cache.entries.get(i).is_some_and(|(f, _)| *f == features) {
                continue;
            }
            let outs = self.encode_trials(&features, 1)?;
            let emb = outs.into_iter().last().expect("at least one encoder layer");
            if i < cache.entries.len() {
                cache.entries[i] = (features, emb);
            } else {
                cache.entries.push((features, emb));
            }
        }
        let mut pooled = vec![0.0; self.embedding_width()];
        mean_pool(&mut pooled, cache.entries.iter().map(|(_, e)| e.as_slice()));
        let heads = self.heads(&pooled, 1)?;
        Ok((self.distribution(&heads.means, 0), heads.values[0]))
    }
}

fn mean_pool<'a>(dst: &mut [f64], rows: impl Iterator<Item = &'a [f64]>) {
    let mut count = 0usize;
    for row in rows {
        for (d, &v) in dst.iter_mut().zip(row) {
            *d += v;
        }
        count += 1;
    }
    if count > 0 {
        let n = count as f64;
        for d in dst.iter_mut() {
            *d /= n;
        }
    }
}

/// Memoized per-position trial embeddings for incremental forwards.
#[derive(Debug, Clone, Default)]
pub struct TrialCache {
    entries: Vec<([f64; INPUT_FEATURES], Vec<f64>)>,
}

impl TrialCache {
    pub fn clear(&mut self) {
        self.entries.clear();
    }
}

/// A batch of histories sharing a pool of trial feature rows. Each sample
/// is the list of trial indices it averages over.
#[derive(Debug, Clone, Default)]
pub struct ObservationBatch {
    trials: Vec<[f64; INPUT_FEATURES]>,
    members: Vec<Vec<usize>>,
}

impl ObservationBatch {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn trial_rows(&self) -> usize {
        self.trials.len()
    }

    /// Marks the start of a sharing scope (e.g. one episode).
    pub fn scope(&self) -> usize {
        self.trials.len()
    }

    pub fn push(&mut self, history: &[TrialRecord]) {
        let scope = self.scope();
        self.push_shared(history, scope);
    }

    /// Adds a history, reusing identical trial rows added since `scope`.
    /// Observations within one episode overlap heavily, so this encodes each
    /// distinct trial once.
    pub fn push_shared(&mut self, history: &[TrialRecord], scope: usize) {
        let members = history
            .iter()
            .map(|r| {
                let f = r.features();
                match self.trials[scope..].iter().position(|t| *t == f) {
                    Some(k) => scope + k,
                    None => {
                        self.trials.push(f);
                        self.trials.len() - 1
                    }
                }
            })
            .collect();
        self.members.push(members);
    }
}

#[derive(Debug, Clone)]
struct HeadActivations {
    latent: Vec<f64>,
    policy_hidden: Vec<f64>,
    means: Vec<f64>,
    value_hidden: Vec<f64>,
    values: Vec<f64>,
}

/// Activations saved by a batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    trial_inputs: Vec<f64>,
    encoder_outputs: Vec<Vec<f64>>,
    members: Vec<Vec<usize>>,
    pooled: Vec<f64>,
    heads: HeadActivations,
    log_std: [f64; ACTION_DIM],
}

impl ForwardCache {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn distribution(&self, i: usize) -> ActionDistribution {
        let m = &self.heads.means;
        ActionDistribution::from_log_std([m[i * 2], m[i * 2 + 1]], self.log_std)
    }

    pub fn value(&self, i: usize) -> f64 {
        self.heads.values[i]
    }

    pub fn latent(&self, i: usize, width: usize) -> &[f64] {
        &self.heads.latent[i * width..(i + 1) * width]
    }
}

/// Partial derivatives of a scalar loss w.r.t. the network outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputGrad {
    pub d_mean: Vec<[f64; ACTION_DIM]>,
    pub d_value: Vec<f64>,
    pub d_log_std: [f64; ACTION_DIM],
}

impl OutputGrad {
    pub fn zeros(n: usize) -> Self {
        Self {
            d_mean: vec![[0.0; ACTION_DIM]; n],
            d_value: vec![0.0; n],
            d_log_std: [0.0; ACTION_DIM],
        }
    }
}
