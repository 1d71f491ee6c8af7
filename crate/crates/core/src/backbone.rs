//! The local window-scoring model and its optimizer.
//!
//! [`LocalModel`] is the pluggable contract: anything that maps an L x M
//! window to class probabilities and can push gradients back to a flat
//! parameter vector can sit inside the training loop. The built-in
//! [`PatchMlpBackbone`] is a patch-embed + pooled MLP: small enough to
//! verify against finite differences, big enough to learn the benchmark
//! corpus. Heavier architectures plug in behind the same trait.
//!
//! All math is plain f64 loops over a single flat parameter vector, which
//! keeps the optimizer generic and checkpointing trivial.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prob::{aggregate, mean_weights, ProbVector};

/// Window scorer contract: deterministic forward, exact backward into a
/// flat gradient buffer, parameters exposed as one contiguous slice.
pub trait LocalModel {
    /// Opaque activations saved by `forward` for the matching `backward`.
    type Cache;

    fn window_len(&self) -> usize;
    fn channels(&self) -> usize;
    fn num_classes(&self) -> usize;

    /// Scores one window. The cache feeds `backward`.
    fn forward(&self, window: &Array2<f64>) -> Result<(ProbVector, Self::Cache)>;

    /// Accumulates (adds) parameter gradients into `grad`, given the
    /// gradient of the loss with respect to the output probabilities.
    fn backward(&self, cache: &Self::Cache, dprobs: &[f64], grad: &mut [f64]) -> Result<()>;

    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
}

/// GELU, tanh approximation.
fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

/// Derivative of [`gelu`], consistent with the same approximation.
fn gelu_prime(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

/// Max-subtracted softmax.
fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// Architecture dimensions. Window length and channel count come from the
/// data; the rest are model hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneConfig {
    pub window_len: usize,
    pub channels: usize,
    pub patch_len: usize,
    pub patch_stride: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            window_len: 256,
            channels: 1,
            patch_len: 32,
            patch_stride: 32,
            embed_dim: 32,
            hidden_dim: 32,
            num_classes: 2,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.channels < 1 || self.embed_dim < 1 || self.hidden_dim < 1 {
            return bad("channels, embed_dim, and hidden_dim must be >= 1".into());
        }
        if self.num_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.num_classes));
        }
        if self.patch_len < 1 || self.patch_stride < 1 || self.patch_stride > self.patch_len {
            return bad(format!(
                "need 1 <= patch_stride <= patch_len, got stride {} len {}",
                self.patch_stride, self.patch_len
            ));
        }
        if self.patch_len > self.window_len {
            return bad(format!(
                "patch_len {} exceeds window_len {}",
                self.patch_len, self.window_len
            ));
        }
        Ok(())
    }

    /// Patches per window: floor((L - p)/s) + 1.
    pub fn num_patches(&self) -> usize {
        (self.window_len - self.patch_len) / self.patch_stride + 1
    }

    /// Flattened patch size: patch_len * channels.
    pub fn patch_dim(&self) -> usize {
        self.patch_len * self.channels
    }

    pub fn num_params(&self) -> usize {
        let (d, h, k) = (self.embed_dim, self.hidden_dim, self.num_classes);
        d * self.patch_dim() + d + h * d + h + k * h + k
    }
}

/// Patch-embed + pooled MLP window scorer.
///
/// forward: standardize per channel -> patchify -> linear embed -> GELU
/// -> mean-pool over patches -> linear -> GELU -> linear -> softmax.
///
/// Parameters live in one flat vector, blocks in the order
/// W_e, b_e, W_1, b_1, W_2, b_2 (matrices row-major).
#[derive(Debug, Clone)]
pub struct PatchMlpBackbone {
    pub config: BackboneConfig,
    theta: Vec<f64>,
}

/// Element offsets of each parameter block into the flat vector.
struct Layout {
    we: usize,
    be: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    total: usize,
}

impl Layout {
    fn of(c: &BackboneConfig) -> Layout {
        let (d, h, k, q) = (c.embed_dim, c.hidden_dim, c.num_classes, c.patch_dim());
        let we = 0;
        let be = we + d * q;
        let w1 = be + d;
        let b1 = w1 + h * d;
        let w2 = b1 + h;
        let b2 = w2 + k * h;
        Layout {
            we,
            be,
            w1,
            b1,
            w2,
            b2,
            total: b2 + k,
        }
    }
}

/// Activations retained for the backward pass.
pub struct BackboneCache {
    patches: Vec<f64>,     // P x q, standardized input patches
    embed_pre: Vec<f64>,   // P x d, before GELU
    pooled: Vec<f64>,      // d
    hidden_pre: Vec<f64>,  // h, before GELU
    hidden_act: Vec<f64>,  // h
    probs: Vec<f64>,       // K
}

impl PatchMlpBackbone {
    /// Xavier-uniform weights, zero biases, deterministic under the seed.
    pub fn new(config: BackboneConfig, init_seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::of(&config);
        let mut theta = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
        let mut fill = |range: std::ops::Range<usize>, fan_in: usize, fan_out: usize, theta: &mut Vec<f64>| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for slot in &mut theta[range] {
                *slot = rng.random_range(-limit..=limit);
            }
        };
        let (d, h, k, q) = (
            config.embed_dim,
            config.hidden_dim,
            config.num_classes,
            config.patch_dim(),
        );
        fill(layout.we..layout.we + d * q, q, d, &mut theta);
        fill(layout.w1..layout.w1 + h * d, d, h, &mut theta);
        fill(layout.w2..layout.w2 + k * h, h, k, &mut theta);
        Ok(PatchMlpBackbone { config, theta })
    }

    /// All-zero parameters; softmax of zero logits is uniform.
    pub fn zeros(config: BackboneConfig) -> Result<Self> {
        config.validate()?;
        let total = Layout::of(&config).total;
        Ok(PatchMlpBackbone {
            config,
            theta: vec![0.0; total],
        })
    }

    fn layout(&self) -> Layout {
        Layout::of(&self.config)
    }

    /// Per-channel standardization with an epsilon-guarded denominator,
    /// then slicing into flattened patches (row-major: time, then channel).
    fn patchify(&self, window: &Array2<f64>) -> Vec<f64> {
        const EPS: f64 = 1e-8;
        let c = &self.config;
        let (l, m) = (c.window_len, c.channels);
        let mut standardized = window.clone();
        for mut channel in standardized.columns_mut() {
            let mean = channel.sum() / l as f64;
            let var = channel.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / l as f64;
            let denom = var.sqrt().max(EPS);
            channel.mapv_inplace(|x| (x - mean) / denom);
        }
        let (p, q) = (c.patch_len, c.patch_dim());
        let mut patches = vec![0.0; c.num_patches() * q];
        for j in 0..c.num_patches() {
            let start = j * c.patch_stride;
            for t in 0..p {
                for ch in 0..m {
                    patches[j * q + t * m + ch] = standardized[[start + t, ch]];
                }
            }
        }
        patches
    }

    /// Writes the versioned binary checkpoint: magic, version, dims,
    /// parameter count, then the flat parameter vector as little-endian
    /// f64. Loading reconstructs the model bit-identically.
    pub fn save(&self, path: &Path) -> Result<()> {
        let display = path.display().to_string();
        let io_err = |source| Error::Io {
            path: display.clone(),
            source,
        };
        let mut file = std::io::BufWriter::new(std::fs::File::create(path).map_err(&io_err)?);
        let c = &self.config;
        file.write_all(CHECKPOINT_MAGIC).map_err(&io_err)?;
        for dim in [
            CHECKPOINT_VERSION,
            c.window_len as u32,
            c.channels as u32,
            c.patch_len as u32,
            c.patch_stride as u32,
            c.embed_dim as u32,
            c.hidden_dim as u32,
            c.num_classes as u32,
        ] {
            file.write_all(&dim.to_le_bytes()).map_err(&io_err)?;
        }
        file.write_all(&(self.theta.len() as u64).to_le_bytes())
            .map_err(&io_err)?;
        for value in &self.theta {
            file.write_all(&value.to_le_bytes()).map_err(&io_err)?;
        }
        file.flush().map_err(io_err)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let display = path.display().to_string();
        let mut file = std::io::BufReader::new(std::fs::File::open(path).map_err(|source| {
            Error::Io {
                path: display.clone(),
                source,
            }
        })?);
        let corrupt = |msg: &str| Error::CorruptCheckpoint(format!("{display}: {msg}"));

        let mut magic = [0u8; 8];
        file.read_exact(&mut magic)
            .map_err(|_| corrupt("truncated header"))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(corrupt("bad magic"));
        }
        let mut u32_buf = [0u8; 4];
        let mut next_u32 = |file: &mut dyn Read| -> Result<u32> {
            file.read_exact(&mut u32_buf)
                .map_err(|_| corrupt("truncated header"))?;
            Ok(u32::from_le_bytes(u32_buf))
        };
        let version = next_u32(&mut file)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::CorruptCheckpoint(format!(
                "{display}: unsupported version {version}"
            )));
        }
        let dims: Vec<u32> = (0..7)
            .map(|_| next_u32(&mut file))
            .collect::<Result<_>>()?;
        let config = BackboneConfig {
            window_len: dims[0] as usize,
            channels: dims[1] as usize,
            patch_len: dims[2] as usize,
            patch_stride: dims[3] as usize,
            embed_dim: dims[4] as usize,
            hidden_dim: dims[5] as usize,
            num_classes: dims[6] as usize,
        };
        config
            .validate()
            .map_err(|e| Error::CorruptCheckpoint(format!("{display}: {e}")))?;

        let mut u64_buf = [0u8; 8];
        file.read_exact(&mut u64_buf)
            .map_err(|_| corrupt("truncated header"))?;
        let count = u64::from_le_bytes(u64_buf) as usize;
        if count != config.num_params() {
            return Err(Error::CorruptCheckpoint(format!(
                "{display}: parameter count {count} does not match dims ({} expected)",
                config.num_params()
            )));
        }
        let mut theta = vec![0.0f64; count];
        let mut f64_buf = [0u8; 8];
        for slot in &mut theta {
            file.read_exact(&mut f64_buf)
                .map_err(|_| corrupt("truncated parameters"))?;
            *slot = f64::from_le_bytes(f64_buf);
            if !slot.is_finite() {
                return Err(corrupt("non-finite parameter"));
            }
        }
        if file.read(&mut [0u8; 1]).map_err(|_| corrupt("read"))? != 0 {
            return Err(corrupt("trailing bytes"));
        }
        Ok(PatchMlpBackbone { config, theta })
    }
}

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SSSCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

impl LocalModel for PatchMlpBackbone {
    type Cache = BackboneCache;

    fn window_len(&self) -> usize {
        self.config.window_len
    }

    fn channels(&self) -> usize {
        self.config.channels
    }

    fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    fn forward(&self, window: &Array2<f64>) -> Result<(ProbVector, Self::Cache)> {
        let c = &self.config;
        if window.dim() != (c.window_len, c.channels) {
            return Err(Error::DimensionMismatch(format!(
                "window is {:?}, model expects ({}, {})",
                window.dim(),
                c.window_len,
                c.channels
            )));
        }
        let layout = self.layout();
        let theta = &self.theta;
        let (d, h, k, q, np) = (
            c.embed_dim,
            c.hidden_dim,
            c.num_classes,
            c.patch_dim(),
            c.num_patches(),
        );

        let patches = self.patchify(window);

        // embed each patch and mean-pool in one pass
        let mut embed_pre = vec![0.0; np * d];
        let mut pooled = vec![0.0; d];
        for j in 0..np {
            let patch = &patches[j * q..(j + 1) * q];
            for r in 0..d {
                let row = &theta[layout.we + r * q..layout.we + (r + 1) * q];
                let mut acc = theta[layout.be + r];
                for (w, x) in row.iter().zip(patch) {
                    acc += w * x;
                }
                embed_pre[j * d + r] = acc;
                pooled[r] += gelu(acc);
            }
        }
        for value in &mut pooled {
            *value /= np as f64;
        }

        let mut hidden_pre = vec![0.0; h];
        let mut hidden_act = vec![0.0; h];
        for j in 0..h {
            let row = &theta[layout.w1 + j * d..layout.w1 + (j + 1) * d];
            let mut acc = theta[layout.b1 + j];
            for (w, x) in row.iter().zip(&pooled) {
                acc += w * x;
            }
            hidden_pre[j] = acc;
            hidden_act[j] = gelu(acc);
        }

        let mut logits = vec![0.0; k];
        for class in 0..k {
            let row = &theta[layout.w2 + class * h..layout.w2 + (class + 1) * h];
            let mut acc = theta[layout.b2 + class];
            for (w, x) in row.iter().zip(&hidden_act) {
                acc += w * x;
            }
            logits[class] = acc;
        }
        let probs = softmax(&logits);

        let cache = BackboneCache {
            patches,
            embed_pre,
            pooled,
            hidden_pre,
            hidden_act,
            probs: probs.clone(),
        };
        Ok((ProbVector::new(probs)?, cache))
    }

    fn backward(&self, cache: &Self::Cache, dprobs: &[f64], grad: &mut [f64]) -> Result<()> {
        let c = &self.config;
        let layout = self.layout();
        let (d, h, k, q, np) = (
            c.embed_dim,
            c.hidden_dim,
            c.num_classes,
            c.patch_dim(),
            c.num_patches(),
        );
        if dprobs.len() != k || grad.len() != self.theta.len() {
            return Err(Error::DimensionMismatch(format!(
                "backward got dprobs len {} and grad len {}, expected {} and {}",
                dprobs.len(),
                grad.len(),
                k,
                self.theta.len()
            )));
        }
        let theta = &self.theta;

        // softmax jacobian: dz_k = y_k (dy_k - sum_j dy_j y_j)
        let dot: f64 = dprobs.iter().zip(&cache.probs).map(|(g, y)| g * y).sum();
        let dlogits: Vec<f64> = cache
            .probs
            .iter()
            .zip(dprobs)
            .map(|(y, g)| y * (g - dot))
            .collect();

        // output layer
        let mut dhidden_act = vec![0.0; h];
        for class in 0..k {
            let dz = dlogits[class];
            grad[layout.b2 + class] += dz;
            for j in 0..h {
                grad[layout.w2 + class * h + j] += dz * cache.hidden_act[j];
                dhidden_act[j] += theta[layout.w2 + class * h + j] * dz;
            }
        }

        // hidden layer
        let mut dpooled = vec![0.0; d];
        for j in 0..h {
            let dz = dhidden_act[j] * gelu_prime(cache.hidden_pre[j]);
            grad[layout.b1 + j] += dz;
            for i in 0..d {
                grad[layout.w1 + j * d + i] += dz * cache.pooled[i];
                dpooled[i] += theta[layout.w1 + j * d + i] * dz;
            }
        }

        // mean pool spreads the gradient evenly over patches
        for value in &mut dpooled {
            *value /= np as f64;
        }

        // embedding layer, patch by patch
        for j in 0..np {
            let patch = &cache.patches[j * q..(j + 1) * q];
            for r in 0..d {
                let dz = dpooled[r] * gelu_prime(cache.embed_pre[j * d + r]);
                grad[layout.be + r] += dz;
                let row = &mut grad[layout.we + r * q..layout.we + (r + 1) * q];
                for (slot, x) in row.iter_mut().zip(patch) {
                    *slot += dz * x;
                }
            }
        }
        Ok(())
    }

    fn params(&self) -> &[f64] {
        &self.theta
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }
}

/// One series' contribution to a batch: its label and the windows of it
/// that were sampled into the batch.
pub struct SeriesGroup {
    pub label: usize,
    pub windows: Vec<Array2<f64>>,
}

/// Batch loss and gradient, aggregation included.
///
/// Per series: forward every window, mean-aggregate the probabilities,
/// take cross-entropy against the series label. The batch loss averages
/// over the series actually represented (groups with no windows are
/// skipped), and the gradient flows through the mean back to every
/// window's forward pass.
pub fn loss_and_grad<M: LocalModel>(model: &M, groups: &[SeriesGroup]) -> Result<(f64, Vec<f64>)> {
    let represented: Vec<&SeriesGroup> = groups.iter().filter(|g| !g.windows.is_empty()).collect();
    if represented.is_empty() {
        return Err(Error::EmptyAggregation);
    }
    let n_rep = represented.len() as f64;
    let k = model.num_classes();
    let mut grad = vec![0.0; model.params().len()];
    let mut loss = 0.0;

    for group in represented {
        if group.label >= k {
            return Err(Error::DimensionMismatch(format!(
                "label {} out of range for {} classes",
                group.label, k
            )));
        }
        let mut outputs = Vec::with_capacity(group.windows.len());
        let mut caches = Vec::with_capacity(group.windows.len());
        for window in &group.windows {
            let (probs, cache) = model.forward(window)?;
            outputs.push(probs);
            caches.push(cache);
        }
        let n_i = outputs.len() as f64;
        let aggregated = aggregate(&outputs, &mean_weights(outputs.len())?)?;
        let p_true = aggregated.probs()[group.label];
        loss += -p_true.ln() / n_rep;

        // dL/dy_b[c] = -[c == label] / (n_rep * n_i * p_true)
        let mut dprobs = vec![0.0; k];
        dprobs[group.label] = -1.0 / (n_rep * n_i * p_true);
        for cache in &caches {
            model.backward(cache, &dprobs, &mut grad)?;
        }
    }
    Ok((loss, grad))
}

/// Adam hyperparameters plus the cosine learning-rate schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Schedule horizon; the learning rate anneals from `lr` down to
    /// `lr / 100` over this many epochs.
    pub epochs: usize,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-5,
            epochs: 50,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0)
            || !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || !(self.eps > 0.0)
            || self.weight_decay < 0.0
            || self.epochs < 1
        {
            return Err(Error::InvalidConfig(format!("bad optimizer settings {self:?}")));
        }
        Ok(())
    }

    /// Single-cycle cosine from lr down to lr/100 across the horizon.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let lr_final = self.lr / 100.0;
        if self.epochs <= 1 {
            return self.lr;
        }
        let e = epoch.min(self.epochs - 1) as f64;
        let progress = e / (self.epochs - 1) as f64;
        lr_final + 0.5 * (self.lr - lr_final) * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

/// Adam accumulators. Weight decay is decoupled (applied directly to the
/// parameters, not mixed into the moments), so a zero gradient leaves
/// parameters untouched except for the decay shrinkage.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(num_params: usize, config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(AdamState {
            config,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            step: 0,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update with bias correction at the given epoch's learning
    /// rate. A non-finite gradient aborts before any state changes.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], epoch: usize) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::DimensionMismatch(format!(
                "optimizer holds {} parameters, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if let Some(pos) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient {
                context: format!("parameter {pos} at optimizer step {}", self.step + 1),
            });
        }
        self.step += 1;
        let c = &self.config;
        let lr = c.lr_at(epoch);
        let bias1 = 1.0 - c.beta1.powi(self.step as i32);
        let bias2 = 1.0 - c.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * grads[i];
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * grads[i] * grads[i];
            let m_hat = self.m[i] / bias1;
            let v_hat = self.v[i] / bias2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + c.eps) + lr * c.weight_decay * params[i];
        }
        Ok(())
    }
}
