//! Token CNN used as the second ("coarse") stage of the cascade.
//!
//! Architecture, for an `L x D` embedded block:
//!
//! ```text
//! dropout -> conv1 -> relu -> conv2 -> relu -> conv3 -> relu -> conv4 -> relu
//!         -> max over time -> dropout -> linear(2)
//! ```
//!
//! Every convolution is 1-D over the token axis with `filters` output
//! channels and "same" padding (`(width-1)/2` on the left, the rest on the
//! right), so sequence length is kept until the final pooling. Dropout uses
//! inverted scaling. All parameters live in one flat vector addressed through
//! [`Layout`], which keeps the optimiser and the gradient check simple.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dom::{Document, NodeId, TagBlacklist};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::token_embed::{embed_sequence, tokenize_block, EmbeddingTable, TokenSequence};
use crate::Label;

pub const N_CONV: usize = 4;
pub const N_CLASSES: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CnnConfig {
    pub seq_len: usize,
    pub embed_dim: usize,
    pub filters: usize,
    pub width: usize,
    pub dropout: f64,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self { seq_len: 40, embed_dim: 100, filters: 24, width: 4, dropout: 0.4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Weight each class's loss by `n / (2 * n_class)`.
    pub class_weighting: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 2,
            learning_rate: 1e-5,
            l2: 1e-6,
            epochs: 10,
            seed: 13,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            class_weighting: true,
        }
    }
}

/// Offsets of each tensor inside the flat parameter vector.
///
/// Convolution weights are stored `[tap][out][in]` so the innermost loop
/// runs over input channels of one embedded row.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    conv_w: [usize; N_CONV],
    conv_b: [usize; N_CONV],
    in_ch: [usize; N_CONV],
    fc_w: usize,
    fc_b: usize,
    total: usize,
}

impl Layout {
    fn new(cfg: &CnnConfig) -> Self {
        let mut off = 0;
        let mut conv_w = [0; N_CONV];
        let mut conv_b = [0; N_CONV];
        let mut in_ch = [0; N_CONV];
        for l in 0..N_CONV {
            in_ch[l] = if l == 0 { cfg.embed_dim } else { cfg.filters };
            conv_w[l] = off;
            off += cfg.width * cfg.filters * in_ch[l];
            conv_b[l] = off;
            off += cfg.filters;
        }
        let fc_w = off;
        off += N_CLASSES * cfg.filters;
        let fc_b = off;
        off += N_CLASSES;
        Self { conv_w, conv_b, in_ch, fc_w, fc_b, total: off }
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn conv_weight_index(&self, cfg: &CnnConfig, layer: usize, out: usize, inp: usize, tap: usize) -> usize {
        self.conv_w[layer] + (tap * cfg.filters + out) * self.in_ch[layer] + inp
    }

    pub fn conv_bias_index(&self, layer: usize, out: usize) -> usize {
        self.conv_b[layer] + out
    }

    pub fn fc_weight_index(&self, cfg: &CnnConfig, class: usize, feature: usize) -> usize {
        self.fc_w + class * cfg.filters + feature
    }

    pub fn fc_bias_index(&self, class: usize) -> usize {
        self.fc_b + class
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel {
    config: CnnConfig,
    layout: Layout,
    params: Vec<f64>,
    embedding_digest: Option<String>,
    version: u64,
}

/// Activations kept from a train-mode forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input after dropout, then each post-ReLU conv output.
    acts: Vec<Matrix>,
    argmax: Vec<usize>,
    hidden: Vec<f64>,
    hidden_mask: Vec<f64>,
    pub logits: [f64; N_CLASSES],
    version: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoarseVerdict {
    pub label: Label,
    /// Softmax probability of class `Spec`.
    pub score: f64,
}

fn class_index(label: Label) -> usize {
    match label {
        Label::Spec => 1,
        Label::NonSpec => 0,
    }
}

pub fn softmax(logits: &[f64; N_CLASSES]) -> [f64; N_CLASSES] {
    let m = logits[0].max(logits[1]);
    let e = [(logits[0] - m).exp(), (logits[1] - m).exp()];
    let s = e[0] + e[1];
    [e[0] / s, e[1] / s]
}

fn cross_entropy(logits: &[f64; N_CLASSES], target: usize) -> f64 {
    let m = logits[0].max(logits[1]);
    let lse = m + ((logits[0] - m).exp() + (logits[1] - m).exp()).ln();
    lse - logits[target]
}

impl CnnModel {
    /// Seeded He-uniform weights (bound `sqrt(6/fan_in)`), zero biases.
    pub fn new(config: CnnConfig, seed: u64) -> Result<Self> {
        if config.seq_len == 0 || config.embed_dim == 0 || config.filters == 0 || config.width == 0 {
            return Err(Error::Validation(format!("invalid CNN configuration {config:?}")));
        }
        if !(0.0..1.0).contains(&config.dropout) {
            return Err(Error::Validation(format!("dropout must be in [0, 1), got {}", config.dropout)));
        }
        let layout = Layout::new(&config);
        let mut params = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in 0..N_CONV {
            let n = config.width * config.filters * layout.in_ch[l];
            let bound = (6.0 / (config.width * layout.in_ch[l]) as f64).sqrt();
            for p in &mut params[layout.conv_w[l]..layout.conv_w[l] + n] {
                *p = rng.gen_range(-bound..bound);
            }
        }
        let bound = (6.0 / config.filters as f64).sqrt();
        for p in &mut params[layout.fc_w..layout.fc_w + N_CLASSES * config.filters] {
            *p = rng.gen_range(-bound..bound);
        }
        Ok(Self { config, layout, params, embedding_digest: None, version: 0 })
    }

    pub fn config(&self) -> &CnnConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable parameter access; invalidates outstanding forward caches.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.version += 1;
        &mut self.params
    }

    pub fn embedding_digest(&self) -> Option<&str> {
        self.embedding_digest.as_deref()
    }

    pub fn set_embedding_digest(&mut self, digest: impl Into<String>) {
        self.embedding_digest = Some(digest.into());
    }

    /// Same parameters, different expected input length.
    pub fn with_seq_len(&self, seq_len: usize) -> Self {
        let mut m = self.clone();
        m.config.seq_len = seq_len;
        m
    }

    fn check_shape(&self, x: &Matrix) -> Result<()> {
        let want = (self.config.seq_len, self.config.embed_dim);
        if x.shape() != want {
            return Err(Error::Shape {
                expected: format!("{}x{}", want.0, want.1),
                got: format!("{}x{}", x.rows(), x.cols()),
            });
        }
        Ok(())
    }

    fn conv(&self, layer: usize, input: &Matrix) -> Matrix {
        let cfg = &self.config;
        let len = input.rows();
        let cin = self.layout.in_ch[layer];
        let f = cfg.filters;
        let left = (cfg.width - 1) / 2;
        let w = &self.params[self.layout.conv_w[layer]..self.layout.conv_b[layer]];
        let b = &self.params[self.layout.conv_b[layer]..self.layout.conv_b[layer] + f];
        let mut out = Matrix::zeros(len, f);
        for t in 0..len {
            let row = out.row_mut(t);
            row.copy_from_slice(b);
            for k in 0..cfg.width {
                let Some(s) = (t + k).checked_sub(left).filter(|&s| s < len) else { continue };
                let a = input.row(s);
                for (o, acc) in row.iter_mut().enumerate() {
                    let wk = &w[(k * f + o) * cin..(k * f + o + 1) * cin];
                    *acc += wk.iter().zip(a).map(|(p, q)| p * q).sum::<f64>();
                }
            }
            row.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        out
    }

    fn run(&self, x: &Matrix, mut rng: Option<&mut dyn RngCore>) -> ForwardCache {
        let keep = 1.0 - self.config.dropout;
        let mut input = x.clone();
        if let Some(r) = rng.as_deref_mut() {
            if self.config.dropout > 0.0 {
                for v in input.as_mut_slice() {
                    *v = if r.gen::<f64>() < keep { *v / keep } else { 0.0 };
                }
            }
        }
        let mut acts = vec![input];
        for l in 0..N_CONV {
            let next = self.conv(l, &acts[l]);
            acts.push(next);
        }
        let last = &acts[N_CONV];
        let f = self.config.filters;
        let mut argmax = vec![0usize; f];
        let mut pooled = vec![f64::NEG_INFINITY; f];
        for t in 0..last.rows() {
            for (o, v) in last.row(t).iter().enumerate() {
                if *v > pooled[o] {
                    pooled[o] = *v;
                    argmax[o] = t;
                }
            }
        }
        let mut hidden_mask = vec![1.0; f];
        if let Some(r) = rng {
            if self.config.dropout > 0.0 {
                for m in &mut hidden_mask {
                    *m = if r.gen::<f64>() < keep { 1.0 / keep } else { 0.0 };
                }
            }
        }
        let hidden: Vec<f64> = pooled.iter().zip(&hidden_mask).map(|(p, m)| p * m).collect();
        let mut logits = [0.0; N_CLASSES];
        for (j, logit) in logits.iter_mut().enumerate() {
            let w = &self.params[self.layout.fc_w + j * f..self.layout.fc_w + (j + 1) * f];
            *logit = self.params[self.layout.fc_b + j] + w.iter().zip(&hidden).map(|(a, b)| a * b).sum::<f64>();
        }
        ForwardCache { acts, argmax, hidden, hidden_mask, logits, version: self.version }
    }

    /// Eval-mode logits; dropout is inactive.
    pub fn forward(&self, x: &Matrix) -> Result<[f64; N_CLASSES]> {
        self.check_shape(x)?;
        Ok(self.run(x, None).logits)
    }

    /// Forward pass that keeps activations for [`backward`]. Dropout is
    /// applied when `rng` is given.
    pub fn forward_cached(&self, x: &Matrix, rng: Option<&mut dyn RngCore>) -> Result<ForwardCache> {
        self.check_shape(x)?;
        Ok(self.run(x, rng))
    }

    /// Mean cross-entropy over the batch plus `l2 * |theta|^2`, eval mode.
    pub fn loss(&self, xs: &[Matrix], labels: &[Label], l2: f64) -> Result<f64> {
        self.weighted_loss(xs, labels, &vec![1.0; xs.len()], l2)
    }

    /// Like [`CnnModel::loss`] with each sample's cross-entropy scaled by its weight.
    pub fn weighted_loss(&self, xs: &[Matrix], labels: &[Label], weights: &[f64], l2: f64) -> Result<f64> {
        let mut total = 0.0;
        for ((x, y), w) in xs.iter().zip(labels).zip(weights) {
            total += w * cross_entropy(&self.forward(x)?, class_index(*y));
        }
        Ok(total / xs.len().max(1) as f64 + l2 * self.params.iter().map(|p| p * p).sum::<f64>())
    }

    pub fn predict(&self, x: &Matrix) -> Result<CoarseVerdict> {
        let p = softmax(&self.forward(x)?);
        let label = if p[1] > p[0] { Label::Spec } else { Label::NonSpec };
        Ok(CoarseVerdict { label, score: p[1] })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn to_text(&self) -> String {
        let c = &self.config;
        let mut s = String::new();
        let _ = writeln!(s, "{CNN_MAGIC} {CNN_VERSION}");
        let _ = writeln!(
            s,
            "arch seq_len={} embed_dim={} filters={} width={} dropout={}",
            c.seq_len, c.embed_dim, c.filters, c.width, c.dropout
        );
        let _ = writeln!(s, "embedding_digest {}", self.embedding_digest.as_deref().unwrap_or("none"));
        let mut tensor = |name: String, range: std::ops::Range<usize>| {
            let _ = write!(s, "tensor {name} {}", range.len());
            for v in &self.params[range] {
                let _ = write!(s, " {v}");
            }
            s.push('\n');
        };
        let lay = &self.layout;
        for l in 0..N_CONV {
            tensor(format!("conv{}.weight", l + 1), lay.conv_w[l]..lay.conv_b[l]);
            tensor(format!("conv{}.bias", l + 1), lay.conv_b[l]..lay.conv_b[l] + c.filters);
        }
        tensor("fc.weight".into(), lay.fc_w..lay.fc_b);
        tensor("fc.bias".into(), lay.fc_b..lay.total);
        s.push_str("end\n");
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |r: String| Error::format("cnn checkpoint", r);
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        if header != format!("{CNN_MAGIC} {CNN_VERSION}") {
            return Err(bad(format!("unsupported header {header:?}")));
        }
        let arch = lines.next().and_then(|l| l.strip_prefix("arch ")).ok_or_else(|| bad("missing arch line".into()))?;
        let mut config = CnnConfig::default();
        for kv in arch.split_whitespace() {
            let (k, v) = kv.split_once('=').ok_or_else(|| bad(format!("bad arch entry {kv:?}")))?;
            let num = |v: &str| v.parse::<usize>().map_err(|e| bad(format!("{kv}: {e}")));
            match k {
                "seq_len" => config.seq_len = num(v)?,
                "embed_dim" => config.embed_dim = num(v)?,
                "filters" => config.filters = num(v)?,
                "width" => config.width = num(v)?,
                "dropout" => config.dropout = v.parse().map_err(|e| bad(format!("{kv}: {e}")))?,
                _ => return Err(bad(format!("unknown arch key {k:?}"))),
            }
        }
        let digest = lines
            .next()
            .and_then(|l| l.strip_prefix("embedding_digest "))
            .ok_or_else(|| bad("missing embedding digest".into()))?;
        let mut model = Self::new(config, 0).map_err(|e| bad(e.to_string()))?;
        model.embedding_digest = (digest != "none").then(|| digest.to_string());
        let mut params = Vec::with_capacity(model.layout.total);
        let mut ended = false;
        for line in lines {
            if line == "end" {
                ended = true;
                break;
            }
            let mut parts = line.split(' ');
            if parts.next() != Some("tensor") {
                return Err(bad(format!("unexpected line {:.40?}", line)));
            }
            let name = parts.next().unwrap_or_default().to_string();
            let n: usize =
                parts.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad(format!("tensor {name}: bad length")))?;
            let before = params.len();
            for p in parts {
                params.push(p.parse::<f64>().map_err(|e| bad(format!("tensor {name}: {e}")))?);
            }
            if params.len() - before != n {
                return Err(bad(format!("tensor {name}: expected {n} values, found {}", params.len() - before)));
            }
        }
        if !ended {
            return Err(bad("truncated checkpoint (missing end marker)".into()));
        }
        if params.len() != model.layout.total {
            return Err(bad(format!("expected {} parameters, found {}", model.layout.total, params.len())));
        }
        model.params = params;
        Ok(model)
    }
}

const CNN_MAGIC: &str = "specblock-cnn";
const CNN_VERSION: u32 = 1;

/// Gradient of the mean cross-entropy over `caches` plus `l2 * |theta|^2`.
pub fn backward(model: &CnnModel, caches: &[ForwardCache], labels: &[Label], l2: f64) -> Result<Vec<f64>> {
    backward_weighted(model, caches, labels, &vec![1.0; caches.len()], l2)
}

/// Gradient of [`CnnModel::weighted_loss`].
pub fn backward_weighted(
    model: &CnnModel,
    caches: &[ForwardCache],
    labels: &[Label],
    weights: &[f64],
    l2: f64,
) -> Result<Vec<f64>> {
    if caches.is_empty() || caches.iter().any(|c| c.version != model.version) {
        return Err(Error::StaleCache);
    }
    if caches.len() != labels.len() || caches.len() != weights.len() {
        return Err(Error::Shape {
            expected: format!("{} labels and weights", caches.len()),
            got: format!("{} labels, {} weights", labels.len(), weights.len()),
        });
    }
    let cfg = &model.config;
    let lay = &model.layout;
    let p = &model.params;
    let f = cfg.filters;
    let left = (cfg.width - 1) / 2;
    let scale = 1.0 / caches.len() as f64;
    let mut grad: Vec<f64> = p.iter().map(|v| 2.0 * l2 * v).collect();

    for ((cache, label), w) in caches.iter().zip(labels).zip(weights) {
        let probs = softmax(&cache.logits);
        let target = class_index(*label);
        let dlogits: Vec<f64> =
            (0..N_CLASSES).map(|j| (probs[j] - if j == target { 1.0 } else { 0.0 }) * scale * w).collect();

        let mut dpooled = vec![0.0; f];
        for (j, dl) in dlogits.iter().enumerate() {
            grad[lay.fc_b + j] += dl;
            for (o, dp) in dpooled.iter_mut().enumerate() {
                grad[lay.fc_w + j * f + o] += dl * cache.hidden[o];
                *dp += dl * p[lay.fc_w + j * f + o];
            }
        }
        let len = cache.acts[0].rows();
        let mut dact = Matrix::zeros(len, f);
        for (o, dp) in dpooled.iter().enumerate() {
            dact.set(cache.argmax[o], o, dp * cache.hidden_mask[o]);
        }

        for l in (0..N_CONV).rev() {
            let out = &cache.acts[l + 1];
            let input = &cache.acts[l];
            let cin = lay.in_ch[l];
            // through the ReLU
            for (d, a) in dact.as_mut_slice().iter_mut().zip(out.as_slice()) {
                if *a <= 0.0 {
                    *d = 0.0;
                }
            }
            let mut dinput = if l > 0 { Some(Matrix::zeros(len, cin)) } else { None };
            for t in 0..len {
                let dz = dact.row(t);
                for (o, &g) in dz.iter().enumerate() {
                    if g != 0.0 {
                        grad[lay.conv_b[l] + o] += g;
                    }
                }
                for k in 0..cfg.width {
                    let Some(s) = (t + k).checked_sub(left).filter(|&s| s < len) else { continue };
                    let a = input.row(s);
                    for (o, &g) in dz.iter().enumerate() {
                        if g == 0.0 {
                            continue;
                        }
                        let base = lay.conv_w[l] + (k * f + o) * cin;
                        for (gw, av) in grad[base..base + cin].iter_mut().zip(a) {
                            *gw += g * av;
                        }
                        if let Some(di) = dinput.as_mut() {
                            for (d, w) in di.row_mut(s).iter_mut().zip(&p[base..base + cin]) {
                                *d += g * w;
                            }
                        }
                    }
                }
            }
            if let Some(di) = dinput {
                dact = di;
            }
        }
    }
    Ok(grad)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * grad[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= cfg.learning_rate * mhat / (vhat.sqrt() + cfg.epsilon);
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    /// Mean training minibatch loss per epoch (dropout active).
    pub train_loss: Vec<f64>,
    pub validation_loss: Vec<f64>,
    pub best_epoch: Option<usize>,
}

fn embed_all(data: &[(TokenSequence, Label)], table: &EmbeddingTable) -> (Vec<Matrix>, Vec<Label>) {
    data.iter().map(|(s, y)| (embed_sequence(table, s), *y)).unzip()
}

pub fn train_cnn(
    data: &[(TokenSequence, Label)],
    table: &EmbeddingTable,
    arch: &CnnConfig,
    cfg: &TrainConfig,
    validation: Option<&[(TokenSequence, Label)]>,
) -> Result<CnnModel> {
    train_cnn_with_history(data, table, arch, cfg, validation).map(|(m, _)| m)
}

/// Adam over seeded shuffled minibatches. With a validation split the
/// parameters from the epoch with the lowest validation loss are returned.
pub fn train_cnn_with_history(
    data: &[(TokenSequence, Label)],
    table: &EmbeddingTable,
    arch: &CnnConfig,
    cfg: &TrainConfig,
    validation: Option<&[(TokenSequence, Label)]>,
) -> Result<(CnnModel, TrainHistory)> {
    let has = |l: Label| data.iter().any(|(_, y)| *y == l);
    if !(has(Label::Spec) && has(Label::NonSpec)) {
        return Err(Error::DegenerateData("coarse training needs both spec and non-spec samples".into()));
    }
    if cfg.batch_size == 0 || cfg.learning_rate.is_nan() || cfg.learning_rate <= 0.0 || cfg.l2 < 0.0 {
        return Err(Error::Validation(format!("invalid training configuration {cfg:?}")));
    }
    if table.dim() != arch.embed_dim {
        return Err(Error::Shape {
            expected: format!("embedding dim {}", arch.embed_dim),
            got: format!("{}", table.dim()),
        });
    }
    let mut model = CnnModel::new(arch.clone(), cfg.seed)?;
    model.set_embedding_digest(table.digest());
    let (xs, ys) = embed_all(data, table);
    for x in &xs {
        model.check_shape(x)?;
    }
    let val = validation.map(|v| embed_all(v, table));
    let class_weight = |y: Label| {
        if !cfg.class_weighting {
            return 1.0;
        }
        let n_c = ys.iter().filter(|l| **l == y).count();
        ys.len() as f64 / (2.0 * n_c as f64)
    };
    let (w_spec, w_non) = (class_weight(Label::Spec), class_weight(Label::NonSpec));
    let weight_of = |y: Label| if y == Label::Spec { w_spec } else { w_non };
    let weights: Vec<f64> = ys.iter().map(|&y| weight_of(y)).collect();
    let val_weights: Option<Vec<f64>> = val.as_ref().map(|(_, vy)| vy.iter().map(|&y| weight_of(y)).collect());

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut adam = Adam::new(model.layout.total);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, Vec<f64>)> = None;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for batch in order.chunks(cfg.batch_size) {
            let mut caches = Vec::with_capacity(batch.len());
            let mut labels = Vec::with_capacity(batch.len());
            let mut bw = Vec::with_capacity(batch.len());
            for &i in batch {
                let cache = model.forward_cached(&xs[i], Some(&mut rng))?;
                epoch_loss += weights[i] * cross_entropy(&cache.logits, class_index(ys[i])) / batch.len() as f64;
                caches.push(cache);
                labels.push(ys[i]);
                bw.push(weights[i]);
            }
            batches += 1;
            let grad = backward_weighted(&model, &caches, &labels, &bw, cfg.l2)?;
            adam.step(&mut model.params, &grad, cfg);
            model.version += 1;
        }
        history.train_loss.push(epoch_loss / batches.max(1) as f64);
        if let Some((vx, vy)) = &val {
            let vl = model.weighted_loss(vx, vy, val_weights.as_deref().unwrap_or_default(), 0.0)?;
            history.validation_loss.push(vl);
            if best.as_ref().is_none_or(|(b, _)| vl < *b) {
                best = Some((vl, model.params.clone()));
                history.best_epoch = Some(epoch);
            }
        }
    }
    if model.params.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("CNN training diverged".into()));
    }
    if let Some((_, params)) = best {
        model.params = params;
        model.version += 1;
    }
    Ok((model, history))
}

/// A trained CNN paired with the embedding table it was trained against.
#[derive(Debug, Clone)]
pub struct CoarseModel {
    pub cnn: CnnModel,
    pub table: EmbeddingTable,
}

impl CoarseModel {
    /// Fails when the checkpoint records a different embedding table.
    pub fn new(cnn: CnnModel, table: EmbeddingTable) -> Result<Self> {
        if let Some(expected) = cnn.embedding_digest() {
            let found = table.digest();
            if expected != found {
                return Err(Error::EmbeddingMismatch { expected: expected.to_string(), found });
            }
        }
        if table.dim() != cnn.config.embed_dim {
            return Err(Error::Shape {
                expected: format!("embedding dim {}", cnn.config.embed_dim),
                got: format!("{}", table.dim()),
            });
        }
        Ok(Self { cnn, table })
    }

    pub fn predict_sequence(&self, seq: &TokenSequence) -> Result<CoarseVerdict> {
        self.cnn.predict(&embed_sequence(&self.table, seq))
    }
}

pub fn predict_coarse(
    model: &CoarseModel,
    doc: &Document,
    block: NodeId,
    blacklist: &TagBlacklist,
) -> Result<CoarseVerdict> {
    let seq = tokenize_block(doc, block, model.cnn.config.seq_len, blacklist);
    model.predict_sequence(&seq)
}
