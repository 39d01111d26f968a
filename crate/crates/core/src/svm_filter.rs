//! Linear SVM used as the cheap first stage of the cascade.
//!
//! Trained on the primal L2-regularised hinge loss with seeded stochastic
//! subgradient steps of size `1/(lambda*t)`, where `lambda = 1/(C*n)`. The
//! bias is folded in as a constant input so it shares the update rule. The
//! returned weights are the average of the final epoch's iterates.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::{FilterFeatures, ScalerStats, N_FEATURES};
use crate::Label;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmConfig {
    pub c: f64,
    pub epochs: usize,
    pub seed: u64,
    pub class_weighting: bool,
    pub scaling: bool,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self { c: 1.0, epochs: 50, seed: 7, class_weighting: true, scaling: true }
    }
}

impl SvmConfig {
    pub fn digest(&self) -> String {
        let canon = format!(
            "c={};epochs={};seed={};class_weighting={};scaling={}",
            self.c, self.epochs, self.seed, self.class_weighting, self.scaling
        );
        hex_prefix(&Sha256::digest(canon.as_bytes()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub weights: [f64; N_FEATURES],
    pub bias: f64,
    pub scaler: Option<ScalerStats>,
    pub threshold: f64,
    pub config: SvmConfig,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmVerdict {
    pub label: Label,
    pub margin: f64,
}

impl SvmModel {
    fn input(&self, f: &FilterFeatures) -> [f64; N_FEATURES] {
        match &self.scaler {
            Some(s) => s.scale(f),
            None => f.to_array(),
        }
    }

    pub fn decision(&self, f: &FilterFeatures) -> f64 {
        dot(&self.weights, &self.input(f)) + self.bias
    }

    pub fn predict(&self, f: &FilterFeatures) -> SvmVerdict {
        let margin = self.decision(f);
        let label = if margin > self.threshold { Label::Spec } else { Label::NonSpec };
        SvmVerdict { label, margin }
    }

    /// Weighted primal objective on `samples` under this model's weights.
    pub fn objective(&self, samples: &[(FilterFeatures, Label)]) -> f64 {
        let n = samples.len() as f64;
        let lambda = 1.0 / (self.config.c * n);
        let cw = class_weights(samples, self.config.class_weighting);
        let reg = dot(&self.weights, &self.weights) + self.bias * self.bias;
        let loss: f64 = samples
            .iter()
            .map(|(f, y)| {
                let y = y.sign();
                cw[usize::from(y > 0.0)] * (1.0 - y * self.decision(f)).max(0.0)
            })
            .sum();
        0.5 * lambda * reg + loss / n
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
        let mut s = String::new();
        let _ = writeln!(s, "{SVM_MAGIC} {SVM_VERSION}");
        let _ = writeln!(s, "weights {}", join(&self.weights));
        let _ = writeln!(s, "bias {}", self.bias);
        let _ = writeln!(s, "threshold {}", self.threshold);
        match &self.scaler {
            Some(sc) => {
                let _ = writeln!(s, "scaler_mean {}", join(&sc.mean));
                let _ = writeln!(s, "scaler_std {}", join(&sc.std));
            }
            None => s.push_str("scaler none\n"),
        }
        let c = &self.config;
        let _ = writeln!(
            s,
            "config c={} epochs={} seed={} class_weighting={} scaling={}",
            c.c, c.epochs, c.seed, c.class_weighting, c.scaling
        );
        let _ = writeln!(s, "config_digest {}", c.digest());
        s.push_str("end\n");
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |r: String| Error::format("svm model", r);
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
        if header != format!("{SVM_MAGIC} {SVM_VERSION}") {
            return Err(bad(format!("unsupported header {header:?}")));
        }
        let mut weights = None;
        let mut bias = None;
        let mut threshold = None;
        let mut mean = None;
        let mut std = None;
        let mut no_scaler = false;
        let mut config = None;
        let mut digest = None;
        let mut ended = false;
        for line in lines {
            let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
            match key {
                "weights" => weights = Some(parse_fixed(rest).map_err(bad)?),
                "bias" => bias = Some(parse_f64(rest).map_err(bad)?),
                "threshold" => threshold = Some(parse_f64(rest).map_err(bad)?),
                "scaler_mean" => mean = Some(parse_fixed(rest).map_err(bad)?),
                "scaler_std" => std = Some(parse_fixed(rest).map_err(bad)?),
                "scaler" if rest == "none" => no_scaler = true,
                "config" => config = Some(parse_config(rest).map_err(bad)?),
                "config_digest" => digest = Some(rest.to_string()),
                "end" => {
                    ended = true;
                    break;
                }
                "" => {}
                other => return Err(bad(format!("unknown key {other:?}"))),
            }
        }
        if !ended {
            return Err(bad("truncated file (missing end marker)".into()));
        }
        let missing = |k: &str| bad(format!("missing {k}"));
        let config: SvmConfig = config.ok_or_else(|| missing("config"))?;
        if digest.as_deref() != Some(config.digest().as_str()) {
            return Err(bad("config digest mismatch".into()));
        }
        let scaler = match (mean, std, no_scaler) {
            (Some(mean), Some(std), false) => Some(ScalerStats { mean, std }),
            (None, None, true) => None,
            _ => return Err(bad("inconsistent scaler entries".into())),
        };
        Ok(Self {
            weights: weights.ok_or_else(|| missing("weights"))?,
            bias: bias.ok_or_else(|| missing("bias"))?,
            threshold: threshold.ok_or_else(|| missing("threshold"))?,
            scaler,
            config,
        })
    }
}

const SVM_MAGIC: &str = "specblock-svm";
const SVM_VERSION: u32 = 1;

/// Per-class hinge weights, indexed `[negative, positive]`.
fn class_weights(samples: &[(FilterFeatures, Label)], enabled: bool) -> [f64; 2] {
    if !enabled {
        return [1.0, 1.0];
    }
    let n = samples.len() as f64;
    let pos = samples.iter().filter(|(_, y)| *y == Label::Spec).count() as f64;
    let neg = n - pos;
    if pos == 0.0 || neg == 0.0 {
        return [1.0, 1.0];
    }
    [n / (2.0 * neg), n / (2.0 * pos)]
}

pub fn train_svm(samples: &[(FilterFeatures, Label)], cfg: &SvmConfig) -> Result<SvmModel> {
    if cfg.c.is_nan() || cfg.c <= 0.0 {
        return Err(Error::Validation(format!("C must be positive, got {}", cfg.c)));
    }
    let has_pos = samples.iter().any(|(_, y)| *y == Label::Spec);
    let has_neg = samples.iter().any(|(_, y)| *y == Label::NonSpec);
    if !(has_pos && has_neg) {
        return Err(Error::DegenerateData("filter training needs both spec and non-spec samples".into()));
    }
    let scaler = if cfg.scaling { ScalerStats::fit(samples.iter().map(|(f, _)| f)) } else { None };
    let xs: Vec<[f64; N_FEATURES]> = samples
        .iter()
        .map(|(f, _)| match &scaler {
            Some(s) => s.scale(f),
            None => f.to_array(),
        })
        .collect();
    let ys: Vec<f64> = samples.iter().map(|(_, y)| y.sign()).collect();
    let cw = class_weights(samples, cfg.class_weighting);

    let n = samples.len();
    let lambda = 1.0 / (cfg.c * n as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    // weights followed by the bias term
    let mut w = [0.0; N_FEATURES + 1];
    let mut avg = [0.0; N_FEATURES + 1];
    let mut t = 0u64;
    let epochs = cfg.epochs.max(1);
    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        let last = epoch + 1 == epochs;
        for &i in &order {
            t += 1;
            let eta = 1.0 / (lambda * t as f64);
            let x = &xs[i];
            let y = ys[i];
            let score = dot(&w[..N_FEATURES], x) + w[N_FEATURES];
            let shrink = 1.0 - eta * lambda;
            w.iter_mut().for_each(|v| *v *= shrink);
            if y * score < 1.0 {
                let step = eta * cw[usize::from(y > 0.0)] * y;
                for j in 0..N_FEATURES {
                    w[j] += step * x[j];
                }
                w[N_FEATURES] += step;
            }
            if last {
                for (a, v) in avg.iter_mut().zip(&w) {
                    *a += v;
                }
            }
        }
    }
    avg.iter_mut().for_each(|a| *a /= n as f64);
    if avg.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateData("training diverged to non-finite weights".into()));
    }
    let mut weights = [0.0; N_FEATURES];
    weights.copy_from_slice(&avg[..N_FEATURES]);
    Ok(SvmModel { weights, bias: avg[N_FEATURES], scaler, threshold: 0.0, config: cfg.clone() })
}

pub fn predict_svm(model: &SvmModel, f: &FilterFeatures) -> SvmVerdict {
    model.predict(f)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn join(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(" ")
}

pub(crate) fn hex_prefix(bytes: &[u8]) -> String {
    bytes.iter().take(16).map(|b| format!("{b:02x}")).collect()
}

fn parse_f64(s: &str) -> Result<f64, String> {
    s.trim().parse::<f64>().map_err(|e| format!("bad number {s:?}: {e}"))
}

fn parse_fixed(s: &str) -> Result<[f64; N_FEATURES], String> {
    let vals: Vec<f64> = s.split_whitespace().map(parse_f64).collect::<Result<_, _>>()?;
    vals.try_into().map_err(|v: Vec<f64>| format!("expected {N_FEATURES} values, got {}", v.len()))
}

fn parse_config(s: &str) -> Result<SvmConfig, String> {
    let mut cfg = SvmConfig::default();
    for kv in s.split_whitespace() {
        let (k, v) = kv.split_once('=').ok_or_else(|| format!("bad config entry {kv:?}"))?;
        let err = |e: &dyn std::fmt::Display| format!("bad config value {kv:?}: {e}");
        match k {
            "c" => cfg.c = v.parse().map_err(|e| err(&e))?,
            "epochs" => cfg.epochs = v.parse().map_err(|e| err(&e))?,
            "seed" => cfg.seed = v.parse().map_err(|e| err(&e))?,
            "class_weighting" => cfg.class_weighting = v.parse().map_err(|e| err(&e))?,
            "scaling" => cfg.scaling = v.parse().map_err(|e| err(&e))?,
            _ => return Err(format!("unknown config key {k:?}")),
        }
    }
    Ok(cfg)
}
