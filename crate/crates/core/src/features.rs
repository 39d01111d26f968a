//! Markup-agnostic block features for the filter model.

use serde::{Deserialize, Serialize};

use crate::dom::{Document, NodeId, TagBlacklist};

pub const N_FEATURES: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FilterFeatures {
    pub n_text_fields: usize,
    pub total_text_len: usize,
    pub alnum_ratio: f64,
    pub n_images: usize,
    pub n_links: usize,
    pub upper_ratio: f64,
}

impl FilterFeatures {
    pub fn to_array(&self) -> [f64; N_FEATURES] {
        [
            self.n_text_fields as f64,
            self.total_text_len as f64,
            self.alnum_ratio,
            self.n_images as f64,
            self.n_links as f64,
            self.upper_ratio,
        ]
    }
}

/// Computes the six filter features of `block`. Text under blacklisted tags
/// is invisible, as are images and links inside such subtrees.
pub fn compute_filter_features(doc: &Document, block: NodeId, blacklist: &TagBlacklist) -> FilterFeatures {
    let mut f = FilterFeatures::default();
    let mut alnum = 0usize;
    let mut upper = 0usize;
    for id in doc.visible_descendants(block, blacklist) {
        if let Some(raw) = doc.raw_text(id) {
            let text = crate::dom::normalize_text(raw);
            if text.is_empty() {
                continue;
            }
            f.n_text_fields += 1;
            for c in text.chars() {
                f.total_text_len += 1;
                if c.is_alphanumeric() {
                    alnum += 1;
                }
                if c.is_uppercase() {
                    upper += 1;
                }
            }
        } else {
            match doc.tag(id) {
                Some("img") => f.n_images += 1,
                Some("a") if doc.attr(id, "href").is_some_and(|h| !h.trim().is_empty()) => f.n_links += 1,
                _ => {}
            }
        }
    }
    if f.total_text_len > 0 {
        f.alnum_ratio = alnum as f64 / f.total_text_len as f64;
        f.upper_ratio = upper as f64 / f.total_text_len as f64;
    }
    f
}

/// Per-feature mean and standard deviation from a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerStats {
    pub mean: [f64; N_FEATURES],
    pub std: [f64; N_FEATURES],
}

impl ScalerStats {
    /// Population statistics over `rows`. Returns `None` for an empty set.
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a FilterFeatures>) -> Option<Self> {
        let rows: Vec<[f64; N_FEATURES]> = rows.into_iter().map(FilterFeatures::to_array).collect();
        if rows.is_empty() {
            return None;
        }
        let n = rows.len() as f64;
        let mut mean = [0.0; N_FEATURES];
        for r in &rows {
            for (m, x) in mean.iter_mut().zip(r) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut std = [0.0; N_FEATURES];
        for r in &rows {
            for j in 0..N_FEATURES {
                std[j] += (r[j] - mean[j]).powi(2);
            }
        }
        std.iter_mut().for_each(|s| *s = (*s / n).sqrt());
        Some(Self { mean, std })
    }

    pub fn scale(&self, f: &FilterFeatures) -> [f64; N_FEATURES] {
        let x = f.to_array();
        let mut out = [0.0; N_FEATURES];
        for j in 0..N_FEATURES {
            out[j] = if self.std[j] > 0.0 { (x[j] - self.mean[j]) / self.std[j] } else { 0.0 };
        }
        out
    }

    /// Inverse of [`scale`](Self::scale) for features with non-zero variance;
    /// zero-variance components come back as their mean.
    pub fn unscale(&self, z: &[f64; N_FEATURES]) -> [f64; N_FEATURES] {
        let mut out = [0.0; N_FEATURES];
        for j in 0..N_FEATURES {
            out[j] = z[j] * self.std[j] + self.mean[j];
        }
        out
    }
}

pub fn scale_features(f: &FilterFeatures, stats: &ScalerStats) -> [f64; N_FEATURES] {
    stats.scale(f)
}
