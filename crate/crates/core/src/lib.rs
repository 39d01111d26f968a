//! Detection of product-specification blocks in HTML pages and extraction of
//! their attribute-value pairs.
//!
//! Classification walks the DOM from `<body>` and passes every multi-child
//! text block through a cascade: a linear SVM on six hand-coded features
//! ([`svm_filter`]) and, for blocks it accepts, a token CNN ([`cnn_coarse`]).
//! Accepted blocks are handed to [`extract`], which induces a tag wrapper from
//! seed attribute names and reads every attribute-value row it governs.

pub mod classify;
pub mod cnn_coarse;
pub mod dataset;
pub mod dom;
pub mod error;
pub mod eval;
pub mod extract;
pub mod features;
pub mod matrix;
pub mod pipeline;
pub mod svm_filter;
pub mod token_embed;

use serde::{Deserialize, Serialize};

pub use error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Spec,
    NonSpec,
}

impl Label {
    /// `+1` for spec, `-1` otherwise.
    pub fn sign(self) -> f64 {
        match self {
            Label::Spec => 1.0,
            Label::NonSpec => -1.0,
        }
    }
}
