//! Configuration and training glue from labelled pages to models.

use serde::{Deserialize, Serialize};

use crate::classify::{Arrangement, TraverseOptions};
use crate::cnn_coarse::{train_cnn, CnnConfig, CoarseModel, TrainConfig};
use crate::dataset::{for_each_labeled_block, BlockLabel, DEFAULT_SKIP_TOP};
use crate::dom::{Document, TagBlacklist};
use crate::error::{Error, Result};
use crate::extract::ExtractConfig;
use crate::features::{compute_filter_features, FilterFeatures};
use crate::svm_filter::{train_svm, SvmConfig, SvmModel};
use crate::token_embed::{block_tokens, tokenize_block, train_embeddings, EmbedConfig, EmbeddingTable, TokenSequence};
use crate::Label;

/// Every tunable of the system in one place.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub blacklist: TagBlacklist,
    pub traverse: TraverseOptions,
    pub arrangement: Arrangement,
    pub skip_top: usize,
    pub svm: SvmConfig,
    pub embed: EmbedConfig,
    /// Longest token stream per page fed to embedding training.
    pub embed_page_tokens: usize,
    pub cnn: CnnConfig,
    pub train: TrainConfig,
    pub extract: ExtractConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            blacklist: TagBlacklist::default(),
            traverse: TraverseOptions::default(),
            arrangement: Arrangement::FilterPlusCoarse,
            skip_top: DEFAULT_SKIP_TOP,
            svm: SvmConfig::default(),
            embed: EmbedConfig::default(),
            embed_page_tokens: 20_000,
            cnn: CnnConfig::default(),
            train: TrainConfig::default(),
            extract: ExtractConfig::default(),
        }
    }
}

/// A parsed page with its block labels.
#[derive(Debug, Clone)]
pub struct LabeledPage {
    pub doc: Document,
    pub labels: Vec<BlockLabel>,
}

pub fn filter_samples(pages: &[LabeledPage], blacklist: &TagBlacklist) -> Result<Vec<(FilterFeatures, Label)>> {
    let mut out = Vec::new();
    for p in pages {
        let refs: Vec<&BlockLabel> = p.labels.iter().collect();
        for_each_labeled_block(&p.doc, &refs, |d, n, y| out.push((compute_filter_features(d, n, blacklist), y)))?;
    }
    Ok(out)
}

pub fn token_samples(
    pages: &[LabeledPage],
    seq_len: usize,
    blacklist: &TagBlacklist,
) -> Result<Vec<(TokenSequence, Label)>> {
    let mut out = Vec::new();
    for p in pages {
        let refs: Vec<&BlockLabel> = p.labels.iter().collect();
        for_each_labeled_block(&p.doc, &refs, |d, n, y| out.push((tokenize_block(d, n, seq_len, blacklist), y)))?;
    }
    Ok(out)
}

/// One unpadded token stream per page, taken from `<body>`.
pub fn embedding_corpus<'a>(
    docs: impl IntoIterator<Item = &'a Document>,
    limit: usize,
    blacklist: &TagBlacklist,
) -> Vec<TokenSequence> {
    docs.into_iter()
        .map(|d| {
            let toks = block_tokens(d, d.body(), blacklist, limit);
            let n = toks.len();
            TokenSequence::new(toks, n)
        })
        .filter(|s| !s.is_empty())
        .collect()
}

pub fn train_filter(pages: &[LabeledPage], cfg: &PipelineConfig) -> Result<SvmModel> {
    train_svm(&filter_samples(pages, &cfg.blacklist)?, &cfg.svm)
}

pub fn train_table(pages: &[LabeledPage], cfg: &PipelineConfig) -> Result<EmbeddingTable> {
    let corpus = embedding_corpus(pages.iter().map(|p| &p.doc), cfg.embed_page_tokens, &cfg.blacklist);
    train_embeddings(&corpus, &cfg.embed)
}

/// Trains the CNN against `table`. A non-empty `validation` set selects the
/// best epoch.
pub fn train_coarse(
    pages: &[LabeledPage],
    validation: &[LabeledPage],
    table: EmbeddingTable,
    cfg: &PipelineConfig,
) -> Result<CoarseModel> {
    if table.dim() != cfg.cnn.embed_dim {
        return Err(Error::Validation(format!(
            "embedding dim {} differs from the CNN input dim {}",
            table.dim(),
            cfg.cnn.embed_dim
        )));
    }
    let train = token_samples(pages, cfg.cnn.seq_len, &cfg.blacklist)?;
    let val = token_samples(validation, cfg.cnn.seq_len, &cfg.blacklist)?;
    let cnn = train_cnn(&train, &table, &cfg.cnn, &cfg.train, (!val.is_empty()).then_some(val.as_slice()))?;
    CoarseModel::new(cnn, table)
}

#[derive(Debug, Clone)]
pub struct TrainedModels {
    pub filter: SvmModel,
    pub coarse: CoarseModel,
}

/// Filter, embeddings and CNN from the same labelled pages.
pub fn train_all(train: &[LabeledPage], validation: &[LabeledPage], cfg: &PipelineConfig) -> Result<TrainedModels> {
    let filter = train_filter(train, cfg)?;
    let table = train_table(train, cfg)?;
    let coarse = train_coarse(train, validation, table, cfg)?;
    Ok(TrainedModels { filter, coarse })
}
