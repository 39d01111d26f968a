//! Markup tokenizer and word-embedding table for the coarse model.
//!
//! A block is rendered as a stream of tag tokens (`<li>`, `</li>`) and text
//! words with every attribute dropped, lowercased, and stripped of digits and
//! punctuation other than `<`, `>` and `/`. Embeddings are trained with
//! skip-gram and negative sampling over such streams.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dom::{is_void_element, Document, NodeId, TagBlacklist};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const PAD_TOKEN: &str = "<pad/>";
pub const UNK_TOKEN: &str = "<unk/>";
pub const DEFAULT_SEQ_LEN: usize = 40;
pub const DEFAULT_EMBED_DIM: usize = 100;

const PAD_INDEX: usize = 0;
const UNK_INDEX: usize = 1;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSequence {
    tokens: Vec<String>,
}

impl TokenSequence {
    /// Truncates or right-pads `tokens` to exactly `len`.
    pub fn new(mut tokens: Vec<String>, len: usize) -> Self {
        tokens.truncate(len);
        tokens.resize(len, PAD_TOKEN.to_string());
        Self { tokens }
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Tokens before the padding.
    pub fn content(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(String::as_str).filter(|t| *t != PAD_TOKEN)
    }
}

/// Keeps letters and the three markup characters; everything else (digits,
/// punctuation, symbols) is dropped.
fn clean_token(raw: &str) -> String {
    raw.chars().flat_map(char::to_lowercase).filter(|c| c.is_alphabetic() || matches!(c, '<' | '>' | '/')).collect()
}

/// Token stream of `block`, stopping once `limit` tokens are produced.
/// Blacklisted subtrees contribute nothing.
pub fn block_tokens(doc: &Document, block: NodeId, blacklist: &TagBlacklist, limit: usize) -> Vec<String> {
    enum Step {
        Enter(NodeId),
        Close(String),
    }
    let mut out = Vec::new();
    let mut stack = vec![Step::Enter(block)];
    while let Some(step) = stack.pop() {
        if out.len() >= limit {
            break;
        }
        match step {
            Step::Close(tok) => out.push(tok),
            Step::Enter(id) => {
                if let Some(raw) = doc.raw_text(id) {
                    for word in raw.split_whitespace() {
                        let w = clean_token(word);
                        if !w.is_empty() {
                            out.push(w);
                        }
                    }
                    continue;
                }
                let Some(tag) = doc.tag(id) else { continue };
                if blacklist.contains(tag) {
                    continue;
                }
                let name = clean_token(tag);
                out.push(format!("<{name}>"));
                if is_void_element(tag) {
                    continue;
                }
                stack.push(Step::Close(format!("</{name}>")));
                stack.extend(doc.children(id).iter().rev().map(|&c| Step::Enter(c)));
            }
        }
    }
    out.truncate(limit);
    out
}

pub fn tokenize_block(doc: &Document, block: NodeId, len: usize, blacklist: &TagBlacklist) -> TokenSequence {
    TokenSequence::new(block_tokens(doc, block, blacklist, len), len)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub min_count: usize,
    pub seed: u64,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self {
            dim: DEFAULT_EMBED_DIM,
            window: 5,
            negatives: 5,
            epochs: 5,
            learning_rate: 0.025,
            min_count: 1,
            seed: 11,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Matrix,
}

impl EmbeddingTable {
    /// Builds a table from explicit rows. `tokens[0]` must be the pad token
    /// and `tokens[1]` the unknown token.
    pub fn from_parts(tokens: Vec<String>, vectors: Matrix) -> Result<Self> {
        if tokens.len() < 2 || tokens[PAD_INDEX] != PAD_TOKEN || tokens[UNK_INDEX] != UNK_TOKEN {
            return Err(Error::format("embedding table", "rows 0 and 1 must be the pad and unknown tokens"));
        }
        if vectors.rows() != tokens.len() {
            return Err(Error::format(
                "embedding table",
                format!("{} tokens but {} vector rows", tokens.len(), vectors.rows()),
            ));
        }
        if vectors.row(PAD_INDEX).iter().any(|&v| v != 0.0) {
            return Err(Error::format("embedding table", "pad vector must be zero"));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::format("embedding table", format!("invalid token {t:?}")));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::format("embedding table", format!("duplicate token {t:?}")));
            }
        }
        Ok(Self { tokens, index, vectors })
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn vocab_len(&self) -> usize {
        self.tokens.len()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn pad_index(&self) -> usize {
        PAD_INDEX
    }

    pub fn unk_index(&self) -> usize {
        UNK_INDEX
    }

    pub fn lookup(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_INDEX)
    }

    pub fn vector(&self, token: &str) -> &[f64] {
        self.vectors.row(self.lookup(token))
    }

    pub fn vectors(&self) -> &Matrix {
        &self.vectors
    }

    /// SHA-256 prefix over token order and the exact vector bits.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.dim() as u64).to_le_bytes());
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update([0]);
        }
        for v in self.vectors.as_slice() {
            h.update(v.to_bits().to_le_bytes());
        }
        crate::svm_filter::hex_prefix(&h.finalize())
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
        let _ = writeln!(s, "{EMB_MAGIC} {EMB_VERSION}");
        let _ = writeln!(s, "dim {}", self.dim());
        let _ = writeln!(s, "vocab {}", self.vocab_len());
        for (i, t) in self.tokens.iter().enumerate() {
            s.push_str(t);
            for v in self.vectors.row(i) {
                let _ = write!(s, " {v}");
            }
            s.push('\n');
        }
        let _ = writeln!(s, "digest {}", self.digest());
        s.push_str("end\n");
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |r: String| Error::format("embedding table", r);
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        if header != format!("{EMB_MAGIC} {EMB_VERSION}") {
            return Err(bad(format!("unsupported header {header:?}")));
        }
        let mut field = |key: &str| -> Result<usize> {
            let line = lines.next().ok_or_else(|| bad(format!("missing {key}")))?;
            line.strip_prefix(key)
                .and_then(|r| r.trim().parse().ok())
                .ok_or_else(|| bad(format!("bad {key} line {line:?}")))
        };
        let dim = field("dim")?;
        let n = field("vocab")?;
        let mut tokens = Vec::with_capacity(n);
        let mut data = Vec::with_capacity(n * dim);
        for i in 0..n {
            let line = lines.next().ok_or_else(|| bad(format!("truncated at row {i}")))?;
            let mut parts = line.split(' ');
            tokens.push(parts.next().unwrap_or_default().to_string());
            let before = data.len();
            for p in parts {
                data.push(p.parse::<f64>().map_err(|e| bad(format!("row {i}: {e}")))?);
            }
            if data.len() - before != dim {
                return Err(bad(format!("row {i} has {} values, expected {dim}", data.len() - before)));
            }
        }
        let digest = lines
            .next()
            .and_then(|l| l.strip_prefix("digest "))
            .ok_or_else(|| bad("missing digest".into()))?
            .to_string();
        if lines.next() != Some("end") {
            return Err(bad("missing end marker".into()));
        }
        let table = Self::from_parts(tokens, Matrix::from_vec(n, dim, data))?;
        if table.digest() != digest {
            return Err(bad("digest mismatch".into()));
        }
        Ok(table)
    }
}

const EMB_MAGIC: &str = "specblock-embeddings";
const EMB_VERSION: u32 = 1;

/// Skip-gram with negative sampling over the non-pad tokens of `corpus`.
pub fn train_embeddings(corpus: &[TokenSequence], cfg: &EmbedConfig) -> Result<EmbeddingTable> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for seq in corpus {
        for t in seq.content() {
            if t != UNK_TOKEN {
                *counts.entry(t).or_default() += 1;
            }
        }
    }
    counts.retain(|_, c| *c >= cfg.min_count.max(1));
    if counts.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if cfg.dim == 0 {
        return Err(Error::Validation("embedding dimension must be positive".into()));
    }
    let mut vocab: Vec<(&str, usize)> = counts.into_iter().collect();
    vocab.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));

    let mut tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
    tokens.extend(vocab.iter().map(|(t, _)| t.to_string()));
    let offset = 2;
    let index: HashMap<&str, usize> = vocab.iter().enumerate().map(|(i, (t, _))| (*t, i)).collect();
    let v = vocab.len();
    let dim = cfg.dim;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut input: Vec<f64> = (0..v * dim).map(|_| (rng.gen::<f64>() - 0.5) / dim as f64).collect();
    let mut output = vec![0.0; v * dim];

    // unigram^0.75 sampling distribution
    let mut cumulative = Vec::with_capacity(v);
    let mut acc = 0.0;
    for (_, c) in &vocab {
        acc += (*c as f64).powf(0.75);
        cumulative.push(acc);
    }
    let sample_negative = |rng: &mut ChaCha8Rng| -> usize {
        let r = rng.gen::<f64>() * acc;
        cumulative.partition_point(|&c| c <= r).min(v - 1)
    };

    let sentences: Vec<Vec<usize>> =
        corpus.iter().map(|s| s.content().filter_map(|t| index.get(t).copied()).collect()).collect();
    let total_words: usize = sentences.iter().map(Vec::len).sum::<usize>() * cfg.epochs.max(1);
    let mut processed = 0usize;
    let mut order: Vec<usize> = (0..sentences.len()).collect();
    let mut grad = vec![0.0; dim];

    for _ in 0..cfg.epochs.max(1) {
        order.shuffle(&mut rng);
        for &si in &order {
            let sent = &sentences[si];
            for (pos, &center) in sent.iter().enumerate() {
                let progress = processed as f64 / total_words.max(1) as f64;
                let lr = (cfg.learning_rate * (1.0 - progress)).max(cfg.learning_rate * 1e-4);
                processed += 1;
                let reach = rng.gen_range(1..=cfg.window.max(1));
                let lo = pos.saturating_sub(reach);
                let hi = (pos + reach).min(sent.len() - 1);
                for (ctx_pos, &context) in sent.iter().enumerate().take(hi + 1).skip(lo) {
                    if ctx_pos == pos {
                        continue;
                    }
                    grad.iter_mut().for_each(|g| *g = 0.0);
                    let cin = &mut input[center * dim..(center + 1) * dim];
                    for k in 0..=cfg.negatives {
                        let (target, label) = if k == 0 {
                            (context, 1.0)
                        } else {
                            let neg = sample_negative(&mut rng);
                            if neg == context {
                                continue;
                            }
                            (neg, 0.0)
                        };
                        let out = &mut output[target * dim..(target + 1) * dim];
                        let score: f64 = cin.iter().zip(out.iter()).map(|(a, b)| a * b).sum();
                        let g = (label - sigmoid(score)) * lr;
                        for d in 0..dim {
                            grad[d] += g * out[d];
                            out[d] += g * cin[d];
                        }
                    }
                    for d in 0..dim {
                        cin[d] += grad[d];
                    }
                }
            }
        }
    }

    let mut data = vec![0.0; (v + offset) * dim];
    // unknown tokens share the centroid of the learned vectors
    for w in 0..v {
        for d in 0..dim {
            data[UNK_INDEX * dim + d] += input[w * dim + d] / v as f64;
        }
    }
    data[offset * dim..].copy_from_slice(&input);
    if data.iter().any(|x| !x.is_finite()) {
        return Err(Error::Validation("embedding training produced non-finite values".into()));
    }
    EmbeddingTable::from_parts(tokens, Matrix::from_vec(v + offset, dim, data))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Stacks the vectors of `seq` into a `len x dim` matrix.
pub fn embed_sequence(table: &EmbeddingTable, seq: &TokenSequence) -> Matrix {
    let dim = table.dim();
    let mut m = Matrix::zeros(seq.len(), dim);
    for (i, t) in seq.tokens().iter().enumerate() {
        m.row_mut(i).copy_from_slice(table.vector(t));
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn first_block(doc: &Document) -> NodeId {
        doc.element_children(doc.body()).next().unwrap()
    }

    fn toks(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn tokenizes_list_row() {
        let doc = Document::parse(b"<li class=\"row\"><div>Brand</div><div>LG</div></li>").unwrap();
        // an orphan li is kept by the parser inside body
        let li = first_block(&doc);
        let seq = tokenize_block(&doc, li, 12, &TagBlacklist::default());
        let expected = toks(&[
            "<li>", "<div>", "brand", "</div>", "<div>", "lg", "</div>", "</li>", PAD_TOKEN, PAD_TOKEN, PAD_TOKEN,
            PAD_TOKEN,
        ]);
        assert_eq!(seq.tokens(), expected.as_slice());
    }

    #[test]
    fn empty_div_and_digits() {
        let bl = TagBlacklist::default();
        let doc = Document::parse(b"<div></div>").unwrap();
        assert_eq!(
            tokenize_block(&doc, first_block(&doc), 4, &bl).tokens(),
            toks(&["<div>", "</div>", PAD_TOKEN, PAD_TOKEN]).as_slice()
        );
        let doc = Document::parse(b"<p>8 GB RAM, 2.5\" (x/y)</p>").unwrap();
        let seq = tokenize_block(&doc, first_block(&doc), 8, &bl);
        assert_eq!(seq.content().collect::<Vec<_>>(), ["<p>", "gb", "ram", "x/y", "</p>"]);
    }

    #[test]
    fn void_elements_and_blacklist() {
        let doc = Document::parse(b"<div>a<br><img src=x.png><script>var x</script><h2>Hi</h2></div>").unwrap();
        let seq = tokenize_block(&doc, first_block(&doc), 20, &TagBlacklist::default());
        assert_eq!(seq.content().collect::<Vec<_>>(), ["<div>", "a", "<br>", "<img>", "<h>", "hi", "</h>", "</div>"]);
    }

    #[test]
    fn truncates_to_length() {
        let doc = Document::parse(b"<ul><li>a</li><li>b</li><li>c</li></ul>").unwrap();
        let seq = tokenize_block(&doc, first_block(&doc), 5, &TagBlacklist::default());
        assert_eq!(seq.tokens(), toks(&["<ul>", "<li>", "a", "</li>", "<li>"]).as_slice());
    }

    proptest! {
        #[test]
        fn tokens_ignore_attributes(class in "[a-z0-9 _-]{0,12}", id in "[a-zA-Z0-9]{0,8}") {
            let bl = TagBlacklist::default();
            let a = Document::parse(b"<div><span>Brand</span><span>LG 55</span></div>").unwrap();
            let html = format!("<div class=\"{class}\" id=\"{id}\"><span style=\"x\">Brand</span><span>LG 55</span></div>");
            let b = Document::parse_str(&html).unwrap();
            let ta = tokenize_block(&a, first_block(&a), 40, &bl);
            let tb = tokenize_block(&b, first_block(&b), 40, &bl);
            prop_assert_eq!(&ta, &tb);
            for t in tb.tokens() {
                prop_assert!(!t.chars().any(|c| c.is_whitespace() || c.is_ascii_digit()));
                prop_assert!(t.chars().all(|c| c.is_alphabetic() || matches!(c, '<' | '>' | '/')));
            }
        }

        #[test]
        fn subtree_tokens_are_contiguous(n in 1usize..6) {
            let bl = TagBlacklist::default();
            let rows: String = (0..n).map(|i| format!("<li><b>k{i}</b><i>v</i></li>")).collect();
            let doc = Document::parse_str(&format!("<ul>{rows}</ul>")).unwrap();
            let ul = first_block(&doc);
            let all = block_tokens(&doc, ul, &bl, usize::MAX);
            for li in doc.element_children(ul) {
                let sub = block_tokens(&doc, li, &bl, usize::MAX);
                prop_assert!(all.windows(sub.len()).any(|w| w == sub.as_slice()));
            }
        }
    }

    fn small_table() -> EmbeddingTable {
        let tokens = toks(&[PAD_TOKEN, UNK_TOKEN, "brand", "<li>", "lg"]);
        let data = vec![
            0.0, 0.0, 0.0, //
            0.5, 0.5, 0.5, //
            1.0, 2.0, 3.0, //
            -1.0, 0.25, 4.0, //
            7.0, 8.0, 9.0,
        ];
        EmbeddingTable::from_parts(tokens, Matrix::from_vec(5, 3, data)).unwrap()
    }

    #[test]
    fn embed_lookup() {
        let table = small_table();
        let seq = TokenSequence::new(toks(&["<li>", "brand", "zzz"]), 4);
        let m = embed_sequence(&table, &seq);
        assert_eq!(m.shape(), (4, 3));
        // manual lookup
        assert_eq!(m.row(0), &[-1.0, 0.25, 4.0]);
        assert_eq!(m.row(1), &[1.0, 2.0, 3.0]);
        assert_eq!(m.row(2), &[0.5, 0.5, 0.5]);
        assert_eq!(m.row(3), &[0.0, 0.0, 0.0]);
        assert_eq!(table.lookup("never-seen"), table.unk_index());

        let swapped = TokenSequence::new(toks(&["brand", "<li>", "zzz"]), 4);
        let ms = embed_sequence(&table, &swapped);
        assert_eq!(ms.row(0), m.row(1));
        assert_eq!(ms.row(1), m.row(0));

        let pads = TokenSequence::new(vec![], 6);
        assert!(embed_sequence(&table, &pads).as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_nonzero_pad() {
        let tokens = toks(&[PAD_TOKEN, UNK_TOKEN]);
        let m = Matrix::from_vec(2, 1, vec![1.0, 0.0]);
        assert!(EmbeddingTable::from_parts(tokens, m).is_err());
    }

    fn cosine(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    }

    fn similarity_corpus() -> Vec<TokenSequence> {
        let mut corpus = Vec::new();
        for i in 0..300 {
            let key = if i % 2 == 0 { "brand" } else { "model" };
            let val = ["lg", "samsung", "sony"][i % 3];
            corpus.push(TokenSequence::new(
                toks(&["<li>", "<span>", key, "</span>", "<span>", val, "</span>", "</li>"]),
                10,
            ));
            corpus.push(TokenSequence::new(toks(&["<p>", "great", "value", "for", "money", "</p>"]), 10));
        }
        corpus.push(TokenSequence::new(toks(&["<p>", "zebra", "great", "for", "</p>"]), 10));
        corpus
    }

    #[test]
    fn shared_contexts_are_similar() {
        let cfg = EmbedConfig { dim: 24, epochs: 5, ..EmbedConfig::default() };
        let table = train_embeddings(&similarity_corpus(), &cfg).unwrap();
        let b = table.vector("brand");
        assert!(cosine(b, table.vector("model")) > cosine(b, table.vector("zebra")));
        assert!(table.vectors().as_slice().iter().all(|v| v.is_finite()));
        assert!(table.vector(PAD_TOKEN).iter().all(|&v| v == 0.0));
        assert_eq!(table.lookup("unseen"), table.unk_index());
    }

    #[test]
    fn training_is_seeded_and_needs_data() {
        let cfg = EmbedConfig { dim: 8, epochs: 1, ..EmbedConfig::default() };
        let corpus = similarity_corpus();
        assert_eq!(train_embeddings(&corpus, &cfg).unwrap(), train_embeddings(&corpus, &cfg).unwrap());
        assert!(matches!(train_embeddings(&[], &cfg), Err(Error::EmptyCorpus)));
        let pads = vec![TokenSequence::new(vec![], 5)];
        assert!(matches!(train_embeddings(&pads, &cfg), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn persistence_round_trip() {
        let cfg = EmbedConfig { dim: 6, epochs: 1, ..EmbedConfig::default() };
        let table = train_embeddings(&similarity_corpus(), &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.txt");
        table.save(&path).unwrap();
        let back = EmbeddingTable::load(&path).unwrap();
        assert_eq!(back.tokens(), table.tokens());
        assert_eq!(back.digest(), table.digest());
        for (a, b) in back.vectors().as_slice().iter().zip(table.vectors().as_slice()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }

        let text = table.to_text();
        let corrupt = text.replacen("dim 6", "dim x", 1);
        assert!(matches!(EmbeddingTable::from_text(&corrupt), Err(Error::Format { .. })));
        let v9 = text.replacen("specblock-embeddings 1", "specblock-embeddings 9", 1);
        assert!(matches!(EmbeddingTable::from_text(&v9), Err(Error::Format { .. })));
        let cut = &text[..text.len() - 20];
        assert!(matches!(EmbeddingTable::from_text(cut), Err(Error::Format { .. })));
    }
}
