//! Corpus files, block labelling and ground truth.
//!
//! All files are UTF-8 JSON lines. Every record carries `schema_version`.
//!
//! * manifest: `{"schema_version":1,"page_id":..,"html_path":..,"split":"train"|"validation"|"holdout","source":..,"category":..}`
//! * labels: `{"schema_version":1,"page_id":..,"block_path":[..],"label":"spec"|"non_spec"}`
//! * ground truth: `{"schema_version":1,"page_id":..,"attribute":..,"value":..}`
//!
//! `html_path` is resolved relative to the manifest's directory. A
//! `block_path` lists element-child indices from the `html` root.

pub mod synth;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::classify::TraverseOptions;
use crate::dom::{Document, NodeId, TagBlacklist};
use crate::error::{Error, Result};
use crate::Label;

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_SKIP_TOP: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Holdout,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Holdout => "holdout",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "holdout" => Ok(Split::Holdout),
            other => Err(Error::Validation(format!("unknown split {other:?}"))),
        }
    }
}

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub page_id: String,
    pub html_path: String,
    pub split: Split,
    #[serde(default)]
    pub source: String,
    #[serde(default)]
    pub category: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorpusManifest {
    pub entries: Vec<ManifestEntry>,
    pub base_dir: PathBuf,
}

impl CorpusManifest {
    /// Loads and validates a manifest: unique page ids, existing files.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let entries: Vec<ManifestEntry> = read_jsonl(path)?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let manifest = Self { entries, base_dir };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            check_version(e.schema_version)?;
            if !seen.insert(e.page_id.as_str()) {
                return Err(Error::Validation(format!("duplicate page_id {:?}", e.page_id)));
            }
            let p = self.html_path(e);
            if !p.is_file() {
                return Err(Error::Validation(format!("page {:?}: missing file {}", e.page_id, p.display())));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_jsonl(path, &self.entries)
    }

    pub fn html_path(&self, entry: &ManifestEntry) -> PathBuf {
        self.base_dir.join(&entry.html_path)
    }

    pub fn load_document(&self, entry: &ManifestEntry) -> Result<Document> {
        let p = self.html_path(entry);
        let raw = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
        Ok(Document::parse(&raw)?.with_ids(entry.page_id.clone(), p.display().to_string()))
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockLabel {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub page_id: String,
    pub block_path: Vec<usize>,
    pub label: Label,
}

impl BlockLabel {
    pub fn new(page_id: impl Into<String>, block_path: Vec<usize>, label: Label) -> Self {
        Self { schema_version: SCHEMA_VERSION, page_id: page_id.into(), block_path, label }
    }
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<Vec<BlockLabel>> {
    let labels: Vec<BlockLabel> = read_jsonl(path)?;
    for l in &labels {
        check_version(l.schema_version)?;
    }
    Ok(labels)
}

pub fn save_labels(path: impl AsRef<Path>, labels: &[BlockLabel]) -> Result<()> {
    write_jsonl(path, labels)
}

/// Labels grouped by page id.
pub fn labels_by_page(labels: &[BlockLabel]) -> HashMap<&str, Vec<&BlockLabel>> {
    let mut map: HashMap<&str, Vec<&BlockLabel>> = HashMap::new();
    for l in labels {
        map.entry(l.page_id.as_str()).or_default().push(l);
    }
    map
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct PairRecord {
    #[serde(default = "schema_version")]
    schema_version: u32,
    page_id: String,
    attribute: String,
    value: String,
}

/// Attribute-value pairs of one page; non-empty and unique.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroundTruth {
    pub page_id: String,
    pub pairs: Vec<(String, String)>,
}

impl GroundTruth {
    /// Normalizes whitespace, rejects empty attributes or values and drops
    /// repeated pairs.
    pub fn new(page_id: impl Into<String>, pairs: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let page_id = page_id.into();
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for (a, v) in pairs {
            let (a, v) = (crate::dom::normalize_text(&a), crate::dom::normalize_text(&v));
            if a.is_empty() || v.is_empty() {
                return Err(Error::Validation(format!("page {page_id:?}: empty attribute or value in ({a:?}, {v:?})")));
            }
            if seen.insert((a.clone(), v.clone())) {
                out.push((a, v));
            } else {
                log::warn!("page {page_id:?}: duplicate pair ({a:?}, {v:?}) collapsed");
            }
        }
        Ok(Self { page_id, pairs: out })
    }
}

pub fn load_ground_truth(path: impl AsRef<Path>) -> Result<Vec<GroundTruth>> {
    let records: Vec<PairRecord> = read_jsonl(path)?;
    let mut order = Vec::new();
    let mut grouped: HashMap<String, Vec<(String, String)>> = HashMap::new();
    for r in records {
        check_version(r.schema_version)?;
        if !grouped.contains_key(&r.page_id) {
            order.push(r.page_id.clone());
        }
        grouped.entry(r.page_id).or_default().push((r.attribute, r.value));
    }
    order
        .into_iter()
        .map(|id| {
            let pairs = grouped.remove(&id).unwrap_or_default();
            GroundTruth::new(id, pairs)
        })
        .collect()
}

pub fn save_ground_truth(path: impl AsRef<Path>, truths: &[GroundTruth]) -> Result<()> {
    let records: Vec<PairRecord> = truths
        .iter()
        .flat_map(|t| {
            t.pairs.iter().map(|(a, v)| PairRecord {
                schema_version: SCHEMA_VERSION,
                page_id: t.page_id.clone(),
                attribute: a.clone(),
                value: v.clone(),
            })
        })
        .collect();
    write_jsonl(path, &records)
}

fn check_version(v: u32) -> Result<()> {
    if v != SCHEMA_VERSION {
        return Err(Error::format(
            "record",
            format!("schema_version {v} is not supported (expected {SCHEMA_VERSION})"),
        ));
    }
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| Error::format("jsonl", format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, records: &[T]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

fn resolve_all(doc: &Document, paths: &[Vec<usize>]) -> Result<Vec<NodeId>> {
    paths
        .iter()
        .map(|p| doc.resolve_path(p).filter(|&n| doc.is_element(n)).ok_or_else(|| Error::Path(p.clone())))
        .collect()
}

/// Copy of `doc` with the given blocks detached.
pub fn without_blocks(doc: &Document, paths: &[Vec<usize>]) -> Result<Document> {
    let mut copy = doc.clone();
    for id in resolve_all(doc, paths)? {
        if copy.is_attached(id) && id != copy.root() {
            copy.decompose(id)?;
        }
    }
    Ok(copy)
}

/// Non-spec blocks of a page: with its spec blocks removed, every element
/// below `<body>` (inclusive) that has more than one child and visible text,
/// in pre-order, minus the first `skip_top`.
pub fn harvest_negative_blocks(
    doc: &Document,
    spec_paths: &[Vec<usize>],
    skip_top: usize,
    blacklist: &TagBlacklist,
    opts: TraverseOptions,
) -> Result<Vec<BlockLabel>> {
    let body = doc.body();
    let pruned = without_blocks(doc, spec_paths)?;
    if !pruned.is_attached(body) {
        return Ok(Vec::new());
    }
    let mut found = Vec::new();
    let mut stack = vec![body];
    while let Some(n) = stack.pop() {
        if !pruned.is_element(n) || pruned.is_blacklisted(n, blacklist) || !pruned.has_text(n, blacklist) {
            continue;
        }
        let children =
            if opts.element_children_only { pruned.element_children(n).count() } else { pruned.children(n).len() };
        if children > 1 {
            found.push(pruned.path_of(n));
        }
        stack.extend(pruned.element_children(n).collect::<Vec<_>>().into_iter().rev());
    }
    Ok(found.into_iter().skip(skip_top).map(|p| BlockLabel::new(doc.page_id.clone(), p, Label::NonSpec)).collect())
}

/// Spec labels for `spec_paths` followed by the harvested non-spec labels.
pub fn label_page(
    doc: &Document,
    spec_paths: &[Vec<usize>],
    skip_top: usize,
    blacklist: &TagBlacklist,
    opts: TraverseOptions,
) -> Result<Vec<BlockLabel>> {
    resolve_all(doc, spec_paths)?;
    let mut out: Vec<BlockLabel> =
        spec_paths.iter().map(|p| BlockLabel::new(doc.page_id.clone(), p.clone(), Label::Spec)).collect();
    out.extend(harvest_negative_blocks(doc, spec_paths, skip_top, blacklist, opts)?);
    Ok(out)
}

/// Calls `visit` once per labelled block. Spec blocks are seen in the intact
/// page; non-spec blocks in the page with its spec blocks removed, matching
/// how the non-spec blocks were harvested.
pub fn for_each_labeled_block<F>(doc: &Document, labels: &[&BlockLabel], mut visit: F) -> Result<()>
where
    F: FnMut(&Document, NodeId, Label),
{
    let spec_paths: Vec<Vec<usize>> =
        labels.iter().filter(|l| l.label == Label::Spec).map(|l| l.block_path.clone()).collect();
    let pruned = without_blocks(doc, &spec_paths)?;
    for l in labels {
        let target = match l.label {
            Label::Spec => doc,
            Label::NonSpec => &pruned,
        };
        let id = target
            .resolve_path(&l.block_path)
            .filter(|&n| target.is_element(n))
            .ok_or_else(|| Error::Path(l.block_path.clone()))?;
        visit(target, id, l.label);
    }
    Ok(())
}
