//! Wrapper-induction extraction of attribute-value pairs.
//!
//! For each candidate block, text cells matching a known attribute name (the
//! seed pool) are grouped by their wrapper, the tag path from the cell's
//! parent up to the block. The wrapper with the most distinct seed matches
//! wins. From each of its matched cells we climb to the first ancestor that
//! holds at least two clean text fields (the row) and read that row and all
//! of its sibling rows column by column.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::classify::CandidateSet;
use crate::dom::{normalize_text, wrapper_of, Document, NodeId, TagBlacklist};
use crate::error::{Error, Result};

/// Tag path from a text cell's parent up to, but excluding, the block root.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Wrapper {
    tags: Vec<String>,
}

impl Wrapper {
    pub fn new(tags: Vec<String>) -> Self {
        Self { tags }
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }
}

impl fmt::Display for Wrapper {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tags.join("<"))
    }
}

/// Case-insensitive, whitespace-collapsed form used for seed matching.
pub fn normalize_attribute(s: &str) -> String {
    normalize_text(s).to_lowercase()
}

const DEFAULT_SEEDS: &str = include_str!("../data/seeds.txt");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedPool {
    attributes: BTreeSet<String>,
    initial_size: usize,
}

impl SeedPool {
    pub fn new<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let attributes: BTreeSet<String> =
            names.into_iter().map(|n| normalize_attribute(n.as_ref())).filter(|n| !n.is_empty()).collect();
        let initial_size = attributes.len();
        Self { attributes, initial_size }
    }

    /// Parses one name per line; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Self {
        Self::new(text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::parse(&text))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.attributes.contains(&normalize_attribute(name))
    }

    /// Adds a name; returns whether it was new.
    pub fn insert(&mut self, name: &str) -> bool {
        let n = normalize_attribute(name);
        !n.is_empty() && self.attributes.insert(n)
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn initial_size(&self) -> usize {
        self.initial_size
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.attributes.iter().map(String::as_str)
    }
}

impl Default for SeedPool {
    fn default() -> Self {
        Self::parse(DEFAULT_SEEDS)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AttrValuePair {
    pub attribute: String,
    pub value: String,
    pub page_id: String,
    pub block_node_id: usize,
    pub block_path: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ColumnMode {
    /// One attribute-value pair per two fields.
    #[default]
    TwoCol,
    /// Two pairs per four fields: `attr1 val1 attr2 val2`.
    FourCol,
}

impl FromStr for ColumnMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two-col" | "2" => Ok(ColumnMode::TwoCol),
            "four-col" | "4" => Ok(ColumnMode::FourCol),
            other => Err(Error::Validation(format!("unknown column mode {other:?}"))),
        }
    }
}

impl fmt::Display for ColumnMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ColumnMode::TwoCol => "two-col",
            ColumnMode::FourCol => "four-col",
        })
    }
}

/// Text nodes of a block that never count as fields: anything under a
/// blacklisted tag and anything made only of punctuation or whitespace.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExclusionSet {
    excluded: HashSet<NodeId>,
}

impl ExclusionSet {
    pub fn for_block(doc: &Document, block: NodeId, blacklist: &TagBlacklist) -> Self {
        let visible: HashSet<NodeId> = doc.visible_descendants(block, blacklist).collect();
        let excluded = doc
            .descendants(block)
            .filter(|&n| doc.is_text(n))
            .filter(|n| {
                !visible.contains(n)
                    || doc.raw_text(*n).is_some_and(|t| t.chars().all(|c| c.is_whitespace() || !c.is_alphanumeric()))
            })
            .collect();
        Self { excluded }
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.excluded.contains(&id)
    }

    pub fn len(&self) -> usize {
        self.excluded.len()
    }

    pub fn is_empty(&self) -> bool {
        self.excluded.is_empty()
    }
}

/// Non-empty, non-excluded text nodes below `node` in document order.
pub fn clean_text_fields(doc: &Document, node: NodeId, exclusions: &ExclusionSet) -> Vec<NodeId> {
    doc.descendants(node)
        .filter(|&n| doc.raw_text(n).is_some_and(|t| !t.trim().is_empty()) && !exclusions.contains(n))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WrapperMatch {
    pub wrapper: Wrapper,
    /// Distinct seed attributes matched under this wrapper.
    pub support: usize,
    /// Matched text nodes in document order.
    pub support_nodes: Vec<NodeId>,
}

#[derive(Default)]
struct Group {
    attrs: BTreeSet<String>,
    nodes: Vec<NodeId>,
    rows: HashSet<NodeId>,
}

fn group_seed_matches(
    doc: &Document,
    block: NodeId,
    seeds: &SeedPool,
    blacklist: &TagBlacklist,
) -> BTreeMap<Wrapper, Group> {
    let mut groups: BTreeMap<Wrapper, Group> = BTreeMap::new();
    if seeds.is_empty() {
        return groups;
    }
    for id in doc.visible_descendants(block, blacklist) {
        let Some(raw) = doc.raw_text(id) else { continue };
        let name = normalize_attribute(raw);
        if name.is_empty() || !seeds.attributes.contains(&name) {
            continue;
        }
        let wrapper = wrapper_of(doc, id, Some(block));
        let cell = doc.parent(id).unwrap_or(block);
        let row_hint = if cell == block { cell } else { doc.parent(cell).unwrap_or(cell) };
        let g = groups.entry(wrapper).or_default();
        g.attrs.insert(name);
        g.nodes.push(id);
        g.rows.insert(row_hint);
    }
    groups
}

/// Support of every wrapper that matched at least one seed.
pub fn wrapper_supports(
    doc: &Document,
    block: NodeId,
    seeds: &SeedPool,
    blacklist: &TagBlacklist,
) -> Vec<(Wrapper, usize)> {
    group_seed_matches(doc, block, seeds, blacklist).into_iter().map(|(w, g)| (w, g.attrs.len())).collect()
}

/// Picks the wrapper with maximum seed support. Ties go to the wrapper whose
/// matches span more rows, then to the lexicographically smallest signature.
pub fn match_tag(doc: &Document, block: NodeId, seeds: &SeedPool, blacklist: &TagBlacklist) -> Result<WrapperMatch> {
    let mut best: Option<(Wrapper, Group)> = None;
    for (w, g) in group_seed_matches(doc, block, seeds, blacklist) {
        let better = match &best {
            None => true,
            Some((_, b)) => (g.attrs.len(), g.rows.len()) > (b.attrs.len(), b.rows.len()),
        };
        if better {
            best = Some((w, g));
        }
    }
    let (wrapper, g) = best.ok_or(Error::NoMatch)?;
    Ok(WrapperMatch { wrapper, support: g.attrs.len(), support_nodes: g.nodes })
}

/// Climbs from `cell` to the first ancestor strictly below `block` that
/// holds at least two clean text fields.
pub fn bottom_up(doc: &Document, block: NodeId, cell: NodeId, exclusions: &ExclusionSet) -> Result<NodeId> {
    let mut cur = cell;
    loop {
        if cur == block {
            return Err(Error::RowNotFound);
        }
        let parent = doc.parent(cur).ok_or(Error::RowNotFound)?;
        if parent == block {
            return Err(Error::RowNotFound);
        }
        if clean_text_fields(doc, parent, exclusions).len() > 1 {
            return Ok(parent);
        }
        cur = parent;
    }
}

/// Reads attribute-value pairs from the clean text fields of `row`.
pub fn extract_row_wise(
    doc: &Document,
    row: NodeId,
    mode: ColumnMode,
    exclusions: &ExclusionSet,
) -> Vec<(String, String)> {
    let fields: Vec<String> = clean_text_fields(doc, row, exclusions).into_iter().filter_map(|n| doc.text(n)).collect();
    if fields.len() <= 1 {
        return Vec::new();
    }
    let mut out = Vec::new();
    match mode {
        ColumnMode::TwoCol => {
            for pair in fields.chunks_exact(2) {
                out.push((pair[0].clone(), pair[1].clone()));
            }
        }
        ColumnMode::FourCol => {
            for group in fields.chunks(4) {
                if group.len() >= 2 {
                    out.push((group[0].clone(), group[1].clone()));
                }
                if group.len() == 4 {
                    out.push((group[2].clone(), group[3].clone()));
                }
            }
        }
    }
    out
}

type Pairs = Vec<(String, String)>;

/// Finds the row holding `cell` and reads it together with all its sibling
/// rows. Returns the pairs and the rows that were read.
pub fn traverse_granular(
    doc: &Document,
    block: NodeId,
    cell: NodeId,
    mode: ColumnMode,
    exclusions: &ExclusionSet,
) -> Result<(Pairs, Vec<NodeId>)> {
    let row = bottom_up(doc, block, cell, exclusions)?;
    let rows: Vec<NodeId> = match doc.parent(row) {
        Some(parent) => doc.element_children(parent).collect(),
        None => vec![row],
    };
    let pairs = rows.iter().flat_map(|&r| extract_row_wise(doc, r, mode, exclusions)).collect();
    Ok((pairs, rows))
}

/// Runs [`traverse_granular`] from every support cell of `matched`, skipping
/// cells whose row was already read. Pairs come back in traversal order,
/// possibly with repeats. When no support cell sits in a row below the block
/// root (a flat block), the block itself is read as one row.
pub fn traverse_block(
    doc: &Document,
    block: NodeId,
    matched: &WrapperMatch,
    mode: ColumnMode,
    exclusions: &ExclusionSet,
) -> Vec<(String, String)> {
    let mut out = Vec::new();
    let mut covered: HashSet<NodeId> = HashSet::new();
    for &text in &matched.support_nodes {
        let Some(cell) = doc.parent(text) else { continue };
        if wrapper_of(doc, text, Some(block)) != matched.wrapper {
            continue;
        }
        match bottom_up(doc, block, cell, exclusions) {
            Ok(row) if covered.contains(&row) => continue,
            Ok(_) => {}
            Err(_) => continue,
        }
        if let Ok((pairs, rows)) = traverse_granular(doc, block, cell, mode, exclusions) {
            covered.extend(rows);
            out.extend(pairs);
        }
    }
    if covered.is_empty() {
        out = extract_row_wise(doc, block, mode, exclusions);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractConfig {
    pub mode: ColumnMode,
    /// Feed extracted attribute names back into the seed pool after each page.
    pub feedback: bool,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self { mode: ColumnMode::TwoCol, feedback: true }
    }
}

/// Extracts the distinct pairs of one block.
pub fn extract_block(
    doc: &Document,
    block: NodeId,
    seeds: &SeedPool,
    mode: ColumnMode,
    blacklist: &TagBlacklist,
) -> Result<Vec<(String, String)>> {
    let matched = match_tag(doc, block, seeds, blacklist)?;
    let exclusions = ExclusionSet::for_block(doc, block, blacklist);
    let mut seen = HashSet::new();
    Ok(traverse_block(doc, block, &matched, mode, &exclusions)
        .into_iter()
        .filter(|p| !p.0.is_empty() && !p.1.is_empty() && seen.insert(p.clone()))
        .collect())
}

/// Stateful extractor carrying the seed pool across pages.
#[derive(Debug, Clone)]
pub struct Extractor {
    pub seeds: SeedPool,
    pub config: ExtractConfig,
    pub blacklist: TagBlacklist,
}

impl Extractor {
    pub fn new(seeds: SeedPool, config: ExtractConfig, blacklist: TagBlacklist) -> Self {
        Self { seeds, config, blacklist }
    }

    /// Extracts every candidate of one page. With feedback on, attribute
    /// names found here join the seed pool once the whole page is done.
    pub fn extract_page(&mut self, doc: &Document, candidates: &CandidateSet) -> Vec<AttrValuePair> {
        let mut out = Vec::new();
        for cand in &candidates.blocks {
            let Some(block) = cand.node else { continue };
            match extract_block(doc, block, &self.seeds, self.config.mode, &self.blacklist) {
                Ok(pairs) => out.extend(pairs.into_iter().map(|(attribute, value)| AttrValuePair {
                    attribute,
                    value,
                    page_id: doc.page_id.clone(),
                    block_node_id: block.0,
                    block_path: cand.path.clone(),
                })),
                Err(e) => log::debug!("page {}: block {:?}: {e}", doc.page_id, cand.path),
            }
        }
        if self.config.feedback {
            for p in &out {
                self.seeds.insert(&p.attribute);
            }
        }
        out
    }
}

/// Extracts from pages in order, sharing one seed pool.
pub fn extract_specifications(
    pages: &[(Document, CandidateSet)],
    seeds: &mut SeedPool,
    config: ExtractConfig,
    blacklist: &TagBlacklist,
) -> Vec<AttrValuePair> {
    let mut ex = Extractor::new(std::mem::take(seeds), config, blacklist.clone());
    let out = pages.iter().flat_map(|(doc, cands)| ex.extract_page(doc, cands)).collect::<Vec<_>>();
    *seeds = ex.seeds;
    out
}
