//! Cascade traversal that produces candidate specification blocks.
//!
//! Starting at `<body>`, every non-blacklisted element that holds visible
//! text is considered; elements with more than one child are run through the
//! filter and, if it accepts, the coarse model. A block accepted by both is
//! recorded and decomposed, so nothing below it is visited again. Otherwise
//! the walk continues into the element children in document order.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cnn_coarse::{predict_coarse, CoarseModel};
use crate::dom::{Document, NodeId, TagBlacklist};
use crate::error::{Error, Result};
use crate::features::compute_filter_features;
use crate::svm_filter::SvmModel;
use crate::Label;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Verdict {
    pub accept: bool,
    pub score: f64,
}

/// One stage of the cascade.
pub trait BlockClassifier {
    fn classify(&self, doc: &Document, node: NodeId, blacklist: &TagBlacklist) -> Result<Verdict>;
}

impl BlockClassifier for SvmModel {
    fn classify(&self, doc: &Document, node: NodeId, blacklist: &TagBlacklist) -> Result<Verdict> {
        let v = self.predict(&compute_filter_features(doc, node, blacklist));
        Ok(Verdict { accept: v.label == Label::Spec, score: v.margin })
    }
}

impl BlockClassifier for CoarseModel {
    fn classify(&self, doc: &Document, node: NodeId, blacklist: &TagBlacklist) -> Result<Verdict> {
        let v = predict_coarse(self, doc, node, blacklist)?;
        Ok(Verdict { accept: v.label == Label::Spec, score: v.score })
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AcceptAll;

impl BlockClassifier for AcceptAll {
    fn classify(&self, _: &Document, _: NodeId, _: &TagBlacklist) -> Result<Verdict> {
        Ok(Verdict { accept: true, score: 1.0 })
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RejectAll;

impl BlockClassifier for RejectAll {
    fn classify(&self, _: &Document, _: NodeId, _: &TagBlacklist) -> Result<Verdict> {
        Ok(Verdict { accept: false, score: 0.0 })
    }
}

/// Accepts exactly the blocks whose path is in a labelled set.
#[derive(Debug, Clone, Default)]
pub struct PathOracle {
    paths: HashSet<Vec<usize>>,
}

impl PathOracle {
    pub fn new(paths: impl IntoIterator<Item = Vec<usize>>) -> Self {
        Self { paths: paths.into_iter().collect() }
    }
}

impl BlockClassifier for PathOracle {
    fn classify(&self, doc: &Document, node: NodeId, _: &TagBlacklist) -> Result<Verdict> {
        let accept = self.paths.contains(&doc.path_of(node));
        Ok(Verdict { accept, score: if accept { 1.0 } else { 0.0 } })
    }
}

/// Adapts a predicate into a classifier.
pub struct FnClassifier<F>(pub F);

impl<F> BlockClassifier for FnClassifier<F>
where
    F: Fn(&Document, NodeId) -> bool,
{
    fn classify(&self, doc: &Document, node: NodeId, _: &TagBlacklist) -> Result<Verdict> {
        let accept = (self.0)(doc, node);
        Ok(Verdict { accept, score: if accept { 1.0 } else { 0.0 } })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arrangement {
    FilterOnly,
    CoarseOnly,
    FilterPlusCoarse,
}

impl Arrangement {
    pub const ALL: [Arrangement; 3] = [Arrangement::FilterOnly, Arrangement::CoarseOnly, Arrangement::FilterPlusCoarse];

    pub fn uses_filter(self) -> bool {
        self != Arrangement::CoarseOnly
    }

    pub fn uses_coarse(self) -> bool {
        self != Arrangement::FilterOnly
    }
}

impl fmt::Display for Arrangement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arrangement::FilterOnly => "filter-only",
            Arrangement::CoarseOnly => "coarse-only",
            Arrangement::FilterPlusCoarse => "filter-plus-coarse",
        })
    }
}

impl FromStr for Arrangement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "filter-only" | "filter" => Ok(Arrangement::FilterOnly),
            "coarse-only" | "coarse" => Ok(Arrangement::CoarseOnly),
            "filter-plus-coarse" | "cascade" => Ok(Arrangement::FilterPlusCoarse),
            other => Err(Error::Validation(format!("unknown arrangement {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    #[serde(skip)]
    pub node: Option<NodeId>,
    pub path: Vec<usize>,
    pub tag: String,
    pub filter_score: Option<f64>,
    pub coarse_score: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CandidateSet {
    pub blocks: Vec<Candidate>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.blocks.iter().filter_map(|c| c.node)
    }

    pub fn paths(&self) -> impl Iterator<Item = &[usize]> + '_ {
        self.blocks.iter().map(|c| c.path.as_slice())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TraverseOptions {
    /// Count only element children in the "more than one child" test.
    pub element_children_only: bool,
}

impl Default for TraverseOptions {
    fn default() -> Self {
        Self { element_children_only: true }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Traversal {
    pub candidates: CandidateSet,
    /// Every element popped from the walk, in visit order.
    pub visited: Vec<NodeId>,
    pub filter_calls: usize,
    pub coarse_calls: usize,
}

fn child_count(doc: &Document, node: NodeId, opts: TraverseOptions) -> usize {
    if opts.element_children_only {
        doc.element_children(node).count()
    } else {
        doc.children(node).len()
    }
}

/// Runs the cascade from `start`. A `None` stage always accepts and leaves
/// its score unset.
pub fn spec_traverse(
    doc: &mut Document,
    start: NodeId,
    filter: Option<&dyn BlockClassifier>,
    coarse: Option<&dyn BlockClassifier>,
    blacklist: &TagBlacklist,
    opts: TraverseOptions,
) -> Result<Traversal> {
    let mut out = Traversal::default();
    let mut stack = vec![start];
    while let Some(node) = stack.pop() {
        if !doc.is_attached(node) || !doc.is_element(node) {
            continue;
        }
        out.visited.push(node);
        if doc.is_blacklisted(node, blacklist) || !doc.has_text(node, blacklist) {
            continue;
        }
        if child_count(doc, node, opts) > 1 {
            let mut filter_score = None;
            let mut accepted = true;
            if let Some(f) = filter {
                out.filter_calls += 1;
                let v = f.classify(doc, node, blacklist)?;
                filter_score = Some(v.score);
                accepted = v.accept;
            }
            let mut coarse_score = None;
            if accepted {
                if let Some(c) = coarse {
                    out.coarse_calls += 1;
                    let v = c.classify(doc, node, blacklist)?;
                    coarse_score = Some(v.score);
                    accepted = v.accept;
                }
            }
            if accepted {
                out.candidates.blocks.push(Candidate {
                    node: Some(node),
                    path: doc.path_of(node),
                    tag: doc.tag(node).unwrap_or_default().to_string(),
                    filter_score,
                    coarse_score,
                });
                if node != doc.root() {
                    doc.decompose(node)?;
                }
                continue;
            }
        }
        let children: Vec<NodeId> = doc.element_children(node).collect();
        stack.extend(children.into_iter().rev());
    }
    Ok(out)
}

/// Classifies a page from `<body>` under `arrangement`.
pub fn classify_page(
    doc: &mut Document,
    arrangement: Arrangement,
    filter: &dyn BlockClassifier,
    coarse: &dyn BlockClassifier,
    blacklist: &TagBlacklist,
    opts: TraverseOptions,
) -> Result<Traversal> {
    let body = doc.body();
    spec_traverse(
        doc,
        body,
        arrangement.uses_filter().then_some(filter),
        arrangement.uses_coarse().then_some(coarse),
        blacklist,
        opts,
    )
}
