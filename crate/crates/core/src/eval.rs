//! Scoring and end-to-end runs.
//!
//! Precision, recall and F1 are micro-averaged over set semantics. With no
//! predictions precision is 0, with no truth recall is 0, and F1 is 0 when
//! both are 0.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::classify::{classify_page, Arrangement, BlockClassifier, CandidateSet};
use crate::dataset::{BlockLabel, GroundTruth};
use crate::dom::{normalize_text, Document};
use crate::error::Result;
use crate::extract::{normalize_attribute, AttrValuePair, Extractor, SeedPool};
use crate::pipeline::PipelineConfig;
use crate::Label;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Predictions that matched.
    pub matched_predictions: usize,
    /// Truth items that were found.
    pub matched_truth: usize,
    pub n_predicted: usize,
    pub n_truth: usize,
}

impl Prf {
    pub fn from_counts(matched_predictions: usize, n_predicted: usize, matched_truth: usize, n_truth: usize) -> Self {
        let precision = if n_predicted == 0 { 0.0 } else { matched_predictions as f64 / n_predicted as f64 };
        let recall = if n_truth == 0 { 0.0 } else { matched_truth as f64 / n_truth as f64 };
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        Self { precision, recall, f1, matched_predictions, matched_truth, n_predicted, n_truth }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlockMatch {
    /// Predicted and true block have the same path.
    #[default]
    Exact,
    /// A prediction also matches the true blocks it contains.
    Ancestor,
}

fn is_prefix(a: &[usize], b: &[usize]) -> bool {
    a.len() <= b.len() && b[..a.len()] == *a
}

/// Scores predicted `(page_id, path)` blocks against spec-block labels in
/// `truth`; non-spec labels are ignored.
pub fn score_classification(predicted: &[(String, Vec<usize>)], truth: &[BlockLabel], mode: BlockMatch) -> Prf {
    let pred: HashSet<(&str, &[usize])> = predicted.iter().map(|(p, b)| (p.as_str(), b.as_slice())).collect();
    let gold: HashSet<(&str, &[usize])> = truth
        .iter()
        .filter(|l| l.label == Label::Spec)
        .map(|l| (l.page_id.as_str(), l.block_path.as_slice()))
        .collect();
    let hit = |p: &(&str, &[usize]), g: &(&str, &[usize])| {
        p.0 == g.0
            && match mode {
                BlockMatch::Exact => p.1 == g.1,
                BlockMatch::Ancestor => is_prefix(p.1, g.1),
            }
    };
    let matched_pred = pred.iter().filter(|p| gold.iter().any(|g| hit(p, g))).count();
    let matched_gold = gold.iter().filter(|g| pred.iter().any(|p| hit(p, g))).count();
    Prf::from_counts(matched_pred, pred.len(), matched_gold, gold.len())
}

type PairKey = (String, String, String);

fn pair_key(page: &str, attribute: &str, value: &str) -> PairKey {
    (page.to_string(), normalize_attribute(attribute), normalize_text(value))
}

/// Attributes compare case-insensitively after whitespace normalization,
/// values after whitespace normalization only.
pub fn score_extraction(predicted: &[AttrValuePair], truth: &[GroundTruth]) -> Prf {
    let pred: HashSet<PairKey> = predicted.iter().map(|p| pair_key(&p.page_id, &p.attribute, &p.value)).collect();
    let gold: HashSet<PairKey> =
        truth.iter().flat_map(|t| t.pairs.iter().map(move |(a, v)| pair_key(&t.page_id, a, v))).collect();
    let tp = pred.intersection(&gold).count();
    Prf::from_counts(tp, pred.len(), tp, gold.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageError {
    pub page_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageResult {
    pub page_id: String,
    pub candidates: Vec<crate::classify::Candidate>,
    pub pairs: Vec<AttrValuePair>,
    pub classify_seconds: f64,
    pub extract_seconds: f64,
    /// Parse, classification and extraction.
    pub total_seconds: f64,
}

#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub pages: Vec<PageResult>,
    pub errors: Vec<PageError>,
    /// Seed pool after the last page.
    pub seeds: SeedPool,
}

impl RunOutput {
    pub fn predicted_blocks(&self) -> Vec<(String, Vec<usize>)> {
        self.pages.iter().flat_map(|p| p.candidates.iter().map(move |c| (p.page_id.clone(), c.path.clone()))).collect()
    }

    pub fn pairs(&self) -> Vec<AttrValuePair> {
        self.pages.iter().flat_map(|p| p.pairs.iter().cloned()).collect()
    }
}

/// Classifies and extracts each page in order. Pages are pulled lazily, so a
/// loading iterator has its parse time counted in `total_seconds`. Failing
/// pages are recorded and skipped.
pub fn run_end_to_end<I>(
    pages: I,
    filter: &dyn BlockClassifier,
    coarse: &dyn BlockClassifier,
    seeds: SeedPool,
    cfg: &PipelineConfig,
) -> RunOutput
where
    I: IntoIterator<Item = (String, Result<Document>)>,
{
    let mut extractor = Extractor::new(seeds, cfg.extract, cfg.blacklist.clone());
    let mut out = RunOutput::default();
    let mut iter = pages.into_iter();
    loop {
        let start = Instant::now();
        let Some((page_id, doc)) = iter.next() else { break };
        let mut doc = match doc {
            Ok(d) => d,
            Err(e) => {
                log::warn!("page {page_id}: {e}");
                out.errors.push(PageError { page_id, error: e.to_string() });
                continue;
            }
        };
        let t0 = Instant::now();
        let traversal = match classify_page(&mut doc, cfg.arrangement, filter, coarse, &cfg.blacklist, cfg.traverse) {
            Ok(t) => t,
            Err(e) => {
                log::warn!("page {page_id}: {e}");
                out.errors.push(PageError { page_id, error: e.to_string() });
                continue;
            }
        };
        let classify_seconds = t0.elapsed().as_secs_f64();
        let t1 = Instant::now();
        let pairs = extractor.extract_page(&doc, &traversal.candidates);
        let extract_seconds = t1.elapsed().as_secs_f64();
        out.pages.push(PageResult {
            page_id,
            candidates: traversal.candidates.blocks,
            pairs,
            classify_seconds,
            extract_seconds,
            total_seconds: start.elapsed().as_secs_f64(),
        });
    }
    out.seeds = extractor.seeds;
    out
}

/// Candidates found on one page, for callers that only classify.
pub fn classify_only(
    doc: &mut Document,
    filter: &dyn BlockClassifier,
    coarse: &dyn BlockClassifier,
    cfg: &PipelineConfig,
) -> Result<CandidateSet> {
    Ok(classify_page(doc, cfg.arrangement, filter, coarse, &cfg.blacklist, cfg.traverse)?.candidates)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub arrangement: Arrangement,
    pub n_pages: usize,
    pub n_errors: usize,
    pub classification: Prf,
    pub classification_ancestor: Prf,
    pub extraction: Prf,
    pub avg_candidate_blocks: f64,
    pub avg_classification_time_s: f64,
    pub avg_extraction_time_s: f64,
    /// Includes parsing.
    pub avg_total_time_s: f64,
}

impl EvalReport {
    pub fn new(arrangement: Arrangement, run: &RunOutput, labels: &[BlockLabel], truth: &[GroundTruth]) -> Self {
        let pages: HashSet<&str> = run.pages.iter().map(|p| p.page_id.as_str()).collect();
        let pages_with_errors: HashSet<&str> = run.errors.iter().map(|e| e.page_id.as_str()).collect();
        let in_run = |id: &str| pages.contains(id) || pages_with_errors.contains(id);
        let labels: Vec<BlockLabel> = labels.iter().filter(|l| in_run(&l.page_id)).cloned().collect();
        let truth: Vec<GroundTruth> = truth.iter().filter(|t| in_run(&t.page_id)).cloned().collect();
        let blocks = run.predicted_blocks();
        let n = run.pages.len();
        let total: f64 = run.pages.iter().map(|p| p.total_seconds).sum();
        Self {
            arrangement,
            n_pages: n,
            n_errors: run.errors.len(),
            classification: score_classification(&blocks, &labels, BlockMatch::Exact),
            classification_ancestor: score_classification(&blocks, &labels, BlockMatch::Ancestor),
            extraction: score_extraction(&run.pairs(), &truth),
            avg_candidate_blocks: mean(blocks.len() as f64, n),
            avg_classification_time_s: mean(run.pages.iter().map(|p| p.classify_seconds).sum(), n),
            avg_extraction_time_s: mean(run.pages.iter().map(|p| p.extract_seconds).sum(), n),
            avg_total_time_s: mean(total, n),
        }
    }

    /// Plain-text table of several reports.
    pub fn table(reports: &[EvalReport]) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<20} {:>6} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>8} {:>9}",
            "arrangement", "pages", "cls_P", "cls_R", "cls_F1", "ext_P", "ext_R", "ext_F1", "avg_cand", "s/page"
        );
        for r in reports {
            let _ = writeln!(
                s,
                "{:<20} {:>6} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>8.2} {:>9.4}",
                r.arrangement.to_string(),
                r.n_pages,
                r.classification.precision,
                r.classification.recall,
                r.classification.f1,
                r.extraction.precision,
                r.extraction.recall,
                r.extraction.f1,
                r.avg_candidate_blocks,
                r.avg_total_time_s
            );
        }
        s
    }
}

fn mean(total: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

/// Spec labels grouped by page, for building oracle classifiers.
pub fn spec_paths_by_page(labels: &[BlockLabel]) -> HashMap<String, Vec<Vec<usize>>> {
    let mut map: HashMap<String, Vec<Vec<usize>>> = HashMap::new();
    for l in labels.iter().filter(|l| l.label == Label::Spec) {
        map.entry(l.page_id.clone()).or_default().push(l.block_path.clone());
    }
    map
}
