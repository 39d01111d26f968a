//! Seeded generator of product pages with one known specification block.
//!
//! Each page has a single spec block in one of four markup styles, a title
//! row, some decoy blocks (link lists, descriptions mentioning seed words,
//! reviews, short key/value widgets) and optional filler product cards that
//! grow the page. Its spec block carries `data-block="spec"` so its path can
//! be recovered after parsing; none of the models look at attributes.

use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    label_page, save_ground_truth, save_labels, BlockLabel, CorpusManifest, GroundTruth, ManifestEntry, Split,
    DEFAULT_SKIP_TOP, SCHEMA_VERSION,
};
use crate::classify::TraverseOptions;
use crate::dom::{Document, TagBlacklist};
use crate::error::{Error, Result};
use crate::extract::SeedPool;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TagVocab {
    /// `<ul><li><div>attr</div><div>value</div></li>...</ul>`
    UlDiv,
    /// `<dl><dt><span>attr</span></dt><dd><span>value</span></dd></dl>` per row
    DlDtSpan,
    /// `<div><span>attr</span><span>value</span></div>` per row
    DivSpan,
    /// `<table><tbody><tr><td>attr</td><td>value</td></tr>...</tbody></table>`
    Table,
}

impl TagVocab {
    pub const ALL: [TagVocab; 4] = [TagVocab::UlDiv, TagVocab::DlDtSpan, TagVocab::DivSpan, TagVocab::Table];
}

impl fmt::Display for TagVocab {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TagVocab::UlDiv => "ul_div",
            TagVocab::DlDtSpan => "dl_dt_span",
            TagVocab::DivSpan => "div_span",
            TagVocab::Table => "table",
        })
    }
}

impl FromStr for TagVocab {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TagVocab::ALL
            .into_iter()
            .find(|v| v.to_string() == s)
            .ok_or_else(|| Error::Validation(format!("unknown tag vocabulary {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_pages: usize,
    /// `None` cycles through every vocabulary.
    pub vocab: Option<TagVocab>,
    /// Inclusive range of spec rows per page.
    pub rows: (usize, usize),
    /// Inclusive range of decoy blocks per page.
    pub decoys: (usize, usize),
    /// Recommended-product cards appended to every page.
    pub filler_cards: usize,
    pub skip_top: usize,
    pub seed: u64,
    pub page_prefix: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_pages: 100,
            vocab: None,
            rows: (3, 20),
            decoys: (0, 5),
            filler_cards: 0,
            skip_top: DEFAULT_SKIP_TOP,
            seed: 17,
            page_prefix: "synth".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticPage {
    pub page_id: String,
    pub vocab: TagVocab,
    pub html: String,
    pub spec_path: Vec<usize>,
    pub truth: GroundTruth,
    pub labels: Vec<BlockLabel>,
}

impl SyntheticPage {
    pub fn document(&self) -> Result<Document> {
        Ok(Document::parse_str(&self.html)?.with_ids(self.page_id.clone(), format!("{}.html", self.page_id)))
    }
}

const EXTRA_ATTRIBUTES: &[&str] = &[
    "Spin Speed",
    "Wash Programs",
    "Tub Material",
    "Drum Volume",
    "Noise Level",
    "Panel Type",
    "Viewing Angle",
    "Clock Speed",
    "Cache Memory",
    "SIM Type",
    "Network Type",
    "Charging Port",
    "Fast Charging",
    "Water Resistance",
    "Net Quantity",
    "Child Lock",
    "Sales Package",
    "Audio Jack",
    "Touchscreen",
    "Sensor Type",
    "Lens Mount",
    "Cooling Type",
    "Door Type",
    "Number of Doors",
    "Shelf Type",
];

const VALUES: &[&str] = &[
    "LG",
    "Samsung",
    "Whirlpool",
    "Sony",
    "Lenovo",
    "Apple",
    "Black",
    "Silver",
    "Midnight Blue",
    "6.2 kg",
    "7 kg",
    "1 Year",
    "2 Years on Motor",
    "55 inch",
    "139 cm",
    "Full HD",
    "1920 x 1080",
    "3840 x 2160",
    "Intel Core i5",
    "Octa Core 2.4 GHz",
    "8 GB",
    "16 GB",
    "512 GB SSD",
    "1 TB HDD",
    "Windows 11 Home",
    "Android 14",
    "5000 mAh",
    "220 V",
    "1500 W",
    "5 Star",
    "Top Load",
    "Front Load",
    "Fully Automatic",
    "60 Hz",
    "120 Hz",
    "Stainless Steel",
    "Plastic",
    "India",
    "China",
    "Yes",
    "No",
    "Dual Band",
    "Version 5.3",
    "2 x USB 3.0",
    "3",
    "48 MP + 8 MP",
    "12 MP",
    "LED",
    "OLED",
    "IPS",
    "20 W",
    "Freestanding",
    "Matte",
    "Glossy",
    "Slim",
    "0.8 L",
    "1400 rpm",
    "Grey",
    "Type C",
    "IPX4",
];

const PRODUCTS: &[&str] = &[
    "Washing Machine",
    "Smart TV",
    "Laptop",
    "Smartphone",
    "Refrigerator",
    "Microwave Oven",
    "Headphones",
    "Air Conditioner",
    "Tablet",
    "Water Purifier",
];

const WORDS: &[&str] = &[
    "great",
    "value",
    "quality",
    "delivery",
    "fast",
    "reliable",
    "quiet",
    "energy",
    "saving",
    "design",
    "modern",
    "family",
    "daily",
    "use",
    "easy",
    "clean",
    "bright",
    "sound",
    "powerful",
    "compact",
    "premium",
    "smooth",
    "long",
    "lasting",
    "performance",
    "stylish",
    "durable",
    "efficient",
    "smart",
    "features",
];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn sentence(rng: &mut ChaCha8Rng, n: usize) -> String {
    let words: Vec<&str> = (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect();
    let mut s = words.join(" ");
    if let Some(first) = s.get_mut(0..1) {
        first.make_ascii_uppercase();
    }
    s.push('.');
    s
}

fn pick_rows(rng: &mut ChaCha8Rng, n_rows: usize, seeds: &[String]) -> Vec<(String, String)> {
    let n_seed = rng.gen_range(2..=n_rows.max(2));
    let mut attrs: Vec<String> = seeds.choose_multiple(rng, n_seed.min(seeds.len())).cloned().collect();
    let extra: Vec<&str> = EXTRA_ATTRIBUTES.choose_multiple(rng, n_rows.saturating_sub(attrs.len())).copied().collect();
    attrs.extend(extra.into_iter().map(str::to_string));
    attrs.truncate(n_rows);
    attrs.shuffle(rng);
    attrs.into_iter().map(|a| (a, VALUES.choose(rng).unwrap().to_string())).collect()
}

fn spec_block(rng: &mut ChaCha8Rng, vocab: TagVocab, rows: &[(String, String)]) -> String {
    let title = ["Specifications", "General", "Product Details", "Technical Details"].choose(rng).unwrap();
    let mut s = String::new();
    match vocab {
        TagVocab::UlDiv => {
            let _ = write!(s, "<div class=\"specs\" data-block=\"spec\"><h2>{title}</h2><ul>");
            for (a, v) in rows {
                let _ = write!(s, "<li><div class=\"k\">{}</div><div class=\"v\">{}</div></li>", esc(a), esc(v));
            }
            s.push_str("</ul></div>");
        }
        TagVocab::DlDtSpan => {
            let _ = write!(s, "<div class=\"specs\" data-block=\"spec\"><h2>{title}</h2>");
            for (a, v) in rows {
                let _ = write!(s, "<dl><dt><span>{}</span></dt><dd><span>{}</span></dd></dl>", esc(a), esc(v));
            }
            s.push_str("</div>");
        }
        TagVocab::DivSpan => {
            let _ =
                write!(s, "<div class=\"specs\" data-block=\"spec\"><div class=\"title\"><span>{title}</span></div>");
            for (a, v) in rows {
                let _ = write!(s, "<div class=\"row\"><span>{}</span><span>{}</span></div>", esc(a), esc(v));
            }
            s.push_str("</div>");
        }
        TagVocab::Table => {
            let _ = write!(s, "<div class=\"specs\" data-block=\"spec\"><h2>{title}</h2><table><tbody>");
            for (a, v) in rows {
                let _ = write!(s, "<tr><td>{}</td><td>{}</td></tr>", esc(a), esc(v));
            }
            s.push_str("</tbody></table></div>");
        }
    }
    s
}

fn decoy(rng: &mut ChaCha8Rng, seeds: &[String]) -> String {
    let mut s = String::new();
    match rng.gen_range(0..6) {
        0 => {
            s.push_str("<div class=\"related\"><h4>Related searches</h4><ul>");
            for _ in 0..rng.gen_range(3..8) {
                let p = PRODUCTS.choose(rng).unwrap();
                let _ = write!(s, "<li><a href=\"/s/{}\">{p}</a></li>", p.len());
            }
            s.push_str("</ul></div>");
        }
        1 => {
            let seed = seeds.choose(rng).unwrap();
            let _ = write!(
                s,
                "<div class=\"description\"><h3>Description</h3><p>{} <b>{}</b> {}</p><p>{}</p></div>",
                sentence(rng, 8),
                esc(seed),
                sentence(rng, 6),
                sentence(rng, 12)
            );
        }
        2 => {
            let _ = write!(
                s,
                "<div class=\"review\"><div><span>{}.{}</span><span>&#9733;</span></div><p>{}</p><span>Verified buyer</span></div>",
                rng.gen_range(1..=5),
                rng.gen_range(0..10),
                sentence(rng, 10)
            );
        }
        3 => {
            s.push_str("<ul class=\"highlights\">");
            for _ in 0..rng.gen_range(2..6) {
                let _ = write!(s, "<li>{}</li>", esc(VALUES.choose(rng).unwrap()));
            }
            s.push_str("</ul>");
        }
        4 => {
            s.push_str("<div class=\"delivery\">");
            for (k, v) in [("Delivery by", "Tomorrow"), ("Returns", "7 days"), ("Cash on delivery", "Available")]
                .choose_multiple(rng, 2)
            {
                let _ = write!(s, "<div><span>{k}</span><span>{v}</span></div>");
            }
            s.push_str("</div>");
        }
        _ => {
            let _ = write!(
                s,
                "<div class=\"seller\"><h4>Seller</h4><p>RetailNet {}</p><p>{}</p></div>",
                rng.gen_range(1..99),
                sentence(rng, 5)
            );
        }
    }
    s
}

fn card(rng: &mut ChaCha8Rng, i: usize) -> String {
    format!(
        "<div class=\"card\"><a href=\"/p/{i}\"><img src=\"/img/{i}.jpg\"></a><div><span>{} {}</span></div>\
         <div><span>Rs. {}</span><span>{}% off</span></div></div>",
        VALUES[..6].choose(rng).unwrap(),
        PRODUCTS.choose(rng).unwrap(),
        rng.gen_range(999..99999),
        rng.gen_range(5..60)
    )
}

fn page_html(
    rng: &mut ChaCha8Rng,
    vocab: TagVocab,
    rows: &[(String, String)],
    n_decoys: usize,
    cfg: &SynthConfig,
    seeds: &[String],
) -> String {
    let product = PRODUCTS.choose(rng).unwrap();
    let brand = VALUES[..6].choose(rng).unwrap();
    let mut s = String::new();
    let _ = write!(
        s,
        "<!DOCTYPE html><html><head><title>{brand} {product}</title><meta charset=\"utf-8\">\
         <script>var page = {{id: {}}};</script><style>.k {{font-weight: bold}}</style></head><body>\
         <header><nav><a href=\"/\">Home</a><a href=\"/deals\">Deals</a></nav></header>\
         <div class=\"page\"><div class=\"breadcrumb\"><a href=\"/\">Home</a><span>&gt;</span><a href=\"/c\">{product}</a></div>\
         <div class=\"main\"><div class=\"gallery\"><img src=\"/a.jpg\"><img src=\"/b.jpg\"></div>\
         <div class=\"buy\"><h1>{brand} {product}</h1><div class=\"price\"><span>Rs. {}</span><span>{}% off</span></div>\
         <button>Add to cart</button></div></div>",
        rng.gen_range(1..10_000),
        rng.gen_range(999..99_999),
        rng.gen_range(5..60)
    );
    let before = rng.gen_range(0..=n_decoys);
    for _ in 0..before {
        s.push_str(&decoy(rng, seeds));
    }
    s.push_str(&spec_block(rng, vocab, rows));
    for _ in before..n_decoys {
        s.push_str(&decoy(rng, seeds));
    }
    if cfg.filler_cards > 0 {
        s.push_str("<div class=\"recommended\"><h3>You may also like</h3><div class=\"grid\">");
        for i in 0..cfg.filler_cards {
            s.push_str(&card(rng, i));
        }
        s.push_str("</div></div>");
    }
    s.push_str("</div><footer><p>Copyright</p><a href=\"/help\">Help</a></footer></body></html>");
    s
}

/// Generates `cfg.n_pages` pages. Identical configs give identical output.
pub fn generate_synthetic_corpus(cfg: &SynthConfig) -> Result<Vec<SyntheticPage>> {
    let (lo, hi) = cfg.rows;
    if lo < 2 || lo > hi {
        return Err(Error::Validation(format!("rows range {lo}..={hi} must start at 2 or more")));
    }
    if cfg.decoys.0 > cfg.decoys.1 {
        return Err(Error::Validation("decoys range is empty".into()));
    }
    let seeds: Vec<String> = SeedPool::default().iter().map(str::to_string).collect();
    let max_rows = seeds.len() + EXTRA_ATTRIBUTES.len();
    if hi > max_rows {
        return Err(Error::Validation(format!("at most {max_rows} unique attributes per block")));
    }
    let seed_names = seed_display_names();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let blacklist = TagBlacklist::default();
    let mut pages = Vec::with_capacity(cfg.n_pages);
    for i in 0..cfg.n_pages {
        let vocab = cfg.vocab.unwrap_or(TagVocab::ALL[i % TagVocab::ALL.len()]);
        let n_rows = rng.gen_range(lo..=hi);
        let rows = pick_rows(&mut rng, n_rows, &seed_names);
        let n_decoys = rng.gen_range(cfg.decoys.0..=cfg.decoys.1);
        let html = page_html(&mut rng, vocab, &rows, n_decoys, cfg, &seed_names);
        let page_id = format!("{}-{i:05}", cfg.page_prefix);
        let doc = Document::parse_str(&html)?.with_ids(page_id.clone(), "");
        let spec = doc
            .descendants(doc.root())
            .find(|&n| doc.attr(n, "data-block") == Some("spec"))
            .ok_or_else(|| Error::Validation("generated page lost its spec block".into()))?;
        let spec_path = doc.path_of(spec);
        let labels =
            label_page(&doc, std::slice::from_ref(&spec_path), cfg.skip_top, &blacklist, TraverseOptions::default())?;
        let truth = GroundTruth::new(page_id.clone(), rows)?;
        pages.push(SyntheticPage { page_id, vocab, html, spec_path, truth, labels });
    }
    Ok(pages)
}

/// Seed names in their display casing, as listed in the default seed file.
fn seed_display_names() -> Vec<String> {
    include_str!("../../data/seeds.txt")
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

/// Fractions of pages assigned to train and validation; the rest is holdout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train: f64,
    pub validation: f64,
}

impl Default for SplitPlan {
    fn default() -> Self {
        Self { train: 0.6, validation: 0.2 }
    }
}

impl SplitPlan {
    pub fn split_of(&self, index: usize, total: usize) -> Split {
        let n_train = (self.train * total as f64).round() as usize;
        let n_val = (self.validation * total as f64).round() as usize;
        if index < n_train {
            Split::Train
        } else if index < n_train + n_val {
            Split::Validation
        } else {
            Split::Holdout
        }
    }
}

/// Writes pages under `dir/pages/` plus `manifest.jsonl`, `labels.jsonl`
/// and `truth.jsonl` in `dir`.
pub fn write_corpus(dir: impl AsRef<Path>, pages: &[SyntheticPage], plan: SplitPlan) -> Result<CorpusManifest> {
    let dir = dir.as_ref();
    let pages_dir = dir.join("pages");
    std::fs::create_dir_all(&pages_dir).map_err(|e| Error::io(&pages_dir, e))?;
    let mut entries = Vec::with_capacity(pages.len());
    for (i, p) in pages.iter().enumerate() {
        let rel = format!("pages/{}.html", p.page_id);
        let path = dir.join(&rel);
        std::fs::write(&path, &p.html).map_err(|e| Error::io(&path, e))?;
        entries.push(ManifestEntry {
            schema_version: SCHEMA_VERSION,
            page_id: p.page_id.clone(),
            html_path: rel,
            split: plan.split_of(i, pages.len()),
            source: "synthetic".into(),
            category: p.vocab.to_string(),
        });
    }
    let manifest = CorpusManifest { entries, base_dir: dir.to_path_buf() };
    manifest.save(dir.join("manifest.jsonl"))?;
    let labels: Vec<BlockLabel> = pages.iter().flat_map(|p| p.labels.iter().cloned()).collect();
    save_labels(dir.join("labels.jsonl"), &labels)?;
    let truths: Vec<GroundTruth> = pages.iter().map(|p| p.truth.clone()).collect();
    save_ground_truth(dir.join("truth.jsonl"), &truths)?;
    Ok(manifest)
}
