use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use specblock::classify::{AcceptAll, Arrangement, BlockClassifier};
use specblock::cnn_coarse::{CnnModel, CoarseModel};
use specblock::dataset::synth::{generate_synthetic_corpus, write_corpus, SplitPlan, SynthConfig, TagVocab};
use specblock::dataset::{
    label_page, labels_by_page, load_ground_truth, load_labels, save_labels, BlockLabel, CorpusManifest, Split,
};
use specblock::dom::Document;
use specblock::eval::{run_end_to_end, EvalReport};
use specblock::extract::{ColumnMode, SeedPool};
use specblock::pipeline::{train_coarse, train_filter, train_table, LabeledPage, PipelineConfig};
use specblock::svm_filter::SvmModel;
use specblock::token_embed::EmbeddingTable;
use specblock::Label;

#[derive(Parser)]
#[command(name = "specblock", version, about = "Find product specification blocks and extract attribute-value pairs")]
struct Cli {
    /// TOML file with pipeline settings; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random component.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus (pages, manifest, labels, ground truth).
    GenCorpus(GenArgs),
    /// Label pages from known spec blocks, harvesting non-spec blocks.
    Harvest(HarvestArgs),
    /// Train the SVM filter on a corpus's train split.
    TrainFilter(TrainArgs),
    /// Train token embeddings on a corpus's train split.
    TrainEmbeddings(TrainArgs),
    /// Train the CNN coarse model against saved embeddings.
    TrainCoarse(TrainCoarseArgs),
    /// Print candidate blocks of HTML pages as JSON lines.
    Classify(RunArgs),
    /// Print extracted attribute-value pairs of HTML pages as JSON lines.
    Extract(RunArgs),
    /// Score classification and extraction on a corpus split.
    Eval(EvalArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pages: usize,
    /// ul_div, dl_dt_span, div_span or table; all four when omitted.
    #[arg(long)]
    vocab: Option<TagVocab>,
    /// Spec rows per page, as MIN..MAX.
    #[arg(long, default_value = "3..20", value_parser = parse_range)]
    rows: (usize, usize),
    /// Decoy blocks per page, as MIN..MAX.
    #[arg(long, default_value = "0..5", value_parser = parse_range)]
    decoys: (usize, usize),
    /// Filler product cards per page.
    #[arg(long, default_value_t = 0)]
    filler: usize,
    #[arg(long, default_value_t = 0.6)]
    train: f64,
    #[arg(long, default_value_t = 0.2)]
    validation: f64,
    #[arg(long)]
    skip_top: Option<usize>,
}

#[derive(Args)]
struct HarvestArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// JSON lines listing each page's spec blocks.
    #[arg(long)]
    spec_labels: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    skip_top: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    /// Directory holding manifest.jsonl and labels.jsonl.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainCoarseArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    filter: Option<PathBuf>,
    #[arg(long)]
    coarse: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    arrangement: Option<Arrangement>,
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    mode: Option<ColumnMode>,
    #[arg(long)]
    feedback: Option<OnOff>,
    /// Seed attribute names, one per line.
    #[arg(long)]
    seeds_file: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    models: ModelArgs,
    #[command(flatten)]
    extract: ExtractArgs,
    /// Write JSON lines here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(required = true)]
    pages: Vec<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value = "holdout")]
    split: Split,
    /// Every arrangement when omitted.
    #[command(flatten)]
    models: ModelArgs,
    #[command(flatten)]
    extract: ExtractArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_range(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once("..").ok_or_else(|| format!("expected MIN..MAX, got {s:?}"))?;
    let lo = a.trim().parse().map_err(|e| format!("{a:?}: {e}"))?;
    let hi = b.trim().trim_start_matches('=').parse().map_err(|e| format!("{b:?}: {e}"))?;
    Ok((lo, hi))
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg: PipelineConfig = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.svm.seed = seed;
        cfg.embed.seed = seed;
        cfg.train.seed = seed;
    }
    Ok(cfg)
}

fn apply_run_flags(cfg: &mut PipelineConfig, models: &ModelArgs, extract: &ExtractArgs) {
    if let Some(a) = models.arrangement {
        cfg.arrangement = a;
    }
    if let Some(m) = extract.mode {
        cfg.extract.mode = m;
    }
    if let Some(f) = extract.feedback {
        cfg.extract.feedback = matches!(f, OnOff::On);
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(fs::File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_line<T: Serialize>(w: &mut dyn Write, value: &T) -> Result<()> {
    serde_json::to_writer(&mut *w, value)?;
    writeln!(w)?;
    Ok(())
}

fn corpus_pages(corpus: &Path, split: Split) -> Result<Vec<LabeledPage>> {
    let manifest = CorpusManifest::load(corpus.join("manifest.jsonl"))?;
    let labels = load_labels(corpus.join("labels.jsonl"))?;
    let by_page = labels_by_page(&labels);
    manifest
        .split(split)
        .map(|e| {
            let doc = manifest.load_document(e)?;
            let l =
                by_page.get(e.page_id.as_str()).map(|v| v.iter().map(|l| (*l).clone()).collect()).unwrap_or_default();
            Ok(LabeledPage { doc, labels: l })
        })
        .collect()
}

struct Models {
    filter: Option<SvmModel>,
    coarse: Option<CoarseModel>,
}

impl Models {
    fn load(args: &ModelArgs, arrangement: Arrangement) -> Result<Self> {
        let filter = match (&args.filter, arrangement.uses_filter()) {
            (Some(p), _) => Some(SvmModel::load(p)?),
            (None, true) => bail!("arrangement {arrangement} needs --filter"),
            (None, false) => None,
        };
        let coarse = match (&args.coarse, &args.embeddings, arrangement.uses_coarse()) {
            (Some(c), Some(e), _) => Some(CoarseModel::new(CnnModel::load(c)?, EmbeddingTable::load(e)?)?),
            (None, None, false) => None,
            _ if arrangement.uses_coarse() => bail!("arrangement {arrangement} needs --coarse and --embeddings"),
            _ => None,
        };
        Ok(Self { filter, coarse })
    }

    fn stages(&self) -> (&dyn BlockClassifier, &dyn BlockClassifier) {
        let f: &dyn BlockClassifier = match &self.filter {
            Some(m) => m,
            None => &AcceptAll,
        };
        let c: &dyn BlockClassifier = match &self.coarse {
            Some(m) => m,
            None => &AcceptAll,
        };
        (f, c)
    }
}

fn seeds(extract: &ExtractArgs) -> Result<SeedPool> {
    Ok(match &extract.seeds_file {
        Some(p) => SeedPool::load(p)?,
        None => SeedPool::default(),
    })
}

fn page_docs(paths: &[PathBuf]) -> impl Iterator<Item = (String, specblock::Result<Document>)> + '_ {
    paths.iter().map(|p| {
        let id = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let doc = fs::read(p)
            .map_err(|e| specblock::Error::Io { path: p.clone(), source: e })
            .and_then(|raw| Document::parse(&raw))
            .map(|d| d.with_ids(id.clone(), p.display().to_string()));
        (id, doc)
    })
}

#[derive(Serialize)]
struct CandidateRecord<'a> {
    page_id: &'a str,
    #[serde(flatten)]
    candidate: &'a specblock::classify::Candidate,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let mut cfg = load_config(&cli)?;
    match &cli.command {
        Command::GenCorpus(a) => {
            let synth = SynthConfig {
                n_pages: a.pages,
                vocab: a.vocab,
                rows: a.rows,
                decoys: a.decoys,
                filler_cards: a.filler,
                skip_top: a.skip_top.unwrap_or(cfg.skip_top),
                seed: cli.seed.unwrap_or(SynthConfig::default().seed),
                ..Default::default()
            };
            let pages = generate_synthetic_corpus(&synth)?;
            let manifest = write_corpus(&a.out, &pages, SplitPlan { train: a.train, validation: a.validation })?;
            eprintln!("wrote {} pages to {}", manifest.entries.len(), a.out.display());
        }
        Command::Harvest(a) => {
            let skip_top = a.skip_top.unwrap_or(cfg.skip_top);
            let manifest = CorpusManifest::load(&a.manifest)?;
            let spec = load_labels(&a.spec_labels)?;
            let by_page = labels_by_page(&spec);
            let mut out: Vec<BlockLabel> = Vec::new();
            for e in &manifest.entries {
                let doc = manifest.load_document(e)?;
                let paths: Vec<Vec<usize>> = by_page
                    .get(e.page_id.as_str())
                    .map(|v| v.iter().filter(|l| l.label == Label::Spec).map(|l| l.block_path.clone()).collect())
                    .unwrap_or_default();
                out.extend(
                    label_page(&doc, &paths, skip_top, &cfg.blacklist, cfg.traverse)
                        .with_context(|| format!("page {}", e.page_id))?,
                );
            }
            save_labels(&a.out, &out)?;
            eprintln!("wrote {} labels to {}", out.len(), a.out.display());
        }
        Command::TrainFilter(a) => {
            let pages = corpus_pages(&a.corpus, Split::Train)?;
            let model = train_filter(&pages, &cfg)?;
            model.save(&a.out)?;
            eprintln!("saved filter to {}", a.out.display());
        }
        Command::TrainEmbeddings(a) => {
            let pages = corpus_pages(&a.corpus, Split::Train)?;
            let table = train_table(&pages, &cfg)?;
            table.save(&a.out)?;
            eprintln!("saved {} embeddings of dim {} to {}", table.vocab_len(), table.dim(), a.out.display());
        }
        Command::TrainCoarse(a) => {
            let train = corpus_pages(&a.corpus, Split::Train)?;
            let validation = corpus_pages(&a.corpus, Split::Validation)?;
            let table = EmbeddingTable::load(&a.embeddings)?;
            let model = train_coarse(&train, &validation, table, &cfg)?;
            model.cnn.save(&a.out)?;
            eprintln!("saved coarse model to {}", a.out.display());
        }
        Command::Classify(a) | Command::Extract(a) => {
            apply_run_flags(&mut cfg, &a.models, &a.extract);
            let models = Models::load(&a.models, cfg.arrangement)?;
            let (f, c) = models.stages();
            let run = run_end_to_end(page_docs(&a.pages), f, c, seeds(&a.extract)?, &cfg);
            let mut w = output(a.out.as_deref())?;
            for p in &run.pages {
                if matches!(cli.command, Command::Classify(_)) {
                    for cand in &p.candidates {
                        write_line(&mut *w, &CandidateRecord { page_id: &p.page_id, candidate: cand })?;
                    }
                } else {
                    for pair in &p.pairs {
                        write_line(&mut *w, pair)?;
                    }
                }
            }
            w.flush()?;
            for e in &run.errors {
                eprintln!("error: page {}: {}", e.page_id, e.error);
            }
            if !run.errors.is_empty() {
                bail!("{} of {} pages failed", run.errors.len(), run.errors.len() + run.pages.len());
            }
        }
        Command::Eval(a) => {
            apply_run_flags(&mut cfg, &a.models, &a.extract);
            let arrangements: Vec<Arrangement> = match a.models.arrangement {
                Some(x) => vec![x],
                None => Arrangement::ALL.to_vec(),
            };
            let manifest = CorpusManifest::load(a.corpus.join("manifest.jsonl"))?;
            let labels = load_labels(a.corpus.join("labels.jsonl"))?;
            let truth = load_ground_truth(a.corpus.join("truth.jsonl"))?;
            let mut reports = Vec::new();
            for arrangement in arrangements {
                let models = Models::load(&a.models, arrangement)?;
                let (f, c) = models.stages();
                let run_cfg = PipelineConfig { arrangement, ..cfg.clone() };
                let docs = manifest.split(a.split).map(|e| (e.page_id.clone(), manifest.load_document(e)));
                let run = run_end_to_end(docs, f, c, seeds(&a.extract)?, &run_cfg);
                for e in &run.errors {
                    eprintln!("error: page {}: {}", e.page_id, e.error);
                }
                reports.push(EvalReport::new(arrangement, &run, &labels, &truth));
            }
            let mut w = output(a.out.as_deref())?;
            for r in &reports {
                write_line(&mut *w, r)?;
            }
            w.flush()?;
            drop(w);
            print!("{}", EvalReport::table(&reports));
        }
    }
    Ok(())
}
