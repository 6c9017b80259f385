use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use kgcore::corpus::{ingest, read_corpus, write_corpus, sentences_of, InputFormat, SentenceSplitter};
use kgcore::dataset::{
    import_brat_dirs, lint_annotations, pool_by_relation, sample_episode, split_ner, split_rc, NerInstance,
    NerSplitConfig, RcInstance, RcSplitConfig, DEFAULT_ENTITY_LENGTH_CAP,
};
use kgcore::embed::{provider_from_spec, token_encoder_from_spec};
use kgcore::io::{read_jsonl, write_jsonl};
use kgcore::oie::{extract_candidates, import_external, select_best, CandidateTriple};
use kgcore::pipeline::{
    adjudicate, filter_threshold, histogram_csv, per_relation_accuracy, run_pipeline, sample_validation,
    score_histogram, Checkpoint, ExtractedTriple, PairMode, PipelineConfig, PipelineModels, SupportBank,
    ValidationRecord,
};
use kgcore::relclass::{evaluate_episodes, rotation_cv, scorer_from_spec, CvConfig};
use kgcore::schema::{induce_schema, Schema, SchemaConfig, TripleEmbedding};
use kgcore::service::{serve_blocking, CorsConfig};
use kgcore::store::GraphStore;
use kgcore::tagger::{evaluate, kfold, train, TrainConfig};
use kgcore::{CrfModel64, Error};
use serde::Serialize;

/// Build a materials-science knowledge graph from paper abstracts.
#[derive(Parser)]
#[command(name = "kgtool", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Clean, validate and normalize raw abstracts.
    Ingest {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "jsonl")]
        format: Format,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pattern-based open triple extraction.
    Preextract {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Keep only the most confident candidate per sentence.
        #[arg(long)]
        best_only: bool,
        /// Append candidates from an external extractor's TSV output.
        #[arg(long = "import")]
        import: Option<PathBuf>,
    },
    /// Cluster candidate relations into a fixed schema.
    Schema {
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long, default_value_t = 56)]
        k_entities: usize,
        #[arg(long, default_value_t = 29)]
        k_relations: usize,
        #[arg(long, default_value = "hashed")]
        provider: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "whole-text")]
        triple_embedding: EmbeddingMode,
        #[arg(long)]
        out: PathBuf,
        /// Also write the rewritten triples.
        #[arg(long)]
        rewritten: Option<PathBuf>,
    },
    /// Annotation import, splits and episodes.
    #[command(subcommand)]
    Dataset(DatasetCmd),
    /// Train and evaluate the entity tagger.
    #[command(subcommand)]
    Ner(NerCmd),
    /// Few-shot relation classification.
    #[command(subcommand)]
    Rc(RcCmd),
    /// Run the full extraction pipeline over a corpus.
    Extract(ExtractArgs),
    /// Human validation sampling and adjudication.
    #[command(subcommand)]
    Validate(ValidateCmd),
    /// Knowledge-graph store and HTTP API.
    #[command(subcommand)]
    Graph(GraphCmd),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Jsonl,
    Inverted,
}

#[derive(Clone, Copy, ValueEnum)]
enum EmbeddingMode {
    WholeText,
    ComponentMean,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Rc,
    Ner,
}

#[derive(Subcommand)]
enum DatasetCmd {
    /// Convert brat standoff annotations into RC and NER datasets.
    ImportBrat {
        #[arg(long)]
        txt_dir: PathBuf,
        #[arg(long)]
        ann_dir: PathBuf,
        /// Two paths: `rc.jsonl,ner.jsonl`.
        #[arg(long, value_delimiter = ',', num_args = 2)]
        out: Vec<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_ENTITY_LENGTH_CAP)]
        length_cap: usize,
    },
    /// Split a dataset into train/validation/test files.
    Split {
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
        /// Skip the check on dataset size.
        #[arg(long)]
        any_size: bool,
    },
    /// Sample one few-shot episode and print it as JSON.
    Episode {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 5)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        k: usize,
        #[arg(long, default_value_t = 1)]
        q: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// Token encoder: `hashed`, `hashed:<dim>` or `table:<path>`.
    #[arg(long, alias = "provider", default_value = "hashed")]
    encoder: String,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.1)]
    dropout: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl TrainArgs {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            learning_rate: self.lr,
            epochs: self.epochs,
            seed: self.seed,
            dropout: self.dropout,
            ..TrainConfig::default()
        }
    }
}

#[derive(Subcommand)]
enum NerCmd {
    /// Train a BIO tagger.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        validation: Option<PathBuf>,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        out: PathBuf,
        /// Write per-epoch losses here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Evaluate a trained tagger.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, alias = "provider", default_value = "hashed")]
        encoder: String,
    },
    /// k-fold cross-validation.
    Kfold {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[command(flatten)]
        train: TrainArgs,
    },
}

#[derive(Args)]
struct EpisodeArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 5)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    k: usize,
    #[arg(long, default_value_t = 1)]
    q: usize,
    #[arg(long, default_value_t = 1000)]
    iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// `default`, `default:<provider>`, `table:<path>` or `external:<command>`.
    #[arg(long, default_value = "default")]
    scorer: String,
}

#[derive(Subcommand)]
enum RcCmd {
    /// Few-shot episode accuracy.
    Eval(EpisodeArgs),
    /// Cross-validation over rotated relation allocations.
    Cv {
        #[command(flatten)]
        episodes: EpisodeArgs,
        #[arg(long, default_value_t = 5)]
        folds: usize,
    },
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Trained tagger (`model.crf.json`).
    #[arg(long)]
    ner: PathBuf,
    #[arg(long, alias = "provider", default_value = "hashed")]
    encoder: String,
    #[arg(long, default_value = "default")]
    scorer: String,
    #[arg(long)]
    schema: PathBuf,
    /// Annotated RC instances to draw the support bank from.
    #[arg(long)]
    support: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    theta: f64,
    #[arg(long, default_value_t = 1)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "forward")]
    pairs: Pairs,
    #[arg(long, default_value_t = 256)]
    max_pairs: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    stats: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Threshold sweep as CSV.
    #[arg(long)]
    histogram: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    bin_width: f64,
    /// Where to save progress if the run aborts.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Pairs {
    Forward,
    Both,
}

#[derive(Subcommand)]
enum ValidateCmd {
    /// Sample triples per relation for human checking.
    Sample {
        #[arg(long)]
        triples: PathBuf,
        #[arg(long, default_value_t = 100)]
        per_relation: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Accuracy from examiner votes.
    Adjudicate {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        per_relation: bool,
    },
}

#[derive(Subcommand)]
enum GraphCmd {
    /// Load extracted triples into a store directory.
    Load {
        #[arg(long)]
        triples: PathBuf,
        #[arg(long)]
        store: PathBuf,
    },
    /// Serve the read-only JSON API.
    Serve {
        #[arg(long)]
        store: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
        /// Allowed browser origin; any origin when omitted.
        #[arg(long)]
        cors_origin: Option<String>,
    },
    Export {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    Import {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        store: PathBuf,
    },
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Ingest { input, format, out } => {
            let format = match format {
                Format::Jsonl => InputFormat::Jsonl,
                Format::Inverted => InputFormat::Inverted,
            };
            let (records, report) = ingest(&input, format)?;
            write_corpus(&out, &records)?;
            print_json(&report)
        }
        Command::Preextract {
            corpus,
            out,
            best_only,
            import,
        } => {
            let splitter = SentenceSplitter::default();
            let mut all: Vec<CandidateTriple> = Vec::new();
            for record in read_corpus(&corpus)? {
                for s in sentences_of(&record, &splitter) {
                    let c = extract_candidates(&s);
                    if best_only {
                        all.extend(select_best(&c)?);
                    } else {
                        all.extend(c);
                    }
                }
            }
            if let Some(path) = import {
                let report = import_external(&path)?;
                if report.warnings > 0 {
                    log::warn!("{} external lines could not be aligned", report.warnings);
                }
                all.extend(report.candidates);
            }
            log::info!("{} candidate triples", all.len());
            Ok(write_jsonl(&out, &all)?)
        }
        Command::Schema {
            candidates,
            k_entities,
            k_relations,
            provider,
            seed,
            triple_embedding,
            out,
            rewritten,
        } => {
            let triples: Vec<CandidateTriple> = read_jsonl(&candidates)?;
            let mut cfg = SchemaConfig {
                k_entities,
                k_relations,
                triple_embedding: match triple_embedding {
                    EmbeddingMode::WholeText => TripleEmbedding::WholeText,
                    EmbeddingMode::ComponentMean => TripleEmbedding::ComponentMean,
                },
                ..SchemaConfig::default()
            };
            cfg.kmeans.seed = seed;
            let provider = provider_from_spec(&provider)?;
            let induced = induce_schema::<f64, _>(&triples, &cfg, &provider)?;
            write_json(&out, &induced.schema)?;
            if let Some(path) = rewritten {
                write_jsonl(&path, &induced.rewritten)?;
            }
            log::info!("schema with {} relations, hash {}", induced.schema.len(), induced.schema.hash());
            Ok(())
        }
        Command::Dataset(cmd) => dataset(cmd),
        Command::Ner(cmd) => ner(cmd),
        Command::Rc(cmd) => rc(cmd),
        Command::Extract(args) => extract(args),
        Command::Validate(cmd) => validate(cmd),
        Command::Graph(cmd) => graph(cmd),
    }
}

fn dataset(cmd: DatasetCmd) -> Result<()> {
    match cmd {
        DatasetCmd::ImportBrat {
            txt_dir,
            ann_dir,
            out,
            length_cap,
        } => {
            let doc = import_brat_dirs(&txt_dir, &ann_dir)?;
            for w in lint_annotations(&doc.rc, &doc.ner, length_cap) {
                log::warn!("{}: {:?} span {:?}", w.instance, w.kind, w.text);
            }
            write_jsonl(&out[0], &doc.rc)?;
            write_jsonl(&out[1], &doc.ner)?;
            log::info!("{} RC instances, {} NER sentences", doc.rc.len(), doc.ner.len());
            Ok(())
        }
        DatasetCmd::Split {
            kind,
            data,
            seed,
            out_dir,
            any_size,
        } => {
            fs::create_dir_all(&out_dir)?;
            match kind {
                Kind::Rc => {
                    let rc: Vec<RcInstance> = read_jsonl(&data)?;
                    let mut cfg = RcSplitConfig::default();
                    if any_size {
                        cfg.per_relation = None;
                    }
                    let (relations, split) = split_rc(&pool_by_relation(&rc), seed, &cfg)?;
                    write_json(&out_dir.join("relations.json"), &relations)?;
                    write_split(&out_dir, &split.train, &split.validation, &split.test)
                }
                Kind::Ner => {
                    let ner: Vec<NerInstance> = read_jsonl(&data)?;
                    let mut cfg = NerSplitConfig::default();
                    if any_size {
                        cfg.expected = None;
                    }
                    let split = split_ner(&ner, seed, &cfg)?;
                    write_split(&out_dir, &split.train, &split.validation, &split.test)
                }
            }
        }
        DatasetCmd::Episode { data, n, k, q, seed } => {
            let rc: Vec<RcInstance> = read_jsonl(&data)?;
            print_json(&sample_episode(&pool_by_relation(&rc), n, k, q, seed)?)
        }
    }
}

fn write_split<T: Serialize>(dir: &Path, train: &[T], validation: &[T], test: &[T]) -> Result<()> {
    write_jsonl(&dir.join("train.jsonl"), train)?;
    write_jsonl(&dir.join("validation.jsonl"), validation)?;
    write_jsonl(&dir.join("test.jsonl"), test)?;
    log::info!("split {}/{}/{}", train.len(), validation.len(), test.len());
    Ok(())
}

fn ner(cmd: NerCmd) -> Result<()> {
    match cmd {
        NerCmd::Train {
            data,
            validation,
            train: args,
            out,
            report,
        } => {
            let encoder = token_encoder_from_spec(&args.encoder)?;
            let train_set: Vec<NerInstance> = read_jsonl(&data)?;
            let val_set: Vec<NerInstance> = match &validation {
                Some(p) => read_jsonl(p)?,
                None => Vec::new(),
            };
            let (model, losses) = train::<f64>(&train_set, &val_set, encoder.as_ref(), &args.config())?;
            write_json(&out, &model)?;
            if let Some(path) = report {
                write_json(&path, &losses)?;
            }
            if !val_set.is_empty() {
                print_json(&evaluate(&model, &val_set, encoder.as_ref())?)?;
            }
            Ok(())
        }
        NerCmd::Eval { model, data, encoder } => {
            let model: CrfModel64 = read_json(&model)?;
            model.validate()?;
            let encoder = token_encoder_from_spec(&encoder)?;
            check_encoder(&model, &encoder.id());
            let data: Vec<NerInstance> = read_jsonl(&data)?;
            print_json(&evaluate(&model, &data, encoder.as_ref())?)
        }
        NerCmd::Kfold { data, k, train: args } => {
            let encoder = token_encoder_from_spec(&args.encoder)?;
            let data: Vec<NerInstance> = read_jsonl(&data)?;
            print_json(&kfold::<f64>(&data, k, encoder.as_ref(), &args.config())?)
        }
    }
}

fn check_encoder(model: &CrfModel64, encoder_id: &str) {
    if model.encoder_id != encoder_id {
        log::warn!("model was trained with encoder {} but {} is in use", model.encoder_id, encoder_id);
    }
}

fn rc(cmd: RcCmd) -> Result<()> {
    match cmd {
        RcCmd::Eval(a) => {
            let rc: Vec<RcInstance> = read_jsonl(&a.data)?;
            let scorer = scorer_from_spec(&a.scorer)?;
            print_json(&evaluate_episodes(
                scorer.as_ref(),
                &pool_by_relation(&rc),
                a.n,
                a.k,
                a.q,
                a.iters,
                a.seed,
            )?)
        }
        RcCmd::Cv { episodes: a, folds } => {
            let rc: Vec<RcInstance> = read_jsonl(&a.data)?;
            let cfg = CvConfig {
                folds,
                n_way: a.n,
                k_shot: a.k,
                q_query: a.q,
                iterations: a.iters,
                seed: a.seed,
                ..CvConfig::default()
            };
            let spec = a.scorer.clone();
            let report = rotation_cv(
                |_| Ok(Box::new(scorer_from_spec(&spec)?) as Box<dyn kgcore::relclass::PairScorer>),
                &pool_by_relation(&rc),
                &cfg,
            )?;
            print_json(&report)
        }
    }
}

fn extract(a: ExtractArgs) -> Result<()> {
    let corpus = read_corpus(&a.corpus)?;
    let tagger: CrfModel64 = read_json(&a.ner)?;
    tagger.validate()?;
    let encoder = token_encoder_from_spec(&a.encoder)?;
    check_encoder(&tagger, &encoder.id());
    let scorer = scorer_from_spec(&a.scorer)?;
    let schema: Schema = read_json(&a.schema)?;
    schema.validate()?;
    let support: Vec<RcInstance> = read_jsonl(&a.support)?;
    let bank = SupportBank::draw(&schema, &pool_by_relation(&support), a.k, a.seed)?;
    let splitter = SentenceSplitter::default();
    let models = PipelineModels {
        tagger: &tagger,
        encoder: encoder.as_ref(),
        scorer: scorer.as_ref(),
        schema: &schema,
        support: &bank,
        splitter: &splitter,
    };
    let config = PipelineConfig {
        theta: a.theta,
        k: a.k,
        seed: a.seed,
        pair_mode: match a.pairs {
            Pairs::Forward => PairMode::Forward,
            Pairs::Both => PairMode::Both,
        },
        max_pairs_per_sentence: a.max_pairs,
        ..PipelineConfig::default()
    };
    let resume: Option<Checkpoint> = a.resume.as_deref().map(read_json).transpose()?;
    let out = match run_pipeline(&corpus, &models, &config, resume) {
        Ok(out) => out,
        Err(Error::PipelineAborted {
            processed,
            reason,
            checkpoint,
        }) => {
            if let Some(path) = &a.checkpoint {
                write_json(path, &checkpoint)?;
                bail!("aborted after {processed} abstracts: {reason}; checkpoint saved to {}", path.display());
            }
            bail!("aborted after {processed} abstracts: {reason}");
        }
        Err(e) => return Err(e.into()),
    };
    write_jsonl(&a.out, &out.triples)?;
    if let Some(path) = &a.stats {
        write_json(path, &out.stats)?;
    }
    if let Some(path) = &a.manifest {
        write_json(path, &out.manifest)?;
    }
    if let Some(path) = &a.histogram {
        fs::write(path, histogram_csv(&score_histogram(&out.triples, a.bin_width)?))?;
    }
    log::info!(
        "{} triples from {} candidate pairs",
        filter_threshold(&out.triples, a.theta).len(),
        out.stats.candidates
    );
    Ok(())
}

fn validate(cmd: ValidateCmd) -> Result<()> {
    match cmd {
        ValidateCmd::Sample {
            triples,
            per_relation,
            seed,
            out,
        } => {
            let triples: Vec<ExtractedTriple> = read_jsonl(&triples)?;
            let sample = sample_validation(&triples, per_relation, seed);
            write_jsonl(&out, &sample.triples)?;
            for (rel, n) in &sample.shortfalls {
                log::warn!("relation {rel}: {n} of {per_relation} available");
            }
            Ok(())
        }
        ValidateCmd::Adjudicate { records, per_relation } => {
            let records: Vec<ValidationRecord> = read_jsonl(&records)?;
            if per_relation {
                print_json(&per_relation_accuracy(&records)?)
            } else {
                print_json(&adjudicate(&records)?)
            }
        }
    }
}

fn graph(cmd: GraphCmd) -> Result<()> {
    match cmd {
        GraphCmd::Load { triples, store } => {
            let triples: Vec<ExtractedTriple> = read_jsonl(&triples)?;
            let s = GraphStore::open(&store)?;
            for t in &triples {
                s.upsert_triple(t)?;
            }
            s.close()?;
            print_json(&GraphStore::open_read_only(&store)?.stats()?)
        }
        GraphCmd::Serve {
            store,
            bind,
            cors_origin,
        } => {
            let s = Arc::new(GraphStore::open_read_only(&store)?);
            Ok(serve_blocking(s, &bind, &CorsConfig { allowed_origin: cors_origin })?)
        }
        GraphCmd::Export { store, out } => Ok(GraphStore::open_read_only(&store)?.export(&out)?),
        GraphCmd::Import { input, store } => {
            let s = GraphStore::open(&store)?;
            s.import_into(&input)?;
            let stats = s.stats()?;
            s.close()?;
            print_json(&stats)
        }
    }
}
