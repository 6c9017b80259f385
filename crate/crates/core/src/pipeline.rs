//! Full-corpus extraction: tag entities, enumerate pairs, classify against a
//! fixed support bank, threshold, and account for what came out.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{sentences_of, AbstractRecord, SentenceRecord, SentenceSplitter};
use crate::dataset::{entity_spans, RcInstance, RelationPool};
use crate::embed::TokenEncoder;
use crate::error::{Error, Result};
use crate::oie::TokenSpan;
use crate::relclass::{predict, PairScorer};
use crate::schema::Schema;
use crate::stats::percent_half_up;
use crate::store::canonicalize;
use crate::tagger::CrfModel;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityMention {
    pub text: String,
    pub span: TokenSpan,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub abstract_id: String,
    pub sentence: usize,
    pub title: String,
    pub journal: String,
    pub year: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractedTriple {
    pub head: EntityMention,
    /// Schema relation label.
    pub relation: String,
    pub relation_id: usize,
    pub tail: EntityMention,
    pub score: f64,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairMode {
    /// Head precedes tail in the sentence.
    #[default]
    Forward,
    /// Both orders of every pair.
    Both,
}

/// Candidate (head, tail) pairs over entities listed in sentence order.
/// Returns the pairs and whether `cap` cut the list short.
pub fn enumerate_pairs<E: Clone>(entities: &[E], mode: PairMode, cap: usize) -> (Vec<(E, E)>, bool) {
    let mut pairs = Vec::new();
    for i in 0..entities.len() {
        for j in i + 1..entities.len() {
            pairs.push((entities[i].clone(), entities[j].clone()));
            if mode == PairMode::Both {
                pairs.push((entities[j].clone(), entities[i].clone()));
            }
        }
    }
    let capped = pairs.len() > cap;
    pairs.truncate(cap);
    (pairs, capped)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Keep triples scoring at least this much.
    pub theta: f64,
    /// Support instances per relation.
    pub k: usize,
    pub seed: u64,
    pub pair_mode: PairMode,
    pub max_pairs_per_sentence: usize,
    /// Abstracts processed per parallel batch.
    pub batch_size: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            theta: 0.0,
            k: 1,
            seed: 0,
            pair_mode: PairMode::Forward,
            max_pairs_per_sentence: 256,
            batch_size: 64,
        }
    }
}

/// `support[r]` holds the K instances standing in for schema relation `r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportBank {
    pub labels: Vec<String>,
    pub support: Vec<Vec<RcInstance>>,
}

impl SupportBank {
    /// Seeded draw of `k` instances per schema relation, fixed for a whole run.
    pub fn draw(schema: &Schema, pool: &RelationPool, k: usize, seed: u64) -> Result<Self> {
        if k == 0 {
            return Err(Error::IncompleteSupport("K must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels = schema.labels();
        let mut support = Vec::with_capacity(labels.len());
        for label in &labels {
            let insts = pool.get(label).map(Vec::as_slice).unwrap_or_default();
            if insts.len() < k {
                return Err(Error::IncompleteSupport(format!(
                    "relation {label} has {} annotated instances, need {k}",
                    insts.len()
                )));
            }
            let mut picks = rand::seq::index::sample(&mut rng, insts.len(), k).into_vec();
            picks.sort_unstable();
            support.push(picks.into_iter().map(|i| insts[i].clone()).collect());
        }
        Ok(Self { labels, support })
    }

    pub fn ids(&self) -> Vec<Vec<String>> {
        self.support.iter().map(|g| g.iter().map(|i| i.id.clone()).collect()).collect()
    }
}

/// Everything the pipeline needs besides the corpus.
pub struct PipelineModels<'a> {
    pub tagger: &'a CrfModel<f64>,
    pub encoder: &'a dyn TokenEncoder,
    pub scorer: &'a dyn PairScorer,
    pub schema: &'a Schema,
    pub support: &'a SupportBank,
    pub splitter: &'a SentenceSplitter,
}

/// Unthresholded output for one sentence.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SentenceOutput {
    pub entities: Vec<EntityMention>,
    pub candidates: usize,
    pub triples: Vec<ExtractedTriple>,
}

/// Tag, pair and classify one sentence. No threshold is applied.
pub fn extract_sentence(
    sentence: &SentenceRecord,
    meta: &AbstractRecord,
    models: &PipelineModels,
    config: &PipelineConfig,
) -> Result<SentenceOutput> {
    let tokens = sentence.token_texts();
    if tokens.is_empty() {
        return Ok(SentenceOutput::default());
    }
    let tags = models.tagger.decode(&tokens, models.encoder)?;
    let entities: Vec<EntityMention> = entity_spans(&tags)
        .into_iter()
        .map(|span| EntityMention {
            text: span.surface(&tokens),
            span,
        })
        .collect();
    let (pairs, capped) = enumerate_pairs(&entities, config.pair_mode, config.max_pairs_per_sentence);
    if capped {
        log::warn!(
            "{}#{}: more than {} entity pairs; extra pairs dropped",
            sentence.abstract_id,
            sentence.index,
            config.max_pairs_per_sentence
        );
    }
    let mut triples = Vec::with_capacity(pairs.len());
    for (i, (head, tail)) in pairs.iter().enumerate() {
        let query = RcInstance {
            id: format!("{}#{}#{i}", sentence.abstract_id, sentence.index),
            tokens: tokens.clone(),
            head_span: head.span,
            tail_span: tail.span,
            relation: String::new(),
        };
        let p = predict(&query, &models.support.support, models.scorer)?;
        triples.push(ExtractedTriple {
            head: head.clone(),
            relation: models.support.labels[p.relation].clone(),
            relation_id: p.relation,
            tail: tail.clone(),
            score: p.score,
            provenance: Provenance {
                abstract_id: meta.id.clone(),
                sentence: sentence.index,
                title: meta.title.clone(),
                journal: meta.journal.clone(),
                year: meta.year,
            },
        });
    }
    Ok(SentenceOutput {
        candidates: pairs.len(),
        entities,
        triples,
    })
}

/// Triples scoring at least `theta`, in their original order.
pub fn filter_threshold(triples: &[ExtractedTriple], theta: f64) -> Vec<ExtractedTriple> {
    triples.iter().filter(|t| t.score >= theta).cloned().collect()
}

/// Surviving-triple counts at thresholds `lo, lo + w, ...`, where `lo` is the
/// minimum score rounded down to a multiple of `w`. The last point is the
/// first threshold above every score, so its count is 0.
pub fn score_histogram(triples: &[ExtractedTriple], bin_width: f64) -> Result<Vec<(f64, usize)>> {
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(Error::InvariantViolation(format!("bin width {bin_width} must be positive")));
    }
    if triples.is_empty() {
        return Ok(Vec::new());
    }
    let mut scores: Vec<f64> = triples.iter().map(|t| t.score).collect();
    scores.sort_by(f64::total_cmp);
    let lo = (scores[0] / bin_width).floor();
    let mut series = Vec::new();
    for step in 0.. {
        let theta = (lo + step as f64) * bin_width;
        let below = scores.partition_point(|&s| s < theta);
        series.push((theta, scores.len() - below));
        if below == scores.len() {
            break;
        }
    }
    Ok(series)
}

pub fn histogram_csv(series: &[(f64, usize)]) -> String {
    let mut out = String::from("threshold,count\n");
    for (t, c) in series {
        let _ = writeln!(out, "{t},{c}");
    }
    out
}

/// Smallest observed score whose survivors reach `target` precision on a
/// labelled sample of `(score, correct)` pairs.
pub fn choose_threshold(labelled: &[(f64, bool)], target: f64) -> Option<f64> {
    let mut sorted = labelled.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut best = None;
    let mut correct = 0usize;
    for (i, &(score, ok)) in sorted.iter().enumerate() {
        correct += usize::from(ok);
        let tie_continues = sorted.get(i + 1).is_some_and(|n| n.0 == score);
        if !tie_continues && correct as f64 / (i + 1) as f64 >= target {
            best = Some(score);
        }
    }
    best
}

// --------------------------------------------------------------- validation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationSample {
    pub triples: Vec<ExtractedTriple>,
    /// Relations with fewer triples than requested, with what was available.
    pub shortfalls: Vec<(String, usize)>,
}

/// Seeded uniform sample of up to `per_relation` triples per relation.
pub fn sample_validation(triples: &[ExtractedTriple], per_relation: usize, seed: u64) -> ValidationSample {
    let mut by_relation: BTreeMap<&str, Vec<&ExtractedTriple>> = BTreeMap::new();
    for t in triples {
        by_relation.entry(&t.relation).or_default().push(t);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut shortfalls = Vec::new();
    for (rel, group) in by_relation {
        if group.len() <= per_relation {
            if group.len() < per_relation {
                log::warn!("relation {rel}: only {} triples for a sample of {per_relation}", group.len());
                shortfalls.push((rel.to_string(), group.len()));
            }
            out.extend(group.into_iter().cloned());
            continue;
        }
        let mut picks = rand::seq::index::sample(&mut rng, group.len(), per_relation).into_vec();
        picks.sort_unstable();
        out.extend(picks.into_iter().map(|i| group[i].clone()));
    }
    ValidationSample { triples: out, shortfalls }
}

/// Two examiners' votes on one triple, with a third vote when they disagree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub triple_ref: String,
    pub relation: String,
    pub votes: [bool; 2],
    #[serde(default)]
    pub adjudication: Option<bool>,
}

impl ValidationRecord {
    pub fn agreed(&self) -> bool {
        self.votes[0] == self.votes[1]
    }

    pub fn verdict(&self) -> Result<bool> {
        match (self.agreed(), self.adjudication) {
            (true, None) => Ok(self.votes[0]),
            (false, Some(v)) => Ok(v),
            (false, None) => Err(Error::MissingAdjudication(self.triple_ref.clone())),
            (true, Some(_)) => Err(Error::InvariantViolation(format!(
                "{}: adjudication given although the examiners agree",
                self.triple_ref
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub count: u64,
    pub correct: u64,
    /// Percentage rounded half-up to 2 decimals.
    pub accuracy: f64,
}

impl Bucket {
    pub fn new(correct: u64, count: u64) -> Self {
        Self {
            count,
            correct,
            accuracy: if count == 0 { 0.0 } else { percent_half_up(correct, count) },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdjudicationReport {
    pub agreed: Bucket,
    pub disagreed: Bucket,
    pub total: Bucket,
}

pub fn adjudicate(records: &[ValidationRecord]) -> Result<AdjudicationReport> {
    let (mut a, mut ac, mut d, mut dc) = (0, 0, 0, 0);
    for r in records {
        let v = u64::from(r.verdict()?);
        if r.agreed() {
            a += 1;
            ac += v;
        } else {
            d += 1;
            dc += v;
        }
    }
    Ok(AdjudicationReport {
        agreed: Bucket::new(ac, a),
        disagreed: Bucket::new(dc, d),
        total: Bucket::new(ac + dc, a + d),
    })
}

/// Final-verdict accuracy per relation; relations without records are absent.
pub fn per_relation_accuracy(records: &[ValidationRecord]) -> Result<BTreeMap<String, Bucket>> {
    let mut counts: BTreeMap<String, (u64, u64)> = BTreeMap::new();
    for r in records {
        let v = u64::from(r.verdict()?);
        let e = counts.entry(r.relation.clone()).or_default();
        e.0 += v;
        e.1 += 1;
    }
    Ok(counts.into_iter().map(|(k, (c, n))| (k, Bucket::new(c, n))).collect())
}

// ----------------------------------------------------------------- pipeline

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationCount {
    pub triples: usize,
    /// Distinct canonical entities taking part in this relation's triples.
    pub entities: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineStats {
    pub abstracts: usize,
    pub sentences: usize,
    /// Every tagged entity span.
    pub entity_mentions: usize,
    /// Distinct canonical entity strings.
    pub distinct_entities: usize,
    pub candidates: usize,
    /// Triples at or above the threshold.
    pub triples: usize,
    pub per_relation: BTreeMap<String, RelationCount>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineManifest {
    pub seed: u64,
    pub theta: f64,
    pub k: usize,
    pub pair_mode: PairMode,
    pub max_pairs_per_sentence: usize,
    pub tagger_encoder: String,
    pub encoder: String,
    pub scorer: String,
    pub schema_hash: String,
    pub corpus_hash: String,
    pub support_ids: Vec<Vec<String>>,
}

/// Progress saved when a run aborts; pass it back to resume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub manifest: PipelineManifest,
    /// Abstracts fully processed, in corpus order.
    pub processed: usize,
    pub sentences: usize,
    pub entity_mentions: usize,
    pub candidates: usize,
    pub entities: BTreeSet<String>,
    pub triples: Vec<ExtractedTriple>,
}

impl Checkpoint {
    fn fresh(manifest: PipelineManifest) -> Self {
        Self {
            manifest,
            processed: 0,
            sentences: 0,
            entity_mentions: 0,
            candidates: 0,
            entities: BTreeSet::new(),
            triples: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutput {
    pub triples: Vec<ExtractedTriple>,
    pub stats: PipelineStats,
    pub manifest: PipelineManifest,
}

struct AbstractOutput {
    sentences: usize,
    mentions: Vec<String>,
    candidates: usize,
    triples: Vec<ExtractedTriple>,
}

fn process_abstract(record: &AbstractRecord, models: &PipelineModels, config: &PipelineConfig) -> Result<AbstractOutput> {
    let sentences = sentences_of(record, models.splitter);
    let mut out = AbstractOutput {
        sentences: sentences.len(),
        mentions: Vec::new(),
        candidates: 0,
        triples: Vec::new(),
    };
    for s in &sentences {
        let so = extract_sentence(s, record, models, config)?;
        out.mentions.extend(so.entities.iter().map(|e| canonicalize(&e.text)));
        out.candidates += so.candidates;
        out.triples.extend(so.triples.into_iter().filter(|t| t.score >= config.theta));
    }
    Ok(out)
}

pub fn corpus_hash(corpus: &[AbstractRecord]) -> String {
    let mut h = Sha256::new();
    for r in corpus {
        h.update(serde_json::to_vec(r).expect("record serializes"));
        h.update(b"\n");
    }
    format!("{:x}", h.finalize())
}

pub fn manifest_for(corpus: &[AbstractRecord], models: &PipelineModels, config: &PipelineConfig) -> PipelineManifest {
    PipelineManifest {
        seed: config.seed,
        theta: config.theta,
        k: config.k,
        pair_mode: config.pair_mode,
        max_pairs_per_sentence: config.max_pairs_per_sentence,
        tagger_encoder: models.tagger.encoder_id.clone(),
        encoder: models.encoder.id(),
        scorer: models.scorer.id(),
        schema_hash: models.schema.hash(),
        corpus_hash: corpus_hash(corpus),
        support_ids: models.support.ids(),
    }
}

fn stats_from(cp: &Checkpoint) -> PipelineStats {
    let mut per: BTreeMap<String, (usize, BTreeSet<String>)> = BTreeMap::new();
    for t in &cp.triples {
        let e = per.entry(t.relation.clone()).or_default();
        e.0 += 1;
        e.1.insert(canonicalize(&t.head.text));
        e.1.insert(canonicalize(&t.tail.text));
    }
    PipelineStats {
        abstracts: cp.processed,
        sentences: cp.sentences,
        entity_mentions: cp.entity_mentions,
        distinct_entities: cp.entities.len(),
        candidates: cp.candidates,
        triples: cp.triples.len(),
        per_relation: per
            .into_iter()
            .map(|(k, (n, ents))| {
                (
                    k,
                    RelationCount {
                        triples: n,
                        entities: ents.len(),
                    },
                )
            })
            .collect(),
    }
}

/// Run extraction over `corpus`. Output order is (abstract, sentence, pair)
/// regardless of scheduling. On the first failing abstract the run stops with
/// `PipelineAborted`, carrying a checkpoint that `resume` accepts.
pub fn run_pipeline(
    corpus: &[AbstractRecord],
    models: &PipelineModels,
    config: &PipelineConfig,
    resume: Option<Checkpoint>,
) -> Result<PipelineOutput> {
    if config.k == 0 || models.support.support.iter().any(|g| g.len() != config.k) {
        return Err(Error::IncompleteSupport(format!("support bank does not hold K = {} per relation", config.k)));
    }
    let manifest = manifest_for(corpus, models, config);
    let mut cp = match resume {
        Some(cp) if cp.manifest != manifest => {
            return Err(Error::InvariantViolation("checkpoint was made with a different manifest".into()));
        }
        Some(cp) if cp.processed > corpus.len() => {
            return Err(Error::InvariantViolation("checkpoint is past the end of the corpus".into()));
        }
        Some(cp) => cp,
        None => Checkpoint::fresh(manifest.clone()),
    };
    while cp.processed < corpus.len() {
        let end = (cp.processed + config.batch_size.max(1)).min(corpus.len());
        let results: Vec<Result<AbstractOutput>> = corpus[cp.processed..end]
            .par_iter()
            .map(|r| process_abstract(r, models, config))
            .collect();
        for r in results {
            match r {
                Ok(out) => {
                    cp.sentences += out.sentences;
                    cp.entity_mentions += out.mentions.len();
                    cp.entities.extend(out.mentions);
                    cp.candidates += out.candidates;
                    cp.triples.extend(out.triples);
                    cp.processed += 1;
                }
                Err(e) => {
                    return Err(Error::PipelineAborted {
                        processed: cp.processed,
                        reason: e.to_string(),
                        checkpoint: Box::new(cp),
                    });
                }
            }
        }
    }
    Ok(PipelineOutput {
        stats: stats_from(&cp),
        triples: cp.triples,
        manifest,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::dataset::Tag;
    use crate::embed::TableTokenEncoder;
    use crate::relclass::TableScorer;
    use std::collections::HashMap;

    pub fn triple(h: &str, r: &str, t: &str, abstract_id: &str, sentence: usize, score: f64) -> ExtractedTriple {
        let span = TokenSpan::new(0, 1);
        ExtractedTriple {
            head: EntityMention { text: h.into(), span },
            relation: r.into(),
            relation_id: 0,
            tail: EntityMention {
                text: t.into(),
                span: TokenSpan::new(2, 3),
            },
            score,
            provenance: Provenance {
                abstract_id: abstract_id.into(),
                sentence,
                title: format!("title {abstract_id}"),
                journal: "j".into(),
                year: 2020,
            },
        }
    }

    /// Tagger whose emissions copy a 3-d one-hot (B, I, O) token encoding.
    fn oracle_tagger() -> (CrfModel<f64>, TableTokenEncoder) {
        let mut m = CrfModel::<f64>::new(3, "oracle");
        for i in 0..3 {
            m.emission_weights[i][i] = 1.0;
        }
        let mut table = HashMap::new();
        for w in ["cement", "slag", "porosity"] {
            table.insert(w.to_string(), vec![1.0, 0.0, 0.0]);
        }
        table.insert("paste".to_string(), vec![0.0, 1.0, 0.0]);
        (m, TableTokenEncoder::new(table, vec![0.0, 0.0, 1.0]).unwrap())
    }

    fn bank_pool() -> RelationPool {
        let mut pool = RelationPool::new();
        for r in ["affect", "include"] {
            pool.insert(
                r.into(),
                (0..3)
                    .map(|i| RcInstance {
                        id: format!("{r}{i}"),
                        tokens: vec!["a".into(), "x".into(), "b".into()],
                        head_span: TokenSpan::new(0, 1),
                        tail_span: TokenSpan::new(2, 3),
                        relation: r.into(),
                    })
                    .collect(),
            );
        }
        pool
    }

    fn record(id: &str, text: &str) -> AbstractRecord {
        AbstractRecord {
            id: id.into(),
            title: format!("title {id}"),
            journal: "j".into(),
            for_code: "1202".into(),
            year: 2020,
            text: text.into(),
        }
    }

    #[test]
    fn pair_enumeration() {
        let (p, capped) = enumerate_pairs(&['A', 'B', 'C'], PairMode::Forward, 100);
        assert_eq!(p, vec![('A', 'B'), ('A', 'C'), ('B', 'C')]);
        assert!(!capped);
        assert_eq!(enumerate_pairs(&['A', 'B', 'C'], PairMode::Both, 100).0.len(), 6);
        assert!(enumerate_pairs(&['A'], PairMode::Both, 100).0.is_empty());
        let (p, capped) = enumerate_pairs(&['A', 'B', 'C'], PairMode::Forward, 2);
        assert!(capped && p.len() == 2);
    }

    #[test]
    fn thresholds_and_histogram() {
        let ts: Vec<_> = [0.3, 0.9, 0.1, 0.5].iter().map(|&s| triple("a", "r", "b", "p", 0, s)).collect();
        assert_eq!(filter_threshold(&ts, f64::NEG_INFINITY), ts);
        assert!(filter_threshold(&ts, 1.9).is_empty());
        let kept: Vec<f64> = filter_threshold(&ts, 0.3).iter().map(|t| t.score).collect();
        assert_eq!(kept, vec![0.3, 0.9, 0.5]);
        let h = score_histogram(&ts, 0.25).unwrap();
        assert_eq!(h.first().unwrap().1, 4);
        assert_eq!(h.last().unwrap().1, 0);
        assert!(h.windows(2).all(|w| w[1].1 <= w[0].1));
        let one = score_histogram(&ts[..1], 0.1).unwrap();
        let counts: Vec<usize> = one.iter().map(|p| p.1).collect();
        assert_eq!(counts, vec![1, 0]);
        assert!(score_histogram(&ts, 0.0).is_err());
        assert!(histogram_csv(&one).starts_with("threshold,count\n"));
    }

    #[test]
    fn threshold_for_target_precision() {
        let sample = [(0.9, true), (0.8, true), (0.7, false), (0.6, true), (0.2, false)];
        assert_eq!(choose_threshold(&sample, 1.0), Some(0.8));
        assert_eq!(choose_threshold(&sample, 0.75), Some(0.6));
        assert_eq!(choose_threshold(&[(0.5, false)], 0.5), None);
    }

    #[test]
    fn validation_sampling() {
        let mut ts = Vec::new();
        for i in 0..150 {
            ts.push(triple("a", "many", "b", "p", i, 1.0));
        }
        for i in 0..40 {
            ts.push(triple("a", "few", "b", "p", i, 1.0));
        }
        let s = sample_validation(&ts, 100, 3);
        assert_eq!(s.triples.len(), 140);
        assert_eq!(s.shortfalls, vec![("few".to_string(), 40)]);
        assert_eq!(s, sample_validation(&ts, 100, 3));
    }

    fn records(n: u64, correct: u64, agreed: bool, rel: &str) -> Vec<ValidationRecord> {
        (0..n)
            .map(|i| {
                let ok = i < correct;
                ValidationRecord {
                    triple_ref: format!("{rel}{i}"),
                    relation: rel.into(),
                    votes: if agreed { [ok, ok] } else { [true, false] },
                    adjudication: (!agreed).then_some(ok),
                }
            })
            .collect()
    }

    #[test]
    fn adjudication_arithmetic() {
        let mut all = records(2201, 1965, true, "x");
        all.extend(records(699, 456, false, "y"));
        let r = adjudicate(&all).unwrap();
        assert_eq!(r.agreed.accuracy, 89.28);
        assert_eq!(r.disagreed.accuracy, 65.24);
        assert_eq!((r.total.correct, r.total.count, r.total.accuracy), (2421, 2900, 83.48));
        let mut bad = records(1, 1, false, "x");
        bad[0].adjudication = None;
        assert!(matches!(adjudicate(&bad), Err(Error::MissingAdjudication(_))));
        let per = per_relation_accuracy(&all).unwrap();
        assert_eq!(per["x"].accuracy, 89.28);
        assert_eq!(per.len(), 2);
    }

    #[test]
    fn sentence_extraction_with_oracles() {
        let (tagger, enc) = oracle_tagger();
        let schema = Schema::from_labels(&["affect", "include"]);
        let bank = SupportBank::draw(&schema, &bank_pool(), 1, 0).unwrap();
        let scorer = TableScorer::new([("HEAD affects TAIL".to_string(), "affect".to_string(), 0.9)]);
        let splitter = SentenceSplitter::default();
        let models = PipelineModels {
            tagger: &tagger,
            encoder: &enc,
            scorer: &scorer,
            schema: &schema,
            support: &bank,
            splitter: &splitter,
        };
        let meta = record("p1", "");
        let cfg = PipelineConfig::default();
        let s = SentenceRecord::new("p1", 0, "cement paste affects porosity .");
        assert_eq!(
            tagger.decode(&s.token_texts(), &enc).unwrap(),
            vec![Tag::B, Tag::I, Tag::O, Tag::B, Tag::O]
        );
        let out = extract_sentence(&s, &meta, &models, &cfg).unwrap();
        assert_eq!(out.triples.len(), 1);
        let t = &out.triples[0];
        assert_eq!((t.head.text.as_str(), t.relation.as_str(), t.tail.text.as_str()), ("cement paste", "affect", "porosity"));
        assert_eq!(t.score, 0.9);
        let lone = SentenceRecord::new("p1", 1, "only slag here .");
        assert!(extract_sentence(&lone, &meta, &models, &cfg).unwrap().triples.is_empty());
    }

    #[test]
    fn pipeline_runs_and_resumes() {
        let (tagger, enc) = oracle_tagger();
        let schema = Schema::from_labels(&["affect", "include"]);
        let bank = SupportBank::draw(&schema, &bank_pool(), 1, 0).unwrap();
        let scorer = TableScorer::new([
            ("HEAD affects TAIL".to_string(), "affect".to_string(), 0.9),
            ("HEAD includes TAIL".to_string(), "include".to_string(), 0.8),
        ]);
        let splitter = SentenceSplitter::default();
        let models = PipelineModels {
            tagger: &tagger,
            encoder: &enc,
            scorer: &scorer,
            schema: &schema,
            support: &bank,
            splitter: &splitter,
        };
        let cfg = PipelineConfig {
            theta: 0.5,
            batch_size: 1,
            ..PipelineConfig::default()
        };
        let empty = run_pipeline(&[], &models, &cfg, None).unwrap();
        assert_eq!(empty.stats, PipelineStats::default());
        let corpus = vec![
            record("p1", "Cement paste affects porosity. Nothing here."),
            record("p2", "Slag includes cement and porosity."),
        ];
        let out = run_pipeline(&corpus, &models, &cfg, None).unwrap();
        assert_eq!(out.stats.abstracts, 2);
        assert_eq!(out.stats.sentences, 3);
        assert_eq!(out.stats.entity_mentions, 5);
        assert_eq!(out.stats.distinct_entities, 4);
        assert_eq!(out.stats.candidates, 4);
        assert_eq!(out.stats.triples, 2);
        assert_eq!(out.stats.per_relation["affect"].triples, 1);
        assert_eq!(out.stats.per_relation["include"].triples, 1);
        assert_eq!(out.triples[1].head.text, "Slag");
        assert_eq!(out.triples[0].provenance.title, "title p1");

        let cp = Checkpoint {
            processed: 1,
            sentences: 2,
            entity_mentions: 2,
            candidates: 1,
            entities: ["cement paste".to_string(), "porosity".to_string()].into(),
            triples: out.triples[..1].to_vec(),
            manifest: out.manifest.clone(),
        };
        assert_eq!(run_pipeline(&corpus, &models, &cfg, Some(cp)).unwrap(), out);
    }

    #[test]
    fn pipeline_abort_carries_checkpoint() {
        let (tagger, _) = oracle_tagger();
        let wrong_dim = TableTokenEncoder::new(HashMap::new(), vec![0.0; 5]).unwrap();
        let schema = Schema::from_labels(&["affect", "include"]);
        let bank = SupportBank::draw(&schema, &bank_pool(), 1, 0).unwrap();
        let scorer = TableScorer::default();
        let splitter = SentenceSplitter::default();
        let models = PipelineModels {
            tagger: &tagger,
            encoder: &wrong_dim,
            scorer: &scorer,
            schema: &schema,
            support: &bank,
            splitter: &splitter,
        };
        let corpus = vec![record("p1", "Cement paste affects porosity.")];
        match run_pipeline(&corpus, &models, &PipelineConfig::default(), None) {
            Err(Error::PipelineAborted { processed, checkpoint, .. }) => {
                assert_eq!(processed, 0);
                assert_eq!(checkpoint.processed, 0);
            }
            other => panic!("expected abort, got {other:?}"),
        }
        assert!(matches!(
            SupportBank::draw(&schema, &bank_pool(), 4, 0),
            Err(Error::IncompleteSupport(_))
        ));
    }
}
