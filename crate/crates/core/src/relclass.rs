//! Few-shot relation classification by pairwise query/support scoring.

use std::borrow::Cow;
use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::{Arc, Mutex};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{rotate_folds, sample_episode_with, RcInstance, RelationPool};
use crate::embed::{provider_from_spec, EncoderProvider, HashedProvider};
use crate::error::{Error, Result};
use crate::io::read_jsonl;
use crate::oie::TokenSpan;
use crate::scalar::cosine;
use crate::stats;

pub const DEFAULT_PAIR_TOKENS: usize = 128;

/// Scores how strongly a query instance expresses the same relation as a support instance.
pub trait PairScorer: Send + Sync {
    fn id(&self) -> String;
    /// Maximum combined token length of a (query, support) pair.
    fn max_tokens(&self) -> usize {
        DEFAULT_PAIR_TOKENS
    }
    fn score(&self, query: &RcInstance, support: &RcInstance) -> Result<f64>;
}

impl<S: PairScorer + ?Sized> PairScorer for Arc<S> {
    fn id(&self) -> String {
        (**self).id()
    }
    fn max_tokens(&self) -> usize {
        (**self).max_tokens()
    }
    fn score(&self, query: &RcInstance, support: &RcInstance) -> Result<f64> {
        (**self).score(query, support)
    }
}

impl<S: PairScorer + ?Sized> PairScorer for Box<S> {
    fn id(&self) -> String {
        (**self).id()
    }
    fn max_tokens(&self) -> usize {
        (**self).max_tokens()
    }
    fn score(&self, query: &RcInstance, support: &RcInstance) -> Result<f64> {
        (**self).score(query, support)
    }
}

/// Keep the first `n` tokens, clamping spans into range.
pub fn truncate_instance(inst: &RcInstance, n: usize) -> RcInstance {
    let clamp = |s: TokenSpan| {
        let end = s.end.min(n);
        TokenSpan::new(s.start.min(end), end)
    };
    RcInstance {
        id: inst.id.clone(),
        tokens: inst.tokens[..n.min(inst.tokens.len())].to_vec(),
        head_span: clamp(inst.head_span),
        tail_span: clamp(inst.tail_span),
        relation: inst.relation.clone(),
    }
}

/// Fit a pair into `cap` combined tokens by cutting from the right, longer side first.
pub fn fit_pair<'a>(query: &'a RcInstance, support: &'a RcInstance, cap: usize) -> (Cow<'a, RcInstance>, Cow<'a, RcInstance>, bool) {
    let (a, b) = (query.tokens.len(), support.tokens.len());
    if a + b <= cap {
        return (Cow::Borrowed(query), Cow::Borrowed(support), false);
    }
    let half = cap / 2;
    let (na, nb) = if a <= half {
        (a, cap - a)
    } else if b <= cap - half {
        (cap - b, b)
    } else {
        (half, cap - half)
    };
    let q = if na < a { Cow::Owned(truncate_instance(query, na)) } else { Cow::Borrowed(query) };
    let s = if nb < b { Cow::Owned(truncate_instance(support, nb)) } else { Cow::Borrowed(support) };
    (q, s, true)
}

fn score_pair(scorer: &dyn PairScorer, query: &RcInstance, support: &RcInstance) -> Result<f64> {
    let (q, s, cut) = fit_pair(query, support, scorer.max_tokens());
    if cut {
        log::warn!(
            "pair ({}, {}) exceeds {} tokens; truncated",
            query.id,
            support.id,
            scorer.max_tokens()
        );
    }
    let v = scorer.score(&q, &s)?;
    if !v.is_finite() {
        return Err(Error::InvariantViolation(format!(
            "scorer {} returned non-finite score for ({}, {})",
            scorer.id(),
            query.id,
            support.id
        )));
    }
    Ok(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// Index into the support groups.
    pub relation: usize,
    pub score: f64,
    pub per_relation_scores: Vec<f64>,
}

/// Index of the maximum; ties go to the lowest index.
pub fn argmax(xs: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &x) in xs.iter().enumerate() {
        if best.is_none_or(|b| x > xs[b]) {
            best = Some(i);
        }
    }
    best
}

/// Turn per-relation scores into a prediction.
pub fn prediction_from_scores(per_relation_scores: Vec<f64>) -> Result<Prediction> {
    let relation = argmax(&per_relation_scores).ok_or_else(|| Error::IncompleteSupport("no relations".into()))?;
    Ok(Prediction {
        relation,
        score: per_relation_scores[relation],
        per_relation_scores,
    })
}

/// Classify `query` against `support[r]` (K instances per relation): the
/// per-relation score is the mean pair score, the prediction its argmax.
pub fn predict(query: &RcInstance, support: &[Vec<RcInstance>], scorer: &dyn PairScorer) -> Result<Prediction> {
    if support.is_empty() {
        return Err(Error::IncompleteSupport("no relations in support set".into()));
    }
    let mut scores = Vec::with_capacity(support.len());
    for (r, group) in support.iter().enumerate() {
        if group.is_empty() {
            return Err(Error::IncompleteSupport(format!("relation {r} has no support instances")));
        }
        let mut total = 0.0;
        for s in group {
            total += score_pair(scorer, query, s)?;
        }
        scores.push(total / group.len() as f64);
    }
    prediction_from_scores(scores)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeEvaluation {
    pub accuracy: f64,
    pub correct: u64,
    pub total: u64,
    /// 95% Wilson interval.
    pub interval: (f64, f64),
}

impl EpisodeEvaluation {
    fn from_counts(correct: u64, total: u64) -> Self {
        Self {
            accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
            correct,
            total,
            interval: stats::wilson_interval(correct, total),
        }
    }
}

/// Run `iterations` seeded N-way K-shot Q-query episodes and report query accuracy.
///
/// Episode `i` draws from its own ChaCha stream, so results do not depend on
/// scheduling.
pub fn evaluate_episodes(
    scorer: &dyn PairScorer,
    pool: &RelationPool,
    n: usize,
    k: usize,
    q: usize,
    iterations: usize,
    seed: u64,
) -> Result<EpisodeEvaluation> {
    let counts: Vec<(u64, u64)> = (0..iterations)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let ep = sample_episode_with(pool, n, k, q, &mut rng)?;
            let mut correct = 0;
            let mut total = 0;
            for (gold, group) in ep.queries.iter().enumerate() {
                for query in group {
                    let p = predict(query, &ep.support, scorer)?;
                    correct += u64::from(p.relation == gold);
                    total += 1;
                }
            }
            Ok((correct, total))
        })
        .collect::<Result<_>>()?;
    let (c, t) = counts.iter().fold((0, 0), |(a, b), &(c, t)| (a + c, b + t));
    Ok(EpisodeEvaluation::from_counts(c, t))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub folds: usize,
    pub counts: [usize; 3],
    pub n_way: usize,
    pub k_shot: usize,
    pub q_query: usize,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            counts: [18, 5, 6],
            n_way: 5,
            k_shot: 1,
            q_query: 1,
            iterations: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub validation: EpisodeEvaluation,
    pub test: EpisodeEvaluation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: Vec<FoldResult>,
    pub validation: stats::Summary,
    pub test: stats::Summary,
}

impl CvReport {
    pub fn from_folds(folds: Vec<FoldResult>) -> Self {
        let val: Vec<f64> = folds.iter().map(|f| f.validation.accuracy).collect();
        let test: Vec<f64> = folds.iter().map(|f| f.test.accuracy).collect();
        Self {
            validation: stats::summarize(&val),
            test: stats::summarize(&test),
            folds,
        }
    }
}

/// Cross-validation over rotated relation allocations. `factory` builds a
/// scorer from the training relations of each fold.
pub fn rotation_cv<F>(factory: F, pool: &RelationPool, cfg: &CvConfig) -> Result<CvReport>
where
    F: Fn(&RelationPool) -> Result<Box<dyn PairScorer>>,
{
    let relations: Vec<String> = pool.keys().cloned().collect();
    let mut folds = Vec::with_capacity(cfg.folds);
    for fold in 1..=cfg.folds {
        let split = rotate_folds(&relations, fold, cfg.counts)?;
        let [train, val, test] = split.pools(pool);
        let scorer = factory(&train)?;
        let seed = cfg.seed.wrapping_add(fold as u64);
        let (n, k, q, it) = (cfg.n_way, cfg.k_shot, cfg.q_query, cfg.iterations);
        folds.push(FoldResult {
            fold,
            validation: evaluate_episodes(scorer.as_ref(), &val, n, k, q, it, seed)?,
            test: evaluate_episodes(scorer.as_ref(), &test, n, k, q, it, seed)?,
        });
    }
    Ok(CvReport::from_folds(folds))
}

// ------------------------------------------------------------------ scorers

/// Context words of an instance, tagged by region. Entity surfaces never appear.
///
/// `L:` words precede the first entity, `M:` words lie between the entities
/// (with the argument order folded into the tag), `R:` words follow the second.
pub fn context_features(inst: &RcInstance, window: usize) -> Vec<String> {
    let head_first = inst.head_span.start <= inst.tail_span.start;
    let (a, b) = if head_first {
        (inst.head_span, inst.tail_span)
    } else {
        (inst.tail_span, inst.head_span)
    };
    let toks = &inst.tokens;
    let mid = if head_first { "M>" } else { "M<" };
    let mut out = Vec::new();
    let left = a.start.saturating_sub(window);
    out.extend(toks[left..a.start].iter().map(|w| format!("L:{w}")));
    out.extend(toks[a.end.min(b.start)..b.start].iter().map(|w| format!("{mid}:{w}")));
    let right = (b.end + window).min(toks.len());
    out.extend(toks[b.end.min(right)..right].iter().map(|w| format!("R:{w}")));
    out
}

/// Cosine similarity of encoded relation-context features.
pub struct ContextScorer<P> {
    pub provider: P,
    pub window: usize,
}

impl Default for ContextScorer<HashedProvider> {
    fn default() -> Self {
        Self::new(HashedProvider::default())
    }
}

impl<P: EncoderProvider> ContextScorer<P> {
    pub fn new(provider: P) -> Self {
        Self { provider, window: 2 }
    }
}

impl<P: EncoderProvider> PairScorer for ContextScorer<P> {
    fn id(&self) -> String {
        format!("context-cosine/{}", self.provider.id())
    }
    fn score(&self, query: &RcInstance, support: &RcInstance) -> Result<f64> {
        let a = context_features(query, self.window).join(" ");
        let b = context_features(support, self.window).join(" ");
        if a == b {
            return Ok(1.0);
        }
        Ok(cosine(&self.provider.encode(&a)?, &self.provider.encode(&b)?))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TableEntry {
    context: String,
    relation: String,
    #[serde(default = "one")]
    score: f64,
}

fn one() -> f64 {
    1.0
}

/// Lookup scorer keyed by the query's relation context (`HEAD led to TAIL`).
///
/// A query whose context is listed for relation `r` scores `score` against
/// support instances labelled `r` and 0 against everything else. Unlisted
/// contexts score 0 everywhere.
#[derive(Debug, Clone, Default)]
pub struct TableScorer {
    entries: HashMap<String, (String, f64)>,
}

impl TableScorer {
    pub fn new(entries: impl IntoIterator<Item = (String, String, f64)>) -> Self {
        Self {
            entries: entries.into_iter().map(|(c, r, s)| (c, (r, s))).collect(),
        }
    }

    /// JSONL rows `{"context", "relation", "score"?}`.
    pub fn load(path: &Path) -> Result<Self> {
        let rows: Vec<TableEntry> = read_jsonl(path)?;
        Ok(Self::new(rows.into_iter().map(|e| (e.context, e.relation, e.score))))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl PairScorer for TableScorer {
    fn id(&self) -> String {
        format!("table/{}", self.entries.len())
    }
    fn max_tokens(&self) -> usize {
        usize::MAX
    }
    fn score(&self, query: &RcInstance, support: &RcInstance) -> Result<f64> {
        Ok(match self.entries.get(&query.relation_context()) {
            Some((r, s)) if *r == support.relation => *s,
            _ => 0.0,
        })
    }
}

/// 1 when query and support carry the same gold label.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleScorer;

impl PairScorer for OracleScorer {
    fn id(&self) -> String {
        "oracle".into()
    }
    fn score(&self, query: &RcInstance, support: &RcInstance) -> Result<f64> {
        Ok(if query.relation == support.relation { 1.0 } else { 0.0 })
    }
}

#[derive(Serialize)]
struct ExternalRequest<'a> {
    query: &'a RcInstance,
    support: &'a RcInstance,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ExternalResponse {
    Bare(f64),
    Object { score: f64 },
}

struct ExternalProcess {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

/// Scorer backed by a subprocess speaking line-delimited JSON:
/// one `{"query": .., "support": ..}` request per line, answered by a number
/// or `{"score": x}`.
pub struct ExternalScorer {
    command: String,
    process: Mutex<ExternalProcess>,
}

impl ExternalScorer {
    pub fn spawn(command: &str) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| Error::EncoderUnavailable(format!("cannot start `{command}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(Self {
            command: command.to_string(),
            process: Mutex::new(ExternalProcess { child, stdin, stdout }),
        })
    }
}

impl PairScorer for ExternalScorer {
    fn id(&self) -> String {
        format!("external/{}", self.command)
    }
    fn score(&self, query: &RcInstance, support: &RcInstance) -> Result<f64> {
        let unavailable = |what: &str| Error::EncoderUnavailable(format!("`{}`: {what}", self.command));
        let mut p = self.process.lock().map_err(|_| unavailable("poisoned"))?;
        let line = serde_json::to_string(&ExternalRequest { query, support })?;
        writeln!(p.stdin, "{line}").and_then(|_| p.stdin.flush())?;
        let mut reply = String::new();
        if p.stdout.read_line(&mut reply)? == 0 {
            return Err(unavailable("closed its output"));
        }
        match serde_json::from_str(reply.trim())? {
            ExternalResponse::Bare(x) | ExternalResponse::Object { score: x } => Ok(x),
        }
    }
}

impl Drop for ExternalScorer {
    fn drop(&mut self) {
        if let Ok(p) = self.process.get_mut() {
            let _ = p.child.kill();
            let _ = p.child.wait();
        }
    }
}

/// `default`, `default:<provider spec>`, `table:<path>`, `external:<command>` or `oracle`.
pub fn scorer_from_spec(spec: &str) -> Result<Arc<dyn PairScorer>> {
    let (kind, arg) = spec.split_once(':').unwrap_or((spec, ""));
    match kind {
        "default" if arg.is_empty() => Ok(Arc::new(ContextScorer::default())),
        "default" => Ok(Arc::new(ContextScorer::new(provider_from_spec(arg)?))),
        "table" => Ok(Arc::new(TableScorer::load(Path::new(arg))?)),
        "external" => Ok(Arc::new(ExternalScorer::spawn(arg)?)),
        "oracle" => Ok(Arc::new(OracleScorer)),
        _ => Err(Error::EncoderUnavailable(format!("unknown scorer spec `{spec}`"))),
    }
}
