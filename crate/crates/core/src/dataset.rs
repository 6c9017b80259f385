//! Annotated datasets: brat standoff import, annotation lint, NER and RC
//! splits, few-shot episode sampling and relation-rotation folds.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, SentenceSplitter};
use crate::error::{Error, Result};
use crate::oie::TokenSpan;

/// BIO tag. The index order (B, I, O) is the CRF label order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Tag {
    B,
    I,
    O,
}

impl Tag {
    pub const ALL: [Tag; 3] = [Tag::B, Tag::I, Tag::O];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Tag> {
        Tag::ALL.get(i).copied()
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// `I` may only follow `B` or `I`.
pub fn validate_bio(labels: &[Tag]) -> Result<()> {
    let mut prev = Tag::O;
    for (i, &t) in labels.iter().enumerate() {
        if t == Tag::I && prev == Tag::O {
            return Err(Error::InvalidGold(format!("I at position {i} follows O or sentence start")));
        }
        prev = t;
    }
    Ok(())
}

/// Maximal `B I*` runs. A stray `I` does not open an entity.
pub fn entity_spans(labels: &[Tag]) -> Vec<TokenSpan> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < labels.len() {
        if labels[i] == Tag::B {
            let s = i;
            i += 1;
            while i < labels.len() && labels[i] == Tag::I {
                i += 1;
            }
            out.push(TokenSpan::new(s, i));
        } else {
            i += 1;
        }
    }
    out
}

pub fn tags_for_spans(n: usize, spans: &[TokenSpan]) -> Vec<Tag> {
    let mut labels = vec![Tag::O; n];
    for s in spans {
        if labels[s.start..s.end].iter().any(|&t| t != Tag::O) {
            continue;
        }
        labels[s.start] = Tag::B;
        for l in &mut labels[s.start + 1..s.end] {
            *l = Tag::I;
        }
    }
    labels
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NerInstance {
    pub id: String,
    pub tokens: Vec<String>,
    pub labels: Vec<Tag>,
    #[serde(default)]
    pub head_span: Option<TokenSpan>,
    #[serde(default)]
    pub tail_span: Option<TokenSpan>,
}

impl NerInstance {
    pub fn validate(&self) -> Result<()> {
        if self.tokens.len() != self.labels.len() {
            return Err(Error::InvariantViolation(format!(
                "{}: {} tokens but {} labels",
                self.id,
                self.tokens.len(),
                self.labels.len()
            )));
        }
        validate_bio(&self.labels)?;
        let spans = entity_spans(&self.labels);
        for s in [self.head_span, self.tail_span].into_iter().flatten() {
            if !spans.contains(&s) {
                return Err(Error::InvariantViolation(format!(
                    "{}: span {}..{} is not a B/I run",
                    self.id, s.start, s.end
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RcInstance {
    pub id: String,
    pub tokens: Vec<String>,
    pub head_span: TokenSpan,
    pub tail_span: TokenSpan,
    /// Relation label as annotated (e.g. `lead_to`).
    pub relation: String,
}

impl RcInstance {
    pub fn validate(&self) -> Result<()> {
        let n = self.tokens.len();
        for s in [self.head_span, self.tail_span] {
            if s.is_empty() || s.end > n {
                return Err(Error::InvariantViolation(format!("{}: span outside sentence", self.id)));
            }
        }
        if self.head_span.overlaps(&self.tail_span) {
            return Err(Error::InvariantViolation(format!("{}: head and tail overlap", self.id)));
        }
        Ok(())
    }

    pub fn head_text(&self) -> String {
        self.head_span.surface(&self.tokens)
    }

    pub fn tail_text(&self) -> String {
        self.tail_span.surface(&self.tokens)
    }

    /// Tokens from the first entity through the last, entities replaced by `HEAD`/`TAIL`.
    pub fn relation_context(&self) -> String {
        let (first, second) = if self.head_span.start <= self.tail_span.start {
            (self.head_span, self.tail_span)
        } else {
            (self.tail_span, self.head_span)
        };
        let mark = |s: TokenSpan| if s == self.head_span { "HEAD" } else { "TAIL" };
        let mut parts = vec![mark(first).to_string()];
        parts.extend(self.tokens[first.end..second.start].iter().cloned());
        parts.push(mark(second).to_string());
        parts.join(" ")
    }
}

/// Instances grouped by relation label, in label order.
pub type RelationPool = BTreeMap<String, Vec<RcInstance>>;

pub fn pool_by_relation(instances: &[RcInstance]) -> RelationPool {
    let mut pool = RelationPool::new();
    for inst in instances {
        pool.entry(inst.relation.clone()).or_default().push(inst.clone());
    }
    pool
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit<T> {
    pub train: Vec<T>,
    pub validation: Vec<T>,
    pub test: Vec<T>,
}

impl<T> DatasetSplit<T> {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.validation.len(), self.test.len())
    }
}

/// Relation-level allocation of an RC dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationSplit {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

impl RelationSplit {
    /// Instances following their relation's partition.
    pub fn instances(&self, pool: &RelationPool) -> DatasetSplit<RcInstance> {
        let gather = |rels: &[String]| {
            rels.iter()
                .flat_map(|r| pool.get(r).into_iter().flatten().cloned())
                .collect()
        };
        DatasetSplit {
            train: gather(&self.train),
            validation: gather(&self.validation),
            test: gather(&self.test),
        }
    }

    pub fn pools(&self, pool: &RelationPool) -> [RelationPool; 3] {
        let sub = |rels: &[String]| {
            rels.iter()
                .filter_map(|r| pool.get(r).map(|v| (r.clone(), v.clone())))
                .collect()
        };
        [sub(&self.train), sub(&self.validation), sub(&self.test)]
    }
}

// ---------------------------------------------------------------- brat import

#[derive(Debug, Clone)]
struct BratEntity {
    kind: String,
    start: usize,
    end: usize,
}

#[derive(Debug, Clone)]
struct BratRelation {
    id: String,
    kind: String,
    arg1: String,
    arg2: String,
}

/// Instances imported from one brat document.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BratDocument {
    pub rc: Vec<RcInstance>,
    pub ner: Vec<NerInstance>,
}

fn parse_ann(ann: &str, text_chars: &[char], ann_name: &str) -> Result<(BTreeMap<String, BratEntity>, Vec<BratRelation>)> {
    let mut entities = BTreeMap::new();
    let mut relations = Vec::new();
    for (lineno, line) in ann.lines().enumerate() {
        let perr = |message: String| Error::Parse {
            path: ann_name.to_string(),
            line: lineno + 1,
            message,
        };
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let id = fields[0];
        if id.starts_with('T') {
            if fields.len() < 3 {
                return Err(perr("entity line needs 3 tab-separated fields".into()));
            }
            let mut parts = fields[1].split_whitespace();
            let kind = parts.next().ok_or_else(|| perr("missing entity type".into()))?;
            // discontinuous fragments "s e;s e" are spanned from first start to last end
            let offsets: Vec<usize> = parts
                .flat_map(|p| p.split(';'))
                .map(|o| o.parse::<usize>().map_err(|_| perr(format!("bad offset {o:?}"))))
                .collect::<Result<_>>()?;
            if offsets.len() < 2 {
                return Err(perr("entity needs start and end offsets".into()));
            }
            let start = offsets[0];
            let end = *offsets.last().expect("non-empty");
            if start >= end || end > text_chars.len() {
                return Err(Error::OffsetError(format!(
                    "{ann_name}:{}: offsets {start}..{end} outside text of length {}",
                    lineno + 1,
                    text_chars.len()
                )));
            }
            let actual: String = text_chars[start..end].iter().collect();
            if offsets.len() == 2 && actual != fields[2] {
                return Err(Error::OffsetError(format!(
                    "{ann_name}:{}: surface {:?} does not match text {:?}",
                    lineno + 1,
                    fields[2],
                    actual
                )));
            }
            entities.insert(
                id.to_string(),
                BratEntity {
                    kind: kind.to_string(),
                    start,
                    end,
                },
            );
        } else if id.starts_with('R') {
            if fields.len() < 2 {
                return Err(perr("relation line needs 2 tab-separated fields".into()));
            }
            let parts: Vec<&str> = fields[1].split_whitespace().collect();
            if parts.len() != 3 {
                return Err(perr(format!("relation expects `Type Arg1:T Arg2:T`, got {:?}", fields[1])));
            }
            let arg = |p: &str, name: &str| {
                p.strip_prefix(name)
                    .and_then(|s| s.strip_prefix(':'))
                    .map(str::to_string)
                    .ok_or_else(|| perr(format!("expected {name}:<id>, got {p:?}")))
            };
            relations.push(BratRelation {
                id: id.to_string(),
                kind: parts[0].to_string(),
                arg1: arg(parts[1], "Arg1")?,
                arg2: arg(parts[2], "Arg2")?,
            });
        }
        // notes, attributes and events carry nothing used here
    }
    for r in &relations {
        for a in [&r.arg1, &r.arg2] {
            if !entities.contains_key(a) {
                return Err(Error::DanglingRef(format!("{ann_name}: {} refers to {a}", r.id)));
            }
        }
    }
    Ok((entities, relations))
}

/// Import one brat document (text plus standoff annotations).
pub fn import_brat_str(doc_id: &str, text: &str, ann: &str, splitter: &SentenceSplitter) -> Result<BratDocument> {
    let chars: Vec<char> = text.chars().collect();
    let (entities, relations) = parse_ann(ann, &chars, doc_id)?;
    if entities.is_empty() {
        return Ok(BratDocument::default());
    }
    let sentences = splitter.split_spans(text);
    let sentence_of = |e: &BratEntity| -> Result<usize> {
        sentences
            .iter()
            .position(|s| s.start <= e.start && e.end <= s.end)
            .ok_or_else(|| Error::OffsetError(format!("{doc_id}: entity {}..{} crosses a sentence boundary", e.start, e.end)))
    };
    let mut token_cache: HashMap<usize, Vec<crate::corpus::Token>> = HashMap::new();
    let mut span_of = |e: &BratEntity| -> Result<(usize, TokenSpan)> {
        let si = sentence_of(e)?;
        let s = &sentences[si];
        let toks = token_cache.entry(si).or_insert_with(|| tokenize(&s.text));
        let (lo, hi) = (e.start - s.start, e.end - s.start);
        let covered: Vec<usize> = toks
            .iter()
            .enumerate()
            .filter(|(_, t)| t.start < hi && lo < t.end)
            .map(|(i, _)| i)
            .collect();
        match (covered.first(), covered.last()) {
            (Some(&a), Some(&b)) => Ok((si, TokenSpan::new(a, b + 1))),
            _ => Err(Error::OffsetError(format!("{doc_id}: entity {}..{} covers no token", e.start, e.end))),
        }
    };

    let mut by_sentence: BTreeMap<usize, Vec<TokenSpan>> = BTreeMap::new();
    let mut entity_spans_by_id = BTreeMap::new();
    for (id, e) in &entities {
        let (si, span) = span_of(e)?;
        by_sentence.entry(si).or_default().push(span);
        entity_spans_by_id.insert(id.clone(), (si, span, e.kind.clone()));
    }

    let mut doc = BratDocument::default();
    let mut first_relation: BTreeMap<usize, (TokenSpan, TokenSpan)> = BTreeMap::new();
    for r in &relations {
        let (s1, head, _) = &entity_spans_by_id[&r.arg1];
        let (s2, tail, _) = &entity_spans_by_id[&r.arg2];
        if s1 != s2 {
            return Err(Error::OffsetError(format!("{doc_id}: relation {} spans two sentences", r.id)));
        }
        let tokens: Vec<String> = tokenize(&sentences[*s1].text).into_iter().map(|t| t.text).collect();
        let inst = RcInstance {
            id: format!("{doc_id}:{}", r.id),
            tokens,
            head_span: *head,
            tail_span: *tail,
            relation: r.kind.clone(),
        };
        inst.validate()?;
        doc.rc.push(inst);
        first_relation.entry(*s1).or_insert((*head, *tail));
    }
    for (si, mut spans) in by_sentence {
        spans.sort();
        let tokens: Vec<String> = tokenize(&sentences[si].text).into_iter().map(|t| t.text).collect();
        let labels = tags_for_spans(tokens.len(), &spans);
        let (head_span, tail_span) = match first_relation.get(&si) {
            Some(&(h, t)) => (Some(h), Some(t)),
            None => (None, None),
        };
        let inst = NerInstance {
            id: format!("{doc_id}:s{si}"),
            tokens,
            labels,
            head_span,
            tail_span,
        };
        doc.ner.push(inst);
    }
    Ok(doc)
}

pub fn import_brat(text_file: &Path, ann_file: &Path) -> Result<BratDocument> {
    let text = std::fs::read_to_string(text_file)?;
    let ann = std::fs::read_to_string(ann_file)?;
    let doc_id = ann_file
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    import_brat_str(&doc_id, &text, &ann, &SentenceSplitter::default())
}

/// Import every `<name>.ann` in `ann_dir` paired with `<name>.txt` in `txt_dir`, in name order.
pub fn import_brat_dirs(txt_dir: &Path, ann_dir: &Path) -> Result<BratDocument> {
    let mut names: Vec<_> = std::fs::read_dir(ann_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ann"))
        .collect();
    names.sort();
    let mut all = BratDocument::default();
    for ann in names {
        let stem = ann.file_stem().expect("file has a stem").to_owned();
        let txt = txt_dir.join(&stem).with_extension("txt");
        let doc = import_brat(&txt, &ann)?;
        all.rc.extend(doc.rc);
        all.ner.extend(doc.ner);
    }
    Ok(all)
}

/// Differences between two imports of the same annotations, keyed by instance id.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct AnnotationDiff {
    pub added: Vec<String>,
    pub removed: Vec<String>,
    pub changed: Vec<String>,
}

pub fn diff_rc(before: &[RcInstance], after: &[RcInstance]) -> AnnotationDiff {
    let old: BTreeMap<&str, &RcInstance> = before.iter().map(|i| (i.id.as_str(), i)).collect();
    let new: BTreeMap<&str, &RcInstance> = after.iter().map(|i| (i.id.as_str(), i)).collect();
    let mut diff = AnnotationDiff::default();
    for (id, inst) in &new {
        match old.get(id) {
            None => diff.added.push(id.to_string()),
            Some(prev) if prev != inst => diff.changed.push(id.to_string()),
            _ => {}
        }
    }
    diff.removed = old.keys().filter(|id| !new.contains_key(*id)).map(|s| s.to_string()).collect();
    diff
}

// ---------------------------------------------------------------------- lint

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LintKind {
    /// Entity contains a coordinating conjunction or comma.
    CoordinateEntity,
    /// Entity is longer than the clause-length cap.
    TooLong,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LintWarning {
    pub instance: String,
    pub span: TokenSpan,
    pub text: String,
    pub kind: LintKind,
}

const COORDINATORS: &[&str] = &["and", "or", "nor", "but", "as well as", ","];

fn lint_span(id: &str, tokens: &[String], span: TokenSpan, cap: usize, out: &mut Vec<LintWarning>) {
    let words = &tokens[span.start..span.end];
    let text = words.join(" ");
    if words.iter().any(|w| COORDINATORS.contains(&w.to_lowercase().as_str())) {
        out.push(LintWarning {
            instance: id.to_string(),
            span,
            text: text.clone(),
            kind: LintKind::CoordinateEntity,
        });
    }
    if span.len() > cap {
        out.push(LintWarning {
            instance: id.to_string(),
            span,
            text,
            kind: LintKind::TooLong,
        });
    }
}

pub const DEFAULT_ENTITY_LENGTH_CAP: usize = 8;

/// Flag entities that look coordinated or clause-like. Never modifies the data.
pub fn lint_annotations(rc: &[RcInstance], ner: &[NerInstance], length_cap: usize) -> Vec<LintWarning> {
    let mut out = Vec::new();
    for inst in rc {
        lint_span(&inst.id, &inst.tokens, inst.head_span, length_cap, &mut out);
        lint_span(&inst.id, &inst.tokens, inst.tail_span, length_cap, &mut out);
    }
    for inst in ner {
        for span in entity_spans(&inst.labels) {
            lint_span(&inst.id, &inst.tokens, span, length_cap, &mut out);
        }
    }
    out
}

// -------------------------------------------------------------------- splits

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RcSplitConfig {
    /// Relations allocated to train, validation, test.
    pub counts: [usize; 3],
    /// Required instances per relation; `None` disables the check.
    pub per_relation: Option<usize>,
}

impl Default for RcSplitConfig {
    fn default() -> Self {
        Self {
            counts: [18, 5, 6],
            per_relation: Some(50),
        }
    }
}

fn allocate(order: &[String], counts: [usize; 3]) -> RelationSplit {
    let (a, b) = (counts[0], counts[0] + counts[1]);
    RelationSplit {
        train: order[..a].to_vec(),
        validation: order[a..b].to_vec(),
        test: order[b..].to_vec(),
    }
}

/// Shuffle relations with `seed` and allocate them to train/validation/test.
pub fn split_rc(pool: &RelationPool, seed: u64, cfg: &RcSplitConfig) -> Result<(RelationSplit, DatasetSplit<RcInstance>)> {
    let total: usize = cfg.counts.iter().sum();
    if pool.len() != total {
        return Err(Error::SplitError(format!(
            "expected {total} relations, found {}",
            pool.len()
        )));
    }
    if let Some(n) = cfg.per_relation {
        if let Some((r, v)) = pool.iter().find(|(_, v)| v.len() != n) {
            return Err(Error::SplitError(format!(
                "relation {r} has {} instances, expected {n}",
                v.len()
            )));
        }
    }
    let mut order: Vec<String> = pool.keys().cloned().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let rel = allocate(&order, cfg.counts);
    let inst = rel.instances(pool);
    Ok((rel, inst))
}

#[derive(Debug, Clone, PartialEq)]
pub struct NerSplitConfig {
    /// Required dataset size; `None` disables the check.
    pub expected: Option<usize>,
    pub train_ratio: f64,
}

impl Default for NerSplitConfig {
    fn default() -> Self {
        Self {
            expected: Some(2000),
            train_ratio: 0.8,
        }
    }
}

/// Seeded train/validation split; the NER dataset has no test partition.
pub fn split_ner(instances: &[NerInstance], seed: u64, cfg: &NerSplitConfig) -> Result<DatasetSplit<NerInstance>> {
    if let Some(n) = cfg.expected {
        if instances.len() != n {
            return Err(Error::SplitError(format!(
                "expected {n} NER instances, found {}",
                instances.len()
            )));
        }
    }
    if !(0.0..=1.0).contains(&cfg.train_ratio) {
        return Err(Error::SplitError(format!("train ratio {} outside [0, 1]", cfg.train_ratio)));
    }
    let mut order: Vec<usize> = (0..instances.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (instances.len() as f64 * cfg.train_ratio).round() as usize;
    Ok(DatasetSplit {
        train: order[..n_train].iter().map(|&i| instances[i].clone()).collect(),
        validation: order[n_train..].iter().map(|&i| instances[i].clone()).collect(),
        test: Vec::new(),
    })
}

/// Relation allocation for cross-validation fold `fold` (1-based).
///
/// Fold `f` rotates the relation order right by `4 * (f - 1)` positions and
/// then takes the first/next/last blocks of `counts`.
pub fn rotate_folds(relations: &[String], fold: usize, counts: [usize; 3]) -> Result<RelationSplit> {
    if !(1..=5).contains(&fold) {
        return Err(Error::InvalidFold(fold));
    }
    if counts.iter().sum::<usize>() != relations.len() {
        return Err(Error::SplitError(format!(
            "fold counts {counts:?} do not cover {} relations",
            relations.len()
        )));
    }
    let n = relations.len();
    let mut order = relations.to_vec();
    if n > 0 {
        order.rotate_right((4 * (fold - 1)) % n);
    }
    Ok(allocate(&order, counts))
}

// ------------------------------------------------------------------ episodes

/// One N-way K-shot Q-query task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub relations: Vec<String>,
    /// `support[r]` holds K instances of `relations[r]`.
    pub support: Vec<Vec<RcInstance>>,
    /// `queries[r]` holds Q instances of `relations[r]`.
    pub queries: Vec<Vec<RcInstance>>,
    pub n_way: usize,
    pub k_shot: usize,
    pub q_query: usize,
}

impl Episode {
    pub fn check(&self) -> Result<()> {
        let distinct: BTreeSet<&String> = self.relations.iter().collect();
        if distinct.len() != self.n_way || self.support.len() != self.n_way || self.queries.len() != self.n_way {
            return Err(Error::InvariantViolation("episode does not have N distinct relations".into()));
        }
        let mut ids = BTreeSet::new();
        for r in 0..self.n_way {
            if self.support[r].len() != self.k_shot || self.queries[r].len() != self.q_query {
                return Err(Error::InvariantViolation(format!("relation {r} has wrong K or Q")));
            }
            for inst in self.support[r].iter().chain(&self.queries[r]) {
                if inst.relation != self.relations[r] {
                    return Err(Error::InvariantViolation(format!("{} filed under the wrong relation", inst.id)));
                }
                if !ids.insert(inst.id.clone()) {
                    return Err(Error::InvariantViolation(format!("instance {} used twice", inst.id)));
                }
            }
        }
        Ok(())
    }
}

/// Draw an episode using an existing RNG stream.
pub fn sample_episode_with(pool: &RelationPool, n: usize, k: usize, q: usize, rng: &mut ChaCha8Rng) -> Result<Episode> {
    if n == 0 || k == 0 {
        return Err(Error::EpisodeInfeasible(format!("N = {n}, K = {k} must be positive")));
    }
    let eligible: Vec<&String> = pool.iter().filter(|(_, v)| v.len() >= k + q).map(|(r, _)| r).collect();
    if eligible.len() < n {
        return Err(Error::EpisodeInfeasible(format!(
            "{} relations have at least K+Q = {} instances, need N = {n}",
            eligible.len(),
            k + q
        )));
    }
    let chosen: Vec<String> = rand::seq::index::sample(rng, eligible.len(), n)
        .into_iter()
        .map(|i| eligible[i].clone())
        .collect();
    let mut support = Vec::with_capacity(n);
    let mut queries = Vec::with_capacity(n);
    for r in &chosen {
        let insts = &pool[r];
        let picks = rand::seq::index::sample(rng, insts.len(), k + q).into_vec();
        support.push(picks[..k].iter().map(|&i| insts[i].clone()).collect());
        queries.push(picks[k..].iter().map(|&i| insts[i].clone()).collect());
    }
    Ok(Episode {
        relations: chosen,
        support,
        queries,
        n_way: n,
        k_shot: k,
        q_query: q,
    })
}

pub fn sample_episode(pool: &RelationPool, n: usize, k: usize, q: usize, seed: u64) -> Result<Episode> {
    sample_episode_with(pool, n, k, q, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub fn synthetic_pool(relations: usize, per: usize) -> RelationPool {
        let mut pool = RelationPool::new();
        for r in 0..relations {
            let label = format!("r{:02}", r + 1);
            let insts = (0..per)
                .map(|i| RcInstance {
                    id: format!("{label}-{i}"),
                    tokens: vec!["a".into(), "x".into(), "b".into()],
                    head_span: TokenSpan::new(0, 1),
                    tail_span: TokenSpan::new(2, 3),
                    relation: label.clone(),
                })
                .collect();
            pool.insert(label, insts);
        }
        pool
    }

    const TEXT: &str = "Steam curing led to lower porosity. Cement contains clinker.";

    #[test]
    fn brat_import_builds_rc_and_ner() {
        let ann = "T1\tEntity 0 12\tSteam curing\nT2\tEntity 20 34\tlower porosity\nR1\tlead_to Arg1:T1 Arg2:T2\n";
        let doc = import_brat_str("d", TEXT, ann, &SentenceSplitter::default()).unwrap();
        assert_eq!(doc.rc.len(), 1);
        let rc = &doc.rc[0];
        assert_eq!(rc.relation, "lead_to");
        assert_eq!(rc.head_text(), "Steam curing");
        assert_eq!(rc.tail_text(), "lower porosity");
        assert_eq!(doc.ner.len(), 1);
        let ner = &doc.ner[0];
        assert_eq!(ner.labels, vec![Tag::B, Tag::I, Tag::O, Tag::O, Tag::B, Tag::I, Tag::O]);
        ner.validate().unwrap();
        assert_eq!(rc.relation_context(), "HEAD led to TAIL");
    }

    #[test]
    fn brat_errors() {
        let s = SentenceSplitter::default();
        assert_eq!(import_brat_str("d", TEXT, "", &s).unwrap(), BratDocument::default());
        let mismatch = "T1\tEntity 0 12\tSteam Curing\n";
        assert!(matches!(import_brat_str("d", TEXT, mismatch, &s), Err(Error::OffsetError(_))));
        let outside = "T1\tEntity 0 999\tx\n";
        assert!(matches!(import_brat_str("d", TEXT, outside, &s), Err(Error::OffsetError(_))));
        let dangling = "T1\tEntity 0 12\tSteam curing\nR1\tlead_to Arg1:T1 Arg2:T9\n";
        assert!(matches!(import_brat_str("d", TEXT, dangling, &s), Err(Error::DanglingRef(_))));
    }

    #[test]
    fn brat_from_directories() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.txt"), TEXT).unwrap();
        std::fs::write(
            dir.path().join("a.ann"),
            "T1\tE 36 42\tCement\nT2\tE 52 59\tclinker\nR1\tinclude Arg1:T1 Arg2:T2\n",
        )
        .unwrap();
        let doc = import_brat_dirs(dir.path(), dir.path()).unwrap();
        assert_eq!(doc.rc[0].relation, "include");
        assert_eq!(doc.rc[0].tail_text(), "clinker");
        assert_eq!(doc.ner[0].id, "a:s1");
    }

    #[test]
    fn diff_reports_changes() {
        let pool = synthetic_pool(1, 3);
        let before = pool["r01"].clone();
        let mut after = before.clone();
        after.remove(0);
        after[0].relation = "other".into();
        let d = diff_rc(&before, &after);
        assert_eq!(d.removed, vec!["r01-0"]);
        assert_eq!(d.changed, vec!["r01-1"]);
        assert!(d.added.is_empty());
    }

    fn rc_with_head(words: &[&str], head: TokenSpan) -> RcInstance {
        RcInstance {
            id: "x".into(),
            tokens: words.iter().map(|s| s.to_string()).collect(),
            head_span: head,
            tail_span: TokenSpan::new(words.len() - 1, words.len()),
            relation: "r".into(),
        }
    }

    #[test]
    fn lint_rules() {
        let coord = rc_with_head(&["cement", "and", "clinker", "form", "paste"], TokenSpan::new(0, 3));
        let w = lint_annotations(&[coord], &[], 8);
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].kind, LintKind::CoordinateEntity);
        assert_eq!(w[0].text, "cement and clinker");

        let clean = rc_with_head(&["clinker", "forms", "paste"], TokenSpan::new(0, 1));
        assert!(lint_annotations(&[clean], &[], 8).is_empty());

        let words = ["a", "b", "c", "d", "e", "f", "g", "h", "i", "x", "y"];
        let long = rc_with_head(&words, TokenSpan::new(0, 9));
        let w = lint_annotations(&[long], &[], 8);
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].kind, LintKind::TooLong);
    }

    #[test]
    fn rc_split_sizes() {
        let pool = synthetic_pool(29, 50);
        let (rel, inst) = split_rc(&pool, 7, &RcSplitConfig::default()).unwrap();
        assert_eq!(inst.sizes(), (900, 250, 300));
        let (rel2, _) = split_rc(&pool, 7, &RcSplitConfig::default()).unwrap();
        assert_eq!(rel, rel2);
        let a: BTreeSet<_> = rel.train.iter().collect();
        let b: BTreeSet<_> = rel.validation.iter().collect();
        let c: BTreeSet<_> = rel.test.iter().collect();
        assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));
        assert_eq!(a.len() + b.len() + c.len(), 29);

        assert!(matches!(
            split_rc(&synthetic_pool(28, 50), 7, &RcSplitConfig::default()),
            Err(Error::SplitError(_))
        ));
        assert!(matches!(
            split_rc(&synthetic_pool(29, 49), 7, &RcSplitConfig::default()),
            Err(Error::SplitError(_))
        ));
    }

    fn ner(n: usize) -> Vec<NerInstance> {
        (0..n)
            .map(|i| NerInstance {
                id: format!("n{i}"),
                tokens: vec!["x".into()],
                labels: vec![Tag::O],
                head_span: None,
                tail_span: None,
            })
            .collect()
    }

    #[test]
    fn ner_split_sizes() {
        let s = split_ner(&ner(2000), 1, &NerSplitConfig::default()).unwrap();
        assert_eq!(s.sizes(), (1600, 400, 0));
        let cfg = NerSplitConfig {
            expected: None,
            train_ratio: 0.8,
        };
        let s = split_ner(&ner(10), 1, &cfg).unwrap();
        assert_eq!(s.sizes(), (8, 2, 0));
        let ids: BTreeSet<_> = s.train.iter().chain(&s.validation).map(|i| i.id.clone()).collect();
        assert_eq!(ids.len(), 10);
        assert!(matches!(split_ner(&ner(10), 1, &NerSplitConfig::default()), Err(Error::SplitError(_))));
    }

    #[test]
    fn rotation_folds() {
        let rels: Vec<String> = (1..=29).map(|i| format!("r{i}")).collect();
        let f1 = rotate_folds(&rels, 1, [18, 5, 6]).unwrap();
        assert_eq!(f1.train, rels[..18].to_vec());
        let f2 = rotate_folds(&rels, 2, [18, 5, 6]).unwrap();
        let expected: Vec<String> = (26..=29).chain(1..=25).map(|i| format!("r{i}")).collect();
        let got: Vec<String> = f2.train.iter().chain(&f2.validation).chain(&f2.test).cloned().collect();
        assert_eq!(got, expected);
        assert_eq!(f2.train.len(), 18);
        assert_eq!(f2.validation, expected[18..23].to_vec());
        assert!(matches!(rotate_folds(&rels, 0, [18, 5, 6]), Err(Error::InvalidFold(0))));
        assert!(matches!(rotate_folds(&rels, 6, [18, 5, 6]), Err(Error::InvalidFold(6))));
    }

    #[test]
    fn episodes() {
        let pool = synthetic_pool(29, 50);
        let e = sample_episode(&pool, 5, 1, 1, 3).unwrap();
        assert_eq!(e.support.iter().flatten().count(), 5);
        assert_eq!(e.queries.iter().flatten().count(), 5);
        e.check().unwrap();
        let e = sample_episode(&pool, 29, 1, 1, 3).unwrap();
        e.check().unwrap();
        assert!(matches!(sample_episode(&pool, 5, 50, 1, 3), Err(Error::EpisodeInfeasible(_))));
        assert!(matches!(sample_episode(&pool, 30, 1, 1, 3), Err(Error::EpisodeInfeasible(_))));
        assert_eq!(sample_episode(&pool, 5, 2, 3, 9).unwrap(), sample_episode(&pool, 5, 2, 3, 9).unwrap());
    }

    #[test]
    fn bio_helpers() {
        assert!(validate_bio(&[Tag::I]).is_err());
        assert!(validate_bio(&[Tag::O, Tag::I]).is_err());
        assert!(validate_bio(&[Tag::B, Tag::I, Tag::O, Tag::B]).is_ok());
        assert_eq!(
            entity_spans(&[Tag::B, Tag::I, Tag::O, Tag::I, Tag::B]),
            vec![TokenSpan::new(0, 2), TokenSpan::new(4, 5)]
        );
    }
}
