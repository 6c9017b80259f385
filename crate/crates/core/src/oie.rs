//! Shallow open-IE pre-extraction: NP + verb group + NP patterns over a small
//! part-of-speech lexicon, best-candidate selection, and import of external
//! extractor output.

use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, SentenceRecord};
use crate::error::{Error, Result};

/// Half-open token range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TokenSpan {
    pub start: usize,
    pub end: usize,
}

impl TokenSpan {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn overlaps(&self, other: &TokenSpan) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn surface(&self, tokens: &[String]) -> String {
        tokens[self.start..self.end].join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SentenceRef {
    pub abstract_id: String,
    pub sentence: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateTriple {
    pub sentence_ref: SentenceRef,
    pub head: TokenSpan,
    pub relation_phrase: TokenSpan,
    pub tail: TokenSpan,
    pub head_text: String,
    pub relation_text: String,
    pub tail_text: String,
    pub confidence: f64,
}

impl CandidateTriple {
    /// Checks span bounds, head/tail disjointness and the confidence range.
    pub fn validate(&self, n_tokens: usize) -> Result<()> {
        let spans = [self.head, self.relation_phrase, self.tail];
        if spans.iter().any(|s| s.is_empty() || s.end > n_tokens) {
            return Err(Error::InvariantViolation("span outside sentence".into()));
        }
        if self.head.overlaps(&self.tail) {
            return Err(Error::InvariantViolation("head and tail overlap".into()));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::InvariantViolation(format!(
                "confidence {} outside [0, 1]",
                self.confidence
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Pos {
    Noun,
    Num,
    Det,
    Prep,
    Conj,
    Pron,
    Aux,
    Verb,
    Adv,
    Punct,
}

const DETERMINERS: &[&str] = &[
    "a", "an", "the", "this", "that", "these", "those", "each", "every", "some", "any", "no",
    "its", "their", "our", "his", "her", "such", "both", "all", "several", "many", "most",
];
const PREPOSITIONS: &[&str] = &[
    "of", "in", "on", "at", "by", "for", "with", "from", "to", "into", "onto", "over", "under",
    "between", "among", "through", "during", "within", "without", "via", "as", "than", "about",
    "against", "after", "before", "upon", "towards", "toward", "across", "per",
];
const CONJUNCTIONS: &[&str] = &["and", "or", "but", "nor", "while", "whereas", "because", "if", "which", "who", "whom", "whose", "where", "when"];
const PRONOUNS: &[&str] = &["it", "they", "we", "i", "you", "he", "she", "them", "us", "there"];
const AUXILIARIES: &[&str] = &[
    "is", "are", "was", "were", "be", "been", "being", "has", "have", "had", "do", "does",
    "did", "can", "could", "may", "might", "must", "shall", "should", "will", "would",
];
const ADVERBS: &[&str] = &["not", "also", "then", "thus", "often", "further", "still", "very", "more", "less"];

/// Base forms; regular inflections (-s, -es, -ed, -d, -ing) are derived.
const VERBS: &[&str] = &[
    "lead", "result", "include", "contain", "make", "use", "improve", "increase", "reduce",
    "decrease", "cause", "affect", "enhance", "require", "provide", "produce", "show",
    "consist", "compose", "form", "cure", "develop", "propose", "present", "investigate",
    "examine", "evaluate", "study", "apply", "adopt", "consider", "offer", "identify",
    "influence", "determine", "indicate", "reveal", "achieve", "obtain", "support", "prevent",
    "promote", "mitigate", "generate", "exhibit", "yield", "relate", "depend", "involve",
    "compare", "measure", "replace", "serve", "help", "allow", "enable", "exceed", "raise", "control", "design", "assess", "analyze", "analyse", "describe", "demonstrate",
];
const IRREGULAR_VERBS: &[&str] = &[
    "led", "made", "shown", "found", "given", "gave", "took", "taken", "built", "brought",
    "grew", "grown", "became", "become", "becomes", "held", "kept", "left", "lost", "met",
    "paid", "put", "ran", "saw", "seen", "sent", "set", "won", "chosen", "known",
];

fn is_verb(w: &str) -> bool {
    if IRREGULAR_VERBS.contains(&w) {
        return true;
    }
    VERBS.iter().any(|&b| {
        let stem_e = b.strip_suffix('e');
        w == b
            || w == format!("{b}s")
            || w == format!("{b}es")
            || w == format!("{b}ed")
            || w == format!("{b}d") && b.ends_with('e')
            || stem_e.is_some_and(|s| w == format!("{s}ing"))
            || w == format!("{b}ing")
            || b.ends_with('y') && {
                let s = &b[..b.len() - 1];
                w == format!("{s}ies") || w == format!("{s}ied")
            }
    })
}

fn tag_tokens(tokens: &[String]) -> Vec<Pos> {
    let mut tags = Vec::with_capacity(tokens.len());
    for (i, tok) in tokens.iter().enumerate() {
        let w = tok.to_lowercase();
        let prev = if i > 0 { Some(tags[i - 1]) } else { None };
        let tag = if tok.chars().all(|c| c.is_ascii_punctuation()) {
            Pos::Punct
        } else if w.chars().all(|c| c.is_ascii_digit() || c == '.' || c == '%') {
            Pos::Num
        } else if DETERMINERS.contains(&w.as_str()) {
            Pos::Det
        } else if PREPOSITIONS.contains(&w.as_str()) {
            Pos::Prep
        } else if CONJUNCTIONS.contains(&w.as_str()) {
            Pos::Conj
        } else if PRONOUNS.contains(&w.as_str()) {
            Pos::Pron
        } else if AUXILIARIES.contains(&w.as_str()) {
            Pos::Aux
        } else if ADVERBS.contains(&w.as_str()) || (w.len() > 4 && w.ends_with("ly")) {
            Pos::Adv
        } else if w.ends_with("ing") && prev != Some(Pos::Aux) {
            // gerunds read as nouns ("steam curing") unless progressive
            Pos::Noun
        } else if (is_verb(&w) || (w.len() > 4 && w.ends_with("ed"))) && prev != Some(Pos::Det) {
            Pos::Verb
        } else {
            Pos::Noun
        };
        tags.push(tag);
    }
    tags
}

/// Maximal runs of noun-like tokens.
fn np_chunks(tags: &[Pos]) -> Vec<TokenSpan> {
    let mut chunks = Vec::new();
    let mut i = 0;
    while i < tags.len() {
        if matches!(tags[i], Pos::Noun | Pos::Num) {
            let s = i;
            while i < tags.len() && matches!(tags[i], Pos::Noun | Pos::Num) {
                i += 1;
            }
            chunks.push(TokenSpan::new(s, i));
        } else {
            i += 1;
        }
    }
    chunks
}

/// Verb group `Aux* Adv* Verb (Verb|Adv)* Prep?` spanning exactly the gap between two chunks.
fn verb_group(tags: &[Pos], gap: TokenSpan) -> bool {
    let g = &tags[gap.start..gap.end];
    if g.is_empty() {
        return false;
    }
    let mut i = 0;
    while i < g.len() && g[i] == Pos::Aux {
        i += 1;
    }
    while i < g.len() && g[i] == Pos::Adv {
        i += 1;
    }
    let had_aux = i > 0 && g[..i].contains(&Pos::Aux);
    if i < g.len() && g[i] == Pos::Verb {
        i += 1;
        while i < g.len() && matches!(g[i], Pos::Verb | Pos::Adv) {
            i += 1;
        }
    } else if !had_aux {
        return false;
    }
    // optional determiner after the particle is skipped by the caller
    if i < g.len() && g[i] == Pos::Prep {
        i += 1;
    }
    i == g.len()
}

/// Confidence of a match: logistic in chunk lengths and relation length.
///
/// `sigmoid(1.5 - 0.3*(|head|-1) - 0.3*(|tail|-1) - 0.4*(|rel|-1))`. This is an
/// implementation-defined score, not a learned model.
pub fn pattern_confidence(head_len: usize, rel_len: usize, tail_len: usize) -> f64 {
    let z = 1.5
        - 0.3 * (head_len as f64 - 1.0)
        - 0.3 * (tail_len as f64 - 1.0)
        - 0.4 * (rel_len as f64 - 1.0);
    1.0 / (1.0 + (-z).exp())
}

/// Candidate triples from every NP + verb-group + NP match in a sentence.
pub fn extract_candidates(sentence: &SentenceRecord) -> Vec<CandidateTriple> {
    let tokens = sentence.token_texts();
    let tags = tag_tokens(&tokens);
    let chunks = np_chunks(&tags);
    let mut out = Vec::new();
    for (a, head) in chunks.iter().enumerate() {
        let Some(next) = chunks.get(a + 1) else { break };
        // determiners between the verb group and the tail chunk are dropped
        let mut gap_end = next.start;
        while gap_end > head.end && tags[gap_end - 1] == Pos::Det {
            gap_end -= 1;
        }
        let gap = TokenSpan::new(head.end, gap_end);
        if !verb_group(&tags, gap) {
            continue;
        }
        out.push(CandidateTriple {
            sentence_ref: SentenceRef {
                abstract_id: sentence.abstract_id.clone(),
                sentence: sentence.index,
            },
            head: *head,
            relation_phrase: gap,
            tail: *next,
            head_text: head.surface(&tokens),
            relation_text: gap.surface(&tokens),
            tail_text: next.surface(&tokens),
            confidence: pattern_confidence(head.len(), gap.len(), next.len()),
        });
    }
    out
}

/// Highest-confidence candidate; ties go to the earliest head, then earliest tail.
pub fn select_best(candidates: &[CandidateTriple]) -> Result<Option<CandidateTriple>> {
    let Some(first) = candidates.first() else {
        return Ok(None);
    };
    if candidates.iter().any(|c| c.sentence_ref != first.sentence_ref) {
        return Err(Error::InvariantViolation(
            "select_best over candidates from different sentences".into(),
        ));
    }
    let best = candidates.iter().fold(first, |best, c| {
        let better = c.confidence > best.confidence
            || c.confidence == best.confidence
                && (c.head.start, c.tail.start) < (best.head.start, best.tail.start);
        if better {
            c
        } else {
            best
        }
    });
    Ok(Some(best.clone()))
}

/// Result of importing external extractor output.
#[derive(Debug, Clone, Default)]
pub struct ImportReport {
    pub candidates: Vec<CandidateTriple>,
    pub warnings: usize,
}

fn find_span(tokens: &[String], phrase: &str, avoid: Option<TokenSpan>) -> Option<TokenSpan> {
    let needle: Vec<String> = tokenize(phrase).into_iter().map(|t| t.text).collect();
    if needle.is_empty() || needle.len() > tokens.len() {
        return None;
    }
    (0..=tokens.len() - needle.len())
        .map(|s| TokenSpan::new(s, s + needle.len()))
        .filter(|sp| avoid.is_none_or(|a| !a.overlaps(sp)))
        .find(|sp| tokens[sp.start..sp.end] == needle[..])
}

/// Parse TSV lines `confidence \t head \t relation \t tail \t sentence`.
///
/// Spans are resolved by token-sequence match in the sentence; rows whose
/// spans cannot be found are skipped and counted as warnings.
pub fn import_external(path: &Path) -> Result<ImportReport> {
    let reader = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut report = ImportReport::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let perr = |message: String| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(perr(format!("expected 5 tab-separated fields, got {}", fields.len())));
        }
        let confidence: f64 = fields[0]
            .trim()
            .parse()
            .map_err(|_| perr(format!("bad confidence {:?}", fields[0])))?;
        if !(0.0..=1.0).contains(&confidence) {
            return Err(perr(format!("confidence {confidence} outside [0, 1]")));
        }
        let sentence = SentenceRecord::new("external", i, fields[4].trim());
        let tokens = sentence.token_texts();
        let head = find_span(&tokens, fields[1], None);
        let tail = head.and_then(|h| find_span(&tokens, fields[3], Some(h)));
        let rel = match (head, tail) {
            (Some(h), Some(t)) => find_span(&tokens, fields[2], Some(h))
                .filter(|r| !r.overlaps(&t))
                .map(|r| (h, r, t)),
            _ => None,
        };
        let Some((head, relation_phrase, tail)) = rel else {
            log::warn!("{}:{}: could not resolve spans, skipped", path.display(), i + 1);
            report.warnings += 1;
            continue;
        };
        report.candidates.push(CandidateTriple {
            sentence_ref: sentence_ref_for(i),
            head,
            relation_phrase,
            tail,
            head_text: head.surface(&tokens),
            relation_text: relation_phrase.surface(&tokens),
            tail_text: tail.surface(&tokens),
            confidence,
        });
    }
    Ok(report)
}

fn sentence_ref_for(line: usize) -> SentenceRef {
    SentenceRef {
        abstract_id: "external".into(),
        sentence: line,
    }
}
