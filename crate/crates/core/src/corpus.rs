//! Abstract ingestion: inverted-index decompression, text cleaning, sentence
//! segmentation and tokenization.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

/// One cleaned abstract with its bibliographic attributes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbstractRecord {
    pub id: String,
    pub title: String,
    pub journal: String,
    pub for_code: String,
    pub year: i32,
    pub text: String,
}

/// Raw abstract as distributed by academic-graph dumps: text stored as an inverted index.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InvertedAbstract {
    pub id: String,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub journal: String,
    #[serde(default)]
    pub for_code: String,
    pub year: i32,
    pub index_length: usize,
    pub inverted_index: BTreeMap<String, Vec<usize>>,
}

/// A token with its character (code point) offsets in the sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub abstract_id: String,
    pub index: usize,
    pub text: String,
    pub tokens: Vec<Token>,
}

impl SentenceRecord {
    pub fn new(abstract_id: impl Into<String>, index: usize, text: impl Into<String>) -> Self {
        let text = text.into();
        let tokens = tokenize(&text);
        Self {
            abstract_id: abstract_id.into(),
            index,
            text,
            tokens,
        }
    }

    pub fn token_texts(&self) -> Vec<String> {
        self.tokens.iter().map(|t| t.text.clone()).collect()
    }
}

/// Rebuild abstract text from its inverted index.
pub fn reconstruct_abstract(
    index_length: usize,
    inverted_index: &BTreeMap<String, Vec<usize>>,
) -> Result<String> {
    let mut slots: Vec<Option<&str>> = vec![None; index_length];
    for (token, positions) in inverted_index {
        for &p in positions {
            let slot = slots.get_mut(p).ok_or(Error::PositionOutOfRange {
                position: p,
                length: index_length,
            })?;
            if slot.is_some() {
                return Err(Error::DuplicatePosition(p));
            }
            *slot = Some(token);
        }
    }
    let mut words = Vec::with_capacity(index_length);
    for (i, slot) in slots.into_iter().enumerate() {
        words.push(slot.ok_or(Error::MissingPosition(i))?);
    }
    Ok(words.join(" "))
}

/// Inverse of [`reconstruct_abstract`] for whitespace-tokenized text.
pub fn invert_text(text: &str) -> (usize, BTreeMap<String, Vec<usize>>) {
    let mut index: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    let mut n = 0;
    for (i, word) in text.split_whitespace().enumerate() {
        index.entry(word.to_string()).or_default().push(i);
        n = i + 1;
    }
    (n, index)
}

fn is_escape_char(c: char) -> bool {
    matches!(c, 'n' | 't' | 'r' | '\\' | '"' | '\'')
}

/// Normalize (NFC) and clean raw abstract text.
///
/// Escape sequences and control characters become spaces, runs of an identical
/// punctuation mark collapse to one, whitespace collapses, and the result is trimmed.
pub fn clean_text(raw: &str) -> String {
    let normalized: Vec<char> = raw.nfc().collect();

    let mut unescaped = String::with_capacity(normalized.len());
    let mut i = 0;
    while i < normalized.len() {
        let c = normalized[i];
        if c == '\\' && normalized.get(i + 1).is_some_and(|&n| is_escape_char(n)) {
            unescaped.push(' ');
            i += 2;
            continue;
        }
        if c.is_control() {
            unescaped.push(' ');
        } else {
            unescaped.push(c);
        }
        i += 1;
    }

    let mut out = String::with_capacity(unescaped.len());
    let mut prev: Option<char> = None;
    for c in unescaped.chars() {
        if c.is_whitespace() {
            if prev != Some(' ') {
                out.push(' ');
            }
            prev = Some(' ');
            continue;
        }
        if is_punctuation(c) && prev == Some(c) {
            continue;
        }
        out.push(c);
        prev = Some(c);
    }
    out.trim().to_string()
}

fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation() || matches!(c, '…' | '–' | '—' | '‘' | '’' | '“' | '”' | '·')
}

/// A sentence located in its source text by character offsets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentenceSpan {
    pub start: usize,
    pub end: usize,
    pub text: String,
}

/// Rule-based sentence splitter with an abbreviation stop-list.
#[derive(Debug, Clone)]
pub struct SentenceSplitter {
    abbreviations: HashSet<String>,
}

const DEFAULT_ABBREVIATIONS: &str = include_str!("../data/abbreviations.txt");

impl Default for SentenceSplitter {
    fn default() -> Self {
        Self::from_list(DEFAULT_ABBREVIATIONS)
    }
}

impl SentenceSplitter {
    /// Parse a stop-list: one abbreviation per line, `#` comments allowed.
    pub fn from_list(list: &str) -> Self {
        let mut s = Self {
            abbreviations: HashSet::new(),
        };
        s.extend_from_list(list);
        s
    }

    pub fn extend_from_list(&mut self, list: &str) {
        for line in list.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            // multi-word entries such as "et al." are matched on their last word
            if let Some(last) = line.split_whitespace().last() {
                self.abbreviations.insert(last.to_lowercase());
            }
        }
    }

    pub fn load_extra(&mut self, path: &Path) -> Result<()> {
        let list = std::fs::read_to_string(path)?;
        self.extend_from_list(&list);
        Ok(())
    }

    pub fn split(&self, text: &str) -> Vec<String> {
        self.split_spans(text).into_iter().map(|s| s.text).collect()
    }

    /// Split at `.`, `?` or `!` followed by whitespace and an uppercase letter or digit.
    pub fn split_spans(&self, text: &str) -> Vec<SentenceSpan> {
        let chars: Vec<char> = text.chars().collect();
        let mut spans = Vec::new();
        let mut start = 0;
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            if matches!(c, '.' | '?' | '!') && self.is_boundary(&chars, i) {
                push_span(&chars, start, i + 1, &mut spans);
                let mut j = i + 1;
                while j < chars.len() && chars[j].is_whitespace() {
                    j += 1;
                }
                start = j;
                i = j;
                continue;
            }
            i += 1;
        }
        push_span(&chars, start, chars.len(), &mut spans);
        spans
    }

    fn is_boundary(&self, chars: &[char], i: usize) -> bool {
        let mut j = i + 1;
        if j >= chars.len() || !chars[j].is_whitespace() {
            return false;
        }
        while j < chars.len() && chars[j].is_whitespace() {
            j += 1;
        }
        match chars.get(j) {
            Some(n) if n.is_uppercase() || n.is_ascii_digit() => {}
            _ => return false,
        }
        if chars[i] != '.' {
            return true;
        }
        let mut w = i;
        while w > 0 && !chars[w - 1].is_whitespace() {
            w -= 1;
        }
        let word: String = chars[w..=i].iter().collect::<String>().to_lowercase();
        !self.abbreviations.contains(&word)
    }
}

fn push_span(chars: &[char], start: usize, end: usize, spans: &mut Vec<SentenceSpan>) {
    if start >= end {
        return;
    }
    let text: String = chars[start..end].iter().collect();
    if text.trim().is_empty() {
        return;
    }
    spans.push(SentenceSpan { start, end, text });
}

/// Split with the default abbreviation list.
pub fn split_sentences(text: &str) -> Vec<String> {
    SentenceSplitter::default().split(text)
}

/// Whitespace tokenization with leading and trailing punctuation detached.
pub fn tokenize(sentence: &str) -> Vec<Token> {
    let chars: Vec<char> = sentence.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        while i < chars.len() && !chars[i].is_whitespace() {
            i += 1;
        }
        split_word(&chars, start, i, &mut tokens);
    }
    tokens
}

fn split_word(chars: &[char], start: usize, end: usize, tokens: &mut Vec<Token>) {
    let mut lo = start;
    let mut hi = end;
    while lo < hi && is_punctuation(chars[lo]) {
        tokens.push(make_token(chars, lo, lo + 1));
        lo += 1;
    }
    let mut trailing = Vec::new();
    while hi > lo && is_punctuation(chars[hi - 1]) {
        trailing.push(make_token(chars, hi - 1, hi));
        hi -= 1;
    }
    if lo < hi {
        tokens.push(make_token(chars, lo, hi));
    }
    tokens.extend(trailing.into_iter().rev());
}

fn make_token(chars: &[char], start: usize, end: usize) -> Token {
    Token {
        text: chars[start..end].iter().collect(),
        start,
        end,
    }
}

/// Substring of `text` by character offsets.
pub fn char_slice(text: &str, start: usize, end: usize) -> String {
    text.chars().skip(start).take(end.saturating_sub(start)).collect()
}

/// Segment and tokenize every abstract of a corpus.
pub fn sentences_of(record: &AbstractRecord, splitter: &SentenceSplitter) -> Vec<SentenceRecord> {
    splitter
        .split(&record.text)
        .into_iter()
        .enumerate()
        .map(|(i, s)| SentenceRecord::new(record.id.clone(), i, s))
        .collect()
}

fn current_year() -> i32 {
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    1970 + (secs as f64 / (365.2425 * 86_400.0)) as i32
}

impl AbstractRecord {
    /// Clean the text and check the record invariants.
    pub fn cleaned(mut self) -> Result<Self> {
        self.text = clean_text(&self.text);
        self.title = clean_text(&self.title);
        if self.text.is_empty() {
            return Err(Error::InvariantViolation(format!(
                "abstract {} is empty after cleaning",
                self.id
            )));
        }
        if !(1900..=current_year()).contains(&self.year) {
            return Err(Error::InvariantViolation(format!(
                "abstract {} has year {} outside [1900, {}]",
                self.id,
                self.year,
                current_year()
            )));
        }
        Ok(self)
    }
}

impl InvertedAbstract {
    pub fn into_record(self) -> Result<AbstractRecord> {
        let text = reconstruct_abstract(self.index_length, &self.inverted_index)?;
        AbstractRecord {
            id: self.id,
            title: self.title,
            journal: self.journal,
            for_code: self.for_code,
            year: self.year,
            text,
        }
        .cleaned()
    }
}

/// Input layout accepted by [`ingest`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputFormat {
    Jsonl,
    Inverted,
}

/// Outcome of an ingestion run.
#[derive(Debug, Default, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub records: usize,
    pub skipped: usize,
}

/// Read, clean and validate abstracts; records failing validation are skipped and counted.
pub fn ingest(path: &Path, format: InputFormat) -> Result<(Vec<AbstractRecord>, IngestReport)> {
    let reader = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    let mut report = IngestReport::default();
    let mut seen = HashSet::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |e: serde_json::Error| Error::Parse {
            path: path.display().to_string(),
            line: lineno + 1,
            message: e.to_string(),
        };
        let record = match format {
            InputFormat::Jsonl => serde_json::from_str::<AbstractRecord>(&line)
                .map_err(parse_err)?
                .cleaned(),
            InputFormat::Inverted => serde_json::from_str::<InvertedAbstract>(&line)
                .map_err(parse_err)?
                .into_record(),
        };
        match record {
            Ok(r) if seen.insert(r.id.clone()) => out.push(r),
            Ok(r) => {
                log::warn!("duplicate abstract id {} skipped", r.id);
                report.skipped += 1;
            }
            Err(e) => {
                log::warn!("line {}: {e}", lineno + 1);
                report.skipped += 1;
            }
        }
    }
    report.records = out.len();
    Ok((out, report))
}

pub fn read_corpus(path: &Path) -> Result<Vec<AbstractRecord>> {
    crate::io::read_jsonl(path)
}

pub fn write_corpus(path: &Path, records: &[AbstractRecord]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
