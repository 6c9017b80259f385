//! Encoder providers: pluggable text -> vector maps.
//!
//! Sentence-level providers ([`EncoderProvider`]) feed schema induction and the
//! default pair scorer; token-level encoders ([`TokenEncoder`]) feed the CRF.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const DEFAULT_DIM: usize = 768;
pub const DEFAULT_MAX_TOKENS: usize = 128;

/// Maps a (whitespace-normalized) text to a fixed-dimension vector.
pub trait EncoderProvider: Send + Sync {
    fn id(&self) -> String;
    fn dim(&self) -> usize;
    fn max_tokens(&self) -> usize {
        DEFAULT_MAX_TOKENS
    }
    fn encode(&self, text: &str) -> Result<Vec<f64>>;
}

impl<P: EncoderProvider + ?Sized> EncoderProvider for Arc<P> {
    fn id(&self) -> String {
        (**self).id()
    }
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn max_tokens(&self) -> usize {
        (**self).max_tokens()
    }
    fn encode(&self, text: &str) -> Result<Vec<f64>> {
        (**self).encode(text)
    }
}

/// Embeddings plus the number of inputs that were truncated to the provider limit.
#[derive(Debug, Clone)]
pub struct Embedded<T> {
    pub vectors: Vec<Vec<T>>,
    pub truncated: usize,
}

/// Encode each text; inputs longer than the provider's token limit are cut.
pub fn embed<T: Scalar, P: EncoderProvider + ?Sized>(
    texts: &[String],
    provider: &P,
) -> Result<Embedded<T>> {
    let limit = provider.max_tokens();
    let mut truncated = 0;
    let mut vectors = Vec::with_capacity(texts.len());
    for text in texts {
        let words: Vec<&str> = text.split_whitespace().collect();
        if words.len() > limit {
            truncated += 1;
        }
        let joined = words[..words.len().min(limit)].join(" ");
        let v = provider.encode(&joined)?;
        if v.len() != provider.dim() {
            return Err(Error::DimensionMismatch {
                expected: provider.dim(),
                actual: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::EncoderUnavailable(format!(
                "provider {} returned a non-finite vector",
                provider.id()
            )));
        }
        vectors.push(v.into_iter().map(T::of).collect());
    }
    if truncated > 0 {
        log::warn!("{truncated} input(s) truncated to {limit} tokens");
    }
    Ok(Embedded { vectors, truncated })
}

/// 64-bit FNV-1a; stable across platforms and releases.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn add_hashed(v: &mut [f64], feature: &str, weight: f64) {
    let h = fnv1a(feature.as_bytes());
    let idx = (h % v.len() as u64) as usize;
    let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
    v[idx] += sign * weight;
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Signed feature hashing of lower-cased tokens, unit-normalized.
///
/// Token order is ignored, so "a b" and "b a" share a vector.
#[derive(Debug, Clone)]
pub struct HashedProvider {
    pub dim: usize,
    pub max_tokens: usize,
}

impl Default for HashedProvider {
    fn default() -> Self {
        Self {
            dim: DEFAULT_DIM,
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }
}

impl HashedProvider {
    pub fn with_dim(dim: usize) -> Self {
        Self {
            dim,
            ..Self::default()
        }
    }
}

impl EncoderProvider for HashedProvider {
    fn id(&self) -> String {
        format!("hashed-d{}", self.dim)
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn max_tokens(&self) -> usize {
        self.max_tokens
    }
    fn encode(&self, text: &str) -> Result<Vec<f64>> {
        if self.dim == 0 {
            return Err(Error::EncoderUnavailable("hashed provider with d = 0".into()));
        }
        let mut v = vec![0.0; self.dim];
        for w in text.split_whitespace() {
            add_hashed(&mut v, &w.to_lowercase(), 1.0);
        }
        normalize(&mut v);
        Ok(v)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TableRow {
    text: String,
    vector: Vec<f64>,
}

/// Precomputed text -> vector table, e.g. exported from an offline sentence encoder.
#[derive(Debug, Clone)]
pub struct TableProvider {
    id: String,
    dim: usize,
    table: HashMap<String, Vec<f64>>,
}

fn key(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

impl TableProvider {
    pub fn new(id: impl Into<String>, entries: impl IntoIterator<Item = (String, Vec<f64>)>) -> Result<Self> {
        let mut table = HashMap::new();
        let mut dim = None;
        for (text, vector) in entries {
            match dim {
                None => dim = Some(vector.len()),
                Some(d) if d != vector.len() => {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        actual: vector.len(),
                    })
                }
                _ => {}
            }
            table.insert(key(&text), vector);
        }
        Ok(Self {
            id: id.into(),
            dim: dim.unwrap_or(0),
            table,
        })
    }

    /// Load JSONL rows of `{"text": ..., "vector": [...]}`.
    pub fn load(path: &Path) -> Result<Self> {
        let rows: Vec<TableRow> = crate::io::read_jsonl(path)?;
        Self::new(
            format!("table:{}", path.display()),
            rows.into_iter().map(|r| (r.text, r.vector)),
        )
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl EncoderProvider for TableProvider {
    fn id(&self) -> String {
        self.id.clone()
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn max_tokens(&self) -> usize {
        usize::MAX
    }
    fn encode(&self, text: &str) -> Result<Vec<f64>> {
        self.table
            .get(&key(text))
            .cloned()
            .ok_or_else(|| Error::EncoderUnavailable(format!("{}: no vector for {text:?}", self.id)))
    }
}

/// Mean pooling over per-token vectors of an inner provider.
#[derive(Debug, Clone)]
pub struct TokenMeanProvider<P> {
    pub inner: P,
}

impl<P: EncoderProvider> EncoderProvider for TokenMeanProvider<P> {
    fn id(&self) -> String {
        format!("mean({})", self.inner.id())
    }
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn max_tokens(&self) -> usize {
        self.inner.max_tokens()
    }
    fn encode(&self, text: &str) -> Result<Vec<f64>> {
        let mut acc = vec![0.0; self.dim()];
        let mut n = 0usize;
        for w in text.split_whitespace() {
            let v = self.inner.encode(w)?;
            acc.iter_mut().zip(&v).for_each(|(a, x)| *a += x);
            n += 1;
        }
        if n > 0 {
            acc.iter_mut().for_each(|a| *a /= n as f64);
        }
        Ok(acc)
    }
}

/// Build a provider from a CLI spec: `hashed`, `hashed:<dim>`, or `table:<path>`.
pub fn provider_from_spec(spec: &str) -> Result<Arc<dyn EncoderProvider>> {
    if spec == "hashed" {
        return Ok(Arc::new(HashedProvider::default()));
    }
    if let Some(d) = spec.strip_prefix("hashed:") {
        let dim = d
            .parse()
            .map_err(|_| Error::EncoderUnavailable(format!("bad dimension in {spec:?}")))?;
        return Ok(Arc::new(HashedProvider::with_dim(dim)));
    }
    if let Some(path) = spec.strip_prefix("table:") {
        return Ok(Arc::new(TableProvider::load(Path::new(path))?));
    }
    Err(Error::EncoderUnavailable(format!("unknown provider {spec:?}")))
}

/// Per-token feature vectors for sequence tagging.
pub trait TokenEncoder: Send + Sync {
    fn id(&self) -> String;
    fn dim(&self) -> usize;
    fn encode_tokens(&self, tokens: &[String]) -> Result<Vec<Vec<f64>>>;
}

impl<E: TokenEncoder + ?Sized> TokenEncoder for Arc<E> {
    fn id(&self) -> String {
        (**self).id()
    }
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn encode_tokens(&self, tokens: &[String]) -> Result<Vec<Vec<f64>>> {
        (**self).encode_tokens(tokens)
    }
}

/// Hashed sparse features of a token and its neighbours: word, affixes, shape, bias.
#[derive(Debug, Clone)]
pub struct HashedTokenEncoder {
    pub dim: usize,
}

impl Default for HashedTokenEncoder {
    fn default() -> Self {
        Self { dim: 1024 }
    }
}

fn shape(w: &str) -> &'static str {
    if w.chars().all(|c| c.is_ascii_digit() || c == '.') {
        "num"
    } else if w.chars().all(|c| c.is_ascii_punctuation()) {
        "punct"
    } else if w.chars().next().is_some_and(char::is_uppercase) {
        "cap"
    } else {
        "lower"
    }
}

impl TokenEncoder for HashedTokenEncoder {
    fn id(&self) -> String {
        format!("hashed-token-d{}", self.dim)
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn encode_tokens(&self, tokens: &[String]) -> Result<Vec<Vec<f64>>> {
        let lower: Vec<String> = tokens.iter().map(|t| t.to_lowercase()).collect();
        let out = (0..tokens.len())
            .map(|i| {
                let mut v = vec![0.0; self.dim];
                let w = &lower[i];
                add_hashed(&mut v, "bias", 1.0);
                add_hashed(&mut v, &format!("w={w}"), 1.0);
                add_hashed(&mut v, &format!("shape={}", shape(&tokens[i])), 1.0);
                let chars: Vec<char> = w.chars().collect();
                if chars.len() > 3 {
                    let suf: String = chars[chars.len() - 3..].iter().collect();
                    add_hashed(&mut v, &format!("suf={suf}"), 1.0);
                }
                let prev = if i == 0 { "<s>" } else { &lower[i - 1] };
                let next = lower.get(i + 1).map_or("</s>", String::as_str);
                add_hashed(&mut v, &format!("p={prev}"), 1.0);
                add_hashed(&mut v, &format!("n={next}"), 1.0);
                v
            })
            .collect();
        Ok(out)
    }
}

/// Token -> vector lookup, trying the exact token and then its lowercase form;
/// unknown tokens map to the `fallback` vector.
#[derive(Debug, Clone)]
pub struct TableTokenEncoder {
    dim: usize,
    table: HashMap<String, Vec<f64>>,
    fallback: Vec<f64>,
}

impl TableTokenEncoder {
    pub fn new(table: HashMap<String, Vec<f64>>, fallback: Vec<f64>) -> Result<Self> {
        let dim = fallback.len();
        if let Some(v) = table.values().find(|v| v.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: v.len(),
            });
        }
        Ok(Self { dim, table, fallback })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let rows: Vec<TableRow> = crate::io::read_jsonl(path)?;
        let mut fallback = None;
        let mut table = HashMap::new();
        for r in rows {
            if r.text == "<unk>" {
                fallback = Some(r.vector);
            } else {
                table.insert(r.text, r.vector);
            }
        }
        let dim = table.values().next().map(Vec::len).unwrap_or(0);
        Self::new(table, fallback.unwrap_or_else(|| vec![0.0; dim]))
    }
}

impl TokenEncoder for TableTokenEncoder {
    fn id(&self) -> String {
        format!("token-table-d{}", self.dim)
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn encode_tokens(&self, tokens: &[String]) -> Result<Vec<Vec<f64>>> {
        Ok(tokens
            .iter()
            .map(|t| {
                self.table
                    .get(t)
                    .or_else(|| self.table.get(&t.to_lowercase()))
                    .unwrap_or(&self.fallback)
                    .clone()
            })
            .collect())
    }
}

/// Build a token encoder from a CLI spec: `hashed`, `hashed:<dim>`, or `table:<path>`.
pub fn token_encoder_from_spec(spec: &str) -> Result<Arc<dyn TokenEncoder>> {
    if spec == "hashed" {
        return Ok(Arc::new(HashedTokenEncoder::default()));
    }
    if let Some(d) = spec.strip_prefix("hashed:") {
        let dim = d
            .parse()
            .map_err(|_| Error::EncoderUnavailable(format!("bad dimension in {spec:?}")))?;
        return Ok(Arc::new(HashedTokenEncoder { dim }));
    }
    if let Some(path) = spec.strip_prefix("table:") {
        return Ok(Arc::new(TableTokenEncoder::load(Path::new(path))?));
    }
    Err(Error::EncoderUnavailable(format!("unknown token encoder {spec:?}")))
}
