//! Fixtures and brute-force oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};

use kgcore::corpus::AbstractRecord;
use kgcore::crf::Transitions;
use kgcore::dataset::{RcInstance, RelationPool};
use kgcore::embed::TableTokenEncoder;
use kgcore::oie::TokenSpan;
use kgcore::pipeline::{EntityMention, ExtractedTriple, Provenance};
use kgcore::relclass::TableScorer;
use kgcore::schema::{label_of, Schema};
use kgcore::CrfModel64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ------------------------------------------------------------------ CRF oracles

pub fn random_crf(rng: &mut ChaCha8Rng, t: usize, l: usize) -> (Vec<Vec<f64>>, Transitions<f64>) {
    let e = (0..t).map(|_| (0..l).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
    let mut tr = Transitions::<f64>::zeros(l);
    for row in tr.scores.iter_mut() {
        for v in row.iter_mut() {
            *v = rng.gen_range(-3.0..3.0);
        }
    }
    (e, tr)
}

/// Every label sequence of length `t` over `l` labels, in lexicographic order.
pub fn all_paths(t: usize, l: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..t {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..l).map(move |y| {
                    let mut q = p.clone();
                    q.push(y);
                    q
                })
            })
            .collect();
    }
    out
}

/// Score written out directly from the definition: start, emissions, transitions, end.
pub fn brute_score(e: &[Vec<f64>], tr: &Transitions<f64>, path: &[usize]) -> f64 {
    let l = tr.labels;
    let (start, end) = (l, l + 1);
    if path.is_empty() {
        return tr.scores[start][end];
    }
    let mut s = tr.scores[start][path[0]] + e[0][path[0]];
    for i in 1..path.len() {
        s += tr.scores[path[i - 1]][path[i]] + e[i][path[i]];
    }
    s + tr.scores[path[path.len() - 1]][end]
}

/// Exhaustive argmax. Among equal scores the winner is the path whose
/// reversed label sequence is lexicographically smallest.
pub fn brute_argmax(e: &[Vec<f64>], tr: &Transitions<f64>) -> (Vec<usize>, f64) {
    let mut best: Option<(Vec<usize>, f64)> = None;
    for p in all_paths(e.len(), tr.labels) {
        let s = brute_score(e, tr, &p);
        let better = match &best {
            None => true,
            Some((bp, bs)) => {
                s > *bs || (s == *bs && p.iter().rev().lt(bp.iter().rev()))
            }
        };
        if better {
            best = Some((p, s));
        }
    }
    best.unwrap()
}

pub fn brute_log_partition(e: &[Vec<f64>], tr: &Transitions<f64>) -> f64 {
    let scores: Vec<f64> = all_paths(e.len(), tr.labels).iter().map(|p| brute_score(e, tr, p)).collect();
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + scores.iter().map(|s| (s - m).exp()).sum::<f64>().ln()
}

// ------------------------------------------------------------------ clustering oracles

fn comb2(n: u64) -> f64 {
    (n * n.saturating_sub(1)) as f64 / 2.0
}

/// Adjusted Rand index from the contingency table.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut table: HashMap<(usize, usize), u64> = HashMap::new();
    let mut ra: HashMap<usize, u64> = HashMap::new();
    let mut rb: HashMap<usize, u64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *ra.entry(x).or_default() += 1;
        *rb.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&n| comb2(n)).sum();
    let sa: f64 = ra.values().map(|&n| comb2(n)).sum();
    let sb: f64 = rb.values().map(|&n| comb2(n)).sum();
    let expected = sa * sb / comb2(a.len() as u64);
    let max = 0.5 * (sa + sb);
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

/// Global minimum of the k-means objective by enumerating every assignment.
pub fn exhaustive_kmeans(points: &[Vec<f64>], k: usize) -> f64 {
    let n = points.len();
    let d = points[0].len();
    let mut best = f64::INFINITY;
    let mut assign = vec![0usize; n];
    loop {
        let mut counts = vec![0usize; k];
        let mut sums = vec![vec![0.0; d]; k];
        for (p, &c) in points.iter().zip(&assign) {
            counts[c] += 1;
            for j in 0..d {
                sums[c][j] += p[j];
            }
        }
        if counts.iter().all(|&c| c > 0) {
            let mut j = 0.0;
            for (p, &c) in points.iter().zip(&assign) {
                for x in 0..d {
                    let m = sums[c][x] / counts[c] as f64;
                    j += (p[x] - m).powi(2);
                }
            }
            best = best.min(j);
        }
        let mut i = 0;
        loop {
            if i == n {
                return best;
            }
            assign[i] += 1;
            if assign[i] < k {
                break;
            }
            assign[i] = 0;
            i += 1;
        }
    }
}

// ------------------------------------------------------------------ planted corpus

pub const PHRASES: [&str; 29] = [
    "increases",
    "reduces",
    "leads to",
    "is part of",
    "includes",
    "affects",
    "improves",
    "inhibits",
    "accelerates",
    "replaces",
    "is compared with",
    "is used in",
    "consists of",
    "depends on",
    "is derived from",
    "contributes to",
    "controls",
    "is measured by",
    "is mixed with",
    "produces",
    "prevents",
    "enhances",
    "weakens",
    "is applied to",
    "is converted into",
    "interacts with",
    "is located in",
    "is similar to",
    "is treated with",
];

const SINGLE: [&str; 20] = [
    "cement", "porosity", "slag", "strength", "shrinkage", "hydration", "concrete", "clinker", "gypsum",
    "limestone", "durability", "permeability", "workability", "carbonation", "creep", "mortar", "aggregate",
    "sand", "water", "temperature",
];
const MODIFIER: [&str; 10] = [
    "fly", "silica", "steam", "compressive", "chloride", "alkali", "recycled", "nano", "calcium", "elevated",
];
const HEADWORD: [&str; 8] = ["ash", "fume", "curing", "resistance", "ingress", "activation", "particles", "fibres"];
const FILLERS: [&str; 4] = [
    "This study was carried out in the laboratory.",
    "The results are discussed below.",
    "Several specimens were prepared for testing.",
    "Further work is needed.",
];

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct GoldTriple {
    pub abstract_id: String,
    pub sentence: usize,
    pub head: String,
    pub relation: String,
    pub tail: String,
}

pub struct Planted {
    pub corpus: Vec<AbstractRecord>,
    pub gold: BTreeSet<GoldTriple>,
    pub schema: Schema,
    pub tagger: CrfModel64,
    pub encoder: TableTokenEncoder,
    pub scorer: TableScorer,
    pub support_pool: RelationPool,
    pub sentences: usize,
    pub mentions: usize,
    pub distinct_entities: usize,
    pub candidates: usize,
}

fn entity(rng: &mut ChaCha8Rng) -> String {
    if rng.gen_bool(0.6) {
        SINGLE.choose(rng).unwrap().to_string()
    } else {
        format!("{} {}", MODIFIER.choose(rng).unwrap(), HEADWORD.choose(rng).unwrap())
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

pub fn relation_score(r: usize) -> f64 {
    0.55 + 0.015 * r as f64
}

/// Abstracts made of planted relation sentences (`A rel B.` or `A rel B and C.`)
/// and entity-free filler, with oracle tagger, encoder and scorer.
pub fn planted_corpus(abstracts: usize, seed: u64) -> Planted {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<String> = PHRASES.iter().map(|p| label_of(p)).collect();
    let mut corpus = Vec::new();
    let mut gold = BTreeSet::new();
    let (mut sentences, mut mentions, mut candidates) = (0, 0, 0);
    let mut distinct = BTreeSet::new();
    for a in 0..abstracts {
        let id = format!("A{a:04}");
        let n = rng.gen_range(3..=5);
        let mut text = Vec::new();
        for s in 0..n {
            if rng.gen_bool(0.25) {
                text.push(FILLERS.choose(&mut rng).unwrap().to_string());
                continue;
            }
            let r = rng.gen_range(0..PHRASES.len());
            let mut ents: Vec<String> = Vec::new();
            let want = if rng.gen_bool(0.3) { 3 } else { 2 };
            while ents.len() < want {
                let e = entity(&mut rng);
                if !ents.contains(&e) {
                    ents.push(e);
                }
            }
            let sentence = if want == 2 {
                format!("{} {} {}.", capitalize(&ents[0]), PHRASES[r], ents[1])
            } else {
                format!("{} {} {} and {}.", capitalize(&ents[0]), PHRASES[r], ents[1], ents[2])
            };
            text.push(sentence);
            gold.insert(GoldTriple {
                abstract_id: id.clone(),
                sentence: s,
                head: ents[0].clone(),
                relation: labels[r].clone(),
                tail: ents[1].clone(),
            });
            mentions += want;
            candidates += want * (want - 1) / 2;
            distinct.extend(ents);
        }
        sentences += n;
        corpus.push(AbstractRecord {
            id: id.clone(),
            title: format!("Planted study {a}"),
            journal: "Synthetic Materials".into(),
            for_code: "1202".into(),
            year: 2000 + (a % 20) as i32,
            text: text.join(" "),
        });
    }

    let mut tagger = CrfModel64::new(3, "planted-oracle");
    for i in 0..3 {
        tagger.emission_weights[i][i] = 1.0;
    }
    let mut table = HashMap::new();
    for w in SINGLE.iter().chain(&MODIFIER) {
        table.insert(w.to_string(), vec![1.0, 0.0, 0.0]);
    }
    for w in HEADWORD {
        table.insert(w.to_string(), vec![0.0, 1.0, 0.0]);
    }
    let encoder = TableTokenEncoder::new(table, vec![0.0, 0.0, 1.0]).unwrap();

    let scorer = TableScorer::new(
        PHRASES
            .iter()
            .enumerate()
            .map(|(r, p)| (format!("HEAD {p} TAIL"), labels[r].clone(), relation_score(r))),
    );
    let mut support_pool = RelationPool::new();
    for (r, p) in PHRASES.iter().enumerate() {
        let insts = (0..3)
            .map(|i| {
                let tokens: Vec<String> = format!("x {p} y").split_whitespace().map(String::from).collect();
                let n = tokens.len();
                RcInstance {
                    id: format!("support-{}-{i}", labels[r]),
                    tokens,
                    head_span: TokenSpan::new(0, 1),
                    tail_span: TokenSpan::new(n - 1, n),
                    relation: labels[r].clone(),
                }
            })
            .collect();
        support_pool.insert(labels[r].clone(), insts);
    }
    Planted {
        corpus,
        gold,
        schema: Schema::from_labels(&labels),
        tagger,
        encoder,
        scorer,
        support_pool,
        sentences,
        mentions,
        distinct_entities: distinct.len(),
        candidates,
    }
}

// ------------------------------------------------------------------ graph fixtures

pub fn extracted(h: &str, r: &str, t: &str, abstract_id: &str, sentence: usize, score: f64) -> ExtractedTriple {
    ExtractedTriple {
        head: EntityMention {
            text: h.into(),
            span: TokenSpan::new(0, 1),
        },
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
            title: format!("Paper {abstract_id}"),
            journal: "J".into(),
            year: 2021,
        },
    }
}

const SYLLABLES: [&str; 12] = ["ce", "ment", "por", "o", "si", "ty", "slag", "ash", "fu", "me", "cre", "ep"];

/// Random node names drawn from a small syllable set, so prefixes and
/// substrings collide often.
pub fn random_name(rng: &mut ChaCha8Rng) -> String {
    let words = rng.gen_range(1..=2);
    (0..words)
        .map(|_| {
            let n = rng.gen_range(1..=3);
            (0..n).map(|_| *SYLLABLES.choose(rng).unwrap()).collect::<String>()
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// `n` random triples over roughly `nodes` distinct names, with case and
/// whitespace variants of the same names.
pub fn random_triples(n: usize, nodes: usize, seed: u64) -> Vec<ExtractedTriple> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut names = BTreeSet::new();
    while names.len() < nodes {
        names.insert(random_name(&mut rng));
    }
    let names: Vec<String> = names.into_iter().collect();
    let rels = ["include", "affect", "lead_to", "part_of"];
    (0..n)
        .map(|i| {
            let vary = |s: &String, rng: &mut ChaCha8Rng| match rng.gen_range(0..3) {
                0 => s.clone(),
                1 => s.to_uppercase(),
                _ => format!(" {} ", s.replace(' ', "  ")),
            };
            let h = vary(names.choose(&mut rng).unwrap(), &mut rng);
            let t = vary(names.choose(&mut rng).unwrap(), &mut rng);
            let r = rels.choose(&mut rng).unwrap();
            let paper = format!("P{}", rng.gen_range(0..n / 4 + 1));
            let score = (rng.gen_range(0..1000) as f64) / 1000.0;
            extracted(&h, r, &t, &paper, i % 7, score)
        })
        .collect()
}
